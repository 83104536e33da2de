from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from visloop.core import AnswerPayload, BoundingBox, CharacterLabel, SampleRecord
from visloop.dataset import (
    BACKGROUND,
    LEAKAGE_STRINGS,
    Accept,
    Reject,
    ScoreRecord,
    SftRecord,
    SpecInfeasible,
    SpliceInvalid,
    SynthSpec,
    assemble_sft_record,
    build_annotation_prompt,
    clean_annotation,
    distribution_report,
    generate_synthetic,
    partition_v2cot,
    pattern_tag,
    sample_specs,
)
from visloop.trajectory import ToolKind, Verdict

L = CharacterLabel


def cells(img, spec):
    c = spec.cell
    return {(r, k): img[r * c:(r + 1) * c, k * c:(k + 1) * c] for r in range(spec.rows) for k in range(spec.cols)}


def test_color_scene_has_identical_distractors():
    spec = SynthSpec(target=(1, 2))
    img, rec = generate_synthetic(spec)
    assert img.shape == (256, 256, 3) and rec.gt_characters == frozenset({L.COLOR})
    tiles = cells(img, spec)
    target = tiles.pop((1, 2))
    first = next(iter(tiles.values()))
    assert all(np.array_equal(t, first) for t in tiles.values())
    assert not np.array_equal(target, first)
    b = rec.gt_bbox
    assert 128 <= b.x1 < b.x2 <= 192 and 64 <= b.y1 < b.y2 <= 128


def test_two_characters_and_determinism():
    spec = SynthSpec(characters={"size", "color"}, seed=9)
    a, ra = generate_synthetic(spec)
    b, rb = generate_synthetic(spec)
    assert ra.gt_characters == frozenset({L.SIZE, L.COLOR}) and ra == rb and np.array_equal(a, b)


@pytest.mark.parametrize("kw", [
    dict(color=(128, 128, 128)),
    dict(characters={"orientation"}, shape="circle"),
    dict(characters={"orientation"}, shape="square", rotation=90),
])
def test_infeasible_specs(kw):
    with pytest.raises(SpecInfeasible):
        generate_synthetic(SynthSpec(**kw))


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(characters={"size"}, scale=1.0)
    with pytest.raises(ValueError):
        SynthSpec(target=(9, 9))
    s = SynthSpec(characters={"shape", "focus"}, seed=4)
    assert SynthSpec.from_dict(s.to_dict()) == s


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_box_is_tight_around_the_target_object(seed):
    spec = sample_specs(1, seed)[0]
    img, rec = generate_synthetic(spec)
    b, c = rec.gt_bbox, spec.cell
    r, k = b.y1 // c, b.x1 // c
    tile = img[r * c:(r + 1) * c, k * c:(k + 1) * c]
    ys, xs = np.nonzero((tile != BACKGROUND).any(axis=2))
    xs, ys = xs + k * c, ys + r * c
    assert xs.min() >= b.x1 and xs.max() < b.x2 and ys.min() >= b.y1 and ys.max() < b.y2
    if L.FOCUS not in spec.characters:
        assert (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1) == (b.x1, b.y1, b.x2, b.y2)


def test_partition():
    recs = [ScoreRecord("a", 0.9, 0.5, 0.5), ScoreRecord("b", 0.2, 0.3, 0.6), ScoreRecord("c", 0.2, 0.5, 0.52)]
    assert partition_v2cot(recs) == (["a"], ["b"], ["c"])
    with pytest.raises(ValueError):
        ScoreRecord("x", 1.2, 0, 0)


SAMPLE = SampleRecord("n1", "n1.png", BoundingBox(10, 20, 50, 60), frozenset({L.SHAPE}), "natural")
PRED = AnswerPayload(frozenset({L.COLOR}), BoundingBox(0, 0, 5, 5))


def test_prompts_contain_anchors_and_fields():
    p = build_annotation_prompt(SAMPLE, "with_tools", ["canny", ToolKind.ROI])
    assert "Tool Selection Reasoning" in p and "<CANNY>, <ROI>" in p and "[10, 20, 50, 60]" in p
    assert 'Do not output terms like "ground truth" or "correct answer"' in p
    n = build_annotation_prompt(SAMPLE, "no_tools")
    assert "<think><Description, Analysis, Conclusion></think>" in n and "[10, 20, 50, 60]" in n
    r = build_annotation_prompt(SAMPLE, "reflection", prediction=PRED)
    assert PRED.to_json() in r and 'Do not output terms like "ground truth" or "correct answer"' in r
    with pytest.raises(ValueError):
        build_annotation_prompt(SAMPLE, "with_tools")
    with pytest.raises(ValueError):
        build_annotation_prompt(SAMPLE, "reflection")


GOOD_REASONING = ("<think>The objects share one outline except one.</think><CANNY>"
                  "<think>The edge map shows a different outline on the left.</think>")
GOOD_REFLECTION = "<verify>The masked area hides the only odd object. VERDICT: correct</verify>"


def test_clean_accepts_and_is_idempotent():
    a = clean_annotation(GOOD_REASONING, "with_tools", ["CANNY"])
    assert isinstance(a, Accept)
    assert clean_annotation(a.text, "with_tools", ["CANNY"]) == a
    r = clean_annotation(GOOD_REFLECTION, "reflection", expected_verdict=Verdict.CORRECT)
    assert isinstance(r, Accept) and r.verdict is Verdict.CORRECT


@pytest.mark.parametrize("leak", LEAKAGE_STRINGS)
def test_clean_rejects_leakage(leak):
    res = clean_annotation(GOOD_REASONING.replace("one outline", leak.upper()), "with_tools", ["CANNY"])
    assert isinstance(res, Reject) and "LeakageRule" in res.violations


def test_clean_reports_every_rule():
    res = clean_annotation("<think>the correct answer <CANNY></think>", "with_tools", ["ROI"])
    assert isinstance(res, Reject)
    assert set(res.violations) >= {"NestedToolRule", "LeakageRule"}
    res = clean_annotation(GOOD_REFLECTION, "reflection", expected_verdict=Verdict.INCORRECT)
    assert res.violations == ("VerdictRule",)


def test_assemble_and_patterns(tmp_path):
    reasoning = clean_annotation(GOOD_REASONING, "with_tools", ["CANNY"])
    rec = assemble_sft_record(SAMPLE, reasoning, clean_annotation(GOOD_REFLECTION, "reflection"), system_prompt="S")
    assert rec.pattern == "Canny" and rec.trajectory.endswith(f"<final_answer>{SAMPLE.gt_answer.to_json()}</final_answer>")
    assert [m["role"] for m in rec.conversation] == ["system", "user", "assistant"]
    assert SftRecord.from_dict(rec.to_dict()) == rec
    all3 = clean_annotation(GOOD_REASONING.replace("<CANNY>", "<CANNY><think>Now the colors look odd.</think>"
                                                   "<COLOR><think>Zoom in for more detail.</think><ROI>[0,0,9,9]</ROI>"),
                            "with_tools", ["CANNY", "COLOR", "ROI"])
    assert assemble_sft_record(SAMPLE, all3, clean_annotation(GOOD_REFLECTION, "reflection")).pattern == "ALL"


def test_assemble_rejects_bad_splice():
    frag = Accept("with_tools", (), "")
    with pytest.raises(SpliceInvalid):
        assemble_sft_record(SAMPLE, frag, clean_annotation(GOOD_REFLECTION, "reflection"), system_prompt="S")


def test_incorrect_reflection_gets_ground_truth_revision():
    bad = clean_annotation("<verify>An odd object is still visible outside. VERDICT: incorrect</verify>",
                           "reflection")
    rec = assemble_sft_record(SAMPLE, clean_annotation(GOOD_REASONING, "with_tools", ["CANNY"]), bad, PRED, "S")
    assert rec.trajectory.count("<draft_answer>") == 2 and SAMPLE.gt_answer.to_json() in rec.trajectory


def test_distribution_report():
    empty = distribution_report([])
    assert all(v == 0 for v in empty.total().values())

    class R:
        def __init__(self, source, pattern):
            self.source, self.pattern = source, pattern
    t = distribution_report([R("natural", "Canny"), R("natural", "Canny"), R("synthetic", "ALL"),
                             R("synthetic", "none")])
    assert t.rows["O3"]["Canny"] == 2 and t.rows["P3"]["w/o tool"] == 1
    assert t.total()["Total"] == 4 and t.total()["w/ tools"] == 3
    assert "Total" in t.format()
    assert pattern_tag({ToolKind.ROI: 1, ToolKind.COLOR: 2}) == "Zoom-in+Color"
