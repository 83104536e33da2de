from __future__ import annotations

import random

import pytest

from visloop.core import AnswerPayload, BoundingBox, CharacterLabel, SampleRecord
from visloop.dataset import SynthSpec, generate_synthetic
from visloop.evaluation import MissingTranscript, UnknownSample, aggregate, evaluate, reward_report
from visloop.modelclient import MockModel, MockPolicy
from visloop.orchestrator import SessionConfig, SessionTranscript, run_session

L = CharacterLabel


def rec(i, box, chars, source="synthetic"):
    return SampleRecord(i, f"{i}.png", box, frozenset(chars), source)


def tr(i, box, chars):
    return SessionTranscript(i, {}, final=AnswerPayload(frozenset(chars), box) if box else None)


A = rec("a", BoundingBox(0, 0, 10, 10), {L.COLOR})
B = rec("b", BoundingBox(0, 0, 10, 10), {L.SIZE, L.SHAPE}, "natural")


def test_mean_iou_and_micro_labels():
    ts = [tr("a", BoundingBox(0, 0, 10, 10), {L.COLOR}), tr("b", BoundingBox(5, 5, 15, 15), {L.SIZE})]
    rep = evaluate(ts, [A, B])
    assert rep.overall.iou == round(100 * (1 + 25 / 175) / 2, 2) == 57.14
    # micro: 2 hits, 2 predicted, 3 gt
    assert (rep.overall.precision, rep.overall.recall, rep.overall.f1) == (100.0, 66.67, 80.0)
    macro = evaluate(ts, [A, B], macro=True).overall
    assert (macro.precision, macro.recall, macro.f1) == (100.0, 75.0, 83.33)


def test_missing_final_counts_as_zero():
    rep = evaluate([tr("a", None, ()), tr("b", BoundingBox(0, 0, 10, 10), {L.SIZE, L.SHAPE})], [A, B])
    assert rep.overall.iou == 50.0 and rep.rows[0].f1 == 0.0


def test_permutation_invariance():
    ts = [tr(s.id, s.gt_bbox, s.gt_characters) for s in (A, B)]
    a = evaluate(ts, [A, B], by_source=True).to_json()
    assert evaluate(list(reversed(ts)), [A, B], by_source=True).to_json() == a


def test_by_source_and_csv():
    ts = [tr("a", BoundingBox(0, 0, 10, 10), {L.COLOR}), tr("b", BoundingBox(50, 50, 60, 60), {L.COLOR})]
    rep = evaluate(ts, [A, B], by_source=True)
    assert rep.by_source["synthetic"].iou == 100.0 and rep.by_source["natural"].iou == 0.0
    lines = rep.to_csv().splitlines()
    assert lines[0] == "group,n,IoU,F1,Precision,Recall"
    assert [l.split(",")[0] for l in lines[1:]] == ["overall", "natural", "synthetic"]


def test_pairing_errors():
    with pytest.raises(MissingTranscript):
        evaluate([tr("a", None, ())], [A, B])
    assert evaluate([tr("a", None, ())], [A, B], allow_missing=True).rows[1].failure == "missing_transcript"
    with pytest.raises(UnknownSample):
        evaluate([tr("zzz", None, ())], [A])


def test_aggregate_empty():
    assert aggregate([]).n == 0


def test_reward_report_per_policy():
    rng = random.Random(0)
    pairs = [generate_synthetic(SynthSpec(seed=rng.randrange(999)), f"r{i}") for i in range(3)]
    samples = [s for _, s in pairs]
    imgs = {s.id: img for img, s in pairs}

    def report(policy):
        m = MockModel(policy, samples)
        ts = [run_session(s, m, SessionConfig(), image=imgs[s.id]) for s in samples]
        return reward_report(ts, samples).summary

    oracle = report(MockPolicy("oracle"))
    assert oracle["r_tc"]["max"] == 0 and oracle["total"]["mean"] == pytest.approx(3.6)
    assert report(MockPolicy("tool_happy", script=("ROI",)))["r_tc"]["min"] == 1
    bad = report(MockPolicy("malformed", mode="unbalanced"))
    assert bad["total"]["max"] == pytest.approx(-1.4)
