from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from visloop.core import (
    AnswerPayload,
    BoundingBox,
    CharacterLabel,
    DegenerateBox,
    SampleRecord,
    clamp_bbox,
    iou,
    label_prf,
    load_manifest,
    write_manifest,
)

C = CharacterLabel


def test_label_parse_is_case_insensitive_and_maps_position():
    assert C.parse("COLOR") is C.COLOR
    assert C.parse("position") is C.LOCATION
    assert C.parse(C.SIZE) is C.SIZE
    with pytest.raises(ValueError):
        C.parse("texture")


@pytest.mark.parametrize("coords", [(5, 0, 5, 10), (0, 5, 10, 5), (6, 0, 5, 1)])
def test_empty_boxes_rejected(coords):
    with pytest.raises(ValueError):
        BoundingBox(*coords)


def test_box_requires_ints():
    with pytest.raises((TypeError, ValueError)):
        BoundingBox(0.5, 0, 2, 2)
    with pytest.raises((TypeError, ValueError)):
        BoundingBox.from_list([0, 0, 2])


def test_iou_basics():
    a = BoundingBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(10, 0, 20, 10)) == 0.0  # touching edges share no pixel
    assert iou(a, BoundingBox(0, 0, 5, 10)) == 0.5


boxes = st.tuples(st.integers(0, 50), st.integers(0, 50), st.integers(1, 30), st.integers(1, 30)).map(
    lambda t: BoundingBox(t[0], t[1], t[0] + t[2], t[1] + t[3]))


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0


def test_clamp():
    assert clamp_bbox(BoundingBox(-5, -5, 20, 20), 10, 8) == BoundingBox(0, 0, 10, 8)
    with pytest.raises(DegenerateBox):
        clamp_bbox(BoundingBox(50, 50, 60, 60), 10, 10)


def test_label_prf():
    assert label_prf({C.COLOR}, {C.COLOR}) == (1.0, 1.0, 1.0)
    p, r, f = label_prf({C.COLOR, C.SIZE}, {C.COLOR})
    assert (p, r) == (0.5, 1.0) and f == pytest.approx(2 / 3)
    assert label_prf(set(), {C.COLOR}) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        label_prf({C.COLOR}, set())


def test_payload_json_is_canonical():
    p = AnswerPayload(frozenset({C.SIZE, C.COLOR}), BoundingBox(1, 2, 3, 4))
    assert p.to_json() == '{"characters":["color","size"],"bbox":[1,2,3,4]}'
    assert AnswerPayload.from_dict(json.loads(p.to_json())) == p


def _rec(i="a", **kw):
    d = dict(id=i, image=f"{i}.png", gt_bbox=BoundingBox(0, 0, 4, 4), gt_characters=frozenset({"color"}))
    d.update(kw)
    return SampleRecord(**d)


def test_sample_record_validation():
    with pytest.raises(ValueError):
        _rec(gt_characters=frozenset())
    with pytest.raises(ValueError):
        _rec(source="web")
    with pytest.raises(ValueError):
        SampleRecord.from_dict({**_rec().to_dict(), "extra": 1})


def test_manifest_round_trip_resolves_relative_paths(tmp_path):
    recs = [_rec("a"), _rec("b", source="natural", split="train")]
    write_manifest(tmp_path / "m.jsonl", recs)
    back = load_manifest(tmp_path / "m.jsonl")
    assert back == recs
    assert back[0].image_path == tmp_path.resolve() / "a.png"


def test_manifest_rejects_duplicate_ids(tmp_path):
    write_manifest(tmp_path / "m.jsonl", [_rec("a"), _rec("a")])
    with pytest.raises(ValueError, match="duplicate"):
        load_manifest(tmp_path / "m.jsonl")
