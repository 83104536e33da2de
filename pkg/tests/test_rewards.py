from __future__ import annotations

import io
import json

import pytest

from visloop.core import BoundingBox
from visloop.rewards import (
    RewardConfig,
    RewardWeights,
    TrajectoryAssessment,
    assess,
    combine,
    score_request,
    serve,
    tc_branches_overlap,
    tool_reward,
    total_reward,
)

GT = BoundingBox(10, 10, 30, 30)
ANS = '{"characters":["color"],"bbox":[10,10,30,30]}'
GOOD = (f"<think>look</think><ROI>[5,5,40,40]</ROI><think>zoomed</think><draft_answer>{ANS}</draft_answer>"
        f"<verify>fine VERDICT: correct</verify><final_answer>{ANS}</final_answer>")


@pytest.mark.parametrize("used,over,invalid,a,want", [
    (1, 0, 0, 0.9, 1), (1, 0, 0, 0.5, 0), (0, 0, 0, 1.0, 0),
    (1, 1, 0, 1.0, -1), (0, 0, 1, 0.0, -1), (1, 0, 1, 0.9, -1),
])
def test_tool_reward_branches(used, over, invalid, a, want):
    assert tool_reward(TrajectoryAssessment(used, over, invalid, a)) == want


def test_overlap_flag():
    a = TrajectoryAssessment(1, 0, 1, 0.9)
    assert tc_branches_overlap(a)
    assert not tc_branches_overlap(TrajectoryAssessment(1, 0, 0, 0.9))


def test_assessment_validation():
    with pytest.raises(ValueError):
        TrajectoryAssessment(2, 0, 0, 0.5)
    with pytest.raises(ValueError):
        TrajectoryAssessment(1, 0, 0, 1.5)
    with pytest.raises(ValueError):
        RewardConfig(theta=1.0)


def test_assess_counts_over_budget():
    text = GOOD.replace("<ROI>[5,5,40,40]</ROI>", "<CANNY><think>again</think><CANNY>")
    a = assess(text, GT, ["color"])
    assert (a.t_used, a.t_over, a.f_invalid) == (1, 1, 0)


def test_good_trajectory_breakdown():
    bd = total_reward(GOOD, GT, ["color"])
    assert bd.to_dict() == {"r_fmt": 1.0, "r_iou": 1.0, "r_f1": 1.0, "r_tc": 1.0, "r_ver": 1.0,
                            "total": pytest.approx(4.4), "flags": []}


def test_grammar_invalid_but_tokenizable_keeps_answer_terms():
    text = GOOD.replace("<think>look</think>", "")
    bd = total_reward(text, GT, ["color"])
    assert bd.r_fmt == 0 and bd.r_iou == 1.0 and bd.r_f1 == 1.0
    assert bd.r_tc == -1 and bd.r_ver == -0.5 and "tc_branch_overlap" in bd.flags


def test_custom_weights():
    w = RewardWeights(1, 0, 0, 0, 0)
    assert total_reward(GOOD, GT, ["color"], w).total == 1.0
    assert combine((1, 1, 1, 1, 1)) == pytest.approx(4.4)
    with pytest.raises(ValueError):
        RewardWeights(fmt=float("nan"))


def test_score_request_and_service():
    req = {"id": "s1", "text": GOOD, "gt_bbox": [10, 10, 30, 30], "gt_characters": ["color"]}
    assert score_request(req)["total"] == pytest.approx(4.4)
    inp = io.StringIO(json.dumps(req) + "\n\nnot json\n" + json.dumps({"id": "x"}) + "\n")
    out = io.StringIO()
    assert serve(inp, out) == 3
    lines = [json.loads(l) for l in out.getvalue().splitlines()]
    assert lines[0]["id"] == "s1" and "error" in lines[1] and "error" in lines[2]
