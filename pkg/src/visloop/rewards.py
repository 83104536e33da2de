"""Trajectory rewards: format, IoU, label F1, tool use, verification, weighted total."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field
from typing import IO, Iterable

from .core import AnswerPayload, BoundingBox, CharacterLabel, iou, label_prf
from .trajectory import (
    Final,
    ParseError,
    ToolCall,
    ToolKind,
    Trajectory,
    Verdict,
    count_tool_calls,
    parse_segments,
    validate_grammar,
)

DEFAULT_LIMITS = {ToolKind.ROI: 2, ToolKind.CANNY: 1, ToolKind.COLOR: 1}


@dataclass(frozen=True)
class RewardWeights:
    fmt: float = 0.2
    iou: float = 1.2
    f1: float = 1.0
    tc: float = 0.8
    ver: float = 1.2

    def __post_init__(self) -> None:
        for k, v in asdict(self).items():
            if v != v or v in (float("inf"), float("-inf")):
                raise ValueError(f"weight {k} must be finite")


@dataclass(frozen=True)
class RewardConfig:
    """Thresholds the reward functions depend on."""

    theta: float = 0.5  # accuracy threshold for the tool reward
    match_iou: float = 0.5  # draft "matches" ground truth at or above both of these
    match_f1: float = 0.5
    limits: dict = field(default_factory=lambda: dict(DEFAULT_LIMITS))

    def __post_init__(self) -> None:
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")


@dataclass(frozen=True)
class TrajectoryAssessment:
    t_used: int
    t_over: int
    f_invalid: int
    a: float
    theta: float = 0.5

    def __post_init__(self) -> None:
        for name in ("t_used", "t_over", "f_invalid"):
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1")
        if not 0.0 <= self.a <= 1.0:
            raise ValueError("answer indicator must lie in [0, 1]")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")


@dataclass(frozen=True)
class RewardBreakdown:
    r_fmt: float
    r_iou: float
    r_f1: float
    r_tc: float
    r_ver: float
    total: float
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


@dataclass(frozen=True)
class Parsed:
    """Outcome of reading raw model text: segments (if tokenizable) and format validity."""

    trajectory: Trajectory | None
    grammar_ok: bool

    @classmethod
    def from_text(cls, text: str | bytes) -> "Parsed":
        try:
            t = Trajectory(parse_segments(text))
        except ParseError:
            return cls(None, False)
        return cls(t, validate_grammar(t)[0])

    @property
    def ok(self) -> bool:
        return self.trajectory is not None and self.grammar_ok


def _as_parsed(t) -> Parsed:
    if isinstance(t, Parsed):
        return t
    if isinstance(t, Trajectory):
        return Parsed(t, validate_grammar(t)[0])
    return Parsed.from_text(t)


def _final(p: Parsed) -> Final | None:
    return p.trajectory.final if p.trajectory is not None else None


def r_fmt(t) -> int:
    return 1 if _as_parsed(t).ok else 0


def r_iou(t, gt: BoundingBox) -> float:
    f = _final(_as_parsed(t))
    return iou(f.payload.bbox, gt) if f is not None else 0.0


def r_f1(t, gt: Iterable[CharacterLabel]) -> float:
    f = _final(_as_parsed(t))
    return label_prf(f.payload.characters, gt)[2] if f is not None else 0.0


def assess(t, gt_bbox: BoundingBox, gt_labels, cfg: RewardConfig = RewardConfig()) -> TrajectoryAssessment:
    p = _as_parsed(t)
    segs = p.trajectory.segments if p.trajectory is not None else ()
    counts = count_tool_calls(list(segs))
    t_used = int(any(isinstance(s, ToolCall) for s in segs))
    t_over = int(any(counts[k] > cfg.limits.get(k, 0) for k in ToolKind))
    # A := mean of localisation and label accuracy
    a = 0.5 * (r_iou(p, gt_bbox) + r_f1(p, gt_labels))
    return TrajectoryAssessment(t_used, t_over, 1 - r_fmt(p), a, cfg.theta)


def tool_reward(a: TrajectoryAssessment) -> int:
    # penalty branch wins when both conditions hold
    if a.t_over == 1 or a.f_invalid == 1:
        return -1
    if a.t_used == 1 and a.a > a.theta:
        return 1
    return 0


r_tc = tool_reward


def tc_branches_overlap(a: TrajectoryAssessment) -> bool:
    return a.t_used == 1 and a.t_over == 0 and a.a > a.theta and a.f_invalid == 1


def answer_matches(p: AnswerPayload, gt_bbox: BoundingBox, gt_labels, cfg: RewardConfig = RewardConfig()) -> bool:
    return iou(p.bbox, gt_bbox) >= cfg.match_iou and label_prf(p.characters, gt_labels)[2] >= cfg.match_f1


def verification_consistent(t: Trajectory, gt_bbox: BoundingBox, gt_labels, cfg: RewardConfig = RewardConfig()) -> bool:
    """Whether the first verdict agrees with the first draft's accuracy and the final answer follows it."""
    drafts, verifies, final = t.drafts, t.verifies, t.final
    if not drafts or not verifies or final is None:
        return False
    d = drafts[0].payload
    revised = final.payload != d
    if answer_matches(d, gt_bbox, gt_labels, cfg):
        return verifies[0].verdict is Verdict.CORRECT and not revised
    return verifies[0].verdict is Verdict.INCORRECT and revised


def verification_score(c_valid: bool, f_invalid: bool) -> float:
    # a format-invalid trajectory earns no verification credit
    if f_invalid:
        return -0.5
    return 1.0 if c_valid else 0.0


def r_ver(t, gt_bbox: BoundingBox, gt_labels, cfg: RewardConfig = RewardConfig()) -> float:
    p = _as_parsed(t)
    c_valid = p.trajectory is not None and verification_consistent(p.trajectory, gt_bbox, gt_labels, cfg)
    return verification_score(c_valid, not p.ok)


def combine(components: tuple[float, float, float, float, float], w: RewardWeights = RewardWeights()) -> float:
    fmt, i, f1, tc, ver = components
    return w.fmt * fmt + w.iou * i + w.f1 * f1 + w.tc * tc + w.ver * ver


def total_reward(
    t,
    gt_bbox: BoundingBox,
    gt_labels,
    weights: RewardWeights = RewardWeights(),
    cfg: RewardConfig = RewardConfig(),
) -> RewardBreakdown:
    """Score raw text, a parsed Trajectory, or a Parsed result against ground truth."""
    p = _as_parsed(t)
    gt_labels = frozenset(CharacterLabel.parse(c) for c in gt_labels)
    a = assess(p, gt_bbox, gt_labels, cfg)
    comps = (float(r_fmt(p)), r_iou(p, gt_bbox), r_f1(p, gt_labels), float(tool_reward(a)), r_ver(p, gt_bbox, gt_labels, cfg))
    flags = ("tc_branch_overlap",) if tc_branches_overlap(a) else ()
    return RewardBreakdown(*comps, total=combine(comps, weights), flags=flags)


# ---------------------------------------------------------------- scoring service

def score_request(req: dict, weights: RewardWeights = RewardWeights(), cfg: RewardConfig = RewardConfig()) -> dict:
    """One request: {"id"?, "text", "gt_bbox", "gt_characters"} -> breakdown dict."""
    bd = total_reward(req["text"], BoundingBox.from_list(req["gt_bbox"]), req["gt_characters"], weights, cfg)
    out = {"id": req.get("id")}
    out.update(bd.to_dict())
    return out


def serve(inp: IO[str] = sys.stdin, out: IO[str] = sys.stdout, weights: RewardWeights = RewardWeights(),
          cfg: RewardConfig = RewardConfig()) -> int:
    """Newline-delimited JSON scoring loop for an external trainer."""
    n = 0
    for line in inp:
        if not line.strip():
            continue
        try:
            resp = score_request(json.loads(line), weights, cfg)
        except (ValueError, KeyError, TypeError) as exc:
            resp = {"error": f"{type(exc).__name__}: {exc}"}
        out.write(json.dumps(resp) + "\n")
        out.flush()
        n += 1
    return n
