"""Benchmark metrics and reward statistics over saved session transcripts."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .core import SampleRecord, iou, label_prf
from .orchestrator import SessionTranscript
from .rewards import RewardBreakdown, RewardConfig, RewardWeights, total_reward

REPORT_SCHEMA = 1
COMPONENTS = ("r_fmt", "r_iou", "r_f1", "r_tc", "r_ver", "total")


class MissingTranscript(KeyError):
    pass


class UnknownSample(KeyError):
    pass


@dataclass(frozen=True)
class EvalRow:
    id: str
    source: str
    iou: float
    precision: float
    recall: float
    f1: float
    hits: int
    n_pred: int
    n_gt: int
    tools: dict
    reflections: int
    reflection_exhausted: bool
    failure: str | None


@dataclass(frozen=True)
class Aggregate:
    n: int
    iou: float
    f1: float
    precision: float
    recall: float


@dataclass
class EvalReport:
    rows: list[EvalRow]
    overall: Aggregate
    averaging: str = "micro"
    by_source: dict[str, Aggregate] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "averaging": self.averaging,
            "overall": asdict(self.overall),
            "by_source": {k: asdict(v) for k, v in self.by_source.items()},
            "rows": [asdict(r) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        # metric columns follow the benchmark table: IoU, F1, Precision, Recall
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "n", "IoU", "F1", "Precision", "Recall"])
        for name, a in [("overall", self.overall)] + sorted(self.by_source.items()):
            w.writerow([name, a.n, f"{a.iou:.2f}", f"{a.f1:.2f}", f"{a.precision:.2f}", f"{a.recall:.2f}"])
        return buf.getvalue()


def _pct(x: float) -> float:
    return round(100.0 * x, 2)


def _row(t: SessionTranscript | None, s: SampleRecord) -> EvalRow:
    final = t.final if t is not None else None
    pred = set(final.characters) if final is not None else set()
    gt = set(s.gt_characters)
    p, r, f1 = label_prf(pred, gt)
    tools: dict[str, int] = {}
    reflections = 0
    for e in t.events if t is not None else ():
        if e.get("type") == "tool" and e.get("status") == "executed":
            tools[e["tool"]] = tools.get(e["tool"], 0) + 1
        elif e.get("type") == "reflection" and e.get("status") == "sent":
            reflections += 1
    return EvalRow(
        id=s.id,
        source=s.source,
        iou=iou(final.bbox, s.gt_bbox) if final is not None else 0.0,
        precision=p,
        recall=r,
        f1=f1,
        hits=len(pred & gt),
        n_pred=len(pred),
        n_gt=len(gt),
        tools=tools,
        reflections=reflections,
        reflection_exhausted=bool(t and t.reflection_exhausted),
        failure=(t.failure if t is not None else "missing_transcript"),
    )


def aggregate(rows: Sequence[EvalRow], macro: bool = False) -> Aggregate:
    n = len(rows)
    if n == 0:
        return Aggregate(0, 0.0, 0.0, 0.0, 0.0)
    mean_iou = sum(r.iou for r in rows) / n
    if macro:
        p = sum(r.precision for r in rows) / n
        rc = sum(r.recall for r in rows) / n
        f1 = sum(r.f1 for r in rows) / n
    else:
        hits = sum(r.hits for r in rows)
        n_pred = sum(r.n_pred for r in rows)
        n_gt = sum(r.n_gt for r in rows)
        p = hits / n_pred if n_pred else 0.0
        rc = hits / n_gt if n_gt else 0.0
        f1 = 2 * p * rc / (p + rc) if p + rc > 0 else 0.0
    return Aggregate(n, _pct(mean_iou), _pct(f1), _pct(p), _pct(rc))


def _pair(transcripts: Iterable[SessionTranscript], manifest: Sequence[SampleRecord], allow_missing: bool):
    by_id = {s.id: s for s in manifest}
    got: dict[str, SessionTranscript] = {}
    for t in transcripts:
        if t.sample_id not in by_id:
            raise UnknownSample(t.sample_id)
        got[t.sample_id] = t
    missing = [s.id for s in manifest if s.id not in got]
    if missing and not allow_missing:
        raise MissingTranscript(missing[0] if len(missing) == 1 else missing)
    # manifest order keeps the output independent of transcript order
    return [(got.get(s.id), s) for s in manifest]


def evaluate(
    transcripts: Iterable[SessionTranscript],
    manifest: Sequence[SampleRecord],
    macro: bool = False,
    by_source: bool = False,
    allow_missing: bool = False,
) -> EvalReport:
    rows = [_row(t, s) for t, s in _pair(transcripts, manifest, allow_missing)]
    report = EvalReport(rows, aggregate(rows, macro), "macro" if macro else "micro")
    if by_source:
        for src in sorted({r.source for r in rows}):
            report.by_source[src] = aggregate([r for r in rows if r.source == src], macro)
    return report


@dataclass
class RewardReport:
    rows: list[tuple[str, RewardBreakdown]]
    summary: dict

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "summary": self.summary,
            "rows": [dict(id=i, **b.to_dict()) for i, b in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def reward_report(
    transcripts: Iterable[SessionTranscript],
    manifest: Sequence[SampleRecord],
    weights: RewardWeights = RewardWeights(),
    cfg: RewardConfig = RewardConfig(),
    allow_missing: bool = False,
) -> RewardReport:
    rows = []
    for t, s in _pair(transcripts, manifest, allow_missing):
        text = t.trajectory if t is not None else ""
        rows.append((s.id, total_reward(text, s.gt_bbox, s.gt_characters, weights, cfg)))
    summary = {}
    for c in COMPONENTS:
        vals = [getattr(b, c) for _, b in rows]
        summary[c] = {"mean": sum(vals) / len(vals), "min": min(vals), "max": max(vals)} if vals else {
            "mean": 0.0, "min": 0.0, "max": 0.0}
    return RewardReport(rows, summary)
