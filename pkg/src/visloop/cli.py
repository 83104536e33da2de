"""Command-line entry point: ``visloop <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .core import AnswerPayload, BoundingBox, load_manifest, read_jsonl, write_jsonl


def _bbox(s: str) -> BoundingBox:
    try:
        return BoundingBox.from_list(int(v) for v in s.replace(" ", "").strip("[]").split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad box {s!r}: {exc}") from exc


def _weights(s: str):
    from .rewards import RewardWeights

    vals = [float(v) for v in s.split(",")]
    if len(vals) != 5:
        raise argparse.ArgumentTypeError("weights take five comma-separated numbers")
    return RewardWeights(*vals)


def _write(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- commands


def cmd_tools_apply(a) -> int:
    from .vistools import apply_tool, load_image, save_png

    out = apply_tool(a.tool, load_image(a.image), a.bbox)
    save_png(out, a.out)
    return 0


def cmd_run(a) -> int:
    from .modelclient import ChatCompletionsClient, MockModel, MockPolicy
    from .orchestrator import SessionConfig, run_batch

    samples = load_manifest(a.manifest)
    if a.limit:
        samples = samples[: a.limit]
    if a.mock:
        model = MockModel(MockPolicy.parse(a.mock), samples)
    elif a.endpoint:
        model = ChatCompletionsClient(a.endpoint, a.model, max_in_flight=a.concurrency, timeout=a.timeout)
    else:
        raise SystemExit("run needs --endpoint or --mock")
    cfg = SessionConfig(temperature=a.temperature, max_output_tokens=a.max_tokens, max_turns=a.max_turns)
    done = run_batch(samples, model, cfg, a.out, a.concurrency)
    failed = sum(1 for t in done if t.failure)
    print(f"{len(done)} sessions written to {a.out} ({failed} ended without a final answer)")
    return 0


def _load_runs(a):
    from .orchestrator import load_transcripts

    return load_manifest(a.manifest), load_transcripts(a.runs)


def cmd_eval(a) -> int:
    from .evaluation import evaluate

    manifest, transcripts = _load_runs(a)
    rep = evaluate(transcripts, manifest, macro=a.macro, by_source=a.by_source, allow_missing=a.allow_missing)
    _write(a.out, rep.to_json())
    if a.csv:
        Path(a.csv).write_text(rep.to_csv(), encoding="utf-8")
    o = rep.overall
    print(f"n={o.n} IoU={o.iou:.2f} F1={o.f1:.2f} P={o.precision:.2f} R={o.recall:.2f} ({rep.averaging})",
          file=sys.stderr)
    return 0


def cmd_reward(a) -> int:
    from .rewards import serve

    if a.serve:
        serve(sys.stdin, sys.stdout, a.weights)
        return 0
    if not (a.manifest and a.runs):
        raise SystemExit("reward needs --manifest and --runs, or --serve")
    from .evaluation import reward_report

    manifest, transcripts = _load_runs(a)
    _write(a.out, reward_report(transcripts, manifest, a.weights, allow_missing=a.allow_missing).to_json())
    return 0


def cmd_synth(a) -> int:
    from .dataset import SynthSpec, sample_specs, write_synthetic_set

    base = SynthSpec.from_dict(json.loads(Path(a.spec).read_text())) if a.spec else SynthSpec()
    specs = sample_specs(a.n, a.seed, base) if a.vary else [
        SynthSpec.from_dict({**base.to_dict(), "seed": a.seed + i, "target": None}) for i in range(a.n)]
    recs = write_synthetic_set(a.out, specs, a.prefix, a.split)
    print(f"{len(recs)} samples written to {Path(a.out) / 'manifest.jsonl'}")
    return 0


def cmd_v2cot_partition(a) -> int:
    from .dataset import ScoreRecord, partition_v2cot

    scores = [ScoreRecord(**d) for d in read_jsonl(a.scores)]
    free, dep, rest = partition_v2cot(scores, a.high, a.margin)
    _write(a.out, json.dumps({"tool_free": free, "tool_dependent": dep, "discarded": rest}, indent=2) + "\n")
    return 0


def cmd_v2cot_prompt(a) -> int:
    from .dataset import build_annotation_prompt

    sample = {s.id: s for s in load_manifest(a.manifest)}[a.id]
    pred = AnswerPayload.from_dict(json.loads(a.prediction)) if a.prediction else None
    tools = [t for t in a.tools.split(",") if t] if a.tools else []
    _write(a.out, build_annotation_prompt(sample, a.mode, tools, pred))
    return 0


def cmd_v2cot_clean(a) -> int:
    from .dataset import Accept, clean_annotation

    kept, dropped = [], []
    for row in read_jsonl(a.input):
        res = clean_annotation(row["text"], row["mode"], row.get("expected_tools", ()), row.get("expected_verdict"))
        if isinstance(res, Accept):
            kept.append({**row, "text": res.text})
        else:
            dropped.append({**row, "violations": list(res.violations), "details": list(res.details)})
    write_jsonl(a.out, kept)
    if a.rejected:
        write_jsonl(a.rejected, dropped)
    print(f"accepted {len(kept)}, rejected {len(dropped)}", file=sys.stderr)
    return 0


def cmd_v2cot_assemble(a) -> int:
    from .dataset import Accept, SpliceInvalid, assemble_sft_record, clean_annotation

    samples = {s.id: s for s in load_manifest(a.manifest)}
    reasoning, reflection = {}, {}
    for row in read_jsonl(a.input):
        (reflection if row["mode"] == "reflection" else reasoning)[row["id"]] = row
    out, bad = [], 0
    for sid in sorted(set(reasoning) & set(reflection)):
        parts = []
        for row in (reasoning[sid], reflection[sid]):
            res = clean_annotation(row["text"], row["mode"], row.get("expected_tools", ()), row.get("expected_verdict"))
            if not isinstance(res, Accept):
                raise SystemExit(f"{sid}: {row['mode']} fragment fails cleaning: {', '.join(res.violations)}")
            parts.append(res)
        draft = reflection[sid].get("draft")
        try:
            rec = assemble_sft_record(samples[sid], parts[0], parts[1],
                                      AnswerPayload.from_dict(draft) if draft else None)
        except SpliceInvalid as exc:
            print(f"{sid}: {exc}", file=sys.stderr)
            bad += 1
            continue
        out.append(rec.to_dict())
    write_jsonl(a.out, out)
    print(f"assembled {len(out)} records, {bad} splices rejected", file=sys.stderr)
    return 0


def cmd_v2cot_report(a) -> int:
    from .dataset import SftRecord, distribution_report

    table = distribution_report(SftRecord.from_dict(d) for d in read_jsonl(a.sft))
    _write(a.out, json.dumps(table.to_dict(), indent=2) + "\n" if a.json else table.format() + "\n")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    from .rewards import RewardWeights
    from .vistools import TOOLS

    p = argparse.ArgumentParser(prog="visloop", description="Tool-augmented odd-one-out grounding harness.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    tools = sub.add_parser("tools", help="run one visual tool").add_subparsers(dest="action", required=True)
    ap = tools.add_parser("apply")
    ap.add_argument("--tool", choices=TOOLS, required=True)
    ap.add_argument("--image", required=True)
    ap.add_argument("--bbox", type=_bbox, help="x1,y1,x2,y2 (roi and mask)")
    ap.add_argument("--out", required=True)
    ap.set_defaults(func=cmd_tools_apply)

    r = sub.add_parser("run", help="run inference sessions over a manifest")
    r.add_argument("--manifest", required=True)
    r.add_argument("--endpoint")
    r.add_argument("--model", default="default")
    r.add_argument("--mock", help="offline mock policy, e.g. oracle or noisy:jitter=3,seed=7")
    r.add_argument("--out", required=True)
    r.add_argument("--concurrency", type=int, default=1)
    r.add_argument("--temperature", type=float, default=0.7)
    r.add_argument("--max-tokens", type=int, default=2048)
    r.add_argument("--max-turns", type=int, default=12)
    r.add_argument("--timeout", type=float, default=120.0)
    r.add_argument("--limit", type=int)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="benchmark metrics over saved transcripts")
    e.add_argument("--manifest", required=True)
    e.add_argument("--runs", required=True)
    e.add_argument("--out", default="-")
    e.add_argument("--csv")
    e.add_argument("--by-source", action="store_true")
    e.add_argument("--macro", action="store_true")
    e.add_argument("--allow-missing", action="store_true", help="score absent transcripts as failures")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("reward", help="reward breakdowns for transcripts, or an NDJSON scoring service")
    w.add_argument("--manifest")
    w.add_argument("--runs")
    w.add_argument("--out", default="-")
    w.add_argument("--serve", action="store_true", help="read requests on stdin, write breakdowns on stdout")
    w.add_argument("--weights", type=_weights, default=RewardWeights(), help="fmt,iou,f1,tc,ver")
    w.add_argument("--allow-missing", action="store_true")
    w.set_defaults(func=cmd_reward)

    s = sub.add_parser("synth", help="synthetic odd-one-out scenes").add_subparsers(dest="action", required=True)
    g = s.add_parser("generate")
    g.add_argument("--spec", help="SynthSpec JSON used as the base")
    g.add_argument("--n", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--prefix", default="synth")
    g.add_argument("--split", default="test", choices=("train", "test"))
    g.add_argument("--fixed", dest="vary", action="store_false",
                   help="keep the spec's deviations and only reseed the target cell")
    g.set_defaults(func=cmd_synth)

    v = sub.add_parser("v2cot", help="cold-start data construction").add_subparsers(dest="action", required=True)
    vp = v.add_parser("partition")
    vp.add_argument("--scores", required=True, help="JSONL of ScoreRecord fields")
    vp.add_argument("--high", type=float, default=0.8)
    vp.add_argument("--margin", type=float, default=0.05)
    vp.add_argument("--out", default="-")
    vp.set_defaults(func=cmd_v2cot_partition)
    pr = v.add_parser("prompt")
    pr.add_argument("--manifest", required=True)
    pr.add_argument("--id", required=True)
    pr.add_argument("--mode", choices=("with_tools", "no_tools", "reflection"), required=True)
    pr.add_argument("--tools", help="comma-separated, e.g. CANNY,ROI")
    pr.add_argument("--prediction", help="answer JSON for reflection mode")
    pr.add_argument("--out", default="-")
    pr.set_defaults(func=cmd_v2cot_prompt)
    cl = v.add_parser("clean")
    cl.add_argument("--input", required=True, help="JSONL rows {id, mode, text, expected_tools?, expected_verdict?}")
    cl.add_argument("--out", required=True)
    cl.add_argument("--rejected")
    cl.set_defaults(func=cmd_v2cot_clean)
    asm = v.add_parser("assemble")
    asm.add_argument("--manifest", required=True)
    asm.add_argument("--input", required=True, help="cleaned JSONL; one reasoning and one reflection row per id")
    asm.add_argument("--out", required=True)
    asm.set_defaults(func=cmd_v2cot_assemble)
    rp = v.add_parser("report")
    rp.add_argument("--sft", required=True)
    rp.add_argument("--json", action="store_true")
    rp.add_argument("--out", default="-")
    rp.set_defaults(func=cmd_v2cot_report)
    return p


def main(argv: list[str] | None = None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return a.func(a)


if __name__ == "__main__":
    sys.exit(main())
