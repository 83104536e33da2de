"""One inference session per sample: prompt, parse, dispatch tools, reflect, record."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import AnswerPayload, DegenerateBox, SampleRecord
from .modelclient import (
    ChatMessage,
    ImagePart,
    ModelClient,
    ModelError,
    TextPart,
    render_reflection,
    text_message,
)
from .reflection import Accept, Continue, Exhausted, MissingRevision, ReflectionState, next_reflection_input, step
from .trajectory import (
    Draft,
    Final,
    ParseError,
    Think,
    ToolCall,
    ToolKind,
    Verdict,
    Verify,
    parse_segments,
    serialize_segment,
)
from .vistools import (
    PIXEL_BUDGET,
    CannyParams,
    ColorParams,
    ZoomParams,
    canny,
    color_amplify,
    encode_png,
    enforce_pixel_budget,
    load_image,
    zoom_in,
)

logger = logging.getLogger(__name__)

SYSTEM_PROMPT_VERSION = "v1"
TRANSCRIPT_SCHEMA = 1


def load_system_prompt(version: str = SYSTEM_PROMPT_VERSION) -> str:
    return resources.files("visloop").joinpath(f"assets/system_prompt_{version}.txt").read_text("utf-8")


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    max_roi_calls: int = 2
    max_canny_calls: int = 1
    max_color_calls: int = 1
    max_reflections: int = 2
    temperature: float = 0.7
    max_output_tokens: int | None = 2048
    pixel_budget: int = PIXEL_BUDGET
    max_turns: int = 12
    system_prompt: str = field(default_factory=load_system_prompt, repr=False)
    canny: CannyParams = CannyParams()
    zoom_margin: float = 0.10
    color: ColorParams = ColorParams()

    def __post_init__(self) -> None:
        for name in ("max_roi_calls", "max_canny_calls", "max_color_calls", "max_reflections"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")

    @property
    def limits(self) -> dict[ToolKind, int]:
        return {ToolKind.CANNY: self.max_canny_calls, ToolKind.ROI: self.max_roi_calls,
                ToolKind.COLOR: self.max_color_calls}

    def snapshot(self) -> dict:
        d = asdict(self)
        d["system_prompt_sha256"] = hashlib.sha256(d.pop("system_prompt").encode()).hexdigest()
        return d

    @classmethod
    def from_snapshot(cls, d: dict, system_prompt: str | None = None) -> "SessionConfig":
        """Rebuild a config from a transcript; the prompt text must match the recorded hash."""
        d = dict(d)
        digest = d.pop("system_prompt_sha256")
        prompt = system_prompt if system_prompt is not None else load_system_prompt()
        if hashlib.sha256(prompt.encode()).hexdigest() != digest:
            raise ValueError("system prompt differs from the one recorded in the transcript")
        d["canny"] = CannyParams(**d["canny"])
        d["color"] = ColorParams(**d["color"])
        return cls(system_prompt=prompt, **d)


class ToolBudget:
    def __init__(self, cfg: SessionConfig):
        self.remaining = dict(cfg.limits)

    def exhausted(self) -> bool:
        return all(v <= 0 for v in self.remaining.values())

    def as_dict(self) -> dict[str, int]:
        return {k.value: v for k, v in self.remaining.items()}


def dispatch_tool(call: ToolCall, original: np.ndarray, budget: ToolBudget, cfg: SessionConfig) -> np.ndarray:
    """Run one tool on the original image; the budget is charged only on success."""
    if budget.remaining[call.kind] <= 0:
        raise BudgetExceeded(f"{call.kind.value} budget exhausted")
    if call.kind is ToolKind.CANNY:
        out = canny(original, cfg.canny)
    elif call.kind is ToolKind.COLOR:
        out = color_amplify(original, cfg.color)
    else:
        out = zoom_in(original, call.arg, ZoomParams(cfg.zoom_margin, cfg.pixel_budget))
    budget.remaining[call.kind] -= 1
    return enforce_pixel_budget(out, cfg.pixel_budget)


@dataclass
class SessionTranscript:
    sample_id: str
    config: dict
    events: list[dict] = field(default_factory=list)
    final: AnswerPayload | None = None
    failure: str | None = None
    reflection_exhausted: bool = False
    images: dict[str, bytes] = field(default_factory=dict, repr=False)

    @property
    def trajectory(self) -> str:
        return "".join(e.get("piece", "") for e in self.events)

    def to_dict(self) -> dict:
        return {
            "schema": TRANSCRIPT_SCHEMA,
            "id": self.sample_id,
            "config": self.config,
            "events": self.events,
            "trajectory": self.trajectory,
            "final": self.final.to_dict() if self.final else None,
            "failure": self.failure,
            "reflection_exhausted": self.reflection_exhausted,
            "images": sorted(self.images),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def save(self, root: str | Path) -> Path:
        d = Path(root) / self.sample_id
        d.mkdir(parents=True, exist_ok=True)
        for name, png in self.images.items():
            (d / name).write_bytes(png)
        (d / "transcript.json").write_text(self.to_json(), encoding="utf-8")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SessionTranscript":
        if d.get("schema") != TRANSCRIPT_SCHEMA:
            raise ValueError(f"unsupported transcript schema {d.get('schema')!r}")
        t = cls(d["id"], d["config"], d["events"], AnswerPayload.from_dict(d["final"]) if d["final"] else None,
                d["failure"], d["reflection_exhausted"])
        if t.trajectory != d["trajectory"]:
            raise ValueError(f"transcript {t.sample_id}: stored trajectory disagrees with its events")
        return t

    @classmethod
    def load(cls, path: str | Path) -> "SessionTranscript":
        path = Path(path)
        if path.is_dir():
            path = path / "transcript.json"
        t = cls.from_dict(json.loads(path.read_text("utf-8")))
        for name in json.loads(path.read_text("utf-8"))["images"]:
            f = path.parent / name
            if f.exists():
                t.images[name] = f.read_bytes()
        return t


def load_transcripts(runs_dir: str | Path) -> list[SessionTranscript]:
    return [SessionTranscript.load(p) for p in sorted(Path(runs_dir).glob("*/transcript.json"))]


def task_text(width: int | None = None, height: int | None = None) -> str:
    size = f" of this {width}x{height} image" if width and height else ""
    return (
        "Find the odd-one-out: one object differs from the others in one or more visual characters "
        "(color, orientation, size, shape, focus, location, pattern). Name the differing characters and give "
        f"the object's bounding box [x1,y1,x2,y2] in pixels{size}."
    )


def task_message(sample: SampleRecord, img: np.ndarray, png: bytes) -> ChatMessage:
    h, w = img.shape[:2]
    return ChatMessage("user", (TextPart(task_text(w, h)), ImagePart(png)), {"kind": "task", "sample_id": sample.id})


def _prefix(raw: str, end_byte: int) -> str:
    return raw.encode("utf-8")[:end_byte].decode("utf-8")


class _Session:
    def __init__(self, sample, model, cfg, clock, image):
        self.sample, self.model, self.cfg, self.clock = sample, model, cfg, clock
        img = image if image is not None else load_image(sample.image_path)
        self.original = enforce_pixel_budget(img, cfg.pixel_budget)
        self.budget = ToolBudget(cfg)
        self.tr = SessionTranscript(sample.id, cfg.snapshot())
        self.messages: list[ChatMessage] = [
            text_message("system", cfg.system_prompt, kind="system"),
            task_message(sample, self.original, encode_png(self.original)),
        ]
        self.state: ReflectionState | None = None
        self.phase = "reason"
        self.done = False
        self._t = clock()

    # -- recording
    def event(self, **ev) -> dict:
        now = self.clock()
        ev["elapsed_s"] = round(now - self._t, 6)
        self._t = now
        self.tr.events.append(ev)
        return ev

    def notice(self, text: str) -> None:
        self.messages.append(text_message("user", text, kind="notice"))
        self.event(type="notice", text=text)

    def close(self, payload: AnswerPayload, by_harness: bool, exhausted: bool = False) -> None:
        piece = serialize_segment(Final(payload)) if by_harness else ""
        self.event(type="final", answer=payload.to_dict(), source="harness" if by_harness else "model", piece=piece)
        self.tr.final = payload
        self.tr.reflection_exhausted = exhausted
        self.done = True

    def fail(self, reason: str) -> None:
        self.tr.failure = reason
        self.done = True

    # -- loop
    def run(self) -> SessionTranscript:
        for turn in range(self.cfg.max_turns):
            try:
                raw = self.model.complete(self.messages, self.cfg.temperature, self.cfg.max_output_tokens)
            except ModelError as exc:
                self.event(type="model_error", turn=turn, kind=exc.kind, message=str(exc))
                self.fail(f"model_error:{exc.kind}")
                break
            self.handle(turn, raw)
            if self.done:
                break
        else:
            self.fail("turn_limit")
        return self.tr

    def malformed(self, turn: int, raw: str, diagnostics: list[str]) -> None:
        self.messages.append(text_message("assistant", raw or " "))
        self.event(type="model_turn", turn=turn, raw=raw, accepted=raw, status="malformed",
                   diagnostics=diagnostics, piece=raw)
        self.fail("malformed_emission")

    def accept(self, turn: int, raw: str, end: int) -> None:
        text = _prefix(raw, end)
        self.messages.append(text_message("assistant", text))
        self.event(type="model_turn", turn=turn, raw=raw, accepted=text, status="ok", piece=text)

    def handle(self, turn: int, raw: str) -> None:
        try:
            segs = parse_segments(raw)
        except ParseError as exc:
            return self.malformed(turn, raw, [str(d) for d in exc.diagnostics])
        if not segs:
            return self.malformed(turn, raw, ["empty emission"])
        if self.phase == "reason":
            self.handle_reasoning(turn, raw, segs)
        else:
            self.handle_verification(turn, raw, segs)

    def handle_reasoning(self, turn, raw, segs) -> None:
        for i, s in enumerate(segs):
            if isinstance(s, Think):
                continue
            if not isinstance(s, (ToolCall, Draft, Final)):
                return self.malformed(turn, raw, [f"unexpected {type(s).__name__} while reasoning"])
            self.accept(turn, raw, s.span[1])
            if isinstance(s, ToolCall):
                self.run_tool(s)
            elif isinstance(s, Draft):
                self.start_reflection(s.payload)
            else:
                self.close(s.payload, by_harness=False)
            return
        self.accept(turn, raw, segs[-1].span[1])
        self.notice("Continue: call a tool or give your <draft_answer>.")

    def run_tool(self, call: ToolCall) -> None:
        arg = call.arg.as_list() if call.arg else None
        try:
            out = dispatch_tool(call, self.original, self.budget, self.cfg)
        except BudgetExceeded as exc:
            self.event(type="tool", tool=call.kind.value, arg=arg, status="refused", reason=str(exc),
                       remaining=self.budget.as_dict())
            if self.budget.exhausted():
                self.notice("All tool budgets are exhausted; answer now with <draft_answer>.")
            else:
                self.notice(f"The {call.kind.value} call was refused: its budget is used up.")
            return
        except DegenerateBox as exc:
            self.event(type="tool", tool=call.kind.value, arg=arg, status="degenerate", reason=str(exc),
                       remaining=self.budget.as_dict())
            self.notice(f"The {call.kind.value} call was refused: {exc}.")
            return
        n = sum(1 for e in self.tr.events if e.get("type") == "tool" and e["status"] == "executed") + 1
        name = f"tool_{n}.png"
        png = encode_png(out)
        self.tr.images[name] = png
        self.messages.append(ChatMessage("user", (TextPart(f"{call.kind.value} result"), ImagePart(png)),
                                         {"kind": "tool_result"}))
        self.event(type="tool", tool=call.kind.value, arg=arg, status="executed", image=name,
                   remaining=self.budget.as_dict(), piece=f'<tool_result image="{name}"/>')

    def start_reflection(self, draft: AnswerPayload) -> None:
        if self.cfg.max_reflections == 0:
            return self.close(draft, by_harness=True)
        self.state = ReflectionState.start(self.original, draft, self.cfg.max_reflections)
        self.phase = "verify"
        self.send_feedback()

    def send_feedback(self) -> None:
        try:
            img = next_reflection_input(self.state)
        except DegenerateBox as exc:
            self.event(type="reflection", k=self.state.k, status="skipped", reason=str(exc))
            return self.close(self.state.latest, by_harness=True)
        n = sum(1 for e in self.tr.events if e.get("type") == "reflection" and e["status"] == "sent") + 1
        name = f"reflect_{n}.png"
        msg = render_reflection(img, self.state.latest, self.cfg.pixel_budget)
        self.tr.images[name] = next(p.png for p in msg.parts if isinstance(p, ImagePart))
        self.messages.append(msg)
        self.event(type="reflection", k=self.state.k, status="sent", image=name,
                   previous_answer=self.state.latest.to_dict())

    def handle_verification(self, turn, raw, segs) -> None:
        v = segs[0]
        if not isinstance(v, Verify):
            return self.malformed(turn, raw, [f"expected <verify>, got {type(v).__name__}"])
        nxt = segs[1] if len(segs) > 1 else None
        if v.verdict is Verdict.CORRECT:
            if isinstance(nxt, Final):
                self.accept(turn, raw, nxt.span[1])
                return self.close(nxt.payload, by_harness=False)
            self.accept(turn, raw, v.span[1])
            out = step(self.state, v)
            return self.close(out.final, by_harness=True)
        if isinstance(nxt, Final):
            self.accept(turn, raw, nxt.span[1])
            return self.close(nxt.payload, by_harness=False)
        revised = nxt if isinstance(nxt, Draft) else None
        self.accept(turn, raw, (revised or v).span[1])
        try:
            out = step(self.state, v, revised)
        except MissingRevision as exc:
            self.event(type="reflection", k=self.state.k, status="missing_revision", reason=str(exc))
            return self.fail("missing_revision")
        if isinstance(out, Continue):
            self.state = out.state
            self.send_feedback()
        elif isinstance(out, Exhausted):
            self.close(out.final, by_harness=True, exhausted=True)
        else:  # pragma: no cover - Accept only follows a correct verdict
            self.close(out.final, by_harness=True)


def run_session(
    sample: SampleRecord,
    model: ModelClient,
    cfg: SessionConfig | None = None,
    clock: Callable[[], float] = time.perf_counter,
    image: np.ndarray | None = None,
) -> SessionTranscript:
    return _Session(sample, model, cfg or SessionConfig(), clock, image).run()


class ScriptedModel:
    """Replays recorded emissions in order; used to re-run a session offline."""

    def __init__(self, emissions: Sequence[str]):
        self._emissions = list(emissions)
        self._i = 0

    def complete(self, messages, temperature=0.7, max_tokens=None) -> str:
        if self._i >= len(self._emissions):
            raise ModelError("transport", "script exhausted")
        self._i += 1
        return self._emissions[self._i - 1]


def replay_session(
    transcript: SessionTranscript,
    sample: SampleRecord,
    clock: Callable[[], float] = time.perf_counter,
    image: np.ndarray | None = None,
    system_prompt: str | None = None,
) -> SessionTranscript:
    """Re-run a session from the model emissions recorded in its transcript."""
    if transcript.sample_id != sample.id:
        raise ValueError(f"transcript {transcript.sample_id} does not belong to sample {sample.id}")
    raw = [e["raw"] for e in transcript.events if e.get("type") == "model_turn"]
    cfg = SessionConfig.from_snapshot(transcript.config, system_prompt)
    return run_session(sample, ScriptedModel(raw), cfg, clock, image)


def run_batch(
    samples: Sequence[SampleRecord],
    model: ModelClient,
    cfg: SessionConfig | None = None,
    out_dir: str | Path | None = None,
    concurrency: int = 1,
    clock: Callable[[], float] = time.perf_counter,
) -> list[SessionTranscript]:
    cfg = cfg or SessionConfig()

    def one(s: SampleRecord) -> SessionTranscript:
        t = run_session(s, model, cfg, clock)
        if out_dir is not None:
            t.save(out_dir)
        logger.info("%s: final=%s failure=%s", s.id, t.final and t.final.to_json(), t.failure)
        return t

    if concurrency <= 1:
        return [one(s) for s in samples]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(one, samples))
