"""Tagged reasoning trajectories: parsing, canonical serialization, grammar.

Wire vocabulary::

    <think>..</think>  <CANNY>  <COLOR>  <ROI>[x1,y1,x2,y2]</ROI>
    <draft_answer>{json}</draft_answer>  <verify>.. VERDICT: correct</verify>
    <final_answer>{json}</final_answer>  <tool_result image="tool_1.png"/>

``<tool_result/>`` entries are written by the orchestrator, never by the model.
Answer payloads are JSON objects ``{"characters": [...], "bbox": [x1, y1, x2, y2]}``.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

from .core import AnswerPayload, BoundingBox, CharacterLabel


class ToolKind(str, Enum):
    CANNY = "CANNY"
    ROI = "ROI"
    COLOR = "COLOR"


class Verdict(str, Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"


class Code(str, Enum):
    UNBALANCED_TAG = "UnbalancedTag"
    UNKNOWN_TAG = "UnknownTag"
    BAD_TOOL_ARGUMENT = "BadToolArgument"
    BAD_ANSWER_PAYLOAD = "BadAnswerPayload"
    GRAMMAR_VIOLATION = "GrammarViolation"
    NESTED_TAG = "NestedTag"
    REFLECTION_BUDGET = "ReflectionBudget"
    EMPTY_TEXT = "EmptyText"
    STRAY_TEXT = "StrayText"
    BAD_VERDICT = "BadVerdict"
    BAD_ENCODING = "BadEncoding"


@dataclass(frozen=True)
class FormatDiagnostic:
    position: int  # byte offset into the source, -1 if unknown
    code: Code
    message: str

    def __str__(self) -> str:
        return f"{self.code.value}@{self.position}: {self.message}"


class ParseError(ValueError):
    def __init__(self, diagnostics: list[FormatDiagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


_TAGLIKE = re.compile(r"<[A-Za-z_/]")


def _normalize_text(text: str) -> str:
    text = " ".join(text.split())
    if not text:
        raise ValueError("text must be non-empty")
    if _TAGLIKE.search(text):
        raise ValueError(f"text contains tag-like markup: {text!r}")
    return text


@dataclass(frozen=True)
class Segment:
    # source byte span; ignored by equality
    span: tuple[int, int] = field(default=(-1, -1), compare=False, repr=False, kw_only=True)


@dataclass(frozen=True)
class Think(Segment):
    text: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "text", _normalize_text(self.text))


@dataclass(frozen=True)
class ToolCall(Segment):
    kind: ToolKind
    arg: BoundingBox | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ToolKind(self.kind))
        if self.kind is ToolKind.ROI:
            if self.arg is None:
                raise ValueError("ROI needs a bounding box argument")
            if self.arg.x1 < 0 or self.arg.y1 < 0:
                raise ValueError("ROI box has negative coordinates")
        elif self.arg is not None:
            raise ValueError(f"{self.kind.value} takes no argument")


@dataclass(frozen=True)
class ToolResult(Segment):
    image: str

    def __post_init__(self) -> None:
        if not self.image or re.search(r'["<>\s]', self.image):
            raise ValueError(f"bad tool result image reference: {self.image!r}")


@dataclass(frozen=True)
class Draft(Segment):
    payload: AnswerPayload


@dataclass(frozen=True)
class Verify(Segment):
    text: str
    verdict: Verdict

    def __post_init__(self) -> None:
        object.__setattr__(self, "text", _normalize_text(self.text))
        object.__setattr__(self, "verdict", Verdict(self.verdict))


@dataclass(frozen=True)
class Final(Segment):
    payload: AnswerPayload


AnySegment = Union[Think, ToolCall, ToolResult, Draft, Verify, Final]


@dataclass(frozen=True)
class Trajectory:
    segments: tuple[AnySegment, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))

    def __iter__(self):
        return iter(self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    def of_type(self, cls) -> list:
        return [s for s in self.segments if isinstance(s, cls)]

    @property
    def drafts(self) -> list[Draft]:
        return self.of_type(Draft)

    @property
    def verifies(self) -> list[Verify]:
        return self.of_type(Verify)

    @property
    def final(self) -> Final | None:
        finals = self.of_type(Final)
        return finals[-1] if finals else None


# ---------------------------------------------------------------- parsing

_TAG_RE = re.compile(r'<(/?)([A-Za-z_][A-Za-z0-9_]*)((?:\s+[A-Za-z_]+="[^"<>]*")*)\s*(/?)>')
_ATTR_RE = re.compile(r'([A-Za-z_]+)="([^"<>]*)"')
_CONTAINERS = {"think", "verify", "draft_answer", "final_answer", "ROI"}
_BARE_TOOLS = {"CANNY", "COLOR"}
_VERDICT_RE = re.compile(r"VERDICT:\s*(correct|incorrect)\s*$", re.IGNORECASE)
_INCORRECT_PHRASES = ("prediction is incorrect", "prediction is wrong", "prediction is not correct")
_CORRECT_PHRASES = ("prediction is correct",)


def extract_verdict(body: str) -> tuple[str, Verdict]:
    """Split a verify body into (text, verdict).

    The strict form ends with ``VERDICT: correct|incorrect``; free-form bodies
    fall back to keyword phrases such as "prediction is correct".
    """
    m = _VERDICT_RE.search(body)
    if m:
        return body[: m.start()], Verdict(m.group(1).lower())
    low = " ".join(body.lower().split())
    neg = any(p in low for p in _INCORRECT_PHRASES)
    pos = any(p in low for p in _CORRECT_PHRASES)
    if neg == pos:
        raise ValueError("no unambiguous verdict found")
    return body, Verdict.INCORRECT if neg else Verdict.CORRECT


def _parse_int_box(raw: str) -> BoundingBox:
    values = json.loads(raw)
    if not isinstance(values, list) or len(values) != 4:
        raise ValueError("expected [x1,y1,x2,y2]")
    if any(isinstance(v, bool) or not isinstance(v, int) for v in values):
        raise ValueError("box coordinates must be integers")
    if any(v < 0 for v in values):
        raise ValueError("box coordinates must be non-negative")
    return BoundingBox(*values)


def parse_payload(raw: str) -> AnswerPayload:
    obj = json.loads(raw)
    if not isinstance(obj, dict) or set(obj) != {"characters", "bbox"}:
        raise ValueError('payload must be an object with exactly "characters" and "bbox"')
    chars = obj["characters"]
    if not isinstance(chars, list) or not chars or not all(isinstance(c, str) for c in chars):
        raise ValueError("characters must be a non-empty list of strings")
    labels = frozenset(CharacterLabel.parse(c) for c in chars)
    return AnswerPayload(labels, _parse_int_box(json.dumps(obj["bbox"])))


class _ByteOffsets:
    def __init__(self, text: str):
        self._ascii = text.isascii()
        if not self._ascii:
            self._cum = [0]
            for ch in text:
                self._cum.append(self._cum[-1] + len(ch.encode("utf-8")))

    def __call__(self, i: int) -> int:
        return i if self._ascii else self._cum[i]


def parse_segments(source: str | bytes) -> list[AnySegment]:
    """Tokenize tagged text into segments without checking segment order.

    Raises ParseError carrying every lexical/payload diagnostic found.
    """
    diags: list[FormatDiagnostic] = []
    if isinstance(source, (bytes, bytearray)):
        try:
            text = bytes(source).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError([FormatDiagnostic(exc.start, Code.BAD_ENCODING, "input is not valid UTF-8")])
    else:
        text = source
    off = _ByteOffsets(text)

    def diag(i: int, code: Code, msg: str) -> None:
        diags.append(FormatDiagnostic(off(i), code, msg))

    segments: list[AnySegment] = []
    open_name: str | None = None
    open_at = 0
    body: list[str] = []
    i = 0
    n = len(text)

    def add_text(chunk: str, at: int) -> None:
        if open_name is not None:
            body.append(chunk)
        elif chunk.strip():
            diag(at + len(chunk) - len(chunk.lstrip()), Code.STRAY_TEXT, "text outside any tag")

    while i < n:
        j = text.find("<", i)
        if j < 0:
            add_text(text[i:], i)
            break
        if j > i:
            add_text(text[i:j], i)
        i = j
        if j + 1 >= n or not (text[j + 1].isalpha() or text[j + 1] in "_/"):
            add_text("<", j)
            i = j + 1
            continue
        m = _TAG_RE.match(text, j)
        if m is None:
            diag(j, Code.UNKNOWN_TAG, "malformed tag")
            add_text("<", j)
            i = j + 1
            continue
        closing, name, attrs, selfclose = m.group(1), m.group(2), m.group(3), m.group(4)
        end = m.end()
        i = end
        known = (
            (name in _CONTAINERS and not attrs and not selfclose)
            or (name in _BARE_TOOLS and not closing and not attrs and not selfclose)
            or (name == "tool_result" and not closing and selfclose)
        )
        if not known:
            diag(j, Code.UNKNOWN_TAG, f"unknown tag {m.group(0)!r}")
            continue
        if open_name is not None:
            if closing and name == open_name:
                raw = "".join(body)
                seg = _build(open_name, raw, open_at, j, diag)
                if seg is not None:
                    object.__setattr__(seg, "span", (off(open_at), off(end)))
                    segments.append(seg)
                open_name, body = None, []
            elif closing:
                diag(j, Code.UNBALANCED_TAG, f"</{name}> closes <{open_name}>")
                open_name, body = None, []
            else:
                diag(j, Code.NESTED_TAG, f"<{name}> inside <{open_name}>")
            continue
        if closing:
            diag(j, Code.UNBALANCED_TAG, f"</{name}> without an opening tag")
        elif name in _CONTAINERS:
            open_name, open_at, body = name, j, []
        elif name in _BARE_TOOLS:
            segments.append(ToolCall(ToolKind(name), span=(off(j), off(end))))
        else:
            found = dict(_ATTR_RE.findall(attrs))
            try:
                if set(found) != {"image"}:
                    raise ValueError("tool_result needs exactly an image attribute")
                segments.append(ToolResult(found["image"], span=(off(j), off(end))))
            except ValueError as exc:
                diag(j, Code.UNKNOWN_TAG, str(exc))
    if open_name is not None:
        diag(open_at, Code.UNBALANCED_TAG, f"<{open_name}> is never closed")
    if diags:
        raise ParseError(sorted(diags, key=lambda d: d.position))
    return segments


def _build(name: str, raw: str, start: int, close_at: int, diag) -> AnySegment | None:
    try:
        if name == "think":
            if not raw.strip():
                diag(start, Code.EMPTY_TEXT, "empty <think>")
                return None
            return Think(raw)
        if name == "ROI":
            try:
                return ToolCall(ToolKind.ROI, _parse_int_box(raw.strip()))
            except ValueError as exc:
                diag(start, Code.BAD_TOOL_ARGUMENT, f"ROI argument: {exc}")
                return None
        if name in ("draft_answer", "final_answer"):
            try:
                payload = parse_payload(raw.strip())
            except (ValueError, TypeError, KeyError) as exc:
                diag(start, Code.BAD_ANSWER_PAYLOAD, f"{name}: {exc}")
                return None
            return Draft(payload) if name == "draft_answer" else Final(payload)
        # verify
        try:
            body, verdict = extract_verdict(raw)
        except ValueError as exc:
            diag(start, Code.BAD_VERDICT, str(exc))
            return None
        if not body.strip():
            diag(start, Code.EMPTY_TEXT, "empty <verify> text")
            return None
        return Verify(body, verdict)
    except ValueError as exc:  # pragma: no cover - normalization guards
        diag(start, Code.GRAMMAR_VIOLATION, str(exc))
        return None


def parse_trajectory(source: str | bytes) -> Trajectory:
    """Parse a complete trajectory; raises ParseError with lexical or grammar diagnostics."""
    t = Trajectory(parse_segments(source))
    ok, diags = validate_grammar(t)
    if not ok:
        raise ParseError(diags)
    return t


# ---------------------------------------------------------------- serialization

def serialize_segment(s: AnySegment) -> str:
    if isinstance(s, Think):
        return f"<think>{s.text}</think>"
    if isinstance(s, ToolCall):
        if s.kind is ToolKind.ROI:
            return "<ROI>[{},{},{},{}]</ROI>".format(*s.arg.as_list())
        return f"<{s.kind.value}>"
    if isinstance(s, ToolResult):
        return f'<tool_result image="{s.image}"/>'
    if isinstance(s, Draft):
        return f"<draft_answer>{s.payload.to_json()}</draft_answer>"
    if isinstance(s, Verify):
        return f"<verify>{s.text} VERDICT: {s.verdict.value}</verify>"
    if isinstance(s, Final):
        return f"<final_answer>{s.payload.to_json()}</final_answer>"
    raise TypeError(f"not a segment: {s!r}")


def serialize(t: Trajectory) -> str:
    return "".join(serialize_segment(s) for s in t.segments)


# ---------------------------------------------------------------- grammar

MAX_VERIFY = 2


def validate_grammar(t: Trajectory, max_verify: int = MAX_VERIFY) -> tuple[bool, list[FormatDiagnostic]]:
    """Check ``Think (ToolCall [ToolResult] Think)* Draft (Verify Draft?){0..2} Final``.

    After an incorrect verdict the next segment is a revised Draft or a Final
    that differs from the last Draft; after a correct verdict it is a Final
    equal to the last Draft.
    """
    diags: list[FormatDiagnostic] = []

    def bad(seg, idx: int, msg: str, code: Code = Code.GRAMMAR_VIOLATION) -> None:
        diags.append(FormatDiagnostic(seg.span[0] if seg is not None else -1, code, f"segment {idx}: {msg}"))

    segs = t.segments
    if not segs:
        bad(None, 0, "empty trajectory")
        return False, diags
    state = "start"
    last_draft: AnswerPayload | None = None
    last_verdict: Verdict | None = None
    n_verify = 0
    for idx, s in enumerate(segs):
        if state == "done":
            bad(s, idx, f"{type(s).__name__} after the final answer")
            break
        if state == "start":
            if not isinstance(s, Think):
                bad(s, idx, "trajectory must open with <think>")
                break
            state = "thought"
        elif state == "thought":
            if isinstance(s, ToolCall):
                state = "called"
            elif isinstance(s, Draft):
                last_draft, state = s.payload, "drafted"
            else:
                bad(s, idx, f"{type(s).__name__} after <think>; expected a tool call or draft")
                break
        elif state in ("called", "resulted"):
            if isinstance(s, ToolResult) and state == "called":
                state = "resulted"
            elif isinstance(s, Think):
                state = "thought"
            else:
                bad(s, idx, f"{type(s).__name__} after a tool call; expected <think>")
                break
        elif state == "drafted":
            if isinstance(s, Verify):
                n_verify += 1
                if n_verify > max_verify:
                    bad(s, idx, f"more than {max_verify} verification rounds", Code.REFLECTION_BUDGET)
                    break
                last_verdict, state = s.verdict, "verified"
            elif isinstance(s, Final):
                state = "done"
            else:
                bad(s, idx, f"{type(s).__name__} after a draft; expected <verify> or <final_answer>")
                break
        elif state == "verified":
            if last_verdict is Verdict.CORRECT:
                if not isinstance(s, Final):
                    bad(s, idx, "a correct verdict must be followed by <final_answer>")
                    break
                if s.payload != last_draft:
                    bad(s, idx, "final answer differs from the draft accepted as correct")
                    break
                state = "done"
            else:
                if isinstance(s, Draft):
                    if s.payload == last_draft:
                        bad(s, idx, "revised draft repeats the draft judged incorrect")
                        break
                    last_draft, state = s.payload, "drafted"
                elif isinstance(s, Final):
                    if s.payload == last_draft:
                        bad(s, idx, "final answer repeats the draft judged incorrect")
                        break
                    state = "done"
                else:
                    bad(s, idx, "an incorrect verdict must be followed by a revised draft or final answer")
                    break
    else:
        if state != "done":
            bad(segs[-1], len(segs) - 1, "trajectory has no <final_answer>")
    return not diags, diags


def count_tool_calls(t: Trajectory | list) -> dict[ToolKind, int]:
    segs = t.segments if isinstance(t, Trajectory) else t
    counts = Counter(s.kind for s in segs if isinstance(s, ToolCall))
    return {k: counts.get(k, 0) for k in ToolKind}
