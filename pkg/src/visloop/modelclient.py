"""Boundary to the vision-language model.

``ChatCompletionsClient`` speaks the common chat-completions JSON protocol
(content parts, base64 PNG data URLs).  ``MockModel`` replays seeded,
scripted policies so the whole pipeline runs offline.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence, Union

import httpx
import numpy as np

from .core import AnswerPayload, BoundingBox, CharacterLabel, SampleRecord, iou, label_prf
from .vistools import PIXEL_BUDGET, encode_png, enforce_pixel_budget

logger = logging.getLogger(__name__)


class ModelError(RuntimeError):
    def __init__(self, kind: str, message: str):
        if kind not in ("transport", "status", "timeout", "overlong"):
            raise ValueError(kind)
        self.kind = kind
        super().__init__(f"{kind}: {message}")


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    png: bytes = field(repr=False)


Part = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class ChatMessage:
    role: str
    parts: tuple[Part, ...]
    # local annotations (sample id, message kind); never sent on the wire
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad role {self.role!r}")
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError("a message needs at least one part")

    @property
    def text(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))

    @property
    def kind(self) -> str | None:
        return self.meta.get("kind")

    def to_wire(self) -> dict:
        content = []
        for p in self.parts:
            if isinstance(p, TextPart):
                content.append({"type": "text", "text": p.text})
            else:
                url = "data:image/png;base64," + base64.b64encode(p.png).decode("ascii")
                content.append({"type": "image_url", "image_url": {"url": url}})
        return {"role": self.role, "content": content}


def text_message(role: str, text: str, **meta) -> ChatMessage:
    return ChatMessage(role, (TextPart(text),), meta)


def image_message(text: str, img: np.ndarray, budget: int = PIXEL_BUDGET, **meta) -> ChatMessage:
    return ChatMessage("user", (TextPart(text), ImagePart(encode_png(enforce_pixel_budget(img, budget)))), meta)


def render_tool_result(img: np.ndarray, label: str, budget: int = PIXEL_BUDGET) -> ChatMessage:
    return image_message(label, img, budget, kind="tool_result")


def render_reflection(img: np.ndarray, previous: AnswerPayload, budget: int = PIXEL_BUDGET) -> ChatMessage:
    text = (
        "masked feedback: the region of your previous answer is blacked out below.\n"
        f"Previous answer: {previous.to_json()}\n"
        "Check whether any object with an inconsistent visual character remains visible and whether "
        "the mask covers one complete instance. Reply with <verify>...VERDICT: correct|incorrect</verify>, "
        "then a revised <draft_answer> if incorrect."
    )
    return image_message(text, img, budget, kind="reflection")


def encode_request(messages: Sequence[ChatMessage], model: str, temperature: float, max_tokens: int | None) -> bytes:
    body = {"model": model, "messages": [m.to_wire() for m in messages], "temperature": temperature}
    if max_tokens is not None:
        body["max_tokens"] = max_tokens
    return json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def _elide_images(body: dict) -> dict:
    body = json.loads(json.dumps(body))
    for m in body.get("messages", []):
        for part in m.get("content", []) if isinstance(m.get("content"), list) else []:
            if part.get("type") == "image_url":
                part["image_url"]["url"] = "<image elided>"
    return body


class ModelClient(Protocol):
    def complete(self, messages: Sequence[ChatMessage], temperature: float = 0.7,
                 max_tokens: int | None = None) -> str: ...


class ChatCompletionsClient:
    """Non-streaming chat-completions client with bounded retries and an in-flight limit."""

    def __init__(
        self,
        endpoint: str,
        model: str = "default",
        api_key_env: str = "VLM_API_KEY",
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff: float = 1.0,
        max_in_flight: int = 8,
        trace: bool = False,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint.rstrip("/")
        if not self.endpoint.endswith("/chat/completions"):
            self.endpoint += "/chat/completions"
        self.model = model
        self.max_retries = max_retries
        self.backoff = backoff
        self.trace = trace
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def close(self) -> None:
        self._http.close()

    def complete(self, messages, temperature=0.7, max_tokens=None) -> str:
        body = encode_request(messages, self.model, temperature, max_tokens)
        if self.trace:
            logger.info("request %s", json.dumps(_elide_images(json.loads(body))))
        last: ModelError | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self._http.post(self.endpoint, content=body)
            except httpx.TimeoutException as exc:
                last = ModelError("timeout", str(exc))
                continue
            except httpx.TransportError as exc:
                last = ModelError("transport", str(exc))
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = ModelError("status", f"HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ModelError("status", f"HTTP {resp.status_code}: {resp.text[:200]}")
            return self._decode(resp)
        assert last is not None
        raise last

    def _decode(self, resp: httpx.Response) -> str:
        try:
            data = resp.json()
            choice = data["choices"][0]
            content = choice["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ModelError("transport", f"undecodable response: {exc}") from exc
        if self.trace:
            logger.info("response %s", json.dumps(data)[:4000])
        if choice.get("finish_reason") == "length":
            raise ModelError("overlong", "completion hit the token limit")
        if isinstance(content, list):
            content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
        return content or ""


# ---------------------------------------------------------------- mocks

MOCK_KINDS = ("oracle", "noisy", "tool_happy", "stubborn", "malformed", "corrective")
MALFORMED_MODES = {
    "unbalanced": "<think>the odd one is probably the",
    "unknown_tag": "<think>zoom first</think><ZOOM>",
    "nested": "<think>look at edges <CANNY> now</think>",
    "bad_payload": '<think>found it</think><draft_answer>{"characters": "colour", "bbox": [1,2]}</draft_answer>',
    "empty": "",
}


@dataclass(frozen=True)
class MockPolicy:
    kind: str = "oracle"
    jitter: int = 0  # bbox jitter in pixels (noisy / stubborn)
    flip_p: float = 0.0  # label flip probability (noisy / stubborn)
    seed: int = 0
    script: tuple = ()  # tool_happy: ("CANNY", "COLOR", ("ROI", [x1,y1,x2,y2]), ...)
    mode: str = "empty"  # malformed corruption mode

    def __post_init__(self) -> None:
        if self.kind not in MOCK_KINDS:
            raise ValueError(f"unknown mock kind {self.kind!r}")
        if self.kind == "malformed" and self.mode not in MALFORMED_MODES:
            raise ValueError(f"unknown malformed mode {self.mode!r}")
        if not 0 <= self.flip_p <= 1:
            raise ValueError("flip_p must lie in [0, 1]")

    @classmethod
    def parse(cls, spec: str) -> "MockPolicy":
        """``noisy:jitter=3,flip_p=0.1,seed=7`` style command-line spec."""
        kind, _, rest = spec.partition(":")
        kw: dict = {}
        for item in filter(None, rest.split(",")):
            k, _, v = item.partition("=")
            if k == "script":
                kw["script"] = tuple(v.split("+"))
            elif k == "mode":
                kw["mode"] = v
            elif k == "flip_p":
                kw["flip_p"] = float(v)
            else:
                kw[k] = int(v)
        return cls(kind=kind, **kw)


def _rng(*parts) -> random.Random:
    digest = hashlib.sha256(":".join(map(str, parts)).encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def perturb(gt: AnswerPayload, jitter: int, flip_p: float, rng: random.Random) -> AnswerPayload:
    b = gt.bbox
    coords = [max(0, v + rng.randint(-jitter, jitter)) if jitter else v for v in b.as_list()]
    x1, y1, x2, y2 = coords
    x2, y2 = max(x2, x1 + 1), max(y2, y1 + 1)
    labels = []
    for c in sorted(gt.characters, key=lambda c: c.value):
        if rng.random() < flip_p:
            c = rng.choice([o for o in CharacterLabel if o is not c])
        labels.append(c)
    return AnswerPayload(frozenset(labels), BoundingBox(x1, y1, x2, y2))


_TOOL_TAG = re.compile(r"<(CANNY|COLOR|ROI)>")
_PREVIOUS = re.compile(r"^Previous answer: (\{.*\})$", re.MULTILINE)


def _draft(p: AnswerPayload) -> str:
    return f"<draft_answer>{p.to_json()}</draft_answer>"


def _final(p: AnswerPayload) -> str:
    return f"<final_answer>{p.to_json()}</final_answer>"


_SEE = "<think>Most objects share one appearance; a single object stands out from the rest.</think>"
_CORRECT = ("<verify>The unmasked area shows no remaining object with an inconsistent visual character and the "
            "mask covers one whole instance, so the prediction is correct. VERDICT: correct</verify>")
_INCORRECT = ("<verify>An object with an inconsistent visual character is still visible outside the mask, so the "
              "prediction is incorrect. VERDICT: incorrect</verify>")


class MockModel:
    """Scripted stand-in for a VLM; the reply depends only on the policy, the sample and the history."""

    def __init__(self, policy: MockPolicy, samples: Sequence[SampleRecord] | dict):
        self.policy = policy
        self.samples = samples if isinstance(samples, dict) else {s.id: s for s in samples}

    def complete(self, messages, temperature=0.7, max_tokens=None) -> str:
        sample_id = next((m.meta["sample_id"] for m in messages if "sample_id" in m.meta), None)
        if sample_id not in self.samples:
            raise ModelError("status", f"mock does not know sample {sample_id!r}")
        gt = self.samples[sample_id].gt_answer
        turn = sum(1 for m in messages if m.role == "assistant")
        last = messages[-1]
        n_reflect = sum(1 for m in messages if m.kind == "reflection")
        pol = self.policy
        rng = _rng(pol.seed, sample_id, turn)
        if pol.kind == "malformed":
            return MALFORMED_MODES[pol.mode]

        if last.kind == "reflection":
            return self._verify(gt, messages, n_reflect)

        if pol.kind == "tool_happy":
            n_calls = sum(1 for m in messages if m.role == "assistant" and _TOOL_TAG.search(m.text))
            if n_calls < len(pol.script):
                item = pol.script[n_calls]
                if isinstance(item, str) and item.startswith("ROI"):
                    item = ("ROI", gt.bbox.as_list())
                if isinstance(item, (tuple, list)):
                    tag = "<ROI>[{},{},{},{}]</ROI>".format(*item[1])
                else:
                    tag = f"<{item}>"
                lead = _SEE if turn == 0 else "<think>The previous view helps; one more tool should confirm it.</think>"
                return lead + tag
            lead = _SEE if turn == 0 else "<think>The tool output confirms which object differs.</think>"
            return lead + _draft(gt)

        if pol.kind == "corrective":
            wrong = _wrong_answer(gt, rng)
            return _SEE + _draft(wrong)
        if pol.kind in ("noisy", "stubborn"):
            return _SEE + _draft(perturb(gt, pol.jitter, pol.flip_p, rng))
        return _SEE + _draft(gt)

    def _verify(self, gt: AnswerPayload, messages, n_reflect: int) -> str:
        pol = self.policy
        prev = _previous_answer(messages)
        if pol.kind == "stubborn":
            return _CORRECT + _final(prev)
        matches = iou(prev.bbox, gt.bbox) >= 0.5 and label_prf(prev.characters, gt.characters)[2] >= 0.5
        if matches:
            return _CORRECT + _final(prev)
        if pol.kind == "noisy":
            rng = _rng(pol.seed, "revise", gt.to_json(), n_reflect)
            revised = perturb(gt, max(pol.jitter // 2, 0), pol.flip_p / 2, rng)
            if revised == prev:
                revised = gt if gt != prev else _wrong_answer(gt, rng)
            return _INCORRECT + _draft(revised)
        return _INCORRECT + _draft(gt if gt != prev else _wrong_answer(gt, random.Random(n_reflect)))


def _previous_answer(messages) -> AnswerPayload:
    for m in reversed(messages):
        found = _PREVIOUS.search(m.text) if m.kind == "reflection" else None
        if found:
            return AnswerPayload.from_dict(json.loads(found.group(1)))
    raise ModelError("status", "no previous answer in reflection message")


def _wrong_answer(gt: AnswerPayload, rng: random.Random) -> AnswerPayload:
    b = gt.bbox
    shift = b.width + 5
    box = BoundingBox(b.x1 + shift, b.y1, b.x2 + shift, b.y2) if b.x1 < shift else BoundingBox(
        b.x1 - shift, b.y1, b.x2 - shift, b.y2)
    other = rng.choice([c for c in CharacterLabel if c not in gt.characters])
    return AnswerPayload(frozenset([other]), box)
