"""Bounded mask-and-verify loop.

Each round masks the latest draft's box out of the original image and asks the
model whether a salient outlier is still visible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .core import AnswerPayload
from .trajectory import Draft, Verdict, Verify
from .vistools import apply_mask

MAX_ITERATIONS = 2


class MissingRevision(ValueError):
    """An incorrect verdict arrived without a revised draft while rounds remain."""


@dataclass(frozen=True)
class ReflectionState:
    original: np.ndarray = field(repr=False)
    drafts: tuple[AnswerPayload, ...] = ()
    verdicts: tuple[Verdict, ...] = ()
    k: int = 0
    max_iterations: int = MAX_ITERATIONS

    def __post_init__(self) -> None:
        object.__setattr__(self, "drafts", tuple(self.drafts))
        object.__setattr__(self, "verdicts", tuple(self.verdicts))
        if not 0 <= self.k <= self.max_iterations:
            raise ValueError(f"iteration index {self.k} outside [0, {self.max_iterations}]")
        if self.drafts and len(self.drafts) != self.k + 1:
            raise ValueError("drafts must hold exactly k + 1 entries")
        if len(self.verdicts) > self.k + 1:
            raise ValueError("more verdicts than rounds")

    @classmethod
    def start(cls, original: np.ndarray, first: AnswerPayload, max_iterations: int = MAX_ITERATIONS):
        return cls(original=original, drafts=(first,), max_iterations=max_iterations)

    @property
    def latest(self) -> AnswerPayload:
        if not self.drafts:
            raise ValueError("no draft yet")
        return self.drafts[-1]


@dataclass(frozen=True)
class Continue:
    state: ReflectionState


@dataclass(frozen=True)
class Accept:
    final: AnswerPayload


@dataclass(frozen=True)
class Exhausted:
    final: AnswerPayload
    reflection_exhausted: bool = True


StepResult = Union[Continue, Accept, Exhausted]


def next_reflection_input(state: ReflectionState) -> np.ndarray:
    """The original image with the latest draft's box blacked out."""
    return apply_mask(state.original, state.latest.bbox)


def step(state: ReflectionState, model_verify: Verify, revised: Draft | AnswerPayload | None = None) -> StepResult:
    verdicts = state.verdicts + (model_verify.verdict,)
    if model_verify.verdict is Verdict.CORRECT:
        return Accept(state.latest)
    if state.k >= state.max_iterations:
        return Exhausted(state.latest)
    if revised is None:
        raise MissingRevision(f"incorrect verdict at round {state.k} without a revised draft")
    payload = revised.payload if isinstance(revised, Draft) else revised
    nxt = replace(state, drafts=state.drafts + (payload,), verdicts=verdicts, k=state.k + 1)
    if nxt.k >= nxt.max_iterations:
        # no verification rounds left; the last revision stands unverified
        return Exhausted(payload)
    return Continue(nxt)
