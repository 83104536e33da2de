from __future__ import annotations

import numpy as np
import pytest

from visloop.core import AnswerPayload, BoundingBox, CharacterLabel
from visloop.reflection import (
    Accept,
    Continue,
    Exhausted,
    MissingRevision,
    ReflectionState,
    next_reflection_input,
    step,
)
from visloop.trajectory import Draft, Verdict, Verify

A = AnswerPayload(frozenset({CharacterLabel.COLOR}), BoundingBox(0, 0, 4, 4))
B = AnswerPayload(frozenset({CharacterLabel.SIZE}), BoundingBox(2, 2, 6, 6))
C = AnswerPayload(frozenset({CharacterLabel.SHAPE}), BoundingBox(1, 1, 3, 3))
IMG = np.full((8, 8, 3), 200, np.uint8)
YES, NO = Verify("ok", Verdict.CORRECT), Verify("no", Verdict.INCORRECT)


def test_correct_accepts_latest():
    assert step(ReflectionState.start(IMG, A), YES) == Accept(A)


def test_incorrect_without_revision_raises():
    with pytest.raises(MissingRevision):
        step(ReflectionState.start(IMG, A), NO)


def test_two_rounds_then_exhausted():
    r1 = step(ReflectionState.start(IMG, A), NO, Draft(B))
    assert isinstance(r1, Continue) and r1.state.k == 1 and r1.state.latest == B
    r2 = step(r1.state, NO, C)
    assert isinstance(r2, Exhausted) and r2.final == C and r2.reflection_exhausted


def test_single_round_budget():
    assert step(ReflectionState.start(IMG, A, max_iterations=1), NO, B) == Exhausted(B)


def test_state_invariants():
    with pytest.raises(ValueError):
        ReflectionState(IMG, (A,), (), k=1)
    with pytest.raises(ValueError):
        ReflectionState(IMG, (A, B, C, A), (), k=3)


def test_mask_uses_latest_draft():
    st = ReflectionState(IMG, (A, B), (Verdict.INCORRECT,), 1)
    out = next_reflection_input(st)
    assert not out[2:6, 2:6].any() and out[0, 0].all()
