"""Tool-augmented visual grounding harness for odd-one-out tasks."""

from .core import AnswerPayload, BoundingBox, CharacterLabel, DegenerateBox, SampleRecord, iou, label_prf
from .trajectory import ParseError, Trajectory, parse_segments, parse_trajectory, serialize, validate_grammar
from .rewards import RewardBreakdown, RewardWeights, total_reward

__version__ = "0.1.0"
