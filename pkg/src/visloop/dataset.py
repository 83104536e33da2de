"""Synthetic odd-one-out scenes and the cold-start annotation pipeline."""

from __future__ import annotations

import colorsys
import math
import random
import re
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from string import Template
from typing import Iterable, Sequence, Union

import numpy as np
from PIL import Image, ImageDraw

from .core import (
    AnswerPayload,
    BoundingBox,
    CharacterLabel,
    SampleRecord,
    sorted_labels,
    write_manifest,
)
from .orchestrator import load_system_prompt, task_text
from .trajectory import (
    Code,
    Draft,
    Final,
    ParseError,
    Think,
    ToolCall,
    ToolKind,
    ToolResult,
    Trajectory,
    Verdict,
    Verify,
    count_tool_calls,
    parse_segments,
    serialize,
    validate_grammar,
)
from .vistools import save_png

# ---------------------------------------------------------------- synthetic scenes

SHAPES = ("circle", "square", "diamond", "triangle", "hexagon", "bar", "star")
# rotation angle (degrees) mapping each shape onto itself; 0 means any angle does
_SYMMETRY = {"circle": 0.0, "square": 90.0, "diamond": 90.0, "triangle": 120.0, "hexagon": 60.0,
             "bar": 180.0, "star": 72.0}
BACKGROUND = (240, 240, 240)


class SpecInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    rows: int = 4
    cols: int = 4
    cell: int = 64
    shape: str = "circle"
    color: tuple[int, int, int] = (220, 40, 40)
    size: float = 0.45  # shape radius as a fraction of half the cell
    orientation: float = 0.0
    stripes: bool = False
    characters: frozenset = frozenset({CharacterLabel.COLOR})
    hue_shift: float = 120.0
    rotation: float = 30.0
    scale: float = 1.5
    blur_sigma: float = 2.0
    offset: tuple[int, int] = (10, 10)
    alt_shape: str = "square"
    target: tuple[int, int] | None = None  # (row, col); drawn from the seed when None
    seed: int = 0

    def __post_init__(self) -> None:
        chars = frozenset(CharacterLabel.parse(c) for c in self.characters)
        object.__setattr__(self, "characters", chars)
        object.__setattr__(self, "color", tuple(int(c) for c in self.color))
        object.__setattr__(self, "offset", tuple(int(o) for o in self.offset))
        if self.target is not None:
            object.__setattr__(self, "target", tuple(int(t) for t in self.target))
        if not chars:
            raise ValueError("at least one deviating character is required")
        if self.rows < 1 or self.cols < 1 or self.rows * self.cols < 2:
            raise ValueError("the grid needs at least two cells")
        if self.cell < 8:
            raise ValueError("cell must be at least 8 pixels")
        if not 0 < self.size < 1:
            raise ValueError("size must lie in (0, 1)")
        for s in (self.shape, self.alt_shape):
            if s not in SHAPES:
                raise ValueError(f"unknown shape {s!r}")
        if any(not 0 <= c <= 255 for c in self.color):
            raise ValueError("color channels must lie in [0, 255]")
        if self.target is not None and not (0 <= self.target[0] < self.rows and 0 <= self.target[1] < self.cols):
            raise ValueError(f"target cell {self.target} outside the grid")
        nonzero = {
            CharacterLabel.COLOR: self.hue_shift % 360 != 0,
            CharacterLabel.ORIENTATION: self.rotation % 360 != 0,
            CharacterLabel.SIZE: self.scale > 0 and self.scale != 1,
            CharacterLabel.FOCUS: self.blur_sigma > 0,
            CharacterLabel.LOCATION: self.offset != (0, 0),
            CharacterLabel.SHAPE: self.alt_shape != self.shape,
            CharacterLabel.PATTERN: True,
        }
        for c in chars:
            if not nonzero[c]:
                raise ValueError(f"deviation magnitude for {c.value} must be nonzero")

    @property
    def canvas_size(self) -> tuple[int, int]:
        return self.cols * self.cell, self.rows * self.cell

    def to_dict(self) -> dict:
        d = asdict(self)
        d["characters"] = [c.value for c in sorted_labels(self.characters)]
        d["color"] = list(self.color)
        d["offset"] = list(self.offset)
        d["target"] = list(self.target) if self.target is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown spec fields {sorted(unknown)}")
        d = dict(d)
        for k in ("color", "offset", "target"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        if "characters" in d:
            d["characters"] = frozenset(d["characters"])
        return cls(**d)


def _polygon(shape: str, radius: float, angle: float, cx: float, cy: float) -> list[tuple[float, float]]:
    if shape == "circle":
        pts = [(1.0, 2 * math.pi * i / 64) for i in range(64)]
    elif shape == "square":
        pts = [(1.0, math.radians(45 + 90 * i)) for i in range(4)]
    elif shape == "diamond":
        pts = [(1.0, math.radians(90 * i)) for i in range(4)]
    elif shape == "triangle":
        pts = [(1.0, math.radians(-90 + 120 * i)) for i in range(3)]
    elif shape == "hexagon":
        pts = [(1.0, math.radians(60 * i)) for i in range(6)]
    elif shape == "star":
        pts = [(1.0 if i % 2 == 0 else 0.45, math.radians(-90 + 36 * i)) for i in range(10)]
    else:  # bar
        pts = [(math.hypot(1, 0.3), math.atan2(sy * 0.3, sx)) for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1))]
    a = math.radians(angle)
    return [(cx + radius * r * math.cos(t + a), cy + radius * r * math.sin(t + a)) for r, t in pts]


def _gaussian_blur(tile: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian truncated at ceil(3 sigma), so blur never spreads further."""
    r = math.ceil(3 * sigma)
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2 * sigma**2))
    k /= k.sum()
    f = np.pad(tile.astype(np.float64), ((r, r), (r, r), (0, 0)), mode="edge")
    h = np.zeros((f.shape[0], tile.shape[1], 3))
    for i in range(2 * r + 1):
        h += k[i] * f[:, i : i + tile.shape[1]]
    v = np.zeros(tile.shape, dtype=np.float64)
    for i in range(2 * r + 1):
        v += k[i] * h[i : i + tile.shape[0]]
    return np.clip(np.rint(v), 0, 255).astype(np.uint8)


def _shift_hue(rgb: tuple[int, int, int], degrees: float) -> tuple[int, int, int]:
    h, s, v = colorsys.rgb_to_hsv(*(c / 255 for c in rgb))
    r, g, b = colorsys.hsv_to_rgb((h + degrees / 360) % 1.0, s, v)
    return tuple(int(round(c * 255)) for c in (r, g, b))


def _render_tile(cell: int, shape: str, color, radius: float, angle: float, dx: int, dy: int,
                 stripes: bool) -> np.ndarray:
    c = (cell - 1) / 2
    pts = _polygon(shape, radius, angle, c + dx, c + dy)
    if any(not (0 <= px <= cell - 1 and 0 <= py <= cell - 1) for px, py in pts):
        raise SpecInfeasible("target shape leaves its cell")
    im = Image.new("RGB", (cell, cell), BACKGROUND)
    ImageDraw.Draw(im).polygon(pts, fill=tuple(color))
    tile = np.array(im)
    if stripes:
        mask = Image.new("L", (cell, cell), 0)
        ImageDraw.Draw(mask).polygon(pts, fill=255)
        yy, xx = np.mgrid[0:cell, 0:cell]
        band = (np.array(mask) > 0) & (((xx + yy) // 4) % 2 == 0)
        tile[band] = (np.asarray(color) * 0.4).astype(np.uint8)
    return tile


def _tight_box(tile: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(np.any(tile != np.asarray(BACKGROUND, dtype=np.uint8), axis=2))
    if ys.size == 0:
        raise SpecInfeasible("target renders no pixels")
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def _target_cell(spec: SynthSpec) -> tuple[int, int]:
    if spec.target is not None:
        return spec.target
    idx = random.Random(spec.seed).randrange(spec.rows * spec.cols)
    return divmod(idx, spec.cols)


def generate_synthetic(spec: SynthSpec, sample_id: str | None = None, split: str = "test") -> tuple[np.ndarray, SampleRecord]:
    """Render the scene; returns the image and a record whose image path is ``<id>.png``."""
    ch = spec.characters
    L = CharacterLabel
    radius = spec.size * spec.cell / 2
    distractor = _render_tile(spec.cell, spec.shape, spec.color, radius, spec.orientation, 0, 0, spec.stripes)

    color = spec.color
    if L.COLOR in ch:
        if max(spec.color) == min(spec.color):
            raise SpecInfeasible("hue shift of a gray color changes nothing")
        color = _shift_hue(spec.color, spec.hue_shift)
        if color == spec.color:
            raise SpecInfeasible("hue shift rounds back to the distractor color")
    shape = spec.alt_shape if L.SHAPE in ch else spec.shape
    angle = spec.orientation
    if L.ORIENTATION in ch:
        sym = _SYMMETRY[shape]
        if sym == 0 or math.isclose(spec.rotation % sym, 0, abs_tol=1e-9) or math.isclose(spec.rotation % sym, sym):
            raise SpecInfeasible(f"rotating a {shape} by {spec.rotation} degrees maps it onto itself")
        angle += spec.rotation
    r = radius * spec.scale if L.SIZE in ch else radius
    dx, dy = spec.offset if L.LOCATION in ch else (0, 0)
    stripes = (not spec.stripes) if L.PATTERN in ch else spec.stripes
    target = _render_tile(spec.cell, shape, color, r, angle, dx, dy, stripes)
    x1, y1, x2, y2 = _tight_box(target)
    if L.FOCUS in ch:
        e = math.ceil(3 * spec.blur_sigma)
        x1, y1, x2, y2 = max(0, x1 - e), max(0, y1 - e), min(spec.cell, x2 + e), min(spec.cell, y2 + e)
        target = _gaussian_blur(target, spec.blur_sigma)
    if np.array_equal(target, distractor):
        raise SpecInfeasible("target is pixel-identical to the distractors")

    w, h = spec.canvas_size
    img = np.empty((h, w, 3), dtype=np.uint8)
    tr, tc = _target_cell(spec)
    for row in range(spec.rows):
        for col in range(spec.cols):
            tile = target if (row, col) == (tr, tc) else distractor
            img[row * spec.cell : (row + 1) * spec.cell, col * spec.cell : (col + 1) * spec.cell] = tile
    ox, oy = tc * spec.cell, tr * spec.cell
    sid = sample_id or f"synth-{spec.seed}"
    rec = SampleRecord(sid, f"{sid}.png", BoundingBox(x1 + ox, y1 + oy, x2 + ox, y2 + oy), ch, "synthetic", split)
    return img, rec


def sample_specs(n: int, seed: int, base: SynthSpec = SynthSpec(), max_characters: int = 2) -> list[SynthSpec]:
    """Draw n feasible specs around ``base``; distractor look, target cell and deviations vary."""
    rng = random.Random(seed)
    palette = [(220, 40, 40), (40, 160, 60), (50, 90, 220), (230, 160, 30), (150, 60, 190)]
    out: list[SynthSpec] = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 100 * (n + 1):
            raise SpecInfeasible("could not draw enough feasible specs from this base")
        shape = rng.choice(SHAPES)
        chars = frozenset(rng.sample(list(CharacterLabel), rng.randint(1, max_characters)))
        spec = replace(
            base,
            shape=shape,
            color=rng.choice(palette),
            characters=chars,
            hue_shift=float(rng.randint(60, 180)),
            rotation=float(rng.randint(15, 40)),
            scale=rng.choice((0.6, 0.7, 1.35, 1.5)),
            blur_sigma=rng.choice((1.5, 2.0, 2.5)),
            offset=(rng.choice((-1, 1)) * rng.randint(6, 10), rng.choice((-1, 1)) * rng.randint(6, 10)),
            alt_shape=rng.choice([s for s in SHAPES if s != shape]),
            target=None,
            seed=rng.randrange(2**31),
        )
        try:
            generate_synthetic(spec)
        except SpecInfeasible:
            continue
        out.append(spec)
    return out


def write_synthetic_set(out_dir: str | Path, specs: Sequence[SynthSpec], prefix: str = "synth",
                        split: str = "test") -> list[SampleRecord]:
    """Render specs as PNGs plus ``manifest.jsonl`` in out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i, spec in enumerate(specs):
        img, rec = generate_synthetic(spec, f"{prefix}-{i:04d}", split)
        save_png(img, out / rec.image)
        records.append(replace(rec, base_dir=out.resolve()))
    write_manifest(out / "manifest.jsonl", records)
    return records


# ---------------------------------------------------------------- partitioning


@dataclass(frozen=True)
class ScoreRecord:
    id: str
    score_small_no_tool: float
    score_large_no_tool: float
    score_large_with_tool: float

    def __post_init__(self) -> None:
        for k in ("score_small_no_tool", "score_large_no_tool", "score_large_with_tool"):
            if not 0.0 <= getattr(self, k) <= 1.0:
                raise ValueError(f"{self.id}: {k} must lie in [0, 1]")


def partition_v2cot(scores: Iterable[ScoreRecord], high: float = 0.8,
                    margin: float = 0.05) -> tuple[list[str], list[str], list[str]]:
    """Split ids into (tool_free, tool_dependent, discarded)."""
    if not (0 < high < 1 and 0 < margin < 1):
        raise ValueError("thresholds must lie in (0, 1)")
    free, dep, rest = [], [], []
    for s in scores:
        if s.score_small_no_tool >= high:
            free.append(s.id)
        elif s.score_large_with_tool - s.score_large_no_tool >= margin:
            dep.append(s.id)
        else:
            rest.append(s.id)
    return free, dep, rest


# ---------------------------------------------------------------- annotation prompts

MODES = ("with_tools", "no_tools", "reflection")
PROMPT_VERSION = "v1"
_TEMPLATE_FILES = {"with_tools": "annotate_with_tools", "no_tools": "annotate_no_tools",
                   "reflection": "annotate_reflection"}


def _template(mode: str) -> Template:
    name = f"assets/{_TEMPLATE_FILES[mode]}_{PROMPT_VERSION}.txt"
    return Template(resources.files("visloop").joinpath(name).read_text("utf-8"))


def _tool_tag(t) -> str:
    kind = ToolKind(t.value if isinstance(t, ToolKind) else str(t).strip("<>").upper())
    return f"<{kind.value}>"


def build_annotation_prompt(sample: SampleRecord, mode: str, tools: Sequence = (),
                            prediction: AnswerPayload | None = None) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown annotation mode {mode!r}")
    if mode == "with_tools" and not tools:
        raise ValueError("with_tools mode needs a non-empty tool list")
    if mode == "reflection" and prediction is None:
        raise ValueError("reflection mode needs the prediction")
    fields = {
        "region": sample.gt_bbox.as_list(),
        "characters": ", ".join(c.value for c in sorted_labels(sample.gt_characters)),
        "tools": ", ".join(_tool_tag(t) for t in tools),
        "prediction": prediction.to_json() if prediction is not None else "",
    }
    return _template(mode).substitute({k: str(v) for k, v in fields.items()})


# ---------------------------------------------------------------- cleaning

LEAKAGE_STRINGS = ("ground truth", "correct answer", "<target region>", "<target character>",
                   "auxiliary information")
RULES = ("ParseRule", "ToolMismatch", "NestedToolRule", "LeakageRule", "StructureRule", "VerdictRule")
_WORD = re.compile(r"[A-Za-z]+")


@dataclass(frozen=True)
class Accept:
    mode: str
    segments: tuple
    text: str  # canonical serialization

    @property
    def verdict(self) -> Verdict | None:
        v = [s for s in self.segments if isinstance(s, Verify)]
        return v[0].verdict if v else None


@dataclass(frozen=True)
class Reject:
    violations: tuple[str, ...]
    details: tuple[str, ...] = ()


CleanResult = Union[Accept, Reject]


def _expected_counts(expected_tools) -> Counter:
    if isinstance(expected_tools, dict):
        return Counter({ToolKind(str(k).strip("<>").upper()) if not isinstance(k, ToolKind) else k: int(v)
                        for k, v in expected_tools.items()})
    return Counter(ToolKind(t.value if isinstance(t, ToolKind) else str(t).strip("<>").upper()) for t in expected_tools)


def clean_annotation(raw: str, mode: str, expected_tools: Iterable = (), expected_verdict: Verdict | None = None,
                     min_words: int = 3) -> CleanResult:
    """Rule filter for one annotator output; Reject lists every violated rule."""
    if mode not in MODES:
        raise ValueError(f"unknown annotation mode {mode!r}")
    expected = _expected_counts(expected_tools) if mode == "with_tools" else Counter()
    bad: dict[str, list[str]] = {}

    def flag(rule: str, msg: str) -> None:
        bad.setdefault(rule, []).append(msg)

    low = raw.lower()
    for s in LEAKAGE_STRINGS:
        if s in low:
            flag("LeakageRule", f"mentions {s!r}")

    segs: list = []
    try:
        segs = parse_segments(raw)
    except ParseError as exc:
        for d in exc.diagnostics:
            if d.code is Code.NESTED_TAG and re.search(r"<(CANNY|ROI|COLOR)>", d.message):
                flag("NestedToolRule", str(d))
            elif d.code is Code.EMPTY_TEXT:
                flag("StructureRule", str(d))
            else:
                flag("ParseRule", str(d))

    if segs:
        used = Counter(count_tool_calls(segs))
        used = Counter({k: v for k, v in used.items() if v})
        if +used != +expected:
            flag("ToolMismatch", f"tools used {dict(used)} but expected {dict(expected)}")
        kinds = [type(s) for s in segs]
        if mode == "reflection":
            if not (kinds[0] is Verify and kinds.count(Verify) == 1
                    and all(k in (Draft, Final) for k in kinds[1:]) and len(kinds) <= 2):
                flag("StructureRule", "reflection fragment must be one <verify> optionally followed by one answer")
            elif expected_verdict is not None and segs[0].verdict is not Verdict(expected_verdict):
                flag("VerdictRule", f"verdict {segs[0].verdict.value}, expected {Verdict(expected_verdict).value}")
        else:
            ok = kinds[0] is Think and kinds[-1] is Think
            prev = None
            for k in kinds:
                if k not in (Think, ToolCall, ToolResult):
                    ok = False
                elif k is Think and prev is Think:
                    ok = False
                elif k is ToolResult and prev is not ToolCall:
                    ok = False
                prev = k
            if not ok:
                flag("StructureRule", "reasoning fragment must alternate <think> blocks and tool calls")
        for s in segs:
            text = getattr(s, "text", None)
            if text is not None and len(_WORD.findall(text)) < min_words:
                flag("StructureRule", f"{type(s).__name__} body has fewer than {min_words} words")
    elif not bad:
        flag("StructureRule", "empty fragment")

    if bad:
        order = {r: i for i, r in enumerate(RULES)}
        rules = tuple(sorted(bad, key=order.__getitem__))
        return Reject(rules, tuple(m for r in rules for m in bad[r]))
    return Accept(mode, tuple(segs), serialize(Trajectory(tuple(segs))))


# ---------------------------------------------------------------- SFT records

PATTERNS = ("Canny", "Zoom-in", "Color", "Canny+Zoom-in", "Canny+Color", "Zoom-in+Color", "ALL")
NO_TOOL = "none"
SOURCE_NAMES = {"natural": "O3", "synthetic": "P3"}


class SpliceInvalid(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics) or "splice is not grammar-valid")


def pattern_tag(counts: dict) -> str:
    used = {k for k, v in counts.items() if v}
    c, z, o = ToolKind.CANNY in used, ToolKind.ROI in used, ToolKind.COLOR in used
    return {
        (True, False, False): "Canny",
        (False, True, False): "Zoom-in",
        (False, False, True): "Color",
        (True, True, False): "Canny+Zoom-in",
        (True, False, True): "Canny+Color",
        (False, True, True): "Zoom-in+Color",
        (True, True, True): "ALL",
        (False, False, False): NO_TOOL,
    }[(c, z, o)]


@dataclass(frozen=True)
class SftRecord:
    id: str
    source: str
    conversation: tuple
    trajectory: str
    pattern: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "conversation", tuple(dict(m) for m in self.conversation))
        t = Trajectory(tuple(parse_segments(self.trajectory)))
        ok, diags = validate_grammar(t)
        if not ok:
            raise SpliceInvalid(diags)
        tag = pattern_tag(count_tool_calls(list(t.segments)))
        if tag != self.pattern:
            raise ValueError(f"{self.id}: pattern tag {self.pattern!r} but tools say {tag!r}")

    def to_dict(self) -> dict:
        return {"id": self.id, "source": self.source, "conversation": list(self.conversation),
                "trajectory": self.trajectory, "pattern": self.pattern}

    @classmethod
    def from_dict(cls, d: dict) -> "SftRecord":
        return cls(d["id"], d["source"], tuple(d["conversation"]), d["trajectory"], d["pattern"])


def _image_size(sample: SampleRecord) -> tuple[int, int] | None:
    try:
        with Image.open(sample.image_path) as im:
            return im.size
    except OSError:
        return None


def assemble_sft_record(sample: SampleRecord, reasoning: Accept, reflection: Accept,
                        draft: AnswerPayload | None = None, system_prompt: str | None = None) -> SftRecord:
    """Splice reasoning, a draft (ground truth by default), the reflection and a final answer."""
    if reasoning.mode == "reflection" or reflection.mode != "reflection":
        raise ValueError("expected a reasoning fragment and a reflection fragment")
    gt = sample.gt_answer
    d = draft or gt
    segs = list(reasoning.segments) + [Draft(d)] + list(reflection.segments)
    last = segs[-1]
    if isinstance(last, Draft):
        segs.append(Final(last.payload))
    elif isinstance(last, Verify):
        if last.verdict is Verdict.CORRECT:
            segs.append(Final(d))
        else:
            segs += [Draft(gt), Final(gt)]
    t = Trajectory(tuple(segs))
    ok, diags = validate_grammar(t)
    if not ok:
        raise SpliceInvalid(diags)
    text = serialize(t)
    size = _image_size(sample)
    conversation = (
        {"role": "system", "content": system_prompt if system_prompt is not None else load_system_prompt()},
        {"role": "user", "content": "<image>" + task_text(*(size or (None, None))), "image": sample.image},
        {"role": "assistant", "content": text},
    )
    return SftRecord(sample.id, sample.source, conversation, text, pattern_tag(count_tool_calls(segs)))


@dataclass(frozen=True)
class DistributionTable:
    rows: dict  # source name -> {column: count}

    COLUMNS = PATTERNS + ("w/ tools", "w/o tool", "Total")

    def total(self) -> dict:
        return {c: sum(r[c] for r in self.rows.values()) for c in self.COLUMNS}

    def to_dict(self) -> dict:
        return {"columns": list(self.COLUMNS), "rows": self.rows, "total": self.total()}

    def format(self) -> str:
        widths = [max(len(c), 5) for c in self.COLUMNS]
        head = "Source | " + " | ".join(c.rjust(w) for c, w in zip(self.COLUMNS, widths))
        lines = [head, "-" * len(head)]
        for name, r in list(self.rows.items()) + [("Total", self.total())]:
            lines.append(f"{name:<6} | " + " | ".join(str(r[c]).rjust(w) for c, w in zip(self.COLUMNS, widths)))
        return "\n".join(lines)


def distribution_report(records: Iterable) -> DistributionTable:
    """Count records by tool pattern and source; anything with .pattern and .source works."""
    rows = {name: {c: 0 for c in DistributionTable.COLUMNS} for name in SOURCE_NAMES.values()}
    for r in records:
        name = SOURCE_NAMES.get(r.source, r.source)
        row = rows.setdefault(name, {c: 0 for c in DistributionTable.COLUMNS})
        if r.pattern == NO_TOOL:
            row["w/o tool"] += 1
        elif r.pattern in PATTERNS:
            row[r.pattern] += 1
            row["w/ tools"] += 1
        else:
            raise ValueError(f"unknown pattern tag {r.pattern!r}")
        row["Total"] += 1
    return DistributionTable(rows)
