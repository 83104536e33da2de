"""Deterministic low-level visual tools: Canny edges, zoom-in, color amplification,
region masking and the pixel-budget normalizer.

Images are ``numpy.uint8`` arrays of shape (height, width, 3).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import BoundingBox, as_image, clamp_bbox

PIXEL_BUDGET = 1003520

# ITU-R BT.601 luma weights, scaled by 1000 so grayscale stays integral.
LUMA_WEIGHTS = (299, 587, 114)
LUMA_SCALE = 1000


@dataclass(frozen=True)
class CannyParams:
    gaussian_sigma: float = 1.4
    kernel_size: int = 5
    low_threshold: float = 50.0
    high_threshold: float = 150.0

    def __post_init__(self) -> None:
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be positive")
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be an odd integer >= 3")
        if not 0 < self.low_threshold < self.high_threshold <= 255:
            raise ValueError("need 0 < low_threshold < high_threshold <= 255")


@dataclass(frozen=True)
class ZoomParams:
    margin_fraction: float = 0.10
    pixel_budget: int = PIXEL_BUDGET

    def __post_init__(self) -> None:
        if self.margin_fraction < 0:
            raise ValueError("margin_fraction must be >= 0")
        if self.pixel_budget <= 0:
            raise ValueError("pixel_budget must be positive")


@dataclass(frozen=True)
class ColorParams:
    saturation_gain: float = 1.5
    stretch_low_percentile: float = 2.0
    stretch_high_percentile: float = 98.0

    def __post_init__(self) -> None:
        if self.saturation_gain < 1:
            raise ValueError("saturation_gain must be >= 1")
        if not 0 <= self.stretch_low_percentile < self.stretch_high_percentile <= 100:
            raise ValueError("need 0 <= low < high <= 100 percentiles")


# ---------------------------------------------------------------- canny

def gaussian_kernel_int(sigma: float, size: int, total: int = 256) -> np.ndarray:
    """Integer Gaussian kernel whose entries approximate ``total * g(x, y)``."""
    r = size // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    k = np.floor(g / g.sum() * total + 0.5).astype(np.int64)
    k[r, r] += total - int(k.sum())  # keep the kernel sum exact
    return k


def _correlate_int(a: np.ndarray, k: np.ndarray) -> np.ndarray:
    r = k.shape[0] // 2
    p = np.pad(a, r, mode="edge")
    h, w = a.shape
    out = np.zeros((h, w), dtype=np.int64)
    for dy in range(k.shape[0]):
        for dx in range(k.shape[1]):
            if k[dy, dx]:
                out += k[dy, dx] * p[dy : dy + h, dx : dx + w]
    return out


def canny_edges(img: np.ndarray, p: CannyParams = CannyParams()) -> np.ndarray:
    """Boolean edge mask of ``img``.

    All arithmetic up to thresholding is on exact integers: gray is scaled by
    1000, the Gaussian by its integer kernel sum.  Thresholds are on the Sobel
    magnitude of the 0-255 gray image.
    """
    img = as_image(img).astype(np.int64)
    wr, wg, wb = LUMA_WEIGHTS
    gray = wr * img[..., 0] + wg * img[..., 1] + wb * img[..., 2]
    kernel = gaussian_kernel_int(p.gaussian_sigma, p.kernel_size)
    blur = _correlate_int(gray, kernel)
    scale = LUMA_SCALE * int(kernel.sum())

    b = np.pad(blur, 1, mode="edge")
    h, w = blur.shape
    win = lambda dy, dx: b[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]  # noqa: E731
    gx = (win(-1, 1) + 2 * win(0, 1) + win(1, 1)) - (win(-1, -1) + 2 * win(0, -1) + win(1, -1))
    gy = (win(1, -1) + 2 * win(1, 0) + win(1, 1)) - (win(-1, -1) + 2 * win(-1, 0) + win(-1, 1))
    mag2 = gx * gx + gy * gy

    # direction bins: 0 horizontal gradient, 1 = 45deg, 2 vertical, 3 = 135deg (y grows downward)
    ang = np.degrees(np.arctan2(gy.astype(np.float64), gx.astype(np.float64))) % 180.0
    bins = np.zeros((h, w), dtype=np.int8)
    bins[(ang >= 22.5) & (ang < 67.5)] = 1
    bins[(ang >= 67.5) & (ang < 112.5)] = 2
    bins[(ang >= 112.5) & (ang < 157.5)] = 3

    m = np.pad(mag2, 1, mode="constant")
    mwin = lambda dy, dx: m[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]  # noqa: E731
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros((h, w), dtype=bool)
    for k, (dy, dx) in offsets.items():
        fwd, back = mwin(dy, dx), mwin(-dy, -dx)
        # strict against the backward neighbour, non-strict forward: plateaus keep one pixel
        keep |= (bins == k) & (mag2 > back) & (mag2 >= fwd)
    keep &= mag2 > 0

    strong = keep & _at_least(mag2, p.high_threshold * scale)
    weak = keep & _at_least(mag2, p.low_threshold * scale)
    return _hysteresis(strong, weak)


def _at_least(mag2: np.ndarray, t: float) -> np.ndarray:
    """sqrt(mag2) >= t, exactly when t is integral."""
    if float(t).is_integer() and 0 <= t < 3e9:
        return mag2 >= int(t) ** 2
    return np.sqrt(mag2.astype(np.float64)) >= t


def _hysteresis(strong: np.ndarray, weak: np.ndarray) -> np.ndarray:
    out = strong.copy()
    h, w = out.shape
    stack = list(zip(*np.nonzero(strong)))
    while stack:
        y, x = stack.pop()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and weak[ny, nx] and not out[ny, nx]:
                    out[ny, nx] = True
                    stack.append((ny, nx))
    return out


def canny(img: np.ndarray, p: CannyParams = CannyParams()) -> np.ndarray:
    """Edge map rendered as RGB: edges white, everything else black."""
    edges = canny_edges(img, p)
    return np.repeat((edges.astype(np.uint8) * 255)[..., None], 3, axis=2)


# ---------------------------------------------------------------- resizing

def resize_bilinear(img: np.ndarray, width: int, height: int) -> np.ndarray:
    if (width, height) == (img.shape[1], img.shape[0]):
        return img.copy()
    out = Image.fromarray(img, "RGB").resize((width, height), Image.Resampling.BILINEAR)
    return np.asarray(out, dtype=np.uint8).copy()


def _fit_dims(w: int, h: int, budget: int) -> tuple[int, int]:
    s = math.sqrt(budget / (w * h))
    nw, nh = max(1, int(math.floor(w * s))), max(1, int(math.floor(h * s)))
    while nw * nh > budget:
        if nw / w >= nh / h and nw > 1:
            nw -= 1
        else:
            nh -= 1
    return nw, nh


def enforce_pixel_budget(img: np.ndarray, budget: int = PIXEL_BUDGET) -> np.ndarray:
    if budget <= 0:
        raise ValueError("budget must be positive")
    img = as_image(img)
    h, w = img.shape[:2]
    if w * h <= budget:
        return img
    return resize_bilinear(img, *_fit_dims(w, h, budget))


def zoom_in(img: np.ndarray, roi: BoundingBox, p: ZoomParams = ZoomParams()) -> np.ndarray:
    """Crop ``roi`` plus a margin and upscale it as far as the pixel budget allows."""
    img = as_image(img)
    h, w = img.shape[:2]
    crop_box = zoom_crop_box(w, h, roi, p.margin_fraction)
    crop = img[crop_box.y1 : crop_box.y2, crop_box.x1 : crop_box.x2]
    cw, ch = crop_box.width, crop_box.height
    if cw * ch > p.pixel_budget:
        return resize_bilinear(crop, *_fit_dims(cw, ch, p.pixel_budget))
    nw, nh = _fit_dims(cw, ch, p.pixel_budget)
    return resize_bilinear(crop, max(nw, cw), max(nh, ch))


def zoom_crop_box(img_w: int, img_h: int, roi: BoundingBox, margin_fraction: float = 0.10) -> BoundingBox:
    """The region ``zoom_in`` crops before scaling."""
    box = clamp_bbox(roi, img_w, img_h)
    mx = int(math.floor(box.width * margin_fraction + 0.5))
    my = int(math.floor(box.height * margin_fraction + 0.5))
    return clamp_bbox(BoundingBox(box.x1 - mx, box.y1 - my, box.x2 + mx, box.y2 + my), img_w, img_h)


# ---------------------------------------------------------------- color

def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Float RGB in [0, 1] to HSV with hue in [0, 1)."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    s = np.where(v > 0, c / np.where(v > 0, v, 1), 0.0)
    safe = np.where(c > 0, c, 1)
    hr = ((g - b) / safe) % 6
    hg = (b - r) / safe + 2
    hb = (r - g) / safe + 4
    hue = np.where(v == r, hr, np.where(v == g, hg, hb))
    hue = np.where(c > 0, hue / 6.0, 0.0) % 1.0
    return np.stack([hue, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    i = i.astype(np.int64) % 6
    choices = [
        np.stack([v, t, p], -1), np.stack([q, v, p], -1), np.stack([p, v, t], -1),
        np.stack([p, q, v], -1), np.stack([t, p, v], -1), np.stack([v, p, q], -1),
    ]
    out = np.zeros_like(hsv)
    for k, arr in enumerate(choices):
        out = np.where((i == k)[..., None], arr, out)
    return out


def color_amplify(img: np.ndarray, p: ColorParams = ColorParams()) -> np.ndarray:
    """Boost saturation, then stretch each channel between two percentiles."""
    img = as_image(img)
    hsv = rgb_to_hsv(img.astype(np.float64) / 255.0)
    hsv[..., 1] = np.minimum(hsv[..., 1] * p.saturation_gain, 1.0)
    rgb = hsv_to_rgb(hsv) * 255.0
    out = np.empty_like(rgb)
    for c in range(3):
        ch = rgb[..., c]
        lo, hi = np.percentile(ch, [p.stretch_low_percentile, p.stretch_high_percentile])
        if hi - lo <= 1e-9:
            out[..., c] = ch
        else:
            out[..., c] = (ch - lo) * (255.0 / (hi - lo))
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------- masking

def apply_mask(img: np.ndarray, region: BoundingBox) -> np.ndarray:
    """Zero every pixel inside ``region``; the rest is copied unchanged."""
    img = as_image(img)
    box = clamp_bbox(region, img.shape[1], img.shape[0])
    out = img.copy()
    out[box.y1 : box.y2, box.x1 : box.x2] = 0
    return out


# ---------------------------------------------------------------- io

def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(as_image(img), "RGB").save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def decode_image(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def save_png(img: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(encode_png(img))


TOOLS = ("canny", "roi", "color", "mask")


def apply_tool(name: str, img: np.ndarray, bbox: BoundingBox | None = None, **params) -> np.ndarray:
    """Single entry point shared by the CLI and the session runner."""
    if name == "canny":
        return canny(img, CannyParams(**params))
    if name == "color":
        return color_amplify(img, ColorParams(**params))
    if name in ("roi", "mask") and bbox is None:
        raise ValueError(f"tool {name!r} needs a bounding box")
    if name == "roi":
        return zoom_in(img, bbox, ZoomParams(**params))
    if name == "mask":
        return apply_mask(img, bbox)
    raise ValueError(f"unknown tool {name!r}")
