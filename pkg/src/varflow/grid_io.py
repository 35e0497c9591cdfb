"""Grid-borne value types and their on-disk formats.

Centralizes every byte-level format so other modules never touch struct
packing directly:

* ``.flo``  -- Middlebury flow interchange: float32 magic ``202021.25``,
  int32 width, int32 height, then ``height*width`` interleaved (u, v)
  float32 pairs, row-major, all little-endian.
* ``F32M``  -- plain float32 raster container: ASCII magic ``F32M``,
  uint32 width/height/channels, then ``width*height*channels`` float32
  values, row-major with channels interleaved, little-endian.
* PNG      -- color-wheel rendering of a flow field (hue = direction,
  saturation = magnitude) and 8-bit grayscale/RGB input images.

Unknown or invalid flow pixels are expressed as confidence 0 in a
companion map, never as sentinel values inside a FlowField, so every
field is finite by construction.
"""

import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    IoFailure,
    NonPositiveDims,
    NonPositiveValue,
    Truncated,
    VarflowError,
)

FLO_MAGIC = 202021.25
F32M_MAGIC = b"F32M"


def _check_grid(name, arr):
    if arr.ndim != 2:
        raise NonPositiveDims(f"{name}: expected a 2D grid, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise NonPositiveDims(f"{name}: empty grid {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise VarflowError(f"{name}: non-finite entries")


@dataclass
class FlowField:
    """Per-pixel 2-component motion (u0 horizontal, u1 vertical), pixels/frame.

    Arrays are indexed ``[y, x]``; width is ``shape[1]``, height ``shape[0]``.
    """

    u0: np.ndarray
    u1: np.ndarray

    def __post_init__(self):
        self.u0 = np.asarray(self.u0)
        self.u1 = np.asarray(self.u1)
        _check_grid("u0", self.u0)
        _check_grid("u1", self.u1)
        if self.u0.shape != self.u1.shape:
            raise NonPositiveDims(
                f"flow channels disagree: {self.u0.shape} vs {self.u1.shape}"
            )

    @property
    def width(self):
        return self.u0.shape[1]

    @property
    def height(self):
        return self.u0.shape[0]

    @classmethod
    def zeros(cls, width, height, dtype=np.float32):
        return cls(np.zeros((height, width), dtype), np.zeros((height, width), dtype))

    def astype(self, dtype):
        return FlowField(self.u0.astype(dtype), self.u1.astype(dtype))


@dataclass
class ConfidenceMap:
    """Per-pixel data-term weight in [0, 1]."""

    c: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c)
        _check_grid("c", self.c)
        if self.c.min() < 0.0 or self.c.max() > 1.0:
            raise VarflowError("confidence outside [0, 1]")

    @property
    def width(self):
        return self.c.shape[1]

    @property
    def height(self):
        return self.c.shape[0]


@dataclass
class DiffusionTensor:
    """Per-pixel diagonal regularization weights in [0, 1]^2.

    ``w0`` weighs horizontal differences, ``w1`` vertical ones.
    """

    w0: np.ndarray
    w1: np.ndarray

    def __post_init__(self):
        self.w0 = np.asarray(self.w0)
        self.w1 = np.asarray(self.w1)
        _check_grid("w0", self.w0)
        _check_grid("w1", self.w1)
        if self.w0.shape != self.w1.shape:
            raise NonPositiveDims(
                f"tensor channels disagree: {self.w0.shape} vs {self.w1.shape}"
            )
        for name, arr in (("w0", self.w0), ("w1", self.w1)):
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise VarflowError(f"{name} outside [0, 1]")

    @property
    def width(self):
        return self.w0.shape[1]

    @property
    def height(self):
        return self.w0.shape[0]

    @classmethod
    def ones(cls, width, height, dtype=np.float64):
        return cls(np.ones((height, width), dtype), np.ones((height, width), dtype))


@dataclass
class ScalarMap:
    """Generic per-pixel, per-channel real raster of shape (height, width, channels)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        if self.values.ndim != 3:
            raise NonPositiveDims(f"expected (H, W, C), got shape {self.values.shape}")
        if min(self.values.shape) < 1:
            raise NonPositiveDims(f"empty map {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise VarflowError("map holds non-finite entries")

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def channels(self):
        return self.values.shape[2]


# ---------------------------------------------------------------------------
# .flo
# ---------------------------------------------------------------------------


def read_flo(path):
    """Read a Middlebury .flo file into a float32 FlowField."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(blob) < 12:
        raise Truncated(f"{path}: {len(blob)} bytes, header needs 12")
    magic = struct.unpack("<f", blob[:4])[0]
    if magic != FLO_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} != {FLO_MAGIC}")
    width, height = struct.unpack("<ii", blob[4:12])
    if width < 1 or height < 1:
        raise NonPositiveDims(f"{path}: {width}x{height}")
    expected = 12 + 8 * width * height
    if len(blob) != expected:
        raise Truncated(f"{path}: {len(blob)} bytes, expected {expected}")
    data = np.frombuffer(blob, dtype="<f4", offset=12).reshape(height, width, 2)
    return FlowField(data[:, :, 0].copy(), data[:, :, 1].copy())


def write_flo(flow, path):
    """Write a FlowField as Middlebury .flo (float32, little-endian)."""
    if not isinstance(flow, FlowField):
        flow = FlowField(*flow)
    data = np.stack(
        [flow.u0.astype("<f4"), flow.u1.astype("<f4")], axis=-1
    )
    try:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<f", FLO_MAGIC))
            fh.write(struct.pack("<ii", flow.width, flow.height))
            fh.write(data.tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


# ---------------------------------------------------------------------------
# F32M
# ---------------------------------------------------------------------------


def read_map(path):
    """Read an F32M container into a float32 ScalarMap."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(blob) < 16:
        raise Truncated(f"{path}: {len(blob)} bytes, header needs 16")
    if blob[:4] != F32M_MAGIC:
        raise BadMagic(f"{path}: magic {blob[:4]!r} != {F32M_MAGIC!r}")
    width, height, channels = struct.unpack("<III", blob[4:16])
    if width < 1 or height < 1 or channels < 1:
        raise NonPositiveDims(f"{path}: {width}x{height}x{channels}")
    expected = 16 + 4 * width * height * channels
    if len(blob) != expected:
        raise Truncated(f"{path}: {len(blob)} bytes, expected {expected}")
    data = np.frombuffer(blob, dtype="<f4", offset=16)
    return ScalarMap(data.reshape(height, width, channels).copy())


def write_map(smap, path):
    """Write a ScalarMap as an F32M container."""
    if not isinstance(smap, ScalarMap):
        smap = ScalarMap(smap)
    try:
        with open(path, "wb") as fh:
            fh.write(F32M_MAGIC)
            fh.write(struct.pack("<III", smap.width, smap.height, smap.channels))
            fh.write(smap.values.astype("<f4").tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------


def _hsv_to_rgb(h, s, v):
    # h, s, v float arrays in [0, 1); standard sextant conversion
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return r, g, b


def flow_to_png(flow, max_magnitude):
    """Render a flow field as PNG bytes: hue = direction, saturation = |u|.

    Zero motion renders white; magnitudes >= max_magnitude are fully
    saturated.  The encoding is deterministic: identical fields yield
    byte-identical PNGs.
    """
    from PIL import Image

    if max_magnitude <= 0:
        raise NonPositiveValue(f"max_magnitude must be > 0, got {max_magnitude}")
    if not isinstance(flow, FlowField):
        flow = FlowField(*flow)
    u0 = flow.u0.astype(np.float64)
    u1 = flow.u1.astype(np.float64)
    mag = np.sqrt(u0 * u0 + u1 * u1)
    hue = (np.arctan2(u1, u0) / (2.0 * np.pi)) % 1.0
    sat = np.minimum(1.0, mag / float(max_magnitude))
    r, g, b = _hsv_to_rgb(hue, sat, np.ones_like(sat))
    rgb = np.stack([r, g, b], axis=-1)
    img = Image.fromarray(np.clip(rgb * 255.0 + 0.5, 0, 255).astype(np.uint8), "RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def read_png_gray(path):
    """Load an 8-bit PNG as a single-channel ScalarMap scaled to [0, 1]."""
    from PIL import Image

    try:
        with Image.open(path) as img:
            gray = img.convert("L")
            arr = np.asarray(gray, dtype=np.float64) / 255.0
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return ScalarMap(arr)
