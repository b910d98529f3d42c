"""Interaction geometry synthesis and multi-channel prompt state.

Channel layout (fixed): 0 image, 1 previous prediction, then one
positive/negative channel pair per prompt family: 2/3 points, 4/5
scribbles, 6/7 boxes and lassos (shared pair). When the 3D-box variant is
enabled, channels 8/9 carry positive/negative 3D boxes and the count
grows from 8 to 10.

Prompt channels are held as a list of rendered sparse records (origin +
cropped float values + a decay scale), not dense volumes, so channel
state for large volumes stays small. Materializing a window composes
records with voxel-wise max, which commutes exactly with the positive
decay factor, so the lazy representation is equivalent to the dense one.

Every follow-up interaction multiplies all existing prompt records by
``DECAY`` before the new geometry is rendered at full intensity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FN, ErrorComponent, compute_error_components, sample_slice, select_component
from .volcore import (
    SliceRef,
    directional_edt,
    edt,
    largest_component,
    mask_bbox,
    morphology,
    resample,
    skeletonize2d,
    warp2d,
)

DECAY = 0.9

CHANNEL_IMAGE = 0
CHANNEL_PREV_PRED = 1
BASE_CHANNELS = 8
VARIANT_CHANNELS = 10

CHANNEL_NAMES = (
    "image",
    "prev_pred",
    "point_pos",
    "point_neg",
    "scribble_pos",
    "scribble_neg",
    "boxlasso_pos",
    "boxlasso_neg",
    "box3d_pos",
    "box3d_neg",
)

_PAIR_BASE = {"point": 2, "scribble": 4, "bbox2d": 6, "lasso": 6, "bbox3d": 8}

POSITIVE = "positive"
NEGATIVE = "negative"

SIMULATED_KINDS = ("point", "scribble", "bbox2d", "lasso", "bbox3d")


def channel_for(kind: str, polarity: str, enable_box3d: bool = False) -> int:
    """Channel index receiving a rendered interaction of this kind/polarity."""
    if kind == "initial_mask":
        return CHANNEL_PREV_PRED
    if kind not in _PAIR_BASE:
        raise ValueError(f"unknown interaction kind {kind!r}")
    if kind == "bbox3d" and not enable_box3d:
        raise ValueError("3D bounding boxes require the variant channels to be enabled")
    if polarity not in (POSITIVE, NEGATIVE):
        raise ValueError(f"bad polarity {polarity!r}")
    return _PAIR_BASE[kind] + (polarity == NEGATIVE)


@dataclass
class Geometry:
    """Sparse rendered mask: a cropped array placed at `origin`."""

    origin: tuple[int, int, int]
    values: np.ndarray  # float32 render in [0, 1], or bool for seed cores

    @property
    def bbox(self) -> tuple[tuple[int, int], ...]:
        return tuple(
            (o, o + n) for o, n in zip(self.origin, self.values.shape)
        )

    def to_dense(self, shape: tuple[int, int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=self.values.dtype)
        window = tuple(slice(o, o + n) for o, n in zip(self.origin, self.values.shape))
        out[window] = self.values
        return out


@dataclass
class InteractionRecord:
    """One simulated user action, ready to render into its channel."""

    kind: str  # point | scribble | bbox2d | lasso | bbox3d | initial_mask
    polarity: str
    geometry: Geometry
    slice_ref: SliceRef | None = None
    seed_geometry: Geometry | None = None  # pre-deformation core, for checks
    skeleton_geometry: Geometry | None = None  # stroke centerline (scribbles)
    iteration: int = 0
    meta: dict = field(default_factory=dict)

    def summary(self) -> dict:
        """JSON-safe description (no arrays)."""
        out = {
            "kind": self.kind,
            "polarity": self.polarity,
            "iteration": self.iteration,
            "origin": [int(o) for o in self.geometry.origin],
            "extent": [int(n) for n in self.geometry.values.shape],
        }
        if self.slice_ref is not None:
            out["slice"] = {"axis": self.slice_ref.axis, "index": self.slice_ref.index}
        out.update({k: v for k, v in self.meta.items() if isinstance(v, (int, float, str, bool, list, tuple))})
        return out


@dataclass
class _Rendered:
    channel: int
    origin: tuple[int, int, int]
    values: np.ndarray  # float32
    scale: float = 1.0


def _window_overlap(origin, shape, win_origin, win_extent):
    """Slices into (record array, window array) for their overlap, or None."""
    rec_sl, win_sl = [], []
    for o, n, wo, wn in zip(origin, shape, win_origin, win_extent):
        lo = max(o, wo)
        hi = min(o + n, wo + wn)
        if hi <= lo:
            return None
        rec_sl.append(slice(lo - o, hi - o))
        win_sl.append(slice(lo - wo, hi - wo))
    return tuple(rec_sl), tuple(win_sl)


class PromptChannels:
    """Mutable per-session interaction state over one volume."""

    def __init__(
        self,
        image: np.ndarray,
        enable_box3d: bool = False,
        prev_pred: np.ndarray | None = None,
    ):
        if image.ndim != 3:
            raise ValueError(f"image must be 3D, got {image.shape}")
        self.image = image
        self.shape = image.shape
        self.enable_box3d = enable_box3d
        self.prev_pred = prev_pred
        self._records: list[_Rendered] = []
        self.interaction_count = 0

    @property
    def num_channels(self) -> int:
        return VARIANT_CHANNELS if self.enable_box3d else BASE_CHANNELS

    @property
    def records(self) -> tuple[_Rendered, ...]:
        return tuple(self._records)

    def decay(self, factor: float = DECAY) -> None:
        for rec in self._records:
            rec.scale *= factor

    def set_prev_pred(self, prediction: np.ndarray | None) -> None:
        if prediction is not None and prediction.shape != self.shape:
            raise ValueError("prediction shape does not match volume")
        self.prev_pred = prediction

    def add(self, record: InteractionRecord) -> None:
        """Render a record into its channel at full intensity (no decay)."""
        geo = record.geometry
        for o, n, dim in zip(geo.origin, geo.values.shape, self.shape):
            if o < 0 or o + n > dim:
                raise ValueError(f"geometry {geo.bbox} outside volume {self.shape}")
        if record.kind == "initial_mask":
            self.prev_pred = geo.to_dense(self.shape).astype(bool)
            return
        ch = channel_for(record.kind, record.polarity, self.enable_box3d)
        values = np.ascontiguousarray(geo.values, dtype=np.float32)
        self._records.append(_Rendered(channel=ch, origin=geo.origin, values=values))

    def apply_interaction(
        self, record: InteractionRecord, prediction: np.ndarray | None = None
    ) -> "PromptChannels":
        """Decay all prompt channels, render the record, update channel 1."""
        self.decay()
        self.add(record)
        if prediction is not None:
            self.set_prev_pred(prediction)
        self.interaction_count += 1
        return self

    def prompt_bbox(self) -> tuple[tuple[int, int], ...] | None:
        """Union bounding box of all rendered prompt geometry (None if bare)."""
        boxes = []
        for rec in self._records:
            nz = rec.values > 0
            sub = mask_bbox(nz)
            if sub is None:
                continue
            boxes.append(
                tuple((o + lo, o + hi) for o, (lo, hi) in zip(rec.origin, sub))
            )
        if not boxes:
            return None
        return tuple(
            (min(b[a][0] for b in boxes), max(b[a][1] for b in boxes)) for a in range(3)
        )

    def materialize(
        self,
        origin: tuple[int, int, int] = (0, 0, 0),
        extent: tuple[int, int, int] | None = None,
        prev_pred_override: np.ndarray | None = None,
    ) -> np.ndarray:
        """Dense (C, *extent) float32 window of the channel state.

        `prev_pred_override` substitutes channel 1 for this window only
        (used when feeding refinement patches the current composite).
        """
        extent = extent or self.shape
        window = tuple(slice(o, o + n) for o, n in zip(origin, extent))
        out = np.zeros((self.num_channels,) + tuple(extent), dtype=np.float32)
        out[CHANNEL_IMAGE] = self.image[window]
        prev = prev_pred_override if prev_pred_override is not None else self.prev_pred
        if prev is not None:
            if prev.shape == tuple(extent):
                out[CHANNEL_PREV_PRED] = prev.astype(np.float32)
            else:
                out[CHANNEL_PREV_PRED] = prev[window].astype(np.float32)
        for rec in self._records:
            ov = _window_overlap(rec.origin, rec.values.shape, origin, extent)
            if ov is None:
                continue
            rec_sl, win_sl = ov
            target = out[rec.channel]
            scaled = rec.values[rec_sl] * np.float32(rec.scale)
            np.maximum(target[win_sl], scaled, out=target[win_sl])
        return out

    def materialize_channel(
        self,
        channel: int,
        origin: tuple[int, int, int] = (0, 0, 0),
        extent: tuple[int, int, int] | None = None,
        prev_pred_override: np.ndarray | None = None,
    ) -> np.ndarray:
        """One dense float32 channel window (memory-friendly materialize)."""
        extent = extent or self.shape
        window = tuple(slice(o, o + n) for o, n in zip(origin, extent))
        if channel == CHANNEL_IMAGE:
            return self.image[window].astype(np.float32)
        if channel == CHANNEL_PREV_PRED:
            prev = prev_pred_override if prev_pred_override is not None else self.prev_pred
            if prev is None:
                return np.zeros(tuple(extent), dtype=np.float32)
            if prev.shape == tuple(extent):
                return prev.astype(np.float32)
            return prev[window].astype(np.float32)
        out = np.zeros(tuple(extent), dtype=np.float32)
        for rec in self._records:
            if rec.channel != channel:
                continue
            ov = _window_overlap(rec.origin, rec.values.shape, origin, extent)
            if ov is None:
                continue
            rec_sl, win_sl = ov
            scaled = rec.values[rec_sl] * np.float32(rec.scale)
            np.maximum(out[win_sl], scaled, out=out[win_sl])
        return out

    def peak_intensity(self, record_index: int) -> float:
        """Current decayed peak value of the record added at `record_index`."""
        rec = self._records[record_index]
        return float(rec.values.max() * np.float32(rec.scale))

    def export_raw(self, basepath) -> tuple:
        """Write the full channel state for segmenter plug-ins.

        Produces ``basepath.bin`` (all channels as float32, x-fastest,
        channel-major) and ``basepath.json`` describing shape and
        channel names.
        """
        import json
        from pathlib import Path

        basepath = Path(basepath)
        bin_path = basepath.with_suffix(".bin")
        with open(bin_path, "wb") as fh:
            for c in range(self.num_channels):
                channel = self.materialize_channel(c)
                fh.write(np.asfortranarray(channel).tobytes(order="F"))
        descriptor = {
            "shape": list(self.shape),
            "channels": self.num_channels,
            "channel_names": list(CHANNEL_NAMES[: self.num_channels]),
            "dtype": "float32",
            "order": "x-fastest",
        }
        json_path = basepath.with_suffix(".json")
        json_path.write_text(json.dumps(descriptor, sort_keys=True) + "\n")
        return bin_path, json_path


def apply_interaction(
    state: PromptChannels, record: InteractionRecord, prediction: np.ndarray | None = None
) -> PromptChannels:
    return state.apply_interaction(record, prediction)


def render_record_channels(
    record: InteractionRecord, shape: tuple[int, int, int], enable_box3d: bool = False
) -> np.ndarray:
    """Prompt-channel block (channels 2..C-1) holding just this record."""
    channels = PromptChannels(np.zeros(shape, dtype=np.float32), enable_box3d=enable_box3d)
    channels.add(record)
    return channels.materialize()[2:]


# ---------------------------------------------------------------------------
# point interactions


def point_probabilities(mask: np.ndarray, alpha: float) -> np.ndarray:
    """Sampling law over a component: p(x) = D(x)^alpha / sum D(z)^alpha.

    D is the normalized distance transform, so alpha = 1 is proportional
    to interiorness and large alpha concentrates on the most central
    voxels. Returned as a dense field that is zero off the mask.
    """
    dist = edt(mask, normalize=True)
    weights = np.where(mask, dist, 0.0) ** alpha
    total = weights.sum()
    if total <= 0:
        # degenerate single-voxel-ish component: uniform over the mask
        weights = mask.astype(np.float64)
        total = weights.sum()
    return weights / total


def sample_point_location(
    mask: np.ndarray,
    alpha: float,
    rng: np.random.Generator,
    probs: np.ndarray | None = None,
) -> tuple[int, ...]:
    """Draw one voxel of the mask under the alpha law.

    Without precomputed probabilities the law is evaluated on the mask's
    bounding-box crop (identical distribution, volume-sized masks stay
    cheap).
    """
    if probs is not None:
        flat = int(rng.choice(probs.size, p=probs.ravel()))
        return tuple(int(i) for i in np.unravel_index(flat, mask.shape))
    bbox = mask_bbox(mask)
    if bbox is None:
        raise ValueError("cannot sample a point from an empty mask")
    window = tuple(slice(lo, hi) for lo, hi in bbox)
    # one background ring wherever the box is strictly inside the grid:
    # nearest-background distances inside the crop then equal the
    # full-grid distances exactly (the nearest outside-the-box background
    # voxel is always the face projection, one step beyond)
    pads = [
        (1 if lo > 0 else 0, 1 if hi < n else 0)
        for (lo, hi), n in zip(bbox, mask.shape)
    ]
    crop = np.pad(mask[window], pads)
    p = point_probabilities(crop, alpha)
    flat = int(rng.choice(p.size, p=p.ravel()))
    local = np.unravel_index(flat, crop.shape)
    return tuple(
        int(i - before + lo)
        for i, (before, _), (lo, _) in zip(local, pads, bbox)
    )


def render_soft_ball(
    center: tuple[int, int, int], radius: int, shape: tuple[int, int, int]
) -> Geometry:
    """Ball of `radius` as a soft mask: normalized EDT, 1.0 at the center."""
    r = int(radius)
    side = 2 * r + 3  # one-voxel background ring so distances are exact
    axes = np.indices((side,) * 3) - (r + 1)
    ball = (axes.astype(np.int64) ** 2).sum(axis=0) <= r * r
    soft = edt(ball, normalize=True).astype(np.float32)
    origin = [c - (r + 1) for c in center]
    lo = [max(0, -o) for o in origin]
    hi = [
        side - max(0, (o + side) - dim) for o, dim in zip(origin, shape)
    ]
    trimmed = soft[tuple(slice(a, b) for a, b in zip(lo, hi))]
    return Geometry(
        origin=tuple(max(0, o) for o in origin), values=np.ascontiguousarray(trimmed)
    )


def simulate_point(
    component: ErrorComponent,
    rng: np.random.Generator,
    alpha: float = 8,
    radius: int = 4,
    polarity: str = POSITIVE,
    iteration: int = 0,
) -> InteractionRecord:
    """Sample a location by the alpha law and expand it into a soft sphere."""
    if radius < 1:
        raise ValueError("point radius must be >= 1")
    location = sample_point_location(component.mask, alpha, rng)
    geometry = render_soft_ball(location, radius, component.mask.shape)
    seed = Geometry(origin=location, values=np.ones((1, 1, 1), dtype=bool))
    return InteractionRecord(
        kind="point",
        polarity=polarity,
        geometry=geometry,
        seed_geometry=seed,
        iteration=iteration,
        meta={"location": list(location), "alpha": alpha, "radius": radius},
    )


# ---------------------------------------------------------------------------
# box interactions


def _augment_box(
    lo: np.ndarray,
    hi: np.ndarray,
    bounds: tuple[int, ...],
    rng: np.random.Generator,
    uniform_scale_prob: float = 0.3,
):
    """Jitter each boundary, shift, scale (shared with prob 0.3), clamp."""
    ndim = len(bounds)
    d = (hi - lo).astype(np.float64)
    jitter_lo = rng.uniform(-0.05, 0.05, ndim) * d
    jitter_hi = rng.uniform(-0.05, 0.05, ndim) * d
    shift = rng.uniform(-0.05, 0.05, ndim) * d
    a = lo + jitter_lo + shift
    b = hi + jitter_hi + shift
    uniform_scale = bool(rng.uniform() < uniform_scale_prob)
    if uniform_scale:
        s = np.full(ndim, rng.uniform(0.8, 1.2))
    else:
        s = rng.uniform(0.8, 1.2, ndim)
    center = (a + b) / 2.0
    half = (b - a) / 2.0 * s
    a, b = center - half, center + half
    lo_i = np.clip(np.floor(a + 0.5).astype(np.int64), 0, np.asarray(bounds))
    hi_i = np.clip(np.floor(b + 0.5).astype(np.int64), 0, np.asarray(bounds))
    meta = {
        "scale": [float(v) for v in s],
        "uniform_scale": uniform_scale,
        "jitter_lo": [float(v) for v in jitter_lo],
        "jitter_hi": [float(v) for v in jitter_hi],
        "shift": [float(v) for v in shift],
    }
    return lo_i, hi_i, meta


def _tight_box(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    bbox = mask_bbox(mask)
    if bbox is None:
        raise ValueError("cannot box an empty mask")
    return (
        np.array([lo for lo, _ in bbox], dtype=np.int64),
        np.array([hi for _, hi in bbox], dtype=np.int64),
    )


def _default_slice(mask2d: np.ndarray):
    return SliceRef(axis=2, index=0), (mask2d.shape[0], mask2d.shape[1], 1)


def _slice_record(
    kind: str,
    polarity: str,
    render2d: np.ndarray,
    seed2d: np.ndarray | None,
    slice_ref: SliceRef,
    volume_shape: tuple[int, int, int],
    iteration: int,
    meta: dict,
    skeleton2d: np.ndarray | None = None,
) -> InteractionRecord:
    """Wrap a 2D render as a one-voxel-thick 3D record on its slice."""

    def embed(arr2d: np.ndarray) -> Geometry | None:
        nz = mask_bbox(arr2d > 0 if arr2d.dtype != bool else arr2d)
        if nz is None:
            return None
        (i0, i1), (j0, j1) = nz
        crop = arr2d[i0:i1, j0:j1]
        plane_origin = [i0, j0]
        origin = plane_origin[: slice_ref.axis] + [slice_ref.index] + plane_origin[slice_ref.axis :]
        shape3 = list(crop.shape)
        shape3.insert(slice_ref.axis, 1)
        return Geometry(origin=tuple(origin), values=crop.reshape(shape3))

    geometry = embed(render2d.astype(np.float32))
    if geometry is None:
        raise ValueError("refusing to build a record with empty geometry")
    seed = embed(seed2d.astype(bool)) if seed2d is not None else None
    skeleton = embed(skeleton2d.astype(bool)) if skeleton2d is not None else None
    return InteractionRecord(
        kind=kind,
        polarity=polarity,
        geometry=geometry,
        slice_ref=slice_ref,
        seed_geometry=seed,
        skeleton_geometry=skeleton,
        iteration=iteration,
        meta=meta,
    )


def simulate_bbox2d(
    slice_mask: np.ndarray,
    rng: np.random.Generator,
    slice_ref: SliceRef | None = None,
    volume_shape: tuple[int, int, int] | None = None,
    polarity: str = POSITIVE,
    iteration: int = 0,
) -> InteractionRecord:
    """Tight 2D box around the slice error region, randomly augmented.

    A box that degenerates after clamping is re-augmented once, then
    falls back to the unaugmented tight box.
    """
    slice_mask = np.asarray(slice_mask, dtype=bool)
    if slice_ref is None:
        slice_ref, volume_shape = _default_slice(slice_mask)
    lo, hi = _tight_box(slice_mask)
    meta = {}
    for _ in range(2):
        a, b, meta = _augment_box(lo, hi, slice_mask.shape, rng)
        if (b - a > 0).all():
            break
    else:
        a, b, meta = lo, hi, {"scale": [1.0, 1.0], "uniform_scale": True, "fallback": True}
    render = np.zeros(slice_mask.shape, dtype=np.float32)
    render[a[0] : b[0], a[1] : b[1]] = 1.0
    meta["box"] = [[int(v) for v in a], [int(v) for v in b]]
    return _slice_record(
        "bbox2d", polarity, render, slice_mask, slice_ref, volume_shape, iteration, meta
    )


def simulate_bbox3d(
    component: ErrorComponent,
    rng: np.random.Generator,
    enabled: bool = True,
    polarity: str = POSITIVE,
    iteration: int = 0,
) -> InteractionRecord:
    """Tight 3D box with the 2D augmentation laws applied per axis."""
    if not enabled:
        raise ValueError("3D bounding box variant is disabled")
    shape = component.mask.shape
    lo, hi = _tight_box(component.mask)
    meta = {}
    for _ in range(2):
        a, b, meta = _augment_box(lo, hi, shape, rng)
        if (b - a > 0).all():
            break
    else:
        a, b, meta = lo, hi, {"scale": [1.0] * 3, "uniform_scale": True, "fallback": True}
    extent = tuple(int(n) for n in (b - a))
    geometry = Geometry(
        origin=tuple(int(v) for v in a), values=np.ones(extent, dtype=np.float32)
    )
    (si, sj), (sk, sl), (sm, sn) = component.bbox
    seed = Geometry(
        origin=(si, sk, sm),
        values=np.ascontiguousarray(component.mask[si:sj, sk:sl, sm:sn]),
    )
    meta["box"] = [[int(v) for v in a], [int(v) for v in b]]
    return InteractionRecord(
        kind="bbox3d",
        polarity=polarity,
        geometry=geometry,
        seed_geometry=seed,
        iteration=iteration,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# deformation fields


def smooth_displacement2d(
    shape: tuple[int, int],
    caps: tuple[float, float],
    rng: np.random.Generator,
    grid_step: int = 8,
) -> np.ndarray:
    """Low-resolution Gaussian vectors, smoothly upsampled, then scaled so
    the per-axis maximum magnitude equals the given cap exactly."""
    grid = tuple(max(2, -(-n // grid_step) + 1) for n in shape)
    coarse = rng.standard_normal(grid + (2,))
    out = np.zeros(shape + (2,), dtype=np.float64)
    for axis in range(2):
        comp = resample(coarse[..., axis], shape, "trilinear")
        peak = np.abs(comp).max()
        if peak > 0:
            comp = comp * (caps[axis] / peak)
        out[..., axis] = comp
    return out


def smooth_displacement3d(
    shape: tuple[int, int, int],
    scale: float,
    rng: np.random.Generator,
    grid_step: int = 8,
) -> np.ndarray:
    """3D elastic field: coarse Gaussian vectors times `scale`, upsampled."""
    grid = tuple(max(2, -(-n // grid_step) + 1) for n in shape)
    coarse = rng.standard_normal(grid + (3,)) * scale
    out = np.zeros(shape + (3,), dtype=np.float32)
    for axis in range(3):
        out[..., axis] = resample(coarse[..., axis], shape, "trilinear")
    return out


def warp3d_nearest(mask: np.ndarray, displacement: np.ndarray) -> np.ndarray:
    """Backward 3D warp with nearest sampling; out-of-bounds reads background."""
    idx = np.indices(mask.shape)
    src = [
        np.floor(idx[a] + displacement[..., a] + 0.5).astype(np.int64) for a in range(3)
    ]
    inside = np.ones(mask.shape, dtype=bool)
    for a in range(3):
        inside &= (src[a] >= 0) & (src[a] < mask.shape[a])
    out = np.zeros_like(mask, dtype=bool)
    out[inside] = mask[src[0][inside], src[1][inside], src[2][inside]]
    return out


def _dedt_medians(slice_mask: np.ndarray) -> tuple[float, tuple[float, float]]:
    """Median directional EDT over the mask: overall and per axis."""
    dedt = directional_edt(slice_mask)
    inside = slice_mask.astype(bool)
    per_axis = tuple(float(np.median(dedt[a][inside])) for a in range(2))
    overall = float(np.median(dedt[:, inside]))
    return overall, per_axis


# ---------------------------------------------------------------------------
# lasso


def simulate_lasso(
    slice_mask: np.ndarray,
    rng: np.random.Generator,
    slice_ref: SliceRef | None = None,
    volume_shape: tuple[int, int, int] | None = None,
    polarity: str = POSITIVE,
    iteration: int = 0,
    deform: bool = True,
) -> InteractionRecord:
    """Loose enclosure of the slice error region.

    Closing and dilation radii scale with the directional-EDT median of
    the mask, so the enclosure adapts to object size; the warp magnitude
    is capped at a quarter of the per-axis median. The output is the
    largest connected region of the warped enclosure.
    """
    slice_mask = np.asarray(slice_mask, dtype=bool)
    if not slice_mask.any():
        raise ValueError("lasso needs a nonempty slice mask")
    if slice_ref is None:
        slice_ref, volume_shape = _default_slice(slice_mask)
    m_all, m_axis = _dedt_medians(slice_mask)
    r_close = max(1, round(0.15 * m_all))
    r_dilate = max(1, round(0.1 * m_all))
    coarse = morphology(morphology(slice_mask, "close", r_close), "dilate", r_dilate)
    out = coarse
    if deform:
        caps = (0.25 * m_axis[0], 0.25 * m_axis[1])
        fld = smooth_displacement2d(slice_mask.shape, caps, rng)
        warped = warp2d(coarse, fld)
        if warped.any():
            out = largest_component(warped, 8)
    meta = {"r_close": r_close, "r_dilate": r_dilate, "dedt_median": m_all}
    return _slice_record(
        "lasso", polarity, out.astype(np.float32), slice_mask, slice_ref, volume_shape, iteration, meta
    )


# ---------------------------------------------------------------------------
# scribbles

SCRIBBLE_KINDS = ("center", "line", "contour")


def _line_pixels(p0, p1, shape) -> np.ndarray:
    n = int(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]))) + 1
    ii = np.floor(np.linspace(p0[0], p1[0], n) + 0.5).astype(np.int64)
    jj = np.floor(np.linspace(p0[1], p1[1], n) + 0.5).astype(np.int64)
    out = np.zeros(shape, dtype=bool)
    out[ii, jj] = True
    return out


def _truncate(core: np.ndarray, rng: np.random.Generator, min_keep: float = 0.25) -> np.ndarray:
    """Keep a random sub-range of the scribble extent along each axis."""
    out = core
    for axis in range(2):
        bbox = mask_bbox(out)
        if bbox is None:
            return out
        lo, hi = bbox[axis]
        span = hi - lo
        keep = rng.uniform(min_keep, 1.0) * span
        start = lo + rng.uniform(0.0, span - keep)
        idx = np.arange(out.shape[axis])
        inside = (idx >= start) & (idx <= start + keep)
        shape = [1, 1]
        shape[axis] = out.shape[axis]
        out = out & inside.reshape(shape)
    return out


def _contour_core(slice_mask: np.ndarray, erode_radius: int) -> np.ndarray:
    eroded = morphology(slice_mask, "erode", erode_radius)
    if not eroded.any() and erode_radius > 1:
        eroded = morphology(slice_mask, "erode", 1)
    if not eroded.any():
        eroded = slice_mask
    return eroded & ~morphology(eroded, "erode", 1)


def simulate_scribble(
    slice_mask: np.ndarray,
    rng: np.random.Generator,
    kind: str | None = None,
    width: int = 3,
    slice_ref: SliceRef | None = None,
    volume_shape: tuple[int, int, int] | None = None,
    polarity: str = POSITIVE,
    iteration: int = 0,
    deform: bool = True,
    truncate: bool = True,
    erode_radius: int | None = None,
) -> InteractionRecord:
    """Center, line, or contour scribble with fixed stroke width.

    Center scribbles are the truncated skeleton; line scribbles connect
    two random mask pixels; contour scribbles trace the truncated border
    of the eroded mask. After the optional structured deformation the
    stroke is re-thinned and dilated to the requested width. Truncations
    that erase the scribble are redrawn up to three times, then skipped.
    """
    slice_mask = np.asarray(slice_mask, dtype=bool)
    if not slice_mask.any():
        raise ValueError("scribble needs a nonempty slice mask")
    if width < 1:
        raise ValueError("scribble width must be >= 1")
    if slice_ref is None:
        slice_ref, volume_shape = _default_slice(slice_mask)
    if kind is None:
        kind = SCRIBBLE_KINDS[int(rng.integers(len(SCRIBBLE_KINDS)))]
    if kind not in SCRIBBLE_KINDS:
        raise ValueError(f"unknown scribble kind {kind!r}")

    m_all, m_axis = _dedt_medians(slice_mask)
    meta: dict = {"scribble_kind": kind, "width": width}
    endpoints = None
    if kind == "center":
        base = skeletonize2d(slice_mask)
    elif kind == "contour":
        r_e = erode_radius if erode_radius is not None else max(1, round(0.1 * m_all))
        base = _contour_core(slice_mask, r_e)
        meta["erode_radius"] = r_e
    else:  # line
        pts = np.argwhere(slice_mask)
        i0 = int(rng.integers(len(pts)))
        i1 = int(rng.integers(len(pts)))
        for _ in range(3):
            if i1 != i0 or len(pts) == 1:
                break
            i1 = int(rng.integers(len(pts)))
        endpoints = (tuple(int(v) for v in pts[i0]), tuple(int(v) for v in pts[i1]))
        base = _line_pixels(pts[i0], pts[i1], slice_mask.shape)
        meta["endpoints"] = [list(endpoints[0]), list(endpoints[1])]

    core = base
    if truncate and kind in ("center", "contour"):
        for _ in range(3):
            candidate = _truncate(base, rng)
            if candidate.any():
                core = candidate
                break
        else:
            core = base

    warped = core
    if deform:
        caps = (0.25 * m_axis[0], 0.25 * m_axis[1])
        fld = smooth_displacement2d(slice_mask.shape, caps, rng)
        moved = warp2d(core, fld)
        if moved.any():
            warped = moved

    skeleton = skeletonize2d(warped)
    if not skeleton.any():
        skeleton = warped
    stroke = morphology(skeleton, "dilate", (width - 1) // 2) if width > 1 else skeleton

    if kind == "line":
        seed = np.zeros_like(slice_mask)
        seed[endpoints[0]] = True
        seed[endpoints[1]] = True
    else:
        seed = core
    return _slice_record(
        "scribble", polarity, stroke.astype(np.float32), seed, slice_ref,
        volume_shape, iteration, meta, skeleton2d=skeleton,
    )


# ---------------------------------------------------------------------------
# malformed initial segmentations


def generate_malformed_segmentation(
    gt_mask: np.ndarray,
    rng: np.random.Generator,
    cutoff_prob: float = 0.5,
    deform_scale: float = 4.0,
    grid_step: int = 8,
) -> np.ndarray:
    """Plausibly wrong version of a reference mask.

    Elastic warp, then one random morphology op (radius 1-2), then with
    `cutoff_prob` per axis all voxels beyond a random plane are cleared.
    The plane is drawn from the middle half of the object's bounding box
    (a patch-border cut removes part of the object, never almost all of
    it). May still return an empty mask; callers handle that.
    """
    gt_mask = np.asarray(gt_mask, dtype=bool)
    if not gt_mask.any():
        raise ValueError("reference mask must be nonempty")
    fld = smooth_displacement3d(gt_mask.shape, deform_scale, rng, grid_step)
    out = warp3d_nearest(gt_mask, fld)
    op = ("erode", "dilate", "open", "close")[int(rng.integers(4))]
    radius = int(rng.integers(1, 3))
    out = morphology(out, op, radius)
    for axis in range(3):
        if rng.uniform() >= cutoff_prob:
            continue
        bbox = mask_bbox(out)
        if bbox is None:
            break
        lo, hi = bbox[axis]
        span = hi - lo
        p_lo, p_hi = lo + span // 4, hi - span // 4
        if p_hi <= p_lo:
            p_lo, p_hi = lo, hi
        plane = int(rng.integers(p_lo, p_hi))
        high_side = rng.uniform() < 0.5
        idx = np.arange(out.shape[axis])
        cut = idx > plane if high_side else idx < plane
        shape = [1, 1, 1]
        shape[axis] = out.shape[axis]
        out = out & ~cut.reshape(shape)
    return out


# ---------------------------------------------------------------------------
# one full refinement-prompt step (shared by the bench loop and the bridge)


def simulate_for_kind(
    component: ErrorComponent,
    kind: str,
    rng: np.random.Generator,
    polarity: str,
    iteration: int = 0,
    alpha: float = 8,
    point_radius: int = 4,
    scribble_width: int = 3,
    enable_box3d: bool = False,
) -> InteractionRecord:
    """Simulate one interaction of the given kind against a component."""
    if kind == "point":
        return simulate_point(
            component, rng, alpha=alpha, radius=point_radius, polarity=polarity, iteration=iteration
        )
    if kind == "bbox3d":
        return simulate_bbox3d(
            component, rng, enabled=enable_box3d, polarity=polarity, iteration=iteration
        )
    if kind in ("bbox2d", "lasso", "scribble"):
        ref = sample_slice(component, rng)
        slice_mask = component.slice_mask(ref)
        shape = component.mask.shape
        if kind == "bbox2d":
            return simulate_bbox2d(slice_mask, rng, ref, shape, polarity, iteration)
        if kind == "lasso":
            return simulate_lasso(slice_mask, rng, ref, shape, polarity, iteration)
        return simulate_scribble(
            slice_mask, rng, width=scribble_width, slice_ref=ref,
            volume_shape=shape, polarity=polarity, iteration=iteration,
        )
    raise ValueError(f"unknown interaction kind {kind!r}")


def simulate_refinement_prompt(
    gt: np.ndarray,
    pred: np.ndarray,
    kind: str,
    rng: np.random.Generator,
    iteration: int = 0,
    alpha: float = 8,
    point_radius: int = 4,
    scribble_width: int = 3,
    enable_box3d: bool = False,
    min_size: int = 1,
) -> InteractionRecord | None:
    """One refinement step: pick an error component and simulate a prompt.

    Components from a false-negative region produce positive prompts,
    false positives produce negative ones. Box-family kinds fragment the
    error masks first. Returns None when prediction and reference agree.
    """
    fragment = kind in ("bbox2d", "lasso", "bbox3d")
    components = compute_error_components(
        gt, pred, fragment=fragment, rng=rng, min_size=min_size
    )
    if not components:
        return None
    component = select_component(components, rng)
    polarity = POSITIVE if component.kind == FN else NEGATIVE
    return simulate_for_kind(
        component, kind, rng, polarity, iteration,
        alpha=alpha, point_radius=point_radius,
        scribble_width=scribble_width, enable_box3d=enable_box3d,
    )
