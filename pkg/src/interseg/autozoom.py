"""Adaptive region-of-interest inference around a pluggable segmenter.

Large objects cannot be predicted in one patch. The loop starts from an
ROI sized by the prompt, predicts on a downscaled view, and zooms out by
a fixed factor whenever predicted foreground piles up on an ROI face
that is not a volume boundary (up to a hard cap). The coarse mask is
then upscaled to native resolution and refined patch-by-patch with a
half-patch-stride sliding window ordered from most to least predicted
foreground, each refinement patch seeing the current composite as its
previous-prediction channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .prompts import PromptChannels
from .volcore import mask_bbox, resample


@dataclass
class ZoomConfig:
    patch: int = 192
    zoom_step: float = 1.5
    zoom_cap: float = 4.0
    border_threshold: int = 1000
    border_mode: str = "absolute"  # absolute | relative
    border_fraction: float = 0.2
    border_floor: int = 100
    scale_threshold_by_zoom: bool = False
    stride_fraction: float = 0.5
    plan_margin: int | None = None  # default: patch // 6

    def __post_init__(self) -> None:
        if self.patch < 1 or self.zoom_step <= 1.0 or self.zoom_cap < 1.0:
            raise ValueError("bad zoom configuration")
        if self.border_mode not in ("absolute", "relative"):
            raise ValueError(f"unknown border mode {self.border_mode!r}")
        if not 0.0 < self.stride_fraction <= 1.0:
            raise ValueError("stride fraction must be in (0, 1]")

    @property
    def margin(self) -> int:
        return self.plan_margin if self.plan_margin is not None else self.patch // 6


@dataclass
class Roi:
    """Axis-aligned region: origin, per-axis extent, and its zoom factor."""

    origin: tuple[int, int, int]
    extent: tuple[int, int, int]
    zoom: float

    @property
    def window(self) -> tuple[slice, ...]:
        return tuple(slice(o, o + n) for o, n in zip(self.origin, self.extent))


def zoom_ladder(cfg: ZoomConfig) -> list[float]:
    """Admissible zoom factors: step**k clamped at the cap."""
    out = [1.0]
    while out[-1] * cfg.zoom_step < cfg.zoom_cap:
        out.append(out[-1] * cfg.zoom_step)
    if out[-1] < cfg.zoom_cap:
        out.append(cfg.zoom_cap)
    return out


def _roi_at(
    zoom: float, center: np.ndarray, volume_shape: tuple[int, int, int], cfg: ZoomConfig
) -> Roi:
    side = math.ceil(cfg.patch * zoom)
    extent = np.minimum(side, np.asarray(volume_shape, dtype=np.int64))
    origin = np.rint(center - extent / 2.0).astype(np.int64)
    origin = np.clip(origin, 0, np.asarray(volume_shape) - extent)
    return Roi(
        origin=tuple(int(v) for v in origin),
        extent=tuple(int(v) for v in extent),
        zoom=float(zoom),
    )


def initial_roi(
    prompt_bbox: tuple[tuple[int, int], ...],
    patch: int,
    volume_shape: tuple[int, int, int],
    cfg: ZoomConfig | None = None,
) -> Roi:
    """Smallest admissible ROI holding the prompt plus a patch/6 border.

    Centered on the prompt, clamped to the volume. Prompts too large for
    the zoom cap get the capped ROI.
    """
    cfg = cfg or ZoomConfig(patch=patch)
    border = patch // 6
    need = max(hi - lo for lo, hi in prompt_bbox) + 2 * border
    ladder = zoom_ladder(cfg)
    zoom = ladder[-1]
    for factor in ladder:
        if math.ceil(patch * factor) >= need:
            zoom = factor
            break
    center = np.array([(lo + hi) / 2.0 for lo, hi in prompt_bbox])
    return _roi_at(zoom, center, volume_shape, cfg)


def needs_zoom_out(pred: np.ndarray, roi: Roi, volume_shape: tuple[int, int, int], cfg: ZoomConfig) -> bool:
    """True when enough predicted foreground sits on an expandable ROI face.

    Faces that coincide with the volume boundary are skipped (there is
    nothing beyond the image). The trigger is an absolute voxel count by
    default, or a relative fraction of the face area with a floor.
    """
    if pred.shape != roi.extent:
        raise ValueError(f"prediction shape {pred.shape} does not match ROI {roi.extent}")
    for axis in range(3):
        face_area = pred.size // pred.shape[axis]
        if cfg.border_mode == "absolute":
            threshold = float(cfg.border_threshold)
        else:
            threshold = max(float(cfg.border_floor), cfg.border_fraction * face_area)
        if cfg.scale_threshold_by_zoom:
            threshold *= roi.zoom**3
        for side in (0, 1):
            at_volume_edge = (
                roi.origin[axis] == 0
                if side == 0
                else roi.origin[axis] + roi.extent[axis] == volume_shape[axis]
            )
            if at_volume_edge:
                continue
            face = pred.take(-side, axis=axis)  # index 0 or -1
            if float(face.sum()) >= threshold:
                return True
    return False


@dataclass
class RefinementPlan:
    """Patch boxes covering the predicted foreground, most informative first."""

    boxes: list[tuple[int, int, int]] = field(default_factory=list)  # origins
    counts: list[int] = field(default_factory=list)
    patch: int = 192

    def __len__(self) -> int:
        return len(self.boxes)


def _tile_starts(lo: int, hi: int, patch: int, stride: int, limit: int) -> list[int]:
    span = hi - lo
    if limit <= patch:
        return [0]
    if span <= patch:
        starts = [lo]
    else:
        n = math.ceil((span - patch) / stride) + 1
        starts = [lo + k * stride for k in range(n)]
        starts[-1] = hi - patch  # force coverage of the far end
    return sorted({min(max(0, s), limit - patch) for s in starts})


def plan_refinement(
    coarse_pred: np.ndarray,
    patch: int,
    volume_shape: tuple[int, int, int],
    cfg: ZoomConfig | None = None,
) -> RefinementPlan:
    """Tile the predicted-foreground region with half-stride patch boxes.

    The foreground bounding box is inflated by a margin before tiling so
    upscaling artifacts just outside it still get refined. Boxes without
    any predicted foreground are dropped; the rest are ordered by
    contained foreground count, descending, ties by lexicographic origin.
    """
    cfg = cfg or ZoomConfig(patch=patch)
    plan = RefinementPlan(patch=patch)
    bbox = mask_bbox(coarse_pred)
    if bbox is None:
        return plan
    stride = max(1, int(round(patch * cfg.stride_fraction)))
    starts_per_axis = []
    for axis, (lo, hi) in enumerate(bbox):
        lo = max(0, lo - cfg.margin)
        hi = min(volume_shape[axis], hi + cfg.margin)
        starts_per_axis.append(_tile_starts(lo, hi, patch, stride, volume_shape[axis]))
    scored = []
    for x0 in starts_per_axis[0]:
        for y0 in starts_per_axis[1]:
            for z0 in starts_per_axis[2]:
                window = tuple(
                    slice(o, min(o + patch, n)) for o, n in zip((x0, y0, z0), volume_shape)
                )
                count = int(coarse_pred[window].sum())
                if count > 0:
                    scored.append((count, (x0, y0, z0)))
    scored.sort(key=lambda item: (-item[0], item[1]))
    plan.boxes = [origin for _, origin in scored]
    plan.counts = [count for count, _ in scored]
    return plan


@dataclass
class ZoomResult:
    mask: np.ndarray
    zooms: list[float]
    refinement_boxes: list[tuple[int, int, int]]
    coarse_pass: bool


def run_autozoom(
    segmenter,
    volume: np.ndarray,
    channels: PromptChannels,
    cfg: ZoomConfig | None = None,
    gt: np.ndarray | None = None,
) -> ZoomResult:
    """Full adaptive-ROI inference loop; returns the full-resolution mask.

    Predicts on the prompt-derived ROI (downscaled to the patch where it
    is larger), zooms out by the configured step while the prediction
    presses on expandable ROI faces, upscales the coarse mask to native
    resolution, and runs ordered sliding-window refinement whenever the
    coarse pass was downscaled.
    """
    cfg = cfg or ZoomConfig()
    shape = volume.shape
    bbox = channels.prompt_bbox()
    if bbox is None:
        if channels.prev_pred is not None and channels.prev_pred.any():
            bbox = mask_bbox(channels.prev_pred)
        else:
            bbox = tuple((0, n) for n in shape)
    ladder = zoom_ladder(cfg)
    start = initial_roi(bbox, cfg.patch, shape, cfg)
    idx = ladder.index(start.zoom)
    center = np.array([(lo + hi) / 2.0 for lo, hi in bbox])

    zooms: list[float] = []
    while True:
        roi = _roi_at(ladder[idx], center, shape, cfg)
        zooms.append(roi.zoom)
        downscaled = any(n > cfg.patch for n in roi.extent)
        target = tuple(min(n, cfg.patch) for n in roi.extent)
        needs_gt = getattr(segmenter, "requires_gt", False)
        if needs_gt and gt is None:
            raise ValueError("segmenter requires a reference mask")
        if downscaled:
            # materialize one channel at a time: full-resolution windows of
            # large ROIs would not fit in memory as a whole stack
            small = np.empty((channels.num_channels,) + target, dtype=np.float32)
            for c in range(channels.num_channels):
                window_ch = channels.materialize_channel(c, roi.origin, roi.extent)
                small[c] = resample(window_ch, target, "trilinear")
                del window_ch
            gt_patch = resample(gt[roi.window], target, "nearest") if needs_gt else None
            probs = segmenter.predict(small[0], small, gt_patch)
            pred_coarse = probs >= 0.5
            pred_roi = resample(pred_coarse, roi.extent, "nearest")
        else:
            stack = channels.materialize(roi.origin, roi.extent)
            gt_patch = gt[roi.window] if needs_gt else None
            probs = segmenter.predict(stack[0], stack, gt_patch)
            pred_roi = probs >= 0.5

        covers_volume = roi.extent == shape
        if (
            not covers_volume
            and idx + 1 < len(ladder)
            and needs_zoom_out(pred_roi, roi, shape, cfg)
        ):
            idx += 1
            continue
        break

    full = np.zeros(shape, dtype=bool)
    full[roi.window] = pred_roi
    if not downscaled:
        return ZoomResult(mask=full, zooms=zooms, refinement_boxes=[], coarse_pass=False)

    plan = plan_refinement(full, cfg.patch, shape, cfg)
    for origin in plan.boxes:
        window = tuple(slice(o, min(o + cfg.patch, n)) for o, n in zip(origin, shape))
        extent = tuple(w.stop - w.start for w in window)
        stack = channels.materialize(origin, extent, prev_pred_override=full[window])
        gt_patch = gt[window] if getattr(segmenter, "requires_gt", False) else None
        probs = segmenter.predict(stack[0], stack, gt_patch)
        full[window] = probs >= 0.5
    return ZoomResult(mask=full, zooms=zooms, refinement_boxes=plan.boxes, coarse_pass=True)
