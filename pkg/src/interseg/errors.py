"""Correction targets: FP/FN regions, fragmentation, and slice sampling.

A refinement step corrects one connected error region. False positives
are voxels predicted but absent from the reference; false negatives the
reverse. Box-style prompts additionally fragment the error masks with
thresholded gradient noise first, so long thin border ribbons do not
dominate the draw.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volcore import SliceRef, connected_components, mask_bbox, perlin3d

FP = "FP"
FN = "FN"


@dataclass
class ErrorComponent:
    """One connected FP or FN region selected for correction."""

    kind: str  # FP | FN
    mask: np.ndarray  # bool, full volume shape
    size: int
    bbox: tuple[tuple[int, int], ...]

    @classmethod
    def from_mask(cls, kind: str, mask: np.ndarray) -> "ErrorComponent":
        bbox = mask_bbox(mask)
        if bbox is None:
            raise ValueError("error component must be nonempty")
        return cls(kind=kind, mask=mask, size=int(mask.sum()), bbox=bbox)

    def slice_mask(self, ref: SliceRef) -> np.ndarray:
        return ref.extract(self.mask)


def default_fragment_cell(mask: np.ndarray) -> int:
    """Noise cell size heuristic: a quarter of the longest bbox edge, >= 4."""
    bbox = mask_bbox(mask)
    if bbox is None:
        return 4
    longest = max(hi - lo for lo, hi in bbox)
    return max(4, round(longest / 4))


def _fragment(mask: np.ndarray, rng: np.random.Generator, cell_size: int | None) -> np.ndarray:
    bbox = mask_bbox(mask)
    if bbox is None:
        return mask
    cell = cell_size if cell_size is not None else default_fragment_cell(mask)
    window = tuple(slice(lo, hi) for lo, hi in bbox)
    crop_shape = tuple(hi - lo for lo, hi in bbox)
    noise = perlin3d(crop_shape, cell, rng)
    out = np.zeros_like(mask)
    out[window] = mask[window] & (noise > 0)
    return out


def compute_error_components(
    gt: np.ndarray,
    pred: np.ndarray,
    fragment: bool = False,
    rng: np.random.Generator | None = None,
    min_size: int = 1,
    cell_size: int | None = None,
    connectivity: int = 26,
) -> list[ErrorComponent]:
    """Connected FP and FN components of `pred` against `gt`.

    With `fragment`, each error mask is first multiplied by a thresholded
    gradient-noise mask (noise > 0) to break elongated structures; the FP
    mask consumes noise before the FN mask, so draw order is stable.
    Components smaller than `min_size` voxels are dropped. Both lists may
    be empty when the masks agree.
    """
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch {gt.shape} vs {pred.shape}")
    if fragment and rng is None:
        raise ValueError("fragmentation requires an rng")
    gt = np.asarray(gt, dtype=bool)
    pred = np.asarray(pred, dtype=bool)
    components: list[ErrorComponent] = []
    for kind, error in ((FP, pred & ~gt), (FN, gt & ~pred)):
        if fragment and error.any():
            error = _fragment(error, rng, cell_size)
        if not error.any():
            continue
        labels = connected_components(error, connectivity)
        counts = np.bincount(labels.ravel())
        for label in range(1, len(counts)):
            if counts[label] >= min_size:
                components.append(ErrorComponent.from_mask(kind, labels == label))
    return components


def select_component(
    components: list[ErrorComponent], rng: np.random.Generator
) -> ErrorComponent:
    """Draw one component with probability proportional to its size."""
    if not components:
        raise ValueError("no error components to select from")
    sizes = np.array([c.size for c in components], dtype=np.float64)
    probs = sizes / sizes.sum()
    return components[int(rng.choice(len(components), p=probs))]


def slice_weights(component: ErrorComponent) -> tuple[list[SliceRef], np.ndarray]:
    """Candidate slices and their foreground-voxel counts, all three axes."""
    refs: list[SliceRef] = []
    weights: list[int] = []
    for axis in range(3):
        counts = component.mask.sum(axis=tuple(a for a in range(3) if a != axis))
        for index in np.flatnonzero(counts):
            refs.append(SliceRef(axis=axis, index=int(index)))
            weights.append(int(counts[index]))
    return refs, np.asarray(weights, dtype=np.float64)


def sample_slice(component: ErrorComponent, rng: np.random.Generator) -> SliceRef:
    """Draw a slice with probability linear in its foreground voxel count.

    All axial/coronal/sagittal slices intersecting the component compete;
    the returned slice always contains component voxels.
    """
    refs, weights = slice_weights(component)
    probs = weights / weights.sum()
    return refs[int(rng.choice(len(refs), p=probs))]
