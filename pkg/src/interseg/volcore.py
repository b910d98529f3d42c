"""Grid algebra on 2D/3D boolean masks and scalar fields.

Conventions used package-wide:

* volumes and masks are numpy arrays indexed ``[x, y, z]`` (2D: ``[x, y]``);
* masks are ``bool``, label maps are non-negative integers with 0 as
  background, scalar fields are floating point;
* distances are measured in voxel units on an isotropic grid. Voxel
  spacing is carried by :class:`Volume3D` for I/O purposes only and never
  enters any computation here.

All functions are pure: outputs are fresh arrays and inputs are never
written to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from skimage.morphology import skeletonize as _skimage_skeletonize

AXIS_NAMES = ("axial", "coronal", "sagittal")


@dataclass
class Volume3D:
    """Scalar volume with per-axis spacing (mm/voxel, informational)."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        if self.data.ndim != 3:
            raise ValueError(f"volume must be 3D, got shape {self.data.shape}")
        if any(n < 1 for n in self.data.shape):
            raise ValueError(f"degenerate volume shape {self.data.shape}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class SliceRef:
    """One orthogonal slice: axis in {0: axial, 1: coronal, 2: sagittal}."""

    axis: int
    index: int

    def __post_init__(self) -> None:
        if self.axis not in (0, 1, 2):
            raise ValueError(f"axis must be 0, 1 or 2, got {self.axis}")
        if self.index < 0:
            raise ValueError(f"slice index must be >= 0, got {self.index}")

    def extract(self, arr: np.ndarray) -> np.ndarray:
        """2D slice of a 3D array (a view)."""
        return arr.take(self.index, axis=self.axis)

    def embed(self, arr2d: np.ndarray, shape: tuple[int, int, int], dtype=None) -> np.ndarray:
        """3D array of `shape` that is zero except for `arr2d` on this slice."""
        out = np.zeros(shape, dtype=dtype or arr2d.dtype)
        sl = [slice(None)] * 3
        sl[self.axis] = self.index
        out[tuple(sl)] = arr2d
        return out


def mask_bbox(mask: np.ndarray) -> tuple[tuple[int, int], ...] | None:
    """Per-axis (lo, hi) half-open bounds of the foreground, None if empty."""
    if not mask.any():
        return None
    bounds = []
    for axis in range(mask.ndim):
        proj = mask.any(axis=tuple(a for a in range(mask.ndim) if a != axis))
        idx = np.flatnonzero(proj)
        bounds.append((int(idx[0]), int(idx[-1]) + 1))
    return tuple(bounds)


def _structure(ndim: int, connectivity: int) -> np.ndarray:
    table = {(3, 6): 1, (3, 18): 2, (3, 26): 3, (2, 4): 1, (2, 8): 2}
    try:
        return ndimage.generate_binary_structure(ndim, table[(ndim, connectivity)])
    except KeyError:
        raise ValueError(f"unsupported connectivity {connectivity} for {ndim}D") from None


def connected_components(mask: np.ndarray, connectivity: int = 26) -> np.ndarray:
    """Label connected foreground regions with consecutive ids 1..K.

    `connectivity` is 6/18/26 for 3D masks and 4/8 for 2D masks.
    Background stays 0; an empty mask yields K = 0.
    """
    labels, _ = ndimage.label(mask, structure=_structure(mask.ndim, connectivity))
    return labels.astype(np.int32)


def largest_component(mask: np.ndarray, connectivity: int = 8) -> np.ndarray:
    """Boolean mask of the largest connected region (empty in, empty out)."""
    labels = connected_components(mask, connectivity)
    k = labels.max()
    if k == 0:
        return np.zeros_like(mask, dtype=bool)
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    return labels == counts.argmax()


def edt_squared(mask: np.ndarray) -> np.ndarray:
    """Integer squared Euclidean distance to the nearest background voxel.

    Background voxels are 0. A mask with no background at all falls back to
    treating the grid boundary as background at distance 1 (the same
    convention as :func:`directional_edt`).
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros(mask.shape, dtype=np.int64)
    if mask.all():
        padded = np.pad(mask, 1)
        return edt_squared(padded)[tuple(slice(1, -1) for _ in range(mask.ndim))]
    indices = ndimage.distance_transform_edt(mask, return_distances=False, return_indices=True)
    # accumulate per axis instead of building a full index grid: the
    # transient memory matters for volume-sized masks
    d2 = np.zeros(mask.shape, dtype=np.int64)
    for axis in range(mask.ndim):
        shape = [1] * mask.ndim
        shape[axis] = mask.shape[axis]
        coord = np.arange(mask.shape[axis], dtype=np.int64).reshape(shape)
        diff = indices[axis].astype(np.int64)
        diff -= coord
        np.multiply(diff, diff, out=diff)
        d2 += diff
        del diff
    d2[~mask] = 0
    return d2


def edt(mask: np.ndarray, normalize: bool = False) -> np.ndarray:
    """Euclidean distance transform in voxel units; optionally scaled to (0, 1].

    Squared distances are computed in integer arithmetic and rooted at the
    end. With `normalize`, foreground values are divided by the field
    maximum so the most interior voxels reach exactly 1.0; an empty mask
    returns the all-zero field.
    """
    dist = np.sqrt(edt_squared(mask).astype(np.float64))
    if normalize:
        peak = dist.max()
        if peak > 0:
            dist /= peak
    return dist


def directional_edt(mask2d: np.ndarray) -> np.ndarray:
    """Per-axis distance from each in-mask pixel to background along that axis.

    Returns an array of shape ``(2, *mask2d.shape)``. The grid boundary
    counts as background at distance (edge offset + 1); background pixels
    are 0.
    """
    mask2d = np.asarray(mask2d, dtype=bool)
    if mask2d.ndim != 2:
        raise ValueError(f"expected a 2D mask, got shape {mask2d.shape}")
    out = np.zeros((2,) + mask2d.shape, dtype=np.int64)
    for axis in range(2):
        n = mask2d.shape[axis]
        idx_shape = [1, 1]
        idx_shape[axis] = n
        idx = np.arange(n, dtype=np.int64).reshape(idx_shape)
        # nearest background index at-or-before each position (-1 = outside)
        before = np.maximum.accumulate(np.where(~mask2d, idx, -1), axis=axis)
        fwd = idx - before
        flipped = np.flip(~mask2d, axis=axis)
        after = np.maximum.accumulate(np.where(flipped, idx, -1), axis=axis)
        bwd = np.flip(idx - after, axis=axis)
        out[axis] = np.minimum(fwd, bwd)
    out[:, ~mask2d] = 0
    return out


def ball_element(radius: float, ndim: int) -> np.ndarray:
    """Discrete Euclidean ball: offsets with squared norm <= radius**2."""
    r = int(np.floor(radius))
    axes = np.indices((2 * r + 1,) * ndim) - r
    return (axes.astype(np.int64) ** 2).sum(axis=0) <= radius * radius


def box_element(radius: float, ndim: int) -> np.ndarray:
    r = int(np.floor(radius))
    return np.ones((2 * r + 1,) * ndim, dtype=bool)


_MORPH_OPS = {
    "erode": ndimage.binary_erosion,
    "dilate": ndimage.binary_dilation,
    "open": ndimage.binary_opening,
    "close": ndimage.binary_closing,
}


def morphology(mask: np.ndarray, op: str, radius: float, element: str = "ball") -> np.ndarray:
    """Binary morphology with a ball or box element; radius 0 is identity.

    Works on 2D and 3D masks alike; outside the grid counts as background.
    """
    if op not in _MORPH_OPS:
        raise ValueError(f"unknown morphology op {op!r}")
    if radius < 0:
        raise ValueError("radius must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if radius < 1:  # the element degenerates to a single voxel
        return mask.copy()
    struct = ball_element(radius, mask.ndim) if element == "ball" else box_element(radius, mask.ndim)
    return _MORPH_OPS[op](mask, structure=struct)


def skeletonize2d(mask2d: np.ndarray) -> np.ndarray:
    """Connectivity-preserving 1-pixel-wide thinning of a 2D mask.

    Idempotent on already-thin input; the output is a subset of the input
    and has the same number of connected components.
    """
    mask2d = np.asarray(mask2d, dtype=bool)
    if mask2d.ndim != 2:
        raise ValueError(f"expected a 2D mask, got shape {mask2d.shape}")
    if not mask2d.any():
        return mask2d.copy()
    return _skimage_skeletonize(mask2d, method="lee").astype(bool)


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


_GRAD2 = np.array(
    [(np.cos(a), np.sin(a)) for a in np.arange(8) * (np.pi / 4.0)], dtype=np.float64
)
# the 12 cube-edge directions, unit length
_GRAD3 = np.array(
    [
        (1, 1, 0), (-1, 1, 0), (1, -1, 0), (-1, -1, 0),
        (1, 0, 1), (-1, 0, 1), (1, 0, -1), (-1, 0, -1),
        (0, 1, 1), (0, -1, 1), (0, 1, -1), (0, -1, -1),
    ],
    dtype=np.float64,
) / np.sqrt(2.0)


def _perlin_grid(shape: tuple[int, ...], cell_size: int, rng: np.random.Generator):
    if cell_size < 2:
        raise ValueError("cell_size must be >= 2")
    perm = rng.permutation(256).astype(np.int64)
    perm = np.concatenate([perm, perm])
    cells, frac = [], []
    for axis, n in enumerate(shape):
        pos = np.arange(n, dtype=np.float64) / float(cell_size)
        c = np.floor(pos).astype(np.int64)
        shp = [1] * len(shape)
        shp[axis] = n
        cells.append(c.reshape(shp))
        frac.append((pos - c).reshape(shp))
    return perm, cells, frac


def perlin2d(shape: tuple[int, int], cell_size: int, rng: np.random.Generator) -> np.ndarray:
    """Classic 2D gradient noise in [-1, 1], exactly 0 at lattice corners."""
    perm, (cx, cy), (fx, fy) = _perlin_grid(shape, cell_size, rng)
    u, v = _fade(fx), _fade(fy)
    acc_x0 = value = None
    for dx in (0, 1):
        acc = None
        for dy in (0, 1):
            h = perm[perm[(cx + dx) & 255] + ((cy + dy) & 255)] % len(_GRAD2)
            g = _GRAD2[h]
            dot = g[..., 0] * (fx - dx) + g[..., 1] * (fy - dy)
            acc = dot if acc is None else acc + v * (dot - acc)
        if acc_x0 is None:
            acc_x0 = acc
        else:
            value = acc_x0 + u * (acc - acc_x0)
    return value


def perlin3d(shape: tuple[int, int, int], cell_size: int, rng: np.random.Generator) -> np.ndarray:
    """Classic 3D gradient noise in [-1, 1], exactly 0 at lattice corners."""
    perm, (cx, cy, cz), (fx, fy, fz) = _perlin_grid(shape, cell_size, rng)
    u, v, w = _fade(fx), _fade(fy), _fade(fz)
    lerp_x = None
    for dx in (0, 1):
        lerp_y = None
        for dy in (0, 1):
            lerp_z = None
            for dz in (0, 1):
                h = perm[perm[perm[(cx + dx) & 255] + ((cy + dy) & 255)] + ((cz + dz) & 255)]
                g = _GRAD3[h % len(_GRAD3)]
                dot = (
                    g[..., 0] * (fx - dx)
                    + g[..., 1] * (fy - dy)
                    + g[..., 2] * (fz - dz)
                )
                lerp_z = dot if lerp_z is None else lerp_z + w * (dot - lerp_z)
            lerp_y = lerp_z if lerp_y is None else lerp_y + v * (lerp_z - lerp_y)
        lerp_x = lerp_y if lerp_x is None else lerp_x + u * (lerp_y - lerp_x)
    return lerp_x


def warp2d(mask2d: np.ndarray, displacement: np.ndarray) -> np.ndarray:
    """Backward warp with nearest-neighbor sampling.

    ``displacement`` has shape (H, W, 2): output[i, j] reads the input at
    ``(i + d0, j + d1)`` rounded to the nearest pixel; out-of-bounds source
    positions read as background.
    """
    mask2d = np.asarray(mask2d, dtype=bool)
    if displacement.shape != mask2d.shape + (2,):
        raise ValueError(
            f"displacement shape {displacement.shape} does not match mask {mask2d.shape}"
        )
    ii, jj = np.indices(mask2d.shape)
    si = np.floor(ii + displacement[..., 0] + 0.5).astype(np.int64)
    sj = np.floor(jj + displacement[..., 1] + 0.5).astype(np.int64)
    inside = (si >= 0) & (si < mask2d.shape[0]) & (sj >= 0) & (sj < mask2d.shape[1])
    out = np.zeros_like(mask2d)
    out[inside] = mask2d[si[inside], sj[inside]]
    return out


def resample(arr: np.ndarray, target_shape: tuple[int, ...], mode: str) -> np.ndarray:
    """Resize to `target_shape` with trilinear or nearest interpolation.

    Sample positions follow the half-voxel-center convention
    ``src = (i + 0.5) * (n_src / n_tgt) - 0.5`` with edge clamping;
    nearest rounding is half-up. Identity when shapes already match.

    `mode` is ``"trilinear"`` for intensities/probabilities and
    ``"nearest"`` for masks and label maps (dtype is preserved).
    """
    if any(n < 1 for n in target_shape):
        raise ValueError(f"bad target shape {target_shape}")
    if len(target_shape) != arr.ndim:
        raise ValueError("target shape rank does not match input")
    if tuple(target_shape) == arr.shape:
        return arr.copy()
    coords = [
        (np.arange(t, dtype=np.float64) + 0.5) * (s / t) - 0.5
        for s, t in zip(arr.shape, target_shape)
    ]
    if mode == "nearest":
        idx = [
            np.clip(np.floor(c + 0.5).astype(np.int64), 0, s - 1)
            for c, s in zip(coords, arr.shape)
        ]
        return arr[np.ix_(*idx)].copy()
    if mode == "trilinear":
        # axis-aligned resizing factorizes into per-axis linear passes,
        # which is far cheaper than full coordinate mapping
        work_dtype = arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float64
        out = arr.astype(work_dtype)
        for axis, c in enumerate(coords):
            n = arr.shape[axis]
            lo = np.floor(c).astype(np.int64)
            t = (c - lo).astype(work_dtype)
            lo_c = np.clip(lo, 0, n - 1)
            hi_c = np.clip(lo + 1, 0, n - 1)
            shape = [1] * arr.ndim
            shape[axis] = len(c)
            t = t.reshape(shape)
            a = np.take(out, lo_c, axis=axis)
            b = np.take(out, hi_c, axis=axis)
            out = a + (b - a) * t
        return out
    raise ValueError(f"unknown resample mode {mode!r}")


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """2|a&b| / (|a| + |b|); defined as 1.0 when both masks are empty."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total
