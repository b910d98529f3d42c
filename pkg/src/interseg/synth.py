"""Synthetic benchmark cases: blobby objects with intensity contrast."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .prompts import smooth_displacement3d, warp3d_nearest
from .rng import make_rng
from .volcore import Volume3D, largest_component
from .volio import write_nifti, write_raw


def synthetic_case(seed: int, size: int = 64) -> tuple[Volume3D, np.ndarray]:
    """One case: a warped ellipsoid with contrast 1.0 over noisy background.

    The object is guaranteed to be a single connected component so that
    instance conversion yields exactly one target.
    """
    rng = make_rng(seed, stream=0xC0FFEE)
    center = np.array([size / 2.0] * 3) + rng.uniform(-size / 10.0, size / 10.0, 3)
    radii = rng.uniform(size / 6.0, size / 3.5, 3)
    grid = np.indices((size,) * 3, dtype=np.float64)
    dist = sum(((grid[a] - center[a]) / radii[a]) ** 2 for a in range(3))
    mask = dist <= 1.0
    fld = smooth_displacement3d(mask.shape, scale=size / 24.0, rng=rng, grid_step=max(4, size // 8))
    mask = largest_component(warp3d_nearest(mask, fld), 26)
    noise = rng.normal(0.0, 0.12, mask.shape)
    image = (mask.astype(np.float64) + noise).astype(np.float32)
    return Volume3D(data=image), mask


def write_synthetic_cases(
    out_dir, n_cases: int, seed: int, size: int = 64, file_format: str = "nifti"
) -> Path:
    """Write image/label volumes plus a cases.json manifest; returns its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = ".nii.gz" if file_format == "nifti" else ".raw"
    entries = []
    for i in range(n_cases):
        case_id = f"case{i:03d}"
        volume, mask = synthetic_case(seed + i, size)
        image_path = out_dir / f"{case_id}_img{ext}"
        label_path = out_dir / f"{case_id}_lab{ext}"
        if file_format == "nifti":
            write_nifti(volume, image_path, datatype=np.float32)
            write_nifti(mask.astype(np.uint8), label_path, datatype=np.uint8)
        elif file_format == "raw":
            write_raw(volume, image_path)
            write_raw(mask.astype(np.float32), label_path)
        else:
            raise ValueError(f"unknown format {file_format!r}")
        entries.append(
            {
                "id": case_id,
                "image": image_path.name,
                "label": label_path.name,
                "dataset": "synthetic",
            }
        )
    manifest = out_dir / "cases.json"
    manifest.write_text(json.dumps({"cases": entries}, indent=2, sort_keys=True) + "\n")
    return manifest
