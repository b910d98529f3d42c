"""Segmenter plug-in contract and reference implementations.

A segmenter maps ``(image patch, channel patch)`` to a probability field
of the same spatial shape with values in [0, 1], deterministically.
Segmenters carrying a reference mask (the two oracles) declare
``requires_gt`` and receive an aligned ``gt_patch``; they exist so the
full interactive pipeline can be exercised end to end without any
learned model.

External segmenter processes can be bridged over stdin/stdout: the
request is one JSON header line followed by the raw little-endian
float32 channel tensors (x-fastest element order, channel-major), and
the response is the raw float32 probability tensor. See
:class:`SubprocessSegmenter` for the exact byte layout.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import subprocess
from typing import Protocol, runtime_checkable

import numpy as np

from .prompts import generate_malformed_segmentation
from .rng import make_rng
from .volcore import mask_bbox


class SegmenterError(Exception):
    pass


@runtime_checkable
class Segmenter(Protocol):
    requires_gt: bool

    def predict(
        self,
        image_patch: np.ndarray,
        channels_patch: np.ndarray,
        gt_patch: np.ndarray | None = None,
    ) -> np.ndarray: ...


def prompt_mass(channels_patch: np.ndarray) -> float:
    """Accumulated prompt support in voxel units: nonzero prompt voxels
    summed over all prompt channels (channels 2 and up)."""
    return float(np.count_nonzero(channels_patch[2:]))


class GtOracle:
    """Returns the reference mask, ignoring all prompts."""

    requires_gt = True

    def predict(self, image_patch, channels_patch, gt_patch=None):
        if gt_patch is None:
            raise SegmenterError("gt oracle needs an aligned reference patch")
        return gt_patch.astype(np.float32)


class NoisyOracle:
    """Reference mask with seeded errors that shrink as prompts accumulate.

    The error field is a deterministic function of (reference bytes,
    seed): a malformed copy of the reference plus a per-voxel amplitude
    in (0.5, 1]. Error magnitudes are multiplied by
    ``max(0, 1 - prompt_mass / tau)``, so the output converges to the
    reference once the accumulated prompt mass reaches tau, and the
    thresholded mask moves monotonically toward the reference as mass
    grows.
    """

    requires_gt = True

    def __init__(self, seed: int = 0, tau: float = 500.0, deform_scale: float = 4.0):
        self.seed = seed
        self.tau = float(tau)
        self.deform_scale = float(deform_scale)

    def _derive_rng(self, gt_patch: np.ndarray) -> np.random.Generator:
        digest = hashlib.blake2b(
            np.ascontiguousarray(gt_patch, dtype=np.uint8).tobytes(), digest_size=8
        ).digest()
        return make_rng(self.seed, int.from_bytes(digest, "little"))

    def predict(self, image_patch, channels_patch, gt_patch=None):
        if gt_patch is None:
            raise SegmenterError("noisy oracle needs an aligned reference patch")
        gt = gt_patch.astype(bool)
        if not gt.any():
            return np.zeros(gt.shape, dtype=np.float32)
        rng = self._derive_rng(gt)
        malformed = generate_malformed_segmentation(
            gt, rng, cutoff_prob=0.25, deform_scale=self.deform_scale
        )
        amplitude = rng.uniform(0.5, 1.0, size=gt.shape) + np.finfo(np.float64).eps
        scale = max(0.0, 1.0 - prompt_mass(channels_patch) / self.tau)
        diff = malformed.astype(np.float64) - gt.astype(np.float64)
        probs = np.clip(gt.astype(np.float64) + scale * amplitude * diff, 0.0, 1.0)
        return probs.astype(np.float32)


class RegionGrow:
    """Classical prompt-respecting flood fill.

    Grows 26-connected from every positive point/scribble voxel above
    0.5, accepting voxels whose intensity stays within `tolerance` of the
    running mean of the accepted region. Voxels above 0.5 in any negative
    channel are barriers: excluded and never traversed. When positive
    box/lasso support is present, growth is clipped to its bounding box.
    """

    requires_gt = False

    def __init__(self, tolerance: float = 0.25):
        self.tolerance = float(tolerance)

    def predict(self, image_patch, channels_patch, gt_patch=None):
        from .prompts import BASE_CHANNELS

        pos_seeds = (channels_patch[2] > 0.5) | (channels_patch[4] > 0.5)
        if not pos_seeds.any():
            raise SegmenterError("region growing needs at least one positive point/scribble voxel")
        negative = (channels_patch[3] > 0.5) | (channels_patch[5] > 0.5) | (channels_patch[7] > 0.5)
        if channels_patch.shape[0] > BASE_CHANNELS:
            negative |= channels_patch[9] > 0.5
        allowed = np.ones(image_patch.shape, dtype=bool)
        boxlasso_pos = channels_patch[6] > 0.5
        if boxlasso_pos.any():
            allowed[:] = False
            window = tuple(slice(lo, hi) for lo, hi in mask_bbox(boxlasso_pos))
            allowed[window] = True
        allowed &= ~negative

        shape = image_patch.shape
        accepted = np.zeros(shape, dtype=bool)
        visited = np.zeros(shape, dtype=bool)
        seeds = [tuple(int(v) for v in p) for p in np.argwhere(pos_seeds & allowed)]
        if not seeds:
            raise SegmenterError("all positive seeds are blocked")
        offsets = [
            (dx, dy, dz)
            for dx in (-1, 0, 1)
            for dy in (-1, 0, 1)
            for dz in (-1, 0, 1)
            if (dx, dy, dz) != (0, 0, 0)
        ]
        queue: list[tuple[int, int, int]] = []
        total = 0.0
        count = 0

        def enqueue_neighbors(vox):
            for off in offsets:
                nxt = (vox[0] + off[0], vox[1] + off[1], vox[2] + off[2])
                if any(c < 0 or c >= n for c, n in zip(nxt, shape)):
                    continue
                if visited[nxt] or not allowed[nxt]:
                    continue
                visited[nxt] = True
                queue.append(nxt)

        # seeds are accepted unconditionally and prime the running mean
        for s in seeds:
            visited[s] = True
        for s in seeds:
            accepted[s] = True
            total += float(image_patch[s])
            count += 1
            enqueue_neighbors(s)
        head = 0
        while head < len(queue):
            vox = queue[head]
            head += 1
            value = float(image_patch[vox])
            if abs(value - total / count) > self.tolerance:
                continue
            accepted[vox] = True
            total += value
            count += 1
            enqueue_neighbors(vox)
        return accepted.astype(np.float32)


class SubprocessSegmenter:
    """Adapter for an external segmenter process.

    Per predict call the command is spawned once. Request on its stdin:

    * one UTF-8 JSON line: ``{"shape": [nx, ny, nz], "channels": C,
      "dtype": "float32"}``
    * C tensors of nx*ny*nz little-endian float32 values each, x-fastest
      (element (x, y, z) at index x + nx*y + nx*ny*z), channel 0 the
      image, channel 1 the previous prediction, prompt channels after.

    Response on its stdout: nx*ny*nz little-endian float32 probabilities
    in the same element order. Any other byte count, or a nonzero exit
    status, is an error.
    """

    requires_gt = False

    def __init__(self, command: str | list[str], timeout: float = 120.0):
        self.command = command
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout

    def predict(self, image_patch, channels_patch, gt_patch=None):
        shape = tuple(int(n) for n in image_patch.shape)
        header = json.dumps(
            {"shape": list(shape), "channels": int(channels_patch.shape[0]), "dtype": "float32"}
        ).encode() + b"\n"
        payload = b"".join(
            np.asfortranarray(ch.astype("<f4")).tobytes(order="F") for ch in channels_patch
        )
        try:
            proc = subprocess.run(
                self.argv,
                input=header + payload,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                timeout=self.timeout,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise SegmenterError(f"subprocess segmenter failed: {exc}") from exc
        if proc.returncode != 0:
            raise SegmenterError(
                f"subprocess segmenter exited {proc.returncode}: {proc.stderr[:500]!r}"
            )
        count = int(np.prod(shape))
        if len(proc.stdout) != count * 4:
            raise SegmenterError(
                f"subprocess segmenter returned {len(proc.stdout)} bytes, wanted {count * 4}"
            )
        probs = np.frombuffer(proc.stdout, dtype="<f4").reshape(shape, order="F")
        return np.clip(np.ascontiguousarray(probs), 0.0, 1.0)


def build_segmenter(spec: str, seed: int = 0, tau: float = 500.0, tolerance: float = 0.25):
    """CLI factory: gt | noisy | regiongrow | subprocess:CMD."""
    if spec == "gt":
        return GtOracle()
    if spec == "noisy":
        return NoisyOracle(seed=seed, tau=tau)
    if spec == "regiongrow":
        return RegionGrow(tolerance=tolerance)
    if spec.startswith("subprocess:"):
        return SubprocessSegmenter(spec.split(":", 1)[1])
    raise ValueError(f"unknown segmenter {spec!r}")
