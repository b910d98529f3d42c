"""Training-side data machinery.

Covers the sampling chain used to assemble a training patch: dataset and
case weights, target selection under per-dataset ambiguity rules,
semantic-to-instance label conversion, center-biased patch extraction,
and the extended augmentation pipeline (z-score, scaling, transpose,
intensity inversion).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .prompts import sample_point_location
from .volcore import connected_components, morphology
from .volio import zscore


@dataclass
class CaseEntry:
    case_id: str
    n_objects: int = 1


@dataclass
class AmbiguityCombo:
    name: str
    instances: tuple[int, ...]
    prob: float


@dataclass
class AmbiguityRules:
    """Declarative target distribution: fixed-probability named unions plus
    a remainder pool whose leftover mass is split uniformly."""

    combos: tuple[AmbiguityCombo, ...]
    remainder_instances: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        total = sum(c.prob for c in self.combos)
        if total > 1.0 + 1e-9:
            raise ValueError(f"combo probabilities sum to {total} > 1")
        if total < 1.0 - 1e-9 and not self.remainder_instances:
            raise ValueError("leftover probability mass but no remainder instances")

    @classmethod
    def from_json(cls, doc: dict) -> "AmbiguityRules":
        combos = tuple(
            AmbiguityCombo(
                name=str(c["name"]),
                instances=tuple(int(i) for i in c["instances"]),
                prob=float(c["prob"]),
            )
            for c in doc.get("combos", [])
        )
        return cls(
            combos=combos,
            remainder_instances=tuple(int(i) for i in doc.get("remainder_instances", [])),
        )


@dataclass
class DatasetSpec:
    dataset_id: str
    cases: list[CaseEntry]
    manual_weight: float = 1.0
    cleanup: dict = field(default_factory=dict)
    ambiguity: AmbiguityRules | None = None

    def __post_init__(self) -> None:
        if self.manual_weight <= 0:
            raise ValueError("manual weight must be positive")
        for case in self.cases:
            if case.n_objects < 0:
                raise ValueError("object counts must be >= 0")

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetSpec":
        cases = [
            CaseEntry(case_id=str(c["id"]), n_objects=int(c.get("objects", 1)))
            for c in doc.get("cases", [])
        ]
        cleanup = {
            int(k): (str(v["op"]), float(v["radius"]))
            for k, v in doc.get("cleanup", {}).items()
        }
        ambiguity = (
            AmbiguityRules.from_json(doc["ambiguity"]) if doc.get("ambiguity") else None
        )
        return cls(
            dataset_id=str(doc["id"]),
            cases=cases,
            manual_weight=float(doc.get("weight", 1.0)),
            cleanup=cleanup,
            ambiguity=ambiguity,
        )


def load_dataset_specs(path) -> list[DatasetSpec]:
    """Read dataset specs (with ambiguity rules) from a JSON document."""
    import json
    from pathlib import Path

    doc = json.loads(Path(path).read_text())
    return [DatasetSpec.from_json(entry) for entry in doc.get("datasets", [])]


def case_sampling_weights(datasets: list[DatasetSpec]) -> tuple[list[str], np.ndarray]:
    """Per-case sampling probabilities.

    Each dataset gets a budget equal to the square root of its case
    count, spread over its cases, scaled by the manual weight; each case
    is further weighted by the square root of its object count. The
    result is normalized to sum to 1.
    """
    ids: list[str] = []
    weights: list[float] = []
    for ds in datasets:
        n = len(ds.cases)
        if n == 0:
            continue
        budget_per_case = np.sqrt(n) / n
        for case in ds.cases:
            ids.append(case.case_id)
            weights.append(ds.manual_weight * budget_per_case * np.sqrt(case.n_objects))
    if not ids:
        raise ValueError("no cases to weight")
    w = np.asarray(weights, dtype=np.float64)
    return ids, w / w.sum()


@dataclass(frozen=True)
class TargetSpec:
    """What a training patch should segment: one instance, a named union
    of instances, or a pseudo-label."""

    kind: str  # instance | union | pseudo
    ids: tuple[int, ...] = ()
    name: str = ""


@dataclass
class CaseObjects:
    instances: tuple[int, ...]
    pseudo_labels: tuple[str, ...] = ()
    rules: AmbiguityRules | None = None


def sample_target(
    case: CaseObjects, rng: np.random.Generator, pseudo_prob: float = 0.2
) -> TargetSpec:
    """Draw a training target for a case.

    Pseudo-labels win with `pseudo_prob` when present; otherwise the
    dataset's ambiguity rules decide (fixed-probability unions first,
    leftover mass split uniformly over the remainder instances), falling
    back to a uniform instance draw when no rules apply.
    """
    if not case.instances and not case.pseudo_labels:
        raise ValueError("case has neither instances nor pseudo-labels")
    if case.pseudo_labels and rng.uniform() < pseudo_prob:
        pick = case.pseudo_labels[int(rng.integers(len(case.pseudo_labels)))]
        return TargetSpec(kind="pseudo", name=str(pick))
    if not case.instances:
        pick = case.pseudo_labels[int(rng.integers(len(case.pseudo_labels)))]
        return TargetSpec(kind="pseudo", name=str(pick))
    rules = case.rules
    if rules is None:
        pick = case.instances[int(rng.integers(len(case.instances)))]
        return TargetSpec(kind="instance", ids=(pick,), name=str(pick))
    u = rng.uniform()
    acc = 0.0
    for combo in rules.combos:
        acc += combo.prob
        if u < acc:
            return TargetSpec(kind="union", ids=combo.instances, name=combo.name)
    pool = rules.remainder_instances or case.instances
    pick = pool[int(rng.integers(len(pool)))]
    return TargetSpec(kind="instance", ids=(pick,), name=str(pick))


def instances_from_semantic(
    labels: np.ndarray, cleanup: dict | None = None, connectivity: int = 26
) -> np.ndarray:
    """Split a semantic label map into instances with consecutive ids.

    Per class, an optional morphological open/close (``cleanup[class] =
    (op, radius)``) runs before connected-component analysis; instance
    ids are re-enumerated consecutively across classes in class order.
    """
    labels = np.asarray(labels)
    out = np.zeros(labels.shape, dtype=np.int32)
    next_id = 1
    for cls in [int(c) for c in np.unique(labels) if c != 0]:
        mask = labels == cls
        if cleanup and cls in cleanup:
            op, radius = cleanup[cls]
            if op not in ("open", "close"):
                raise ValueError(f"cleanup op must be open or close, got {op!r}")
            mask = morphology(mask, op, radius)
        comps = connected_components(mask, connectivity)
        k = int(comps.max())
        if k == 0:
            continue
        shifted = np.where(comps > 0, comps + (next_id - 1), 0)
        out[comps > 0] = shifted[comps > 0]
        next_id += k
    return out


def extract_patch(
    arr: np.ndarray, center: tuple[int, ...], patch: int = 192, pad_value=0
) -> np.ndarray:
    """Axis-aligned patch centered on a voxel, padded where it overhangs."""
    for c, n in zip(center, arr.shape):
        if not 0 <= c < n:
            raise ValueError(f"center {center} outside volume {arr.shape}")
    out = np.full((patch,) * arr.ndim, pad_value, dtype=arr.dtype)
    src, dst = [], []
    for c, n in zip(center, arr.shape):
        start = c - patch // 2
        lo, hi = max(0, start), min(n, start + patch)
        src.append(slice(lo, hi))
        dst.append(slice(lo - start, hi - start))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def pick_center(
    target_mask: np.ndarray, rng: np.random.Generator, alpha: float = 8
) -> tuple[int, ...]:
    """Center-biased voxel of the target: the alpha-law point sampler."""
    if not target_mask.any():
        raise ValueError("target mask is empty")
    return sample_point_location(target_mask, alpha, rng)


@dataclass
class AugmentTrace:
    scaled: bool = False
    scale_factors: tuple[float, ...] | None = None
    synchronized: bool = False
    transposed: bool = False
    permutation: tuple[int, ...] | None = None
    inverted: bool = False


def _scale_about_center(arr: np.ndarray, factors, order: int) -> np.ndarray:
    center = (np.asarray(arr.shape, dtype=np.float64) - 1.0) / 2.0
    coords = [
        center[a] + (np.arange(n, dtype=np.float64) - center[a]) / factors[a]
        for a, n in enumerate(arr.shape)
    ]
    mesh = np.stack(np.meshgrid(*coords, indexing="ij"))
    return ndimage.map_coordinates(
        arr.astype(np.float64), mesh, order=order, mode="constant", cval=0.0
    ).astype(arr.dtype if order == 0 else np.float32)


def augment(
    patch_image: np.ndarray,
    patch_target: np.ndarray,
    rng: np.random.Generator,
    p_scale: float = 0.3,
    p_axis_independent: float = 0.6,
    scale_range: tuple[float, float] = (0.5, 2.0),
    p_transpose: float = 0.5,
    p_invert: float = 0.1,
    with_trace: bool = False,
):
    """Extended augmentation chain for one (image, target) patch pair.

    Order: image-level z-score; scaling with `p_scale` (per-axis
    independent factors with `p_axis_independent`, range [0.5, 2],
    trilinear/nearest about the patch center, zero fill); random axis
    permutation of both with `p_transpose`; intensity negation with
    `p_invert`.
    """
    if patch_image.shape != patch_target.shape:
        raise ValueError("image and target shapes must match")
    trace = AugmentTrace()
    image, _ = zscore(patch_image)
    target = patch_target.copy()

    if rng.uniform() < p_scale:
        trace.scaled = True
        if rng.uniform() < p_axis_independent:
            factors = tuple(float(f) for f in rng.uniform(*scale_range, size=image.ndim))
        else:
            factors = (float(rng.uniform(*scale_range)),) * image.ndim
            trace.synchronized = True
        trace.scale_factors = factors
        image = _scale_about_center(image, factors, order=1)
        target = _scale_about_center(target, factors, order=0)

    if rng.uniform() < p_transpose:
        trace.transposed = True
        perm = tuple(int(a) for a in rng.permutation(image.ndim))
        trace.permutation = perm
        image = np.ascontiguousarray(image.transpose(perm))
        target = np.ascontiguousarray(target.transpose(perm))

    if rng.uniform() < p_invert:
        trace.inverted = True
        image = -image

    if with_trace:
        return image, target, trace
    return image, target
