"""Interactive refinement sessions and batch benchmarking.

A session drives a segmenter through an initial prompt plus N corrective
follow-ups, recording Dice after every prediction. Sessions are pure
functions of (volume, reference, config, rng): the per-case rng stream
is derived from the master seed and the case id, so results are
independent of worker scheduling.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import AgentState, next_interaction_kind
from .autozoom import ZoomConfig, initial_roi, run_autozoom
from .errors import FN, ErrorComponent, compute_error_components, select_component
from .prompts import (
    NEGATIVE,
    POSITIVE,
    Geometry,
    InteractionRecord,
    PromptChannels,
    generate_malformed_segmentation,
    simulate_for_kind,
)
from .rng import make_rng, stream_id
from .volcore import SliceRef, Volume3D, dice, mask_bbox

DEFAULT_KINDS = ("point", "scribble", "lasso", "bbox2d")


@dataclass
class SessionConfig:
    agent: str = "random"
    kinds: tuple[str, ...] = DEFAULT_KINDS
    n_followups: int = 5
    keep_prob: float = 0.9
    initial_kind: str | None = None
    autozoom: bool = False
    patch: int = 192
    point_alpha: float = 8
    point_radius: int = 4
    scribble_width: int = 3
    exclude_current: bool = False
    zoom: ZoomConfig = field(default_factory=ZoomConfig)
    timing: str = "wall"  # wall | fixed

    def __post_init__(self) -> None:
        if self.n_followups < 0:
            raise ValueError("n_followups must be >= 0")
        if not self.kinds:
            raise ValueError("allowed kinds must be nonempty")
        if self.timing not in ("wall", "fixed"):
            raise ValueError("timing must be wall or fixed")
        self.zoom.patch = self.patch


@dataclass
class IterationEntry:
    iteration: int
    kind: str | None  # None on early-exit padding
    polarity: str | None
    dice: float
    millis: float


@dataclass
class SessionLog:
    case_id: str
    dataset: str
    entries: list[IterationEntry]
    early_exit: bool = False
    records: list[dict] = field(default_factory=list)
    # full geometry, for in-process consumers; never serialized
    interaction_records: list[InteractionRecord] = field(default_factory=list)
    final_mask_path: str | None = None

    @property
    def dice_curve(self) -> list[float]:
        return [e.dice for e in self.entries]

    def to_json_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "dataset": self.dataset,
            "early_exit": self.early_exit,
            "iterations": [
                {
                    "iteration": e.iteration,
                    "kind": e.kind,
                    "polarity": e.polarity,
                    "dice": e.dice,
                    "millis": e.millis,
                }
                for e in self.entries
            ],
            "records": self.records,
        }


def _predict(segmenter, volume, channels, gt, cfg: SessionConfig) -> np.ndarray:
    """One prediction pass: adaptive zoom when enabled, else one prompt ROI."""
    if cfg.autozoom:
        return run_autozoom(segmenter, volume, channels, cfg.zoom, gt=gt).mask
    bbox = channels.prompt_bbox() or tuple((0, n) for n in volume.shape)
    # single native-resolution patch window around the prompt, no zoom-out
    roi = initial_roi(bbox, cfg.patch, volume.shape, ZoomConfig(patch=cfg.patch, zoom_cap=1.0))
    window = roi.window
    stack = channels.materialize(roi.origin, roi.extent)
    gt_patch = gt[window] if getattr(segmenter, "requires_gt", False) else None
    probs = segmenter.predict(stack[0], stack, gt_patch)
    full = np.zeros(volume.shape, dtype=bool)
    full[window] = probs >= 0.5
    return full


def _simulate_initial(
    gt: np.ndarray, kind: str, cfg: SessionConfig, channels: PromptChannels, rng
) -> InteractionRecord:
    """Initial prompt: the whole reference treated as one FN component."""
    if kind == "initial_mask":
        malformed = generate_malformed_segmentation(gt, rng)
        return InteractionRecord(
            kind="initial_mask",
            polarity=POSITIVE,
            geometry=Geometry(origin=(0, 0, 0), values=malformed.astype(np.float32)),
            iteration=0,
        )
    component = ErrorComponent.from_mask(FN, np.asarray(gt, dtype=bool))
    return simulate_for_kind(
        component,
        kind,
        rng,
        POSITIVE,
        iteration=0,
        alpha=cfg.point_alpha,
        point_radius=cfg.point_radius,
        scribble_width=cfg.scribble_width,
        enable_box3d=channels.enable_box3d,
    )


def run_session(
    volume: Volume3D | np.ndarray,
    gt_mask: np.ndarray,
    segmenter,
    cfg: SessionConfig,
    rng: np.random.Generator,
    case_id: str = "case",
    dataset: str = "default",
) -> SessionLog:
    """One interactive refinement session; log length is n_followups + 1.

    Iteration 0 prompts from the reference directly; each follow-up
    computes error components against the current prediction, selects one
    (size-proportional), lets the agent choose the interaction kind, and
    applies the simulated prompt with decay before re-predicting. A step
    with no error components ends the session early and pads the log with
    the final Dice.
    """
    data = volume.data if isinstance(volume, Volume3D) else volume
    gt = np.asarray(gt_mask, dtype=bool)
    if not gt.any():
        raise ValueError("reference mask must be nonempty")
    if data.shape != gt.shape:
        raise ValueError("volume and reference shapes differ")

    enable_box3d = "bbox3d" in cfg.kinds
    channels = PromptChannels(data.astype(np.float32, copy=False), enable_box3d=enable_box3d)
    agent_kinds = tuple(k for k in cfg.kinds if k != "initial_mask")
    first_kind = cfg.initial_kind or agent_kinds[int(rng.integers(len(agent_kinds)))]
    agent = AgentState(
        policy=cfg.agent,
        current=first_kind if first_kind in agent_kinds else agent_kinds[0],
        allowed=agent_kinds,
        keep_prob=cfg.keep_prob,
        exclude_current=cfg.exclude_current,
    )

    log = SessionLog(case_id=case_id, dataset=dataset, entries=[])

    def clock() -> float:
        return time.perf_counter() if cfg.timing == "wall" else 0.0

    t0 = clock()
    record = _simulate_initial(gt, first_kind, cfg, channels, rng)
    channels.apply_interaction(record)
    pred = _predict(segmenter, data, channels, gt, cfg)
    millis = (clock() - t0) * 1000.0
    score = dice(pred, gt)
    log.entries.append(IterationEntry(0, record.kind, record.polarity, score, millis))
    log.records.append(record.summary())
    log.interaction_records.append(record)

    for iteration in range(1, cfg.n_followups + 1):
        kind = next_interaction_kind(agent, rng)
        t0 = clock()
        fragment = kind in ("bbox2d", "lasso", "bbox3d")
        components = compute_error_components(gt, pred, fragment=fragment, rng=rng)
        if not components:
            log.early_exit = True
            break
        component = select_component(components, rng)
        polarity = POSITIVE if component.kind == FN else NEGATIVE
        record = simulate_for_kind(
            component,
            kind,
            rng,
            polarity,
            iteration=iteration,
            alpha=cfg.point_alpha,
            point_radius=cfg.point_radius,
            scribble_width=cfg.scribble_width,
            enable_box3d=enable_box3d,
        )
        channels.apply_interaction(record, prediction=pred)
        pred = _predict(segmenter, data, channels, gt, cfg)
        millis = (clock() - t0) * 1000.0
        score = dice(pred, gt)
        log.entries.append(IterationEntry(iteration, record.kind, record.polarity, score, millis))
        log.records.append(record.summary())
        log.interaction_records.append(record)

    while len(log.entries) < cfg.n_followups + 1:
        last = log.entries[-1]
        log.entries.append(
            IterationEntry(len(log.entries), None, None, last.dice, 0.0)
        )
    return log


@dataclass
class ScribbleStack:
    """Per-slice expert scribbles along one axis."""

    axis: int
    entries: list[tuple[int, str, np.ndarray]]  # (slice index, polarity, 2D mask)

    def annotated_indices(self) -> list[int]:
        return sorted({idx for idx, _, _ in self.entries})


def select_three_slices(indices: list[int]) -> list[int]:
    """Top, middle, bottom annotated slices (floor midpoint, deduplicated)."""
    if not indices:
        raise ValueError("no annotated slices")
    lo, hi = min(indices), max(indices)
    mid_target = (lo + hi) // 2
    annotated = sorted(set(indices))
    mid = min(annotated, key=lambda i: (abs(i - mid_target), i))
    out = []
    for idx in (lo, mid, hi):
        if idx not in out:
            out.append(idx)
    return out


def run_expert_scribbles(
    volume: Volume3D | np.ndarray,
    gt_mask: np.ndarray,
    stack: ScribbleStack,
    segmenter,
    cfg: SessionConfig,
    mode: str = "all",
    case_id: str = "case",
    dataset: str = "default",
) -> SessionLog:
    """Feed expert scribbles as one combined prompt and predict once.

    Mode ``all`` uses every annotated slice; mode ``three`` keeps the
    lowest, floor-midpoint, and highest annotated slice indices.
    """
    if mode not in ("all", "three"):
        raise ValueError("mode must be all or three")
    if not stack.entries:
        raise ValueError("empty scribble stack")
    data = volume.data if isinstance(volume, Volume3D) else volume
    gt = np.asarray(gt_mask, dtype=bool)

    keep = set(stack.annotated_indices())
    if mode == "three":
        keep = set(select_three_slices(stack.annotated_indices()))

    channels = PromptChannels(data.astype(np.float32, copy=False))
    n_fed = 0
    for index, polarity, mask2d in stack.entries:
        if index not in keep or not mask2d.any():
            continue
        ref = SliceRef(axis=stack.axis, index=index)
        dense = ref.embed(mask2d.astype(np.float32), data.shape, dtype=np.float32)
        bbox = mask_bbox(dense > 0)
        window = tuple(slice(lo, hi) for lo, hi in bbox)
        record = InteractionRecord(
            kind="scribble",
            polarity=polarity,
            geometry=Geometry(
                origin=tuple(lo for lo, _ in bbox), values=dense[window]
            ),
            slice_ref=ref,
        )
        channels.add(record)  # combined prompt: no decay between scribbles
        n_fed += 1
    if n_fed == 0:
        raise ValueError("no usable scribbles after slice selection")

    t0 = time.perf_counter() if cfg.timing == "wall" else 0.0
    pred = _predict(segmenter, data, channels, gt, cfg)
    millis = ((time.perf_counter() if cfg.timing == "wall" else 0.0) - t0) * 1000.0
    log = SessionLog(case_id=case_id, dataset=dataset, entries=[])
    log.entries.append(IterationEntry(0, "scribble", "mixed", dice(pred, gt), millis))
    return log


@dataclass
class MetricsReport:
    cases: dict  # case_id -> {dataset, curve, kinds, millis, auc}
    datasets: dict  # dataset -> {curve, auc, n_cases}
    overall_curve: list[float]
    overall_auc: float

    def to_json_dict(self) -> dict:
        return {
            "cases": self.cases,
            "datasets": self.datasets,
            "overall": {"curve": self.overall_curve, "auc": self.overall_auc},
        }


def aggregate(logs: list[SessionLog]) -> MetricsReport:
    """Per-iteration means per dataset; AUC is the unweighted mean of the
    per-iteration Dice values (per case, then averaged per dataset)."""
    if not logs:
        raise ValueError("no session logs to aggregate")
    cases = {}
    by_dataset: dict[str, list[SessionLog]] = {}
    for log in logs:
        curve = log.dice_curve
        cases[log.case_id] = {
            "dataset": log.dataset,
            "curve": curve,
            "kinds": [e.kind for e in log.entries],
            "millis": [e.millis for e in log.entries],
            "auc": float(np.mean(curve)),
            "early_exit": log.early_exit,
        }
        by_dataset.setdefault(log.dataset, []).append(log)
    datasets = {}
    for name, group in sorted(by_dataset.items()):
        curves = np.array([g.dice_curve for g in group], dtype=np.float64)
        mean_curve = curves.mean(axis=0)
        datasets[name] = {
            "curve": [float(v) for v in mean_curve],
            "auc": float(mean_curve.mean()),
            "n_cases": len(group),
        }
    all_curves = np.array([log.dice_curve for log in logs], dtype=np.float64)
    overall = all_curves.mean(axis=0)
    return MetricsReport(
        cases=cases,
        datasets=datasets,
        overall_curve=[float(v) for v in overall],
        overall_auc=float(overall.mean()),
    )


def emit(report: MetricsReport, out_dir, formats=("csv", "json")) -> list[Path]:
    """Write report.csv / report.json; byte-stable for identical reports."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        lines = ["case,iter,kind,dice,ms"]
        for case_id in sorted(report.cases):
            entry = report.cases[case_id]
            for it, (kind, score, ms) in enumerate(
                zip(entry["kinds"], entry["curve"], entry["millis"])
            ):
                lines.append(f"{case_id},{it},{kind or ''},{score!r},{ms!r}")
        path = out_dir / "report.csv"
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    if "json" in formats:
        path = out_dir / "report.json"
        path.write_text(
            json.dumps(report.to_json_dict(), sort_keys=True, separators=(",", ":")) + "\n"
        )
        written.append(path)
    return written


def session_rng(master_seed: int, case_id: str) -> np.random.Generator:
    """The per-case stream: (master seed, stable hash of the case id)."""
    return make_rng(master_seed, stream_id(case_id))
