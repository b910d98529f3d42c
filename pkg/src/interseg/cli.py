"""Batch benchmark CLI (installed as ``bench``).

Subcommands: ``run`` (interactive refinement sessions over a case
manifest), ``scribbles`` (expert-scribble evaluation), ``synth``
(synthetic case generation), ``simulate`` (one refinement-prompt step
exported as raw channels + JSON record), and the stdin/stdout ``bridge``
commands consumed by out-of-process bindings.

Exit code is 0 on success; failures print one machine-readable JSON
error object to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    ScribbleStack,
    SessionConfig,
    aggregate,
    emit,
    run_expert_scribbles,
    run_session,
    session_rng,
)
from .autozoom import ZoomConfig
from .prompts import render_record_channels, simulate_refinement_prompt
from .rng import make_rng
from .segmenters import build_segmenter
from .synth import write_synthetic_cases
from .volio import VolioError, load_case, load_manifest, read_volume, zscore


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _parse_kinds(text: str) -> tuple[str, ...]:
    kinds = tuple(k.strip() for k in text.split(",") if k.strip())
    if not kinds:
        raise CliError("bad_kinds", "at least one interaction kind is required")
    return kinds


def _session_config(args) -> SessionConfig:
    zoom = ZoomConfig(
        patch=args.patch,
        zoom_step=args.zoom_step,
        zoom_cap=args.zoom_cap,
        border_threshold=args.border_threshold,
        border_mode=args.border_mode,
        stride_fraction=args.stride_fraction,
    )
    return SessionConfig(
        agent=args.agent,
        kinds=_parse_kinds(args.kinds),
        n_followups=args.followups,
        keep_prob=args.keep_prob,
        initial_kind=args.initial_kind,
        autozoom=args.autozoom == "on",
        patch=args.patch,
        timing=args.timing,
        zoom=zoom,
    )


def _case_gt(case) -> np.ndarray:
    gt = case.labels == case.manifest.target_instance
    if not gt.any():
        raise CliError(
            "empty_target",
            f"{case.case_id}: instance {case.manifest.target_instance} is empty",
        )
    return gt


def _run_one_case(manifest_entry, cfg: SessionConfig, segmenter_spec: str, seed: int):
    case = load_case(manifest_entry)
    gt = _case_gt(case)
    segmenter = build_segmenter(segmenter_spec, seed=seed)
    rng = session_rng(seed, case.case_id)
    return run_session(
        case.image, gt, segmenter, cfg, rng,
        case_id=case.case_id, dataset=case.manifest.dataset,
    )


def _cmd_run(args) -> int:
    cases = load_manifest(args.manifest)
    cfg = _session_config(args)
    formats = tuple(f.strip() for f in args.format.split(","))
    logs, failures = [], []
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = {
                pool.submit(_run_one_case, entry, cfg, args.segmenter, args.seed): entry
                for entry in cases
            }
            for future, entry in futures.items():
                try:
                    logs.append(future.result())
                except Exception as exc:  # noqa: BLE001 - per-case isolation
                    failures.append({"case": entry.case_id, "error": str(exc)})
    else:
        for entry in cases:
            try:
                logs.append(_run_one_case(entry, cfg, args.segmenter, args.seed))
            except Exception as exc:  # noqa: BLE001
                failures.append({"case": entry.case_id, "error": str(exc)})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if logs:
        logs.sort(key=lambda log: log.case_id)
        report = aggregate(logs)
        emit(report, out_dir, formats)
        if not args.no_plots:
            from .plots import render_report_figures

            render_report_figures(report, out_dir)
    if failures:
        (out_dir / "errors.json").write_text(
            json.dumps({"failures": failures}, sort_keys=True, indent=2) + "\n"
        )
        raise CliError("case_failures", f"{len(failures)} case(s) failed; see errors.json")
    return 0


def _load_scribble_stack(case) -> ScribbleStack:
    if case.manifest.scribbles is None:
        raise CliError("no_scribbles", f"{case.case_id}: manifest has no scribbles path")
    vol = read_volume(case.manifest.scribbles)
    labels = np.rint(vol.data).astype(np.int32)
    axis = case.manifest.scribble_axis
    entries = []
    for index in range(labels.shape[axis]):
        plane = labels.take(index, axis=axis)
        for value, polarity in ((1, "positive"), (2, "negative")):
            mask = plane == value
            if mask.any():
                entries.append((index, polarity, mask))
    return ScribbleStack(axis=axis, entries=entries)


def _cmd_scribbles(args) -> int:
    cases = load_manifest(args.manifest)
    cfg = _session_config(args)
    formats = tuple(f.strip() for f in args.format.split(","))
    logs, failures = [], []
    for entry in cases:
        try:
            case = load_case(entry)
            gt = _case_gt(case)
            stack = _load_scribble_stack(case)
            segmenter = build_segmenter(args.segmenter, seed=args.seed)
            logs.append(
                run_expert_scribbles(
                    case.image, gt, stack, segmenter, cfg, mode=args.mode,
                    case_id=case.case_id, dataset=case.manifest.dataset,
                )
            )
        except Exception as exc:  # noqa: BLE001
            failures.append({"case": entry.case_id, "error": str(exc)})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if logs:
        report = aggregate(logs)
        emit(report, out_dir, formats)
        if not args.no_plots:
            from .plots import render_report_figures

            render_report_figures(report, out_dir)
    if failures:
        (out_dir / "errors.json").write_text(
            json.dumps({"failures": failures}, sort_keys=True, indent=2) + "\n"
        )
        raise CliError("case_failures", f"{len(failures)} case(s) failed; see errors.json")
    return 0


def _cmd_synth(args) -> int:
    manifest = write_synthetic_cases(
        args.out, args.cases, args.seed, size=args.size, file_format=args.file_format
    )
    print(str(manifest))
    return 0


def _read_mask_volume(path) -> np.ndarray:
    return read_volume(path).data > 0.5


def _cmd_simulate(args) -> int:
    gt = _read_mask_volume(args.gt)
    pred = _read_mask_volume(args.pred) if args.pred else np.zeros_like(gt)
    if gt.shape != pred.shape:
        raise CliError("shape_mismatch", f"gt {gt.shape} vs pred {pred.shape}")
    rng = make_rng(args.seed, 0)
    record = simulate_refinement_prompt(
        gt, pred, args.kind, rng,
        alpha=args.alpha, point_radius=args.radius,
        scribble_width=args.width, enable_box3d=args.kind == "bbox3d",
    )
    base = Path(args.out)
    base.parent.mkdir(parents=True, exist_ok=True)
    bin_path = base.with_suffix(".bin")
    json_path = base.with_suffix(".json")
    if record is None:
        bin_path.write_bytes(b"")
        json_path.write_text(json.dumps({"status": "no_components"}, sort_keys=True) + "\n")
        return 0
    block = render_record_channels(record, gt.shape, enable_box3d=args.kind == "bbox3d")
    payload = b"".join(np.asfortranarray(ch).tobytes(order="F") for ch in block)
    bin_path.write_bytes(payload)
    from .prompts import CHANNEL_NAMES

    descriptor = {
        "status": "ok",
        "version": __version__,
        "shape": list(gt.shape),
        "channels": int(block.shape[0]),
        "channel_names": list(CHANNEL_NAMES[2 : 2 + block.shape[0]]),
        "dtype": "float32",
        "order": "x-fastest",
        "record": record.summary(),
    }
    json_path.write_text(json.dumps(descriptor, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------------------
# stdin/stdout bridge protocol


def _bridge_read(stdin) -> tuple[dict, bytes]:
    line = stdin.readline()
    if not line:
        raise CliError("bad_request", "missing JSON header line")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CliError("bad_request", f"malformed header: {exc}") from exc
    payload = stdin.read()
    return header, payload


def _array_from_payload(payload: bytes, offset: int, shape, dtype) -> tuple[np.ndarray, int]:
    count = int(np.prod(shape))
    itemsize = np.dtype(dtype).itemsize
    end = offset + count * itemsize
    if end > len(payload):
        raise CliError(
            "bad_layout",
            f"payload too short: wanted {end} bytes, have {len(payload)}",
        )
    arr = np.frombuffer(payload[offset:end], dtype=dtype).reshape(shape, order="F")
    return np.ascontiguousarray(arr), end


def _check_shape(header) -> tuple[int, int, int]:
    shape = header.get("shape")
    if (
        not isinstance(shape, list)
        or len(shape) != 3
        or not all(isinstance(n, int) and n > 0 for n in shape)
    ):
        raise CliError("bad_layout", f"shape must be 3 positive ints, got {shape!r}")
    return tuple(shape)


def _cmd_bridge_simulate(args, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    header, payload = _bridge_read(stdin)
    shape = _check_shape(header)
    kind = header.get("kind", "point")
    seed = int(header.get("seed", 0))
    count = int(np.prod(shape))
    if len(payload) != 2 * count:
        raise CliError(
            "bad_layout", f"expected {2 * count} payload bytes (gt+pred uint8), got {len(payload)}"
        )
    gt, offset = _array_from_payload(payload, 0, shape, np.uint8)
    pred, _ = _array_from_payload(payload, offset, shape, np.uint8)
    enable_box3d = bool(header.get("enable_box3d", kind == "bbox3d"))
    rng = make_rng(seed, 0)
    record = simulate_refinement_prompt(
        gt > 0, pred > 0, kind, rng,
        alpha=float(header.get("alpha", 8)),
        point_radius=int(header.get("radius", 4)),
        scribble_width=int(header.get("width", 3)),
        enable_box3d=enable_box3d,
    )
    if record is None:
        stdout.write(
            (json.dumps({"status": "no_components", "version": __version__}, sort_keys=True) + "\n").encode()
        )
        stdout.flush()
        return 0
    block = render_record_channels(record, shape, enable_box3d=enable_box3d)
    from .prompts import CHANNEL_NAMES

    head = {
        "status": "ok",
        "version": __version__,
        "shape": list(shape),
        "channels": int(block.shape[0]),
        "channel_names": list(CHANNEL_NAMES[2 : 2 + block.shape[0]]),
        "record": record.summary(),
    }
    stdout.write((json.dumps(head, sort_keys=True) + "\n").encode())
    for ch in block:
        stdout.write(np.asfortranarray(ch).tobytes(order="F"))
    stdout.flush()
    return 0


def _cmd_bridge_session(args, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    header, payload = _bridge_read(stdin)
    shape = _check_shape(header)
    config = header.get("config") or {}
    for key in ("seed",):
        if key not in config:
            raise CliError("bad_config", f"missing required config key {key!r}")
    count = int(np.prod(shape))
    if len(payload) != count * 4 + count:
        raise CliError(
            "bad_layout",
            f"expected {count * 4 + count} payload bytes (float32 image + uint8 gt), got {len(payload)}",
        )
    image, offset = _array_from_payload(payload, 0, shape, "<f4")
    gt, _ = _array_from_payload(payload, offset, shape, np.uint8)
    normalized, _ = zscore(image)
    cfg = SessionConfig(
        agent=str(config.get("agent", "random")),
        kinds=tuple(config.get("kinds", ["point", "scribble", "lasso", "bbox2d"])),
        n_followups=int(config.get("followups", 5)),
        keep_prob=float(config.get("keep_prob", 0.9)),
        initial_kind=config.get("initial_kind"),
        autozoom=bool(config.get("autozoom", False)),
        patch=int(config.get("patch", 192)),
        timing="fixed",
    )
    seed = int(config["seed"])
    case_id = str(config.get("case_id", "case"))
    segmenter = build_segmenter(str(config.get("segmenter", "noisy")), seed=seed)
    rng = session_rng(seed, case_id)
    log = run_session(normalized, gt > 0, segmenter, cfg, rng, case_id=case_id)
    head = {"status": "ok", "version": __version__, "log": log.to_json_dict()}
    stdout.write((json.dumps(head, sort_keys=True) + "\n").encode())
    stdout.flush()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bench", description="Interactive-segmentation simulation benchmark."
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_session_args(p):
        p.add_argument("--manifest", required=True)
        p.add_argument("--segmenter", default="gt")
        p.add_argument("--agent", default="random", choices=("random", "sunkcost", "single"))
        p.add_argument("--kinds", default="point,scribble,lasso,bbox2d")
        p.add_argument("--followups", type=int, default=5)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--autozoom", default="off", choices=("on", "off"))
        p.add_argument("--out", required=True)
        p.add_argument("--format", default="csv,json")
        p.add_argument("--patch", type=int, default=192)
        p.add_argument("--zoom-step", type=float, default=1.5)
        p.add_argument("--zoom-cap", type=float, default=4.0)
        p.add_argument("--border-threshold", type=int, default=1000)
        p.add_argument("--border-mode", default="absolute", choices=("absolute", "relative"))
        p.add_argument("--stride-fraction", type=float, default=0.5)
        p.add_argument("--keep-prob", type=float, default=0.9)
        p.add_argument("--initial-kind", default=None)
        p.add_argument("--timing", default="wall", choices=("wall", "fixed"))
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--no-plots", action="store_true")

    p_run = sub.add_parser("run", help="interactive refinement sessions")
    add_session_args(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_scr = sub.add_parser("scribbles", help="expert-scribble evaluation")
    add_session_args(p_scr)
    p_scr.add_argument("--mode", default="all", choices=("all", "three"))
    p_scr.set_defaults(func=_cmd_scribbles)

    p_synth = sub.add_parser("synth", help="generate synthetic cases + manifest")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--cases", type=int, default=10)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--size", type=int, default=64)
    p_synth.add_argument("--file-format", default="nifti", choices=("nifti", "raw"))
    p_synth.set_defaults(func=_cmd_synth)

    p_sim = sub.add_parser("simulate", help="one refinement-prompt step to files")
    p_sim.add_argument("--gt", required=True)
    p_sim.add_argument("--pred", default=None)
    p_sim.add_argument("--kind", default="point")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--alpha", type=float, default=8)
    p_sim.add_argument("--radius", type=int, default=4)
    p_sim.add_argument("--width", type=int, default=3)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=_cmd_simulate)

    p_bs = sub.add_parser("bridge-simulate", help="stdin/stdout prompt simulation")
    p_bs.set_defaults(func=_cmd_bridge_simulate)

    p_br = sub.add_parser("bridge-session", help="stdin/stdout session run")
    p_br.set_defaults(func=_cmd_bridge_session)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(json.dumps({"error": {"code": exc.code, "message": str(exc)}}) + "\n")
        return 1
    except VolioError as exc:
        sys.stderr.write(json.dumps({"error": {"code": exc.code, "message": str(exc)}}) + "\n")
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort machine-readable error
        sys.stderr.write(
            json.dumps({"error": {"code": "internal", "message": f"{type(exc).__name__}: {exc}"}})
            + "\n"
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
