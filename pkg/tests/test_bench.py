import json
import subprocess
import sys

import numpy as np
import pytest

from interseg.bench import (
    ScribbleStack,
    SessionConfig,
    SessionLog,
    IterationEntry,
    aggregate,
    emit,
    run_expert_scribbles,
    run_session,
    select_three_slices,
    session_rng,
)
from interseg.cli import main as cli_main
from interseg.rng import make_rng
from interseg.segmenters import GtOracle, NoisyOracle
from interseg.synth import synthetic_case
from interseg.volcore import dice, morphology, skeletonize2d

from conftest import sphere_mask


def _case(seed=0, size=40):
    volume, gt = synthetic_case(seed, size)
    return volume, gt


def _cfg(**kw):
    defaults = dict(agent="random", n_followups=5, timing="fixed", patch=64)
    defaults.update(kw)
    return SessionConfig(**defaults)


class TestRunSession:
    def test_gt_oracle_perfect_and_early_exit(self):
        volume, gt = _case(1)
        log = run_session(volume, gt, GtOracle(), _cfg(), session_rng(7, "c"), "c")
        assert len(log.entries) == 6
        assert all(e.dice == 1.0 for e in log.entries)
        assert log.early_exit
        # padded iterations carry no interaction
        assert log.entries[1].kind is None

    def test_noisy_improves(self):
        volume, gt = _case(2)
        seg = NoisyOracle(seed=3, tau=1200.0)
        log = run_session(volume, gt, seg, _cfg(), session_rng(11, "c"), "c")
        assert log.entries[-1].dice > log.entries[0].dice

    def test_deterministic_logs(self):
        volume, gt = _case(3)
        out = []
        for _ in range(2):
            seg = NoisyOracle(seed=5, tau=900.0)
            log = run_session(volume, gt, seg, _cfg(), session_rng(13, "c"), "c")
            out.append(json.dumps(log.to_json_dict(), sort_keys=True))
        assert out[0] == out[1]

    def test_polarity_correctness(self):
        volume, gt = _case(4)
        seg = NoisyOracle(seed=9, tau=2000.0)
        log = run_session(
            volume, gt, seg, _cfg(n_followups=6), session_rng(17, "c"), "c"
        )
        checked = 0
        for rec in log.interaction_records:
            if rec.seed_geometry is None:
                continue
            seed_mask = rec.seed_geometry.to_dense(gt.shape).astype(bool)
            if rec.polarity == "positive":
                assert (seed_mask & gt).any()
            else:
                assert not (seed_mask & gt).any()
            checked += 1
        assert checked >= 2

    def test_initial_kind_pinned(self):
        volume, gt = _case(5)
        log = run_session(
            volume, gt, GtOracle(), _cfg(initial_kind="lasso"), session_rng(1, "c"), "c"
        )
        assert log.entries[0].kind == "lasso"

    def test_empty_gt_rejected(self):
        volume, gt = _case(6)
        with pytest.raises(ValueError):
            run_session(volume, np.zeros_like(gt), GtOracle(), _cfg(), make_rng(0))

    def test_log_length_without_early_exit(self):
        volume, gt = _case(7)
        seg = NoisyOracle(seed=2, tau=1e9)  # never converges
        log = run_session(volume, gt, seg, _cfg(n_followups=3), session_rng(3, "c"), "c")
        assert len(log.entries) == 4
        assert not log.early_exit


class TestExpertScribbles:
    def test_three_slice_selection(self):
        assert select_three_slices(list(range(3, 11))) == [3, 6, 10]

    def test_single_slice_deduplicated(self):
        assert select_three_slices([4]) == [4]

    def test_closest_annotated_midpoint(self):
        assert select_three_slices([0, 9, 10]) == [0, 9, 10]  # floor mid 5 -> nearest is 9

    def _stack_from_gt(self, gt, axis=2, every=1):
        entries = []
        for index in range(0, gt.shape[axis], every):
            plane = gt.take(index, axis=axis)
            if not plane.any():
                continue
            skel = skeletonize2d(plane)
            if skel.any():
                entries.append((index, "positive", skel))
        return ScribbleStack(axis=axis, entries=entries)

    def test_all_mode_gt_oracle(self):
        volume, gt = _case(8)
        stack = self._stack_from_gt(gt)
        log = run_expert_scribbles(volume, gt, stack, GtOracle(), _cfg(), mode="all")
        assert log.entries[0].dice == 1.0
        assert len(log.entries) == 1

    def test_three_mode_uses_three_slices(self):
        volume, gt = _case(9)
        stack = self._stack_from_gt(gt)
        log = run_expert_scribbles(volume, gt, stack, GtOracle(), _cfg(), mode="three")
        assert log.entries[0].dice == 1.0

    def test_empty_stack_rejected(self):
        volume, gt = _case(10)
        with pytest.raises(ValueError):
            run_expert_scribbles(
                volume, gt, ScribbleStack(axis=2, entries=[]), GtOracle(), _cfg()
            )


def _fake_log(case_id, dataset, curve, kinds=None):
    entries = [
        IterationEntry(i, (kinds or ["point"] * len(curve))[i], "positive", d, 1.0)
        for i, d in enumerate(curve)
    ]
    return SessionLog(case_id=case_id, dataset=dataset, entries=entries)


class TestAggregateEmit:
    def test_auc_is_mean(self):
        report = aggregate([_fake_log("a", "d", [0.5, 0.7, 0.9])])
        assert report.cases["a"]["auc"] == pytest.approx(0.7)
        assert report.overall_auc == pytest.approx(0.7)

    def test_identical_logs_dataset_curve(self):
        logs = [_fake_log(f"c{i}", "d", [0.4, 0.6]) for i in range(4)]
        report = aggregate(logs)
        assert report.datasets["d"]["curve"] == [0.4, 0.6]

    def test_emit_byte_stable(self, tmp_path):
        logs = [_fake_log("a", "d", [0.5, 1.0]), _fake_log("b", "e", [0.25, 0.75])]
        r1 = aggregate(logs)
        paths1 = emit(r1, tmp_path / "one")
        paths2 = emit(aggregate(logs), tmp_path / "two")
        for p1, p2 in zip(paths1, paths2):
            assert p1.read_bytes() == p2.read_bytes()

    def test_csv_columns(self, tmp_path):
        report = aggregate([_fake_log("a", "d", [0.5], kinds=["lasso"])])
        (csv_path, _) = emit(report, tmp_path)
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "case,iter,kind,dice,ms"
        assert lines[1].startswith("a,0,lasso,0.5,")


class TestCli:
    def _synth(self, tmp_path, cases=3, fmt="nifti", size=28):
        out = tmp_path / "cases"
        rc = cli_main(
            [
                "synth", "--out", str(out), "--cases", str(cases),
                "--seed", "5", "--size", str(size), "--file-format", fmt,
            ]
        )
        assert rc == 0
        return out / "cases.json"

    def test_run_gt_oracle(self, tmp_path, capsys):
        manifest = self._synth(tmp_path)
        out = tmp_path / "report"
        rc = cli_main(
            [
                "run", "--manifest", str(manifest), "--segmenter", "gt",
                "--agent", "random", "--followups", "2", "--seed", "3",
                "--out", str(out), "--timing", "fixed", "--patch", "48",
            ]
        )
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["overall"]["auc"] == 1.0
        assert (out / "report.csv").exists()
        assert (out / "dice_curves.png").exists()

    def test_run_deterministic_bytes(self, tmp_path):
        manifest = self._synth(tmp_path)
        blobs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            rc = cli_main(
                [
                    "run", "--manifest", str(manifest), "--segmenter", "noisy",
                    "--followups", "2", "--seed", "9", "--out", str(out),
                    "--timing", "fixed", "--patch", "48", "--no-plots",
                ]
            )
            assert rc == 0
            blobs.append(
                ((out / "report.csv").read_bytes(), (out / "report.json").read_bytes())
            )
        assert blobs[0] == blobs[1]

    def test_error_json_on_bad_manifest(self, tmp_path, capsys):
        rc = cli_main(
            ["run", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]
        )
        assert rc != 0
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert "error" in err and err["error"]["code"]

    def test_scribbles_mode_three(self, tmp_path):
        manifest_path = self._synth(tmp_path, cases=1, size=24)
        # attach a scribble volume: positive strokes on annotated slices
        from interseg.volio import load_manifest, read_volume, write_nifti

        entry = load_manifest(manifest_path)[0]
        label = read_volume(entry.label).data > 0.5
        scrib = np.zeros(label.shape, dtype=np.uint8)
        for index in range(label.shape[2]):
            plane = label[:, :, index]
            if plane.any():
                skel = skeletonize2d(plane)
                scrib[:, :, index][skel] = 1
        write_nifti(scrib, tmp_path / "cases" / "scrib.nii.gz", datatype=np.uint8)
        doc = json.loads(manifest_path.read_text())
        doc["cases"][0]["scribbles"] = "scrib.nii.gz"
        doc["cases"][0]["scribble_axis"] = 2
        manifest_path.write_text(json.dumps(doc))
        out = tmp_path / "scrout"
        rc = cli_main(
            [
                "scribbles", "--manifest", str(manifest_path), "--segmenter", "gt",
                "--mode", "three", "--out", str(out), "--timing", "fixed",
                "--patch", "48", "--no-plots",
            ]
        )
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["overall"]["auc"] == 1.0

    def test_run_with_autozoom(self, tmp_path):
        manifest = self._synth(tmp_path, cases=2, size=30)
        out = tmp_path / "az"
        rc = cli_main(
            [
                "run", "--manifest", str(manifest), "--segmenter", "gt",
                "--followups", "1", "--seed", "5", "--out", str(out),
                "--timing", "fixed", "--patch", "24", "--autozoom", "on",
                "--no-plots",
            ]
        )
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["overall"]["auc"] == 1.0

    def test_initial_mask_prompt(self, tmp_path):
        manifest = self._synth(tmp_path, cases=1, size=26)
        out = tmp_path / "im"
        rc = cli_main(
            [
                "run", "--manifest", str(manifest), "--segmenter", "noisy",
                "--followups", "2", "--seed", "6", "--out", str(out),
                "--timing", "fixed", "--patch", "48",
                "--initial-kind", "initial_mask", "--no-plots",
            ]
        )
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["cases"]["case000"]["kinds"][0] == "initial_mask"

    def test_worker_pool_scheduling_invariant(self, tmp_path):
        manifest = self._synth(tmp_path, cases=4, size=24)
        blobs = []
        for workers in ("1", "2"):
            out = tmp_path / f"w{workers}"
            rc = cli_main(
                [
                    "run", "--manifest", str(manifest), "--segmenter", "noisy",
                    "--followups", "2", "--seed", "5", "--out", str(out),
                    "--timing", "fixed", "--patch", "48", "--workers", workers,
                    "--no-plots",
                ]
            )
            assert rc == 0
            blobs.append((out / "report.csv").read_bytes())
        assert blobs[0] == blobs[1]

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli_main(["--version"])
        assert exc.value.code == 0
