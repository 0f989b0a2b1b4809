"""CLI behavior: subcommands, determinism, exit codes, report math."""

import json
import math

import numpy as np
import pytest

from rigidloc import cli, dataio


def _synth(tmp_path, name="ds", seed=1, extra=""):
    cfg = tmp_path / "scene.cfg"
    cfg.write_text(f"width=8\nheight=8\nseed={seed}\n{extra}")
    out = tmp_path / name
    rc = cli.main(["synth", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    return out


class TestSynth:
    def test_writes_expected_frame_count(self, tmp_path, capsys):
        out = _synth(tmp_path)
        manifest = json.loads((out / "manifest.json").read_text())
        frames = [f for seq in manifest["sequences"] for f in seq["frames"]]
        assert len(frames) == 16
        assert "16 train frames" in capsys.readouterr().out

    def test_rerun_is_byte_identical(self, tmp_path):
        a = _synth(tmp_path, "a", seed=3)
        b = _synth(tmp_path, "b", seed=3)
        for rel in sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()):
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_single_sequence_warns_but_succeeds(self, tmp_path, capsys):
        cfg = tmp_path / "scene.cfg"
        cfg.write_text("width=8\nheight=8\nsequences=1\n")
        rc = cli.main(["synth", "--config", str(cfg), "--out", str(tmp_path / "one")])
        assert rc == 0
        assert "at least 2 sequences" in capsys.readouterr().err

    def test_bad_config_returns_validation_error(self, tmp_path, capsys):
        cfg = tmp_path / "scene.cfg"
        cfg.write_text("width=not_a_number\n")
        rc = cli.main(["synth", "--config", str(cfg), "--out", str(tmp_path / "x")])
        assert rc == 1


class TestTrain:
    def test_train_writes_checkpoint_and_metrics(self, tmp_path):
        ds = _synth(tmp_path)
        run = tmp_path / "run"
        rc = cli.main(
            ["train", str(ds), "--epochs", "3", "--seed", "0", "--out", str(run)]
        )
        assert rc == 0
        assert (run / "checkpoint.json").exists()
        lines = (run / "metrics.jsonl").read_text().strip().splitlines()
        records = [json.loads(l) for l in lines]
        step_records = [r for r in records if "step" in r]
        assert len(step_records) == 3
        assert set(step_records[0]) == {
            "step", "l3d", "l_depth", "l_pose", "l_along", "l_across", "total", "skipped_frames",
        }
        eval_records = [r for r in records if "epoch" in r]
        assert len(eval_records) == 3  # one per epoch

    def test_disable_flags_reproduce_baseline_arm(self, tmp_path):
        ds = _synth(tmp_path)
        run = tmp_path / "run"
        rc = cli.main(
            [
                "train", str(ds),
                "--epochs", "2",
                "--disable", "l_along",
                "--disable", "l_across",
                "--disable", "l_pose",
                "--out", str(run),
            ]
        )
        assert rc == 0
        _, _, cfg = dataio.load_checkpoint(run / "checkpoint.json")
        assert set(cfg.disabled_terms) == {"l_along", "l_across", "l_pose"}
        records = [
            json.loads(l) for l in (run / "metrics.jsonl").read_text().strip().splitlines()
        ]
        steps = [r for r in records if "step" in r]
        assert all(r["l_pose"] == 0.0 and r["l_along"] == 0.0 and r["l_across"] == 0.0 for r in steps)

    def test_sparsity_flag_applies(self, tmp_path):
        ds = _synth(tmp_path)
        run = tmp_path / "run"
        rc = cli.main(
            ["train", str(ds), "--epochs", "2", "--sparsity", "0.05", "--out", str(run)]
        )
        assert rc == 0
        _, _, cfg = dataio.load_checkpoint(run / "checkpoint.json")
        assert cfg.sparsity == 0.05

    def test_flags_win_over_config_file(self, tmp_path):
        ds = _synth(tmp_path)
        train_cfg = tmp_path / "train.cfg"
        train_cfg.write_text("epochs=50\nlr=0.001\n")
        run = tmp_path / "run"
        rc = cli.main(
            ["train", str(ds), "--config", str(train_cfg), "--epochs", "2", "--out", str(run)]
        )
        assert rc == 0
        _, _, cfg = dataio.load_checkpoint(run / "checkpoint.json")
        assert cfg.epochs == 2               # flag wins
        assert cfg.learning_rate == 0.001    # config file applies

    def test_determinism_across_runs(self, tmp_path):
        ds = _synth(tmp_path)
        for name in ("r1", "r2"):
            rc = cli.main(
                ["train", str(ds), "--epochs", "3", "--seed", "5", "--out", str(tmp_path / name)]
            )
            assert rc == 0
        assert (tmp_path / "r1" / "metrics.jsonl").read_bytes() == (
            tmp_path / "r2" / "metrics.jsonl"
        ).read_bytes()
        assert (tmp_path / "r1" / "checkpoint.json").read_bytes() == (
            tmp_path / "r2" / "checkpoint.json"
        ).read_bytes()

    def test_unknown_loss_term_rejected(self, tmp_path):
        ds = _synth(tmp_path)
        rc = cli.main(["train", str(ds), "--epochs", "1", "--disable", "l_bogus"])
        assert rc == 1


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("eval")
    ds = _synth(tmp)
    run = tmp / "run"
    assert cli.main(["train", str(ds), "--epochs", "60", "--out", str(run)]) == 0
    return ds, run / "checkpoint.json"


class TestEval:
    def test_report_medians_match_sorted_recomputation(self, trained, tmp_path):
        ds, ckpt = trained
        out = tmp_path / "report.json"
        rc = cli.main(["eval", str(ckpt), str(ds), "--split", "train", "--out", str(out)])
        assert rc == 0
        report = json.loads(out.read_text())
        errs = sorted(f["translation_error"] for f in report["frames"])
        assert report["median_translation"] == errs[(len(errs) - 1) // 2]
        rots = sorted(f["rotation_error_deg"] for f in report["frames"])
        assert report["median_rotation_deg"] == rots[(len(rots) - 1) // 2]
        assert report["frame_count"] == 16

    def test_heldout_split(self, trained, tmp_path):
        ds, ckpt = trained
        out = tmp_path / "ho.json"
        rc = cli.main(["eval", str(ckpt), str(ds), "--split", "heldout", "--out", str(out)])
        assert rc == 0
        assert json.loads(out.read_text())["frame_count"] == 14

    def test_threads_env_does_not_change_results(self, trained, tmp_path, monkeypatch):
        ds, ckpt = trained
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        monkeypatch.setenv("RIGIDLOC_THREADS", "1")
        assert cli.main(["eval", str(ckpt), str(ds), "--out", str(a)]) == 0
        monkeypatch.setenv("RIGIDLOC_THREADS", "4")
        assert cli.main(["eval", str(ckpt), str(ds), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_perfect_oracle_gives_zero_medians(self, trained, tmp_path, monkeypatch):
        ds, ckpt = trained
        dataset = dataio.load_dataset(ds)
        gt = {
            (f.sequence, f.time): f.target.pose
            for f in dataset.all_train_frames()
        }
        monkeypatch.setattr(cli, "localize", lambda p, s, t: gt[(s, t)])
        predictor, _, _ = dataio.load_checkpoint(ckpt)
        report = cli.evaluate_split(predictor, dataset, "train")
        assert report.median_translation == 0.0
        assert report.median_rotation_deg == 0.0

    def test_even_count_median_is_lower_middle(self):
        # documented tie rule: lower of the two middle values
        from rigidloc.trainer import median_low

        assert median_low([1.0, 2.0, 3.0, 4.0]) == 2.0


class TestAlign:
    def test_recovers_gt_pose_from_synthetic_frame(self, tmp_path, capsys):
        ds = _synth(tmp_path)
        capsys.readouterr()  # drain synth output
        rc = cli.main(
            [
                "align",
                "--points", str(ds / "seq00" / "frame000.points.bin"),
                "--depth", str(ds / "seq00" / "frame000.depth.bin"),
                "--intrinsics", "7,7,4,4",
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        rows = [list(map(float, line.split())) for line in out.strip().splitlines()[:3]]
        got = np.array(rows)
        gt = dataio.read_pose(ds / "seq00" / "frame000.pose.txt").matrix34()
        assert np.abs(got - gt).max() < 1e-9
        assert "cost" in out

    def test_uniform_weight_file_matches_no_weights(self, tmp_path, capsys):
        ds = _synth(tmp_path)
        capsys.readouterr()  # drain synth output
        wpath = tmp_path / "w.weights.bin"
        dataio.write_array(wpath, "weights", np.ones(64), width=8, height=8)
        args_common = [
            "align",
            "--points", str(ds / "seq00" / "frame000.points.bin"),
            "--depth", str(ds / "seq00" / "frame000.depth.bin"),
            "--intrinsics", "7,7,4,4",
        ]
        assert cli.main(args_common) == 0
        out_plain = capsys.readouterr().out
        assert cli.main(args_common + ["--weights", str(wpath)]) == 0
        out_weighted = capsys.readouterr().out
        assert out_plain == out_weighted

    def test_empty_mask_is_numerical_failure(self, tmp_path, capsys):
        ds = _synth(tmp_path)
        mpath = tmp_path / "empty.mask.bin"
        dataio.write_array(mpath, "mask", np.zeros(64, dtype=bool), width=8, height=8)
        rc = cli.main(
            [
                "align",
                "--points", str(ds / "seq00" / "frame000.points.bin"),
                "--depth", str(ds / "seq00" / "frame000.depth.bin"),
                "--intrinsics", "7,7,4,4",
                "--mask", str(mpath),
            ]
        )
        assert rc == 2
        assert "no effective correspondences" in capsys.readouterr().err

    def test_malformed_intrinsics_is_validation_error(self, tmp_path):
        ds = _synth(tmp_path)
        rc = cli.main(
            [
                "align",
                "--points", str(ds / "seq00" / "frame000.points.bin"),
                "--depth", str(ds / "seq00" / "frame000.depth.bin"),
                "--intrinsics", "7,7",
            ]
        )
        assert rc == 1


class TestExitCodes:
    def test_usage_error_is_one(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["bogus-command"])
        assert exc.value.code == 1

    def test_missing_dataset_is_one(self, tmp_path):
        rc = cli.main(["train", str(tmp_path / "nope"), "--epochs", "1"])
        assert rc == 1
