import hashlib
import json
import os

import numpy as np
import pytest

import redt.train as train_mod
from redt.cli import main
from redt.data import load_dataset
from redt.depth import project_labels
from redt.errors import NumericalError
from redt.metrics import CSV_HEADER, RANGE_CSV_HEADER
from redt.model import DepthNet, ModelConfig
from redt.optim import LRSchedule
from redt.report import render_range_plot, text_table
from redt.tensor import Tensor
from redt.tensor_io import read_checkpoint
from redt.train import RunConfig, evaluate, train

from test_model import tiny_config


def _write_dataset(tmp_path, name, scenes=6, seed=7):
    out = str(tmp_path / name)
    rc = main(["gen", "--out", out, "--scenes", str(scenes), "--seed", str(seed), "--size", "32x32"])
    assert rc == 0
    return out


def _tiny_run_config(data_dir, **over):
    cfg = RunConfig(
        data=data_dir,
        model=tiny_config(),
        schedule=LRSchedule(lr_start=1e-4, lr_max=1e-3, lr_end=1e-5, total_iters=over.get("total_iters", 2)),
        batch_size=2,
        accum_steps=1,
        total_iters=2,
        seed=3,
        augment=(),
    )
    for k, v in over.items():
        setattr(cfg, k, v)
    cfg.__post_init__()
    return cfg


def _dir_hash(path):
    h = hashlib.sha256()
    for root, _, files in sorted(os.walk(path)):
        for f in sorted(files):
            h.update(open(os.path.join(root, f), "rb").read())
    return h.hexdigest()


class TestGenCommand:
    def test_deterministic_datasets(self, tmp_path):
        a = _write_dataset(tmp_path, "a", scenes=4, seed=9)
        b = _write_dataset(tmp_path, "b", scenes=4, seed=9)
        assert _dir_hash(a) == _dir_hash(b)

    def test_size_not_divisible_rejected(self, tmp_path):
        rc = main(["gen", "--out", str(tmp_path / "x"), "--scenes", "1", "--size", "48x48"])
        assert rc == 2

    def test_manifest_counts(self, tmp_path):
        out = _write_dataset(tmp_path, "c", scenes=5)
        man = json.load(open(os.path.join(out, "manifest.json")))
        assert man["count"] == 5 and len(man["samples"]) == 5


class TestTrainLoop:
    def test_zero_lr_keeps_initialization(self, tmp_path):
        data = _write_dataset(tmp_path, "d")
        cfg = _tiny_run_config(data, schedule=LRSchedule(0.0, 0.0, 0.0, 1), total_iters=1)
        out = str(tmp_path / "run0")
        result = train(cfg, out)
        fresh = DepthNet(cfg.model, seed=cfg.seed)
        trained = result["model"]
        for (name, p), (_, q) in zip(fresh.named_parameters(), trained.named_parameters()):
            assert np.array_equal(p.data, q.data), name

    def test_accumulation_matches_bigger_batch(self, tmp_path):
        data = _write_dataset(tmp_path, "e", scenes=8)
        grads = {}
        for label, (batch, accum) in {"acc": (2, 2), "big": (4, 1)}.items():
            cfg = _tiny_run_config(data, batch_size=batch, accum_steps=accum, total_iters=1,
                                   schedule=LRSchedule(0.0, 0.0, 0.0, 1))
            model = train_mod.build_model(cfg)
            manifest, samples = load_dataset(cfg.data)
            order = list(np.random.default_rng(0).permutation(len(samples)))[: batch * accum]
            model.set_training(True)
            from redt.losses import total_loss
            import redt.tensor as T

            idx = 0
            for _ in range(accum):
                losses = []
                for _ in range(batch):
                    s = samples[order[idx]]
                    idx += 1
                    maps, _ = model.forward(s.rgb)
                    loss, _ = total_loss(maps, project_labels(s.gt()), form="conventional")
                    losses.append(loss)
                micro = losses[0]
                for l in losses[1:]:
                    micro = T.add(micro, l)
                T.mul(micro, 1.0 / (batch * accum)).backward()
            grads[label] = {n: p.grad.copy() for n, p in model.named_parameters() if p.grad is not None}
        assert grads["acc"].keys() == grads["big"].keys()
        for name in grads["acc"]:
            np.testing.assert_allclose(grads["acc"][name], grads["big"][name], rtol=2e-5, atol=1e-7)

    def test_loss_log_and_config_written(self, tmp_path):
        data = _write_dataset(tmp_path, "f")
        cfg = _tiny_run_config(data, total_iters=2)
        out = str(tmp_path / "run1")
        train(cfg, out)
        lines = open(os.path.join(out, "loss_log.csv")).read().strip().splitlines()
        n_maps = cfg.model.head_iterations + 1
        assert lines[0] == "iter,lr,l_total,grad_norm," + ",".join(f"l{k}" for k in range(n_maps))
        assert len(lines) == 3
        stored = json.load(open(os.path.join(out, "config.json")))
        assert stored["loss_form"] == "conventional"
        assert stored["seed"] == cfg.seed

    def test_divergence_aborts_with_saved_state(self, tmp_path, monkeypatch):
        data = _write_dataset(tmp_path, "g")
        cfg = _tiny_run_config(data, total_iters=5)
        out = str(tmp_path / "run2")
        calls = {"n": 0}
        orig = train_mod.total_loss

        def poisoned(maps, gt, lam, alpha, form):
            calls["n"] += 1
            loss, per_map = orig(maps, gt, lam, alpha, form)
            if calls["n"] > 3:
                loss = Tensor(np.array(np.nan, dtype=np.float32))
            return loss, per_map

        monkeypatch.setattr(train_mod, "total_loss", poisoned)
        with pytest.raises(NumericalError):
            train(cfg, out)
        assert os.path.exists(os.path.join(out, "model.ckpt"))
        assert os.path.exists(os.path.join(out, "loss_log.csv"))


class TestEvalCommand:
    def _trained_run(self, tmp_path):
        data = _write_dataset(tmp_path, "h")
        cfg = _tiny_run_config(data, total_iters=2)
        out = str(tmp_path / "run3")
        train(cfg, out)
        return data, out

    def test_eval_writes_csvs(self, tmp_path):
        data, run = self._trained_run(tmp_path)
        rc = main(["eval", "--run", run, "--data", data, "--ranges", "0,10,20"])
        assert rc == 0
        lines = open(os.path.join(run, "metrics.csv")).read().strip().splitlines()
        assert lines[0] == CSV_HEADER and len(lines) == 2
        rlines = open(os.path.join(run, "ranges.csv")).read().strip().splitlines()
        assert rlines[0] == RANGE_CSV_HEADER
        assert len(rlines) == 3  # two buckets
        plines = open(os.path.join(run, "permap.csv")).read().strip().splitlines()
        assert len(plines) == 1 + tiny_config().head_iterations + 1

    def test_eval_never_touches_dataset(self, tmp_path):
        data, run = self._trained_run(tmp_path)
        before = _dir_hash(data)
        assert main(["eval", "--run", run, "--data", data]) == 0
        assert _dir_hash(data) == before

    def test_perfect_predictor_stub_scores_zero_error(self, tmp_path):
        data = _write_dataset(tmp_path, "i", scenes=3)
        manifest, samples = load_dataset(data)

        class PerfectStub:
            cfg = tiny_config()

            def __init__(self):
                self.queue = list(samples)

            def set_training(self, training):
                pass

            def forward(self, rgb):
                s = self.queue.pop(0)
                dense = np.where(s.valid, s.depth, self.cfg.depth_min).astype(np.float32)
                quarter = project_labels(s.gt())
                qvals = np.where(quarter.valid, quarter.values, self.cfg.depth_min).astype(np.float32)
                maps = [Tensor(qvals) for _ in range(self.cfg.head_iterations + 1)]
                return maps, Tensor(dense)

        report, per_map = evaluate(PerfectStub(), data)
        assert report.rmse == pytest.approx(0.0, abs=1e-9)
        assert report.abs_rel == pytest.approx(0.0, abs=1e-9)
        assert report.d1 == report.d2 == report.d3 == 1.0
        assert all(v == pytest.approx(0.0, abs=1e-9) for v in per_map)


class TestAblateCommand:
    def test_paired_runs_share_shapes_and_freeze_theta(self, tmp_path):
        data = _write_dataset(tmp_path, "j", scenes=4)
        test_data = _write_dataset(tmp_path, "jt", scenes=2, seed=11)
        cfg_path = tmp_path / "cfg.json"
        cfg = _tiny_run_config(data, total_iters=2)
        json.dump(cfg.to_dict(), open(cfg_path, "w"))
        out = str(tmp_path / "ab")
        data_before = _dir_hash(data)
        test_before = _dir_hash(test_data)
        rc = main([
            "ablate", "--data", data, "--test-data", test_data, "--config", str(cfg_path),
            "--out", out, "--seeds", "1", "--dclip", "10.0",
        ])
        assert rc == 0
        # the clip touches in-memory training labels only; files stay intact
        assert _dir_hash(data) == data_before
        assert _dir_hash(test_data) == test_before
        rows = open(os.path.join(out, "ablate.csv")).read().strip().splitlines()
        assert len(rows) == 3  # header + 2 arms
        on = read_checkpoint(os.path.join(out, "seed1_on", "model.ckpt"))
        off = read_checkpoint(os.path.join(out, "seed1_off", "model.ckpt"))
        assert set(on) == set(off)
        for name in on:
            assert on[name].shape == off[name].shape
        for name in off:
            if name.endswith("theta_de"):
                assert np.all(off[name] == 0.0)
        assert any(np.any(on[name] != 0.0) for name in on if name.endswith("theta_de"))
        assert os.path.exists(os.path.join(out, "verdict.txt"))


class TestReport:
    def test_svg_polyline_and_legend(self):
        series = [
            ("run_a", [(0, 5, 1.0, 10), (5, 10, 2.0, 8)]),
            ("run_b", [(0, 5, 1.5, 10), (5, 10, 2.5, 8)]),
        ]
        svg = render_range_plot(series)
        assert svg.count("<polyline") == 2
        assert "run_a" in svg and "run_b" in svg
        assert svg.startswith("<svg") and svg.endswith("</svg>")

    def test_empty_bucket_breaks_polyline(self):
        series = [("run", [(0, 5, 1.0, 4), (5, 10, None, 0), (10, 15, 2.0, 4)])]
        svg = render_range_plot(series)
        # the gap yields two single-point segments, drawn as circles
        assert svg.count("<circle") == 2
        assert svg.count("<polyline") == 0

    def test_text_table_marks_empty(self):
        out = text_table([("r", [(0, 5, 1.25, 3), (5, 10, None, 0)])])
        assert "1.25" in out and "-" in out

    def test_cli_report_from_csvs(self, tmp_path):
        d = tmp_path / "runx"
        d.mkdir()
        csv = d / "ranges.csv"
        csv.write_text(RANGE_CSV_HEADER + "\n0,5,1.5,4\n5,10,2.5,6\n")
        out_svg = str(tmp_path / "plot.svg")
        assert main(["report", str(csv), "--out", out_svg]) == 0
        assert "<svg" in open(out_svg).read()

    def test_cli_report_bad_header(self, tmp_path):
        csv = tmp_path / "ranges.csv"
        csv.write_text("nope\n")
        assert main(["report", str(csv), "--out", str(tmp_path / "p.svg")]) == 3
