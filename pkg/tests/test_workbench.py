"""Training loop, mixup, inference, checkpoints, config, and CLI."""

import json
import math
import unittest.mock
from pathlib import Path

import numpy as np
import pytest

from neurolight import solver
from neurolight.devices import (
    GenerationConfig, generate_dataset, load_dataset, sample_device,
    simulate_device,
)
from neurolight.encoding import CHANNEL_COUNTS, masked_source
from neurolight.model import ModelConfig, NeurOLightModel
from neurolight.tensor import Tensor
from neurolight.workbench import (
    AdamW, EvalReport, SampleBank, TrainConfig, adapt, apply_mixup,
    cosine_lr, evaluate, evaluate_superposed, field_nmae, infer,
    load_checkpoint, load_config, sample_mixup, save_checkpoint,
    spectrum_sweep, sweep_wavelengths, train,
)
from neurolight.workbench.cli import main


def tiny_model(channel_set="full", seed=0):
    cfg = ModelConfig(in_channels=CHANNEL_COUNTS[channel_set], channels=8,
                      blocks=2, modes=(8, 6), expand=2, droppath=0.1)
    return NeurOLightModel(cfg, seed=seed)


@pytest.fixture(scope="module")
def records3():
    return [simulate_device(sample_device("tunable", 3, s, preset="desk"), 32, 64)
            for s in range(5)]


@pytest.fixture(scope="module")
def records4():
    return [simulate_device(sample_device("tunable", 4, 50 + s, preset="desk"), 32, 64)
            for s in range(4)]


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("wb") / "data3"
    generate_dataset(GenerationConfig(
        count=6, kind="tunable", n_ports=3, grid=(32, 64), seed=311,
        out_dir=out, preset="desk"))
    return out


@pytest.fixture(scope="module")
def trained(records3):
    model = tiny_model()
    result = train(model, records3[:4], records3[4:],
                   TrainConfig(epochs=2, seed=3))
    return model, result


class TestSampleMixup:
    def test_single_port_is_unit(self):
        g = sample_mixup(1, np.random.default_rng(0))
        assert g.shape == (1, 1)
        assert g[0, 0] == pytest.approx(1.0)
        assert g[0, 0].imag == 0.0

    def test_rows_unit_power(self):
        g = sample_mixup(4, np.random.default_rng(1))
        assert np.linalg.norm(g, axis=1) == pytest.approx(np.ones(4), abs=1e-12)

    def test_first_entry_phase_zero(self):
        g = sample_mixup(3, np.random.default_rng(2))
        assert np.abs(g[:, 0].imag).max() < 1e-12
        assert (g[:, 0].real >= 0).all()

    def test_mean_square_entry_is_inverse_ports(self):
        rng = np.random.default_rng(3)
        sq = np.mean([np.abs(sample_mixup(3, rng)) ** 2 for _ in range(10_000)],
                     axis=0)
        assert sq == pytest.approx(np.full((3, 3), 1.0 / 3.0), abs=0.02)

    def test_seeded_determinism(self):
        a = sample_mixup(3, np.random.default_rng(7))
        b = sample_mixup(3, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_needs_a_port(self):
        with pytest.raises(ValueError):
            sample_mixup(0, np.random.default_rng(0))


class TestApplyMixup:
    def test_identity_recovers_single_source_pairs(self, records3):
        record = records3[0]
        pairs = apply_mixup(record, np.eye(3, dtype=np.complex128))
        for port, (ms, target) in enumerate(pairs):
            src = record.ports[port][0]
            alone = masked_source(record.spec, record.domain, src)
            np.testing.assert_array_equal(ms.h_j, alone.h_j)
            np.testing.assert_array_equal(target, record.ports[port][1].hy)

    def test_superposed_target_matches_fresh_solve(self, records3):
        record = records3[1]
        row = sample_mixup(3, np.random.default_rng(11))[0]
        gamma = np.tile(row, (3, 1))
        _, target = apply_mixup(record, gamma)[0]
        sources = [src for src, _ in record.ports]
        truth = solver.solve(record.domain, record.eps_r, sources,
                             amplitudes=list(row)).hy
        assert field_nmae(target, truth) < 1e-8

    def test_no_solver_calls(self, dataset_dir, monkeypatch):
        def boom(*a, **k):
            raise AssertionError("field solver invoked during mixup")

        monkeypatch.setattr(solver, "solve", boom)
        monkeypatch.setattr(solver, "solve_each", boom)
        record = load_dataset(dataset_dir)[0]
        pairs = apply_mixup(record, sample_mixup(3, np.random.default_rng(0)))
        assert len(pairs) == 3

    def test_loaded_record_matches_in_memory(self, dataset_dir):
        loaded = load_dataset(dataset_dir)[0]
        rebuilt = simulate_device(loaded.spec, 32, 64)
        gamma = sample_mixup(3, np.random.default_rng(4))
        got = apply_mixup(loaded, gamma)
        want = apply_mixup(rebuilt, gamma)
        for (ms_a, t_a), (ms_b, t_b) in zip(got, want):
            assert np.allclose(ms_a.h_j, ms_b.h_j, rtol=1e-4, atol=1e-8)
            # targets come from float32 storage vs fresh float64 solves
            assert field_nmae(t_a, t_b) < 1e-4

    def test_wrong_gamma_shape(self, records3):
        with pytest.raises(ValueError, match="gamma"):
            apply_mixup(records3[0], np.eye(2))

    def test_unsupported_record_type(self):
        with pytest.raises(TypeError):
            apply_mixup(object(), np.eye(3))


class TestOptim:
    def test_adamw_reduces_quadratic(self):
        p = Tensor(np.array([3.0, -2.0]), requires_grad=True)
        opt = AdamW({"p": p}, lr=0.1)
        for _ in range(200):
            p.grad = 2.0 * p.data
            opt.step()
        assert np.abs(p.data).max() < 1e-3

    def test_decay_is_decoupled_from_gradient(self):
        start = np.array([2.0], dtype=np.float32)
        p = Tensor(start.copy(), requires_grad=True)
        opt = AdamW({"p": p}, lr=0.01, weight_decay=0.1)
        p.grad = np.zeros(1)
        opt.step()
        want = (start * (1.0 - 0.01 * 0.1)).astype(np.float32)
        np.testing.assert_array_equal(p.data, want)

    def test_none_grad_is_skipped(self):
        p = Tensor(np.ones(2), requires_grad=True)
        opt = AdamW({"p": p}, lr=0.5, weight_decay=0.5)
        opt.step()
        np.testing.assert_array_equal(p.data, np.ones(2))

    def test_moments_are_float64(self):
        p = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
        opt = AdamW({"p": p}, lr=0.1)
        assert opt._m["p"].dtype == np.float64
        p.grad = np.ones(2, dtype=np.float32)
        opt.step()
        assert p.data.dtype == np.float32

    def test_positive_lr_required(self):
        with pytest.raises(ValueError):
            AdamW({"p": Tensor(np.ones(1))}, lr=0.0)

    def test_cosine_endpoints(self):
        assert cosine_lr(0.002, 0, 50) == pytest.approx(0.002)
        assert cosine_lr(0.002, 49, 50) == pytest.approx(0.0, abs=1e-12)
        assert cosine_lr(0.002, 0, 1) == 0.002

    def test_cosine_midpoint(self):
        assert cosine_lr(1.0, 5, 11) == pytest.approx(0.5)


class TestTrainConfig:
    def test_defaults_valid(self):
        cfg = TrainConfig()
        assert cfg.epochs == 50 and cfg.mixup

    @pytest.mark.parametrize("kw", [
        {"lr": 0.0}, {"batch_size": 0}, {"epochs": 0},
        {"schedule": "step"}, {"channel_set": "everything"},
        {"betas": (0.9, 1.0)}, {"betas": (-0.1, 0.999)},
    ])
    def test_rejects_bad_values(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_betas_reach_the_optimizer(self, records3):
        model = tiny_model(seed=1)
        captured = {}
        orig = AdamW.__init__

        def spy(self, params, lr, betas=(0.9, 0.999), **kw):
            captured["betas"] = betas
            orig(self, params, lr, betas=betas, **kw)

        with unittest.mock.patch.object(AdamW, "__init__", spy):
            train(model, records3[:2], records3[2:3],
                  TrainConfig(epochs=1, betas=(0.9, 0.98)))
        assert captured["betas"] == (0.9, 0.98)


class TestSampleBank:
    def test_counts(self, records3):
        bank = SampleBank(records3)
        assert len(bank) == len(records3)
        assert len(bank.single_source_observations()) == 3 * len(records3)
        assert bank.all_fields().shape == (3 * len(records3), 32, 64)

    def test_no_mixup_targets_are_scaled_fields(self, records3, trained):
        _, result = trained
        bank = SampleBank(records3[:1])
        xs, ys = bank.epoch_samples(None, mixup=False, stats=result.stats)
        assert len(xs) == 3 and xs[0].shape == (8, 32, 64)
        want = records3[0].ports[1][1].hy / result.stats.field_scale
        got = ys[1][0] + 1j * ys[1][1]
        assert np.allclose(got, want, rtol=1e-5, atol=1e-7)

    def test_mixup_epochs_blend_identity_and_superposed(self, records3,
                                                        trained):
        _, result = trained
        bank = SampleBank(records3[:1])
        _, ys_id = bank.epoch_samples(None, mixup=False, stats=result.stats)
        rng = np.random.default_rng(2)
        kinds = set()
        for _ in range(12):
            _, ys = bank.epoch_samples(rng, mixup=True, stats=result.stats)
            kinds.add(all(np.array_equal(a, b) for a, b in zip(ys, ys_id)))
        # both lone-port and superposed epochs must occur
        assert kinds == {True, False}

    def test_rejects_mixed_port_counts(self, records3, records4):
        with pytest.raises(ValueError, match="port counts"):
            SampleBank([records3[0], records4[0]])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            SampleBank([])


class TestTrain:
    def test_two_runs_identical(self, records3):
        runs = []
        for _ in range(2):
            model = tiny_model(seed=1)
            res = train(model, records3[:3], records3[3:],
                        TrainConfig(epochs=2, seed=9))
            runs.append((res.history, model.state()))
        assert runs[0][0] == runs[1][0]
        for key, arr in runs[0][1].items():
            np.testing.assert_array_equal(arr, runs[1][1][key])

    def test_no_solver_calls(self, dataset_dir, monkeypatch):
        def boom(*a, **k):
            raise AssertionError("field solver invoked during training")

        monkeypatch.setattr(solver, "solve", boom)
        monkeypatch.setattr(solver, "solve_each", boom)
        records = load_dataset(dataset_dir)
        model = tiny_model()
        res = train(model, records[:4], records[4:], TrainConfig(epochs=1, seed=0))
        assert len(res.history) == 1

    def test_best_val_tracking(self, trained):
        model, res = trained
        vals = [h["val_nmae"] for h in res.history]
        bests = [h["best_val"] for h in res.history]
        assert bests == list(np.minimum.accumulate(vals))
        assert res.best_val == min(vals)

    def test_model_ends_at_best_state(self, records3, trained):
        model, res = trained
        twin = tiny_model()
        twin.load_state(res.best_state)
        for key, arr in twin.state().items():
            np.testing.assert_array_equal(arr, model.state()[key])

    def test_nan_loss_aborts_with_dump(self, records3, tmp_path):
        model = tiny_model()
        params = model.parameters()
        name = [k for k in params if k.startswith("head")][-1]
        params[name].data = np.full_like(params[name].data, np.nan)
        with pytest.raises(RuntimeError, match="non-finite loss"):
            train(model, records3[:2], records3[2:3],
                  TrainConfig(epochs=1, seed=0), dump_dir=str(tmp_path))
        assert (tmp_path / "nan_batch_inputs.nold").exists()
        assert (tmp_path / "nan_batch_targets.nold").exists()

    def test_head_only_training_freezes_backbone(self, records3):
        model = tiny_model(seed=2)
        before = model.state()
        train(model, records3[:2], records3[2:3],
              TrainConfig(epochs=1, seed=0), trainable_prefix="head")
        after = model.state()
        for key in before:
            if key.startswith("head"):
                continue
            np.testing.assert_array_equal(before[key], after[key])
        assert any(not np.array_equal(before[k], after[k])
                   for k in before if k.startswith("head"))
        assert all(p.requires_grad for p in model.parameters().values())

    def test_unknown_prefix_raises(self, records3):
        with pytest.raises(ValueError, match="prefix"):
            train(tiny_model(), records3[:2], records3[2:3],
                  TrainConfig(epochs=1), trainable_prefix="tail")

    def test_eps_only_channel_set(self, records3):
        model = tiny_model("eps")
        res = train(model, records3[:2], records3[2:3],
                    TrainConfig(epochs=1, seed=0, channel_set="eps"))
        assert res.stats.mean.size == 2

    def test_loss_decreases(self, trained):
        _, res = trained
        assert res.history[-1]["train_nmae"] < res.history[0]["train_nmae"]


class TestCheckpoint:
    def test_roundtrip_bitwise(self, trained, tmp_path):
        model, res = trained
        save_checkpoint(tmp_path / "ck", model, res.stats,
                        history=res.history, extra={"note": 1})
        twin, stats, manifest = load_checkpoint(tmp_path / "ck")
        for key, arr in model.state().items():
            np.testing.assert_array_equal(arr, twin.state()[key])
        assert twin.config == model.config
        assert stats.field_scale == res.stats.field_scale
        np.testing.assert_array_equal(stats.mean, res.stats.mean)
        assert manifest["extra"]["note"] == 1
        assert manifest["history"] == res.history

    def test_without_stats(self, tmp_path):
        model = tiny_model()
        save_checkpoint(tmp_path / "ck", model)
        _, stats, _ = load_checkpoint(tmp_path / "ck")
        assert stats is None

    def test_rejects_non_checkpoint(self, dataset_dir):
        with pytest.raises(ValueError, match="checkpoint"):
            load_checkpoint(dataset_dir)


class TestFieldNmae:
    def test_perfect_prediction(self):
        f = np.array([[1 + 2j, 3 - 1j]])
        assert field_nmae(f, f) == 0.0

    def test_known_value(self):
        t = np.array([3.0 + 4.0j])
        p = np.array([4.0 + 2.0j])
        assert field_nmae(p, t) == pytest.approx(3.0 / 7.0)

    def test_zero_prediction_scores_one(self):
        t = np.array([1 - 1j, 2 + 0.5j])
        assert field_nmae(np.zeros(2), t) == pytest.approx(1.0)

    def test_zero_target_raises(self):
        with pytest.raises(ValueError, match="zero-norm"):
            field_nmae(np.ones(3), np.zeros(3))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            field_nmae(np.ones(3), np.ones(4))


class TestEvaluate:
    def test_row_per_device_port(self, records3, trained):
        model, res = trained
        report = evaluate(model, records3, res.stats, batch_size=4)
        assert len(report.rows) == 3 * len(records3)
        assert all(r["wall_clock_s"] > 0 for r in report.rows)
        assert 0 < report.mean_nmae() < 2.0

    def test_report_files(self, trained, records3, tmp_path):
        model, res = trained
        report = evaluate(model, records3[:1], res.stats)
        report.to_csv(tmp_path / "r.csv")
        report.to_json(tmp_path / "r.json")
        loaded = json.loads((tmp_path / "r.json").read_text())
        assert loaded["summary"]["count"] == 3
        assert len((tmp_path / "r.csv").read_text().splitlines()) == 4

    def test_infer_modes_count_forwards(self, records3, trained, monkeypatch):
        model, res = trained
        calls = []
        original = model.forward

        def counting(*args, **kwargs):
            calls.append(1)
            return original(*args, **kwargs)

        monkeypatch.setattr(model, "forward", counting)
        infer(model, records3[0], res.stats, mode="multi_source")
        assert len(calls) == 1
        infer(model, records3[0], res.stats, mode="single_source")
        assert len(calls) == 4

    def test_infer_same_truth_both_modes(self, records3, trained):
        model, res = trained
        amps = sample_mixup(3, np.random.default_rng(8))[0]
        fm_m, rep_m = infer(model, records3[0], res.stats,
                            mode="multi_source", amplitudes=amps)
        fm_s, rep_s = infer(model, records3[0], res.stats,
                            mode="single_source", amplitudes=amps)
        assert fm_m.hy.shape == fm_s.hy.shape == (32, 64)
        assert math.isnan(fm_m.residual)
        assert rep_m.rows[0]["forwards"] == 1
        assert rep_s.rows[0]["forwards"] == 3

    def test_infer_validation(self, records3, trained):
        model, res = trained
        with pytest.raises(ValueError, match="mode"):
            infer(model, records3[0], res.stats, mode="both")
        with pytest.raises(ValueError, match="amplitudes"):
            infer(model, records3[0], res.stats, amplitudes=np.ones(2))

    def test_superposed_is_seed_reproducible(self, records3, trained):
        model, res = trained
        a = evaluate_superposed(model, records3[:2], res.stats, seed=5)
        b = evaluate_superposed(model, records3[:2], res.stats, seed=5)
        assert [r["nmae"] for r in a.rows] == [r["nmae"] for r in b.rows]
        assert len(a.rows) == 2


class TestSweep:
    def test_wavelength_grid(self):
        wls = sweep_wavelengths(1550e-9, 1565e-9, 2e-9)
        assert wls.size == 8
        assert wls[0] == pytest.approx(1550e-9)
        assert wls[-1] == pytest.approx(1564e-9)
        with pytest.raises(ValueError):
            sweep_wavelengths(1550e-9, 1540e-9, 2e-9)

    def test_one_forward_for_all_rows(self, records3, trained, monkeypatch):
        model, res = trained
        calls = []
        original = model.forward

        def counting(*args, **kwargs):
            calls.append(args[0].shape if hasattr(args[0], "shape") else None)
            return original(*args, **kwargs)

        monkeypatch.setattr(model, "forward", counting)
        wls = sweep_wavelengths(1550e-9, 1565e-9, 2e-9)
        result = spectrum_sweep(model, records3[0], res.stats, wls)
        assert len(calls) == 1
        assert result.forwards == 1
        assert result.fields.shape == (8, 32, 64)
        assert result.transmissions.shape == (8, 3)

    def test_solver_checks(self, records3, trained):
        model, res = trained
        wls = sweep_wavelengths(1550e-9, 1560e-9, 5e-9)
        result = spectrum_sweep(model, records3[0], res.stats, wls,
                                solver_check=[1555e-9])
        assert len(result.checks) == 1
        assert result.checks[0]["wavelength_m"] == pytest.approx(1555e-9)
        assert result.checks[0]["nmae"] > 0

    def test_csv_output(self, records3, trained, tmp_path):
        model, res = trained
        wls = sweep_wavelengths(1550e-9, 1556e-9, 2e-9)
        result = spectrum_sweep(model, records3[0], res.stats, wls)
        result.to_csv(tmp_path / "sweep.csv")
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert len(lines) == 4 and lines[0].startswith("wavelength_m")

    def test_validation(self, records3, trained):
        model, res = trained
        with pytest.raises(ValueError, match="port"):
            spectrum_sweep(model, records3[0], res.stats,
                           np.array([1.55e-6]), port=7)
        with pytest.raises(ValueError):
            spectrum_sweep(model, records3[0], res.stats, np.array([]))


class TestAdapt:
    def test_probe_keeps_backbone_bitwise(self, records4, trained):
        model, res = trained
        before = model.state()
        adapt(model, res.stats, records4[:3], records4[3:],
              probe_epochs=1, tune_epochs=0, seed=0)
        after = model.state()
        for key in before:
            if not key.startswith("head"):
                np.testing.assert_array_equal(before[key], after[key])

    def test_phases_recorded(self, records4, trained):
        model = tiny_model(seed=4)
        _, res = trained
        history = adapt(model, res.stats, records4[:3], records4[3:],
                        probe_epochs=2, tune_epochs=1, seed=0)
        assert [h["phase"] for h in history] == ["probe", "probe", "tune"]


class TestConfig:
    def test_pure_defaults(self):
        cfg = load_config(None)
        assert cfg["domain"]["rows"] == 32
        assert cfg["train"]["mixup"] is True
        assert cfg["train"]["fractions"] == (0.72, 0.08, 0.20)
        assert cfg["model"]["channel_set"] == "full"

    def test_file_overrides(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text(
            "[train]\nepochs = 7\nmixup = off\nfractions = 0.5,0.25,0.25\n"
            "[model]\nchannels = 32\n"
        )
        cfg = load_config(path)
        assert cfg["train"]["epochs"] == 7
        assert cfg["train"]["mixup"] is False
        assert cfg["train"]["fractions"] == (0.5, 0.25, 0.25)
        assert cfg["model"]["channels"] == 32
        assert cfg["model"]["blocks"] == 4

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[train]\nlearning_rate = 0.1\n")
        with pytest.raises(ValueError, match="unknown key"):
            load_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[optimizer]\nlr = 0.1\n")
        with pytest.raises(ValueError, match="unknown config section"):
            load_config(path)

    def test_bad_fraction_count(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[train]\nfractions = 0.5,0.5\n")
        with pytest.raises(ValueError, match="fractions"):
            load_config(path)

    def test_bad_bool(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[train]\nmixup = maybe\n")
        with pytest.raises(ValueError, match="boolean"):
            load_config(path)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-dataset", "--out", str(root / "data"),
                 "--count", "14", "--seed", "21"]) == 0
    return root


class TestCli:
    def test_gen_dataset_wrote_records(self, workdir):
        assert len(load_dataset(workdir / "data")) == 14

    def test_train_eval_cycle(self, workdir, capsys):
        assert main(["train", "--data", str(workdir / "data"),
                     "--out", str(workdir / "ckpt"), "--epochs", "1"]) == 0
        assert (workdir / "ckpt" / "manifest.json").exists()
        assert (workdir / "ckpt" / "curves.csv").exists()
        assert main(["eval", "--checkpoint", str(workdir / "ckpt"),
                     "--data", str(workdir / "data"),
                     "--out", str(workdir / "report")]) == 0
        out = capsys.readouterr().out
        assert "mean_nmae" in out
        assert (workdir / "report.csv").exists()

    def test_sweep_and_plot(self, workdir):
        assert main(["sweep", "--checkpoint", str(workdir / "ckpt"),
                     "--data", str(workdir / "data"), "--index", "0",
                     "--check", "1552", "--out", str(workdir / "sweep")]) == 0
        assert (workdir / "sweep.png").exists()
        assert main(["plot", "--data", str(workdir / "data"), "--index", "1",
                     "--checkpoint", str(workdir / "ckpt"),
                     "--out", str(workdir / "field.png")]) == 0
        assert (workdir / "field.png").exists()

    def test_simulate(self, workdir, capsys):
        assert main(["simulate", "--seed", "5",
                     "--out", str(workdir / "sim.png")]) == 0
        assert "residual" in capsys.readouterr().out
        assert (workdir / "sim.png").exists()

    def test_empty_split_is_actionable(self, workdir, tmp_path):
        assert main(["gen-dataset", "--out", str(tmp_path / "tiny"),
                     "--count", "3", "--seed", "2"]) == 0
        with pytest.raises(SystemExit, match="fractions"):
            main(["train", "--data", str(tmp_path / "tiny"),
                  "--out", str(tmp_path / "ck"), "--epochs", "1"])
