"""Architecture, parameter accounting, and gradient checks for the model."""

import numpy as np
import pytest

from neurolight.model import (
    Context,
    CrossBlock,
    ModelConfig,
    NeurOLightModel,
    block_core_formula,
    count_params,
    nmae,
    param_breakdown,
)
from neurolight.tensor import Tape, Tensor

RNG = np.random.default_rng(1234)


def tiny_config(**over):
    base = dict(in_channels=8, channels=8, blocks=2, modes=(6, 4), expand=2,
                droppath=0.1)
    base.update(over)
    return ModelConfig(**base)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="even"):
            ModelConfig(channels=7)
        with pytest.raises(ValueError, match="at least one block"):
            ModelConfig(blocks=0)
        with pytest.raises(ValueError, match="positive"):
            ModelConfig(modes=(0, 4))
        with pytest.raises(ValueError, match="dropout"):
            ModelConfig(droppath=1.0)
        with pytest.raises(ValueError, match="stem"):
            ModelConfig(stem="resnet")
        with pytest.raises(ValueError, match="dtype"):
            ModelConfig(dtype="bf16")
        with pytest.raises(ValueError, match="schedule"):
            NeurOLightModel(ModelConfig(channels=8, stem_schedule=(4, 6)))

    def test_default_schedule(self):
        assert ModelConfig(channels=64).schedule == (32, 64)
        assert ModelConfig(channels=64, stem_schedule=(16, 64)).schedule == (16, 64)


class TestParamCount:
    def test_formula_values(self):
        assert block_core_formula(64, 70 + 40, 2) == 129024
        assert block_core_formula(2, 1, 1) == 9

    def test_constructed_block_matches_formula(self):
        cfg = ModelConfig(channels=64, blocks=1, modes=(70, 40), expand=2)
        bd = param_breakdown(NeurOLightModel(cfg))
        got = bd["sections"]["blocks.0"]["complex_counted"]
        want = bd["formula_block_core"]
        assert want <= got <= 1.02 * want

    def test_formula_tracks_random_configs(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            c = int(rng.choice([64, 96, 128]))
            k_z = int(rng.integers(30, 81))
            k_x = int(rng.integers(30, 81))
            s = int(rng.choice([1, 2]))
            cfg = ModelConfig(channels=c, blocks=1, modes=(k_z, k_x), expand=s)
            bd = param_breakdown(NeurOLightModel(cfg))
            got = bd["sections"]["blocks.0"]["complex_counted"]
            want = block_core_formula(c, k_z + k_x, s)
            assert want <= got <= 1.02 * want

    def test_full_config_near_reported_size(self):
        model = NeurOLightModel(ModelConfig())
        complex_counted = count_params(model, complex_as_one=True)
        print(f"full config parameters: {complex_counted} complex-counted, "
              f"{count_params(model)} real scalars")
        assert abs(complex_counted - 1.58e6) / 1.58e6 < 0.10

    def test_counting_conventions_differ_by_spectral_half(self):
        model = NeurOLightModel(tiny_config())
        spectral = sum(t.size for name, t, cx in model.named_params() if cx)
        assert count_params(model) - count_params(model, complex_as_one=True) \
            == spectral // 2


class TestStem:
    def test_output_shape_and_zero_input(self):
        model = NeurOLightModel(tiny_config(), seed=3)
        x = Tensor(np.zeros((2, 8, 16, 32), dtype=np.float32))
        v = model.stem(x)
        assert v.shape == (2, 8, 16, 32)
        # biases start at zero, so zero input stays exactly zero
        assert not np.any(v.data)

    def test_bias_determined_interior(self):
        model = NeurOLightModel(tiny_config(), seed=3)
        state = model.state()
        for name in state:
            if name.startswith("stem") and name.endswith(".b"):
                state[name] = np.full_like(state[name], 0.37)
        model.load_state(state)
        v = model.stem(Tensor(np.zeros((1, 8, 16, 32), dtype=np.float32))).data
        interior = v[:, :, 2:-2, 2:-2]
        for ch in range(interior.shape[1]):
            assert np.ptp(interior[0, ch]) == 0.0

    def test_receptive_field_five_by_five(self):
        model = NeurOLightModel(tiny_config(), seed=9)
        zero = np.zeros((1, 8, 16, 32), dtype=np.float32)
        bump = zero.copy()
        bump[0, :, 8, 16] = 1.0
        diff = model.stem(Tensor(bump)).data - model.stem(Tensor(zero)).data
        rows, cols = np.nonzero(np.abs(diff[0]).sum(axis=0))
        assert rows.min() >= 6 and rows.max() <= 10
        assert cols.min() >= 14 and cols.max() <= 18

    def test_lift_stem_is_pointwise(self):
        model = NeurOLightModel(tiny_config(stem="lift"), seed=9)
        zero = np.zeros((1, 8, 16, 32), dtype=np.float32)
        bump = zero.copy()
        bump[0, 3, 8, 16] = 1.0
        diff = model.stem(Tensor(bump)).data - model.stem(Tensor(zero)).data
        rows, cols = np.nonzero(np.abs(diff[0]).sum(axis=0))
        assert set(rows) == {8} and set(cols) == {16}


class TestCrossBlock:
    def test_zeroed_projection_makes_identity(self):
        rng = np.random.default_rng(0)
        block = CrossBlock(rng, 8, 5, 4, 2, 0.0, np.float64)
        block.ffn.project.w.data[:] = 0.0
        block.ffn.project.b.data[:] = 0.0
        v = Tensor(rng.normal(size=(2, 8, 12, 20)))
        out = block(v, Context())
        np.testing.assert_array_equal(out.data, v.data)

    def test_row_permutation_equivariance(self):
        """With the vertical kernel zeroed and all spatial convs off, the
        block acts on each row independently."""
        rng = np.random.default_rng(1)
        block = CrossBlock(rng, 8, 5, 4, 2, 0.0, np.float64, ffn_dwconv=False)
        block.spec_x.r.data[:] = 0.0
        v = rng.normal(size=(1, 8, 12, 20))
        perm = rng.permutation(12)
        out = block(Tensor(v), Context()).data
        out_p = block(Tensor(v[:, :, perm, :]), Context()).data
        np.testing.assert_array_equal(out_p, out[:, :, perm, :])

    def test_global_row_reach_after_one_block(self):
        rng = np.random.default_rng(2)
        block = CrossBlock(rng, 8, 5, 4, 2, 0.0, np.float64)
        zero = np.zeros((1, 8, 12, 20))
        bump = zero.copy()
        bump[0, :, 5, 7] = 1.0
        diff = block(Tensor(bump), Context()).data - block(Tensor(zero), Context()).data
        row_energy = np.abs(diff[0]).sum(axis=0)[5]
        assert np.all(row_energy > 0)

    def test_modes_exceeding_axis_raise(self):
        model = NeurOLightModel(tiny_config(modes=(40, 4)))
        with pytest.raises(ValueError, match="exceed"):
            model.forward(np.zeros((1, 8, 16, 32), dtype=np.float32))


class TestModel:
    def test_eval_determinism_bitwise(self):
        model = NeurOLightModel(tiny_config(), seed=5)
        x = RNG.normal(size=(2, 8, 16, 32)).astype(np.float32)
        a = model.forward(x).data
        b = model.forward(x).data
        assert np.array_equal(a, b)

    def test_mode_truncation_monotonicity(self):
        """Extra kept modes with zero-initialized kernel entries change
        nothing, bit for bit."""
        small = NeurOLightModel(tiny_config(modes=(6, 4)), seed=11)
        big = NeurOLightModel(tiny_config(modes=(9, 7)), seed=12)
        state = big.state()
        for name, value in small.state().items():
            if name.endswith("spec_z.r") or name.endswith("spec_x.r"):
                grown = np.zeros_like(state[name])
                grown[: value.shape[0]] = value
                state[name] = grown
            else:
                state[name] = value
        big.load_state(state)
        x = RNG.normal(size=(1, 8, 16, 32)).astype(np.float32)
        np.testing.assert_array_equal(small.forward(x).data, big.forward(x).data)

    def test_batch_invariance(self):
        model = NeurOLightModel(tiny_config(), seed=6)
        x = RNG.normal(size=(3, 8, 16, 32)).astype(np.float32)
        batch = model.forward(x).data
        singles = [model.forward(x[i:i + 1]).data[0] for i in range(3)]
        for i in range(3):
            np.testing.assert_allclose(batch[i], singles[i], atol=2e-6)

    def test_forward_validation(self):
        model = NeurOLightModel(tiny_config())
        with pytest.raises(ValueError, match="shape"):
            model.forward(np.zeros((8, 16, 32), dtype=np.float32))
        with pytest.raises(ValueError, match="channels"):
            model.forward(np.zeros((1, 5, 16, 32), dtype=np.float32))
        with pytest.raises(ValueError, match="random generator"):
            model.forward(np.zeros((1, 8, 16, 32), dtype=np.float32),
                          training=True)

    def test_droppath_rates_scale_linearly(self):
        model = NeurOLightModel(tiny_config(blocks=4, droppath=0.1))
        np.testing.assert_allclose([b.rate for b in model.blocks],
                                   [0.0, 0.1 / 3, 0.2 / 3, 0.1])

    def test_droppath_drops_whole_samples(self):
        model = NeurOLightModel(tiny_config(blocks=2, droppath=0.9), seed=2)
        x = RNG.normal(size=(8, 8, 16, 32)).astype(np.float32)
        eval_out = model.forward(x).data
        train_out = model.forward(x, training=True,
                                  rng=np.random.default_rng(0)).data
        assert not np.allclose(train_out, eval_out)

    def test_state_roundtrip(self):
        model = NeurOLightModel(tiny_config(), seed=8)
        x = RNG.normal(size=(1, 8, 16, 32)).astype(np.float32)
        want = model.forward(x).data.copy()
        saved = model.state()
        for t in model.parameters().values():
            t.data = t.data + 1.0
        assert not np.array_equal(model.forward(x).data, want)
        model.load_state(saved)
        np.testing.assert_array_equal(model.forward(x).data, want)

    def test_load_state_rejects_mismatch(self):
        model = NeurOLightModel(tiny_config())
        state = model.state()
        state.pop("head.p2.w")
        with pytest.raises(ValueError, match="state mismatch"):
            model.load_state(state)
        state = model.state()
        state["head.p2.w"] = np.zeros((3, 3))
        with pytest.raises(ValueError, match="shape mismatch"):
            model.load_state(state)

    @pytest.mark.parametrize("switch", [
        {"conv_path": True}, {"ffn_norm": True}, {"extra_gelu": True},
        {"ffn_dwconv": False}, {"droppath": 0.0}, {"stem": "lift"},
    ])
    def test_ablation_switches_run(self, switch):
        model = NeurOLightModel(tiny_config(**switch), seed=1)
        x = RNG.normal(size=(1, 8, 16, 32)).astype(np.float32)
        out = model.forward(x)
        assert out.shape == (1, 2, 16, 32)
        assert np.all(np.isfinite(out.data))


class TestNmae:
    def test_fixed_points(self):
        t = RNG.normal(size=(3, 2, 6, 8))
        assert nmae(Tensor(t), t).item() == 0.0
        assert nmae(Tensor(np.zeros_like(t)), t).item() == pytest.approx(1.0)
        assert nmae(Tensor(2.0 * t), t).item() == pytest.approx(1.0)

    def test_per_item_normalization(self):
        t = np.ones((2, 2, 4, 4))
        t[1] *= 100.0
        pred = t.copy()
        pred[0] += 1.0  # 100% error on the weak item
        pred[1] += 1.0  # 1% error on the strong item
        assert nmae(Tensor(pred), t).item() == pytest.approx(0.505)

    def test_zero_norm_target_raises(self):
        t = np.zeros((2, 2, 4, 4))
        with pytest.raises(ValueError, match="zero-norm"):
            nmae(Tensor(np.ones_like(t)), t)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nmae(Tensor(np.zeros((1, 2, 4, 4))), np.ones((1, 2, 4, 5)))


class TestGradient:
    def test_end_to_end_finite_differences(self):
        """Analytic gradients against central differences on a sampled set
        of parameter entries, full model in float64."""
        cfg = ModelConfig(in_channels=8, channels=4, blocks=2, modes=(4, 4),
                          expand=2, droppath=0.0, dropout=0.0, dtype="real64")
        model = NeurOLightModel(cfg, seed=21)
        rng = np.random.default_rng(77)
        x = rng.normal(size=(1, 8, 8, 16))
        target = rng.normal(size=(1, 2, 8, 16))

        def loss_value():
            return nmae(model.forward(x), target).item()

        for t in model.parameters().values():
            t.zero_grad()
        with Tape() as tape:
            loss = nmae(model.forward(x), target)
            tape.backward(loss)

        checked = 0
        for name, t in sorted(model.parameters().items()):
            assert t.grad is not None, f"no gradient reached {name}"
            flat = t.data.reshape(-1)
            gflat = t.grad.reshape(-1)
            idx = rng.choice(flat.size, size=min(3, flat.size), replace=False)
            for i in idx:
                orig = flat[i]
                h = 1e-6 * max(1.0, abs(orig))
                flat[i] = orig + h
                fp = loss_value()
                flat[i] = orig - h
                fm = loss_value()
                flat[i] = orig
                fd = (fp - fm) / (2.0 * h)
                scale = max(abs(fd), abs(gflat[i]), 1e-6)
                assert abs(fd - gflat[i]) / scale < 1e-3, (
                    f"{name}[{i}]: analytic {gflat[i]:.3e} vs fd {fd:.3e}"
                )
                checked += 1
        assert checked > 50
