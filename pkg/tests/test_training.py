"""Optimizer closed forms, schedules, layer-wise decay, loop determinism."""

import numpy as np
import pytest

import stmae.tensor as tn
from stmae.errors import ConfigError, NumericError
from stmae.training import (FinetuneConfig, OptimizerState, adamw_step,
                            assign_layer_lrs, decays, layer_lr_multipliers,
                            lr_schedule, param_group, select_few_shot,
                            smoothed_cross_entropy)
from stmae.video import DatasetManifest


def _param(values):
    return tn.Tensor(np.asarray(values, dtype=np.float32),
                     requires_grad=True)


class TestAdamW:
    def test_single_param_two_steps_closed_form(self):
        p = _param([1.0])
        params = {"w": p}
        state = OptimizerState.for_params(params, lr=0.1, weight_decay=0.0)
        g1, g2 = 0.3, -0.2
        m = v = 0.0
        x = 1.0
        for t, g in ((1, g1), (2, g2)):
            m = 0.9 * m + 0.1 * g
            v = 0.95 * v + 0.05 * g * g
            mhat = m / (1 - 0.9**t)
            vhat = v / (1 - 0.95**t)
            x -= 0.1 * mhat / (np.sqrt(vhat) + 1e-8)
        for g in (g1, g2):
            p.grad = np.array([g], dtype=np.float32)
            adamw_step(params, state, lr=0.1)
        assert p.data[0] == pytest.approx(x, rel=1e-6)
        assert state.step == 2

    def test_weight_decay_decoupled(self):
        # zero gradient: pure decay multiplies by (1 - lr*wd) each step
        p = _param(np.full(4, 2.0))
        p2d = tn.Tensor(np.full((2, 2), 2.0, dtype=np.float32),
                        requires_grad=True)
        params = {"w": p2d}
        state = OptimizerState.for_params(params, lr=0.1, weight_decay=0.5)
        p2d.grad = np.zeros((2, 2), dtype=np.float32)
        adamw_step(params, state, lr=0.1)
        np.testing.assert_allclose(p2d.data, 2.0 * (1 - 0.1 * 0.5), rtol=1e-6)

    def test_nan_gradient_names_parameter(self):
        p = _param([1.0])
        params = {"enc.block0.attn.wq": p}
        state = OptimizerState.for_params(params, lr=0.1)
        p.grad = np.array([np.nan], dtype=np.float32)
        with pytest.raises(NumericError, match="enc.block0.attn.wq"):
            adamw_step(params, state, lr=0.1)

    def test_param_without_grad_skipped(self):
        p = _param([1.0])
        params = {"w": p}
        state = OptimizerState.for_params(params, lr=0.1)
        p.grad = None
        adamw_step(params, state, lr=0.1)
        assert p.data[0] == 1.0
        assert state.step == 1

    def test_negative_lr_rejected(self):
        params = {"w": _param([1.0])}
        state = OptimizerState.for_params(params, lr=0.1)
        with pytest.raises(ConfigError):
            adamw_step(params, state, lr=-1.0)


class TestSchedule:
    def test_warmup_is_linear(self):
        lrs = [lr_schedule(s, 100, 10, 1.0) for s in range(10)]
        np.testing.assert_allclose(lrs, np.arange(10) / 10)

    def test_cosine_midpoint_and_end(self):
        # halfway through the cosine phase the lr is half the base
        total, warm = 210, 10
        mid = warm + (total - warm) // 2
        assert lr_schedule(mid, total, warm, 2.0) == pytest.approx(1.0)
        assert lr_schedule(total - 1, total, warm, 2.0) < 0.01
        assert lr_schedule(warm, total, warm, 2.0) == pytest.approx(2.0)

    def test_bounds_rejected(self):
        with pytest.raises(ConfigError):
            lr_schedule(5, 0, 0, 1.0)
        with pytest.raises(ConfigError):
            lr_schedule(-1, 10, 2, 1.0)


class TestLayerDecay:
    def test_group_assignment(self):
        L = 4
        assert param_group("embed.w", L) == 0
        assert param_group("enc.pos_spatial", L) == 0
        assert param_group("cls.token", L) == 0
        assert param_group("enc.block0.attn.wq", L) == 1
        assert param_group("enc.block3.mlp.w2", L) == 4
        assert param_group("enc.norm.g", L) == L
        assert param_group("head.w", L) == L + 1
        assert param_group("dec.rec.w", L) is None

    def test_multiplier_geometry(self):
        mults = assign_layer_lrs(4, 0.5)
        np.testing.assert_allclose(
            mults, [0.5**5, 0.5**4, 0.5**3, 0.5**2, 0.5, 1.0])

    def test_head_gets_largest_rate(self):
        names = ["embed.w", "enc.block0.attn.wq", "enc.block3.mlp.w2",
                 "enc.norm.g", "head.w", "dec.rec.w"]
        params = {n: _param([0.0]) for n in names}
        mults = layer_lr_multipliers(params, 4, 0.75)
        assert max(mults, key=mults.get) == "head.w"
        # decoder params are excluded from the multiplier map entirely
        assert "dec.rec.w" not in mults
        assert mults["embed.w"] == min(mults.values())


class TestFewShotSelection:
    def _manifest(self, per_class=6, classes=3):
        m = DatasetManifest(split="finetune")
        for c in range(classes):
            for i in range(per_class):
                m.add(f"c{c}_{i}.vclp", c, 1.0)
        return m

    def test_selection_is_deterministic_and_balanced(self):
        m = self._manifest()
        a = select_few_shot(m, 2, 3, seed=1)
        b = select_few_shot(m, 2, 3, seed=1)
        assert a == b
        labels = [m.clips[r][1] for r in a]
        assert sorted(labels) == [0, 0, 1, 1, 2, 2]

    def test_insufficient_pool_rejected(self):
        m = self._manifest(per_class=1)
        with pytest.raises(Exception):
            select_few_shot(m, 2, 3, seed=0)

    def test_different_seeds_differ(self):
        m = self._manifest(per_class=20)
        assert select_few_shot(m, 3, 3, 0) != select_few_shot(m, 3, 3, 1)


def test_smoothed_cross_entropy_matches_closed_form():
    logits = tn.Tensor(np.array([[2.0, 0.0, -1.0],
                                 [0.5, 0.5, 0.5]], dtype=np.float64))
    labels = np.array([0, 2])
    s, k = 0.1, 3
    logp = np.log(np.exp(logits.data)
                  / np.exp(logits.data).sum(axis=1, keepdims=True))
    q = np.full((2, 3), s / k)
    q[np.arange(2), labels] += 1 - s
    want = -(q * logp).sum(axis=1).mean()
    got = smoothed_cross_entropy(logits, labels, s, k)
    assert got.item() == pytest.approx(want, rel=1e-6)


def test_decay_rule():
    assert decays("enc.block0.attn.wq", _param(np.zeros((2, 2))))
    assert not decays("enc.block0.ln1.g", _param(np.zeros(2)))
    assert not decays("enc.pos_spatial", _param(np.zeros((4, 2))))
    assert not decays("cls.token", _param(np.zeros((1, 2))))


def test_finetune_config_validation():
    with pytest.raises(ConfigError):
        FinetuneConfig(k_shot=0)
    with pytest.raises(ConfigError):
        FinetuneConfig(label_smoothing=1.5)
    with pytest.raises(ConfigError):
        FinetuneConfig(layer_decay=0.0)
