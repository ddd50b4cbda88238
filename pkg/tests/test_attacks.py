"""Attack engine: configuration, gradient pipelines, the two-phase
consistency update, budget safety, and the exact reduction/degeneracy laws.
"""

import dataclasses
import math

import numpy as np
import pytest
import scipy.ndimage

from fsakit.attacks import (
    METHODS,
    AttackConfig,
    MomentumState,
    attack_batch,
    consistency_mask,
    diverse_input_transform,
    frequency_step,
    fsa_step,
    gaussian_kernel,
    run_attack,
    spatial_step,
    translation_smooth,
)
from fsakit.frequency import DctMode
from fsakit.model import Classifier, Flatten, LabeledImage, Linear


def linear_model(weight, bias=None, input_shape=(1, 1, 2)):
    weight = np.asarray(weight, dtype=np.float64)
    if bias is None:
        bias = np.zeros(weight.shape[0])
    return Classifier(
        layers=[Flatten(), Linear(weight=weight, bias=bias)],
        input_shape=input_shape,
        num_classes=weight.shape[0],
    )


class TestConfig:
    def test_alpha_defaults_to_eps_over_steps(self):
        cfg = AttackConfig(method="IFGSM", eps=0.1, steps=4)
        assert cfg.alpha == 0.1 / 4

    def test_method_names_are_normalized(self):
        for raw in ("i-fgsm", "I_FGSM", "ifgsm", "IFGSM"):
            assert AttackConfig(method=raw, eps=0.1).method == "IFGSM"

    def test_unknown_method_lists_valid_ones(self):
        with pytest.raises(ValueError, match="IFGSM"):
            AttackConfig(method="CW", eps=0.1)

    def test_bounds_are_enforced(self):
        with pytest.raises(ValueError):
            AttackConfig(method="PGD", eps=-0.1)
        with pytest.raises(ValueError):
            AttackConfig(method="PGD", eps=1.5)
        with pytest.raises(ValueError):
            AttackConfig(method="PGD", eps=0.1, steps=0)
        with pytest.raises(ValueError):
            AttackConfig(method="PGD", eps=0.1, alpha=0.2)  # alpha > eps
        with pytest.raises(ValueError):
            AttackConfig(method="PGD", eps=0.1, alpha=0.0)  # zero step, nonzero ball
        with pytest.raises(ValueError):
            AttackConfig(method="TIFGSM", eps=0.1, ti_kernel_size=4)
        with pytest.raises(ValueError):
            AttackConfig(method="DIFGSM", eps=0.1, di_prob=1.5)
        with pytest.raises(ValueError):
            AttackConfig(method="PGD", eps=0.1, seed=-3)

    def test_zero_budget_is_allowed(self):
        cfg = AttackConfig(method="FGSM", eps=0.0, steps=1)
        assert cfg.alpha == 0.0

    def test_config_is_immutable(self):
        cfg = AttackConfig(method="PGD", eps=0.1)
        with pytest.raises(dataclasses.FrozenInstanceError):
            cfg.eps = 0.2


class TestGaussianKernel:
    def test_sums_to_one_and_symmetric(self):
        for size in (1, 3, 7, 15):
            k = gaussian_kernel(size)
            assert k.shape == (size, size)
            assert math.isclose(k.sum(), 1.0, abs_tol=1e-12)
            np.testing.assert_allclose(k, k[::-1, ::-1], atol=1e-15)
            assert k.max() == k[size // 2, size // 2]

    def test_size_one_is_identity_kernel(self):
        assert np.array_equal(gaussian_kernel(1), [[1.0]])

    def test_rejects_even_or_nonpositive(self):
        for bad in (0, -1, 2, 6):
            with pytest.raises(ValueError):
                gaussian_kernel(bad)


class TestTranslationSmooth:
    def test_size_one_is_exact_identity_copy(self, rng):
        g = rng.normal(size=(2, 1, 9, 9))
        out = translation_smooth(g, 1)
        assert np.array_equal(out, g) and out is not g

    def test_constant_interior_is_preserved(self):
        g = np.ones((1, 10, 10))
        out = translation_smooth(g, 3)
        np.testing.assert_allclose(out[:, 1:-1, 1:-1], 1.0, atol=1e-12)

    def test_matches_scipy_correlate(self, rng):
        g = rng.normal(size=(3, 8, 8))
        out = translation_smooth(g, 5)
        kern = gaussian_kernel(5)
        for c in range(3):
            want = scipy.ndimage.correlate(g[c], kern, mode="constant", cval=0.0)
            np.testing.assert_allclose(out[c], want, atol=1e-10)

    def test_preserves_leading_shape(self, rng):
        g = rng.normal(size=(4, 2, 6, 6))
        assert translation_smooth(g, 3).shape == g.shape


class TestDiverseInput:
    def test_zero_probability_returns_copy(self, rng):
        x = rng.uniform(size=(1, 6, 6))
        out = diverse_input_transform(x, 0.0, np.random.default_rng(0))
        assert np.array_equal(out, x) and out is not x

    def test_deterministic_given_stream(self, rng):
        x = rng.uniform(size=(1, 12, 12))
        a = diverse_input_transform(x, 1.0, np.random.default_rng(77))
        b = diverse_input_transform(x, 1.0, np.random.default_rng(77))
        assert np.array_equal(a, b)

    def test_output_pixels_come_from_input_or_padding(self, rng):
        x = rng.uniform(0.1, 1.0, size=(1, 12, 12))  # keep 0 distinct from content
        out = diverse_input_transform(x, 1.0, np.random.default_rng(5))
        assert out.shape == x.shape
        assert set(np.unique(out)) <= set(np.unique(x)) | {0.0}

    def test_draw_order_contract(self, rng):
        # Frozen contract: gate, then scale factor, then row offset, then
        # column offset, all from one stream; nearest-neighbor resampling.
        x = rng.uniform(size=(2, 10, 10))
        for seed in range(6):
            got = diverse_input_transform(x, 0.7, np.random.default_rng(seed))
            ref_rng = np.random.default_rng(seed)
            if ref_rng.uniform() >= 0.7:
                want = x
            else:
                factor = ref_rng.uniform(0.9, 1.0)
                h2 = max(1, int(round(10 * factor)))
                rows = np.minimum(np.arange(h2) * 10 // h2, 9)
                shrunk = x[:, rows][:, :, rows]
                top = int(ref_rng.integers(0, 10 - h2 + 1))
                left = int(ref_rng.integers(0, 10 - h2 + 1))
                want = np.zeros_like(x)
                want[:, top : top + h2, left : left + h2] = shrunk
            np.testing.assert_array_equal(got, want)

    def test_validation(self, rng):
        with pytest.raises(ValueError):
            diverse_input_transform(rng.uniform(size=(6, 6)), 0.5, np.random.default_rng(0))
        with pytest.raises(ValueError):
            diverse_input_transform(rng.uniform(size=(1, 6, 6)), 1.2, np.random.default_rng(0))


class TestConsistencyMask:
    def test_printed_example(self):
        a = 0.01 * np.array([1.0, -1.0, 0.0])
        b = 0.01 * np.array([1.0, 1.0, 0.0])
        assert np.array_equal(consistency_mask(a, b), [1.0, 0.0, 1.0])

    def test_identical_steps_give_all_ones(self, rng):
        d = rng.choice([-0.01, 0.0, 0.01], size=(1, 5, 5))
        assert consistency_mask(d, d.copy()).min() == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            consistency_mask(np.zeros(3), np.zeros(4))

    def test_output_is_binary(self, rng):
        a = rng.choice([-1.0, 0.0, 1.0], size=(4, 4))
        b = rng.choice([-1.0, 0.0, 1.0], size=(4, 4))
        m = consistency_mask(a, b)
        assert set(np.unique(m)) <= {0.0, 1.0}


class TestStepPrimitives:
    CFG = dict(eps=8 / 255, steps=4)

    def test_spatial_step_values(self, tiny_cnn, rng):
        x = rng.uniform(size=(1, 12, 12))
        cfg = AttackConfig(method="IFGSM", **self.CFG)
        step = spatial_step(tiny_cnn, x, 3, cfg)
        assert set(np.unique(step)) <= {-cfg.alpha, 0.0, cfg.alpha}

    def test_frequency_step_values(self, tiny_cnn, rng):
        x = rng.uniform(size=(1, 12, 12))
        cfg = AttackConfig(method="IFGSM", fsa=True, **self.CFG)
        step = frequency_step(tiny_cnn, x, 3, cfg)
        assert set(np.unique(step)) <= {-cfg.alpha, 0.0, cfg.alpha}

    @pytest.mark.parametrize("method", METHODS)
    def test_ortho_frequency_step_equals_spatial(self, tiny_cnn, rng, method):
        # The pull-back is the identity in orthonormal mode, for every
        # gradient pipeline (the frequency branch sees the processed gradient).
        x = rng.uniform(size=(1, 12, 12))
        cfg = AttackConfig(method=method, dct_mode=DctMode.ORTHO, pgd_random_start=False, **self.CFG)
        d = spatial_step(tiny_cnn, x, 2, cfg, MomentumState())
        f = frequency_step(tiny_cnn, x, 2, cfg, MomentumState())
        assert np.array_equal(d, f)

    def test_ortho_fsa_step_is_one_base_step(self, tiny_cnn, rng):
        x = rng.uniform(size=(1, 12, 12))
        cfg = AttackConfig(method="IFGSM", dct_mode=DctMode.ORTHO, **self.CFG)
        base = x + spatial_step(tiny_cnn, x, 5, cfg)
        assert np.array_equal(fsa_step(tiny_cnn, x, 5, cfg), base)

    def test_scaled_branches_can_disagree(self, tiny_cnn, rng):
        cfg = AttackConfig(method="IFGSM", dct_mode=DctMode.SCALED, **self.CFG)
        disagreed = False
        for _ in range(20):
            x = rng.uniform(size=(1, 12, 12))
            d = spatial_step(tiny_cnn, x, 1, cfg)
            f = frequency_step(tiny_cnn, x, 1, cfg)
            if not np.array_equal(d, f):
                disagreed = True
                break
        assert disagreed

    def test_fsa_step_moves_each_pixel_at_most_alpha(self, tiny_cnn, rng):
        cfg = AttackConfig(method="IFGSM", fsa=True, **self.CFG)
        for _ in range(5):
            x = rng.uniform(size=(1, 12, 12))
            out = fsa_step(tiny_cnn, x, 0, cfg)
            assert np.abs(out - x).max() <= cfg.alpha + 1e-12

    def test_rescaled_two_class_model_gives_identical_steps(self, rng):
        # Positive rescaling of a two-class head rescales the input gradient
        # by a positive scalar, so every signed step is unchanged.
        w = rng.normal(size=(2, 16))
        b = rng.normal(size=2)
        cfg = AttackConfig(method="IFGSM", eps=0.05, steps=5)
        x = rng.uniform(size=(1, 4, 4))
        step_a = spatial_step(linear_model(w, b, (1, 4, 4)), x, 1, cfg)
        step_b = spatial_step(linear_model(7.0 * w, 7.0 * b, (1, 4, 4)), x, 1, cfg)
        assert np.array_equal(step_a, step_b)


class TestHandComputedFgsm:
    def test_single_step_on_two_pixel_linear_model(self):
        # logits = W @ x, softmax p, loss gradient w.r.t. x is W^T (p - onehot).
        w = np.array([[2.0, -1.0], [-1.0, 1.0]])
        model = linear_model(w)
        x = np.array([[[0.5, 0.5]]])
        logits = w @ x.reshape(-1)
        exp = np.exp(logits - logits.max())
        p = exp / exp.sum()
        grad = w.T @ (p - np.array([1.0, 0.0]))
        assert np.array_equal(np.sign(grad), [-1.0, 1.0])  # fixed by construction

        eps = 0.1
        cfg = AttackConfig(method="FGSM", eps=eps, steps=1)
        result = run_attack(model, LabeledImage(pixels=x, label=0), cfg)
        want = np.clip(x + eps * np.sign(grad), 0.0, 1.0)
        np.testing.assert_allclose(result.adversarial, want, atol=1e-12)
        np.testing.assert_allclose(result.adversarial.reshape(-1), [0.4, 0.6], atol=1e-12)


class TestBudget:
    @pytest.mark.parametrize("method", METHODS)
    @pytest.mark.parametrize("fsa", [False, True])
    def test_ball_and_range(self, tiny_cnn, tiny_batch, method, fsa):
        xb, yb = tiny_batch
        for eps, steps in [(1 / 255, 1), (8 / 255, 3), (0.2, 2)]:
            cfg = AttackConfig(method=method, eps=eps, steps=steps, fsa=fsa, seed=1)
            out = attack_batch(tiny_cnn, xb, yb, cfg)
            assert out.linf.max() <= eps + 1e-9
            assert out.adversarial.min() >= 0.0 and out.adversarial.max() <= 1.0

    def test_zero_budget_returns_clean_images(self, tiny_cnn, tiny_batch):
        xb, yb = tiny_batch
        for method in METHODS:
            cfg = AttackConfig(method=method, eps=0.0, steps=2, seed=3)
            out = attack_batch(tiny_cnn, xb, yb, cfg)
            assert np.array_equal(out.adversarial, xb)
            assert np.array_equal(out.adv_pred, out.clean_pred)

    def test_per_iteration_movement_bounded_by_alpha(self, tiny_cnn, tiny_batch):
        # Phase 1 and phase 2 touch disjoint pixels, so even the two-phase
        # update moves each pixel at most alpha per iteration.
        xb, yb = tiny_batch
        cfg = AttackConfig(method="IFGSM", eps=0.1, steps=4, fsa=True)
        out = attack_batch(tiny_cnn, xb, yb, cfg, record_trace=True)
        prev = xb
        for step_x in out.trace:
            assert np.abs(step_x - prev).max() <= cfg.alpha + 1e-12
            prev = step_x

    def test_input_validation(self, tiny_cnn, tiny_batch):
        xb, yb = tiny_batch
        cfg = AttackConfig(method="IFGSM", eps=0.1)
        with pytest.raises(ValueError):
            attack_batch(tiny_cnn, xb[0], yb[:1], cfg)  # not a batch
        with pytest.raises(ValueError):
            attack_batch(tiny_cnn, xb + 5.0, yb, cfg)  # out of range


class TestDegeneracy:
    @pytest.mark.parametrize("method", METHODS)
    def test_ortho_fsa_equals_base_bitwise(self, tiny_cnn, tiny_batch, method):
        xb, yb = tiny_batch
        common = dict(method=method, eps=8 / 255, steps=3, dct_mode=DctMode.ORTHO, seed=2)
        base = attack_batch(tiny_cnn, xb, yb, AttackConfig(fsa=False, **common))
        fsa = attack_batch(tiny_cnn, xb, yb, AttackConfig(fsa=True, **common))
        assert np.array_equal(base.adversarial, fsa.adversarial)
        assert fsa.mask_fractions.min() == 1.0

    def test_scaled_mode_produces_mixed_masks(self, tiny_cnn, tiny_batch):
        xb, yb = tiny_batch
        cfg = AttackConfig(method="IFGSM", eps=8 / 255, steps=3, fsa=True, dct_mode=DctMode.SCALED)
        out = attack_batch(tiny_cnn, xb, yb, cfg)
        assert out.mask_fractions.shape == (3, xb.shape[0])
        assert out.mask_fractions.min() >= 0.0 and out.mask_fractions.max() <= 1.0
        assert out.mask_fractions.min() < 1.0  # something actually disagreed


class TestReductions:
    def variants(self):
        base = dict(eps=8 / 255, steps=4, seed=0)
        return [
            AttackConfig(method="MIFGSM", mi_decay=0.0, **base),
            AttackConfig(method="DIFGSM", di_prob=0.0, **base),
            AttackConfig(method="TIFGSM", ti_kernel_size=1, **base),
            AttackConfig(method="PGD", pgd_random_start=False, **base),
        ]

    @pytest.mark.parametrize("fsa", [False, True])
    def test_all_reduce_to_plain_iterative_attack(self, tiny_cnn, tiny_batch, fsa):
        xb, yb = tiny_batch
        ref_cfg = AttackConfig(method="IFGSM", eps=8 / 255, steps=4, seed=0, fsa=fsa)
        ref = attack_batch(tiny_cnn, xb, yb, ref_cfg, record_trace=True)
        for cfg in self.variants():
            cfg = dataclasses.replace(cfg, fsa=fsa)
            out = attack_batch(tiny_cnn, xb, yb, cfg, record_trace=True)
            for t, (a, b) in enumerate(zip(ref.trace, out.trace)):
                assert np.array_equal(a, b), f"{cfg.method} diverged at step {t}"


class TestDeterminismAndStreams:
    def test_identical_runs_are_bit_identical(self, tiny_cnn, tiny_batch):
        xb, yb = tiny_batch
        for method in ("PGD", "DIFGSM"):
            cfg = AttackConfig(method=method, eps=8 / 255, steps=3, fsa=True, seed=4)
            a = attack_batch(tiny_cnn, xb, yb, cfg)
            b = attack_batch(tiny_cnn, xb, yb, cfg)
            assert np.array_equal(a.adversarial, b.adversarial)

    def test_deterministic_methods_ignore_seed(self, tiny_cnn, tiny_batch):
        xb, yb = tiny_batch
        for method in ("FGSM", "IFGSM", "MIFGSM", "TIFGSM"):
            a = attack_batch(tiny_cnn, xb, yb, AttackConfig(method=method, eps=0.05, steps=2, seed=0))
            b = attack_batch(tiny_cnn, xb, yb, AttackConfig(method=method, eps=0.05, steps=2, seed=9))
            assert np.array_equal(a.adversarial, b.adversarial), method

    def test_pgd_start_depends_on_image_index_only(self, tiny_cnn, tiny_batch):
        xb, yb = tiny_batch
        cfg = AttackConfig(method="PGD", eps=0.1, steps=1, seed=0)
        same = attack_batch(tiny_cnn, xb[:2], yb[:2], cfg, image_indices=[0, 0])
        assert np.array_equal(same.adversarial[0], same.adversarial[1]) or not np.array_equal(
            xb[0], xb[1]
        )
        diff = attack_batch(tiny_cnn, xb[:1].repeat(2, axis=0), yb[:1].repeat(2), cfg, image_indices=[0, 1])
        assert not np.array_equal(diff.adversarial[0], diff.adversarial[1])

    def test_batch_matches_single_image_runs(self, tiny_cnn, tiny_batch):
        # Chunking/batching must not change results: the per-image RNG streams
        # are keyed by image index, not batch position.
        xb, yb = tiny_batch
        cfg = AttackConfig(method="DIFGSM", eps=8 / 255, steps=3, fsa=True, seed=6)
        batch = attack_batch(tiny_cnn, xb, yb, cfg)
        for i in range(xb.shape[0]):
            one = run_attack(tiny_cnn, LabeledImage(pixels=xb[i], label=int(yb[i])), cfg, image_index=i)
            assert np.array_equal(batch.adversarial[i], one.adversarial)
            assert batch.success[i] == one.success

    def test_run_attack_reports_masks_only_for_fsa(self, tiny_cnn, tiny_batch):
        xb, yb = tiny_batch
        img = LabeledImage(pixels=xb[0], label=int(yb[0]))
        plain = run_attack(tiny_cnn, img, AttackConfig(method="IFGSM", eps=0.05, steps=3))
        assert plain.mask_ones_fraction_per_step == []
        fsa = run_attack(tiny_cnn, img, AttackConfig(method="IFGSM", eps=0.05, steps=3, fsa=True))
        assert len(fsa.mask_ones_fraction_per_step) == 3
        assert all(0.0 <= v <= 1.0 for v in fsa.mask_ones_fraction_per_step)


class TestMomentum:
    def test_accumulator_advances_once_per_iteration(self, tiny_cnn, rng):
        # Two spatial steps with a shared state must see different directions
        # when decay > 0 (the accumulator carries history).
        x = rng.uniform(size=(1, 12, 12))
        cfg = AttackConfig(method="MIFGSM", eps=0.1, steps=2, mi_decay=1.0)
        state = MomentumState()
        s0 = spatial_step(tiny_cnn, x, 1, cfg, state, step=0)
        assert state.g_acc is not None
        first_acc = state.g_acc.copy()
        s1 = spatial_step(tiny_cnn, x + s0, 1, cfg, state, step=1)
        assert not np.array_equal(state.g_acc, first_acc)

    def test_zero_decay_forgets_history(self, tiny_cnn, rng):
        x = rng.uniform(size=(1, 12, 12))
        cfg = AttackConfig(method="MIFGSM", eps=0.1, steps=1, mi_decay=0.0)
        raw_cfg = AttackConfig(method="IFGSM", eps=0.1, steps=1)
        state = MomentumState(g_acc=rng.normal(size=(1, 1, 12, 12)))
        np.testing.assert_array_equal(
            spatial_step(tiny_cnn, x, 1, cfg, state), spatial_step(tiny_cnn, x, 1, raw_cfg)
        )
