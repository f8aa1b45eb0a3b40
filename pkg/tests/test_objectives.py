"""Tests for the contrastive, generative, 2D-only and combined objectives."""

import math
from dataclasses import replace

import numpy as np
import pytest

from molview.autodiff import ParamStore, Rng, Tape, Tensor, backward, grad_check
from molview.errors import ConfigError, DomainError, ShapeError
from molview.objectives import (
    AuxInputs,
    BatchReprs,
    LossConfig,
    NegativeSampler,
    attr_mask_2d,
    combined_loss,
    contrastive_2d,
    ebm_nce,
    infonce,
    infonce_one_sided,
    kl_diag_gaussian,
    mi_estimate_infonce,
    reconstruction_term,
    rr,
    score,
    vrr,
)


def pairs(k: int, d: int, seed: int = 0, scale: float = 1.0) -> BatchReprs:
    rng = Rng(seed)
    return BatchReprs(Tensor(scale * rng.normal((k, d))), Tensor(scale * rng.normal((k, d))))


class FixedDerangements(NegativeSampler):
    """Serves the given derangements in order."""

    def __init__(self, *perms: np.ndarray):
        super().__init__(Rng(0))
        self.perms = list(perms)

    def derangement(self, k: int) -> np.ndarray:
        return self.perms.pop(0)


def naive_infonce(hx: np.ndarray, hy: np.ndarray) -> float:
    k = len(hx)
    total = 0.0
    for i in range(k):
        row = [float(hx[i] @ hy[j]) for j in range(k)]
        col = [float(hx[j] @ hy[i]) for j in range(k)]
        pos = float(hx[i] @ hy[i])
        total += math.log(sum(math.exp(s) for s in row)) - pos
        total += math.log(sum(math.exp(s) for s in col)) - pos
    return total / (2 * k)


def log_sigmoid(s: float) -> float:
    return -math.log1p(math.exp(-s))


def saturated_pairs() -> BatchReprs:
    """K=2, d=1 with positive scores 40 and negative scores -40."""
    h = Tensor([[math.sqrt(40.0)], [-math.sqrt(40.0)]])
    return BatchReprs(h, Tensor(h.data.copy()))


class TestScore:
    def test_orthogonal_and_symmetric(self):
        a, b = Tensor([1.0, 0.0, 2.0]), Tensor([0.0, 3.0, 0.0])
        assert score(a, b).item() == 0.0
        c = Tensor([0.5, -1.0, 4.0])
        assert score(a, c).item() == score(c, a).item()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            score(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_batch_requires_matching_views(self):
        with pytest.raises(ShapeError):
            BatchReprs(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 5))))


class TestInfoNCE:
    def test_equal_scores_give_log_k(self):
        batch = BatchReprs(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        np.testing.assert_allclose(infonce(batch).item(), math.log(2), atol=1e-12)

    def test_saturated(self):
        assert infonce(saturated_pairs()).item() < 1e-12

    def test_matches_naive_oracle(self):
        batch = pairs(5, 3, seed=2)
        np.testing.assert_allclose(infonce(batch).item(), naive_infonce(batch.hx.data, batch.hy.data), atol=1e-12)

    def test_pair_permutation_invariance(self):
        batch = pairs(6, 4, seed=3)
        perm = Rng(1).permutation(6)
        shuffled = BatchReprs(Tensor(batch.hx.data[perm]), Tensor(batch.hy.data[perm]))
        np.testing.assert_allclose(infonce(shuffled).item(), infonce(batch).item(), atol=1e-12)

    def test_constant_score_shift_invariance(self):
        batch = pairs(4, 3, seed=4)
        hx = np.hstack([batch.hx.data, np.ones((4, 1))])
        hy = np.hstack([batch.hy.data, np.full((4, 1), 7.5)])
        shifted = BatchReprs(Tensor(hx), Tensor(hy))
        np.testing.assert_allclose(infonce(shifted).item(), infonce(batch).item(), atol=1e-12)

    def test_needs_two_pairs(self):
        with pytest.raises(DomainError, match="K=1"):
            infonce(pairs(1, 3))

    def test_gradient(self):
        params = ParamStore()
        params.add("hx", Rng(0).normal((4, 3)))
        params.add("hy", Rng(1).normal((4, 3)))
        assert grad_check(lambda p: infonce(BatchReprs(p["hx"], p["hy"])), params) < 1e-6


class TestEbmNce:
    def test_zero_scores(self):
        batch = BatchReprs(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 2))))
        value = ebm_nce(batch, NegativeSampler(Rng(0))).item()
        np.testing.assert_allclose(value, 2 * math.log(2), atol=1e-12)

    def test_saturated(self):
        assert ebm_nce(saturated_pairs(), NegativeSampler(Rng(0))).item() < 1e-12

    def test_matches_naive_oracle(self):
        batch = pairs(5, 3, seed=6)
        value = ebm_nce(batch, NegativeSampler(Rng(9))).item()
        replay = NegativeSampler(Rng(9))
        px, py = replay.derangement(5), replay.derangement(5)
        hx, hy = batch.hx.data, batch.hy.data
        k = len(hx)
        pos = [-log_sigmoid(float(hx[i] @ hy[i])) for i in range(k)]
        neg_y = [-log_sigmoid(-float(hx[px[i]] @ hy[i])) for i in range(k)]
        neg_x = [-log_sigmoid(-float(hy[py[i]] @ hx[i])) for i in range(k)]
        expected = 0.5 * ((sum(pos) + sum(neg_y)) / k + (sum(pos) + sum(neg_x)) / k)
        np.testing.assert_allclose(value, expected, atol=1e-12)

    def test_invariant_under_batch_permutation(self):
        batch = pairs(6, 3, seed=4)
        replay = NegativeSampler(Rng(9))
        px, py = replay.derangement(6), replay.derangement(6)
        value = ebm_nce(batch, FixedDerangements(px, py)).item()

        perm = Rng(10).permutation(6)
        inverse = np.argsort(perm)
        shuffled = BatchReprs(Tensor(batch.hx.data[perm]), Tensor(batch.hy.data[perm]))
        # same negative pairs, relabelled to the new row order
        sampler = FixedDerangements(inverse[px[perm]], inverse[py[perm]])
        np.testing.assert_allclose(ebm_nce(shuffled, sampler).item(), value, atol=1e-12)

    def test_derangements_have_no_fixed_points(self):
        sampler = NegativeSampler(Rng(2))
        for k in (2, 3, 8):
            for _ in range(20):
                assert not np.any(sampler.derangement(k) == np.arange(k))

    def test_needs_two_pairs(self):
        with pytest.raises(DomainError):
            ebm_nce(pairs(1, 2), NegativeSampler(Rng(0)))


class TestKL:
    @pytest.mark.parametrize("mu, sigma, expected", [
        (0.0, 1.0, 0.0),
        (1.0, 1.0, 0.5),
        (0.5, 2.0, 0.5 * (0.25 + 4.0 - 1.0) - math.log(2.0)),
    ])
    def test_closed_form(self, mu, sigma, expected):
        value = kl_diag_gaussian(Tensor([mu]), Tensor([sigma])).item()
        np.testing.assert_allclose(value, expected, atol=1e-12)

    def test_known_value(self):
        np.testing.assert_allclose(kl_diag_gaussian(Tensor([0.5]), Tensor([2.0])).item(), 0.931853, atol=1e-6)

    def test_sums_over_dimensions(self):
        out = kl_diag_gaussian(Tensor([[1.0, 1.0], [0.0, 0.0]]), Tensor(np.ones((2, 2))))
        np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-12)

    def test_sigma_must_be_positive(self):
        with pytest.raises(DomainError):
            kl_diag_gaussian(Tensor([0.0]), Tensor([0.0]))


class TestReconstruction:
    def test_rr_is_vrr_without_noise(self, small_model):
        batch = pairs(4, 16, seed=1)
        zeros = np.zeros((4, 8))
        params, heads = small_model.params, small_model.heads
        expected = vrr(params, batch, heads, 0.0, None, epsilon=(zeros, zeros)).item()
        assert rr(params, batch, heads).item() == expected

    def test_rr_matches_naive_mse(self, small_model):
        batch = pairs(3, 16, seed=2)
        params, heads = small_model.params, small_model.heads
        pred_y = heads.q_x(params, heads.mu_x(params, batch.hx)).data
        pred_x = heads.q_y(params, heads.mu_y(params, batch.hy)).data
        expected = 0.5 * (np.mean(((pred_y - batch.hy.data) ** 2).sum(axis=1))
                          + np.mean(((pred_x - batch.hx.data) ** 2).sum(axis=1)))
        np.testing.assert_allclose(rr(params, batch, heads).item(), expected, atol=1e-12)

    def test_perfect_reconstruction_is_zero(self, small_model):
        batch = pairs(1, 16, seed=3)
        params, heads = small_model.params.copy(), small_model.heads
        for head, target in ((heads.q_x, batch.hy), (heads.q_y, batch.hx)):
            params.assign(f"{head.prefix}.1.w", np.zeros((16, 16)))
            params.assign(f"{head.prefix}.1.b", target.data[0])
        assert rr(params, batch, heads).item() == 0.0

    def test_vrr_is_non_negative_and_adds_kl(self, small_model):
        batch = pairs(4, 16, seed=5)
        params, heads = small_model.params, small_model.heads
        without = vrr(params, batch, heads, 0.0, Rng(3)).item()
        with_kl = vrr(params, batch, heads, 1.0, Rng(3)).item()
        assert without >= 0.0
        assert with_kl >= without

    def test_target_is_detached(self, small_model):
        params = small_model.params.merged(ParamStore({"target": Tensor(Rng(0).normal((3, 16)))}))
        z = Tensor(Rng(1).normal((3, 8)))
        with Tape() as tape:
            loss = reconstruction_term(params, small_model.heads.q_x, z, params["target"])
            grads = backward(loss, tape, params)
        assert not np.any(grads["target"].data)
        assert np.any(grads["heads.q_x.1.w"].data)


class TestSsl2d:
    def test_uniform_logits_give_log_classes(self):
        nodes = Tensor(np.zeros((4, 6)))
        value = attr_mask_2d(nodes, [0, 2], [1, 5], lambda x: x).item()
        np.testing.assert_allclose(value, math.log(6), atol=1e-12)

    def test_confident_classifier(self):
        nodes = Tensor(40.0 * np.eye(3))
        assert attr_mask_2d(nodes, [0, 1, 2], [0, 1, 2], lambda x: x).item() < 1e-12

    def test_matches_naive_cross_entropy(self):
        logits = Rng(4).normal((5, 4))
        masked, targets = [1, 3, 4], [2, 0, 3]
        expected = np.mean([
            math.log(sum(math.exp(v) for v in logits[i])) - logits[i, t] for i, t in zip(masked, targets)
        ])
        value = attr_mask_2d(Tensor(logits), masked, targets, lambda x: x).item()
        np.testing.assert_allclose(value, expected, atol=1e-12)

    def test_empty_mask(self):
        with pytest.raises(DomainError):
            attr_mask_2d(Tensor(np.zeros((3, 4))), [], [], lambda x: x)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            attr_mask_2d(Tensor(np.zeros((3, 4))), [0, 1], [2], lambda x: x)

    def test_contrastive_2d_identical_rows(self):
        h = Tensor(np.ones((5, 3)))
        np.testing.assert_allclose(contrastive_2d(h, h).item(), math.log(5), atol=1e-12)


class TestCombined:
    def test_single_family_matches_term(self, small_model):
        batch = pairs(4, 16, seed=8)
        config = LossConfig(contrastive_kind="infonce", generative_kind="none")
        total, terms = combined_loss(small_model.params, batch, small_model.heads, config, Rng(0))
        assert total.item() == pytest.approx(infonce(batch).item(), abs=1e-12)
        assert set(terms) == {"infonce"}

    def test_linear_in_weights(self, small_model):
        batch = pairs(4, 16, seed=9)
        values = []
        for alpha in (0.0, 1.0, 2.0):
            config = LossConfig(alpha1=alpha, alpha2=0.5)
            values.append(combined_loss(small_model.params, batch, small_model.heads, config, Rng(3))[0].item())
        np.testing.assert_allclose(values[2] - values[1], values[1] - values[0], atol=1e-12)

    def test_zero_weights(self, small_model):
        config = LossConfig(alpha1=0.0, alpha2=0.0)
        total, terms = combined_loss(small_model.params, pairs(4, 16), small_model.heads, config, Rng(0))
        assert total.item() == 0.0
        assert len(terms) == 2

    def test_variant_g_adds_attribute_masking(self, small_model):
        batch = pairs(3, 16, seed=10)
        nodes = Tensor(Rng(11).normal((7, 16)))
        aux = AuxInputs(node_reprs=nodes, masked_indices=np.array([1, 4]), true_atoms=np.array([6, 8]))
        plain = LossConfig()
        params, heads = small_model.params, small_model.heads
        base, _ = combined_loss(params, batch, heads, plain, Rng(2))
        total, terms = combined_loss(params, batch, heads, replace(plain, variant="G"), Rng(2), aux)
        np.testing.assert_allclose(total.item(), base.item() + terms["attr_mask"], atol=1e-12)

    def test_variant_needs_aux(self, small_model):
        with pytest.raises(ConfigError):
            combined_loss(small_model.params, pairs(3, 16), small_model.heads, LossConfig(variant="C"), Rng(0))


class TestLossConfig:
    @pytest.mark.parametrize("name, expected", [
        ("infonce", ("infonce", "none")),
        ("rr", ("none", "rr")),
        ("ebm_nce+rr", ("ebm_nce", "rr")),
        ("combined", ("ebm_nce", "vrr")),
        ("none", ("none", "none")),
    ])
    def test_select(self, name, expected):
        config = LossConfig().select(name)
        assert (config.contrastive_kind, config.generative_kind) == expected

    def test_invalid_selection(self):
        with pytest.raises(ConfigError):
            LossConfig().select("infonce+bogus")

    def test_invalid_weight(self):
        with pytest.raises(ConfigError):
            LossConfig(alpha1=-1.0)

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            LossConfig.from_dict({"temperature": 0.1})


class TestMutualInformation:
    def test_bounded_by_log_k(self):
        for seed in range(5):
            batch = pairs(16, 4, seed=seed, scale=2.0)
            assert mi_estimate_infonce(batch).item() <= math.log(16) + 1e-12

    def test_independent_inputs_near_zero(self):
        estimates = [mi_estimate_infonce(pairs(128, 4, seed=s, scale=0.1)).item() for s in range(20)]
        assert abs(float(np.mean(estimates))) < 0.05
