from __future__ import annotations

import math

import numpy as np
import pytest

from umre.errors import EmptyBatch, InvalidConfig, ZeroVector
from umre.infonce import (
    LossBatch,
    LossConfig,
    batched_infonce,
    infonce_backward,
    infonce_forward,
    loss_from_similarities,
)

from conftest import rng_for


def random_batch(rng, dim, k, *, with_ids=False):
    vecs = rng.normal(size=(k + 2, dim))
    ids = {}
    if with_ids:
        ids = dict(
            query_id="q",
            positive_id="p",
            negative_ids=[f"n{i}" for i in range(k)],
        )
    return LossBatch(query=vecs[0], positive=vecs[1], negatives=list(vecs[2:]), **ids)


def finite_difference_grads(batch: LossBatch, cfg: LossConfig, h: float = 1e-4):
    """Central differences of the forward loss over every raw input entry."""

    def loss_with(query=None, positive=None, negatives=None):
        return infonce_forward(
            LossBatch(
                query=batch.query if query is None else query,
                positive=batch.positive if positive is None else positive,
                negatives=list(batch.negatives) if negatives is None else negatives,
            ),
            cfg,
        )

    def grad_of(vec, rebuild):
        grad = np.zeros_like(vec, dtype=np.float64)
        for i in range(vec.size):
            up, down = vec.astype(np.float64).copy(), vec.astype(np.float64).copy()
            up[i] += h
            down[i] -= h
            grad[i] = (loss_with(**rebuild(up)) - loss_with(**rebuild(down))) / (2 * h)
        return grad

    gq = grad_of(np.asarray(batch.query), lambda v: {"query": v})
    gp = grad_of(np.asarray(batch.positive), lambda v: {"positive": v})
    gns = []
    for j in range(len(batch.negatives)):
        def rebuild(v, j=j):
            negs = [np.asarray(n, dtype=np.float64).copy() for n in batch.negatives]
            negs[j] = v
            return {"negatives": negs}

        gns.append(grad_of(np.asarray(batch.negatives[j]), rebuild))
    return gq, gp, gns


def max_relative_error(analytic, numeric):
    a = np.asarray(analytic)
    f = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-6)
    return float(np.max(np.abs(a - f) / denom))


class TestForward:
    def test_saturated_loss_is_tiny(self):
        # positive at cos 1, all 8 negatives at cos -1: closed form
        # -log(1 / (1 + 8 exp(-2/tau))) ~ 8 exp(-2/0.03)
        q = np.array([1.0, 0.0])
        batch = LossBatch(query=q, positive=q.copy(), negatives=[-q.copy()] * 8)
        loss = infonce_forward(batch, LossConfig(temperature=0.03, negatives_per_query=8))
        # 8 exp(-2/0.03) ~ 9e-29 underflows against the positive term in
        # double precision, so the stabilized loss may round to exactly 0.
        assert 0.0 <= loss < 1e-9

    def test_uniform_similarities_ln9(self):
        q = np.array([0.3, -0.7, 0.2])
        v = np.array([1.0, 1.0, 1.0])
        batch = LossBatch(query=q, positive=v.copy(), negatives=[v.copy() for _ in range(8)])
        loss = infonce_forward(batch, LossConfig(temperature=0.03, negatives_per_query=8))
        assert loss == pytest.approx(math.log(9.0), abs=1e-9)

    def test_k1_orthogonal_ln2(self):
        batch = LossBatch(
            query=np.array([1.0, 0.0, 0.0]),
            positive=np.array([0.0, 1.0, 0.0]),
            negatives=[np.array([0.0, 0.0, 1.0])],
        )
        loss = infonce_forward(batch, LossConfig(temperature=1.0, negatives_per_query=1))
        assert loss == pytest.approx(math.log(2.0), abs=1e-9)

    def test_invalid_temperature(self):
        with pytest.raises(InvalidConfig):
            LossConfig(temperature=0.0)

    def test_negative_count_mismatch(self):
        batch = random_batch(rng_for(0), 4, 3)
        with pytest.raises(InvalidConfig):
            infonce_forward(batch, LossConfig(temperature=0.1, negatives_per_query=8))

    def test_zero_vector_rejected(self):
        batch = LossBatch(
            query=np.zeros(3), positive=np.ones(3), negatives=[np.ones(3)]
        )
        with pytest.raises(ZeroVector):
            infonce_forward(batch, LossConfig(temperature=1.0, negatives_per_query=1))

    def test_loss_always_positive(self):
        rng = rng_for(1)
        cfg = LossConfig(temperature=0.1, negatives_per_query=4)
        for _ in range(50):
            assert infonce_forward(random_batch(rng, 6, 4), cfg) > 0.0

    def test_query_scale_invariance(self):
        rng = rng_for(2)
        cfg = LossConfig(temperature=0.5, negatives_per_query=3)
        batch = random_batch(rng, 5, 3)
        scaled = LossBatch(
            query=batch.query * 37.5, positive=batch.positive, negatives=batch.negatives
        )
        assert infonce_forward(batch, cfg) == pytest.approx(
            infonce_forward(scaled, cfg), abs=1e-6
        )

    def test_margin_monotonicity(self):
        # Loss falls monotonically as the positive pulls away from the negatives.
        losses = [
            loss_from_similarities(pos, np.array([0.0, 0.0]), 0.1)
            for pos in (0.1, 0.3, 0.5, 0.7, 0.9)
        ]
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_temperature_monotonicity(self):
        # With the positive ahead of every negative, sharpening (smaller tau)
        # shrinks the loss.
        negs = np.array([0.2, -0.1])
        losses = [loss_from_similarities(0.8, negs, tau) for tau in (1.0, 0.3, 0.1, 0.03)]
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_shift_invariance(self):
        rng = rng_for(3)
        negs = rng.uniform(-1, 1, size=6)
        base = loss_from_similarities(0.4, negs, 0.07)
        for shift in (-5.0, -0.5, 0.5, 5.0):
            shifted = loss_from_similarities(0.4 + shift, negs + shift, 0.07)
            assert shifted == pytest.approx(base, abs=1e-9)


class TestBackward:
    def test_symmetric_configuration_zero_axis_gradient(self):
        # Positive and the single negative are reflections across the query
        # axis, so the query gradient has no component along that axis.
        batch = LossBatch(
            query=np.array([1.0, 0.0]),
            positive=np.array([1.0, 1.0]),
            negatives=[np.array([1.0, -1.0])],
        )
        out = infonce_backward(batch, LossConfig(temperature=0.25, negatives_per_query=1))
        assert abs(out.grad_query[0]) < 1e-8

    def test_matches_finite_differences_fixed_seed(self):
        rng = rng_for(42)
        cfg = LossConfig(temperature=0.1, negatives_per_query=3)
        batch = random_batch(rng, 6, 3)
        out = infonce_backward(batch, cfg)
        gq, gp, gns = finite_difference_grads(batch, cfg)
        assert max_relative_error(out.grad_query, gq) < 1e-4
        assert max_relative_error(out.grad_positive, gp) < 1e-4
        for analytic, numeric in zip(out.grad_negatives, gns):
            assert max_relative_error(analytic, numeric) < 1e-4

    def test_saturated_gradients_vanish(self):
        q = np.array([1.0, 0.0])
        batch = LossBatch(query=q, positive=q.copy(), negatives=[-q.copy()] * 8)
        out = infonce_backward(batch, LossConfig(temperature=0.03, negatives_per_query=8))
        assert np.linalg.norm(out.grad_query) < 1e-6
        assert np.linalg.norm(out.grad_positive) < 1e-6
        for g in out.grad_negatives:
            assert np.linalg.norm(g) < 1e-6

    def test_loss_matches_forward(self):
        rng = rng_for(5)
        cfg = LossConfig(temperature=0.3, negatives_per_query=2)
        batch = random_batch(rng, 4, 2)
        assert infonce_backward(batch, cfg).loss == infonce_forward(batch, cfg)


class TestBatched:
    def test_single_instance_equals_backward(self):
        rng = rng_for(6)
        cfg = LossConfig(temperature=0.2, negatives_per_query=2)
        batch = random_batch(rng, 4, 2, with_ids=True)
        loss, grads = batched_infonce([batch], cfg)
        single = infonce_backward(batch, cfg)
        assert loss == single.loss
        np.testing.assert_array_equal(grads["q"], single.grad_query)
        np.testing.assert_array_equal(grads["p"], single.grad_positive)
        np.testing.assert_array_equal(grads["n0"], single.grad_negatives[0])

    def test_two_identical_instances_average_back_to_one(self):
        rng = rng_for(7)
        cfg = LossConfig(temperature=0.2, negatives_per_query=2)
        batch = random_batch(rng, 4, 2, with_ids=True)
        loss1, grads1 = batched_infonce([batch], cfg)
        loss2, grads2 = batched_infonce([batch, batch], cfg)
        assert loss2 == pytest.approx(loss1, abs=1e-12)
        for key in grads1:
            np.testing.assert_allclose(grads2[key], grads1[key], atol=1e-12)

    def test_mean_of_sixteen_random_instances(self):
        rng = rng_for(8)
        cfg = LossConfig(temperature=0.5, negatives_per_query=3)
        batches = []
        for i in range(16):
            b = random_batch(rng, 5, 3)
            b.query_id, b.positive_id = f"q{i}", f"p{i}"
            b.negative_ids = [f"n{i}-{j}" for j in range(3)]
            batches.append(b)
        loss, _ = batched_infonce(batches, cfg)
        expected = sum(infonce_forward(b, cfg) for b in batches) / 16
        assert loss == pytest.approx(expected, abs=1e-10)

    def test_empty_batch(self):
        with pytest.raises(EmptyBatch):
            batched_infonce([], LossConfig())

    def test_missing_ids_rejected(self):
        batch = random_batch(rng_for(9), 4, 2)
        with pytest.raises(InvalidConfig):
            batched_infonce([batch], LossConfig(temperature=0.2, negatives_per_query=2))

    def test_in_batch_negatives_flag(self):
        rng = rng_for(10)
        cfg = LossConfig(temperature=0.5, negatives_per_query=2, in_batch_negatives=True)
        b1 = random_batch(rng, 4, 2, with_ids=True)
        b2 = random_batch(rng, 4, 2)
        b2.query_id, b2.positive_id, b2.negative_ids = "q2", "p2", ["n2-0", "n2-1"]
        loss_shared, grads_shared = batched_infonce([b1, b2], cfg)
        plain_cfg = LossConfig(temperature=0.5, negatives_per_query=2)
        loss_plain, _ = batched_infonce([b1, b2], plain_cfg)
        # The other instance's positive joins the denominator, raising the loss.
        assert loss_shared > loss_plain
        assert "p2" in grads_shared and "p" in grads_shared


class TestGradientSweep:
    def test_hundred_random_configurations(self):
        rng = rng_for(1234)
        worst = 0.0
        checked = 0
        dims = (4, 16, 64)
        ks = (1, 4, 8)
        taus = (0.03, 0.1, 1.0)
        while checked < 100:
            dim = dims[checked % 3]
            k = ks[(checked // 3) % 3]
            tau = taus[(checked // 9) % 3]
            cfg = LossConfig(temperature=tau, negatives_per_query=k)
            batch = random_batch(rng, dim, k)
            out = infonce_backward(batch, cfg)
            gq, gp, gns = finite_difference_grads(batch, cfg)
            worst = max(worst, max_relative_error(out.grad_query, gq))
            worst = max(worst, max_relative_error(out.grad_positive, gp))
            for analytic, numeric in zip(out.grad_negatives, gns):
                worst = max(worst, max_relative_error(analytic, numeric))
            checked += 1
        assert worst < 1e-4
