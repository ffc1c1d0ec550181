import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crosscbr.encoder import EmbeddingState, ViewRepresentations
from crosscbr.graph import AugmentationConfig
from crosscbr.objectives import (LossConfig, TrainBatch, bpr_loss, infonce_loss, l2_term,
                                 predict_scores, total_loss)
from oracles import gradient_check, naive_infonce

MODES = ("full", "no_CL", "align_only", "disperse_only")


def test_bpr_zero_margin_is_ln2():
    loss, gp, gn = bpr_loss([0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    assert loss == pytest.approx(3 * math.log(2), abs=1e-12)
    np.testing.assert_allclose(gp, -0.5)
    np.testing.assert_allclose(gn, 0.5)


def test_bpr_unit_margin():
    loss, gp, gn = bpr_loss([1.0], [0.0])
    assert loss == pytest.approx(0.313262, abs=1e-6)
    assert gp[0] == pytest.approx(-0.268941, abs=1e-6)
    assert gn[0] == pytest.approx(0.268941, abs=1e-6)


def test_bpr_mean_reduction():
    s, _, _ = bpr_loss([1.0, 0.0], [0.0, 0.0])
    m, gp, _ = bpr_loss([1.0, 0.0], [0.0, 0.0], reduction="mean")
    assert m == pytest.approx(s / 2)
    assert gp[1] == pytest.approx(-0.25)


def test_bpr_extreme_margins_are_finite():
    loss, gp, _ = bpr_loss([1000.0, -1000.0], [0.0, 0.0])
    assert np.isfinite(loss) and np.all(np.isfinite(gp))
    assert loss == pytest.approx(1000.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=8), st.floats(-50, 50))
def test_bpr_translation_invariant(scores, shift):
    pos = np.array(scores)
    neg = pos[::-1].copy()
    a, _, _ = bpr_loss(pos, neg)
    b, _, _ = bpr_loss(pos + shift, neg + shift)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


def test_infonce_orthonormal_two_users():
    eye = np.eye(2)
    loss, _, _ = infonce_loss(eye, eye, 1.0)
    assert loss == pytest.approx(0.313262, abs=1e-6)
    assert loss == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)


@pytest.mark.parametrize("T", [2, 3, 5, 8])
def test_infonce_orthonormal_closed_form(T):
    eye = np.eye(T)
    loss, _, _ = infonce_loss(eye, eye, 1.0)
    assert loss == pytest.approx(math.log(1 + (T - 1) * math.exp(-1)), abs=1e-12)


def test_infonce_matches_naive(rng):
    for _ in range(20):
        n, d = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        a, b = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        tau = float(rng.uniform(0.1, 1.0))
        loss, _, _ = infonce_loss(a, b, tau)
        assert loss == pytest.approx(naive_infonce(a, b, tau), abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 100))
def test_infonce_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    l1, _, _ = infonce_loss(a, b, 0.3)
    l2, _, _ = infonce_loss(scale * a, b / scale, 0.3)
    assert l1 == pytest.approx(l2, abs=1e-9)


def test_infonce_variants():
    eye = np.eye(3)
    loss, _, _ = infonce_loss(eye, eye, 0.5, "align_only")
    assert loss == pytest.approx(-1.0)
    full, _, _ = infonce_loss(eye, eye, 0.5, "full")
    disp, _, _ = infonce_loss(eye, eye, 0.5, "disperse_only")
    # matched pairs already have cosine 1, so fixing the numerator changes nothing
    assert full == pytest.approx(disp)


def test_infonce_errors():
    with pytest.raises(ValueError):
        infonce_loss(np.ones((1, 2)), np.ones((1, 2)), 0.2)
    with pytest.raises(ValueError, match="zero-norm"):
        infonce_loss(np.array([[0.0, 0.0], [1.0, 0.0]]), np.eye(2), 0.2)
    with pytest.raises(ValueError):
        infonce_loss(np.eye(2), np.eye(2), 0.2, "bogus")


def test_l2_counts_distinct_rows():
    state = EmbeddingState(np.ones((2, 1)), np.ones((3, 1)), np.full((4, 1), 9.0))
    batch = TrainBatch([0, 0, 1], [0, 0, 1], [2, 2, 2])
    value, grads = l2_term(state, batch)
    # users {0, 1} and bundles {0, 1, 2}: 5 unit rows over T = 3; items never count
    assert value == pytest.approx(5 / 3)
    assert set(grads) == {"user", "bundle"}


def test_l2_example():
    state = EmbeddingState(np.array([[1.0, 1.0]]), np.array([[1.0, 0.0], [0.0, 0.0]]),
                           np.zeros((1, 2)))
    value, _ = l2_term(state, TrainBatch([0], [0], [1]))
    assert value == pytest.approx(3.0)


def _reps(rng, m=4, n=3, d=2):
    return ViewRepresentations(rng.normal(size=(m, d)), rng.normal(size=(n, d)),
                               rng.normal(size=(m, d)), rng.normal(size=(n, d)),
                               rng.normal(size=(5, d)))


def test_predict_scores_views(rng):
    reps = _reps(rng)
    both = predict_scores(reps, [1, 2], [0, 2])
    bv = predict_scores(reps, [1, 2], [0, 2], "bundle")
    iv = predict_scores(reps, [1, 2], [0, 2], "item")
    np.testing.assert_allclose(both, bv + iv)
    assert bv[0] == pytest.approx(reps.user_bundle_view[1] @ reps.bundle_bundle_view[0])
    with pytest.raises(IndexError):
        predict_scores(reps, [9], [0])


def test_no_cl_excludes_contrastive(rng):
    reps = _reps(rng)
    state = EmbeddingState(rng.normal(size=(4, 2)), rng.normal(size=(3, 2)), rng.normal(size=(5, 2)))
    batch = TrainBatch([0, 1, 2], [0, 1, 1], [2, 2, 0])
    full, _, _ = total_loss(reps, state, batch, LossConfig(mode="full", lambda1=0.5))
    nocl, _, _ = total_loss(reps, state, batch, LossConfig(mode="no_CL", lambda1=0.5))
    assert nocl.contrastive == pytest.approx(full.contrastive)
    assert nocl.total == pytest.approx(nocl.bpr + 2e-5 * nocl.l2)
    assert full.total == pytest.approx(full.bpr + 0.5 * full.contrastive + 2e-5 * full.l2)


def test_single_entity_batch_has_no_contrastive(rng):
    reps = _reps(rng)
    state = EmbeddingState(rng.normal(size=(4, 2)), rng.normal(size=(3, 2)), rng.normal(size=(5, 2)))
    out, _, _ = total_loss(reps, state, TrainBatch([1, 1], [0, 0], [2, 2]), LossConfig())
    assert out.contrastive_user == 0.0 and out.contrastive_bundle == 0.0


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(mode="nope")
    with pytest.raises(ValueError):
        LossConfig(temperature=0)


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("K", [0, 1, 2])
def test_gradients_match_finite_differences(mode, K, rng):
    for _ in range(3):
        d = int(rng.integers(1, 6))
        assert gradient_check(rng, mode, d, K) < 1e-4


@pytest.mark.parametrize("sc,bb", [(True, False), (False, True), (True, True)])
def test_gradients_with_extra_edges(sc, bb, rng):
    for _ in range(3):
        assert gradient_check(rng, "full", 3, 2, self_connections=sc, bundle_bundle=bb) < 1e-4


@pytest.mark.parametrize("mode", ["ED", "MD"])
def test_gradients_under_fixed_augmentation(mode, rng):
    aug = AugmentationConfig(mode, 0.3, seed=5)
    for _ in range(3):
        assert gradient_check(rng, "full", 3, 2, augmentation=aug) < 1e-4


def test_predict_score_example():
    reps = ViewRepresentations(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]),
                               np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), np.zeros((1, 2)))
    assert predict_scores(reps, [0], [0])[0] == 11.0


def test_predict_zero_item_view_and_naive(rng):
    reps = _reps(rng)
    reps.user_item_view[:] = 0
    users, bundles = [0, 3, 2], [2, 2, 1]
    got = predict_scores(reps, users, bundles)
    want = [sum(reps.user_bundle_view[u][c] * reps.bundle_bundle_view[b][c] for c in range(2))
            for u, b in zip(users, bundles)]
    np.testing.assert_allclose(got, want, rtol=1e-14)


def test_bpr_large_margin_vanishes():
    loss, _, _ = bpr_loss([60.0], [0.0])
    assert loss < 1e-25


def test_infonce_scaling_one_view_by_ten(rng):
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    assert infonce_loss(a, b, 0.2)[0] == pytest.approx(infonce_loss(10 * a, b, 0.2)[0], abs=1e-12)


def test_contrastive_deduplicates_entities(rng):
    reps = _reps(rng)
    state = EmbeddingState(rng.normal(size=(4, 2)), rng.normal(size=(3, 2)), rng.normal(size=(5, 2)))
    once, _, _ = total_loss(reps, state, TrainBatch([0, 1], [0, 1], [2, 2]), LossConfig())
    dup, _, _ = total_loss(reps, state, TrainBatch([0, 1, 1, 0], [0, 1, 1, 0], [2, 2, 2, 2]),
                           LossConfig())
    assert dup.contrastive_user == pytest.approx(once.contrastive_user, abs=1e-15)
    assert dup.contrastive_bundle == pytest.approx(once.contrastive_bundle, abs=1e-15)
    assert dup.contrastive_user == pytest.approx(
        infonce_loss(reps.user_bundle_view[[0, 1]], reps.user_item_view[[0, 1]], 0.2)[0])


def test_l2_zero_and_naive(rng):
    zero = EmbeddingState(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((2, 2)))
    assert l2_term(zero, TrainBatch([0, 1], [0, 1], [2, 2]))[0] == 0.0
    state = EmbeddingState(rng.normal(size=(3, 2)), rng.normal(size=(4, 2)), rng.normal(size=(2, 2)))
    batch = TrainBatch([0, 2, 2], [1, 3, 1], [0, 0, 2])
    naive = (sum(float(state.user_table[u] @ state.user_table[u]) for u in {0, 2})
             + sum(float(state.bundle_table[b] @ state.bundle_table[b]) for b in {0, 1, 2, 3})) / 3
    assert l2_term(state, batch)[0] == pytest.approx(naive, rel=1e-14)


def test_zero_weights_total_is_bpr(rng):
    reps = _reps(rng)
    state = EmbeddingState(rng.normal(size=(4, 2)), rng.normal(size=(3, 2)), rng.normal(size=(5, 2)))
    out, _, _ = total_loss(reps, state, TrainBatch([0, 1], [0, 1], [2, 2]),
                           LossConfig(lambda1=0.0, lambda2=0.0))
    assert out.total == out.bpr


def test_align_only_perfect_alignment():
    x = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]])
    assert infonce_loss(x, 2 * x, 0.2, "align_only")[0] == pytest.approx(-1.0)
