"""Independent reference implementations used by the tests.

These deliberately avoid the package's sparse code paths: everything is
dense numpy, explicit loops, or enumeration.
"""
import math

import numpy as np

from crosscbr.dataset import BundleDataset


def random_dataset(rng, max_m=8, max_n=8, max_o=8, density=0.4, min_size=2):
    """Small random dataset where every bundle owns at least one item."""
    m = int(rng.integers(min_size, max_m + 1))
    n = int(rng.integers(min_size, max_n + 1))
    o = int(rng.integers(min_size, max_o + 1))
    ub = np.argwhere(rng.random((m, n)) < density)
    ui = np.argwhere(rng.random((m, o)) < density)
    bi = np.argwhere(rng.random((n, o)) < density)
    forced = np.stack([np.arange(n), rng.integers(o, size=n)], axis=1)
    bi = np.concatenate([bi, forced])
    return BundleDataset(m, n, o, ub, ui, bi)


def dense_biadjacency(pairs, left, right):
    """``D_L^{-1/2} A D_R^{-1/2}`` built by explicit degree counting."""
    a = np.zeros((left, right))
    for l, r in pairs:
        a[l, r] = 1.0
    dl = a.sum(axis=1)
    dr = a.sum(axis=0)
    out = np.zeros_like(a)
    for l in range(left):
        for r in range(right):
            if a[l, r]:
                out[l, r] = 1.0 / math.sqrt(dl[l] * dr[r])
    return out


def dense_propagate(a, left0, right0, K):
    """Alternating propagation with an explicit layer loop, summed over layers."""
    l, r = left0.copy(), right0.copy()
    out_l, out_r = l.copy(), r.copy()
    for _ in range(K):
        l, r = a @ r, a.T @ l
        out_l += l
        out_r += r
    return out_l, out_r


def dense_pool(item_reps, bundle_item, n):
    out = np.zeros((n, item_reps.shape[1]))
    for b in range(n):
        members = [i for bb, i in bundle_item if bb == b]
        if members:
            out[b] = np.mean([item_reps[i] for i in members], axis=0)
    return out


def dense_forward(dataset, tables, K):
    """Full two-view forward with dense matrices (OP mode)."""
    user, bundle, item = tables
    a_ub = dense_biadjacency(dataset.user_bundle, dataset.num_users, dataset.num_bundles)
    a_ui = dense_biadjacency(dataset.user_item, dataset.num_users, dataset.num_items)
    ub, bb = dense_propagate(a_ub, user, bundle, K)
    ui, ii = dense_propagate(a_ui, user, item, K)
    bi = dense_pool(ii, dataset.bundle_item, dataset.num_bundles)
    return ub, bb, ui, bi


def central_difference(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (modified in place, restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def brute_force_metrics(scores, train_sets, truth_sets, k):
    """Recall@k / NDCG@k by sorting an explicit list per user.

    ``scores``: (M, N) array; ``train_sets``/``truth_sets``: dict user -> set.
    Only users with a non-empty truth set count.  Ties go to the lower id.
    """
    recalls, ndcgs = [], []
    for u, truth in truth_sets.items():
        if not truth:
            continue
        candidates = [b for b in range(scores.shape[1]) if b not in train_sets.get(u, set())]
        ranked = sorted(candidates, key=lambda b: (-scores[u, b], b))[:k]
        hits = [1 if b in truth else 0 for b in ranked]
        recalls.append(sum(hits) / len(truth))
        dcg = sum(h / math.log2(pos + 2) for pos, h in enumerate(hits))
        idcg = sum(1 / math.log2(pos + 2) for pos in range(min(k, len(truth))))
        ndcgs.append(dcg / idcg)
    if not recalls:
        return 0.0, 0.0
    return math.fsum(recalls) / len(recalls), math.fsum(ndcgs) / len(ndcgs)


def naive_infonce(a, b, tau):
    """Per-row loop over the InfoNCE definition."""
    n = len(a)
    total = 0.0
    for i in range(n):
        def cos(x, y):
            return float(x @ y / (np.linalg.norm(x) * np.linalg.norm(y)))
        num = math.exp(cos(a[i], b[i]) / tau)
        den = sum(math.exp(cos(a[i], b[j]) / tau) for j in range(n))
        total += -math.log(num / den)
    return total / n


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def gradient_check(rng, mode, d, K, *, temperature=0.5, lambda1=0.7, lambda2=0.3,
                   self_connections=False, bundle_bundle=False, augmentation=None):
    """Worst relative error between analytic and finite-difference table gradients.

    Builds a random tiny instance with a valid batch (every sampled user has
    at least one positive and one negative bundle).
    """
    from crosscbr.encoder import ModelConfig, backward, forward, init_embeddings
    from crosscbr.graph import AugmentationConfig, build_pooling, build_ub_graph, build_ui_graph
    from crosscbr.objectives import LossConfig, TrainBatch, total_loss

    while True:
        ds = random_dataset(rng)
        x = np.zeros((ds.num_users, ds.num_bundles), dtype=bool)
        x[tuple(ds.user_bundle.T)] = True
        eligible = [u for u in range(ds.num_users) if x[u].any() and not x[u].all()]
        if len(eligible) >= 2:
            break
    state = init_embeddings(ds.num_users, ds.num_bundles, ds.num_items, d,
                            seed=int(rng.integers(1 << 30)))
    ub = build_ub_graph(ds, self_connections, bundle_bundle)
    ui = build_ui_graph(ds)
    pool = build_pooling(ds)
    cfg = ModelConfig(dim=d, layers=K, self_connections=self_connections,
                      bundle_bundle=bundle_bundle,
                      augmentation=augmentation or AugmentationConfig())
    T = int(rng.integers(2, 7))
    users = rng.choice(eligible, size=T)
    pos = [rng.choice(np.flatnonzero(x[u])) for u in users]
    neg = [rng.choice(np.flatnonzero(~x[u])) for u in users]
    batch = TrainBatch(users, pos, neg)
    loss_cfg = LossConfig(lambda1=lambda1, lambda2=lambda2, temperature=temperature, mode=mode)

    def loss():
        reps = forward(state, ub, ui, pool, cfg, epoch_seed=3, step=1)
        return total_loss(reps, state, batch, loss_cfg)[0].total

    reps = forward(state, ub, ui, pool, cfg, epoch_seed=3, step=1)
    _, rg, l2_grads = total_loss(reps, state, batch, loss_cfg)
    grads = backward(reps, rg.user_bundle_view, rg.bundle_bundle_view, rg.user_item_view,
                     rg.bundle_item_view).as_dict()
    for name, (rows, g) in l2_grads.items():
        np.add.at(grads[name], rows, g)
    worst = 0.0
    for name, table in state.tables().items():
        numeric = central_difference(loss, table)
        worst = max(worst, float(relative_error(grads[name], numeric).max()))
    return worst
