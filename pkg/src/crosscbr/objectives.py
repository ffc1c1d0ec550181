"""Training objective: BPR ranking loss, cross-view InfoNCE, L2, and gradients.

All gradients are analytic.  ``total_loss`` returns gradients with respect
to the four representation matrices and the layer-0 L2 gradients; the
encoder's ``backward`` chains the former into the embedding tables.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .encoder import EmbeddingState, ViewRepresentations

LOSS_MODES = ("full", "no_CL", "align_only", "disperse_only")


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.1
    lambda2: float = 2e-5
    temperature: float = 0.2
    mode: str = "full"
    bpr_mean: bool = True

    def __post_init__(self):
        if self.mode not in LOSS_MODES:
            raise ValueError(f"loss mode must be one of {LOSS_MODES}, got {self.mode!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class TrainBatch:
    users: np.ndarray
    pos_bundles: np.ndarray
    neg_bundles: np.ndarray

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.pos_bundles = np.asarray(self.pos_bundles, dtype=np.int64)
        self.neg_bundles = np.asarray(self.neg_bundles, dtype=np.int64)
        if not len(self.users) == len(self.pos_bundles) == len(self.neg_bundles):
            raise ValueError("batch columns must have equal length")

    def __len__(self):
        return len(self.users)

    @property
    def unique_users(self) -> np.ndarray:
        return np.unique(self.users)

    @property
    def unique_pos_bundles(self) -> np.ndarray:
        return np.unique(self.pos_bundles)


@dataclass
class LossBreakdown:
    bpr: float
    contrastive_user: float
    contrastive_bundle: float
    contrastive: float
    l2: float
    total: float

    def to_json(self, step: int) -> str:
        return json.dumps({
            "step": step, "bpr": self.bpr, "cl_u": self.contrastive_user,
            "cl_b": self.contrastive_bundle, "l2": self.l2, "total": self.total,
        })


@dataclass
class RepresentationGradients:
    user_bundle_view: np.ndarray
    bundle_bundle_view: np.ndarray
    user_item_view: np.ndarray
    bundle_item_view: np.ndarray


def _check_ids(ids, bound, what):
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) and (ids.min() < 0 or ids.max() >= bound):
        raise IndexError(f"{what} id out of range [0, {bound})")
    return ids


def predict_scores(reps: ViewRepresentations, users, bundles, view: str = "both") -> np.ndarray:
    """Scores of (user, bundle) pairs: bundle-view dot + item-view dot."""
    users = _check_ids(users, len(reps.user_bundle_view), "user")
    bundles = _check_ids(bundles, len(reps.bundle_bundle_view), "bundle")
    score = np.zeros(len(users))
    if view in ("bundle", "both"):
        score = score + np.einsum("ij,ij->i", reps.user_bundle_view[users],
                                  reps.bundle_bundle_view[bundles])
    if view in ("item", "both"):
        score = score + np.einsum("ij,ij->i", reps.user_item_view[users],
                                  reps.bundle_item_view[bundles])
    if view not in ("bundle", "item", "both"):
        raise ValueError(f"unknown view {view!r}")
    return score


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bpr_loss(scores_pos, scores_neg, reduction: str = "sum"):
    """``sum -log sigmoid(pos - neg)`` with gradients w.r.t. both score vectors."""
    scores_pos = np.asarray(scores_pos, dtype=np.float64)
    scores_neg = np.asarray(scores_neg, dtype=np.float64)
    if scores_pos.shape != scores_neg.shape:
        raise ValueError("positive and negative scores must have equal length")
    delta = scores_pos - scores_neg
    loss = softplus(-delta)
    g = -sigmoid(-delta)
    if reduction == "mean":
        n = max(len(delta), 1)
        return float(loss.sum() / n), g / n, -g / n
    if reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return float(loss.sum()), g, -g


def _normalize_rows(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValueError("zero-norm representation row: cosine similarity is undefined")
    return x / norms, norms


def _unnormalize_grad(g_unit, unit, norms):
    """Chain a gradient w.r.t. ``x/|x|`` back to ``x``."""
    return (g_unit - unit * np.sum(unit * g_unit, axis=1, keepdims=True)) / norms


def infonce_loss(anchor_view, other_view, temperature: float, variant: str = "full"):
    """Cross-view InfoNCE over a batch of entities.

    Row ``i`` of ``anchor_view`` is contrasted against every row of
    ``other_view``; row ``i`` of ``other_view`` is its positive.

    ``variant`` selects the ablations: ``align_only`` returns the negative
    mean cross-view cosine; ``disperse_only`` fixes the positive similarity
    in the numerator at 1.

    Returns ``(loss, grad_anchor, grad_other)``.
    """
    a_raw = np.asarray(anchor_view, dtype=np.float64)
    b_raw = np.asarray(other_view, dtype=np.float64)
    if a_raw.shape != b_raw.shape:
        raise ValueError("both views must hold the same entities")
    n = a_raw.shape[0]
    if n < 2:
        raise ValueError("InfoNCE needs at least two entities in the batch")
    a, na = _normalize_rows(a_raw)
    b, nb = _normalize_rows(b_raw)

    if variant == "align_only":
        cos = np.sum(a * b, axis=1)
        loss = -float(cos.mean())
        ga, gb = -b / n, -a / n
    elif variant in ("full", "disperse_only"):
        logits = (a @ b.T) / temperature
        shift = logits.max(axis=1, keepdims=True)
        ex = np.exp(logits - shift)
        denom = ex.sum(axis=1, keepdims=True)
        lse = (np.log(denom) + shift)[:, 0]
        probs = ex / denom
        g_logits = probs.copy()
        if variant == "full":
            loss = float(np.mean(lse - np.diag(logits)))
            g_logits[np.diag_indices(n)] -= 1.0
        else:
            loss = float(np.mean(lse - 1.0 / temperature))
        g_logits /= n * temperature
        ga = g_logits @ b
        gb = g_logits.T @ a
    else:
        raise ValueError(f"unknown InfoNCE variant {variant!r}")
    return loss, _unnormalize_grad(ga, a, na), _unnormalize_grad(gb, b, nb)


def l2_term(state: EmbeddingState, batch: TrainBatch):
    """Squared norm of the batch's layer-0 rows, divided by the batch size.

    Distinct users and distinct bundles (positive or negative) each count once.
    Returns ``(value, {"user": (rows, grad_rows), "bundle": (rows, grad_rows)})``.
    """
    T = max(len(batch), 1)
    users = np.unique(batch.users)
    bundles = np.unique(np.concatenate([batch.pos_bundles, batch.neg_bundles]))
    ue = state.user_table[users]
    be = state.bundle_table[bundles]
    value = (float(np.sum(ue * ue)) + float(np.sum(be * be))) / T
    grads = {"user": (users, 2.0 * ue / T), "bundle": (bundles, 2.0 * be / T)}
    return value, grads


def contrastive_terms(reps: ViewRepresentations, batch: TrainBatch, config: LossConfig):
    """User and bundle cross-view losses over the batch's distinct entities."""
    variant = "full" if config.mode in ("full", "no_CL") else config.mode
    out = {}
    for key, ids, bview, iview in (
            ("user", batch.unique_users, reps.user_bundle_view, reps.user_item_view),
            ("bundle", batch.unique_pos_bundles, reps.bundle_bundle_view, reps.bundle_item_view)):
        if len(ids) < 2:
            out[key] = (0.0, ids, None, None)
            continue
        loss, ga, gb = infonce_loss(bview[ids], iview[ids], config.temperature, variant)
        out[key] = (loss, ids, ga, gb)
    return out


def total_loss(reps: ViewRepresentations, state: EmbeddingState, batch: TrainBatch,
               config: LossConfig):
    """Joint objective ``bpr + lambda1 * contrastive + lambda2 * l2``.

    Returns ``(LossBreakdown, RepresentationGradients, l2_grads)`` where
    ``l2_grads`` maps table name to ``(rows, grad_rows)`` for the layer-0
    tables (already multiplied by ``lambda2``).
    """
    u, bp, bn = batch.users, batch.pos_bundles, batch.neg_bundles
    ub, bb, ui, bi = (reps.user_bundle_view, reps.bundle_bundle_view,
                      reps.user_item_view, reps.bundle_item_view)
    g_ub, g_bb = np.zeros_like(ub), np.zeros_like(bb)
    g_ui, g_bi = np.zeros_like(ui), np.zeros_like(bi)

    pos = predict_scores(reps, u, bp)
    neg = predict_scores(reps, u, bn)
    bpr, gpos, gneg = bpr_loss(pos, neg, "mean" if config.bpr_mean else "sum")
    gpos, gneg = gpos[:, None], gneg[:, None]
    np.add.at(g_ub, u, gpos * bb[bp] + gneg * bb[bn])
    np.add.at(g_ui, u, gpos * bi[bp] + gneg * bi[bn])
    np.add.at(g_bb, bp, gpos * ub[u])
    np.add.at(g_bb, bn, gneg * ub[u])
    np.add.at(g_bi, bp, gpos * ui[u])
    np.add.at(g_bi, bn, gneg * ui[u])

    cl = contrastive_terms(reps, batch, config)
    cl_u, cl_b = cl["user"][0], cl["bundle"][0]
    contrastive = 0.5 * (cl_u + cl_b)
    weight = 0.0 if config.mode == "no_CL" else config.lambda1
    if weight:
        for key, gb_view, gi_view in (("user", g_ub, g_ui), ("bundle", g_bb, g_bi)):
            _, ids, ga, gb = cl[key]
            if ga is None:
                continue
            gb_view[ids] += 0.5 * weight * ga
            gi_view[ids] += 0.5 * weight * gb

    l2, l2_grads = l2_term(state, batch)
    l2_grads = {k: (rows, config.lambda2 * g) for k, (rows, g) in l2_grads.items()}
    total = bpr + weight * contrastive + config.lambda2 * l2
    breakdown = LossBreakdown(bpr, cl_u, cl_b, contrastive, l2, total)
    return breakdown, RepresentationGradients(g_ub, g_bb, g_ui, g_bi), l2_grads
