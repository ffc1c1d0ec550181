"""Full-catalogue ranking metrics and alignment/dispersion diagnostics."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

VIEWS = ("bundle", "item", "both")


@dataclass
class MetricsReport:
    recall_at: dict
    ndcg_at: dict
    evaluated_users: int
    view: str = "both"
    target: str = "validation"
    per_view: dict = field(default_factory=dict)
    rankings: dict | None = field(default=None, repr=False)

    def rows(self):
        """``(view, metric, K, value)`` rows, per-view entries included."""
        out = []
        reports = self.per_view or {self.view: self}
        for view, rep in reports.items():
            for k in sorted(rep.recall_at):
                out.append((view, "recall", k, rep.recall_at[k]))
                out.append((view, "ndcg", k, rep.ndcg_at[k]))
        return out

    def to_dict(self) -> dict:
        d = {
            "target": self.target, "view": self.view, "evaluated_users": self.evaluated_users,
            "recall": {str(k): v for k, v in sorted(self.recall_at.items())},
            "ndcg": {str(k): v for k, v in sorted(self.ndcg_at.items())},
        }
        if self.per_view:
            d["per_view"] = {v: r.to_dict() for v, r in self.per_view.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_table(self) -> str:
        lines = [f"{'view':<8}{'metric':<8}{'K':>5}  {'value':>10}"]
        for view, metric, k, value in self.rows():
            lines.append(f"{view:<8}{metric:<8}{k:>5}  {value:>10.6f}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["view", "metric", "K", "value"])
        w.writerows(self.rows())
        return buf.getvalue()


@dataclass
class AlignmentDispersionReport:
    align_user: float
    align_bundle: float
    disp_user_bundle_view: float
    disp_user_item_view: float
    disp_bundle_bundle_view: float
    disp_bundle_item_view: float
    sample_size: int

    LABELS = {
        "align_user": "A_U^C", "align_bundle": "A_B^C",
        "disp_user_bundle_view": "D_U^B", "disp_user_item_view": "D_U^I",
        "disp_bundle_bundle_view": "D_B^B", "disp_bundle_item_view": "D_B^I",
    }

    def to_dict(self) -> dict:
        d = {label: getattr(self, attr) for attr, label in self.LABELS.items()}
        d["sample_size"] = self.sample_size
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_table(self) -> str:
        lines = [f"{'metric':<8}{'value':>10}"]
        for attr, label in self.LABELS.items():
            lines.append(f"{label:<8}{getattr(self, attr):>10.6f}")
        return "\n".join(lines)


def ndcg_discounts(n: int) -> np.ndarray:
    """``1 / log2(rank + 1)`` for ranks 1..n."""
    return 1.0 / np.log2(np.arange(2, n + 2))


def _view_matrices(reps, view):
    if view == "bundle":
        return [(reps.user_bundle_view, reps.bundle_bundle_view)]
    if view == "item":
        return [(reps.user_item_view, reps.bundle_item_view)]
    if view == "both":
        return [(reps.user_bundle_view, reps.bundle_bundle_view),
                (reps.user_item_view, reps.bundle_item_view)]
    raise ValueError(f"unknown view {view!r}; expected one of {VIEWS}")


def _csr_of(pairs, m, n):
    import scipy.sparse as sp
    return sp.csr_matrix((np.ones(len(pairs), dtype=bool), (pairs[:, 0], pairs[:, 1])),
                         shape=(m, n))


def rank_and_score(reps, split, target: str = "validation", Ks=(20, 40), view: str = "both",
                   mask_validation_at_test: bool = True, chunk_size: int = 1024,
                   keep_rankings: bool = False) -> MetricsReport:
    """Recall@K and NDCG@K over users with at least one ``target`` bundle.

    Every bundle is scored; the user's train bundles (and validation bundles
    when ``target == "test"``) are excluded from the ranking.  Ties are broken
    by ascending bundle id.
    """
    Ks = sorted({int(k) for k in Ks})
    if not Ks or Ks[0] <= 0:
        raise ValueError("K values must be positive")
    target = "validation" if target == "tune" else target
    if target not in ("validation", "test"):
        raise ValueError(f"target must be 'validation' or 'test', got {target!r}")
    mats = _view_matrices(reps, view)
    m, n = mats[0][0].shape[0], mats[0][1].shape[0]
    truth = split.part(target)
    masked = [split.train]
    if target == "test" and mask_validation_at_test:
        masked.append(split.validation)
    mask = _csr_of(np.concatenate(masked), m, n)
    truth_mat = _csr_of(truth, m, n)
    users = np.unique(truth[:, 0]) if len(truth) else np.zeros(0, dtype=np.int64)
    kmax = Ks[-1]
    disc = ndcg_discounts(kmax)
    idcg_cum = np.cumsum(disc)
    # per-user values; math.fsum keeps the averages independent of chunking
    recall_vals = {k: [] for k in Ks}
    ndcg_vals = {k: [] for k in Ks}
    rankings = {} if keep_rankings else None

    for start in range(0, len(users), chunk_size):
        uc = users[start:start + chunk_size]
        scores = np.zeros((len(uc), n))
        for uv, bv in mats:
            scores += uv[uc] @ bv.T
        seen = mask[uc].toarray()
        scores[seen] = -np.inf
        order = np.argsort(-scores, axis=1, kind="stable")[:, :kmax]
        valid = np.take_along_axis(~seen, order, axis=1)
        rel = truth_mat[uc].toarray()
        hits = np.take_along_axis(rel, order, axis=1) & valid
        n_truth = rel.sum(axis=1)
        for k in Ks:
            hk = hits[:, :k]
            recall_vals[k].extend((hk.sum(axis=1) / n_truth).tolist())
            dcg = (hk * disc[:hk.shape[1]]).sum(axis=1)
            idcg = idcg_cum[np.minimum(n_truth, k) - 1]
            ndcg_vals[k].extend((dcg / idcg).tolist())
        if keep_rankings:
            for row, u in enumerate(uc):
                rankings[int(u)] = order[row][valid[row]]

    cnt = len(users)
    recall = {k: (math.fsum(recall_vals[k]) / cnt if cnt else 0.0) for k in Ks}
    ndcg = {k: (math.fsum(ndcg_vals[k]) / cnt if cnt else 0.0) for k in Ks}
    return MetricsReport(recall, ndcg, cnt, view=view, target=target, rankings=rankings)


def evaluate_views(reps, split, target="test", Ks=(20, 40), views=VIEWS,
                   mask_validation_at_test=True) -> MetricsReport:
    """Report for the combined score with per-view breakdowns attached."""
    per_view = {v: rank_and_score(reps, split, target, Ks, v, mask_validation_at_test)
                for v in views}
    main = per_view.get("both") or next(iter(per_view.values()))
    return MetricsReport(main.recall_at, main.ndcg_at, main.evaluated_users, view=main.view,
                         target=target, per_view=per_view)


def _unit_rows(x, skip_zero):
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0
    if zero.any() and not skip_zero:
        raise ValueError(f"zero-norm representation row {int(np.argmax(zero))}")
    return x[~zero] / norms[~zero, None], ~zero


def mean_pairwise_cosine(x, sample: int = 0, rng=None, skip_zero=False):
    """Mean cosine over unordered pairs of distinct rows.

    ``sample <= 0`` or ``sample`` at least the number of pairs gives the exact
    all-pairs mean; otherwise ``sample`` pairs (i != j) are drawn uniformly.
    Returns ``(value, pairs_used)``.
    """
    unit, _ = _unit_rows(np.asarray(x, dtype=np.float64), skip_zero)
    n = len(unit)
    total_pairs = n * (n - 1) // 2
    if total_pairs == 0:
        raise ValueError("need at least two rows for a pairwise mean")
    if sample <= 0 or sample >= total_pairs:
        s = unit.sum(axis=0)
        pair_sum = (float(s @ s) - float(np.sum(unit * unit))) / 2.0
        return pair_sum / total_pairs, total_pairs
    rng = rng if rng is not None else np.random.default_rng(0)
    i = rng.integers(n, size=sample)
    j = rng.integers(n - 1, size=sample)
    j = j + (j >= i)
    return float(np.mean(np.sum(unit[i] * unit[j], axis=1))), sample


def mean_matched_cosine(a, b, skip_zero=False):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    if not ok.all() and not skip_zero:
        raise ValueError(f"zero-norm representation row {int(np.argmin(ok))}")
    return float(np.mean(np.sum(a[ok] * b[ok], axis=1) / (na[ok] * nb[ok])))


def alignment_dispersion(reps, sample: int = 100_000, seed: int = 0,
                         skip_zero: bool = False) -> AlignmentDispersionReport:
    """Cross-view alignment and within-view dispersion of users and bundles.

    Alignment averages over every entity; dispersion over ``sample`` random
    pairs (``sample=0`` for all pairs).
    """
    if 0 < sample < 2:
        raise ValueError("sample must be 0 (exact) or >= 2")
    rng = np.random.default_rng(seed)
    disp = {}
    used = 0
    for key, mat in (("disp_user_bundle_view", reps.user_bundle_view),
                     ("disp_user_item_view", reps.user_item_view),
                     ("disp_bundle_bundle_view", reps.bundle_bundle_view),
                     ("disp_bundle_item_view", reps.bundle_item_view)):
        disp[key], n_pairs = mean_pairwise_cosine(mat, sample, rng, skip_zero)
        used = max(used, n_pairs)
    disp = {k: _clip_cos(v) for k, v in disp.items()}
    return AlignmentDispersionReport(
        align_user=_clip_cos(mean_matched_cosine(reps.user_bundle_view, reps.user_item_view,
                                                 skip_zero)),
        align_bundle=_clip_cos(mean_matched_cosine(reps.bundle_bundle_view,
                                                   reps.bundle_item_view, skip_zero)),
        sample_size=used, **disp)


def _clip_cos(x: float) -> float:
    return min(1.0, max(-1.0, x))
