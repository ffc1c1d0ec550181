"""Embedding tables, two-view propagation and its reverse pass.

Forward, per view::

    H_0 = [E_left; E_right]
    H_k = drop_k(P H_{k-1})          k = 1..K
    H*  = H_0 + H_1 + ... + H_K

where ``P`` is the stacked normalized operator of the graph and ``drop_k``
is the identity unless message dropout is on.  The item view is pooled over
the bundle-item affiliations afterwards.  Everything is linear in the
tables, so the reverse pass replays the layers backwards with ``P^T``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import (CSR, AugmentationConfig, NormalizedBipartiteGraph,
                    build_pooling_from_pairs, cached_edge_dropout)

_UB_TAG, _UI_TAG = 1, 2


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    layers: int = 2
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    self_connections: bool = False
    bundle_bundle: bool = False
    init_scale: str = "xavier_normal"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.init_scale != "xavier_normal":
            raise ValueError("only xavier_normal initialization is supported")


@dataclass
class EmbeddingState:
    user_table: np.ndarray
    bundle_table: np.ndarray
    item_table: np.ndarray

    @property
    def d(self) -> int:
        return self.user_table.shape[1]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (len(self.user_table), len(self.bundle_table), len(self.item_table), self.d)

    def tables(self) -> dict[str, np.ndarray]:
        return {"user": self.user_table, "bundle": self.bundle_table, "item": self.item_table}

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tables().values())

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(self.user_table.copy(), self.bundle_table.copy(),
                              self.item_table.copy())

    def all_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tables().values())


def xavier_std(d: int) -> float:
    # fan_in = fan_out = d
    return float(np.sqrt(2.0 / (d + d)))


def init_embeddings(M: int, N: int, O: int, d: int, seed: int = 0,
                    dtype=np.float64) -> EmbeddingState:
    if min(M, N, O) < 0 or d < 1:
        raise ValueError("table sizes must be non-negative and d >= 1")
    rng = np.random.default_rng(seed)
    std = xavier_std(d)
    return EmbeddingState(
        rng.normal(0.0, std, size=(M, d)).astype(dtype),
        rng.normal(0.0, std, size=(N, d)).astype(dtype),
        rng.normal(0.0, std, size=(O, d)).astype(dtype),
    )


@dataclass
class PropagationCache:
    operator: CSR
    left_count: int
    layers: list
    masks: list
    scale: float


def propagate(graph: NormalizedBipartiteGraph, left0: np.ndarray, right0: np.ndarray,
              K: int, message_dropout=None):
    """K rounds of normalized message passing, summed over layers 0..K.

    ``message_dropout`` is ``None`` or ``(ratio, seed)``; when active, every
    propagated layer (k >= 1) has entries zeroed with probability ``ratio``
    and survivors scaled by ``1 / (1 - ratio)``.

    Returns ``(left_star, right_star, cache)``.
    """
    if left0.shape[0] != graph.left_count or right0.shape[0] != graph.right_count:
        raise ValueError(
            f"table shapes {left0.shape}, {right0.shape} do not match graph "
            f"({graph.left_count}, {graph.right_count})")
    if left0.shape[1] != right0.shape[1]:
        raise ValueError("left and right tables must share their dimensionality")
    op = graph.operator()
    h = np.concatenate([left0, right0])
    total = h.copy()
    layers, masks = [h], []
    rho, rng = 0.0, None
    if message_dropout is not None and message_dropout[0] > 0:
        rho = float(message_dropout[0])
        rng = np.random.default_rng(message_dropout[1])
    scale = 1.0 / (1.0 - rho)
    for _ in range(K):
        h = op.matmul(h)
        if rng is not None:
            mask = rng.random(h.shape) >= rho
            h = h * mask * scale
            masks.append(mask)
        layers.append(h)
        total += h
    cache = PropagationCache(op, graph.left_count, layers, masks, scale)
    return total[:graph.left_count], total[graph.left_count:], cache


def propagate_backward(cache: PropagationCache, grad_left: np.ndarray,
                       grad_right: np.ndarray):
    """Gradients of the layer-0 tables given gradients of the summed outputs."""
    g_out = np.concatenate([grad_left, grad_right])
    g = g_out.copy()
    K = len(cache.layers) - 1
    if K:
        op_t = cache.operator.transpose()
        for k in range(K, 0, -1):
            if cache.masks:
                g = g * cache.masks[k - 1] * cache.scale
            g = g_out + op_t.matmul(g)
    return g[:cache.left_count], g[cache.left_count:]


def pool_bundle_item(item_reps: np.ndarray, bundle_item, num_bundles: int | None = None) -> np.ndarray:
    """Row b is the mean of the rows of b's items."""
    bi = np.asarray(bundle_item, dtype=np.int64).reshape(-1, 2)
    n = num_bundles if num_bundles is not None else (int(bi[:, 0].max()) + 1 if len(bi) else 0)
    sizes = np.bincount(bi[:, 0], minlength=n)
    if n and (sizes == 0).any():
        raise ValueError(f"bundle {int(np.argmin(sizes))} has no items; cannot average-pool")
    return build_pooling_from_pairs(bi, n, item_reps.shape[0]).matmul(item_reps)


@dataclass
class ViewRepresentations:
    user_bundle_view: np.ndarray
    bundle_bundle_view: np.ndarray
    user_item_view: np.ndarray
    bundle_item_view: np.ndarray
    item_item_view: np.ndarray
    per_layer_cache: dict = field(default_factory=dict, repr=False)


@dataclass
class TableGradients:
    user: np.ndarray
    bundle: np.ndarray
    item: np.ndarray

    def as_dict(self):
        return {"user": self.user, "bundle": self.bundle, "item": self.item}


def forward(state: EmbeddingState, ub_graph: NormalizedBipartiteGraph,
            ui_graph: NormalizedBipartiteGraph, pooling: CSR, config: ModelConfig,
            epoch_seed=0, step: int = 0, augment: bool = True) -> ViewRepresentations:
    """Bundle-view and item-view representations of all users and bundles.

    ``augment=False`` (or mode OP) gives the deterministic representation.
    Edge dropout is re-drawn per ``epoch_seed``; message dropout per
    ``(epoch_seed, step)``.
    """
    aug = config.augmentation
    mode = aug.mode if augment else "OP"
    if ub_graph.left_count != len(state.user_table) or ub_graph.right_count != len(state.bundle_table):
        raise ValueError("U-B graph does not match the embedding tables")
    if ui_graph.left_count != len(state.user_table) or ui_graph.right_count != len(state.item_table):
        raise ValueError("U-I graph does not match the embedding tables")
    if pooling.shape != (len(state.bundle_table), len(state.item_table)):
        raise ValueError("pooling matrix does not match the embedding tables")
    md_ub = md_ui = None
    if mode == "ED" and aug.dropout_ratio > 0:
        ub_graph = cached_edge_dropout(ub_graph, aug.dropout_ratio, (aug.seed, epoch_seed, _UB_TAG))
        ui_graph = cached_edge_dropout(ui_graph, aug.dropout_ratio, (aug.seed, epoch_seed, _UI_TAG))
    elif mode == "MD" and aug.dropout_ratio > 0:
        md_ub = (aug.dropout_ratio, np.random.SeedSequence((aug.seed, epoch_seed, step, _UB_TAG)))
        md_ui = (aug.dropout_ratio, np.random.SeedSequence((aug.seed, epoch_seed, step, _UI_TAG)))
    K = config.layers
    u_b, b_b, c_ub = propagate(ub_graph, state.user_table, state.bundle_table, K, md_ub)
    u_i, i_i, c_ui = propagate(ui_graph, state.user_table, state.item_table, K, md_ui)
    b_i = pooling.matmul(i_i)
    if b_i.shape != b_b.shape:
        raise ValueError("propagated bundle representations disagree in shape")
    return ViewRepresentations(u_b, b_b, u_i, b_i, i_i,
                               per_layer_cache={"ub": c_ub, "ui": c_ui, "pool": pooling})


def backward(reps: ViewRepresentations, grad_user_bundle_view, grad_bundle_bundle_view,
             grad_user_item_view, grad_bundle_item_view, grad_item_item_view=None) -> TableGradients:
    """Chain representation gradients into the three embedding tables."""
    cache = reps.per_layer_cache
    g_item = cache["pool"].transpose().matmul(grad_bundle_item_view)
    if grad_item_item_view is not None:
        g_item = g_item + grad_item_item_view
    gu_b, gb = propagate_backward(cache["ub"], grad_user_bundle_view, grad_bundle_bundle_view)
    gu_i, gi = propagate_backward(cache["ui"], grad_user_item_view, g_item)
    return TableGradients(gu_b + gu_i, gb, gi)


# Checkpoint layout (all integers little-endian):
#   8 bytes   magic b"CCBRCKP1"
#   4 bytes   header length L (uint32)
#   L bytes   UTF-8 JSON header: {"M","N","O","d","epoch","arrays":[[name, rows, cols], ...], "meta":{...}}
#   then each array in header order as raw little-endian float64, C order.
CKPT_MAGIC = b"CCBRCKP1"


def save_checkpoint(path: str, state: EmbeddingState, epoch: int, adam=None, meta=None):
    arrays = [("user", state.user_table), ("bundle", state.bundle_table), ("item", state.item_table)]
    if adam is not None:
        for name in ("user", "bundle", "item"):
            arrays.append((f"adam_m_{name}", adam.exp_avg[name]))
            arrays.append((f"adam_v_{name}", adam.exp_avg_sq[name]))
    M, N, O, d = state.shape
    header = {
        "M": M, "N": N, "O": O, "d": d, "epoch": int(epoch),
        "adam_step": int(adam.step) if adam is not None else None,
        "arrays": [[name, int(a.shape[0]), int(a.shape[1])] for name, a in arrays],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path: str):
    """Return ``(state, epoch, adam_or_None, header)``."""
    from .trainer import AdamState

    with open(path, "rb") as fh:
        if fh.read(8) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (length,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(length).decode("utf-8"))
        arrays = {}
        for name, rows, cols in header["arrays"]:
            buf = fh.read(rows * cols * 8)
            if len(buf) != rows * cols * 8:
                raise ValueError(f"{path}: truncated array {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(rows, cols).astype(np.float64)
    state = EmbeddingState(arrays["user"], arrays["bundle"], arrays["item"])
    adam = None
    if "adam_m_user" in arrays:
        adam = AdamState(
            {n: arrays[f"adam_m_{n}"] for n in ("user", "bundle", "item")},
            {n: arrays[f"adam_v_{n}"] for n in ("user", "bundle", "item")},
            header["adam_step"])
    return state, header["epoch"], adam, header


def model_config_dict(config: ModelConfig) -> dict:
    return asdict(config)
