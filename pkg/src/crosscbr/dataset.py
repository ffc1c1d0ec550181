"""Bundle recommendation datasets: loading, validation, splitting, synthesis.

A dataset directory holds four tab-separated text files::

    size.txt          M<TAB>N<TAB>O
    user_bundle.txt   user<TAB>bundle   (one pair per line, 0-indexed)
    user_item.txt     user<TAB>item
    bundle_item.txt   bundle<TAB>item

Split files ``train.txt``, ``tune.txt`` and ``test.txt`` use the same pair
format and partition ``user_bundle.txt``.
"""
from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field

import numpy as np

SIZE_FILE = "size.txt"
RELATION_FILES = {
    "user_bundle": "user_bundle.txt",
    "user_item": "user_item.txt",
    "bundle_item": "bundle_item.txt",
}
SPLIT_FILES = {"train": "train.txt", "validation": "tune.txt", "test": "test.txt"}

# (users, bundles, items, user-item pairs, user-bundle pairs)
PUBLIC_STATS = {
    "Youshu": (8039, 4771, 32770, 138515, 51377),
    "NetEase": (18528, 22864, 123628, 1128065, 302303),
    "iFashion": (53897, 42563, 27694, 2290645, 1679708),
}


class DatasetError(ValueError):
    """Raised for missing files or relations that violate dataset invariants."""


def _as_pairs(pairs) -> np.ndarray:
    arr = np.asarray(pairs, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DatasetError(f"expected an (n, 2) array of pairs, got shape {arr.shape}")
    return arr


def unique_pairs(pairs) -> np.ndarray:
    """Deduplicate pairs and sort them lexicographically."""
    arr = _as_pairs(pairs)
    if len(arr) == 0:
        return arr
    return np.unique(arr, axis=0)


@dataclass(frozen=True, eq=False)
class BundleDataset:
    num_users: int
    num_bundles: int
    num_items: int
    user_bundle: np.ndarray
    user_item: np.ndarray
    bundle_item: np.ndarray
    name: str = ""

    def __post_init__(self):
        for rel in RELATION_FILES:
            object.__setattr__(self, rel, unique_pairs(getattr(self, rel)))
        self.validate()

    def validate(self):
        for count in (self.num_users, self.num_bundles, self.num_items):
            if count < 0:
                raise DatasetError("entity counts must be non-negative")
        bounds = {
            "user_bundle": (self.num_users, self.num_bundles),
            "user_item": (self.num_users, self.num_items),
            "bundle_item": (self.num_bundles, self.num_items),
        }
        for rel, (left, right) in bounds.items():
            pairs = getattr(self, rel)
            if len(pairs) == 0:
                continue
            if pairs.min() < 0 or pairs[:, 0].max() >= left or pairs[:, 1].max() >= right:
                raise DatasetError(
                    f"{rel}: id out of range (declared {left} x {right})")
        if len(self.user_bundle):
            has_items = np.zeros(self.num_bundles, dtype=bool)
            has_items[self.bundle_item[:, 0]] = True
            used = np.unique(self.user_bundle[:, 1])
            empty = used[~has_items[used]]
            if len(empty):
                raise DatasetError(
                    f"bundle {int(empty[0])} appears in user_bundle but has no items "
                    f"({len(empty)} such bundles)")

    def __eq__(self, other):
        if not isinstance(other, BundleDataset):
            return NotImplemented
        return (
            (self.num_users, self.num_bundles, self.num_items)
            == (other.num_users, other.num_bundles, other.num_items)
            and all(np.array_equal(getattr(self, r), getattr(other, r)) for r in RELATION_FILES)
        )

    def stats(self) -> dict:
        bundle_sizes = np.bincount(self.bundle_item[:, 0], minlength=self.num_bundles) \
            if len(self.bundle_item) else np.zeros(self.num_bundles)
        return {
            "users": self.num_users,
            "bundles": self.num_bundles,
            "items": self.num_items,
            "user_item": len(self.user_item),
            "user_bundle": len(self.user_bundle),
            "bundle_item": len(self.bundle_item),
            "avg_items_per_bundle": float(bundle_sizes.mean()) if self.num_bundles else 0.0,
        }

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.array([self.num_users, self.num_bundles, self.num_items], dtype="<i8").tobytes())
        for rel in RELATION_FILES:
            h.update(np.ascontiguousarray(getattr(self, rel), dtype="<i8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class SplitDataset:
    base: BundleDataset
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    _seen: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in ("train", "validation", "test"):
            object.__setattr__(self, name, unique_pairs(getattr(self, name)))
        parts = np.concatenate([self.train, self.validation, self.test])
        if len(parts) != len(self.base.user_bundle) or not np.array_equal(
                unique_pairs(parts), self.base.user_bundle):
            raise DatasetError("splits must partition the user_bundle relation")

    def part(self, name: str) -> np.ndarray:
        if name == "tune":
            name = "validation"
        if name not in ("train", "validation", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def user_sets(self, name: str) -> list[np.ndarray]:
        """Per-user sorted bundle ids of split ``name`` (cached)."""
        if name not in self._seen:
            pairs = self.part(name)
            m = self.base.num_users
            order = np.argsort(pairs[:, 0], kind="stable")
            users, bundles = pairs[order, 0], pairs[order, 1]
            bounds = np.searchsorted(users, np.arange(m + 1))
            self._seen[name] = [bundles[bounds[u]:bounds[u + 1]] for u in range(m)]
        return self._seen[name]


def _read_pairs(path: str) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                parts = line.split()
            if len(parts) != 2:
                raise DatasetError(f"{path}:{lineno}: expected two integer ids")
            try:
                rows.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-integer id") from None
    return _as_pairs(rows)


def _write_pairs(path: str, pairs: np.ndarray):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in pairs:
            fh.write(f"{a}\t{b}\n")


def load_dataset(root_path: str, name: str = "") -> BundleDataset:
    """Load ``root_path/name`` (or ``root_path`` when ``name`` is empty)."""
    path = os.path.join(root_path, name) if name else root_path
    needed = [SIZE_FILE, *RELATION_FILES.values()]
    for fname in needed:
        if not os.path.isfile(os.path.join(path, fname)):
            raise DatasetError(f"missing dataset file: {os.path.join(path, fname)}")
    with open(os.path.join(path, SIZE_FILE), encoding="utf-8") as fh:
        header = fh.readline().split()
    try:
        m, n, o = (int(x) for x in header)
    except ValueError:
        raise DatasetError(f"{SIZE_FILE}: expected 'M<TAB>N<TAB>O'") from None
    rels = {rel: _read_pairs(os.path.join(path, f)) for rel, f in RELATION_FILES.items()}
    return BundleDataset(m, n, o, name=name or os.path.basename(os.path.normpath(path)), **rels)


def write_dataset(dataset: BundleDataset, path: str):
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, SIZE_FILE), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{dataset.num_users}\t{dataset.num_bundles}\t{dataset.num_items}\n")
    for rel, fname in RELATION_FILES.items():
        _write_pairs(os.path.join(path, fname), getattr(dataset, rel))


def write_split(split: SplitDataset, path: str):
    write_dataset(split.base, path)
    for part, fname in SPLIT_FILES.items():
        _write_pairs(os.path.join(path, fname), split.part(part))


def load_split(path: str) -> SplitDataset:
    base = load_dataset(path)
    parts = {}
    for part, fname in SPLIT_FILES.items():
        fpath = os.path.join(path, fname)
        if not os.path.isfile(fpath):
            raise DatasetError(f"missing split file: {fpath}")
        parts[part] = _read_pairs(fpath)
    return SplitDataset(base, **parts)


def split_sizes(total: int, ratios) -> tuple[int, int, int]:
    _, val_r, test_r = ratios
    n_val = math.floor(total * val_r)
    n_test = math.floor(total * test_r)
    return total - n_val - n_test, n_val, n_test


def split(dataset: BundleDataset, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> SplitDataset:
    """Uniformly partition the user-bundle pairs into train/validation/test.

    Validation and test sizes are floor-rounded; the remainder goes to train.
    Only ``user_bundle`` is split; the other relations stay fully visible.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"split ratios must be three positive fractions, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")
    pairs = dataset.user_bundle
    n_train, n_val, _ = split_sizes(len(pairs), ratios)
    perm = np.random.default_rng(seed).permutation(len(pairs))
    return SplitDataset(
        dataset,
        train=pairs[perm[:n_train]],
        validation=pairs[perm[n_train:n_train + n_val]],
        test=pairs[perm[n_train + n_val:]],
    )


def community(ids, count: int, blocks: int) -> np.ndarray:
    """Community label of each id when ``count`` entities form ``blocks`` contiguous blocks."""
    return np.asarray(ids) // (count // blocks)


def generate_synthetic(users: int, bundles: int, items: int, blocks: int,
                       noise_rate: float, seed: int = 0, *,
                       bundles_per_user: int = 3, items_per_user: int = 12,
                       items_per_bundle: int = 5, locality: float | None = 0.05) -> BundleDataset:
    """Planted-community dataset.

    Users, bundles and items are cut into ``blocks`` contiguous communities.
    Every owner (a user, or a bundle choosing its items) gets a fixed number
    of partners.  Each slot is a noise slot with probability ``noise_rate``
    and then takes a partner uniformly from the whole catalogue; the other
    slots are filled from the owner's own community without replacement.

    Inside a community every entity sits at a random point on a unit circle.
    With ``locality`` set, community partners are weighted by
    ``exp(-distance / locality)`` between the two points, so nearby entities
    are preferred; with ``locality=None`` they are uniform.
    """
    if not 0.0 <= noise_rate <= 1.0:
        raise ValueError(f"noise_rate must lie in [0, 1], got {noise_rate}")
    if blocks < 1 or users % blocks or bundles % blocks or items % blocks:
        raise ValueError("blocks must divide users, bundles and items")
    if locality is not None and locality <= 0:
        raise ValueError("locality must be positive or None")
    rng = np.random.default_rng(seed)
    user_pos, bundle_pos, item_pos = rng.random(users), rng.random(bundles), rng.random(items)

    def draw(owner_pos, target_pos, per_owner):
        n_owner, n_target = len(owner_pos), len(target_pos)
        size = n_target // blocks
        owner_size = n_owner // blocks
        per_owner = min(per_owner, size)
        pairs = []
        for owner in range(n_owner):
            comm = owner // owner_size
            n_noise = int(rng.binomial(per_owner, noise_rate))
            chosen = set()
            while len(chosen) < n_noise:
                chosen.add(int(rng.integers(n_target)))
            candidates = np.array([t for t in range(comm * size, (comm + 1) * size)
                                   if t not in chosen], dtype=np.int64)
            need = min(per_owner - n_noise, len(candidates))
            if locality is None:
                weights = None
            else:
                gap = np.abs(target_pos[candidates] - owner_pos[owner])
                weights = np.exp(-np.minimum(gap, 1.0 - gap) / locality)
                weights /= weights.sum()
            picked = rng.choice(candidates, size=need, replace=False, p=weights)
            chosen.update(int(t) for t in picked)
            pairs.extend((owner, t) for t in sorted(chosen))
        return pairs

    user_bundle = draw(user_pos, bundle_pos, bundles_per_user)
    user_item = draw(user_pos, item_pos, items_per_user)
    bundle_item = draw(bundle_pos, item_pos, items_per_bundle)
    return BundleDataset(users, bundles, items, user_bundle, user_item, bundle_item,
                         name=f"synthetic-{users}-{bundles}-{items}-{blocks}-{noise_rate}-{seed}")


def parse_synthetic_spec(text: str, seed: int = 0) -> dict:
    """Parse ``users,bundles,items,blocks,noise[,seed]``."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) not in (5, 6):
        raise ValueError("synthetic spec must be users,bundles,items,blocks,noise[,seed]")
    spec = {
        "users": int(parts[0]), "bundles": int(parts[1]), "items": int(parts[2]),
        "blocks": int(parts[3]), "noise_rate": float(parts[4]),
        "seed": int(parts[5]) if len(parts) == 6 else seed,
    }
    return spec
