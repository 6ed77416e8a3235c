"""Synthetic instances, MovieLens-100k ingestion, holdout splits and file formats."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .likelihood import ObservedMatrix
from .quantization import build_uniform_scheme, quantize

INSTANCE_MAGIC = "qmcbif-instance 1"
ML100K_USERS = 943
ML100K_ITEMS = 1682
ML100K_RECORDS = 100_000


@dataclass(frozen=True)
class SyntheticParams:
    m: int
    n: int
    rank: int
    num_levels: int
    missing_frac: float
    noise_scale: float = 0.0
    seed: int = 0

    def dataset_id(self) -> str:
        return (f"synthetic-m{self.m}-n{self.n}-r{self.rank}-q{self.num_levels}"
                f"-miss{self.missing_frac:g}-noise{self.noise_scale:g}")


@dataclass(frozen=True, eq=False)
class SyntheticInstance:
    ground_truth: np.ndarray | None
    observed: ObservedMatrix
    params: SyntheticParams

    @property
    def mask(self) -> np.ndarray:
        return self.observed.mask()


@dataclass(frozen=True, eq=False)
class RatingsDataset:
    observed: ObservedMatrix
    n_records: int
    user_counts: np.ndarray
    user_ids: np.ndarray
    item_ids: np.ndarray


def hidden_count(missing_frac, m, n) -> int:
    # round before ceil so 0.1 * 87500 = 8750.000000000002 stays 8750
    return int(math.ceil(round(missing_frac * m * n, 9)))


def generate_synthetic(m, n, rank, num_levels, missing_frac, noise_scale=0.0, seed=0):
    """Low-rank matrix rescaled to ``[1, num_levels]``, quantized and masked.

    Orthonormal factors come from QR of Gaussian draws; singular values are
    uniform on ``[0, 1]``. Logistic noise of scale ``noise_scale`` is added
    before quantization (0 disables it). Exactly
    ``ceil(missing_frac * m * n)`` entries are hidden.
    """
    params = SyntheticParams(int(m), int(n), int(rank), int(num_levels),
                             float(missing_frac), float(noise_scale), int(seed))
    if min(m, n) < 1 or rank < 1 or rank > min(m, n):
        raise ValueError(f"rank must lie in 1..min(m, n), got {rank}")
    if not 0 <= missing_frac < 1:
        raise ValueError("missing_frac must lie in [0, 1)")
    if noise_scale < 0:
        raise ValueError("noise_scale must be nonnegative")
    scheme = build_uniform_scheme(num_levels)
    rng = np.random.default_rng(seed)
    left, _ = np.linalg.qr(rng.standard_normal((m, rank)))
    right, _ = np.linalg.qr(rng.standard_normal((n, rank)))
    sigma = rng.uniform(0.0, 1.0, size=rank)
    X = (left * sigma) @ right.T
    lo, hi = X.min(), X.max()
    X0 = 1.0 + (num_levels - 1) * (X - lo) / (hi - lo)
    noisy = X0
    if noise_scale > 0:
        noisy = X0 + noise_scale * rng.logistic(size=X0.shape)
    Y = quantize(noisy, scheme)
    hide = hidden_count(missing_frac, m, n)
    order = rng.permutation(m * n)
    keep = np.sort(order[hide:])
    rows, cols = np.divmod(keep, n)
    obs = ObservedMatrix(m, n, rows, cols, Y[rows, cols], scheme)
    return SyntheticInstance(X0, obs, params)


def numerical_rank(X, rel=1e-8) -> int:
    s = np.linalg.svd(X, compute_uv=False)
    return int(np.sum(s > rel * s[0])) if s.size and s[0] > 0 else 0


class DataFormatError(ValueError):
    def __init__(self, path, lineno, message):
        self.path, self.lineno = path, lineno
        where = f"{path}:{lineno}" if lineno else str(path)
        super().__init__(f"{where}: {message}")


def load_movielens(path, n_users=ML100K_USERS, n_items=ML100K_ITEMS,
                   expected_records=ML100K_RECORDS, min_user_ratings=20) -> RatingsDataset:
    """Read a MovieLens ``u.data`` file (user, item, rating, timestamp).

    Ids are 1-based and mapped to row/column ``id - 1``. Pass
    ``expected_records=None`` or ``min_user_ratings=0`` to skip the
    corresponding check (useful for excerpts of the file).
    """
    path = Path(path)
    users, items, ratings = [], [], []
    seen = set()
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 4:
                raise DataFormatError(path, lineno, f"expected 4 tab-separated fields, got {len(fields)}")
            try:
                u, i, r, _ = (int(f) for f in fields)
            except ValueError:
                raise DataFormatError(path, lineno, "non-integer field") from None
            if not 1 <= r <= 5:
                raise DataFormatError(path, lineno, f"rating {r} outside 1..5")
            if not 1 <= u <= n_users:
                raise DataFormatError(path, lineno, f"user id {u} outside 1..{n_users}")
            if not 1 <= i <= n_items:
                raise DataFormatError(path, lineno, f"item id {i} outside 1..{n_items}")
            if (u, i) in seen:
                raise DataFormatError(path, lineno, f"duplicate rating for user {u}, item {i}")
            seen.add((u, i))
            users.append(u)
            items.append(i)
            ratings.append(r)
    if not ratings:
        raise DataFormatError(path, 0, "no ratings found")
    if expected_records is not None and len(ratings) != expected_records:
        raise DataFormatError(path, 0, f"expected {expected_records} records, found {len(ratings)}")
    rows = np.asarray(users, dtype=np.int64) - 1
    cols = np.asarray(items, dtype=np.int64) - 1
    counts = np.bincount(rows, minlength=n_users)
    if min_user_ratings and counts.min() < min_user_ratings:
        raise DataFormatError(path, 0, f"user {int(counts.argmin()) + 1} has fewer than "
                                       f"{min_user_ratings} ratings")
    obs = ObservedMatrix(n_users, n_items, rows, cols, np.asarray(ratings), build_uniform_scheme(5))
    return RatingsDataset(obs, len(ratings), counts, np.arange(1, n_users + 1),
                          np.arange(1, n_items + 1))


def split_holdout(obs: ObservedMatrix, holdout_frac, seed=0):
    """Uniform random partition of Omega into ``(train, holdout)``."""
    if not 0 < holdout_frac < 1:
        raise ValueError("holdout_frac must lie strictly between 0 and 1")
    n_hold = int(round(holdout_frac * obs.size))
    if n_hold < 1 or n_hold >= obs.size:
        raise ValueError("holdout fraction leaves an empty train or holdout set")
    perm = np.random.default_rng(seed).permutation(obs.size)
    hold = np.sort(perm[:n_hold])
    train = np.sort(perm[n_hold:])
    return obs.subset(train), obs.subset(hold)


def densest_submatrix(obs: ObservedMatrix, n_rows, n_cols) -> ObservedMatrix:
    """Restrict to the ``n_rows`` most active rows and ``n_cols`` most active columns."""
    rc = np.bincount(obs.rows, minlength=obs.m)
    cc = np.bincount(obs.cols, minlength=obs.n)
    keep_r = np.sort(np.argsort(-rc, kind="stable")[:n_rows])
    keep_c = np.sort(np.argsort(-cc, kind="stable")[:n_cols])
    rmap = np.full(obs.m, -1)
    rmap[keep_r] = np.arange(keep_r.size)
    cmap = np.full(obs.n, -1)
    cmap[keep_c] = np.arange(keep_c.size)
    sel = (rmap[obs.rows] >= 0) & (cmap[obs.cols] >= 0)
    return ObservedMatrix(keep_r.size, keep_c.size, rmap[obs.rows[sel]], cmap[obs.cols[sel]],
                          obs.levels[sel], obs.scheme)


def write_instance(path, obs: ObservedMatrix, ground_truth=None, params: dict | None = None):
    """Write the instance text format.

    Layout::

        qmcbif-instance 1
        params key=value ...
        shape <m> <n> levels <num_levels>
        observed <count>
        <i> <j> <level>        (one line per observed entry, 0-based)
        ground_truth <m> <n>   (optional block, one matrix row per line)
    """
    lines = [INSTANCE_MAGIC]
    items = " ".join(f"{k}={v}" for k, v in (params or {}).items())
    lines.append(f"params {items}".rstrip())
    lines.append(f"shape {obs.m} {obs.n} levels {obs.scheme.num_levels}")
    lines.append(f"observed {obs.size}")
    lines.extend(f"{i} {j} {l}" for i, j, l in zip(obs.rows.tolist(), obs.cols.tolist(),
                                                   obs.levels.tolist()))
    if ground_truth is not None:
        lines.append(f"ground_truth {obs.m} {obs.n}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in np.asarray(ground_truth))
    Path(path).write_text("\n".join(lines) + "\n")


def read_instance(path):
    """Inverse of :func:`write_instance`: ``(obs, ground_truth or None, params)``."""
    path = Path(path)
    lines = path.read_text().splitlines()

    def fail(lineno, msg):
        raise DataFormatError(path, lineno, msg)

    if not lines or lines[0].strip() != INSTANCE_MAGIC:
        fail(1, f"missing '{INSTANCE_MAGIC}' header")
    if len(lines) < 4 or not lines[1].startswith("params"):
        fail(2, "missing params line")
    params = {}
    for tok in lines[1].split()[1:]:
        key, sep, value = tok.partition("=")
        if not sep:
            fail(2, f"malformed param {tok!r}")
        params[key] = value
    head = lines[2].split()
    if len(head) != 5 or head[0] != "shape" or head[3] != "levels":
        fail(3, "expected 'shape <m> <n> levels <q>'")
    try:
        m, n, q = int(head[1]), int(head[2]), int(head[4])
        tag, count = lines[3].split()
        count = int(count)
    except ValueError:
        fail(4, "malformed shape or observed count")
    if tag != "observed":
        fail(4, "expected 'observed <count>'")
    body = lines[4:4 + count]
    if len(body) != count:
        fail(len(lines), f"expected {count} observed entries, found {len(body)}")
    try:
        trip = np.array([[int(t) for t in ln.split()] for ln in body], dtype=np.int64)
    except ValueError:
        fail(5, "non-integer observed entry")
    if trip.ndim != 2 or trip.shape[1] != 3:
        fail(5, "observed entries need three fields")
    obs = ObservedMatrix(m, n, trip[:, 0], trip[:, 1], trip[:, 2], build_uniform_scheme(q))
    rest = lines[4 + count:]
    truth = None
    if rest and rest[0].strip():
        if rest[0].split() != ["ground_truth", str(m), str(n)]:
            fail(5 + count, "expected 'ground_truth <m> <n>'")
        truth = np.array([[float(t) for t in ln.split()] for ln in rest[1:1 + m]])
        if truth.shape != (m, n):
            fail(6 + count, "ground truth block has the wrong shape")
    return obs, truth, params


def write_matrix(path, X):
    """Row-major text matrix with a ``shape m n`` header line."""
    X = np.asarray(X, dtype=float)
    np.savetxt(path, X, fmt="%.17g", header=f"shape {X.shape[0]} {X.shape[1]}")


def read_matrix(path) -> np.ndarray:
    with open(path) as fh:
        head = fh.readline().lstrip("#").split()
    if len(head) != 3 or head[0] != "shape":
        raise DataFormatError(path, 1, "missing shape header")
    X = np.loadtxt(path, ndmin=2)
    shape = (int(head[1]), int(head[2]))
    if X.shape != shape:
        raise DataFormatError(path, 0, f"matrix is {X.shape}, header says {shape}")
    return X
