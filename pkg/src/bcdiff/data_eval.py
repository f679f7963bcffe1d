"""Synthetic discrete datasets and evaluation metrics."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from bcdiff.boundary import estimate_boundary
from bcdiff.discrete_space import DataSpace, round_to_discrete
from bcdiff.schedules import Schedule
from bcdiff.trajectory import forward_sample

SOURCE_KINDS = ("markov_tokens", "categorical_grid", "binary_subpixels")
MODE_CENTERS = (32, 96, 160, 224)


def sparse_transition(K: int, rng: np.random.Generator, fanout: int = 2) -> np.ndarray:
    """Order-1 transition matrix where each state reaches ``fanout`` successors."""
    P = np.zeros((K, K))
    for i in range(K):
        succ = rng.choice(K, size=fanout, replace=False)
        P[i, succ] = rng.dirichlet(np.full(fanout, 2.0))
    return P


@dataclass
class SyntheticSource:
    kind: str
    K: int
    n: int
    seed: int = 0
    transition: np.ndarray | None = None
    marginals: np.ndarray | None = None
    noise: float = 0.1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}")
        rng = np.random.default_rng(self.seed)
        if self.kind == "markov_tokens":
            if self.transition is None:
                self.transition = sparse_transition(self.K, rng)
            self.transition = np.asarray(self.transition, dtype=np.float64)
            if self.transition.shape != (self.K, self.K):
                raise ValueError("transition must be K x K")
            if np.any(np.abs(self.transition.sum(axis=1) - 1.0) > 1e-9):
                raise ValueError("transition rows must sum to 1")
        else:
            n_cats = self.K if self.kind == "categorical_grid" else len(MODE_CENTERS)
            if self.marginals is None:
                self.marginals = rng.dirichlet(np.full(n_cats, 3.0))
            self.marginals = np.asarray(self.marginals, dtype=np.float64)
            if abs(self.marginals.sum() - 1.0) > 1e-9:
                raise ValueError("marginals must sum to 1")
        if self.kind == "categorical_grid":
            side = int(round(np.sqrt(self.n)))
            if side * side != self.n or side % 2:
                raise ValueError("categorical_grid needs a square grid with an even side")

    @property
    def alphabet(self) -> int:
        return 256 if self.kind == "binary_subpixels" else self.K


def default_source(kind: str, seed: int = 0) -> SyntheticSource:
    if kind == "markov_tokens":
        return SyntheticSource(kind, K=16, n=8, seed=seed)
    if kind == "categorical_grid":
        return SyntheticSource(kind, K=8, n=64, seed=seed)
    return SyntheticSource(kind, K=256, n=64, seed=seed)


def generate_dataset(source: SyntheticSource, count: int, seed: int | None = None) -> np.ndarray:
    """Draw ``count`` samples, shape ``(count, n)`` of integer symbols."""
    rng = np.random.default_rng(source.seed + 1 if seed is None else seed)
    n = source.n
    if source.kind == "markov_tokens":
        P = source.transition
        cdf = np.cumsum(P, axis=1)
        out = np.empty((count, n), dtype=np.int64)
        out[:, 0] = rng.integers(0, source.K, size=count)
        u = rng.random((count, n))
        for i in range(1, n):
            row = cdf[out[:, i - 1]]
            nxt = np.sum(u[:, i, None] >= row, axis=1)
            out[:, i] = np.minimum(nxt, source.K - 1)
        return out
    if source.kind == "categorical_grid":
        side = int(round(np.sqrt(n)))
        half = side // 2
        quad = rng.choice(source.K, size=(count, 2, 2), p=source.marginals)
        grid = np.repeat(np.repeat(quad, half, axis=1), half, axis=2)
        flip = rng.random((count, side, side)) < source.noise
        fresh = rng.choice(source.K, size=(count, side, side), p=source.marginals)
        return np.where(flip, fresh, grid).reshape(count, n).astype(np.int64)
    modes = rng.choice(len(MODE_CENTERS), size=(count, n), p=source.marginals)
    values = np.asarray(MODE_CENTERS)[modes] + rng.normal(0.0, 6.0, size=(count, n))
    return np.clip(np.rint(values), 0, 255).astype(np.int64)


# -- serialisation -----------------------------------------------------

def write_tokens(path, data) -> None:
    """Whitespace-separated integers, one sample per line."""
    with open(path, "w") as fh:
        for row in np.asarray(data):
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def read_tokens(path) -> np.ndarray:
    with open(path) as fh:
        rows = [[int(v) for v in line.split()] for line in fh if line.strip()]
    return np.asarray(rows, dtype=np.int64)


def write_grid_csv(path, data) -> None:
    np.savetxt(path, np.asarray(data, dtype=np.int64), fmt="%d", delimiter=",")


def read_grid_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.int64))


# -- metrics -------------------------------------------------------------

def unigram_tv(a, b, K: int) -> float:
    pa = np.bincount(np.asarray(a).ravel(), minlength=K) / np.asarray(a).size
    pb = np.bincount(np.asarray(b).ravel(), minlength=K) / np.asarray(b).size
    return 0.5 * float(np.abs(pa - pb).sum())


def bigram_tv(a, b, K: int) -> float:
    def counts(x):
        x = np.asarray(x)
        pairs = x[:, :-1] * K + x[:, 1:]
        return np.bincount(pairs.ravel(), minlength=K * K) / pairs.size

    return 0.5 * float(np.abs(counts(a) - counts(b)).sum())


def eval_distribution(generated, source_data, K: int) -> dict:
    return {"unigram_tv": unigram_tv(generated, source_data, K),
            "bigram_tv": bigram_tv(generated, source_data, K)}


def _shards(n: int, threads: int):
    bounds = np.linspace(0, n, max(1, threads) + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def eval_recovery(predict, space: DataSpace, schedule: Schedule, data, r: float, t_list,
                  draws: int = 1, seed: int = 0, threads: int = 1) -> dict:
    """One-step rounding accuracy ``p(x0_hat in C_x0)`` per nominal time.

    Noise is drawn up front from one seeded stream, so the thread count
    only changes how shards are scheduled.
    """
    rng = np.random.default_rng(seed)
    x0, labels = space.encode(data)
    x0e = space.elements(x0)
    results = {}
    for t in t_list:
        hits = 0
        total = 0
        for _ in range(draws):
            eps = rng.standard_normal(x0e.shape)

            def run(sl):
                est = estimate_boundary(x0e[sl], eps[sl], labels[sl], space.table, schedule)
                pt = forward_sample(x0e[sl], eps[sl], t, labels[sl], space.table, schedule, r, est)
                pred = space.elements(predict(space.positions(pt.x_tilde), np.full(len(pt.x_tilde), float(t))))
                return int(np.sum(round_to_discrete(pred, space.table) == labels[sl]))

            shards = _shards(len(x0e), threads)
            if threads > 1:
                with ThreadPoolExecutor(threads) as pool:
                    hits += sum(pool.map(run, shards))
            else:
                hits += sum(run(sl) for sl in shards)
            total += labels.size
        results[int(t)] = hits / total
    return results


def masked_fraction_and_mean_t0(space: DataSpace, schedule: Schedule, data, seed: int = 0):
    rng = np.random.default_rng(seed)
    x0, labels = space.encode(data)
    x0e = space.elements(x0)
    est = estimate_boundary(x0e, rng.standard_normal(x0e.shape), labels, space.table, schedule)
    return float(est.masked.mean()), float(est.t0.mean())


def write_report(path, rows) -> None:
    """Tidy report: one ``metric,r,t,seed,value`` record per line."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "r", "t", "seed", "value"])
        for row in rows:
            w.writerow([row["metric"], row.get("r", ""), row.get("t", ""), row.get("seed", ""), repr(float(row["value"]))])
