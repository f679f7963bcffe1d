"""Training loop, losses and checkpoints."""

from __future__ import annotations

import csv
import json
import struct
import time
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np
import yaml

from bcdiff.boundary import estimate_boundary
from bcdiff.data_eval import default_source, generate_dataset
from bcdiff.denoiser import PARAM_NAMES, SGD, DenoiserNet, NumericalError, zero_tape
from bcdiff.discrete_space import DataSpace, EmbeddingTable, logits, round_to_discrete
from bcdiff.schedules import Schedule, make_schedule
from bcdiff.trajectory import forward_sample, x0_field_coefficient

MAGIC = b"BCDCKPT\x00"
FORMAT_VERSION = 1
METRIC_COLUMNS = ("step", "loss_mse", "loss_round", "acc", "masked_frac", "wall_ms", "loss_vf", "vf_bound")


@dataclass
class TrainConfig:
    dataset: str = "markov_tokens"
    data_seed: int = 0
    train_count: int = 4096
    schedule_kind: str = "VP"
    T: int = 2000
    sigma0: float = 0.01
    sigmaT: float = 50.0
    repr: str = "embedding"
    K: int = 16
    m: int = 16
    trainable: bool = True
    r: float = 1.0
    batch_size: int = 64
    steps: int = 2000
    lr: float = 1e-3
    momentum: float = 0.9
    clip: float = 1.0
    w_mse: float = 1.0
    w_round: float = 1.0
    hidden: int = 128
    time_dim: int = 32
    ctx: int = 3
    pool: bool = True
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("r must lie in [0, 1]")
        for name in ("T", "batch_size", "steps", "train_count", "K", "m", "hidden", "time_dim", "ctx", "log_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def schedule(self) -> Schedule:
        return make_schedule(self.schedule_kind, self.T, self.sigma0, self.sigmaT)

    @classmethod
    def from_flat(cls, flat: dict) -> "TrainConfig":
        """Build from flat dotted keys (``schedule.kind``) or plain field names."""
        aliases = {
            "schedule.kind": "schedule_kind", "schedule.T": "T", "schedule.sigma0": "sigma0",
            "schedule.sigmaT": "sigmaT", "space.K": "K", "space.m": "m", "space.trainable": "trainable",
            "space.repr": "repr", "train.r": "r", "train.batch_size": "batch_size", "train.steps": "steps",
            "train.lr": "lr", "train.seed": "seed", "data.source": "dataset", "data.seed": "data_seed",
            "data.count": "train_count",
        }
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in flat.items():
            name = aliases.get(key, key.split(".")[-1] if key not in known else key)
            if name not in known:
                raise KeyError(f"unknown config key {key!r}")
            kwargs[name] = value
        defaults = cls()
        for name, value in kwargs.items():
            kind = type(getattr(defaults, name))
            kwargs[name] = kind(value) if kind is not bool else _as_bool(value)
        return cls(**kwargs)


def _as_bool(value) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    return bool(value)


def load_config(path) -> dict:
    """Flat ``key: value`` YAML mapping; nested mappings are flattened with dots."""
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}

    def flatten(d, prefix=""):
        out = {}
        for k, v in d.items():
            key = f"{prefix}{k}"
            if isinstance(v, dict):
                out.update(flatten(v, key + "."))
            else:
                out[key] = v
        return out

    return flatten(raw)


# -- losses ----------------------------------------------------------------

def loss_mse(x0, pred) -> float:
    """Mean over positions of squared L2 row distances."""
    d = np.asarray(x0) - np.asarray(pred)
    return float(np.mean(np.sum(d * d, axis=-1)))


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def loss_rounding(indices, pred, table: EmbeddingTable) -> float:
    """Mean cross-entropy of ``softmax(f(pred, .))`` against the true states."""
    lp = _log_softmax(logits(pred, table))
    return float(-np.mean(np.take_along_axis(lp, np.asarray(indices)[..., None], axis=-1)))


def loss_and_grads(x0, labels, pred, table: EmbeddingTable, w_mse=1.0, w_round=1.0, use_round=True):
    """Total loss and its gradients w.r.t. the prediction and the table.

    The table gradient collects the MSE target path (``x0 = Emb(label)``) and
    the rounding logits; the noisy input is treated as a constant.
    """
    rows = x0.shape[:-1]
    n_rows = int(np.prod(rows))
    diff = pred - x0
    l_mse = float(np.sum(diff * diff) / n_rows)
    g_pred = w_mse * 2.0 * diff / n_rows
    g_emb = np.zeros_like(table.weights)
    flat_labels = np.asarray(labels).reshape(-1)
    if table.trainable:
        np.add.at(g_emb, flat_labels, (-w_mse * 2.0 * diff / n_rows).reshape(-1, table.m))
    l_round = 0.0
    if use_round:
        z = logits(pred, table)
        lp = _log_softmax(z)
        l_round = float(-np.mean(np.take_along_axis(lp, np.asarray(labels)[..., None], axis=-1)))
        probs = np.exp(lp)
        onehot = np.arange(table.K) == np.asarray(labels)[..., None]
        g_z = w_round * (probs - onehot) / n_rows
        g_pred = g_pred + g_z @ table.weights
        if table.trainable:
            g_emb += g_z.reshape(-1, table.K).T @ pred.reshape(-1, table.m)
    total = w_mse * l_mse + w_round * l_round
    return total, l_mse, l_round, g_pred, g_emb


# -- state -------------------------------------------------------------------

@dataclass
class TrainState:
    config: TrainConfig
    net: DenoiserNet
    space: DataSpace
    optimizer: SGD
    rng: np.random.Generator
    step: int = 0

    @property
    def schedule(self) -> Schedule:
        return self.config.schedule()

    def parameters(self) -> dict:
        params = dict(self.net.params)
        if self.space.table.trainable:
            params["emb"] = self.space.table.weights
        return params


def init_state(config: TrainConfig) -> TrainState:
    rng = np.random.default_rng(config.seed)
    space = DataSpace.build(config.repr, config.K, config.m, rng, trainable=config.trainable)
    net = DenoiserNet.init(space.D, rng, hidden=config.hidden, time_dim=config.time_dim,
                           ctx=config.ctx, pool=config.pool)
    opt = SGD(config.lr, config.momentum, config.clip)
    return TrainState(config, net, space, opt, rng)


def noisy_batch(state: TrainState, batch, t, eps, r: float | None = None):
    """Clean vectors, labels, boundary estimate and rescaled sample for a batch."""
    cfg = state.config
    schedule = state.schedule
    x0, labels = state.space.encode(batch)
    x0e = state.space.elements(x0)
    est = estimate_boundary(x0e, eps, labels, state.space.table, schedule)
    pt = forward_sample(x0e, eps, t, labels, state.space.table, schedule, cfg.r if r is None else r, est)
    return x0, labels, est, pt


def train_step(state: TrainState, batch, rng: np.random.Generator | None = None) -> dict:
    """One update on ``batch`` (``(B, n)`` symbols); returns step metrics."""
    cfg = state.config
    rng = state.rng if rng is None else rng
    schedule = state.schedule
    space = state.space
    start = time.perf_counter()
    B = len(batch)
    x0_shape = space.elements(space.encode(batch[:1])[0]).shape[1:]
    eps = rng.standard_normal((B,) + x0_shape)
    t = rng.integers(1, schedule.T + 1, size=B)
    x0, labels, est, pt = noisy_batch(state, batch, t, eps)
    x_tilde = space.positions(pt.x_tilde)
    pred, cache = state.net.forward(x_tilde, t.astype(np.float64), cache=True)

    if space.repr == "binary_bits":
        total, l_mse, l_round, g_pred, g_emb = loss_and_grads(x0, labels, pred, space.table, cfg.w_mse, 0.0, False)
    else:
        total, l_mse, l_round, g_pred, g_emb = loss_and_grads(x0, labels, pred, space.table, cfg.w_mse, cfg.w_round)
    if not np.isfinite(total):
        raise NumericalError(f"non-finite loss at step {state.step}")

    tape = zero_tape(state.net.params)
    state.net.backward(cache, g_pred, tape)
    params = dict(state.net.params)
    if space.table.trainable:
        params["emb"] = space.table.weights
        tape["emb"] = g_emb
    grad_norm = state.optimizer.step(params, tape)
    state.step += 1

    # vector-field diagnostic: conditioning the field on x0_hat instead of x0
    pe = space.elements(pred)
    x0e = space.elements(x0)
    c = x0_field_coefficient(pt.tau, schedule) ** 2
    dtau = (schedule.T - cfg.r * est.t0) / schedule.T
    err = np.sum((x0e - pe) ** 2, axis=-1)
    acc = float(np.mean(round_to_discrete(pe, space.table) == labels))

    if space.table.trainable and space.table.min_row_distance() < 1e-6:
        warnings.warn("embedding collapse: two rows within 1e-6", RuntimeWarning, stacklevel=2)
    return {
        "step": state.step,
        "loss": total,
        "loss_mse": l_mse,
        "loss_round": l_round,
        "acc": acc,
        "masked_frac": float(est.masked.mean()),
        "wall_ms": (time.perf_counter() - start) * 1e3,
        "loss_vf": float(np.mean(dtau**2 * c * err)),
        "vf_bound": float(np.mean(c * err)),
        "grad_norm": grad_norm,
    }


def train(config: TrainConfig, data=None, metrics_path=None, state: TrainState | None = None,
          callback=None) -> TrainState:
    """Run ``config.steps`` updates, sampling mini-batches from ``data``."""
    if state is None:
        state = init_state(config)
    if data is None:
        data = generate_dataset(default_source(config.dataset, config.data_seed), config.train_count)
    data = np.asarray(data)
    writer = None
    fh = None
    if metrics_path is not None:
        fh = open(metrics_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
    try:
        while state.step < config.steps:
            idx = state.rng.integers(0, len(data), size=config.batch_size)
            metrics = train_step(state, data[idx])
            step = metrics["step"]
            if writer is not None and (step % config.log_every == 0 or step in (1, config.steps)):
                writer.writerow([metrics["step"]] + [f"{metrics[k]:.6g}" for k in METRIC_COLUMNS[1:]])
            if callback is not None:
                callback(state, metrics)
    finally:
        if fh is not None:
            fh.close()
    return state


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(state: TrainState, path) -> None:
    """Write parameters as little-endian float32 with a JSON header.

    Layout: 8-byte magic, uint32 version, uint32 header length, UTF-8 JSON
    header (config, array names/shapes, RNG state), then the raw arrays in
    header order.
    """
    arrays = [(k, state.net.params[k]) for k in PARAM_NAMES]
    arrays.append(("emb", state.space.table.weights))
    header = {
        "config": asdict(state.config),
        "step": state.step,
        "net": {"m": state.net.m, "hidden": state.net.hidden, "time_dim": state.net.time_dim,
                "ctx": state.net.ctx, "pool": state.net.pool},
        "space": {"repr": state.space.repr, "trainable": state.space.table.trainable},
        "arrays": [{"name": k, "shape": list(a.shape)} for k, a in arrays],
        "rng_state": state.rng.bit_generator.state,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path) -> TrainState:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for spec in header["arrays"]:
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            raw = np.frombuffer(fh.read(4 * count), dtype="<f4")
            arrays[spec["name"]] = raw.reshape(spec["shape"]).astype(np.float64)
    config = TrainConfig(**header["config"])
    n = header["net"]
    net = DenoiserNet(m=n["m"], hidden=n["hidden"], time_dim=n["time_dim"], ctx=n["ctx"], pool=n["pool"],
                      params={k: arrays[k] for k in PARAM_NAMES})
    space = DataSpace(header["space"]["repr"], EmbeddingTable(arrays["emb"], header["space"]["trainable"]))
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng_state"]
    state = TrainState(config, net, space, SGD(config.lr, config.momentum, config.clip), rng, header["step"])
    return state


def round_to_f32(state: TrainState) -> None:
    """Quantise parameters in place exactly as a checkpoint would store them."""
    for k in PARAM_NAMES:
        state.net.params[k] = state.net.params[k].astype(np.float32).astype(np.float64)
    state.space.table.weights = state.space.table.weights.astype(np.float32).astype(np.float64)
