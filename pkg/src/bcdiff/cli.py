"""Command line entry point: ``bcdiff <subcommand> [options]``.

Exit codes: 0 on success, 1 on usage or input errors, 2 on numerical
failure (non-finite loss, gradient or sampler state).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from bcdiff import oracle
from bcdiff.boundary import estimate_boundary
from bcdiff.data_eval import (
    SOURCE_KINDS,
    default_source,
    eval_distribution,
    eval_recovery,
    generate_dataset,
    masked_fraction_and_mean_t0,
    read_grid_csv,
    read_tokens,
    write_grid_csv,
    write_report,
    write_tokens,
)
from bcdiff.denoiser import NumericalError
from bcdiff.discrete_space import DataSpace
from bcdiff.plotting import plot_report, read_rows, write_tidy
from bcdiff.sampling import MODES, SamplerConfig, sample
from bcdiff.training import TrainConfig, load_checkpoint, load_config, save_checkpoint, train

PROBE_COLUMNS = ("element", "t0", "u_t0", "v_t0", "j_star", "masked")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def read_data(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"no such dataset: {path}")
    return read_grid_csv(path) if path.suffix == ".csv" else read_tokens(path)


def write_data(path, data) -> None:
    if Path(path).suffix == ".csv":
        write_grid_csv(path, data)
    else:
        write_tokens(path, data)


def _config(args) -> TrainConfig:
    flat = {}
    if getattr(args, "config", None):
        if not Path(args.config).exists():
            raise UsageError(f"no such config: {args.config}")
        flat.update(load_config(args.config))
    # flags win over the file
    for key in ("schedule_kind", "T", "r", "steps", "lr", "batch_size", "dataset", "repr", "K", "m"):
        value = getattr(args, key, None)
        if value is not None:
            flat[key] = value
    if args.seed is not None:
        flat["seed"] = args.seed
    try:
        return TrainConfig.from_flat(flat)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"bad config: {exc}") from exc


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(args) -> None:
    source = default_source(args.source, args.source_seed)
    data = generate_dataset(source, args.count, seed=args.seed)
    write_data(args.out, data)


def cmd_train(args) -> None:
    config = _config(args)
    data = read_data(args.data) if args.data else None
    metrics = args.metrics or str(args.out) + ".metrics.csv"
    state = train(config, data=data, metrics_path=metrics)
    save_checkpoint(state, args.out)


def cmd_sample(args) -> None:
    state = load_checkpoint(args.ckpt)
    schedule = state.schedule
    scfg = SamplerConfig(steps=args.steps, r=state.config.r if args.r is None else args.r,
                         alteration=args.alteration == "on", mode=args.mode, sigma_max=args.sigma_max)
    try:
        scfg.resolve(schedule.T)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    n_pos = args.positions or default_source(state.config.dataset).n
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    x0, symbols = sample(state.net.predict, state.space, schedule, scfg, args.count, n_pos, rng)
    write_data(args.out, symbols)
    if args.state_out:
        np.save(args.state_out, x0.astype("<f8"))


def probe_rows(config: TrainConfig, count: int, seed: int, with_oracle: bool):
    rng = np.random.default_rng(config.seed)
    space = DataSpace.build(config.repr, config.K, config.m, rng, trainable=config.trainable)
    schedule = config.schedule()
    data = generate_dataset(default_source(config.dataset, config.data_seed), count)
    x0, labels = space.encode(data)
    x0e = space.elements(x0).reshape(-1, space.table.m)
    labels = labels.reshape(-1)
    eps = np.random.default_rng(seed).standard_normal(x0e.shape)
    est = estimate_boundary(x0e, eps, labels, space.table, schedule)
    rows = est.as_rows()
    if with_oracle:
        rows = [row + (oracle.brute_first_exit(x0e[i], eps[i], int(labels[i]), space.table.weights,
                                               schedule.kind, schedule.T, sigma0=schedule.sigma0,
                                               sigmaT=schedule.sigmaT),)
                for i, row in enumerate(rows)]
    return rows


def cmd_probe(args) -> None:
    config = _config(args)
    rows = probe_rows(config, args.count, 0 if args.seed is None else args.seed, args.oracle)
    header = PROBE_COLUMNS + (("t0_oracle",) if args.oracle else ())
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:4]] + [int(row[4]), int(row[5])]
                       + [repr(float(v)) for v in row[6:]])
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_eval(args) -> None:
    state = load_checkpoint(args.ckpt)
    data = read_data(args.dataset)
    schedule = state.schedule
    seed = 0 if args.seed is None else args.seed
    rs = [state.config.r] if args.r is None else args.r
    ts = args.t or [schedule.T // 4, schedule.T // 2, 3 * schedule.T // 4]
    if any(not 1 <= t <= schedule.T for t in ts):
        raise UsageError(f"--t values must lie in [1, {schedule.T}]")
    rows = []
    for r in rs:
        acc = eval_recovery(state.net.predict, state.space, schedule, data, r, ts, draws=args.draws,
                            seed=seed, threads=args.threads)
        rows += [{"metric": "recovery_acc", "r": r, "t": t, "seed": seed, "value": v} for t, v in acc.items()]
    masked, mean_t0 = masked_fraction_and_mean_t0(state.space, schedule, data, seed)
    rows.append({"metric": "masked_frac", "seed": seed, "value": masked})
    rows.append({"metric": "mean_t0", "seed": seed, "value": mean_t0})
    if args.samples:
        scfg = SamplerConfig(steps=args.steps, r=rs[0])
        _, gen = sample(state.net.predict, state.space, schedule, scfg, args.samples, data.shape[1],
                        np.random.default_rng(seed))
        for k, v in eval_distribution(gen, data, state.space.K_data).items():
            rows.append({"metric": k, "r": rs[0], "seed": seed, "value": v})
    write_report(args.out, rows)


def cmd_plot(args) -> None:
    if not Path(args.report).exists():
        raise UsageError(f"no such report: {args.report}")
    rows = read_rows(args.report)
    prefix = args.out or str(Path(args.report).with_suffix(""))
    write_tidy(prefix + ".tidy.csv", rows)
    plot_report(rows, prefix + ".png", title=Path(args.report).name)


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bcdiff", description="Boundary-conditional diffusion for discrete data.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=1)

    def overrides(sp):
        sp.add_argument("--schedule", dest="schedule_kind", choices=("VP", "VE", "OT"))
        sp.add_argument("--T", type=int)
        sp.add_argument("--r", type=float)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch-size", dest="batch_size", type=int)
        sp.add_argument("--dataset", choices=SOURCE_KINDS)
        sp.add_argument("--repr", choices=("embedding", "fixed_binary", "binary_bits"))
        sp.add_argument("--K", type=int)
        sp.add_argument("--m", type=int)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--source", choices=SOURCE_KINDS, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--source-seed", type=int, default=0, help="seed of the source's transition/marginals")
    common(g)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a denoiser and write a checkpoint")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--data")
    t.add_argument("--metrics")
    overrides(t)
    common(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate symbols from a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--steps", type=int, default=20)
    s.add_argument("--r", type=float)
    s.add_argument("--mode", choices=MODES, default="deterministic")
    s.add_argument("--alteration", choices=("on", "off"), default="on")
    s.add_argument("--sigma-max", dest="sigma_max", type=float, default=0.1)
    s.add_argument("--count", type=int, default=64)
    s.add_argument("--positions", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--state-out", dest="state_out")
    common(s)
    s.set_defaults(func=cmd_sample)

    b = sub.add_parser("probe-boundary", help="boundary estimates for a config's data as CSV")
    b.add_argument("--config")
    b.add_argument("--oracle", action="store_true", help="append the brute-force exit time")
    b.add_argument("--count", type=int, default=8)
    b.add_argument("--out")
    overrides(b)
    common(b)
    b.set_defaults(func=cmd_probe)

    e = sub.add_parser("eval", help="recovery accuracy and corpus statistics")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--r", type=float, nargs="+")
    e.add_argument("--t", type=int, nargs="+")
    e.add_argument("--draws", type=int, default=1)
    e.add_argument("--samples", type=int, default=0)
    e.add_argument("--steps", type=int, default=20)
    e.add_argument("--out", required=True)
    common(e)
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="tidy CSV and PNG from a report or metrics log")
    pl.add_argument("--report", required=True)
    pl.add_argument("--out", help="output prefix (default: report path without suffix)")
    common(pl)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
