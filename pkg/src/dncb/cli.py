"""Command-line interface: ``dncb <command> [options]``.

Commands: simulate, fit, ppd, ppc, stability, preprocess.  Every command
accepts ``--seed``, ``--config`` and ``--out``.  Options left unset fall back
to the config file, then to built-in defaults; the default output directory
comes from the ``DNCB_OUT`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import build_config, load_config_file
from .data import load_biseq, load_matrix, read_labels, save_array, save_matrix, variance_filter
from .errors import DncbError, DomainError
from .evaluation import FitBudget, assignments, make_mask, prior_predictive_mse, rescaled_ppd, stability_sweep
from .gibbs import Chain, initialize_state, run_chain
from .model import BoundedMatrix, TdFactors, simulate_mf, simulate_td

log = logging.getLogger("dncb")


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--model", choices=("mf", "td"), default=None)
    g.add_argument("--C", type=int, default=None, help="sample clusters (td)")
    g.add_argument("--K", type=int, default=None, help="feature pathways")
    g.add_argument("--eps1", type=float, default=None)
    g.add_argument("--eps2", type=float, default=None)
    g.add_argument("--col-rate", dest="col_rate", type=float, default=None)
    for name in ("eta1", "eta2", "nu1", "nu2", "zeta1", "zeta2"):
        g.add_argument(f"--{name}", type=float, default=None)


def _chain_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("chain")
    g.add_argument("--iterations", type=int, default=None)
    g.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    g.add_argument("--thin", type=int, default=None)
    g.add_argument("--init", choices=("prior", "moment"), default=None)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help="flat TOML file; explicit flags win")
    common.add_argument("--out", default=None, help="output directory (default: $DNCB_OUT or .)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dncb", description="DNCB matrix factorization and tri-factorization")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="draw synthetic data and ground truth")
    _model_flags(p)
    p.add_argument("--I", type=int, required=True)
    p.add_argument("--J", type=int, required=True)

    p = sub.add_parser("fit", parents=[common], help="run Gibbs chains")
    _model_flags(p)
    _chain_flags(p)
    p.add_argument("--data", default=None)
    p.add_argument("--chains", type=int, default=None)
    p.add_argument("--heldout-fraction", dest="heldout_fraction", type=float, default=None)
    p.add_argument("--mask-seed", dest="mask_seed", type=int, default=None)
    p.add_argument("--mask", default=None, help="held-out indicator CSV (1 = held out)")
    p.add_argument("--resume", default=None, help="checkpoint to continue")

    p = sub.add_parser("ppd", parents=[common], help="rescaled held-out predictive density")
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mask", required=True, help="held-out indicator CSV (1 = held out)")

    p = sub.add_parser("ppc", parents=[common], help="prior predictive MSE")
    _model_flags(p)
    p.add_argument("--data", default=None)
    p.add_argument("--reps", type=int, default=1000)

    p = sub.add_parser("stability", parents=[common], help="co-occurrence stability sweep")
    _model_flags(p)
    _chain_flags(p)
    p.add_argument("--data", default=None)
    p.add_argument("--C-range", dest="C_range", default=None, help="e.g. 2:8 or 2,4,6")
    p.add_argument("--K-range", dest="K_range", default=None)
    p.add_argument("--labels", default=None, help="reference sample labels, one per line")
    p.add_argument("--feature-labels", dest="feature_labels", default=None)

    p = sub.add_parser("preprocess", parents=[common], help="beta values and variance filtering")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--biseq", help="long-format read counts: sample,feature,methylated,unmethylated")
    src.add_argument("--matrix", help="beta-value matrix to filter")
    p.add_argument("--s0", type=float, default=0.1)
    p.add_argument("--top", type=int, default=None, help="keep this many highest-variance columns")
    p.add_argument("--missing", choices=("zero", "mask"), default="zero")
    return parser


def _parse_range(text: str | None, fallback: int | None) -> list:
    if text is None:
        if fallback is None:
            raise DomainError("a cardinality range is required")
        return [fallback]
    if ":" in text:
        lo, hi = (int(x) for x in text.split(":"))
        return list(range(lo, hi + 1))
    return [int(x) for x in text.split(",") if x]


def _config(args):
    file_values = load_config_file(args.config) if args.config else {}
    return build_config(file_values, vars(args))


def _out_dir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_factors(out: Path, f, data: BoundedMatrix, suffix: str = "") -> None:
    rows = data.row_labels
    cols = data.col_labels
    if isinstance(f, TdFactors):
        save_array(out / f"theta{suffix}.csv", f.theta, rows, [f"c{c}" for c in range(f.C)])
        save_array(out / f"phi{suffix}.csv", f.phi.T, cols, [f"k{k}" for k in range(f.K)])
        for t, pi in ((1, f.pi1), (2, f.pi2)):
            save_array(out / f"pi{t}{suffix}.csv", pi, [f"c{c}" for c in range(f.C)], [f"k{k}" for k in range(f.K)])
    else:
        ks = [f"k{k}" for k in range(f.K)]
        save_array(out / f"theta1{suffix}.csv", f.theta1, rows, ks)
        save_array(out / f"theta2{suffix}.csv", f.theta2, rows, ks)
        save_array(out / f"phi{suffix}.csv", f.phi.T, cols, ks)


def _load_mask(path, shape) -> np.ndarray:
    m = np.loadtxt(path, delimiter=",", dtype=int, ndmin=2)
    if m.shape != shape:
        raise DomainError(f"mask shape {m.shape} does not match data shape {shape}")
    return m.astype(bool)


def cmd_simulate(args) -> dict:
    cfg = _config(args).validate()
    rng = np.random.default_rng(cfg.seed)
    if cfg.model == "td":
        f, state, data = simulate_td(cfg.hyper, cfg.params, (args.I, cfg.C, cfg.K, args.J), rng)
    else:
        f, state, data = simulate_mf(cfg.hyper, cfg.params, (args.I, cfg.K, args.J), rng)
    data.row_labels = [f"s{i}" for i in range(args.I)]
    data.col_labels = [f"f{j}" for j in range(args.J)]
    out = _out_dir(cfg)
    save_matrix(out / "data.csv", data)
    _write_factors(out, f, data, "_true")
    save_array(out / "y1_true.csv", state.y1, data.row_labels, data.col_labels)
    save_array(out / "y2_true.csv", state.y2, data.row_labels, data.col_labels)
    (out / "labels_samples.txt").write_text("\n".join(map(str, assignments(f, "samples"))) + "\n")
    (out / "labels_features.txt").write_text("\n".join(map(str, assignments(f, "features"))) + "\n")
    return {"command": "simulate", "shape": list(data.shape), "clamped": data.n_clamped, "out": str(out)}


def cmd_fit(args) -> dict:
    out_summary: dict = {"command": "fit"}
    if args.resume:
        result, rng, extra = load_checkpoint(args.resume)
        cfg = build_config(extra.get("config", {}),
                           {k: v for k, v in vars(args).items() if k in ("iterations", "out") and v is not None})
        run_chain(result.chain, cfg.iterations, rng, cfg.burn_in, cfg.thin, result)
        out = _out_dir(cfg)
        save_checkpoint(Path(cfg.out) / Path(args.resume).name, result, rng, extra)
        _write_factors(out, result.chain.factors, result.chain.data)
        out_summary.update(iteration=result.chain.iteration, samples=len(result.samples))
        return out_summary

    cfg = _config(args).validate()
    if cfg.data is None:
        raise DomainError("--data is required")
    data = load_matrix(cfg.data)
    out = _out_dir(cfg)
    observed = data.mask.copy()
    if args.mask:
        observed &= ~_load_mask(args.mask, data.shape)
    elif cfg.heldout_fraction is not None:
        hm = make_mask(data.shape, cfg.heldout_fraction, cfg.mask_seed if cfg.mask_seed is not None else cfg.seed)
        np.savetxt(out / "mask.csv", hm.mask.astype(int), fmt="%d", delimiter=",")
        observed &= hm.observed
    # held-out values are dropped before the sampler sees the matrix
    values = np.where(observed, data.values, np.nan)
    train = BoundedMatrix(values, observed, data.row_labels, data.col_labels, data.delta)
    streams = np.random.default_rng(cfg.seed).spawn(cfg.chains)
    chains = []
    for n, rng in enumerate(streams):
        factors, state = initialize_state(train, cfg.model, cfg.hyper, cfg.params, cfg.C, cfg.K, cfg.init, rng)
        chain = Chain(train, cfg.model, cfg.params, cfg.hyper, factors, state)
        result = run_chain(chain, cfg.iterations, rng, cfg.burn_in, cfg.thin)
        save_checkpoint(out / f"chain{n}.ckpt", result, rng, {"config": _json_config(cfg)})
        _write_factors(out, chain.factors, data, "" if cfg.chains == 1 else f"_chain{n}")
        chains.append({"checkpoint": str(out / f"chain{n}.ckpt"), "samples": len(result.samples)})
    out_summary.update(chains=chains, clamped=data.n_clamped, heldout=int((data.mask & ~observed).sum()))
    _write_json(out / "fit.json", out_summary)
    return out_summary


def _json_config(cfg) -> dict:
    return {k: v for k, v in vars(cfg).items()}


def cmd_ppd(args) -> dict:
    cfg = _config(args)
    data = load_matrix(args.data)
    held = _load_mask(args.mask, data.shape) & data.mask
    samples = []
    params = None
    for path in args.checkpoint:
        result, _, _ = load_checkpoint(path)
        params = result.chain.params
        samples.extend(result.samples or [result.chain.factors])
    value = rescaled_ppd(data.values, held, samples, params)
    summary = {"command": "ppd", "rescaled_ppd": value, "samples": len(samples), "heldout": int(held.sum())}
    _write_json(_out_dir(cfg) / "ppd.json", summary)
    return summary


def cmd_ppc(args) -> dict:
    cfg = _config(args).validate()
    if cfg.data is None:
        raise DomainError("--data is required")
    data = load_matrix(cfg.data)
    mean, sd = prior_predictive_mse(data, cfg.spec, args.reps, np.random.default_rng(cfg.seed))
    summary = {"command": "ppc", "mse_mean": mean, "mse_sd": sd, "reps": args.reps}
    _write_json(_out_dir(cfg) / "ppc.json", summary)
    return summary


def cmd_stability(args) -> dict:
    cfg = _config(args).validate(need_dims=False)
    if cfg.data is None:
        raise DomainError("--data is required")
    data = load_matrix(cfg.data)
    C_range = _parse_range(args.C_range, cfg.C) if cfg.model == "td" else [None]
    K_range = _parse_range(args.K_range, cfg.K)
    labels = read_labels(args.labels) if args.labels else None
    flabels = read_labels(args.feature_labels) if args.feature_labels else None
    report = stability_sweep(data, cfg.model, C_range, K_range, cfg.params, np.random.default_rng(cfg.seed),
                             cfg.hyper, FitBudget(cfg.iterations, cfg.burn_in, cfg.init), labels, flabels)
    out = _out_dir(cfg)
    report.to_csv(out / "stability.csv")
    report.to_json(out / "stability.json")
    return {"command": "stability", "cells": len(report.cells),
            "failed": sum(c.error is not None for c in report.cells)}


def cmd_preprocess(args) -> dict:
    cfg = _config(args)
    m = load_biseq(args.biseq, args.s0, args.missing) if args.biseq else load_matrix(args.matrix)
    if args.top is not None:
        m = variance_filter(m, args.top)
    out = _out_dir(cfg)
    save_matrix(out / "beta.csv", m)
    return {"command": "preprocess", "shape": list(m.shape), "out": str(out / "beta.csv")}


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "ppd": cmd_ppd,
    "ppc": cmd_ppc,
    "stability": cmd_stability,
    "preprocess": cmd_preprocess,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = COMMANDS[args.command](args)
    except (DncbError, OSError, ValueError) as exc:
        print(f"dncb {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
