"""Command line entry point.

Every subcommand reads a RunConfig (preset, optional JSON file, then flag
and ``--set key=value`` overrides) and writes its artifacts under ``--out``.
Module errors exit with status 2 after printing a JSON error record to
stderr and writing it to ``<out>/error.json``.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import io
from . import pipeline as pl
from .config import PRESETS, load_config, parse_override
from .diagnostics import run_checks
from .errors import DataError, IIDShellError
from .parallel import default_workers
from .perfect import iid_sample_vardim

EXIT_ERROR = 2


def _labels(target):
    return target.labels or [f"theta_{i + 1}" for i in range(target.dim)]


def _path(cfg, name):
    return os.path.join(cfg.out, name)


def _write_grids(cfg, thetas, labels, prefix="density"):
    meta = cfg.meta()
    os.makedirs(_path(cfg, prefix), exist_ok=True)
    thetas = np.asarray(thetas)
    for i, lab in enumerate(labels):
        io.emit_density_grid(thetas[:, i], _path(cfg, f"{prefix}/{lab}.tsv"), meta=meta)


def cmd_pilot(cfg, args):
    target = pl.build_target(cfg)
    init = None
    if cfg.target["kind"] == "normal_mixture":
        y, _ = pl.mixture_data(cfg)
        init = pl.mixture_init(y, int(cfg.target["k"]))
    chain = pl.pilot(target, cfg, init=init)
    io.write_chain_csv(_path(cfg, "chain.csv"), chain.samples, _labels(target), cfg.meta())
    io.save_json(_path(cfg, "pilot.json"), {"acceptance_rate": chain.acceptance_rate,
                                            "move_scales": chain.move_scales.tolist(),
                                            "n_kept": int(chain.samples.shape[0])}, cfg.meta())
    return {"chain": _path(cfg, "chain.csv"), "acceptance_rate": chain.acceptance_rate}


def cmd_modes(cfg, args):
    samples, _, _ = io.read_chain_csv(args.chain or _path(cfg, "chain.csv"))
    target = pl.build_target(cfg)
    modes, sweep = pl.find_modes(samples, cfg, target)
    dec = pl.decompose(target, samples, modes, cfg)
    payload = io.decomposition_to_dict(dec)
    payload["sweep_eps"] = sweep.eps
    io.save_json(_path(cfg, "decomposition.json"), payload, cfg.meta())
    return {"modes": len(modes), "radii": dec.radii.tolist(), "weights": dec.weights.tolist()}


def _load_decomposition(cfg, args):
    return io.decomposition_from_dict(io.load_json(args.decomposition or _path(cfg, "decomposition.json")))


def cmd_estimate(cfg, args):
    target = pl.build_target(cfg)
    dec = _load_decomposition(cfg, args)
    sampler = pl.build_sampler(target, dec, cfg)
    io.save_estimates(_path(cfg, "estimates.json"), sampler.families, sampler.tables, cfg.meta())
    return {"shells": [t.count for t in sampler.tables],
            "min_p_hat": [float(t.p_hat.min()) for t in sampler.tables]}


def cmd_sample(cfg, args):
    target = pl.build_target(cfg)
    dec = _load_decomposition(cfg, args)
    est_path = args.estimates or _path(cfg, "estimates.json")
    if os.path.exists(est_path):
        families, tables, _ = io.load_estimates(est_path)
        sampler = pl.build_sampler(target, dec, cfg, tables=tables, families=families)
    else:
        sampler = pl.build_sampler(target, dec, cfg)
    samples = sampler.sample(cfg.K)
    io.write_samples(_path(cfg, "samples.jsonl"), samples, cfg.meta())
    if cfg.K >= 100:
        _write_grids(cfg, [s.theta for s in samples], _labels(target))
    return {"samples": _path(cfg, "samples.jsonl"), "K": len(samples),
            "mean_T": float(np.mean([s.T for s in samples]))}


def _evidence(cfg):
    model, fits = pl.build_vardim(cfg)
    log_ev = {k: fits[k].log_evidence for k in model.k_values}
    post = dict(zip(model.k_values, model.posterior.tolist()))
    io.save_evidence(_path(cfg, "evidence.json"), log_ev, post, cfg.meta())
    return model, fits, post


def cmd_evidence(cfg, args):
    _, _, post = _evidence(cfg)
    return {"posterior": post}


def cmd_vardim(cfg, args):
    model, _, post = _evidence(cfg)
    samples = iid_sample_vardim(model, cfg.K, cfg.workers, cfg.backend)
    io.write_samples(_path(cfg, "samples.jsonl"), samples, cfg.meta())
    ks, counts = np.unique([s.k for s in samples], return_counts=True)
    return {"posterior": post, "k_counts": dict(zip(ks.tolist(), counts.tolist()))}


def cmd_predict(cfg, args):
    samples, _ = io.read_samples(args.samples or _path(cfg, "samples.jsonl"))
    if not samples:
        raise DataError("sample file holds no draws")
    grid = pl.predictive_grid(cfg)
    dens, mean = pl.posterior_predictive(samples, grid)
    io.write_tsv(_path(cfg, "predictive.tsv"), ["y", "density"], np.column_stack([grid, mean]), cfg.meta())
    header = ["y"] + [f"draw_{s.draw_index}" for s in samples]
    io.write_tsv(_path(cfg, "predictive_draws.tsv"), header, np.column_stack([grid, dens.T]), cfg.meta())
    return {"grid_points": int(grid.size), "trapezoid_integral": float(np.trapezoid(mean, grid))}


def cmd_check(cfg, args):
    results = run_checks(cfg.seed)
    io.save_json(_path(cfg, "check.json"), {"checks": results}, cfg.meta())
    failed = [r["name"] for r in results if not r["passed"]]
    return {"passed": not failed, "failed": failed}


COMMANDS = {
    "pilot": (cmd_pilot, "run the pilot TMCMC chain and write chain.csv"),
    "modes": (cmd_modes, "find modes in the chain and write decomposition.json"),
    "estimate": (cmd_estimate, "estimate shell tables and write estimates.json"),
    "sample": (cmd_sample, "draw K iid samples (multimodal sampler)"),
    "evidence": (cmd_evidence, "per-k log evidence for a normal mixture model"),
    "vardim": (cmd_vardim, "evidence plus K iid (k, theta) draws"),
    "predict": (cmd_predict, "posterior predictive density grid from a sample file"),
    "check": (cmd_check, "self-contained diagnostics suite"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="iidshell", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", default=None, choices=sorted(PRESETS),
                       help="base settings before --config (default: reference)")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out")
        p.add_argument("--K", type=int, help="number of iid draws")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config field (value parsed as JSON)")
        if name in ("modes",):
            p.add_argument("--chain", help="chain CSV (default <out>/chain.csv)")
        if name in ("estimate", "sample"):
            p.add_argument("--decomposition", help="decomposition JSON (default <out>/decomposition.json)")
        if name == "sample":
            p.add_argument("--estimates", help="estimates JSON (default <out>/estimates.json if present)")
        if name == "predict":
            p.add_argument("--samples", help="sample file (default <out>/samples.jsonl)")
    return parser


def config_from_args(args):
    overrides = dict(parse_override(s) for s in args.set)
    for key in ("seed", "workers", "out", "K"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if "workers" not in overrides and os.environ.get("IIDSHELL_WORKERS"):
        overrides["workers"] = default_workers()
    return load_config(args.config, args.preset or "reference", overrides)


def _emit_error(record, out):
    print(json.dumps(record), file=sys.stderr)
    if out:
        try:
            os.makedirs(out, exist_ok=True)
            with open(os.path.join(out, "error.json"), "w") as fh:
                json.dump(record, fh)
        except OSError:
            pass


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = args.out
    try:
        cfg = config_from_args(args)
        out = cfg.out
        os.makedirs(cfg.out, exist_ok=True)
        summary = COMMANDS[args.command][0](cfg, args)
    except IIDShellError as exc:
        _emit_error(exc.record(), out)
        return EXIT_ERROR
    except (OSError, ValueError, KeyError) as exc:
        _emit_error({"error": "invalid_input", "type": type(exc).__name__, "message": str(exc)}, out)
        return EXIT_ERROR
    summary = {"command": args.command, **cfg.meta(), **summary}
    print(json.dumps(summary, default=float))
    if args.command == "check" and not summary["passed"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
