"""Command-line interface: ``simulate``, ``fit``, ``predict`` and ``diagnose``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import engine
from .config import FAMILY_OPTION_KEYS, SamplerConfig, parse_config, read_config_file
from .data import SCENARIOS, format_float, load_dataset, read_table, save_dataset, simulate, write_table
from .errors import NumericalError, StructureError, UnsupportedModelError, ValidationError
from .io import ForestDraw, load_forests, load_scaling, save_scaling, write_forest
from .models import FAMILIES, make_family

log = logging.getLogger("gbart")

TRACE_FILE = "trace.csv"
FORESTS_FILE = "forests.txt"
LOGLIK_FILE = "pointwise_loglik.csv"
SCALING_FILE = "scaling.txt"
CONFIG_FILE = "config.txt"


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    rng = np.random.default_rng(args.seed)
    data, truth = simulate(args.scenario, rng, args.n, args.p)
    save_dataset(args.out, data)
    if args.truth:
        names = list(truth)
        write_table(args.truth, names, [truth[k] for k in names])
    return 0


# ---------------------------------------------------------------------------
# fit


def _config_fields():
    return [f for f in dataclasses.fields(SamplerConfig) if f.name not in ("family_options", "model")]


def resolve_config(args) -> SamplerConfig:
    """Config file values overridden by any flag given on the command line."""
    pairs = read_config_file(args.config) if args.config else {}
    for f in _config_fields():
        value = getattr(args, f.name)
        if value is not None:
            pairs[f.name] = str(value)
    for key in FAMILY_OPTION_KEYS:
        value = getattr(args, key)
        if value is not None:
            pairs[key] = value
    if args.model is not None:
        pairs["model"] = args.model
    if "model" not in pairs:
        raise ValidationError("no model given; use --model or a model= line in the config file")
    return parse_config(pairs)


def write_config(path: Path, config: SamplerConfig) -> None:
    lines = []
    for key, value in config.to_dict().items():
        text = format_float(value) if isinstance(value, float) else str(value).lower() if isinstance(value, bool) else str(value)
        lines.append(f"{key}={text}")
    path.write_text("\n".join(lines) + "\n")


def family_for(config: SamplerConfig):
    options = dict(config.family_options)
    if config.model == "aft_gengamma":
        options["fd_delta"] = config.fd_delta
    return make_family(config.model, **options)


def cmd_fit(args) -> int:
    config = resolve_config(args)
    family = family_for(config)
    data = load_dataset(args.data, require_y=True, require_delta=family.survival, scaling_method=args.scaling)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / FORESTS_FILE, "w") as fh:
        offset = 0

        def on_keep(m, forest, nuisance):
            write_forest(fh, forest, config.model, nuisance, offset + m)

        traces = []
        for chain, rng in enumerate(engine._rng_streams(config.seed, config.chains)):
            log.info("chain %d: %d iterations", chain, config.iterations)
            traces.append(engine.run_chain(config, data, family, rng=rng, chain=chain,
                                           keep_forests=False, on_keep=on_keep))
            offset += config.num_kept
    trace = engine.merge_traces(traces)

    names = list(trace.metrics)
    write_table(out / TRACE_FILE, names, [trace.metrics[k] for k in names])
    ll = trace.pointwise_loglik
    write_table(out / LOGLIK_FILE, [f"obs{i + 1}" for i in range(ll.shape[1])], list(ll.T))
    save_scaling(out / SCALING_FILE, data.scaling)
    write_config(out / CONFIG_FILE, config)
    total, _ = engine.lpml(ll)
    print(f"kept draws: {trace.num_kept}  LPML: {total:.6f}")
    return 0


# ---------------------------------------------------------------------------
# predict / diagnose


def load_fit(forest_dir: str | Path):
    """Rebuild a trace holding the saved draws of a ``fit`` output directory."""
    root = Path(forest_dir)
    for name in (CONFIG_FILE, FORESTS_FILE, SCALING_FILE):
        if not (root / name).exists():
            raise ValidationError(f"{root}: missing {name}; is this a fit output directory?")
    config = parse_config(read_config_file(root / CONFIG_FILE))
    family = family_for(config)
    draws: list[ForestDraw] = load_forests(root / FORESTS_FILE, model=config.model)
    for d in draws:
        unknown = set(d.nuisance) - set(family.nuisance)
        if unknown:
            raise ValidationError(f"{root / FORESTS_FILE}: unexpected nuisance parameters {sorted(unknown)}")
    loglik = np.empty((len(draws), 0))
    if (root / LOGLIK_FILE).exists():
        _, loglik = read_table(root / LOGLIK_FILE)
    trace = engine.ChainTrace(config.model, config, {}, [d.forest for d in draws],
                              [d.nuisance for d in draws], loglik, family=family)
    return trace, load_scaling(root / SCALING_FILE)


def _band_columns(prefix: str, band) -> tuple[list[str], list]:
    return [f"{prefix}_mean", f"{prefix}_lower", f"{prefix}_upper"], [band.mean, band.lower, band.upper]


def cmd_predict(args) -> int:
    trace, scaling = load_fit(args.forest_dir)
    data = load_dataset(args.data, require_y=False, scaling=scaling)
    summary = engine.predict(trace, data.X)
    header, cols = ["row"], [np.arange(1, data.n + 1)]
    h, c = _band_columns("r", summary.r)
    header += h
    cols += c
    for name, band in summary.transforms.items():
        h, c = _band_columns(name, band)
        header += h
        cols += c
    write_table(args.out, header, cols)

    if args.survival_grid:
        try:
            grid = np.array([float(v) for v in args.survival_grid.split(",")])
        except ValueError:
            raise ValidationError(f"--survival-grid must be comma-separated numbers, got {args.survival_grid!r}") from None
        curves = engine.survival_curve(trace, data.X, grid)
        n, k = curves.mean.shape
        surv_out = args.survival_out or str(Path(args.out).with_name("survival.csv"))
        write_table(surv_out, ["row", "t", "survival_mean", "survival_lower", "survival_upper"],
                    [np.repeat(np.arange(1, n + 1), k), np.tile(grid, n),
                     curves.mean.ravel(), curves.lower.ravel(), curves.upper.ravel()])
    return 0


def cmd_diagnose(args) -> int:
    trace, scaling = load_fit(args.trace_dir)
    heldout = load_dataset(args.heldout, require_y=False, scaling=scaling)
    truth = None
    if args.truth:
        header, table = read_table(args.truth)
        if table.shape[0] != heldout.n:
            raise ValidationError(f"{args.truth}: has {table.shape[0]} rows, the held-out set has {heldout.n}")
        truth = {h: table[:, i] for i, h in enumerate(header)}
    metrics = engine.heldout_metrics(trace, heldout, truth)
    names = list(metrics)
    write_table(args.out, ["draw"] + names, [np.arange(1, trace.num_kept + 1)] + [metrics[k] for k in names])

    summary = {f"{k}_posterior_mean": float(np.mean(v)) for k, v in metrics.items()}
    if trace.pointwise_loglik.shape[1]:
        summary["lpml"], _ = engine.lpml(trace.pointwise_loglik)
    if trace.model == "aft_gengamma":
        _, summary["variance_log_time_posterior_mean"] = engine.gengamma_variance(trace)
    out = Path(args.out)
    with open(out.with_name(out.stem + "_summary.csv"), "w") as fh:
        fh.write("quantity,value\n")
        for k, v in summary.items():
            fh.write(f"{k},{format_float(v)}\n")
    for k, v in summary.items():
        print(f"{k}: {v:.6g}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gbart", description="Generalized BART via reversible-jump MCMC.")
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a benchmark dataset")
    p.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))
    p.add_argument("--n", type=int, default=None, help="number of rows (scenario default if omitted)")
    p.add_argument("--p", type=int, default=None, help="number of covariates (scenario default if omitted)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", default=None, help="write the true r0 and model transforms here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the sampler and write traces and forest snapshots")
    p.add_argument("--model", choices=sorted(FAMILIES), default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="key=value file; flags override its values")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--scaling", choices=("minmax", "quantile"), default="minmax")
    for f in _config_fields():
        kind = str if isinstance(f.default, bool) else type(f.default)
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=kind, default=None)
    for key in FAMILY_OPTION_KEYS:
        p.add_argument("--" + key.replace("_", "-"), dest=key, default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior summaries at new covariates")
    p.add_argument("--forest-dir", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--survival-grid", default=None, help='comma-separated times, e.g. "0.5,1,2"')
    p.add_argument("--survival-out", default=None, help="survival curve file (default: survival.csv next to --out)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("diagnose", help="held-out metric series and LPML")
    p.add_argument("--trace-dir", required=True)
    p.add_argument("--heldout", required=True)
    p.add_argument("--truth", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, StructureError, UnsupportedModelError, NumericalError, OSError) as exc:
        print(f"gbart {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
