"""Command-line interface: fit, score, compare, and plot mixtures.

Subcommands: fit-em, fit-dpgmm, eval, synth, plot.  Every subcommand
accepts ``--config file.json`` whose keys mirror the long flag names
(underscores for dashes); explicit flags override config values and
unknown keys are rejected.

Exit codes: 0 success, 1 input/schema error, 2 convergence failure,
3 sampler initialization failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import fields as dataclass_fields

import numpy as np

from .dpgmm import HyperPriors
from .em import EmOptions, fit_em
from .errors import (
    ComparisonError,
    DataError,
    DomainError,
    FitError,
    SamplerInitError,
    SchemaError,
)
from .evaluation import BinningInfo, FitReport, compare, kl_divergence
from .mixture import MixtureModel, effective_components, mixture_log_pdf
from .pipeline import PowerSamples, build_empirical_pdf, load_samples, synth_generate
from .sampler import SamplerConfig, fit_dpgmm

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONVERGENCE = 2
EXIT_SAMPLER_INIT = 3
EXIT_USAGE = 64

_HYPER_KEYS = tuple(f.name for f in dataclass_fields(HyperPriors))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); 2 is taken
        raise UsageError(message)


def _positive_int(name, value):
    if value is None or value < 1:
        raise UsageError(f"{name} must be a positive integer, got {value}")
    return int(value)


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise DataError(f"config {path} must hold a JSON object")
    return payload


def _parse_with_config(parser: _Parser, argv, extra_keys=()) -> argparse.Namespace:
    """Two-pass parse: config values become defaults, flags override,
    unknown config keys are rejected."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    payload = _load_config(args.config)
    known = {a.dest for a in parser._actions} | set(extra_keys)
    unknown = set(payload) - known
    if unknown:
        raise DataError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    parser.set_defaults(**{k: v for k, v in payload.items() if k not in extra_keys})
    args = parser.parse_args(argv)
    for key in extra_keys:
        if key in payload:
            setattr(args, key, payload[key])
    return args


def _load_input_samples(paths, merge: bool, p_tx_mw: float) -> PowerSamples:
    if len(paths) > 1 and not merge:
        raise UsageError("multiple inputs require --merge")
    values = []
    for p in paths:
        values.append(load_samples(p, p_tx_mw).values)
    merged = np.concatenate(values)
    label = "+".join(str(p) for p in paths)
    return PowerSamples(merged, label=label)


def _binning_of(pdf, n_samples) -> BinningInfo:
    return BinningInfo(
        bins=pdf.bins,
        lo=float(pdf.bin_edges[0]),
        hi=float(pdf.bin_edges[-1]),
        n_samples=int(n_samples),
    )


def _write_report(report: FitReport, out_path) -> None:
    with open(out_path, "w") as fh:
        fh.write(report.to_json())
        fh.write("\n")


# ---------------------------------------------------------------------------
# fit-em
# ---------------------------------------------------------------------------


def _fit_em_parser() -> _Parser:
    p = _Parser(prog="chanmix fit-em", description="Fit a K-component Gamma mixture by EM")
    p.add_argument("input", nargs="+", help="measurement CSV(s)")
    p.add_argument("--config", default=None)
    p.add_argument("--k", type=int, default=None, help="number of components (required)")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--ptx-mw", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--merge", action="store_true", help="concatenate multiple inputs")
    p.add_argument("--out", default="report.json")
    return p


def cmd_fit_em(argv) -> int:
    args = _parse_with_config(_fit_em_parser(), argv)
    k = _positive_int("--k", args.k)
    _positive_int("--bins", args.bins)
    samples = _load_input_samples(args.input, args.merge, args.ptx_mw)
    pdf = build_empirical_pdf(samples, bins=args.bins)

    start = time.perf_counter()
    opts = EmOptions(k=k, max_iters=args.max_iters, tol=args.tol, restarts=args.restarts, seed=args.seed)
    result = fit_em(samples.values, opts)
    runtime = time.perf_counter() - start

    report = FitReport(
        method="EM",
        k_configured=k,
        k_effective=effective_components(result.model),
        model=result.model,
        kl_divergence=kl_divergence(pdf, result.model),
        log_likelihood=result.log_likelihood,
        runtime_seconds=runtime,
        seed=args.seed,
        binning=_binning_of(pdf, samples.n),
        extra={
            "em": {
                "iterations": result.iterations,
                "converged": result.converged,
                "restarts": args.restarts,
                "tol": args.tol,
            }
        },
    )
    _write_report(report, args.out)
    if not result.converged:
        print(f"warning: EM did not converge in {args.max_iters} iterations", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit-dpgmm
# ---------------------------------------------------------------------------


def _fit_dpgmm_parser() -> _Parser:
    p = _Parser(prog="chanmix fit-dpgmm", description="Fit the truncated DP Gamma mixture by posterior sampling")
    p.add_argument("input", nargs="+")
    p.add_argument("--config", default=None)
    p.add_argument("--truncation", type=int, default=30)
    p.add_argument("--chains", type=int, default=2)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--target-accept", type=float, default=0.8)
    p.add_argument("--threshold", type=float, default=0.001)
    p.add_argument("--init-k", type=int, default=5, help="components of the EM used to seed the chains")
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--ptx-mw", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--merge", action="store_true")
    p.add_argument("--trace", default=None, help="write posterior draws to this CSV")
    p.add_argument("--fallback-rwm", action="store_true", help="random-walk Metropolis instead of the Hamiltonian sampler")
    p.add_argument("--out", default="report.json")
    return p


def cmd_fit_dpgmm(argv) -> int:
    args = _parse_with_config(_fit_dpgmm_parser(), argv, extra_keys=_HYPER_KEYS)
    _positive_int("--truncation", args.truncation)
    _positive_int("--bins", args.bins)
    hyper = HyperPriors(**{k: getattr(args, k) for k in _HYPER_KEYS if hasattr(args, k)})
    samples = _load_input_samples(args.input, args.merge, args.ptx_mw)
    pdf = build_empirical_pdf(samples, bins=args.bins)

    cfg = SamplerConfig(
        chains=args.chains,
        warmup=args.warmup,
        draws=args.draws,
        target_accept=args.target_accept,
        seed=args.seed,
    )
    start = time.perf_counter()
    fit = fit_dpgmm(
        samples.values,
        truncation=args.truncation,
        hyper=hyper,
        cfg=cfg,
        threshold=args.threshold,
        init_components=args.init_k,
        method="rwm" if args.fallback_rwm else "nuts",
    )
    runtime = time.perf_counter() - start

    model = fit.summary.model
    diag = fit.diag
    lp_rhat = diag.lp_split_r_hat
    report = FitReport(
        method="DPGMM",
        k_configured=args.truncation,
        k_effective=fit.summary.effective_k,
        model=model,
        kl_divergence=kl_divergence(pdf, model),
        log_likelihood=fit.summary.mean_log_posterior,
        runtime_seconds=runtime,
        seed=args.seed,
        binning=_binning_of(pdf, samples.n),
        extra={
            "dpgmm": {
                "truncation": args.truncation,
                "chains": args.chains,
                "warmup": args.warmup,
                "draws": args.draws,
                "threshold": args.threshold,
                "sampler": "rwm" if args.fallback_rwm else "nuts",
                "divergences": int(fit.trace.divergence_count),
                "divergence_rate": float(fit.trace.divergence_rate),
                "r_hat_log_posterior": None if np.isnan(lp_rhat) else float(lp_rhat),
                "ess_log_posterior": None if np.isnan(diag.lp_ess) else float(diag.lp_ess),
                "truncation_saturated": bool(fit.summary.remainder_weight_mean > args.threshold),
                "warnings": list(diag.notes),
            }
        },
    )
    _write_report(report, args.out)
    if args.trace is not None:
        _export_constrained_trace(fit.trace, args.trace, args.truncation)
    return EXIT_OK


def _export_constrained_trace(trace, path, truncation: int) -> None:
    from scipy.special import expit

    k = truncation
    names = ["concentration"]
    names += [f"stick_{j}" for j in range(1, k)]
    for block in ("shape_prior_shape", "shape_prior_scale", "rate_prior_shape", "rate_prior_rate", "shape", "rate"):
        names += [f"{block}_{j}" for j in range(1, k + 1)]
    flat = trace.positions.copy()
    flat[:, :, 0] = np.exp(flat[:, :, 0])
    flat[:, :, 1:k] = expit(flat[:, :, 1:k])
    flat[:, :, k:] = np.exp(flat[:, :, k:])
    constrained = type(trace)(
        positions=flat,
        log_probs=trace.log_probs,
        divergences=trace.divergences,
        step_sizes=trace.step_sizes,
        truncation=trace.truncation,
    )
    constrained.to_csv(path, column_names=names)


# ---------------------------------------------------------------------------
# eval / synth / plot
# ---------------------------------------------------------------------------


def _eval_parser() -> _Parser:
    p = _Parser(prog="chanmix eval", description="Compare fit reports over one dataset")
    p.add_argument("reports", nargs="+", help="FitReport JSON files")
    p.add_argument("--config", default=None)
    p.add_argument("--data", default=None, help="recompute KL against this measurement CSV")
    p.add_argument("--ptx-mw", type=float, default=1.0)
    p.add_argument("--csv", default=None, help="also write the table as CSV")
    return p


def _load_report(path) -> FitReport:
    try:
        with open(path) as fh:
            return FitReport.from_json(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read report {path}: {exc}") from exc


def cmd_eval(argv) -> int:
    args = _parse_with_config(_eval_parser(), argv)
    reports = [_load_report(p) for p in args.reports]
    if args.data is not None:
        samples = load_samples(args.data, args.ptx_mw)
        refreshed = []
        for r in reports:
            pdf = build_empirical_pdf(samples, bins=r.binning.bins)
            binning = _binning_of(pdf, samples.n)
            if binning != r.binning:
                raise ComparisonError(
                    f"report {r.method} was built against different binning: {r.binning} vs {binning}"
                )
            r.kl_divergence = kl_divergence(pdf, r.model)
            refreshed.append(r)
        reports = refreshed
    table = compare(reports)
    print(table.to_text())
    if args.csv is not None:
        with open(args.csv, "w") as fh:
            fh.write(table.to_csv_text())
    return EXIT_OK


def _synth_parser() -> _Parser:
    p = _Parser(prog="chanmix synth", description="Draw synthetic powers from a mixture JSON")
    p.add_argument("model", help="MixtureModel JSON file")
    p.add_argument("--config", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="synthetic.csv")
    return p


def cmd_synth(argv) -> int:
    args = _parse_with_config(_synth_parser(), argv)
    n = _positive_int("--n", args.n)
    try:
        with open(args.model) as fh:
            model = MixtureModel.from_json(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read model {args.model}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"model {args.model} is not valid JSON: {exc}") from exc
    synth = synth_generate(model, n, args.seed)
    with open(args.out, "w") as fh:
        fh.write("power_mw\n")
        for v in synth.samples.values:
            fh.write(f"{float(v)!r}\n")
    return EXIT_OK


def _plot_parser() -> _Parser:
    p = _Parser(prog="chanmix plot", description="Overlay fitted mixtures on the empirical density")
    p.add_argument("reports", nargs="+", help="FitReport JSON file(s)")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True, help="measurement CSV")
    p.add_argument("--ptx-mw", type=float, default=1.0)
    p.add_argument("--bins", type=int, default=None, help="default: binning stored in the first report")
    p.add_argument("--points", type=int, default=512)
    p.add_argument("--out", default="overlay.svg")
    return p


def _curve_grid(models, hi_edge: float, points: int) -> np.ndarray:
    from scipy.stats import gamma as scipy_gamma

    hi = hi_edge
    for m in models:
        tails = scipy_gamma.ppf(1.0 - 1e-6, a=m.shapes, scale=1.0 / m.rates)
        hi = max(hi, float(np.max(tails)))
    return np.linspace(0.0, hi, points + 1)[1:]


def cmd_plot(argv) -> int:
    args = _parse_with_config(_plot_parser(), argv)
    reports = [_load_report(p) for p in args.reports]
    samples = load_samples(args.data, args.ptx_mw)
    bins = args.bins if args.bins is not None else reports[0].binning.bins
    pdf = build_empirical_pdf(samples, bins=bins)

    grid = _curve_grid([r.model for r in reports], float(pdf.bin_edges[-1]), args.points)
    labels, curves = [], []
    for i, r in enumerate(reports):
        label = r.method if r.method not in labels else f"{r.method}_{i}"
        labels.append(label)
        curves.append(np.exp(mixture_log_pdf(r.model, grid)))

    out = str(args.out)
    csv_path = out[: out.rfind(".")] + ".csv" if "." in out else out + ".csv"
    with open(csv_path, "w") as fh:
        fh.write(",".join(["x"] + labels) + "\n")
        for j in range(grid.size):
            fh.write(",".join([repr(float(grid[j]))] + [repr(float(c[j])) for c in curves]) + "\n")

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "chanmix"
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.bar(
        pdf.midpoints,
        pdf.densities,
        width=pdf.widths,
        align="center",
        alpha=0.4,
        color="gray",
        label="empirical",
    )
    for label, curve in zip(labels, curves):
        ax.plot(grid, curve, label=label, linewidth=1.5)
    ax.set_xlabel("received power [mW]")
    ax.set_ylabel("density [1/mW]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, metadata={"Date": None} if out.endswith(".svg") else None)
    plt.close(fig)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "fit-em": cmd_fit_em,
    "fit-dpgmm": cmd_fit_dpgmm,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(f"usage: chanmix {{{','.join(_COMMANDS)}}} ...", file=sys.stderr)
        return EXIT_OK if argv else EXIT_USAGE
    name, rest = argv[0], argv[1:]
    command = _COMMANDS.get(name)
    if command is None:
        print(f"error: unknown subcommand {name!r}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return command(rest)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SamplerInitError as exc:
        print(f"sampler initialization error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER_INIT
    except (DataError, SchemaError, ComparisonError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
