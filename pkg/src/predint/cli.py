"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical error.
Warnings go to stderr and never change the exit code.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__, qform
from .conversion import EFFECT_TYPES, BinaryStudySet, convert_bin, effect_sizes
from .errors import DataError, DomainError, MetaAnalysisError, NumericalError
from .forest import forest_svg
from .heterogeneity import HeterogeneityEstimate, q_statistic, tau2_dl, tau2_reml, tau2_udl
from .intervals import CI_VARIANTS, PR_VARIANTS, BootstrapConfig, confidence_interval, interval
from .io import DATASETS, load_dataset, parse_csv, studies_to_csv
from .model import StudySet, i_squared
from .report import render_json, render_tau2_text, render_text, result_dict, tau2_dict

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

PI_METHODS = ("boot", "HTS") + PR_VARIANTS
CI_METHODS = ("boot",) + CI_VARIANTS
TAU2_METHODS = ("DL", "UDL", "REML")
METHODS = {"pi": PI_METHODS, "ci": CI_METHODS, "tau2": TAU2_METHODS, "plot": PI_METHODS, "convert": ()}


@dataclass
class RunSpec:
    command: str
    data: str | None = None
    input: str | None = None
    method: str | None = None
    alpha: float = 0.05
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    format: str = "text"
    output: str | None = None
    maxiter: int = 100
    type: str = "logOR"
    digits: int = 2

    def __post_init__(self):
        if self.command not in METHODS:
            raise DomainError(f"unknown command {self.command!r}")
        allowed = METHODS[self.command]
        if self.method is None and allowed:
            self.method = allowed[0]
        if allowed and self.method not in allowed:
            raise DomainError(f"method {self.method!r} is not valid for {self.command}; choose from {allowed}")
        if (self.data is None) == (self.input is None):
            raise DomainError("give exactly one of --data or --input")


def _studies(spec: RunSpec) -> StudySet | BinaryStudySet:
    return load_dataset(spec.data) if spec.data else parse_csv(spec.input)


def _as_studies(obj, effect_type: str) -> StudySet:
    return convert_bin(obj, effect_type) if isinstance(obj, BinaryStudySet) else obj


def execute(spec: RunSpec) -> str:
    """Run one command and return the rendered report."""
    raw = _studies(spec)
    if spec.command == "convert":
        if not isinstance(raw, BinaryStudySet):
            raise DataError("convert needs binary data with columns m1, n1, m2, n2")
        if spec.format == "json":
            y, var = effect_sizes(raw, spec.type)
            labels = list(raw.labels) if raw.labels else None
            return render_json({"type": spec.type, "y": y.tolist(), "se": (var**0.5).tolist(), "label": labels})
        return studies_to_csv(convert_bin(raw, spec.type))

    s = _as_studies(raw, spec.type)
    if spec.command == "tau2":
        if spec.method == "DL":
            est = tau2_dl(s)
        elif spec.method == "REML":
            est = tau2_reml(s, maxiter=spec.maxiter)
        else:
            qs = q_statistic(s)
            est = HeterogeneityEstimate(tau2_udl(s), "UDL", qs.q, qs.s1, qs.s2, qs.s3)
        i2 = i_squared(s, est.tau2) if est.tau2 >= 0 else None
        d = tau2_dict(est, s.k, i2)
        return render_json(d) if spec.format == "json" else render_tau2_text(d)

    if spec.command == "ci":
        r = confidence_interval(s, spec.method, spec.alpha, spec.bootstrap, spec.maxiter)
    else:
        r = interval(s, spec.method, spec.alpha, spec.bootstrap, spec.maxiter)
    if spec.command == "plot" or spec.format == "svg":
        return forest_svg(s, r, digits=spec.digits)
    return render_json(result_dict(r)) if spec.format == "json" else render_text(r)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="predint",
        description="Prediction and confidence intervals for random-effects meta-analysis.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, methods=None, default=None):
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--data", choices=DATASETS, help="bundled dataset")
        src.add_argument("--input", metavar="CSV", help="CSV with y,se|v[,label] or m1,n1,m2,n2[,label]")
        if methods:
            p.add_argument("--method", choices=methods, default=default or methods[0])
        p.add_argument("--type", choices=EFFECT_TYPES, default="logOR", help="effect measure for binary data")
        p.add_argument("--output", "-o", metavar="PATH", help="write the report here instead of stdout")

    def add_interval_opts(p):
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--maxiter", type=int, default=100, help="max REML iterations")
        g = p.add_argument_group("bootstrap")
        g.add_argument("--B", dest="b", type=int, default=25000, help="bootstrap samples")
        g.add_argument("--seed", type=int)
        g.add_argument("--threads", "--parallel", dest="threads", type=int, default=1)
        g.add_argument("--maxit1", type=int, default=qform.MAXIT1)
        g.add_argument("--eps", type=float, default=qform.EPS)
        g.add_argument("--lower", type=float, default=qform.LOWER)
        g.add_argument("--upper", type=float, default=qform.UPPER)
        g.add_argument("--maxit2", type=int, default=qform.MAXIT2)
        g.add_argument("--tol", type=float, default=qform.TOL)
        g.add_argument("--rnd", metavar="FILE", help="precomputed tau^2 draws, one per line")

    p = sub.add_parser("pi", help="prediction interval")
    add_common(p, PI_METHODS)
    add_interval_opts(p)
    p.add_argument("--format", choices=("text", "json", "svg"), default="text")

    p = sub.add_parser("ci", help="confidence interval for the mean")
    add_common(p, CI_METHODS)
    add_interval_opts(p)
    p.add_argument("--format", choices=("text", "json"), default="text")

    p = sub.add_parser("tau2", help="heterogeneity variance")
    add_common(p, TAU2_METHODS)
    p.add_argument("--maxiter", type=int, default=100)
    p.add_argument("--format", choices=("text", "json"), default="text")

    p = sub.add_parser("convert", help="binary 2x2 data to effect sizes")
    add_common(p)
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("plot", help="forest plot (SVG)")
    add_common(p, PI_METHODS)
    add_interval_opts(p)
    p.add_argument("--digits", type=int, default=2)
    return parser


def _read_rnd(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        return [float(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise DataError(f"{path}: rnd file must contain numbers only") from None


def spec_from_args(ns: argparse.Namespace) -> RunSpec:
    kwargs = dict(
        command=ns.command, data=ns.data, input=ns.input, method=getattr(ns, "method", None),
        type=ns.type, output=ns.output, format=getattr(ns, "format", "text"),
    )
    if ns.command in ("pi", "ci", "plot"):
        rnd = _read_rnd(ns.rnd) if ns.rnd else None
        kwargs.update(
            alpha=ns.alpha,
            maxiter=ns.maxiter,
            bootstrap=BootstrapConfig(
                b=ns.b, seed=ns.seed, threads=ns.threads, maxit1=ns.maxit1, eps=ns.eps,
                lower=ns.lower, upper=ns.upper, maxit2=ns.maxit2, tol=ns.tol, rnd=rnd,
            ),
        )
    if ns.command == "tau2":
        kwargs["maxiter"] = ns.maxiter
    if ns.command == "plot":
        kwargs.update(digits=ns.digits, format="svg")
    return RunSpec(**kwargs)


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_DATA


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    as_json = getattr(ns, "format", None) == "json"
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            spec = spec_from_args(ns)
            text = execute(spec)
            if spec.output:
                Path(spec.output).write_text(text, encoding="utf-8")
            else:
                stdout.write(text)
            code = EXIT_OK
        except (MetaAnalysisError, OSError) as exc:
            code = _exit_code(exc)
            kind = exc.code if isinstance(exc, MetaAnalysisError) else "io_error"
            if as_json:
                stdout.write(json.dumps({"error": {"code": kind, "exit": code, "message": str(exc)}}) + "\n")
            stderr.write(f"predint: error: {exc}\n")
    for w in caught:
        stderr.write(f"predint: warning: {w.message}\n")
    return code


def main() -> None:  # pragma: no cover
    sys.exit(run())
