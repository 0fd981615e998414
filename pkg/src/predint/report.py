"""Console and JSON renderings of interval results."""

from __future__ import annotations

import json
import math

from .heterogeneity import HeterogeneityEstimate
from .intervals import IntervalResult

_TAU2_NAMES = {"DL": "DerSimonian-Laird", "REML": "REML", "UDL": "untruncated DerSimonian-Laird"}
_VAR_NAMES = {
    "APX": "approximate",
    "HK": "Hartung (Hartung-Knapp)",
    "SJ": "Sidik-Jonkman bias-corrected",
    "KR": "Kenward-Roger",
}
_PI_TITLES = {
    "boot": "A parametric bootstrap prediction and confidence intervals",
    "HTS": "Higgins-Thompson-Spiegelhalter prediction and confidence intervals",
}


def _num(x: float, digits: int = 4) -> str:
    s = f"{x:.{digits}f}"
    # avoid printing "-0.0000"
    return s[1:] if s.startswith("-") and float(s) == 0 else s


def _df(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return f"{x:.4f}"


def _level(alpha: float) -> str:
    return f"{100 * (1 - alpha):g}"


def render_text(r: IntervalResult) -> str:
    has_pi = r.lpi is not None
    lines = [
        ("Prediction & Confidence Intervals" if has_pi else "Confidence Intervals")
        + " for Random-Effects Meta-Analysis",
        "",
    ]
    if has_pi:
        lines.append(_PI_TITLES.get(r.method, "Partlett-Riley prediction and confidence intervals"))
    elif r.method == "boot":
        lines.append("A parametric bootstrap confidence interval")
    else:
        lines.append("A Wald-type t-distribution confidence interval")
    lines += [
        f"Heterogeneity variance: {_TAU2_NAMES.get(r.tau2_method, r.tau2_method)}",
        f"Variance for average treatment effect: {_VAR_NAMES.get(r.var_method, r.var_method)}",
        "",
        f"No. of studies: {r.k}",
        "",
    ]
    level = _level(r.alpha)
    if has_pi:
        lines += [
            f"Average treatment effect [{level}%PI]:",
            f"{_num(r.muhat)} [{_num(r.lpi)}, {_num(r.upi)}]",
            f"d.f.: {_df(r.nup)}",
            "",
        ]
    lines += [
        f"Average treatment effect [{level}%CI]:",
        f"{_num(r.muhat)} [{_num(r.lci)}, {_num(r.uci)}]",
        f"d.f.: {_df(r.nuc)}",
        "",
        "Heterogeneity measure",
        f"tau-squared: {_num(r.tau2h)}",
        f"I-squared: {r.i2h:5.1f}%",
    ]
    if not r.converged:
        lines.append("(REML did not converge)")
    return "\n".join(lines) + "\n"


def result_dict(r: IntervalResult) -> dict:
    d = r.to_dict()
    seed = d.pop("seed")
    d["B"] = d.pop("b_used")
    d["seed"] = seed
    return d


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    return obj


def render_json(obj: dict) -> str:
    return json.dumps(_clean(obj), indent=2) + "\n"


def tau2_dict(est: HeterogeneityEstimate, k: int, i2: float | None) -> dict:
    return {
        "K": k,
        "method": est.method,
        "tau2h": est.tau2,
        "i2h": i2,
        "Q": est.q_obs,
        "iterations": est.iterations,
        "converged": est.converged,
    }


def render_tau2_text(d: dict) -> str:
    lines = [
        "Heterogeneity variance estimate",
        "",
        f"Method: {_TAU2_NAMES.get(d['method'], d['method'])}",
        f"No. of studies: {d['K']}",
        f"Q statistic: {_num(d['Q'])}",
        f"tau-squared: {_num(d['tau2h'])}",
    ]
    if d["i2h"] is not None:
        lines.append(f"I-squared: {d['i2h']:5.1f}%")
    if d["method"] == "REML":
        lines.append(f"Iterations: {d['iterations']}" + ("" if d["converged"] else " (not converged)"))
    return "\n".join(lines) + "\n"
