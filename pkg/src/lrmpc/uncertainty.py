"""Epistemic (Jensen-Renyi) and aleatoric (Gaussian CVaR) filters over
ensemble predictions, followed by minimum-risk selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from lrmpc.penn import EnsemblePrediction, GaussianPrediction

log = logging.getLogger(__name__)

# Acklam's rational approximation to the inverse normal CDF (|rel err| < 1.15e-9),
# followed by one Halley step against erfc which brings it to machine precision.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def norm_ppf(p: float) -> float:
    """Standard normal quantile."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile level must be in (0, 1), got {p}")
    if p > 0.5:
        # 1 - p is exact here, and the lower tail keeps the refinement accurate
        return -norm_ppf(1.0 - p)
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    else:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


def norm_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class FilterThresholds:
    epistemic_max: float = 1.0
    risk_tolerance: float = 0.1
    cvar_bound: float = 70.0  # label units; 0.7 of the normalized risk range

    def __post_init__(self):
        if not 0.0 < self.risk_tolerance <= 0.5:
            raise ValueError("risk_tolerance must be in (0, 0.5]")
        if self.epistemic_max <= 0:
            raise ValueError("epistemic_max must be positive")


def pairwise_term(a: GaussianPrediction, b: GaussianPrediction) -> float:
    s = a.variance + b.variance
    d = a.mean - b.mean
    return math.exp(-0.5 * d * d / s) / math.sqrt(s)


def epistemic_jrd_raw(pred: EnsemblePrediction) -> float:
    """Jensen-Renyi divergence of the uniform member mixture, unclamped.

    Computed in log space so very confident members (tiny variances) do not
    underflow the pairwise terms. With unequal member variances the
    quadratic-entropy form can dip slightly below zero.
    """
    m = len(pred.members)
    if m < 2:
        raise ValueError("epistemic_jrd needs at least two members")
    mu = np.array([g.mean for g in pred.members])
    var = np.array([g.variance for g in pred.members])
    s = var[:, None] + var[None, :]
    log_d = -0.5 * (mu[:, None] - mu[None, :]) ** 2 / s - 0.5 * np.log(s)
    top = log_d.max()
    log_mean = top + math.log(np.exp(log_d - top).sum()) - 2.0 * math.log(m)
    return float(-log_mean + np.mean(np.diag(log_d)))


def epistemic_jrd(pred: EnsemblePrediction) -> float:
    """Epistemic score: the divergence clamped at zero (negative values are logged)."""
    e = epistemic_jrd_raw(pred)
    if e < 0.0:
        log.debug("negative divergence %.3e clamped to 0 for %s", e, pred.members)
        return 0.0
    return e


def var_gaussian(g: GaussianPrediction, eps: float) -> float:
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must be in (0, 1)")
    return g.mean + math.sqrt(g.variance) * norm_ppf(1.0 - eps)


def cvar_gaussian(g: GaussianPrediction, eps: float) -> float:
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must be in (0, 1)")
    return g.mean + math.sqrt(g.variance) * norm_pdf(norm_ppf(1.0 - eps)) / eps


@dataclass
class CandidateScore:
    epistemic: float
    var: list[float]
    cvar: list[float]
    sup_cvar: float
    mixture_mean: float
    passed_epistemic: bool
    passed_aleatoric: bool

    @property
    def passed(self) -> bool:
        return self.passed_epistemic and self.passed_aleatoric


@dataclass
class FilterReport:
    scores: list[CandidateScore] = field(default_factory=list)
    selected: int | None = None

    def to_dict(self) -> dict:
        return {
            "selected": self.selected,
            "scores": [
                {
                    "epistemic": s.epistemic,
                    "var": s.var,
                    "cvar": s.cvar,
                    "sup_cvar": s.sup_cvar,
                    "mixture_mean": s.mixture_mean,
                    "eu_pass": s.passed_epistemic,
                    "au_pass": s.passed_aleatoric,
                }
                for s in self.scores
            ],
        }


def filter_candidates(cands, preds, th: FilterThresholds = FilterThresholds(), goal=None) -> FilterReport:
    """Drop out-of-distribution candidates, then those whose worst-member CVaR
    exceeds the bound; pick the lowest mixture mean among the rest.

    Ties go to the candidate nearer ``goal`` (when given), then lower index.
    """
    if len(cands) != len(preds):
        raise ValueError(f"{len(cands)} candidates but {len(preds)} predictions")
    report = FilterReport()
    for pred in preds:
        e = epistemic_jrd(pred)
        vs = [var_gaussian(g, th.risk_tolerance) for g in pred.members]
        cs = [cvar_gaussian(g, th.risk_tolerance) for g in pred.members]
        eu_ok = e <= th.epistemic_max
        au_ok = max(cs) <= th.cvar_bound
        report.scores.append(CandidateScore(e, vs, cs, max(cs), pred.mixture_mean, eu_ok, au_ok))
    best = None
    for i, (c, s) in enumerate(zip(cands, report.scores)):
        if not s.passed:
            continue
        gd = float(np.linalg.norm(np.asarray(goal) - c.position)) if goal is not None else 0.0
        key = (s.mixture_mean, gd, i)
        if best is None or key < best:
            best = key
    report.selected = None if best is None else best[2]
    return report
