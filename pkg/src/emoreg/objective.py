"""Agreement metrics and statistical tests.

The training objective is concordance-based: 1 - CCC, where CCC is Lin's
concordance correlation coefficient computed with population (1/n) moments
and a small stabilizer in the denominator.  Unlike Pearson correlation, CCC
penalizes scale and offset errors, so optimizing it pushes predictions onto
the identity line rather than just onto *some* line.

Multi-seed comparisons use Welch's unequal-variance t-test with
Holm-Bonferroni correction across each family of hypotheses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import stdtr

from . import tensor as tz
from .errors import DegenerateTestError, InsufficientDataError, NumericError, ShapeError
from .tensor import Tensor

CCC_EPS = 1e-8


def ccc(pred: np.ndarray, truth: np.ndarray) -> float:
    """Concordance correlation: 2*cov / (var_p + var_t + (mu_p - mu_t)^2)."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise ShapeError(f"ccc length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise InsufficientDataError("ccc of empty sequences")
    mp, mt = pred.mean(), truth.mean()
    dp, dt = pred - mp, truth - mt
    cov = float(np.mean(dp * dt))
    vp, vt = float(np.mean(dp * dp)), float(np.mean(dt * dt))
    return 2.0 * cov / (vp + vt + (mp - mt) ** 2 + CCC_EPS)


def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise ShapeError(f"rmse length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise InsufficientDataError("rmse of empty sequences")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def pearson(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise ShapeError(f"pearson length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size < 2:
        raise InsufficientDataError("pearson needs at least 2 points")
    dp, dt = pred - pred.mean(), truth - truth.mean()
    denom = math.sqrt(float(np.mean(dp * dp)) * float(np.mean(dt * dt)))
    if denom < 1e-300:
        raise NumericError("pearson undefined: an input has zero variance")
    return float(np.mean(dp * dt)) / denom


def ccc_loss(pred: Tensor, truth: np.ndarray) -> Tensor:
    """Differentiable 1 - CCC, averaged over leading (segment) axes.

    ``pred`` has shape [T] or [B, T]; ``truth`` matches.  The truth-side
    moments are constants, so only prediction statistics go on the tape.
    """
    truth = np.asarray(truth, dtype=np.float64)
    if pred.data.shape != truth.shape:
        raise ShapeError(
            f"loss shape mismatch: pred {pred.data.shape} vs truth {truth.shape}"
        )
    if truth.shape[-1] < 1:
        raise InsufficientDataError("loss over empty time axis")
    mt = truth.mean(axis=-1, keepdims=True)
    dt = truth - mt
    vt = (dt * dt).mean(axis=-1)

    mp = tz.tmean(pred, axis=-1, keepdims=True)
    dp = pred - mp
    cov = tz.tmean(dp * Tensor(dt), axis=-1)
    vp = tz.tmean(dp * dp, axis=-1)
    mean_gap = tz.reshape(mp, mp.data.shape[:-1]) - Tensor(mt.reshape(mt.shape[:-1]))
    denom = vp + Tensor(vt) + mean_gap * mean_gap + Tensor(np.float64(CCC_EPS))
    ccc_per = (Tensor(np.float64(2.0)) * cov) / denom
    return Tensor(np.float64(1.0)) - tz.tmean(ccc_per)


@dataclass
class MetricValue:
    """A metric across seeds: kept as raw values plus mean/std for reporting."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def std(self) -> float:
        # Sample std (ddof=1); a single value reports spread 0.
        if self.values.size < 2:
            return 0.0
        return float(self.values.std(ddof=1))

    def __str__(self):
        return f"{self.mean:.4f} ({self.std:.4f})"


@dataclass
class StatTestResult:
    statistic: float
    dof: float
    p_value: float
    alternative: str

    def significant(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha


def welch_t_test(a, b, alternative: str = "two-sided") -> StatTestResult:
    """Welch's unequal-variance t-test of mean(a) against mean(b).

    ``alternative`` is "two-sided", "less" (H1: mean a < mean b) or "greater"
    (H1: mean a > mean b).  Uses the Welch-Satterthwaite degrees of freedom
    and the Student-t CDF for the p-value.
    """
    if alternative not in ("two-sided", "less", "greater"):
        raise ValueError(f"unknown alternative {alternative!r}")
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise InsufficientDataError(
            f"welch t-test needs >= 2 observations per group, got {na} and {nb}"
        )
    va, vb = a.var(ddof=1), b.var(ddof=1)
    sa, sb = va / na, vb / nb
    gap = a.mean() - b.mean()
    if sa + sb == 0.0:
        # Zero spread in both groups: identical means carry no evidence
        # either way; distinct means are unambiguous at any level.
        if gap == 0.0:
            raise DegenerateTestError(
                "welch t-test degenerate: both groups constant and equal"
            )
        t = math.inf if gap > 0 else -math.inf
        dof = float(na + nb - 2)
    else:
        t = gap / math.sqrt(sa + sb)
        dof = (sa + sb) ** 2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
    cdf = float(stdtr(dof, t)) if math.isfinite(t) else (1.0 if t > 0 else 0.0)
    if alternative == "less":
        p = cdf
    elif alternative == "greater":
        p = 1.0 - cdf
    else:
        p = 2.0 * min(cdf, 1.0 - cdf)
    return StatTestResult(float(t), float(dof), float(p), alternative)


def holm_bonferroni(p_values, alpha: float = 0.05):
    """Holm's step-down multiple-comparison procedure.

    Returns ``(reject, adjusted)`` in the original order: ``reject[i]`` is the
    decision for hypothesis i at family level ``alpha`` and ``adjusted[i]`` is
    its Holm-adjusted p-value (monotone, clipped to 1).
    """
    p = np.asarray(p_values, dtype=np.float64).reshape(-1)
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    if np.any((p < 0) | (p > 1)) or not np.isfinite(p).all():
        raise ValueError("p-values must lie in [0, 1]")
    order = np.argsort(p, kind="stable")
    # Adjusted p is the running max of (m - rank) * p over increasing rank,
    # clipped to 1; clipping commutes with the running max.
    adjusted_sorted = np.maximum.accumulate(
        np.minimum((m - np.arange(m)) * p[order], 1.0)
    )
    adjusted = np.empty(m)
    adjusted[order] = adjusted_sorted
    reject_sorted = np.zeros(m, dtype=bool)
    for i in range(m):
        if (m - i) * p[order[i]] <= alpha:
            reject_sorted[i] = True
        else:
            break
    reject = np.zeros(m, dtype=bool)
    reject[order] = reject_sorted
    return reject, adjusted
