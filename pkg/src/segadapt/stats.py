"""Paired two-sided t-test without a statistics dependency.

The Student-t CDF is evaluated through the regularized incomplete beta
function I_x(a, b), computed with a modified Lentz continued fraction.
Series cutoffs: at most 200 iterations, convergence tolerance 3e-14,
divisor floor 1e-300.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError

_MAX_ITER = 200
_EPS = 3e-14
_FPMIN = 1e-300


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ValidationError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValidationError(f"incomplete beta requires positive a, b (got {a}, {b})")
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"incomplete beta requires x in [0, 1] (got {x})")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    front = math.exp(
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, dof: int) -> float:
    """P(|T| >= |t|) for T ~ Student-t with ``dof`` degrees of freedom."""
    if dof < 1:
        raise ValidationError(f"degrees of freedom must be >= 1, got {dof}")
    if math.isinf(t):
        return 0.0
    x = dof / (dof + t * t)
    return regularized_incomplete_beta(x, dof / 2.0, 0.5)


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    p_value: float
    dof: int
    degenerate: bool = False


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on matched score lists.

    Degenerate branches: zero-variance differences with nonzero mean give
    p = 0 (flagged); all-equal pairs give t = 0, p = 1 (flagged).
    """
    xs = np.asarray(a, dtype=np.float64)
    ys = np.asarray(b, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValidationError(f"paired samples must be equal-length 1-d, got {xs.shape} vs {ys.shape}")
    n = xs.size
    if n < 2:
        raise ValidationError(f"paired t-test needs at least 2 pairs, got {n}")
    diffs = xs - ys
    mean = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    dof = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(statistic=0.0, p_value=1.0, dof=dof, degenerate=True)
        return TTestResult(
            statistic=math.copysign(math.inf, mean), p_value=0.0, dof=dof, degenerate=True
        )
    t = mean * math.sqrt(n) / sd
    return TTestResult(statistic=t, p_value=student_t_two_sided_p(t, dof), dof=dof)
