"""Scalar divergence kernels and the bound-inversion lemma.

Argument order throughout is ``(q, p)`` with ``q`` the empirical rate and
``p`` the true rate. The inversion lemma as usually stated writes
``D_{-1/lambda}(p, q)``, but its derivation manipulates
``q*gamma - ln(1 - p + p*e^gamma)``, i.e. ``d_gamma(q, p)``; we follow the
derivation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

__all__ = [
    "ProbPair",
    "LambdaParam",
    "bernoulli_kl",
    "d_gamma",
    "kl_maximizing_gamma",
    "invert_bound",
    "std_normal_tail",
]


@dataclass(frozen=True)
class ProbPair:
    """An (empirical rate, true rate) pair, both in [0, 1]."""

    q: float
    p: float

    def __post_init__(self):
        for name in ("q", "p"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v!r} outside [0, 1]")


@dataclass(frozen=True)
class LambdaParam:
    """Trade-off parameter lambda > 1/2 with its derived gamma = -1/lambda."""

    lam: float
    gamma: float = field(init=False)

    def __post_init__(self):
        if not (self.lam > 0.5) or not math.isfinite(self.lam):
            raise ValueError(f"lambda must be a finite value > 1/2, got {self.lam!r}")
        object.__setattr__(self, "gamma", -1.0 / self.lam)


def _lambda_values(lam):
    if isinstance(lam, LambdaParam):
        return lam.lam
    arr = np.asarray(lam, dtype=float)
    if arr.ndim == 0:
        return LambdaParam(float(arr)).lam
    if not np.all(np.isfinite(arr) & (arr > 0.5)):
        raise ValueError("lambda must be a finite value > 1/2")
    return arr


def _xlogy_ratio(a, b):
    # a * ln(a / b) with 0 ln 0 = 0 and a ln(a / 0) = +inf for a > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = special.xlogy(a, a) - special.xlogy(a, b)
    return np.where(a == 0, 0.0, np.where(b == 0, np.inf, out))


def bernoulli_kl(q, p=None):
    """KL divergence from Bernoulli(q) to Bernoulli(p), in nats.

    Works elementwise on arrays. Conventions ``0 ln 0 = 0`` and
    ``q ln(q/0) = +inf`` make the function total on [0, 1]^2.
    """
    if isinstance(q, ProbPair):
        q, p = q.q, q.p
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    out = _xlogy_ratio(q, p) + _xlogy_ratio(1.0 - q, 1.0 - p)
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def d_gamma(q, p, gamma=None):
    """``gamma*q - ln(1 - p + p*e^gamma)``, the linearised Bernoulli divergence.

    Its supremum over gamma is :func:`bernoulli_kl`. Elementwise on arrays.
    """
    if isinstance(q, ProbPair):
        # d_gamma(pair, gamma)
        q, p, gamma = q.q, q.p, p
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    # ln(1 - p + p e^g) = ln1p(p * expm1(g)), stable for small g and large negative g
    out = gamma * q - np.log1p(p * np.expm1(gamma))
    return float(out) if out.ndim == 0 else out


def kl_maximizing_gamma(q: float, p: float) -> float:
    """The gamma attaining ``sup_gamma d_gamma(q, p, gamma)`` for interior q, p."""
    if not (0.0 < q < 1.0 and 0.0 < p < 1.0):
        raise ValueError("maximizer is finite only for q, p in (0, 1)")
    return math.log(q * (1.0 - p) / (p * (1.0 - q)))


def invert_bound(q_hat: float, c: float, lam) -> float:
    """Upper bound on any p with ``d_gamma(q_hat, p, -1/lambda) <= c``.

    Returns ``(q_hat + lambda*c) / (1 - 1/(2*lambda))``. Requires lambda > 1/2.
    Elementwise on arrays.
    """
    lam = _lambda_values(lam)
    if np.any(np.asarray(c) < 0):
        raise ValueError("c must be nonnegative")
    out = (np.asarray(q_hat, dtype=float) + lam * np.asarray(c, dtype=float)) / (
        1.0 - 1.0 / (2.0 * lam))
    return float(out) if np.ndim(out) == 0 else out


def std_normal_tail(m):
    """P(eps > m) for a standard normal eps, via the complementary error function."""
    m = np.asarray(m, dtype=float)
    out = 0.5 * special.erfc(m / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out
