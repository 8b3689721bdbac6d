"""Posterior families and their KL divergences to the matching prior.

* :class:`GibbsPosterior` over a finite hypothesis space, the closed-form
  minimizer of ``L_hat(Q) + (lambda l_max / N) KL(Q, P)``.
* :class:`GaussianShiftPosterior`, ``N(theta, I)`` against the prior ``N(0, I)``.
* :class:`DropoutPosterior`, draws ``s * (theta + eps)`` with each mask bit
  zero with probability ``alpha``, against the same construction at
  ``theta = 0``.

The dropout prior mixes point masses and Gaussians; its KL is taken to be
the expected Gaussian log-density ratio on the unmasked coordinates, which
gives ``(1 - alpha)/2 * ||theta||^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .bounds import BoundReport, _pac_bayes_form
from .hypotheses import BoundedLoss, FiniteHypothesisSpace, SampleSet, empirical_loss

__all__ = [
    "GibbsPosterior",
    "GaussianShiftPosterior",
    "DropoutPosterior",
    "SparsityPattern",
    "gibbs_log_weights",
    "gibbs_weights",
    "kl_discrete",
    "gibbs_objective",
    "gaussian_kl",
    "dropout_kl",
    "mc_log_ratio_kl",
    "sample_gaussian",
    "sample_dropout",
    "select_lambda",
    "posterior_to_dict",
    "posterior_from_dict",
]


@dataclass(frozen=True, eq=False)
class GibbsPosterior:
    space: FiniteHypothesisSpace
    lam: float
    l_max: float
    log_weights: np.ndarray
    n: int
    l_hat: np.ndarray = field(repr=False)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def empirical_loss(self) -> float:
        """``L_hat(Q)`` on the sample the posterior was built from."""
        return float(np.dot(self.weights, self.l_hat))


@dataclass(frozen=True)
class GaussianShiftPosterior:
    theta: np.ndarray

    def __post_init__(self):
        t = np.array(self.theta, dtype=float).ravel()
        if t.size < 1 or not np.all(np.isfinite(t)):
            raise ValueError("theta must be a nonempty finite vector")
        object.__setattr__(self, "theta", t)

    @property
    def d(self) -> int:
        return self.theta.size


@dataclass(frozen=True)
class DropoutPosterior:
    alpha: float
    theta: np.ndarray

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"dropout rate {self.alpha!r} outside [0, 1]")
        t = np.array(self.theta, dtype=float).ravel()
        if t.size < 1 or not np.all(np.isfinite(t)):
            raise ValueError("theta must be a nonempty finite vector")
        object.__setattr__(self, "theta", t)

    @property
    def d(self) -> int:
        return self.theta.size


@dataclass(frozen=True)
class SparsityPattern:
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if not np.all((b == 0) | (b == 1)):
            raise ValueError("sparsity pattern entries must be 0 or 1")
        object.__setattr__(self, "bits", b.astype(np.int8))


# -- Gibbs posterior -----------------------------------------------------------


def gibbs_log_weights(prior, l_hat, n, lam, l_max=1.0) -> np.ndarray:
    """Normalized log weights ``ln P(h) - n L_hat(h)/(lambda l_max) - ln Z``.

    ``l_hat`` may be a matrix of shape (..., H) to build many posteriors at once.
    """
    if not (lam > 0):
        raise ValueError(f"lambda must be positive, got {lam!r}")
    with np.errstate(divide="ignore"):
        log_prior = np.log(np.asarray(prior, dtype=float))
    if not np.any(np.isfinite(log_prior)):
        raise ValueError("prior has empty support")
    energy = log_prior - n * np.asarray(l_hat, dtype=float) / (lam * l_max)
    return energy - logsumexp(energy, axis=-1, keepdims=True)


def _sample_losses(space: FiniteHypothesisSpace, sample: SampleSet, loss: BoundedLoss) -> np.ndarray:
    return np.array([empirical_loss(loss, h, sample) for h in range(len(space))])


def gibbs_weights(space: FiniteHypothesisSpace, sample: SampleSet, loss: BoundedLoss,
                  lam: float) -> GibbsPosterior:
    """The Gibbs posterior ``Q_lambda(h) ∝ P(h) exp(-N L_hat(h) / (lambda l_max))``."""
    l_hat = _sample_losses(space, sample, loss)
    lw = gibbs_log_weights(space.prior, l_hat, sample.n, lam, loss.l_max)
    lw.setflags(write=False)
    return GibbsPosterior(space, float(lam), loss.l_max, lw, sample.n, l_hat)


def kl_discrete(q, p) -> float:
    """``sum q ln(q/p)`` with ``0 ln 0 = 0``; +inf if q charges a p-null point."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != p.shape:
        raise ValueError("q and p have different shapes")
    pos = q > 0
    if np.any(p[pos] == 0):
        return math.inf
    return float(max(np.sum(q[pos] * (np.log(q[pos]) - np.log(p[pos]))), 0.0))


def kl_discrete_rows(q, p) -> np.ndarray:
    """Row-wise :func:`kl_discrete` for a stack of distributions ``q`` (..., H)."""
    q = np.asarray(q, dtype=float)
    p = np.broadcast_to(np.asarray(p, dtype=float), q.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * (np.log(q) - np.log(p)), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


def gibbs_objective(posterior, sample: SampleSet | None = None, loss: BoundedLoss | None = None,
                    weights=None) -> float:
    """``L_hat(Q) + (lambda l_max / N) KL(Q, P)`` for Q = ``weights`` (default the posterior)."""
    q = posterior.weights if weights is None else np.asarray(weights, dtype=float)
    l_hat = posterior.l_hat if sample is None else _sample_losses(posterior.space, sample, loss)
    n = posterior.n if sample is None else sample.n
    return float(np.dot(q, l_hat)) + posterior.lam * posterior.l_max / n * kl_discrete(
        q, posterior.space.prior
    )


def select_lambda(grid, sample: SampleSet, space: FiniteHypothesisSpace, loss: BoundedLoss,
                  delta: float) -> tuple[float, GibbsPosterior, BoundReport]:
    """Pick the grid lambda whose Gibbs posterior has the smallest certified bound.

    Every candidate is charged the ``ln(k/delta)`` union penalty, so the returned
    report is valid for the selected posterior.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("lambda grid is empty")
    if any(not g > 0.5 for g in grid):
        raise ValueError("every grid lambda must exceed 1/2")
    if not (0 < delta <= 1):
        raise ValueError("delta must lie in (0, 1]")
    k = len(grid)
    best = None
    for lam in grid:
        q = gibbs_weights(space, sample, loss, lam)
        l_q = q.empirical_loss()
        c = kl_discrete(q.weights, space.prior) + math.log(k / delta)
        v = _pac_bayes_form(l_q, c, lam, sample.n, loss.l_max)
        if best is None or v < best[0]:
            best = (v, lam, q, l_q, c)
    v, lam, q, l_q, c = best
    report = BoundReport("pac_bayes_grid", v, l_q, c, lam, float(delta), sample.n, loss.l_max,
                         {"grid": grid})
    return lam, q, report


# -- continuous posteriors -------------------------------------------------------


def _theta_of(x) -> np.ndarray:
    if isinstance(x, (GaussianShiftPosterior, DropoutPosterior)):
        return x.theta
    return np.asarray(x, dtype=float)


def gaussian_kl(theta) -> float:
    """``KL(N(theta, I), N(0, I)) = ||theta||^2 / 2``."""
    t = _theta_of(theta)
    return 0.5 * float(np.dot(t, t))


def dropout_kl(posterior: DropoutPosterior) -> float:
    """``(1 - alpha)/2 * ||theta||^2``."""
    return (1.0 - posterior.alpha) * gaussian_kl(posterior.theta)


def sample_gaussian(posterior: GaussianShiftPosterior, rng: np.random.Generator, size=None):
    """``theta + eps`` with eps standard normal; ``size`` draws stacked on axis 0."""
    shape = (posterior.d,) if size is None else (size, posterior.d)
    return posterior.theta + rng.standard_normal(shape)


def sample_dropout(posterior: DropoutPosterior, rng: np.random.Generator, size=None):
    """(mask, ``mask * (theta + eps)``) with mask bits zero w.p. alpha.

    Noise is drawn before the mask so that at ``alpha = 0`` the vector equals
    :func:`sample_gaussian` output for the same generator state.
    """
    shape = (posterior.d,) if size is None else (size, posterior.d)
    eps = rng.standard_normal(shape)
    mask = (rng.random(shape) >= posterior.alpha).astype(np.int8)
    w = mask * (posterior.theta + eps)
    if size is None:
        return SparsityPattern(mask), w
    return mask, w


def mc_log_ratio_kl(posterior, n_draws: int, rng: np.random.Generator, chunk: int = 200_000):
    """Monte-Carlo KL estimate (mean, standard error) from log-density ratios.

    Gaussian: average of ``ln q(w)/p(w)`` at ``w = theta + eps``. Dropout:
    average of ``||s*(theta+eps)||^2/2 - ||s*eps||^2/2`` over (s, eps) draws.
    """
    theta = posterior.theta
    alpha = posterior.alpha if isinstance(posterior, DropoutPosterior) else 0.0
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        eps = rng.standard_normal((m, theta.size))
        if isinstance(posterior, DropoutPosterior):
            s = rng.random((m, theta.size)) >= alpha
            w = s * (theta + eps)
            vals = 0.5 * np.sum(w * w, axis=1) - 0.5 * np.sum((s * eps) ** 2, axis=1)
        else:
            w = theta + eps
            # -||w - theta||^2/2 + ||w||^2/2
            vals = 0.5 * np.sum(w * w, axis=1) - 0.5 * np.sum(eps * eps, axis=1)
        total += vals.sum()
        total_sq += np.dot(vals, vals)
        done += m
    mean = total / n_draws
    var = max(total_sq / n_draws - mean * mean, 0.0) * n_draws / (n_draws - 1)
    return mean, math.sqrt(var / n_draws)


# -- serialization ---------------------------------------------------------------


def posterior_to_dict(posterior, **provenance) -> dict:
    """Structured form with a ``kind`` tag; provenance keys are stored verbatim."""
    if isinstance(posterior, GibbsPosterior):
        d = {
            "kind": "gibbs",
            "lambda": posterior.lam,
            "l_max": posterior.l_max,
            "n": posterior.n,
            "hypotheses": list(posterior.space.ids),
            "prior": posterior.space.prior.tolist(),
            "log_weights": posterior.log_weights.tolist(),
            "l_hat": posterior.l_hat.tolist(),
        }
    elif isinstance(posterior, DropoutPosterior):
        d = {"kind": "dropout", "alpha": posterior.alpha, "theta": posterior.theta.tolist()}
    elif isinstance(posterior, GaussianShiftPosterior):
        d = {"kind": "gaussian", "theta": posterior.theta.tolist()}
    else:
        raise TypeError(f"cannot serialize {type(posterior).__name__}")
    d["provenance"] = dict(provenance)
    return d


def posterior_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "gibbs":
        space = FiniteHypothesisSpace(np.asarray(d["prior"]), tuple(d["hypotheses"]))
        return GibbsPosterior(space, float(d["lambda"]), float(d["l_max"]),
                              np.asarray(d["log_weights"], dtype=float), int(d["n"]),
                              np.asarray(d["l_hat"], dtype=float))
    if kind == "dropout":
        return DropoutPosterior(float(d["alpha"]), np.asarray(d["theta"]))
    if kind == "gaussian":
        return GaussianShiftPosterior(np.asarray(d["theta"]))
    raise ValueError(f"unknown posterior kind {kind!r}")
