"""Generalization-bound calculators.

Each calculator is a pure formula evaluator returning a :class:`BoundReport`
that keeps the pieces of the bound (empirical term, complexity in nats,
lambda, delta, N, L_max) so that the value can be recombined and looseness
attributed. Statistical side conditions, such as lambda being fixed before
the sample is drawn or the empirical variance being exactly zero, are the
caller's responsibility; :mod:`pacbayes.simulation` checks them empirically.

Values are never clipped to ``l_max``; a bound above ``l_max`` is flagged
``vacuous`` instead.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = [
    "KINDS",
    "CSV_COLUMNS",
    "BoundReport",
    "occam_values",
    "occam_bound",
    "pac_bayes_value",
    "pac_bayes_bound",
    "pac_bayes_grid",
    "l2_bound",
    "dropout_bound",
    "train_var_bound",
    "train_var_prior_bound",
    "local_hc_bound",
    "catoni_expected_bound",
    "catoni_hc_value",
    "catoni_hc_bound",
    "kl_gibbs_upper",
    "bernstein_value",
    "bernstein_bound",
    "bernstein_union_bound",
    "zero_variance_bound",
]

KINDS = (
    "occam",
    "pac_bayes",
    "pac_bayes_grid",
    "l2",
    "dropout",
    "train_var",
    "train_var_prior",
    "local_hc",
    "catoni_expected",
    "catoni_hc",
    "bernstein",
    "bernstein_union",
    "zero_variance",
)

CSV_COLUMNS = (
    "kind",
    "value",
    "empirical_term",
    "complexity_nats",
    "lambda",
    "delta",
    "n",
    "l_max",
    "vacuous",
)

DEFAULT_LAMBDA_CAP = 1e6

_PAC_BAYES_FORM = {"occam", "pac_bayes", "pac_bayes_grid", "l2", "dropout", "local_hc",
                   "train_var", "train_var_prior"}


@dataclass(frozen=True)
class BoundReport:
    kind: str
    value: float
    empirical_term: float
    complexity_nats: float
    lam: float | None
    delta: float
    n: int | None
    l_max: float
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown bound kind {self.kind!r}")

    @property
    def vacuous(self) -> bool:
        return self.value > self.l_max

    def recombine(self) -> float:
        """Recompute the value from the recorded components."""
        k, e, c, lam, n, lm = (self.kind, self.empirical_term, self.complexity_nats,
                               self.lam, self.n, self.l_max)
        if k in _PAC_BAYES_FORM:
            return (e + lam * lm / n * c) / (1.0 - 1.0 / (2.0 * lam))
        if k == "catoni_expected":
            return e / (1.0 - 2.0 / lam)
        if k == "catoni_hc":
            return (e + lm * math.sqrt(c / (2 * n)) + lam * lm * c / n) / (1.0 - 2.0 / lam)
        if k in ("bernstein", "bernstein_union"):
            return e + math.sqrt(2.0 * self.extra["sigma2_hat"] * c / n) + 3.0 * lm * c / n
        if k == "zero_variance":
            return e + lm * c / (n - 1)
        raise AssertionError(k)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["vacuous"] = self.vacuous
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoundReport":
        d = dict(d)
        d.pop("vacuous", None)
        d["lam"] = d.pop("lambda")
        return cls(**d)

    def csv_row(self) -> list:
        d = self.to_dict()
        return [d[c] for c in CSV_COLUMNS]


# -- argument checks -----------------------------------------------------------


def _check_delta(delta):
    if not (0.0 < delta <= 1.0):
        raise ValueError(f"delta must lie in (0, 1], got {delta!r}")


def _check_n(n, minimum=1):
    if int(n) != n or n < minimum:
        raise ValueError(f"n must be an integer >= {minimum}, got {n!r}")


def _check_lambda(lam, floor=0.5):
    if lam is None or not (lam > floor) or not math.isfinite(lam):
        raise ValueError(f"lambda must be a finite value > {floor}, got {lam!r}")


def _check_nonneg(x, name):
    if not (x >= 0):
        raise ValueError(f"{name} must be nonnegative, got {x!r}")


def _pac_bayes_form(e, c, lam, n, l_max):
    return (e + lam * l_max / n * c) / (1.0 - 1.0 / (2.0 * lam))


# -- Occam ---------------------------------------------------------------------

_GRID_POINTS = 96
_GOLDEN_ITERS = 64
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_LAMBDA_FLOOR_OFFSET = 1e-8


def occam_values(l_hat, prior_nats, n, delta, l_max=1.0, lambda_cap=DEFAULT_LAMBDA_CAP):
    """Vectorized Occam bound: (values, minimizing lambdas).

    Minimizes ``(l_hat + lambda*l_max/n*(prior_nats + ln 1/delta)) / (1 - 1/(2 lambda))``
    over ``lambda in (1/2, lambda_cap]``. The objective is unimodal in lambda, so a
    coarse grid in ``log(lambda - 1/2)`` brackets the minimum and golden-section
    search refines it.
    """
    _check_delta(delta)
    _check_n(n)
    if not lambda_cap > 0.5 + _LAMBDA_FLOOR_OFFSET:
        raise ValueError("lambda_cap must exceed 1/2")
    l_hat = np.atleast_1d(np.asarray(l_hat, dtype=float))
    nats = np.broadcast_to(np.asarray(prior_nats, dtype=float), l_hat.shape)
    cplx = (nats + math.log(1.0 / delta))[:, None]
    e = l_hat[:, None]

    def lam_of(t):
        return np.minimum(0.5 + np.exp(t), lambda_cap)

    def f(t):
        lam = lam_of(t)
        return (e + lam * l_max / n * cplx) / (1.0 - 1.0 / (2.0 * lam))

    t_lo, t_hi = math.log(_LAMBDA_FLOOR_OFFSET), math.log(lambda_cap - 0.5)
    grid = np.linspace(t_lo, t_hi, _GRID_POINTS)
    vals = f(grid[None, :])
    j = np.argmin(vals, axis=1)
    a = grid[np.maximum(j - 1, 0)][:, None]
    b = grid[np.minimum(j + 1, _GRID_POINTS - 1)][:, None]
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(_GOLDEN_ITERS):
        left = fc <= fd
        a, b = np.where(left, a, c), np.where(left, d, b)
        c = b - _INV_PHI * (b - a)
        d = a + _INV_PHI * (b - a)
        fc, fd = f(c), f(d)
    t_best = np.where(fc <= fd, c, d)
    # the coarse-grid winner guards against a minimum pinned at a grid endpoint
    cand_t = np.concatenate([t_best, grid[j][:, None]], axis=1)
    cand_v = f(cand_t)
    k = np.argmin(cand_v, axis=1)
    rows = np.arange(l_hat.size)
    return cand_v[rows, k], lam_of(cand_t[rows, k])


def occam_bound(l_hat, prior_nats, n, delta, l_max=1.0, lambda_cap=DEFAULT_LAMBDA_CAP) -> BoundReport:
    """Occam bound for one rule with prior mass ``exp(-prior_nats)``."""
    _check_nonneg(prior_nats, "prior_nats")
    v, lam = occam_values(l_hat, prior_nats, n, delta, l_max, lambda_cap)
    return BoundReport("occam", float(v[0]), float(l_hat),
                       float(prior_nats + math.log(1.0 / delta)), float(lam[0]),
                       float(delta), int(n), float(l_max))


# -- PAC-Bayes family ------------------------------------------------------------


def pac_bayes_value(l_hat_q, kl_nats, n, delta, l_max, lam):
    """Array-friendly value of the fixed-lambda PAC-Bayes bound."""
    return _pac_bayes_form(np.asarray(l_hat_q), np.asarray(kl_nats) + math.log(1.0 / delta),
                           lam, n, l_max)


def pac_bayes_bound(l_hat_q, kl_nats, n, delta, l_max, lam) -> BoundReport:
    """PAC-Bayes bound at a lambda fixed before the sample was drawn."""
    _check_lambda(lam)
    _check_delta(delta)
    _check_n(n)
    _check_nonneg(kl_nats, "kl_nats")
    c = kl_nats + math.log(1.0 / delta)
    return BoundReport("pac_bayes", _pac_bayes_form(l_hat_q, c, lam, n, l_max), float(l_hat_q),
                       float(c), float(lam), float(delta), int(n), float(l_max))


def pac_bayes_grid(l_hat_q, kl_nats, n, delta, l_max, grid) -> BoundReport:
    """Minimum over a pre-declared lambda grid with the ``ln(k/delta)`` union penalty."""
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("lambda grid is empty")
    for g in grid:
        _check_lambda(g)
    _check_delta(delta)
    _check_n(n)
    _check_nonneg(kl_nats, "kl_nats")
    k = len(grid)
    c = kl_nats + math.log(k / delta)
    vals = [_pac_bayes_form(l_hat_q, c, g, n, l_max) for g in grid]
    i = int(np.argmin(vals))
    return BoundReport("pac_bayes_grid", vals[i], float(l_hat_q), float(c), grid[i],
                       float(delta), int(n), float(l_max), {"grid": grid})


def l2_bound(posterior, l_hat_q, n, delta, l_max, lam) -> BoundReport:
    """PAC-Bayes bound for an isotropic Gaussian posterior against N(0, I)."""
    from .posteriors import gaussian_kl

    r = pac_bayes_bound(l_hat_q, gaussian_kl(posterior), n, delta, l_max, lam)
    return _rekind(r, "l2")


def dropout_bound(posterior, l_hat_q, n, delta, l_max, lam) -> BoundReport:
    """PAC-Bayes bound for a dropout posterior against the same-rate prior at zero."""
    from .posteriors import dropout_kl

    r = pac_bayes_bound(l_hat_q, dropout_kl(posterior), n, delta, l_max, lam)
    return _rekind(r, "dropout", alpha=float(posterior.alpha))


def _rekind(r: BoundReport, kind: str, **extra) -> BoundReport:
    return BoundReport(kind, r.value, r.empirical_term, r.complexity_nats, r.lam,
                       r.delta, r.n, r.l_max, {**r.extra, **extra})


# -- training-variance family ----------------------------------------------------


def train_var_bound(e_l_hat, e_kl_to_mean, n, l_max, lam) -> BoundReport:
    """Expected-loss bound with the KL measured to the algorithm's mean posterior."""
    _check_lambda(lam)
    _check_n(n)
    _check_nonneg(e_kl_to_mean, "e_kl_to_mean")
    v = _pac_bayes_form(e_l_hat, e_kl_to_mean, lam, n, l_max)
    return BoundReport("train_var", v, float(e_l_hat), float(e_kl_to_mean), float(lam),
                       1.0, int(n), float(l_max))


def train_var_prior_bound(e_l_hat, e_kl_to_prior, n, l_max, lam) -> BoundReport:
    """Expected-loss bound with the KL measured to an arbitrary fixed prior."""
    return _rekind(train_var_bound(e_l_hat, e_kl_to_prior, n, l_max, lam), "train_var_prior")


def local_hc_bound(l_hat_q, kl_to_mean_est, n, delta, l_max, lam) -> BoundReport:
    """High-confidence bound with the mean posterior standing in for the prior.

    The mean posterior is only ever available as a resampling estimate, so
    the report is tagged ``estimated_prior`` and is not a strict certificate.
    """
    r = pac_bayes_bound(l_hat_q, kl_to_mean_est, n, delta, l_max, lam)
    return _rekind(r, "local_hc", estimated_prior=True)


def catoni_expected_bound(e_l_hat, lam, n=None, l_max=1.0) -> BoundReport:
    """``E L(Q_lambda(S)) <= E L_hat(Q_lambda(S)) / (1 - 2/lambda)`` for lambda > 2."""
    _check_lambda(lam, floor=2.0)
    v = e_l_hat / (1.0 - 2.0 / lam)
    return BoundReport("catoni_expected", v, float(e_l_hat), 0.0, float(lam), 1.0,
                       None if n is None else int(n), float(l_max))


def catoni_hc_value(l_hat_q, n, delta, l_max, lam):
    c = math.log(2.0 / delta)
    return (np.asarray(l_hat_q) + l_max * math.sqrt(c / (2 * n)) + lam * l_max * c / n) / (
        1.0 - 2.0 / lam
    )


def catoni_hc_bound(l_hat_q, n, delta, l_max, lam) -> BoundReport:
    """High-confidence bound on the loss of the Gibbs posterior Q_lambda(S), lambda > 2."""
    _check_lambda(lam, floor=2.0)
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta!r}")
    _check_n(n)
    v = float(catoni_hc_value(l_hat_q, n, delta, l_max, lam))
    return BoundReport("catoni_hc", v, float(l_hat_q), math.log(2.0 / delta), float(lam),
                       float(delta), int(n), float(l_max))


def kl_gibbs_upper(expected, l_q, l_hat_q, n, l_max, lam, delta=None) -> float:
    """Upper bound on ``KL(Q_lambda(S), Q_lambda_true)``, in nats.

    ``expected=True`` gives ``(n/(lambda l_max)) (l_q - l_hat_q)``, the bound on
    expectations; otherwise the high-confidence form adds
    ``(n/lambda) sqrt(ln(1/delta)/(2n))``.
    """
    if not (lam > 0):
        raise ValueError(f"lambda must be positive, got {lam!r}")
    base = n / (lam * l_max) * (l_q - l_hat_q)
    if expected:
        return base
    if delta is None:
        raise ValueError("the high-confidence form needs delta")
    _check_delta(delta)
    return base + n / lam * math.sqrt(math.log(1.0 / delta) / (2 * n))


# -- empirical Bernstein and zero variance -------------------------------------


def bernstein_value(mu_hat, sigma2_hat, n, delta, l_max, prior_nats=0.0):
    c = np.asarray(prior_nats) + math.log(3.0 / delta)
    return np.asarray(mu_hat) + np.sqrt(2.0 * np.asarray(sigma2_hat) * c / n) + 3.0 * l_max * c / n


def bernstein_bound(mu_hat, sigma2_hat, n, delta, l_max) -> BoundReport:
    """Empirical-Bernstein upper bound on a mean of variables in [0, l_max]."""
    _check_nonneg(sigma2_hat, "sigma2_hat")
    _check_n(n, 2)
    _check_delta(delta)
    v = float(bernstein_value(mu_hat, sigma2_hat, n, delta, l_max))
    return BoundReport("bernstein", v, float(mu_hat), math.log(3.0 / delta), None,
                       float(delta), int(n), float(l_max), {"sigma2_hat": float(sigma2_hat)})


def bernstein_union_bound(mu_hat, sigma2_hat, prior_nats, n, delta, l_max) -> BoundReport:
    """Empirical-Bernstein bound made uniform over rules by a union bound over the prior."""
    _check_nonneg(prior_nats, "prior_nats")
    r = bernstein_bound(mu_hat, sigma2_hat, n, delta, l_max)
    v = float(bernstein_value(mu_hat, sigma2_hat, n, delta, l_max, prior_nats))
    return BoundReport("bernstein_union", v, r.empirical_term, prior_nats + r.complexity_nats,
                       None, r.delta, r.n, r.l_max, r.extra)


def zero_variance_bound(l_hat, prior_nats, n, delta, l_max) -> BoundReport:
    """Bound for a rule whose empirical loss variance is exactly zero."""
    _check_n(n, 2)
    _check_delta(delta)
    _check_nonneg(prior_nats, "prior_nats")
    c = prior_nats + math.log(1.0 / delta)
    return BoundReport("zero_variance", l_hat + l_max * c / (n - 1), float(l_hat), float(c),
                       None, float(delta), int(n), float(l_max))
