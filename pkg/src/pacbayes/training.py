"""SGD on the Gaussian (L2) and dropout PAC-Bayes bounds over theta.

The minimized quantity is the bound's right-hand side

    (L_hat(Q) + lambda l_max / N (KL(Q, P) + ln 1/delta)) / (1 - 1/(2 lambda))

with ``KL = ||theta||^2 / 2`` (Gaussian) or ``(1 - alpha)/2 ||theta||^2``
(dropout). The leading constant does not move the minimizer; it is kept in
the gradient so the step size refers to the bound itself.

lambda and alpha must be fixed before the data are seen for the final report
to be a certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import BoundReport, dropout_bound, l2_bound
from .models import ClassificationData, mc_gradient, mc_posterior_loss
from .posteriors import DropoutPosterior, GaussianShiftPosterior, gaussian_kl
from .rng import make_rng

__all__ = [
    "TrainConfig",
    "Checkpoint",
    "TrainTrace",
    "TrainingDiverged",
    "make_posterior",
    "objective_estimate",
    "objective_and_se",
    "sgd_minimize_bound",
]


@dataclass(frozen=True)
class TrainConfig:
    lam: float
    delta: float
    alpha: float | None = None
    eta0: float = 0.1
    kappa: float = 0.5
    minibatch: int = 32
    mc_per_step: int = 4
    steps: int = 1000
    seed: int = 0
    checkpoint_every: int = 50
    checkpoint_mc: int = 512
    final_mc: int = 100_000
    theta0: tuple | None = None

    def __post_init__(self):
        if not (self.lam > 0.5):
            raise ValueError("lambda must exceed 1/2")
        if not (0 < self.delta <= 1):
            raise ValueError("delta must lie in (0, 1]")
        if self.alpha is not None and not (0 <= self.alpha <= 1):
            raise ValueError("alpha must lie in [0, 1]")
        if not (self.eta0 > 0) or not (0 <= self.kappa <= 1):
            raise ValueError("need eta0 > 0 and kappa in [0, 1]")
        for name in ("minibatch", "mc_per_step", "steps", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.checkpoint_mc < 2 or self.final_mc < 2:
            raise ValueError("Monte-Carlo sizes must be >= 2")

    def step_size(self, t: int) -> float:
        return self.eta0 / (1.0 + t) ** self.kappa


@dataclass(frozen=True)
class Checkpoint:
    step: int
    objective: float
    bound: float
    theta_norm: float
    std_error: float


@dataclass
class TrainTrace:
    checkpoints: list = field(default_factory=list)

    def objectives(self) -> np.ndarray:
        return np.array([c.objective for c in self.checkpoints])

    def bounds(self) -> np.ndarray:
        return np.array([c.bound for c in self.checkpoints])


class TrainingDiverged(RuntimeError):
    """Theta became non-finite."""

    def __init__(self, step: int, theta):
        super().__init__(f"theta became non-finite at step {step}")
        self.step = step
        self.theta = np.asarray(theta)

    def to_dict(self) -> dict:
        return {"error": "diverged", "step": self.step,
                "message": str(self)}


def make_posterior(theta, alpha=None):
    if alpha is None:
        return GaussianShiftPosterior(theta)
    return DropoutPosterior(float(alpha), theta)


def _kl(theta, alpha):
    return gaussian_kl(theta) if alpha is None else (1.0 - alpha) * gaussian_kl(theta)


def objective_and_se(theta, data: ClassificationData, model, config: TrainConfig, n_mc: int,
                     rng) -> tuple[float, float, float]:
    """(bound right-hand side, its MC standard error, MC loss estimate)."""
    post = make_posterior(theta, config.alpha)
    loss, se = mc_posterior_loss(post, data, model, n_mc, rng)
    scale = 1.0 / (1.0 - 1.0 / (2.0 * config.lam))
    cplx = config.lam * model.l_max / data.n * (_kl(theta, config.alpha) + math.log(1 / config.delta))
    return scale * (loss + cplx), scale * se, loss


def objective_estimate(theta, data: ClassificationData, model, config: TrainConfig, n_mc: int,
                       rng) -> float:
    """Monte-Carlo estimate of the bound's right-hand side at theta."""
    return objective_and_se(theta, data, model, config, n_mc, rng)[0]


def objective_gradient(theta, data, model, config: TrainConfig, n_mc: int, rng) -> np.ndarray:
    """Gradient of :func:`objective_estimate` for the same generator state."""
    post = make_posterior(theta, config.alpha)
    g = mc_gradient(post, data, model, n_mc, rng)
    kl_grad = theta if config.alpha is None else (1.0 - config.alpha) * theta
    scale = 1.0 / (1.0 - 1.0 / (2.0 * config.lam))
    return scale * (g + config.lam * model.l_max / data.n * kl_grad)


def _checkpoint(step, theta, data, model, config) -> Checkpoint:
    # common random numbers across checkpoints keep the trace comparable
    rng = make_rng(config.seed, "checkpoint")
    bound, se, loss = objective_and_se(theta, data, model, config, config.checkpoint_mc, rng)
    objective = loss + config.lam * model.l_max / data.n * _kl(theta, config.alpha)
    return Checkpoint(step, float(objective), float(bound), float(np.linalg.norm(theta)),
                      float(se))


def sgd_minimize_bound(data: ClassificationData, model, config: TrainConfig):
    """Minimize the L2 (or, with ``config.alpha``, dropout) bound by SGD.

    Returns ``(theta, trace, report)`` where the report is the bound at the
    final theta with the empirical posterior loss re-estimated from
    ``config.final_mc`` fresh draws (standard error in ``report.extra``).
    Raises :class:`TrainingDiverged` if theta stops being finite.
    """
    d = data.d
    theta = np.zeros(d) if config.theta0 is None else np.array(config.theta0, dtype=float)
    if theta.shape != (d,):
        raise ValueError(f"theta0 must have dimension {d}")
    rng = make_rng(config.seed, "sgd")
    trace = TrainTrace([_checkpoint(0, theta, data, model, config)])
    batch = min(config.minibatch, data.n)
    # overflow on the way to a non-finite theta is reported as divergence below
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(config.steps):
            idx = np.sort(rng.choice(data.n, size=batch, replace=False))
            sub = data.subset(idx)
            post = make_posterior(theta, config.alpha)
            g = mc_gradient(post, sub, model, config.mc_per_step, rng)
            kl_grad = theta if config.alpha is None else (1.0 - config.alpha) * theta
            step = config.step_size(t) / (1.0 - 1.0 / (2.0 * config.lam))
            theta = theta - step * (g + config.lam * model.l_max / data.n * kl_grad)
            if not np.all(np.isfinite(theta)):
                raise TrainingDiverged(t + 1, theta)
            if (t + 1) % config.checkpoint_every == 0 or t + 1 == config.steps:
                trace.checkpoints.append(_checkpoint(t + 1, theta, data, model, config))

    post = make_posterior(theta, config.alpha)
    loss, se = mc_posterior_loss(post, data, model, config.final_mc, make_rng(config.seed, "final"))
    if config.alpha is None:
        report = l2_bound(post, loss, data.n, config.delta, model.l_max, config.lam)
    else:
        report = dropout_bound(post, loss, data.n, config.delta, model.l_max, config.lam)
    scale = 1.0 / (1.0 - 1.0 / (2.0 * config.lam))
    report = BoundReport(report.kind, report.value, report.empirical_term, report.complexity_nats,
                         report.lam, report.delta, report.n, report.l_max,
                         {**report.extra, "mc_std_error": se * scale, "n_mc": config.final_mc})
    return theta, trace, report
