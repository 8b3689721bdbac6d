"""Scale-invariant linear classifiers and their stochastic losses.

Binary rule: ``sign(w . phi(x))`` with 0-1 loss. Under ``w ~ N(theta, I)`` the
expected loss has the closed form ``P(eps > y theta.phi(x) / ||phi(x)||)``.

Multiclass rule: cosine scores ``h_w(x, y) = w.phi(x,y) / (||w|| ||phi(x,y)||)``,
softmax at inverse temperature ``beta`` over an enumerable label set, and the
loss is the expected task loss under that softmax. It is differentiable in w
away from ``w = 0``.

A draw ``w = 0`` (every coordinate dropped) has no direction. We treat it as
the uniform softmax (the ``beta = 0`` loss) with zero gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.special import softmax

from .divergence import std_normal_tail
from .posteriors import DropoutPosterior, GaussianShiftPosterior

__all__ = [
    "LinearBinaryModel",
    "MulticlassModel",
    "ClassificationData",
    "binary_stochastic_loss",
    "binary_posterior_loss",
    "multiclass_loss",
    "multiclass_probs",
    "draw_weights",
    "mc_posterior_loss",
    "mc_gradient",
    "signed_feature_map",
    "block_feature_map",
]

# bound on the (draws x data x labels) intermediate arrays
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True, eq=False)
class LinearBinaryModel:
    feature_map: Callable[[Any], np.ndarray] = np.asarray
    l_max: float = 1.0

    def featurize(self, xs, ys) -> "ClassificationData":
        phi = np.array([np.asarray(self.feature_map(x), dtype=float) for x in xs])
        y = np.asarray(ys, dtype=float)
        if not np.all(np.abs(y) == 1):
            raise ValueError("binary labels must be -1 or +1")
        return ClassificationData(phi, y)


@dataclass(frozen=True, eq=False)
class MulticlassModel:
    """Cosine-score softmax classifier.

    ``task_loss[yhat, y]`` is indexed by positions in ``label_set``.
    """

    feature_map: Callable[[Any, Any], np.ndarray]
    label_set: tuple
    beta: float
    task_loss: np.ndarray
    l_max: float = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "label_set", tuple(self.label_set))
        t = np.asarray(self.task_loss, dtype=float)
        k = len(self.label_set)
        if t.shape != (k, k):
            raise ValueError(f"task loss must be {k}x{k}")
        if np.any(t < 0):
            raise ValueError("task losses must be nonnegative")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        object.__setattr__(self, "task_loss", t)
        if self.l_max is None:
            object.__setattr__(self, "l_max", float(t.max()) if t.max() > 0 else 1.0)
        elif np.any(t > self.l_max):
            raise ValueError("task losses exceed l_max")

    def features(self, x) -> np.ndarray:
        """(K, d) matrix of ``phi(x, y)`` over the label set."""
        return np.array([np.asarray(self.feature_map(x, y), dtype=float) for y in self.label_set])

    def featurize(self, xs, ys) -> "ClassificationData":
        index = {y: i for i, y in enumerate(self.label_set)}
        phi = np.array([self.features(x) for x in xs])
        return ClassificationData(phi, np.array([index[y] for y in ys], dtype=np.int64))


@dataclass(frozen=True, eq=False)
class ClassificationData:
    """Precomputed features.

    Binary: ``phi`` (N, d), ``y`` in {-1, +1}. Multiclass: ``phi`` (N, K, d),
    ``y`` label positions.
    """

    phi: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        norms = np.linalg.norm(self.phi, axis=-1)
        if np.any(norms == 0) or not np.all(np.isfinite(self.phi)):
            raise ValueError("feature vectors must be finite and nonzero")
        if len(self.phi) != len(self.y) or len(self.y) < 1:
            raise ValueError("phi and y must have the same nonzero length")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.phi.shape[-1]

    @property
    def is_binary(self) -> bool:
        return self.phi.ndim == 2

    def subset(self, idx) -> "ClassificationData":
        return ClassificationData(self.phi[idx], self.y[idx])


def signed_feature_map(x, y):
    """Two-label map ``phi(x, y) = y * x`` for labels -1/+1."""
    return np.asarray(x, dtype=float) * (1.0 if y > 0 else -1.0)


def block_feature_map(n_labels: int):
    """``phi(x, y) = e_y (x) x``: one copy of x in the block of label y."""

    def phi(x, y):
        x = np.asarray(x, dtype=float)
        out = np.zeros(n_labels * x.size)
        out[y * x.size:(y + 1) * x.size] = x
        return out

    return phi


# -- binary ----------------------------------------------------------------------


def binary_stochastic_loss(theta, x, y, model: LinearBinaryModel | None = None) -> float:
    """Exact expected 0-1 loss of the Gaussian posterior N(theta, I) at (x, y)."""
    phi = np.asarray(x if model is None else model.feature_map(x), dtype=float)
    norm = np.linalg.norm(phi)
    if norm == 0:
        raise ValueError("zero feature vector")
    return std_normal_tail(y * np.dot(theta, phi) / norm)


def binary_posterior_loss(theta, data: ClassificationData) -> float:
    """Closed-form ``L_hat(Q_theta)`` averaged over a binary dataset."""
    phihat = data.phi / np.linalg.norm(data.phi, axis=1, keepdims=True)
    return float(np.mean(std_normal_tail(data.y * (phihat @ np.asarray(theta, dtype=float)))))


def binary_posterior_loss_grad(theta, data: ClassificationData) -> np.ndarray:
    """Gradient of :func:`binary_posterior_loss` in theta."""
    phihat = data.phi / np.linalg.norm(data.phi, axis=1, keepdims=True)
    m = data.y * (phihat @ np.asarray(theta, dtype=float))
    dens = np.exp(-0.5 * m * m) / math.sqrt(2 * math.pi)
    return -(dens * data.y) @ phihat / data.n


# -- multiclass ------------------------------------------------------------------


def multiclass_probs(omega, phi_x, beta) -> np.ndarray:
    """Softmax over labels of the cosine scores; ``phi_x`` is (K, d)."""
    omega = np.asarray(omega, dtype=float)
    nw = np.linalg.norm(omega)
    if nw == 0:
        raise ValueError("omega = 0 has no direction; cosine score undefined")
    phi_x = np.asarray(phi_x, dtype=float)
    h = phi_x @ omega / (nw * np.linalg.norm(phi_x, axis=1))
    return softmax(beta * h)


def multiclass_loss(omega, x, y, model: MulticlassModel) -> float:
    """Expected task loss of the softmax over the whole label set."""
    phi_x = model.features(x)
    if np.any(np.linalg.norm(phi_x, axis=1) == 0):
        raise ValueError("zero feature vector")
    p = multiclass_probs(omega, phi_x, model.beta)
    j = model.label_set.index(y)
    return float(np.dot(p, model.task_loss[:, j]))


def _multiclass_batch(W, data: ClassificationData, beta, task, want_grad):
    """Per-draw empirical loss (M,) and, optionally, gradient in w (M, d)."""
    phihat = data.phi / np.linalg.norm(data.phi, axis=2, keepdims=True)  # (N, K, d)
    cost = task[:, data.y].T  # (N, K): cost[i, k] = task_loss[k, y_i]
    nw = np.linalg.norm(W, axis=1)
    zero = nw == 0
    safe = np.where(zero, 1.0, nw)
    U = W / safe[:, None]
    h = np.einsum("md,nkd->mnk", U, phihat)
    h[zero] = 0.0
    p = softmax(beta * h, axis=2)
    per = np.einsum("mnk,nk->mn", p, cost)
    loss = per.mean(axis=1)
    if not want_grad:
        return loss, None
    a = p * (cost[None] - per[:, :, None])
    g = np.einsum("mnk,nkd->md", a, phihat) - np.einsum("mnk,mnk->m", a, h)[:, None] * U
    g *= (beta / data.n / safe)[:, None]
    g[zero] = 0.0
    return loss, g


def draw_weights(posterior, rng: np.random.Generator, n_mc: int):
    """(mask or None, weights) for ``n_mc`` draws, shapes (n_mc, d)."""
    eps = rng.standard_normal((n_mc, posterior.d))
    if isinstance(posterior, DropoutPosterior):
        mask = (rng.random((n_mc, posterior.d)) >= posterior.alpha).astype(float)
        return mask, mask * (posterior.theta + eps)
    if isinstance(posterior, GaussianShiftPosterior):
        return None, posterior.theta + eps
    raise TypeError(f"unsupported posterior {type(posterior).__name__}")


def _per_draw_losses(W, data: ClassificationData, model, want_grad=False):
    if data.is_binary:
        if want_grad:
            raise TypeError("the 0-1 loss of the binary model is not differentiable")
        # sign(0) is counted as an error
        margins = (W @ data.phi.T) * data.y
        return (margins <= 0).mean(axis=1), None
    per_chunk = max(1, _CHUNK_ELEMENTS // (data.n * data.phi.shape[1]))
    losses, grads = [], []
    for start in range(0, len(W), per_chunk):
        l, g = _multiclass_batch(W[start:start + per_chunk], data, model.beta,
                                 model.task_loss, want_grad)
        losses.append(l)
        grads.append(g)
    return np.concatenate(losses), (np.concatenate(grads) if want_grad else None)


def mc_posterior_loss(posterior, data: ClassificationData, model, n_mc: int,
                      rng: np.random.Generator) -> tuple[float, float]:
    """Monte-Carlo ``L_hat(Q)``: mean over ``n_mc`` posterior draws and its standard error."""
    if n_mc < 2:
        raise ValueError("n_mc must be at least 2")
    _, W = draw_weights(posterior, rng, n_mc)
    vals, _ = _per_draw_losses(W, data, model)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_mc))


def mc_gradient(posterior, data: ClassificationData, model, n_mc: int,
                rng: np.random.Generator) -> np.ndarray:
    """Pathwise Monte-Carlo gradient of ``L_hat(Q)`` with respect to theta.

    Uses the same draws as :func:`mc_posterior_loss` for the same generator
    state, so it is the exact derivative of that estimate. Dropout masks
    multiply the per-coordinate gradient.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    if isinstance(model, LinearBinaryModel) or data.is_binary:
        raise TypeError("the 0-1 loss of the binary model is not differentiable")
    mask, W = draw_weights(posterior, rng, n_mc)
    _, G = _per_draw_losses(W, data, model, want_grad=True)
    if mask is not None:
        G = G * mask
    return G.mean(axis=0)
