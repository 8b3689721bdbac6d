"""Finite hypothesis classes, bounded losses and prior code lengths.

Hypotheses and (for finite worlds) situations are referenced by integer
index. A :class:`BoundedLoss` wraps an arbitrary nonnegative loss and clips
it at the outlier threshold ``l_max``; when both sides are finite the raw
loss can be given as a matrix, which the simulation code uses directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

__all__ = [
    "BoundedLoss",
    "FiniteHypothesisSpace",
    "SampleSet",
    "FiniteWorld",
    "clip_loss",
    "empirical_loss",
    "empirical_variance",
    "true_loss_exact",
    "loss_matrix",
    "dense_prior_nats",
    "sparse_prior_nats",
    "load_world",
    "save_world",
]

_PROB_TOL = 1e-12


def _check_distribution(w, what: str) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError(f"{what} must be a nonempty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError(f"{what} has negative or non-finite entries")
    if abs(w.sum() - 1.0) > _PROB_TOL:
        raise ValueError(f"{what} sums to {w.sum()!r}, not 1")
    return w


@dataclass(frozen=True, eq=False)
class BoundedLoss:
    """A loss ``raw_loss(h, s) >= 0`` clipped to ``[0, l_max]``.

    ``table`` optionally holds the raw losses as an (n_hypotheses,
    n_situations) array for finite problems.
    """

    l_max: float
    raw_loss: Callable[[Any, Any], float]
    table: np.ndarray | None = None

    def __post_init__(self):
        if not (self.l_max > 0) or not math.isfinite(self.l_max):
            raise ValueError("l_max must be a positive finite number")

    @classmethod
    def from_matrix(cls, matrix, l_max: float) -> "BoundedLoss":
        m = np.array(matrix, dtype=float)
        if m.ndim != 2:
            raise ValueError("loss matrix must be 2-d (hypotheses x situations)")
        if np.any(m < 0) or np.any(np.isnan(m)):
            raise ValueError("loss matrix has negative or NaN entries")
        m.setflags(write=False)
        return cls(l_max=float(l_max), raw_loss=lambda h, s: m[h, s], table=m)

    def __call__(self, h, s) -> float:
        return clip_loss(self, h, s)


@dataclass(frozen=True, eq=False)
class FiniteHypothesisSpace:
    """Hypotheses ``0..H-1`` with prior weights."""

    prior: np.ndarray
    ids: tuple = ()

    def __post_init__(self):
        p = _check_distribution(self.prior, "prior")
        p.setflags(write=False)
        object.__setattr__(self, "prior", p)
        if not self.ids:
            object.__setattr__(self, "ids", tuple(f"h{i}" for i in range(p.size)))
        elif len(self.ids) != p.size:
            raise ValueError("ids and prior have different lengths")

    @classmethod
    def uniform(cls, size: int) -> "FiniteHypothesisSpace":
        return cls(np.full(size, 1.0 / size))

    def __len__(self) -> int:
        return self.prior.size

    @property
    def prior_nats(self) -> np.ndarray:
        """``ln(1/P(h))`` per hypothesis (inf where the prior is zero)."""
        with np.errstate(divide="ignore"):
            return -np.log(self.prior)


@dataclass(frozen=True)
class SampleSet:
    """An ordered sample of N situations."""

    situations: tuple

    def __post_init__(self):
        object.__setattr__(self, "situations", tuple(self.situations))
        if len(self.situations) < 1:
            raise ValueError("a sample needs at least one situation")

    @property
    def n(self) -> int:
        return len(self.situations)

    def __len__(self) -> int:
        return self.n

    def __iter__(self):
        return iter(self.situations)

    def counts(self, n_situations: int) -> np.ndarray:
        """Occurrence counts, for samples of integer situation indices."""
        return np.bincount(np.asarray(self.situations, dtype=np.int64), minlength=n_situations)


@dataclass(frozen=True, eq=False)
class FiniteWorld:
    """An exactly enumerable distribution D over situations ``0..S-1``."""

    probs: np.ndarray
    ids: tuple = ()
    seed: int | None = None

    def __post_init__(self):
        p = _check_distribution(self.probs, "situation probabilities")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        if not self.ids:
            object.__setattr__(self, "ids", tuple(f"s{i}" for i in range(p.size)))
        elif len(self.ids) != p.size:
            raise ValueError("ids and probabilities have different lengths")

    def __len__(self) -> int:
        return self.probs.size

    def draw(self, n: int, rng: np.random.Generator) -> SampleSet:
        """N IID situations."""
        idx = rng.choice(self.probs.size, size=n, p=self.probs)
        return SampleSet(tuple(int(i) for i in idx))

    def draw_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.probs.size, size=n, p=self.probs)


def clip_loss(loss: BoundedLoss, h, s) -> float:
    """``min(raw_loss(h, s), l_max)``; a negative raw loss is an error."""
    raw = float(loss.raw_loss(h, s))
    if raw < 0 or math.isnan(raw):
        raise ValueError(f"raw loss {raw!r} at (h={h!r}, s={s!r}) is negative or NaN")
    return min(raw, loss.l_max)


def _losses_on(loss: BoundedLoss, h, sample: SampleSet) -> np.ndarray:
    if loss.table is not None:
        raw = loss.table[h, np.asarray(sample.situations, dtype=np.int64)]
        return np.minimum(raw, loss.l_max)
    return np.array([clip_loss(loss, h, s) for s in sample])


def empirical_loss(loss: BoundedLoss, h, sample: SampleSet) -> float:
    """Mean clipped loss of ``h`` on the sample."""
    return float(min(np.mean(_losses_on(loss, h, sample)), loss.l_max))


def empirical_variance(loss: BoundedLoss, h, sample: SampleSet) -> float:
    """Unbiased (1/(N-1)) sample variance of the clipped losses."""
    if sample.n < 2:
        raise ValueError("empirical variance needs N >= 2")
    vals = _losses_on(loss, h, sample)
    # exactly zero for constant losses; the zero-variance bound depends on it
    if np.ptp(vals) == 0:
        return 0.0
    return float(np.var(vals, ddof=1))


def true_loss_exact(loss: BoundedLoss, h, world: FiniteWorld) -> float:
    """``sum_s D(s) * L(h, s)`` by enumeration of the world's situations."""
    vals = _losses_on(loss, h, SampleSet(tuple(range(len(world)))))
    return float(min(np.dot(world.probs, vals), loss.l_max))


def loss_matrix(loss: BoundedLoss, n_hypotheses: int, n_situations: int) -> np.ndarray:
    """Clipped loss of every (hypothesis, situation) pair as an array."""
    if loss.table is not None:
        if loss.table.shape != (n_hypotheses, n_situations):
            raise ValueError(
                f"loss table has shape {loss.table.shape}, "
                f"expected {(n_hypotheses, n_situations)}"
            )
        return np.minimum(loss.table, loss.l_max)
    return np.array(
        [[clip_loss(loss, h, s) for s in range(n_situations)] for h in range(n_hypotheses)]
    )


def dense_prior_nats(d: int, b: int) -> float:
    """``ln(1/P(h))`` for the uniform prior on d parameters of b bits each."""
    if d < 1 or b < 1:
        raise ValueError("d and b must be positive")
    return math.log(2.0) * b * d


def sparse_prior_nats(d: int, b: int, s: int) -> float:
    """``ln d + s (ln d + b ln 2)`` for a vector with s nonzero b-bit entries.

    The underlying prior draws the sparsity level uniformly from 1..d, then s
    (index, value) pairs with indices uniform on 1..d (with replacement) and
    values uniform over the 2^b bit strings.
    """
    if d < 1 or b < 1:
        raise ValueError("d and b must be positive")
    if not (1 <= s <= d):
        raise ValueError(f"sparsity level s={s} outside [1, {d}]")
    return math.log(d) + s * (math.log(d) + math.log(2.0) * b)


# -- JSON world files ---------------------------------------------------------


def load_world(path) -> tuple[FiniteWorld, FiniteHypothesisSpace, BoundedLoss]:
    """Read a finite world, hypothesis space and loss matrix from JSON.

    Expected layout::

        {"situations": {"ids": [...], "probs": [...]},
         "hypotheses": {"ids": [...], "prior": [...]},
         "loss": [[...], ...],          # one row per hypothesis
         "l_max": 1.0,
         "seed": 7}                     # optional
    """
    data = json.loads(Path(path).read_text())
    return world_from_dict(data)


def world_from_dict(data: dict) -> tuple[FiniteWorld, FiniteHypothesisSpace, BoundedLoss]:
    try:
        sit = data["situations"]
        hyp = data["hypotheses"]
        world = FiniteWorld(
            np.asarray(sit["probs"], dtype=float), tuple(sit.get("ids", ())), data.get("seed")
        )
        space = FiniteHypothesisSpace(np.asarray(hyp["prior"], dtype=float), tuple(hyp.get("ids", ())))
        l_max = float(data.get("l_max", 1.0))
        matrix = np.asarray(data["loss"], dtype=float)
    except KeyError as exc:
        raise ValueError(f"world file is missing field {exc}") from None
    if matrix.shape != (len(space), len(world)):
        raise ValueError(f"loss matrix shape {matrix.shape} != ({len(space)}, {len(world)})")
    if np.any(matrix > l_max):
        raise ValueError("loss matrix entries must lie in [0, l_max]")
    return world, space, BoundedLoss.from_matrix(matrix, l_max)


def world_to_dict(world: FiniteWorld, space: FiniteHypothesisSpace, loss: BoundedLoss) -> dict:
    matrix = loss_matrix(loss, len(space), len(world))
    out = {
        "situations": {"ids": list(world.ids), "probs": world.probs.tolist()},
        "hypotheses": {"ids": list(space.ids), "prior": space.prior.tolist()},
        "loss": matrix.tolist(),
        "l_max": loss.l_max,
    }
    if world.seed is not None:
        out["seed"] = int(world.seed)
    return out


def save_world(path, world: FiniteWorld, space: FiniteHypothesisSpace, loss: BoundedLoss) -> None:
    # json writes floats with repr(), the shortest string that round-trips exactly
    Path(path).write_text(json.dumps(world_to_dict(world, space, loss), indent=1) + "\n")
