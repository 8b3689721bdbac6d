"""PAC-Bayesian generalization bounds, posteriors and Monte-Carlo certification."""

__version__ = "0.1.0"

from .bounds import BoundReport  # noqa: E402
from .divergence import bernoulli_kl, d_gamma, invert_bound  # noqa: E402
from .hypotheses import BoundedLoss, FiniteHypothesisSpace, FiniteWorld, SampleSet  # noqa: E402
from .posteriors import DropoutPosterior, GaussianShiftPosterior, GibbsPosterior  # noqa: E402
from .rng import make_rng  # noqa: E402

__all__ = [
    "__version__",
    "BoundReport",
    "BoundedLoss",
    "DropoutPosterior",
    "FiniteHypothesisSpace",
    "FiniteWorld",
    "GaussianShiftPosterior",
    "GibbsPosterior",
    "SampleSet",
    "bernoulli_kl",
    "d_gamma",
    "invert_bound",
    "make_rng",
]
