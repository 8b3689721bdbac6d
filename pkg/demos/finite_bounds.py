# %% [markdown]
# # Bounds on a finite world
# A random world with 20 rules and 10 situations. We draw one sample, then
# compare the per-rule Occam bound with the PAC-Bayes bound of the Gibbs
# posterior at a few temperatures.

# %%
import numpy as np

from pacbayes.bounds import occam_bound, pac_bayes_bound
from pacbayes.hypotheses import empirical_loss, true_loss_exact
from pacbayes.posteriors import gibbs_weights, kl_discrete, select_lambda
from pacbayes.rng import make_rng
from pacbayes.simulation import random_world

world, space, loss = random_world(20, 10, seed=0)
sample = world.draw(50, make_rng(1, "demo-sample"))

# %% [markdown]
# Occam: one bound per rule, each charged ln 1/P(h).

# %%
for h in range(5):
    r = occam_bound(empirical_loss(loss, h, sample), space.prior_nats[h], sample.n, 0.05)
    print(f"rule {h}: empirical {r.empirical_term:.3f}  bound {r.value:.3f}  "
          f"true {true_loss_exact(loss, h, world):.3f}")

# %% [markdown]
# PAC-Bayes: the Gibbs posterior trades empirical loss against KL to the prior.

# %%
for lam in (1.0, 2.0, 4.0):
    q = gibbs_weights(space, sample, loss, lam)
    kl = kl_discrete(q.weights, space.prior)
    r = pac_bayes_bound(q.empirical_loss(), kl, sample.n, 0.05, loss.l_max, lam)
    true = float(q.weights @ np.array([true_loss_exact(loss, h, world) for h in range(len(space))]))
    print(f"lambda {lam}: empirical {q.empirical_loss():.3f}  KL {kl:.3f}  bound {r.value:.3f}  "
          f"true {true:.3f}")

# %% [markdown]
# Choosing lambda on the sample is paid for with ln(k) extra nats.

# %%
lam, q, r = select_lambda([1.0, 2.0, 4.0], sample, space, loss, 0.05)
print(f"selected lambda {lam}: certified bound {r.value:.3f}")
