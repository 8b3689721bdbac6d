# %% [markdown]
# # Do the bounds hold?
# Resample the world many times and count how often the true loss exceeds
# the bound. The exact-binomial upper confidence limit on that rate must
# stay below delta.

# %%
from pacbayes.rng import make_rng
from pacbayes.simulation import ExperimentParams, random_world, run_validity_experiment

world, space, loss = random_world(20, 10, seed=0)
for kind in ("occam", "pac_bayes", "pac_bayes_grid", "bernstein_union"):
    rep = run_validity_experiment(kind, world, space, loss, ExperimentParams(n=50, delta=0.05),
                                  1000, make_rng(7, "demo", kind))
    print(f"{kind:16s} violations {rep.violation_count}/{rep.m}  "
          f"upper limit {rep.upper_limit:.4f}  passed {rep.passed}")

# %% [markdown]
# A nearly vacuous delta lets almost anything through; the check is still exact.

# %%
rep = run_validity_experiment("occam", world, space, loss, ExperimentParams(n=50, delta=0.99),
                              200, make_rng(7, "demo", "loose"))
print(rep.violation_rate, rep.passed)
