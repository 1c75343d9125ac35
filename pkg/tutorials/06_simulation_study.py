"""A small power study with the simulation harness.

Run with ``python tutorials/06_simulation_study.py`` (about a minute).
The full desk-scale tables are shipped as plans for ``flmtest simulate``.
"""
# %%
from flmtest import ExperimentPlan, ProcessSpec, SlopeSpec, bias_term, run_experiment

proc = ProcessSpec.brownian()

# %% [markdown]
# Each cell fixes a slope, a sample size and a number of trials. Trial t
# draws its curves, noise and Monte-Carlo replicates from streams derived
# from (seed, t), so the counts do not depend on how trials are scheduled.

# %%
cells = [
    ("null", SlopeSpec.zero()),
    ("KL xi=1, B=0.5", SlopeSpec.theta_kl(0.5, 1.0)),
    ("bump tau=0.05, B=1", SlopeSpec.theta_g(1.0, 0.05)),
]
for label, slope in cells:
    plan = ExperimentPlan(proc, slope, n=100, trials=100, mc_replicates=500, seed=1)
    res = run_experiment(plan)
    row = ", ".join(f"{m} {res.percentage(m):5.1f}% (+/- {res.ci_half_width(m):.1f})" for m in res.methods)
    print(f"{label:<20} {row}")

# %% [markdown]
# The signal left after projecting on k true eigenfunctions shrinks quickly
# for smooth slopes and slowly for rough ones.

# %%
for xi in (0.1, 1.0):
    slope = SlopeSpec.theta_kl(1.0, xi)
    energies = [bias_term(proc, slope, k) for k in (0, 1, 4, 16)]
    print(f"xi={xi}: remaining energy at k = 0, 1, 4, 16:", [f"{e:.2e}" for e in energies])
