"""Transversal sup-error against the averaged path, fitted bound and exit probabilities."""
# %%
from foliated_averaging import experiments as ex
from foliated_averaging.systems import cylinder_system

# %% Sup-error over the slow horizon, dominated by C1 eps^alpha + C2 eta(t |ln eps|^(2 beta / p)).
s = cylinder_system(k=(1.0, 0.0, 0.0))
res = ex.verify_theorem(s, [0.2, 0.1, 0.05, 0.025], t=1.0, p=2.0, replicas=200, seed=1)
for row in res.table.rows:
    print(f"eps={row.epsilon:<6} {row.estimate.value:.5f}")
print(f"exponent {res.fit.slope:.3f}, constants {res.bound.constants}, dominated {res.bound.dominates()}")

# %% Probability of leaving the gamma-shrunk domain before T_gamma.
lin = cylinder_system(perturbation="linear")
exits = ex.estimate_exit_probability(lin, 0.25, 2.0, [0.2, 0.1, 0.05], replicas=400, seed=1)
for row in exits.rows:
    print(f"eps={row.epsilon:<5} P={row.probability:.4f} wilson=[{row.wilson_low:.4f}, {row.wilson_high:.4f}]"
          f" bound={row.bound:.3g}")
