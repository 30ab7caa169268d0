"""Coupled error between perturbed and unperturbed paths: linear in epsilon."""
# %%
from foliated_averaging import experiments as ex
from foliated_averaging.systems import cylinder_system

# %% Same noise drives both systems; the L^2 gap in pi_1 at t=1.
s = cylinder_system(k=(1.0, 0.0, 0.0))
table = ex.estimate_coupled_error(s, 0, [0.2, 0.1, 0.05], [0.5, 1.0, 2.0], p=2.0, replicas=400, seed=1)
for row in table.rows:
    e = row.estimate
    print(f"eps={row.epsilon:<5} t={row.t:<4} {e.value:.5f} [{e.ci_low:.5f}, {e.ci_high:.5f}]")

# %% Order in epsilon and the time envelope.
fit = ex.fit_epsilon_order(table, 1.0)
print(f"slope in epsilon: {fit.slope:.3f}")
bound = ex.fit_time_envelope(table, 0.1, "cor22")
print(f"envelope constants {bound.constants}, growth slope {bound.growth_slope:.3f}")
