"""A non-compact leaf: dy = y o dB + eps dt grows exponentially in t."""
# %%
from foliated_averaging import experiments as ex
from foliated_averaging.errors import EnvelopeError
from foliated_averaging.systems import scalar_linear_system

# %%
s = scalar_linear_system()
table = ex.estimate_coupled_error(s, ex.ambient_observable(0), [0.1], [1.0, 2.0, 4.0, 8.0], replicas=400, seed=1)
for row in table.rows:
    print(f"t={row.t:<4} {row.estimate.value:.4f}")

# %% The polynomial envelope is rejected.
try:
    ex.fit_time_envelope(table, 0.1, "cor22")
except EnvelopeError as exc:
    print("rejected:", exc)
