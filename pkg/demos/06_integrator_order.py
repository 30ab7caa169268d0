"""Strong order of the Heun scheme on dY = Y o dB."""
# %%
import numpy as np

from foliated_averaging import experiments as ex
from foliated_averaging.systems import scalar_linear_system

# %%
exact = lambda x0, B: np.column_stack([x0[0] * np.exp(B[:, 0]), np.full(len(B), x0[1])])
fit = ex.strong_error_order(scalar_linear_system(), exact, paths=1000, seed=1)
print(f"strong order {fit.slope:.3f} (r^2 {fit.r_squared:.4f})")
