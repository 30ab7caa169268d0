"""Leaf averages and the averaged ODE on the cylinder and the sphere."""
# %%
import numpy as np

from foliated_averaging.averaging import averaged_field, leaf_average_quadrature, solve_averaged_ode
from foliated_averaging.systems import cylinder_system, sphere_system

# %% Quadrature over a circle leaf: the linear push x*e1 averages to r/2.
cyl = cylinder_system(perturbation="linear", r_max=3.0)
for r in (0.5, 1.0, 2.0):
    q = leaf_average_quadrature(cyl, cyl.vertical_component(0), np.array([r, 0.0]))
    print(f"cylinder r={r}: Q = {q:.6f}")

# %% Sphere leaves: constant, radial and linear pushes.
for kind in ("constant", "radial", "linear"):
    s = sphere_system(perturbation=kind)
    q = leaf_average_quadrature(s, s.vertical_component(0), np.array([1.2]))
    print(f"sphere {kind:8s} r=1.2: Q = {q:.6f}")

# %% Averaged path from the tabulated field, with boundary hit times.
Q = averaged_field(cyl)
path = solve_averaged_ode(Q, np.array([1.0, 0.0]), 5.0, 1e-3, cyl.chart.vertical_domain, gammas=[0.25])
print(f"v(1) = {path(1.0)}, exact r = {np.exp(0.5):.6f}")
print(f"T0 = {path.T0:.6f}, T_0.25 = {path.T_gamma[0.25]:.6f}")
