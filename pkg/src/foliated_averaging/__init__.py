"""Stochastic averaging for diffusions on foliated spaces.

Simulate Stratonovich SDEs whose unperturbed trajectories stay on compact
leaves, build the leaf-averaged transversal ODE, and measure how perturbed
paths track it as the perturbation size shrinks.
"""
__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DomainError,
    EnvelopeError,
    FitError,
    FoliatedError,
    FoliationViolation,
    HorizonError,
    JacobianMissing,
    MeasureUnknown,
    ParameterError,
    ParseError,
    SchemeError,
    ValidationError,
)
from .geometry import (
    Box,
    CylinderChart,
    FoliatedChart,
    LineChart,
    SphereChart,
    VectorField,
    constant_field,
    decompose_vector,
    linear_field,
    verify_foliated,
    vertical_projection,
)
from .systems import FoliatedSystem, cylinder_system, scalar_linear_system, sphere_system
from .sde import (
    NoisePath,
    PathBatch,
    RescaledPath,
    Trajectory,
    fast_step,
    generate_noise,
    integrate_coupled,
    integrate_stratonovich,
    rescaled_view,
    simulate_replicas,
)
from .averaging import (
    AveragedField,
    AveragedPath,
    ErgodicRate,
    averaged_field,
    delta_diagnostic,
    fit_eta,
    leaf_average_quadrature,
    leaf_average_timeseries,
    solve_averaged_ode,
)
from .experiments import (
    McEstimate,
    RateBound,
    RateFit,
    estimate_coupled_error,
    estimate_delta,
    estimate_exit_probability,
    estimate_lyapunov,
    fit_epsilon_order,
    fit_time_envelope,
    strong_error_order,
    verify_theorem,
)
from .config import RunConfig, parse_config
