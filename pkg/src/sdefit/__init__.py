"""Parameter estimation for multidimensional SDEs from high-frequency data.

Drift: approximate maximum likelihood on the Riemann-discretized
likelihood. Diffusion: closed-form quadratic-variation estimators.
A Monte Carlo harness checks consistency and asymptotic normality.
"""

from .core import (
    DiscreteRecord,
    Form1,
    Form2,
    LinearDrift,
    LinearDriftKron,
    ModelSpec,
    OUTag,
    Parameter,
    ScalingRegime,
    check_drift_dissipativity,
    constant,
    eval_a,
    form1_diffusion,
    form2_diffusion,
    kron_drift,
    linear_drift,
)
from .diffusion import discretized_qv, estimate_form1, estimate_form2
from .drift import (
    DriftFit,
    PenaltySpec,
    amle_kron,
    amle_linear,
    amle_newton,
    discretized_loglik,
    loglik_gradient,
)
from .estimators import AMLEDriftEstimator, QVDiffusionEstimator
from .exceptions import (
    Blowup,
    ConfigError,
    NumericalError,
    SDEFitError,
    SingularDiffusion,
    SingularGram,
    SingularIntegral,
    SingularSigma,
    UnstableH,
    ValidationError,
)
from .simulate import SimConfig, euler_maruyama, exact_ou

__version__ = "0.1.0"
