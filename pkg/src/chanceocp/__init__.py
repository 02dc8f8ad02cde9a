"""Chance-constrained optimal control with biased kernel density estimators.

The pipeline draws samples of the uncertain parameters by HMC, replaces
each chance constraint with a conservative kernel estimate of its violation
probability, transcribes the problem with Legendre-Gauss-Radau collocation
and solves the resulting NLP by SQP with mesh refinement.
"""
from ._accel import backend_name
from .benchmarks import (LunarParams, analytic_deterministic_optimum, lunar_ccocp,
                         lunar_deterministic, monte_carlo_validate, run_batch)
from .chance import ChanceConstraintSpec, Guard, kde_violation_estimate
from .hmc import HmcConfig, SampleSet, sample
from .kernels import BiasedKernel, KernelKind, bandwidth_select
from .lgr import Mesh
from .ocp import BandwidthMode, CcocpSolution, OcpDefinition, SolveConfig, solve_ccocp
from .prob_model import RandomVectorSpec, bimodal, normal

__version__ = "0.1.0"

__all__ = [
    "BandwidthMode",
    "BiasedKernel",
    "CcocpSolution",
    "ChanceConstraintSpec",
    "Guard",
    "HmcConfig",
    "KernelKind",
    "LunarParams",
    "Mesh",
    "OcpDefinition",
    "RandomVectorSpec",
    "SampleSet",
    "SolveConfig",
    "analytic_deterministic_optimum",
    "backend_name",
    "bandwidth_select",
    "bimodal",
    "kde_violation_estimate",
    "lunar_ccocp",
    "lunar_deterministic",
    "monte_carlo_validate",
    "normal",
    "run_batch",
    "sample",
    "solve_ccocp",
]
