"""Risk-constrained policy optimization for MDPs.

Library plus CLI covering empirical CVaR machinery, a budget-augmented
MDP construction, trajectory policy gradient and incremental
actor-critic training on multi-timescale schedules, and an optimal
stopping benchmark environment.
"""

from .risk import EmpiricalDistribution, RiskSpec, cvar, h_alpha, tail_probability, value_at_risk

__version__ = "0.1.0"

__all__ = [
    "EmpiricalDistribution",
    "RiskSpec",
    "cvar",
    "h_alpha",
    "tail_probability",
    "value_at_risk",
    "__version__",
]
