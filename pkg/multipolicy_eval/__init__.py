"""
multipolicy-eval - evaluate many policies of a tabular finite-horizon MDP at once
"""

from multipolicy_eval.caesar import CaesarConfig, EvaluationReport, evaluate_policies, mc_baseline
from multipolicy_eval.identification import identify
from multipolicy_eval.march import build_cover, march_estimate, march_estimate_all
from multipolicy_eval.models import PolicyTable, TabularMdp

__version__ = "0.1.0"
__all__ = [
    "CaesarConfig",
    "EvaluationReport",
    "PolicyTable",
    "TabularMdp",
    "build_cover",
    "evaluate_policies",
    "identify",
    "march_estimate",
    "march_estimate_all",
    "mc_baseline",
]
