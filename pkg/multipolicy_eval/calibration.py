"""
Calibration of the unspecified universal constants.

Each constant is binary-searched on a log scale for the smallest value whose
statistical property holds in at least `target_rate` of seeded runs on a
fixed reference instance.
"""

import logging
import math
from collections.abc import Callable
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from multipolicy_eval.coarse import CoarseConfig, coarse_estimate, coarse_event_holds
from multipolicy_eval.config import CALIBRATED_CONSTANTS, Constants, dump_constants
from multipolicy_eval.experiments import GeneratorSpec
from multipolicy_eval.ides import IdesConfig, MixtureDataSource, density_l1_error, run_ides_all
from multipolicy_eval.mdp import exact_visitation
from multipolicy_eval.models import MixtureWeights
from multipolicy_eval.sampler import Phase, RngStream

logger = logging.getLogger("multipolicy_eval")


class CalibrationConfig(BaseModel):
    """
    Reference suite and search range.

    Attributes:
        reference: Instance the properties are checked on.
        epsilon: Accuracy used by both properties.
        delta: Failure probability used by both properties.
        runs: Seeded runs per candidate value.
        target_rate: Fraction of runs that must satisfy the property.
        low: Lower end of the search range.
        high: Upper end of the search range.
        steps: Bisection steps on log(value).
        mom_reps: Median-of-Means repetitions during IDES calibration.
        base_seed: Seed of the first run.
        output: Where calibrate_constants writes the constants file.
    """

    model_config = ConfigDict(extra="forbid")

    reference: GeneratorSpec = Field(default_factory=lambda: GeneratorSpec(family="random", S=4, A=2, H=3, K=2))
    epsilon: float = Field(default=0.05, gt=0, lt=1)
    delta: float = Field(default=0.1, gt=0, lt=1)
    runs: int = Field(default=20, ge=1)
    target_rate: float = Field(default=0.85, gt=0, le=1)
    low: float = Field(default=0.25, gt=0)
    high: float = Field(default=64.0, gt=0)
    steps: int = Field(default=8, ge=1)
    mom_reps: int = Field(default=3, ge=1)
    base_seed: int = Field(default=0, ge=0)
    output: Path | None = None


def log_bisect(passes: Callable[[float], bool], low: float, high: float, steps: int) -> float:
    """
    Smallest passing value in [low, high], up to a factor (high / low)^(1 / 2^steps).

    The predicate is assumed monotone. When even `high` fails it is returned
    with a warning.
    """
    if passes(low):
        return low
    if not passes(high):
        logger.warning("Calibration target not met at the upper end %.4g", high)
        return high
    for _ in range(steps):
        mid = math.sqrt(low * high)
        if passes(mid):
            high = mid
        else:
            low = mid
    return high


def _success_rate(check: Callable[[RngStream], bool], cfg: CalibrationConfig) -> float:
    hits = sum(check(RngStream(cfg.base_seed + run)) for run in range(cfg.runs))
    return hits / cfg.runs


def calibrate_coarse_constant(cfg: CalibrationConfig) -> float:
    """
    Smallest C for which |d_hat - d| <= max(eps, d / 4) holds simultaneously often enough.

    Every reference policy is estimated separately with the single-policy sample size.
    """
    mdp, policies = cfg.reference.build()
    exact = [exact_visitation(mdp, policy).table for policy in policies]

    def passes(c_univ: float) -> bool:
        coarse_cfg = CoarseConfig(epsilon=cfg.epsilon, delta=cfg.delta, c_univ=c_univ)

        def check(rng: RngStream) -> bool:
            return all(
                coarse_event_holds(
                    coarse_estimate(mdp, policy, coarse_cfg, rng.derive(Phase.COARSE, k)).table.table,
                    exact[k],
                    cfg.epsilon,
                )
                for k, policy in enumerate(policies)
            )

        rate = _success_rate(check, cfg)
        logger.info("C=%.4g: coarse event rate %.2f", c_univ, rate)
        return rate >= cfg.target_rate

    return log_bisect(passes, cfg.low, cfg.high, cfg.steps)


def calibrate_ides_constant(cfg: CalibrationConfig) -> float:
    """
    Smallest C_h for which every step's L1 density error is at most eps / (4 H) often enough.

    IDES runs on exact visitation tables with the uniform mixture as sampling law,
    so only the density fit is calibrated.
    """
    mdp, policies = cfg.reference.build()
    H = mdp.horizon
    d = np.stack([exact_visitation(mdp, policy).table for policy in policies])
    alpha = MixtureWeights.uniform(len(policies))
    mu = np.einsum("k,khsa->hsa", alpha.alpha, d)

    def passes(c_h: float) -> bool:
        ides_cfg = IdesConfig(epsilon=cfg.epsilon, delta=cfg.delta, c_h=c_h, mom_reps=cfg.mom_reps)

        def check(rng: RngStream) -> bool:
            source = MixtureDataSource(mdp, policies, alpha, rng, Phase.IDES)
            holdout = MixtureDataSource(mdp, policies, alpha, rng, Phase.HOLDOUT)
            results = run_ides_all(policies, d, mu, source, holdout, ides_cfg)
            return all(
                np.all(density_l1_error(mu, result.weights.ratio(), d[k]) <= cfg.epsilon / (4 * H))
                for k, result in enumerate(results)
            )

        rate = _success_rate(check, cfg)
        logger.info("C_h=%.4g: density accuracy rate %.2f", c_h, rate)
        return rate >= cfg.target_rate

    return log_bisect(passes, cfg.low, cfg.high, cfg.steps)


def calibrate_constants(cfg: CalibrationConfig, base: Constants = CALIBRATED_CONSTANTS) -> Constants:
    """
    Calibrate C and C_h, keep the remaining constants of `base` and write the file when configured.
    """
    constants = base.model_copy(
        update={"c_univ": calibrate_coarse_constant(cfg), "c_h": calibrate_ides_constant(cfg)}
    )
    if cfg.output is not None:
        dump_constants(constants, cfg.output)
        logger.info("Wrote calibrated constants to %s", cfg.output)
    return constants
