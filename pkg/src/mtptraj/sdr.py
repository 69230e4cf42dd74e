"""Sequential doubly robust estimation of counterfactual outcome
trajectories.

For a target time t the engine runs the backward recursion over
s = t, ..., 1: fit the outcome regression of the current pseudo-outcome
on (A_s, H_s) out-of-fold, evaluate it at the natural and intervened
exposures, and fold it into the running influence-value assembly

    phi_s = m_s(a_s^d, h_s) - r_s(a_s, h_s) m_s(a_s, h_s) + r_s(a_s, h_s) phi_{s+1},

starting from phi_{t+1} = Y_t.  The final phi_1 column is the estimated
(uncentered) influence value whose average is the trajectory estimate.
Exposure density ratios r_s come from a probabilistic classifier on a
2n-row design (natural rows labelled 0, intervened rows labelled 1) via
the odds of the fitted class probability; they do not depend on the
target time and are estimated once per policy.

For the identity policy the density ratio is exactly 1 and the assembly
telescopes to Y_t for every individual, so the trajectory path
short-circuits to the sample means of the outcome columns.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import LongitudinalDataset, StackedEstimate, TrajectoryEstimate, history_features
from .errors import EstimationError
from .learners import (FoldAssignment, crossfit, fold_assignment,
                       make_classification_learner, make_regression_learner)
from .policy import Policy, apply_to_data, is_identity

__all__ = [
    "SdrConfig",
    "EifColumn",
    "NuisanceBundle",
    "OracleNuisances",
    "estimate_ratio",
    "sequential_regression",
    "estimate_trajectory",
    "estimate_pair",
    "assemble_eif",
]

log = logging.getLogger("mtptraj")


@dataclass(frozen=True)
class SdrConfig:
    """Estimation settings shared by all SDR runs.

    ``ratio_p_min`` clips the classifier odds to
    [p/(1-p), (1-p)/p] with p = ratio_p_min (default ~[0.0101, 99]), a
    positivity guard for the density-ratio products.
    """

    m_learner: object = None          # defaults to the regression stack
    ratio_learner: object = None      # defaults to the classification stack
    folds: int = 5
    seed: int = 1
    ratio_p_min: float = 1e-2

    def resolved_m_learner(self):
        return self.m_learner if self.m_learner is not None else make_regression_learner("stack")

    def resolved_ratio_learner(self):
        return (self.ratio_learner if self.ratio_learner is not None
                else make_classification_learner("stack"))

    @property
    def ratio_clip(self) -> tuple[float, float]:
        p = self.ratio_p_min
        return (p / (1.0 - p), (1.0 - p) / p)


@dataclass(frozen=True)
class EifColumn:
    """Estimated influence values for one (policy, target time)."""

    t: int
    policy_label: str
    values: np.ndarray  # length n

    @property
    def theta_hat(self) -> float:
        return float(np.mean(self.values))


@dataclass(frozen=True)
class NuisanceBundle:
    """Evaluated nuisances behind one influence column.

    Column s-1 of each matrix holds the time-s quantity: the density
    ratio at the natural exposure, and the outcome regression at the
    natural and intervened exposures.
    """

    t: int
    policy_label: str
    ratios: np.ndarray   # n x t
    m_nat: np.ndarray    # n x t
    m_int: np.ndarray    # n x t
    folds: FoldAssignment
    ratio_clip: tuple[float, float]


@dataclass(frozen=True)
class OracleNuisances:
    """Injected true nuisance functions (for simulation benchmarks).

    ``m(s, t, a, h)`` evaluates the time-s outcome regression for target
    t at exposure column ``a`` and history design ``h``; ``r(s, a, h)``
    evaluates the time-s density ratio.  Values are used as-is (no
    clipping).
    """

    m: Callable[[int, int, np.ndarray, np.ndarray], np.ndarray]
    r: Callable[[int, np.ndarray, np.ndarray], np.ndarray]


def estimate_ratio(data: LongitudinalDataset, policy: Policy, s: int,
                   classifier=None, folds: FoldAssignment | None = None,
                   ratio_p_min: float = 1e-2) -> np.ndarray:
    """Exposure density ratio at time s by probabilistic classification.

    Builds the 2n-row design of (exposure, history) rows with natural
    exposures labelled 0 and policy-shifted exposures labelled 1, fits
    the classifier out-of-fold at the individual level, and returns the
    clipped odds at the natural rows.
    """
    if classifier is None:
        classifier = make_classification_learner("stack")
    n = data.n
    if folds is None:
        folds = fold_assignment(n, 1, 0)
    h = history_features(data, s)
    a_nat = data.exposures[:, s - 1]
    a_int = apply_to_data(policy, data, s)
    x_nat = np.column_stack([a_nat, h])
    x_int = np.column_stack([a_int, h])
    design = np.vstack([x_nat, x_int])
    labels = np.concatenate([np.zeros(n), np.ones(n)])

    probs = np.empty(n)
    try:
        if folds.v == 1:
            model = classifier.fit(design, labels)
            probs = model.predict_prob(x_nat)
        else:
            for fold in range(folds.v):
                test = folds.fold_indices(fold)
                train = folds.labels != fold
                mask = np.concatenate([train, train])
                model = classifier.fit(design[mask], labels[mask])
                probs[test] = model.predict_prob(x_nat[test])
    except EstimationError as exc:
        raise EstimationError(
            f"density-ratio classifier failed at s={s} for policy "
            f"{policy.label!r}: {exc}") from exc
    lo, hi = ratio_p_min / (1.0 - ratio_p_min), (1.0 - ratio_p_min) / ratio_p_min
    return np.clip(probs / (1.0 - probs), lo, hi)


def sequential_regression(data: LongitudinalDataset, policy: Policy, t: int,
                          config: SdrConfig | None = None,
                          folds: FoldAssignment | None = None,
                          ratio_cache: dict[int, np.ndarray] | None = None,
                          oracle: OracleNuisances | None = None,
                          diagnostics: dict | None = None) -> tuple[EifColumn, NuisanceBundle]:
    """Backward recursion producing the influence column for target t.

    ``ratio_cache`` maps s to precomputed ratio vectors (they are shared
    across targets).  ``oracle`` swaps in true nuisances and skips all
    fitting.  Identity policies use the exact unit ratio, which makes the
    assembly telescope to Y_t regardless of the fitted regressions.
    """
    if config is None:
        config = SdrConfig()
    if not 1 <= t <= data.tau:
        raise EstimationError(f"target time t={t} out of range 1..{data.tau}")
    n = data.n
    if folds is None:
        folds = fold_assignment(n, config.folds, config.seed)
    m_learner = config.resolved_m_learner()

    identity_policy = is_identity(policy)
    ratios = np.empty((n, t))
    m_nat = np.empty((n, t))
    m_int = np.empty((n, t))

    for s in range(1, t + 1):
        if identity_policy:
            ratios[:, s - 1] = 1.0
        elif oracle is not None:
            h = history_features(data, s)
            ratios[:, s - 1] = oracle.r(s, data.exposures[:, s - 1], h)
        elif ratio_cache is not None and s in ratio_cache:
            ratios[:, s - 1] = ratio_cache[s]
        else:
            ratios[:, s - 1] = estimate_ratio(data, policy, s,
                                              classifier=config.resolved_ratio_learner(),
                                              folds=folds, ratio_p_min=config.ratio_p_min)
            if ratio_cache is not None:
                ratio_cache[s] = ratios[:, s - 1].copy()

    pseudo = data.outcomes[:, t - 1].copy()
    for s in range(t, 0, -1):
        h = history_features(data, s)
        a_nat = data.exposures[:, s - 1]
        a_int = apply_to_data(policy, data, s)
        if oracle is not None:
            m_nat[:, s - 1] = oracle.m(s, t, a_nat, h)
            m_int[:, s - 1] = oracle.m(s, t, a_int, h)
        else:
            x_nat = np.column_stack([a_nat, h])
            cf = crossfit(x_nat, pseudo, m_learner, folds)
            m_nat[:, s - 1] = cf.predict_rowwise(x_nat)
            m_int[:, s - 1] = cf.predict_rowwise(np.column_stack([a_int, h]))
            if diagnostics is not None:
                _collect_stack_weights(diagnostics, cf, s, t)
        if not (np.all(np.isfinite(m_nat[:, s - 1])) and np.all(np.isfinite(m_int[:, s - 1]))):
            raise EstimationError(f"non-finite outcome regression at (s={s}, t={t})")
        r_s = ratios[:, s - 1]
        pseudo = (m_int[:, s - 1] - r_s * m_nat[:, s - 1]) + r_s * pseudo
        if not np.all(np.isfinite(pseudo)):
            raise EstimationError(f"non-finite influence assembly at (s={s}, t={t})")

    column = EifColumn(t=t, policy_label=policy.label, values=pseudo)
    bundle = NuisanceBundle(t=t, policy_label=policy.label, ratios=ratios,
                            m_nat=m_nat, m_int=m_int, folds=folds,
                            ratio_clip=config.ratio_clip)
    return column, bundle


def _collect_stack_weights(diagnostics: dict, cf, s: int, t: int) -> None:
    weights = [m.weights for m in cf.models if hasattr(m, "weights")]
    if weights:
        diagnostics.setdefault("stack_weights", {})[f"s={s},t={t}"] = \
            np.mean(weights, axis=0).tolist()


def assemble_eif(bundle: NuisanceBundle, y_t: np.ndarray) -> np.ndarray:
    """Assemble the influence column from a bundle in the sum-over-p form
    with cumulative ratio products.

    Algebraically identical to the recursion used by
    ``sequential_regression``; kept as an independent route for
    verification.
    """
    t = bundle.t
    cumr = np.cumprod(bundle.ratios, axis=1)  # column p-1 holds prod_{k<=p} r_k
    total = bundle.m_int[:, 0].copy()
    for p in range(1, t + 1):
        m_next = y_t if p == t else bundle.m_int[:, p]
        total += cumr[:, p - 1] * (m_next - bundle.m_nat[:, p - 1])
    return total


def estimate_trajectory(data: LongitudinalDataset, policy: Policy,
                        config: SdrConfig | None = None,
                        folds: FoldAssignment | None = None,
                        oracle: OracleNuisances | None = None,
                        diagnostics: dict | None = None) -> TrajectoryEstimate:
    """SDR trajectory estimate: one influence column per time point.

    The identity policy short-circuits to the outcome columns themselves
    (the estimator is then the per-time sample mean).
    """
    if config is None:
        config = SdrConfig()
    if folds is None:
        folds = fold_assignment(data.n, config.folds, config.seed)

    if is_identity(policy):
        eif = data.outcomes.copy()
        theta = eif.mean(axis=0)
        return TrajectoryEstimate(policy_label=policy.label, theta_hat=theta, eif=eif)

    ratio_cache: dict[int, np.ndarray] = {}
    columns = []
    for t in range(1, data.tau + 1):
        column, _ = sequential_regression(data, policy, t, config, folds=folds,
                                          ratio_cache=ratio_cache, oracle=oracle,
                                          diagnostics=diagnostics)
        columns.append(column.values)
    eif = np.column_stack(columns)
    theta = eif.mean(axis=0)

    if diagnostics is not None:
        lo, hi = config.ratio_clip
        diagnostics["ratio_clip_fraction"] = {
            s: float(np.mean((r <= lo * (1 + 1e-12)) | (r >= hi * (1 - 1e-12))))
            for s, r in sorted(ratio_cache.items())}
    out_of_range = [t for t in range(1, data.tau + 1)
                    if not (data.outcomes[:, t - 1].min() <= theta[t - 1]
                            <= data.outcomes[:, t - 1].max())]
    if out_of_range:
        log.info("SDR estimates outside the observed outcome range at t=%s "
                 "(no truncation applied)", out_of_range)
        if diagnostics is not None:
            diagnostics["theta_out_of_range"] = out_of_range
    return TrajectoryEstimate(policy_label=policy.label, theta_hat=theta, eif=eif)


def estimate_pair(data: LongitudinalDataset, policy_prime: Policy,
                  policy_dprime: Policy, config: SdrConfig | None = None,
                  diagnostics: dict | None = None) -> StackedEstimate:
    """Estimate both trajectories on one shared fold assignment and stack
    them as (theta'_1..theta'_tau, theta''_1..theta''_tau)."""
    if config is None:
        config = SdrConfig()
    folds = fold_assignment(data.n, config.folds, config.seed)
    diag_prime: dict | None = {} if diagnostics is not None else None
    diag_dprime: dict | None = {} if diagnostics is not None else None
    est_prime = estimate_trajectory(data, policy_prime, config, folds=folds,
                                    diagnostics=diag_prime)
    est_dprime = estimate_trajectory(data, policy_dprime, config, folds=folds,
                                     diagnostics=diag_dprime)
    if diagnostics is not None:
        diagnostics[policy_prime.label] = diag_prime
        diagnostics[policy_dprime.label] = diag_dprime
    return StackedEstimate(
        label_prime=policy_prime.label,
        label_dprime=policy_dprime.label,
        theta_hat=np.concatenate([est_prime.theta_hat, est_dprime.theta_hat]),
        eif=np.hstack([est_prime.eif, est_dprime.eif]),
    )
