"""Modified treatment policies and their row-wise application.

A policy maps the natural exposure value (and optionally the history) to
an intervened value.  The additive shift follows the reduce-by-delta
form: the exposure is lowered by ``delta`` unless that would cross the
declared bound, in which case it is left unchanged.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .data import LongitudinalDataset, history_features
from .errors import ConfigurationError, PolicyError

__all__ = [
    "Policy",
    "identity",
    "additive_shift",
    "threshold",
    "custom",
    "is_identity",
    "apply",
    "apply_to_data",
    "parse_policy",
]

# Bound sources for the shift variant: a constant, a covariate column of
# the current L_t block ("L", j), or a callback (a, h, t) -> bound.
BoundSource = Union[None, float, tuple[str, int], Callable[..., float]]


@dataclass(frozen=True)
class Policy:
    variant: str  # "identity" | "shift" | "threshold" | "custom"
    label: str
    delta: float = 0.0
    bound: BoundSource = None
    floor: float = 0.0
    func: Callable[..., float] | None = None
    uses_history: bool = True

    def __post_init__(self):
        if self.variant not in ("identity", "shift", "threshold", "custom"):
            raise ConfigurationError(f"unknown policy variant: {self.variant!r}")
        if self.variant == "custom" and self.func is None:
            raise ConfigurationError("custom policy requires a callback")


def identity(label: str = "identity") -> Policy:
    return Policy(variant="identity", label=label, uses_history=False)


def additive_shift(delta: float, bound: BoundSource = None,
                   label: str | None = None) -> Policy:
    if label is None:
        label = f"shift(a - {delta:g})" if bound is None else f"shift(a - {delta:g}, bounded)"
    return Policy(variant="shift", label=label, delta=float(delta), bound=bound,
                  uses_history=bound is not None)


def threshold(floor: float, label: str | None = None) -> Policy:
    return Policy(variant="threshold", label=label or f"threshold({floor:g})",
                  floor=float(floor), uses_history=False)


def custom(func: Callable[..., float], label: str = "custom",
           uses_history: bool = True) -> Policy:
    return Policy(variant="custom", label=label, func=func, uses_history=uses_history)


def is_identity(policy: Policy) -> bool:
    """Structural check: true only for the identity variant.

    A zero-delta shift is deliberately not identity, so its density-ratio
    path still runs (and should estimate a ratio of ~1).
    """
    return policy.variant == "identity"


def _resolve_bound(policy: Policy, a: float, h, t: int, bound):
    if bound is not None:
        return float(bound)
    src = policy.bound
    if src is None:
        return None
    if isinstance(src, tuple):
        raise ConfigurationError(
            f"policy {policy.label!r} needs a bound value for its column source")
    if isinstance(src, (int, float)):
        return float(src)
    if callable(src):
        return float(src(a, h, t))
    raise ConfigurationError(f"unusable bound source {src!r}")


def apply(policy: Policy, a: float, h=None, t: int = 1, bound=None) -> float:
    """Intervened exposure for a single observation.

    ``bound`` must be supplied when the shift policy declares a bound
    source that cannot be resolved from (a, h, t) alone.
    """
    a = float(a)
    if policy.variant == "identity":
        return a
    if policy.variant == "shift":
        b = _resolve_bound(policy, a, h, t, bound)
        shifted = a - policy.delta
        if b is None or shifted >= b:
            return shifted
        return a
    if policy.variant == "threshold":
        return max(a, policy.floor)
    out = float(policy.func(a, h, t))
    if not np.isfinite(out):
        raise PolicyError(f"custom policy {policy.label!r} returned non-finite value {out}")
    return out


def apply_to_data(policy: Policy, data: LongitudinalDataset, t: int) -> np.ndarray:
    """Vectorized intervened exposures d(A_t, H_t) for all individuals."""
    a = data.exposures[:, t - 1]
    if policy.variant == "identity":
        return a.copy()
    if policy.variant == "shift":
        shifted = a - policy.delta
        src = policy.bound
        if src is None:
            return shifted
        if isinstance(src, tuple):
            kind, j = src
            if kind != "L":
                raise ConfigurationError(f"unknown bound column source {src!r}")
            block = data.covariates[t - 1]
            if not 1 <= j <= block.shape[1]:
                raise ConfigurationError(
                    f"bound column L{t}_{j} does not exist (p_{t} = {block.shape[1]})")
            bounds = block[:, j - 1]
        elif isinstance(src, (int, float)):
            bounds = np.full(a.shape, float(src))
        else:
            h = history_features(data, t)
            bounds = np.array([float(src(a[i], h[i], t)) for i in range(a.shape[0])])
        return np.where(shifted >= bounds, shifted, a)
    if policy.variant == "threshold":
        return np.maximum(a, policy.floor)
    h = history_features(data, t)
    out = np.array([apply(policy, a[i], h[i], t) for i in range(a.shape[0])])
    if not np.all(np.isfinite(out)):
        raise PolicyError(f"custom policy {policy.label!r} returned non-finite values")
    return out


def parse_policy(spec: str) -> Policy:
    """Parse the CLI policy syntax.

    ``identity`` | ``shift:s`` | ``shift:s,bound=C`` | ``shift:s,bound=L{t}_j``
    | ``threshold:f``.  ``shift:s`` moves each exposure by s (negative s
    shifts it down), so ``shift:-1`` is the lower-by-one intervention.
    """
    spec = spec.strip()
    if spec == "identity":
        return identity()
    if spec.startswith("shift:"):
        body = spec[len("shift:"):]
        parts = [p.strip() for p in body.split(",")]
        try:
            shift_by = float(parts[0])
        except ValueError as exc:
            raise ConfigurationError(f"bad shift amount in policy spec {spec!r}") from exc
        bound: BoundSource = None
        for extra in parts[1:]:
            if not extra.startswith("bound="):
                raise ConfigurationError(f"unknown policy option {extra!r} in {spec!r}")
            value = extra[len("bound="):]
            col = re.fullmatch(r"L\{t\}_([1-9][0-9]*)", value)
            if col:
                bound = ("L", int(col.group(1)))
            else:
                try:
                    bound = float(value)
                except ValueError as exc:
                    raise ConfigurationError(f"bad bound {value!r} in {spec!r}") from exc
        return additive_shift(delta=-shift_by, bound=bound, label=spec)
    if spec.startswith("threshold:"):
        try:
            floor = float(spec[len("threshold:"):])
        except ValueError as exc:
            raise ConfigurationError(f"bad threshold in policy spec {spec!r}") from exc
        return threshold(floor, label=spec)
    raise ConfigurationError(f"unrecognized policy spec {spec!r}")
