"""Contrasts of stacked trajectory estimates and global/simultaneous
inference.

Builds K matrices for rate-of-change effects, estimates the covariance
of the stacked estimator from the influence matrix, and runs the global
Wald and maximum tests plus per-contrast local tests under unadjusted,
Bonferroni, and maximum-procedure multiplicity control, with matching
simultaneous confidence intervals.

Rejection decisions in the maximum family are made against the
rectangle-probability quantile, so the global maximum test rejects
exactly when at least one max-adjusted local test does.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import StackedEstimate
from .errors import (DegenerateContrastError, InputError,
                     SingularCorrelationError)
from .mvn import (MvnConfig, chisq_cdf, mvn_rect_prob, mvn_rect_quantile,
                  normal_cdf, normal_quantile)

__all__ = [
    "ContrastMatrix",
    "CovarianceEstimate",
    "ContrastResult",
    "WaldTest",
    "MaxTest",
    "LocalTest",
    "TestReport",
    "build_contrast",
    "empirical_covariance",
    "contrast_estimate",
    "wald_test",
    "max_test",
    "local_tests",
    "simultaneous_ci",
    "full_report",
]


@dataclass(frozen=True)
class ContrastMatrix:
    """k x 2*tau contrast matrix with its construction kind."""

    matrix: np.ndarray
    kind: str  # "baseline" | "adjacent" | "custom"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] % 2:
            raise InputError("contrast matrix must be k x 2*tau with k >= 1")
        zero_rows = np.nonzero(~np.any(m != 0.0, axis=1))[0]
        if zero_rows.size:
            raise InputError(f"contrast matrix has all-zero row {zero_rows[0] + 1}")

    @property
    def k(self) -> int:
        return self.matrix.shape[0]


def build_contrast(kind: str, tau: int, matrix: np.ndarray | None = None) -> ContrastMatrix:
    """Contrast matrices over the stacked vector (theta', theta'').

    ``baseline`` row j compares the change from baseline to time j
    between the two policies; ``adjacent`` row j compares the change
    between times j-1 and j.  ``custom`` validates a caller matrix.
    """
    if kind == "custom":
        if matrix is None:
            raise InputError("custom contrast requires a matrix")
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != 2 * tau:
            raise InputError(
                f"custom contrast must have {2 * tau} columns, got shape {m.shape}")
        return ContrastMatrix(matrix=m, kind="custom")
    if kind not in ("baseline", "adjacent"):
        raise InputError(f"unknown contrast kind {kind!r}")
    if tau < 2:
        raise InputError(f"{kind} contrast requires tau >= 2")
    rows = []
    for j in range(2, tau + 1):
        row = np.zeros(2 * tau)
        if kind == "baseline":
            row[0] = 1.0
            row[j - 1] = -1.0
            row[tau] = -1.0
            row[tau + j - 1] = 1.0
        else:
            row[j - 2] = 1.0
            row[j - 1] = -1.0
            row[tau + j - 2] = -1.0
            row[tau + j - 1] = 1.0
        rows.append(row)
    return ContrastMatrix(matrix=np.array(rows), kind=kind)


@dataclass(frozen=True)
class CovarianceEstimate:
    """Covariance of the stacked estimator: empirical covariance of the
    influence columns divided by n."""

    s_n: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s_n, dtype=np.float64)
        s = 0.5 * (s + s.T)
        object.__setattr__(self, "s_n", s)


def empirical_covariance(stacked: StackedEstimate) -> CovarianceEstimate:
    """Plug-in covariance from the estimated influence matrix.

    Sample covariance with divisor n-1, then divided by n.  This is the
    conventional plug-in and is known to be anti-conservative in finite
    samples (it ignores the first-order bias of the covariance estimand).
    """
    n = stacked.n
    centered = stacked.eif - stacked.eif.mean(axis=0)
    s_n = (centered.T @ centered) / (n - 1) / n
    return CovarianceEstimate(s_n=s_n)


@dataclass(frozen=True)
class ContrastResult:
    """Contrast estimate with its standardized statistics.

    ``t_star[j] = (nu_hat[j] - h[j]) / sqrt(d_star[j])`` and ``r_star``
    is the correlation matrix of the standardized vector.
    """

    nu_hat: np.ndarray
    s_star: np.ndarray
    d_star: np.ndarray
    r_star: np.ndarray
    t_star: np.ndarray
    h: np.ndarray
    contrast_kind: str

    @property
    def k(self) -> int:
        return self.nu_hat.shape[0]


def contrast_estimate(stacked: StackedEstimate, contrast: ContrastMatrix,
                      h: np.ndarray | None = None) -> ContrastResult:
    """nu_hat = K theta_hat with S* = K S_n K^T and its standardization."""
    kmat = contrast.matrix
    if kmat.shape[1] != stacked.theta_hat.shape[0]:
        raise InputError(
            f"contrast has {kmat.shape[1]} columns but the stacked estimate "
            f"has {stacked.theta_hat.shape[0]} components")
    if h is None:
        h = np.zeros(kmat.shape[0])
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (kmat.shape[0],):
        raise InputError(f"hypothesis vector must have length {kmat.shape[0]}")

    s_n = empirical_covariance(stacked).s_n
    nu_hat = kmat @ stacked.theta_hat
    s_star = kmat @ s_n @ kmat.T
    s_star = 0.5 * (s_star + s_star.T)
    d_star = np.diag(s_star).copy()
    bad = np.nonzero(d_star <= 1e-14)[0]
    if bad.size:
        raise DegenerateContrastError(
            f"contrast row {bad[0] + 1} has (numerically) zero variance")
    scale = 1.0 / np.sqrt(d_star)
    r_star = s_star * np.outer(scale, scale)
    np.fill_diagonal(r_star, 1.0)
    t_star = (nu_hat - h) * scale
    return ContrastResult(nu_hat=nu_hat, s_star=s_star, d_star=d_star,
                          r_star=r_star, t_star=t_star, h=h,
                          contrast_kind=contrast.kind)


@dataclass(frozen=True)
class WaldTest:
    statistic: float
    df: int
    p: float


@dataclass(frozen=True)
class MaxTest:
    statistic: float
    p: float
    q_alpha: float
    mc_error: float
    reject: bool
    precision_warning: str | None = None


@dataclass(frozen=True)
class LocalTest:
    j: int
    estimate: float
    se: float
    t: float
    p_unadjusted: float
    p_bonferroni: float
    p_max: float
    reject_unadjusted: bool
    reject_bonferroni: bool
    reject_max: bool
    ci_pointwise: tuple[float, float]
    ci_bonferroni: tuple[float, float]
    ci_max: tuple[float, float]


def _stabilized_correlation(r_star: np.ndarray,
                            jitter: tuple[float, ...] = (0.0, 1e-10, 1e-8, 1e-6)) -> np.ndarray:
    k = r_star.shape[0]
    for eps in jitter:
        candidate = r_star + eps * np.eye(k)
        try:
            np.linalg.cholesky(candidate)
        except np.linalg.LinAlgError:
            continue
        if eps > 0.0:
            # renormalize to unit diagonal after jittering
            d = np.sqrt(np.diag(candidate))
            candidate = candidate / np.outer(d, d)
            np.fill_diagonal(candidate, 1.0)
        return candidate
    raise SingularCorrelationError(
        "correlation matrix is not positive definite after the jitter schedule")


def wald_test(result: ContrastResult) -> WaldTest:
    """Global Wald test: T*^T (R*)^-1 T* against chi-square with k df."""
    k = result.k
    r_used = _stabilized_correlation(result.r_star)
    evals, evecs = np.linalg.eigh(r_used)
    lam_max = float(evals.max())
    if lam_max <= 0.0 or float(evals.min()) < lam_max * 1e-12:
        raise SingularCorrelationError(
            "correlation matrix condition number exceeds 1e12; "
            "consider a smaller set of contrasts")
    rotated = evecs.T @ result.t_star
    statistic = float(np.sum(rotated * rotated / evals))
    p = float(np.clip(1.0 - chisq_cdf(statistic, k), 0.0, 1.0))
    return WaldTest(statistic=statistic, df=k, p=p)


def max_test(result: ContrastResult, alpha: float = 0.05,
             mvn_config: MvnConfig | None = None) -> MaxTest:
    """Global maximum test with its rectangle-probability quantile."""
    if mvn_config is None:
        mvn_config = MvnConfig()
    r_used = _stabilized_correlation(result.r_star, mvn_config.jitter)
    statistic = float(np.max(np.abs(result.t_star)))
    g, se = mvn_rect_prob(statistic, r_used, mvn_config)
    p = float(np.clip(1.0 - g, 0.0, 1.0))
    q_alpha = mvn_rect_quantile(1.0 - alpha, r_used, mvn_config)
    warning = None
    if se > mvn_config.target_se:
        warning = (f"rectangle-probability standard error {se:.2e} exceeds "
                   f"target {mvn_config.target_se:.2e}")
    return MaxTest(statistic=statistic, p=p, q_alpha=q_alpha, mc_error=float(se),
                   reject=statistic > q_alpha, precision_warning=warning)


def local_tests(result: ContrastResult, alpha: float = 0.05,
                mvn_config: MvnConfig | None = None,
                q_alpha: float | None = None) -> list[LocalTest]:
    """Per-contrast tests and intervals under all three threshold rules.

    The max-adjusted p-value is floored at the unadjusted one (the exact
    inequality that its Monte Carlo estimate can violate only by noise).
    """
    if mvn_config is None:
        mvn_config = MvnConfig()
    k = result.k
    r_used = _stabilized_correlation(result.r_star, mvn_config.jitter)
    z_point = normal_quantile(1.0 - alpha / 2.0)
    z_bonf = normal_quantile(1.0 - alpha / (2.0 * k))
    if q_alpha is None:
        q_alpha = mvn_rect_quantile(1.0 - alpha, r_used, mvn_config)

    out = []
    for j in range(k):
        t_j = float(result.t_star[j])
        se_j = float(np.sqrt(result.d_star[j]))
        est = float(result.nu_hat[j])
        p_unadj = float(np.clip(2.0 * (1.0 - normal_cdf(abs(t_j))), 0.0, 1.0))
        p_bonf = float(min(1.0, k * p_unadj))
        g_j, _ = mvn_rect_prob(abs(t_j), r_used, mvn_config)
        p_max = float(np.clip(max(1.0 - g_j, p_unadj), 0.0, 1.0))
        out.append(LocalTest(
            j=j + 1,
            estimate=est,
            se=se_j,
            t=t_j,
            p_unadjusted=p_unadj,
            p_bonferroni=p_bonf,
            p_max=p_max,
            reject_unadjusted=abs(t_j) > z_point,
            reject_bonferroni=abs(t_j) > z_bonf,
            reject_max=abs(t_j) > q_alpha,
            ci_pointwise=(est - z_point * se_j, est + z_point * se_j),
            ci_bonferroni=(est - z_bonf * se_j, est + z_bonf * se_j),
            ci_max=(est - q_alpha * se_j, est + q_alpha * se_j),
        ))
    return out


def simultaneous_ci(result: ContrastResult, alpha: float = 0.05,
                    rule: str = "max", mvn_config: MvnConfig | None = None,
                    q_alpha: float | None = None) -> list[tuple[float, float]]:
    """Intervals nu_hat_j +/- c sqrt(S*_jj) for the chosen threshold rule."""
    k = result.k
    if rule == "pointwise":
        c = normal_quantile(1.0 - alpha / 2.0)
    elif rule == "bonferroni":
        c = normal_quantile(1.0 - alpha / (2.0 * k))
    elif rule == "max":
        if q_alpha is None:
            if mvn_config is None:
                mvn_config = MvnConfig()
            r_used = _stabilized_correlation(result.r_star, mvn_config.jitter)
            q_alpha = mvn_rect_quantile(1.0 - alpha, r_used, mvn_config)
        c = q_alpha
    else:
        raise InputError(f"unknown CI rule {rule!r}")
    half = c * np.sqrt(result.d_star)
    return [(float(result.nu_hat[j] - half[j]), float(result.nu_hat[j] + half[j]))
            for j in range(k)]


@dataclass(frozen=True)
class TestReport:
    """Full inference output for one contrast of one stacked estimate."""

    contrast_kind: str
    alpha: float
    result: ContrastResult
    wald: WaldTest
    max: MaxTest
    locals: list[LocalTest]

    def to_dict(self) -> dict:
        return {
            "contrast_kind": self.contrast_kind,
            "alpha": self.alpha,
            "wald": {"stat": self.wald.statistic, "df": self.wald.df, "p": self.wald.p},
            "max": {"stat": self.max.statistic, "p": self.max.p,
                    "q": self.max.q_alpha, "mc_error": self.max.mc_error},
            "locals": [
                {"j": lt.j, "estimate": lt.estimate, "se": lt.se, "t": lt.t,
                 "p_unadj": lt.p_unadjusted, "p_bonf": lt.p_bonferroni,
                 "p_max": lt.p_max,
                 "ci_pointwise": list(lt.ci_pointwise),
                 "ci_bonf": list(lt.ci_bonferroni),
                 "ci_max": list(lt.ci_max)}
                for lt in self.locals
            ],
        }


def full_report(stacked: StackedEstimate, contrast: ContrastMatrix,
                alpha: float = 0.05, h: np.ndarray | None = None,
                mvn_config: MvnConfig | None = None) -> TestReport:
    """Run the whole battery: contrast, Wald, maximum, locals, CIs."""
    if mvn_config is None:
        mvn_config = MvnConfig()
    result = contrast_estimate(stacked, contrast, h)
    wald = wald_test(result)
    mx = max_test(result, alpha, mvn_config)
    locs = local_tests(result, alpha, mvn_config, q_alpha=mx.q_alpha)
    return TestReport(contrast_kind=contrast.kind, alpha=alpha, result=result,
                      wald=wald, max=mx, locals=locs)
