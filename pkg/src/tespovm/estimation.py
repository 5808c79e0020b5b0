"""Maximum-likelihood efficiency and dark-count estimation.

For a coherent probe of mean mu, binomial thinning by a detector of
efficiency eta gives Poisson(eta * mu) detected counts, and an added
Poissonian background of mean gamma shifts that to Poisson(eta * mu +
gamma). The per-probe log likelihood is evaluated through this closed
form with the cumulative-top-bin convention; the explicit sum over
photon numbers is kept as a cross-check route.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .calibration import CountTable, GaussianMixtureFit, ThresholdSet
from .errors import EstimationError
from .photon_stats import ProbeEnsemble, binomial_povm, poisson_pmf
from .tes_sim import AmplitudeTrace

__all__ = [
    "EfficiencyEstimate",
    "DarkRateEstimate",
    "loglik_eta",
    "loglik_eta_msum",
    "estimate_eta",
    "estimate_eta_gamma",
    "dark_rate_direct",
]

_XATOL = 1e-7
_Z_ONE_SIDED_95 = 1.6448536269514722


@dataclass(frozen=True, eq=False)
class EfficiencyEstimate:
    """Detector parameter estimates with ensemble-spread uncertainties.

    ``eta_se`` and ``gamma_se`` are standard errors of the mean across
    probes; ``None`` when fewer than two probes contributed.
    ``gamma_upper`` is a one-sided 95 percent upper bound, relevant when
    the estimate sits at the zero boundary. Skipped probes hold NaN in
    the per-probe arrays.
    """

    eta_hat: float
    eta_se: float | None
    per_probe_etas: np.ndarray
    loglik: float
    gamma_hat: float | None = None
    gamma_se: float | None = None
    gamma_upper: float | None = None
    per_probe_gammas: np.ndarray | None = None


@dataclass(frozen=True)
class DarkRateEstimate:
    """Direct dark-count rate from a no-light trace.

    ``rate`` is the fraction of pulses at or above the first threshold,
    ``upper_bound`` the Clopper-Pearson upper limit at ``confidence``.
    ``suspect`` flags the nonsensical case of every pulse firing.
    """

    rate: float
    std_error: float
    upper_bound: float
    n_pulses: int
    confidence: float
    suspect: bool


def _model_log_probs(lam: float, n_outcomes: int) -> np.ndarray:
    """Log outcome probabilities of Poisson(lam) with a cumulative top bin."""
    ns = np.arange(n_outcomes - 1)
    with np.errstate(divide="ignore"):
        body = stats.poisson.logpmf(ns, lam)
        top = stats.poisson.logsf(n_outcomes - 2, lam)
    return np.append(body, top)


def _weighted_loglik(weights: np.ndarray, log_probs: np.ndarray) -> float:
    with np.errstate(invalid="ignore"):
        terms = np.where(weights > 0, weights * log_probs, 0.0)
    return float(terms.sum())


def loglik_eta(eta: float, counts, mu: float) -> float:
    """Log likelihood of one probe's counts under efficiency ``eta``.

    Uses the thinning identity: detected counts are Poisson(eta * mu),
    with the last outcome bin absorbing the upper tail. Outcomes the
    model gives zero probability but the data populates yield ``-inf``.

    Args:
        eta: Efficiency in [0, 1].
        counts: Outcome counts (or any nonnegative weights) of length
            >= 2. The value is invariant up to scale, so proportions
            work too.
        mu: Mean photon number of the probe.
    """
    if not (0.0 <= eta <= 1.0):
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if not math.isfinite(mu) or mu < 0:
        raise ValueError(f"mu must be finite and >= 0, got {mu}")
    c = np.asarray(counts, dtype=float)
    if c.ndim != 1 or c.size < 2:
        raise ValueError("counts must be a 1-D vector with >= 2 outcomes")
    if c.min() < 0:
        raise ValueError("counts must be >= 0")
    return _weighted_loglik(c, _model_log_probs(eta * mu, c.size))


def loglik_eta_msum(eta: float, counts, mu: float, truncation: int) -> float:
    """Same likelihood through the explicit photon-number sum.

    Evaluates ``sum_m B[n, m] q_m(mu)`` with a truncated Poisson source;
    agrees with :func:`loglik_eta` once ``truncation`` covers the
    source's support. Kept as an independent route for validation.
    """
    c = np.asarray(counts, dtype=float)
    povm = binomial_povm(eta, c.size, truncation)
    q = poisson_pmf(mu, np.arange(truncation))
    probs = povm.entries @ q
    with np.errstate(divide="ignore"):
        log_probs = np.log(probs)
    return _weighted_loglik(c, log_probs)


def _check_alignment(counts: CountTable, ensemble: ProbeEnsemble):
    if counts.n_probes != ensemble.n_probes:
        raise ValueError(
            f"count table has {counts.n_probes} probes, "
            f"ensemble has {ensemble.n_probes}"
        )
    if counts.probe_ids is not None and counts.probe_ids != ensemble.ids:
        raise ValueError("count table and ensemble probe ids disagree")


def _usable_probe(col: np.ndarray, probe) -> bool:
    if col.sum() <= 0:
        warnings.warn(f"probe {probe.id}: no events, skipped", stacklevel=3)
        return False
    if probe.mean_photons == 0:
        warnings.warn(
            f"probe {probe.id}: mean_photons is 0, carries no efficiency "
            "information, skipped",
            stacklevel=3,
        )
        return False
    return True


def _maximize_eta(col, mu, gamma=0.0) -> float:
    res = optimize.minimize_scalar(
        lambda e: -_weighted_loglik(col, _model_log_probs(e * mu + gamma, col.size)),
        bounds=(0.0, 1.0),
        method="bounded",
        options={"xatol": _XATOL},
    )
    return float(res.x)


def _maximize_gamma(col, mu, eta, gamma_max) -> float:
    if gamma_max == 0:
        return 0.0
    res = optimize.minimize_scalar(
        lambda g: -_weighted_loglik(col, _model_log_probs(eta * mu + g, col.size)),
        bounds=(0.0, gamma_max),
        method="bounded",
        options={"xatol": _XATOL},
    )
    return float(res.x)


def _spread(values: np.ndarray) -> float | None:
    if values.size < 2:
        return None
    return float(values.std(ddof=1) / math.sqrt(values.size))


def estimate_eta(counts: CountTable, ensemble: ProbeEnsemble) -> EfficiencyEstimate:
    """Estimate the efficiency by per-probe ML, averaged over the ensemble.

    Each probe's likelihood is maximized over eta in [0, 1] by bounded
    scalar search (golden section with parabolic refinement, tolerance
    1e-7); the estimate is the mean of the per-probe maximizers and the
    uncertainty their ensemble spread. Degenerate probes (no events, or
    mu of zero) are skipped with a warning.

    Raises:
        EstimationError: Every probe was degenerate.
    """
    _check_alignment(counts, ensemble)
    etas = np.full(counts.n_probes, np.nan)
    for j, probe in enumerate(ensemble.probes):
        col = np.asarray(counts.column(j), dtype=float)
        if not _usable_probe(col, probe):
            continue
        etas[j] = _maximize_eta(col, probe.mean_photons)
    valid = np.isfinite(etas)
    if not valid.any():
        raise EstimationError("no usable probes: every column was degenerate")
    used = etas[valid]
    eta_hat = float(used.mean())
    loglik = sum(
        loglik_eta(eta_hat, counts.column(j), ensemble.probes[j].mean_photons)
        for j in np.nonzero(valid)[0]
    )
    return EfficiencyEstimate(
        eta_hat=eta_hat,
        eta_se=_spread(used),
        per_probe_etas=etas,
        loglik=float(loglik),
    )


def estimate_eta_gamma(
    counts: CountTable,
    ensemble: ProbeEnsemble,
    gamma_max: float = 5.0,
) -> EfficiencyEstimate:
    """Jointly estimate efficiency and dark-count rate.

    A single probe cannot separate eta from gamma (only eta * mu + gamma
    enters its distribution), so the point of attack is the pooled
    likelihood over all probes: alternating bounded 1-D maximizations in
    eta and gamma to tolerance 1e-7, then a Nelder-Mead polish. Per-probe
    spreads are taken conditionally at the pooled optimum, mirroring the
    ensemble-spread convention of :func:`estimate_eta`; with ``gamma_max
    == 0`` that reduces exactly to :func:`estimate_eta`.
    """
    if gamma_max < 0:
        raise ValueError("gamma_max must be >= 0")
    _check_alignment(counts, ensemble)
    cols, mus, idx = [], [], []
    for j, probe in enumerate(ensemble.probes):
        col = np.asarray(counts.column(j), dtype=float)
        if _usable_probe(col, probe):
            cols.append(col)
            mus.append(probe.mean_photons)
            idx.append(j)
    if not cols:
        raise EstimationError("no usable probes: every column was degenerate")

    def pooled_nll(eta, gamma):
        return -sum(
            _weighted_loglik(c, _model_log_probs(eta * m + gamma, c.size))
            for c, m in zip(cols, mus)
        )

    def argmin_eta(gamma):
        res = optimize.minimize_scalar(
            lambda e: pooled_nll(e, gamma),
            bounds=(0.0, 1.0),
            method="bounded",
            options={"xatol": _XATOL},
        )
        return float(res.x)

    def argmin_gamma(eta):
        if gamma_max == 0:
            return 0.0
        res = optimize.minimize_scalar(
            lambda g: pooled_nll(eta, g),
            bounds=(0.0, gamma_max),
            method="bounded",
            options={"xatol": _XATOL},
        )
        return float(res.x)

    gamma_star = 0.0
    eta_star = argmin_eta(gamma_star)
    for _ in range(200):
        eta_prev, gamma_prev = eta_star, gamma_star
        gamma_star = argmin_gamma(eta_star)
        eta_star = argmin_eta(gamma_star)
        if abs(eta_star - eta_prev) < _XATOL and abs(gamma_star - gamma_prev) < _XATOL:
            break
    if gamma_max > 0:
        polish = optimize.minimize(
            lambda x: pooled_nll(x[0], x[1]),
            x0=[eta_star, gamma_star],
            method="Nelder-Mead",
            bounds=[(0.0, 1.0), (0.0, gamma_max)],
            options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 4000},
        )
        if polish.fun <= pooled_nll(eta_star, gamma_star):
            eta_star, gamma_star = float(polish.x[0]), float(polish.x[1])

    etas = np.full(counts.n_probes, np.nan)
    gammas = np.full(counts.n_probes, np.nan)
    for c, m, j in zip(cols, mus, idx):
        etas[j] = _maximize_eta(c, m, gamma=gamma_star)
        gammas[j] = _maximize_gamma(c, m, eta_star, gamma_max)
    used_e = etas[np.isfinite(etas)]
    used_g = gammas[np.isfinite(gammas)]
    eta_hat = float(used_e.mean())
    gamma_hat = float(used_g.mean())
    gamma_se = _spread(used_g)
    gamma_upper = (
        gamma_hat + _Z_ONE_SIDED_95 * gamma_se if gamma_se is not None else None
    )
    return EfficiencyEstimate(
        eta_hat=eta_hat,
        eta_se=_spread(used_e),
        per_probe_etas=etas,
        loglik=float(-pooled_nll(eta_hat, gamma_hat)),
        gamma_hat=gamma_hat,
        gamma_se=gamma_se,
        gamma_upper=gamma_upper,
        per_probe_gammas=gammas,
    )


def dark_rate_direct(
    trace: AmplitudeTrace,
    fit: GaussianMixtureFit | None,
    thresholds: ThresholdSet | None,
    confidence: float = 0.99,
) -> DarkRateEstimate:
    """Measure the dark-count rate directly from a no-light trace.

    Counts the fraction of pulses at or above the first threshold (the
    boundary belongs to the upper class, as in binning). When no
    threshold set is available, the cut falls back to five sigma above
    the fitted zero peak. The upper bound is the exact Clopper-Pearson
    one-sided limit, which stays meaningful at zero observed events.
    """
    n = trace.n_pulses
    if n == 0:
        raise ValueError("trace is empty")
    if not (0.0 < confidence < 1.0):
        raise ValueError("confidence must lie in (0, 1)")
    if thresholds is not None and thresholds.n_cuts > 0:
        cut = thresholds.cut_points_mv[0]
    elif fit is not None:
        zero = fit.components[0]
        cut = zero.mean_mv + 5.0 * zero.sigma_mv
    else:
        raise ValueError("need a threshold set or a fit to place the cut")
    above = int(np.count_nonzero(trace.amplitudes_mv >= cut))
    rate = above / n
    se = math.sqrt(rate * (1.0 - rate) / n)
    if above == n:
        upper = 1.0
    else:
        upper = float(stats.beta.ppf(confidence, above + 1, n - above))
    return DarkRateEstimate(
        rate=rate,
        std_error=se,
        upper_bound=upper,
        n_pulses=n,
        confidence=confidence,
        suspect=above == n,
    )
