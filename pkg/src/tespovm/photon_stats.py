"""Closed-form photon statistics for linear photon counters.

Coherent probe states carry Poisson photon-number statistics. A lossy
counter with quantum efficiency ``eta`` maps ``m`` incoming photons to
``n`` detections with binomial probability, and a Poissonian background
with mean ``gamma`` adds spurious counts on top. Everything here is a
deterministic pure function over plain arrays and small frozen
dataclasses; no randomness, no I/O.

Conventions used throughout the package:

* POVM matrices have shape ``(n_outcomes, truncation)``; entry ``[n, m]``
  is the probability of reporting ``n`` counts given ``m`` photons.
* The last outcome row is cumulative: it absorbs all probability for
  ``n >= n_outcomes - 1``, so every column sums to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

__all__ = [
    "COLUMN_SUM_TOL",
    "Probe",
    "ProbeEnsemble",
    "PovmMatrix",
    "LinearDetectorModel",
    "CountDistribution",
    "DistributionDistance",
    "geometric_ensemble",
    "poisson_pmf",
    "probe_q_matrix",
    "binomial_povm",
    "dark_count_povm",
    "predict_distribution",
    "linear_prediction",
    "column_fidelity",
    "distribution_distance",
]

# Columns of a POVM matrix and probability vectors must sum to one
# within this tolerance.
COLUMN_SUM_TOL = 1e-9


@dataclass(frozen=True)
class Probe:
    """One coherent probe state.

    Attributes:
        id: Integer label, unique within an ensemble.
        mean_photons: Mean photon number of the state, >= 0. This is the
            primary field; ``attenuation_db`` is metadata only.
        n_pulses: Number of optical pulses recorded for this probe.
        attenuation_db: Optional attenuator setting that produced the
            state, for bookkeeping.
    """

    id: int
    mean_photons: float
    n_pulses: int = 100_000
    attenuation_db: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.mean_photons) or self.mean_photons < 0:
            raise ValueError(
                f"probe {self.id}: mean_photons must be finite and >= 0, "
                f"got {self.mean_photons}"
            )
        if self.n_pulses < 1:
            raise ValueError(f"probe {self.id}: n_pulses must be >= 1")


@dataclass(frozen=True)
class ProbeEnsemble:
    """An ordered collection of coherent probes with unique ids."""

    probes: tuple[Probe, ...]

    def __post_init__(self):
        object.__setattr__(self, "probes", tuple(self.probes))
        if len(self.probes) < 1:
            raise ValueError("ensemble needs at least one probe")
        ids = [p.id for p in self.probes]
        if len(set(ids)) != len(ids):
            raise ValueError("probe ids must be unique")
        self._check_attenuation_monotonic()

    def _check_attenuation_monotonic(self):
        # More attenuation must mean fewer photons.
        tagged = [
            (p.attenuation_db, p.mean_photons)
            for p in self.probes
            if p.attenuation_db is not None
        ]
        if len(tagged) < 2:
            return
        tagged.sort(key=lambda t: t[0])
        mus = np.array([t[1] for t in tagged])
        if np.any(np.diff(mus) > 0):
            raise ValueError(
                "mean_photons must decrease monotonically with attenuation_db"
            )

    @property
    def n_probes(self) -> int:
        return len(self.probes)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(p.id for p in self.probes)

    @property
    def mean_photons(self) -> np.ndarray:
        return np.array([p.mean_photons for p in self.probes])

    def with_scaled_means(self, factor: float) -> "ProbeEnsemble":
        """Return a copy with every mean photon number multiplied by ``factor``."""
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return ProbeEnsemble(
            tuple(
                Probe(
                    id=p.id,
                    mean_photons=p.mean_photons * factor,
                    n_pulses=p.n_pulses,
                    attenuation_db=p.attenuation_db,
                )
                for p in self.probes
            )
        )

    def subset(self, ids: tuple[int, ...]) -> "ProbeEnsemble":
        """Return the sub-ensemble with the given ids, in the given order."""
        by_id = {p.id: p for p in self.probes}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise ValueError(f"unknown probe ids: {missing}")
        return ProbeEnsemble(tuple(by_id[i] for i in ids))


def geometric_ensemble(
    n_probes: int = 20,
    mu_min: float = 6.5,
    mu_max: float = 130.0,
    n_pulses: int = 100_000,
    max_attenuation_db: float = 76.5,
) -> ProbeEnsemble:
    """Build a geometrically spaced probe ensemble.

    The defaults give 20 states from 6.5 to 130 mean photons, the span a
    13 dB attenuator sweep produces from a fixed source. Attenuation
    metadata is filled in relative to ``max_attenuation_db`` at ``mu_min``.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    if not (0 < mu_min <= mu_max):
        raise ValueError("need 0 < mu_min <= mu_max")
    mus = np.geomspace(mu_min, mu_max, n_probes)
    atts = max_attenuation_db - 10.0 * np.log10(mus / mu_min)
    return ProbeEnsemble(
        tuple(
            Probe(
                id=j,
                mean_photons=float(mus[j]),
                n_pulses=n_pulses,
                attenuation_db=float(atts[j]),
            )
            for j in range(n_probes)
        )
    )


@dataclass(frozen=True)
class LinearDetectorModel:
    """Linear detector parameters: efficiency and mean dark counts per pulse."""

    eta: float
    gamma: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not math.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")


@dataclass(frozen=True, eq=False)
class PovmMatrix:
    """Column-stochastic POVM matrix for a photon-number-diagonal detector.

    Attributes:
        entries: Array of shape ``(n_outcomes, truncation)``; entry
            ``[n, m]`` is P(report n | m photons). Nonnegative, each
            column sums to one within ``COLUMN_SUM_TOL``.
        last_outcome_cumulative: Whether the last row absorbs all
            outcomes ``n >= n_outcomes - 1``.
    """

    entries: np.ndarray
    last_outcome_cumulative: bool = True

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=float)
        if arr.ndim != 2:
            raise ValueError(f"entries must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 2:
            raise ValueError("need at least two outcome rows")
        if not np.isfinite(arr).all():
            raise ValueError("entries must be finite")
        if arr.min() < 0:
            raise ValueError("entries must be nonnegative")
        colsums = arr.sum(axis=0)
        worst = np.abs(colsums - 1.0).max()
        if worst > COLUMN_SUM_TOL:
            raise ValueError(
                f"columns must sum to 1 within {COLUMN_SUM_TOL}, "
                f"worst deviation {worst:.3e}"
            )
        object.__setattr__(self, "entries", arr)

    @property
    def n_outcomes(self) -> int:
        return self.entries.shape[0]

    @property
    def truncation(self) -> int:
        return self.entries.shape[1]

    def column(self, m: int) -> np.ndarray:
        """Outcome distribution for exactly ``m`` incoming photons."""
        return self.entries[:, m]


@dataclass(frozen=True, eq=False)
class CountDistribution:
    """A normalized distribution over detector outcomes.

    ``truncation_tail`` records any Poisson probe mass beyond the model
    truncation that was folded back in by renormalization; zero for
    exact distributions.
    """

    probs: np.ndarray
    truncation_tail: float = 0.0

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=float)
        if arr.ndim != 1:
            raise ValueError("probs must be 1-D")
        if not np.isfinite(arr).all() or arr.min() < 0:
            raise ValueError("probs must be finite and nonnegative")
        total = arr.sum()
        if abs(total - 1.0) > COLUMN_SUM_TOL:
            raise ValueError(
                f"probs must sum to 1 within {COLUMN_SUM_TOL}, got {total!r}"
            )
        object.__setattr__(self, "probs", arr)

    @property
    def n_outcomes(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True, eq=False)
class DistributionDistance:
    """Elementwise and summary distances between two outcome distributions."""

    abs_diff: np.ndarray
    max_abs: float
    total_variation: float


def poisson_pmf(mu: float, m) -> float | np.ndarray:
    """Poisson probability mass exp(-mu) mu^m / m!.

    Evaluated in log space through ``gammaln`` so that photon numbers of
    several hundred stay finite.

    Args:
        mu: Mean, finite and >= 0.
        m: Nonnegative integer or integer array of outcomes.

    Returns:
        Scalar float for scalar ``m``, else an array of the same shape.
    """
    if not math.isfinite(mu) or mu < 0:
        raise ValueError(f"mu must be finite and >= 0, got {mu}")
    m_arr = np.asarray(m)
    scalar = m_arr.ndim == 0
    if not np.issubdtype(m_arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(m_arr, 1), 0)):
            raise ValueError("m must be integer-valued")
        m_arr = m_arr.astype(np.int64)
    if m_arr.size and m_arr.min() < 0:
        raise ValueError("m must be >= 0")
    if mu == 0.0:
        out = np.where(m_arr == 0, 1.0, 0.0)
    else:
        out = np.exp(m_arr * math.log(mu) - mu - gammaln(m_arr + 1.0))
    return float(out) if scalar else out


def probe_q_matrix(
    ensemble: ProbeEnsemble, truncation: int
) -> tuple[np.ndarray, np.ndarray]:
    """Poisson source matrix for an ensemble, plus truncation diagnostics.

    Args:
        ensemble: Probes with mean photon numbers mu_j.
        truncation: Number of photon-number rows M (m = 0 .. M-1).

    The Poisson mass beyond the truncation is folded into the last row,
    so every column sums to one. Photon numbers at or above M - 1
    produce nearly identical detector responses for the efficiencies of
    interest, which makes folding far more faithful than renormalizing
    the truncated column (for mu = 130 and M = 140 about a fifth of the
    mass lies in the tail, and renormalization visibly distorts the
    predicted statistics of that probe).

    Returns:
        ``(q, tail)`` where ``q`` has shape ``(truncation, n_probes)``,
        ``q[m, j] = poisson_pmf(mu_j, m)`` for ``m < truncation - 1``,
        and ``tail[j]`` is the folded Poisson mass of probe ``j``.
    """
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    ms = np.arange(truncation)
    q = np.column_stack([poisson_pmf(p.mean_photons, ms) for p in ensemble.probes])
    tail = np.maximum(0.0, 1.0 - q.sum(axis=0))
    q[-1] += tail
    return q, tail


def _binomial_rows(eta: float, n_rows: int, truncation: int) -> np.ndarray:
    """Raw binomial pmf table B[n, m] for n < n_rows, without a cumulative row."""
    ns = np.arange(n_rows)[:, None]
    ms = np.arange(truncation)[None, :]
    if eta == 0.0:
        return np.where(ns == 0, 1.0, 0.0) * np.ones((1, truncation))
    if eta == 1.0:
        return (ns == ms).astype(float)
    diff = np.maximum(ms - ns, 0)
    logpmf = (
        gammaln(ms + 1.0)
        - gammaln(ns + 1.0)
        - gammaln(diff + 1.0)
        + ns * math.log(eta)
        + diff * math.log1p(-eta)
    )
    return np.where(ns <= ms, np.exp(logpmf), 0.0)


def _with_cumulative_top(body: np.ndarray) -> np.ndarray:
    top = np.maximum(1.0 - body.sum(axis=0), 0.0)
    return np.vstack([body, top])


def binomial_povm(eta: float, n_outcomes: int, truncation: int) -> PovmMatrix:
    """POVM matrix of an ideal linear detector with efficiency ``eta``.

    Rows ``n < n_outcomes - 1`` hold the Binomial(m, eta) pmf at n; the
    last row is the cumulative remainder so columns sum to one exactly.

    Args:
        eta: Quantum efficiency in [0, 1].
        n_outcomes: Number of outcome rows N, >= 2.
        truncation: Number of photon-number columns M, >= 1.
    """
    if not (0.0 <= eta <= 1.0):
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if n_outcomes < 2:
        raise ValueError("n_outcomes must be >= 2")
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    body = _binomial_rows(eta, n_outcomes - 1, truncation)
    return PovmMatrix(_with_cumulative_top(body))


def dark_count_povm(
    model: LinearDetectorModel, n_outcomes: int, truncation: int
) -> PovmMatrix:
    """POVM of a linear detector with Poissonian dark counts.

    Each non-cumulative row is the convolution of the binomial response
    with Poisson(gamma) dark counts:

        Pi[n, m] = exp(-gamma) * sum_{j=0}^{n} gamma^j / j! * B[n-j, m]

    With ``gamma == 0`` this reduces bitwise to ``binomial_povm``.
    """
    if n_outcomes < 2:
        raise ValueError("n_outcomes must be >= 2")
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    raw = _binomial_rows(model.eta, n_outcomes - 1, truncation)
    w = poisson_pmf(model.gamma, np.arange(n_outcomes - 1))
    body = np.zeros_like(raw)
    for n in range(n_outcomes - 1):
        for j in range(n + 1):
            body[n] += w[j] * raw[n - j]
    return PovmMatrix(_with_cumulative_top(body))


def predict_distribution(povm: PovmMatrix, mu: float) -> CountDistribution:
    """Outcome distribution of a detector POVM probed with a coherent state.

    Computes ``r_n = sum_m Pi[n, m] q_m(mu)`` over the POVM truncation.
    Poisson mass beyond the truncation is folded into the last
    photon-number column, mirroring :func:`probe_q_matrix`, and reported
    in ``truncation_tail``.
    """
    q = poisson_pmf(mu, np.arange(povm.truncation))
    tail = max(0.0, 1.0 - float(q.sum()))
    q[-1] += tail
    probs = np.maximum(povm.entries @ q, 0.0)
    return CountDistribution(probs, truncation_tail=tail)


def linear_prediction(eta: float, mu: float, n_outcomes: int) -> CountDistribution:
    """Closed-form outcome distribution of a lossless-model linear detector.

    Binomial thinning of a Poisson source is again Poisson, so the body
    of the distribution is the Poisson(eta * mu) pmf and the last outcome
    absorbs the upper tail.
    """
    if not (0.0 <= eta <= 1.0):
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if not math.isfinite(mu) or mu < 0:
        raise ValueError(f"mu must be finite and >= 0, got {mu}")
    if n_outcomes < 2:
        raise ValueError("n_outcomes must be >= 2")
    body = poisson_pmf(eta * mu, np.arange(n_outcomes - 1))
    top = max(1.0 - float(body.sum()), 0.0)
    return CountDistribution(np.append(body, top))


def _as_probs(dist) -> np.ndarray:
    if isinstance(dist, CountDistribution):
        return dist.probs
    return np.asarray(dist, dtype=float)


def column_fidelity(a: PovmMatrix, b: PovmMatrix, m: int) -> float:
    """Bhattacharyya fidelity between column ``m`` of two POVM matrices.

    F = sum_n sqrt(a[n, m] * b[n, m]); equals 1 iff the columns agree.
    """
    if a.entries.shape != b.entries.shape:
        raise ValueError(
            f"shape mismatch: {a.entries.shape} vs {b.entries.shape}"
        )
    if not (0 <= m < a.truncation):
        raise ValueError(f"column {m} out of range for truncation {a.truncation}")
    f = float(np.sqrt(a.column(m) * b.column(m)).sum())
    return min(f, 1.0)


def distribution_distance(p, q) -> DistributionDistance:
    """Elementwise absolute difference plus max and total-variation summaries.

    Accepts ``CountDistribution`` objects or plain probability arrays of
    equal length. Total variation is half the L1 distance.
    """
    pa = _as_probs(p)
    qa = _as_probs(q)
    if pa.shape != qa.shape:
        raise ValueError(f"shape mismatch: {pa.shape} vs {qa.shape}")
    diff = np.abs(pa - qa)
    return DistributionDistance(
        abs_diff=diff,
        max_abs=float(diff.max()),
        total_variation=float(0.5 * diff.sum()),
    )
