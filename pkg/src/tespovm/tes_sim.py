"""Seeded Monte Carlo stand-in for the cryogenic detection chain.

Only the pulse-height summary statistic is modeled: each optical pulse
yields a detected count and a Gaussian-smeared amplitude around the
corresponding peak position. Pulse shapes, readout bandwidth and trigger
logic are out of scope; the point is to exercise calibration and
tomography against a known ground truth.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .photon_stats import ProbeEnsemble

__all__ = [
    "DetectorPhysicalConfig",
    "AmplitudeTrace",
    "derive_subseed",
    "simulate_trace",
    "simulate_ensemble",
]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class DetectorPhysicalConfig:
    """Physical parameters of the simulated detector and readout.

    Attributes:
        eta: Quantum efficiency in [0, 1].
        gamma: Mean dark counts per pulse, >= 0.
        baseline_mv: Amplitude of the zero-count peak.
        peak_spacing_mv: Amplitude step per detected photon.
        sigma0_mv: Gaussian width of the zero-count peak.
        sigma_slope_mv: Extra width per detected count (amplitude noise
            grows linearly with count when nonzero).
        saturation_count: Counts at or above this value all pile up at
            this value; ``None`` disables saturation and keeps the
            detector linear.
    """

    eta: float = 0.051
    gamma: float = 0.0
    baseline_mv: float = 0.0
    peak_spacing_mv: float = 13.0
    sigma0_mv: float = 2.0
    sigma_slope_mv: float = 0.0
    saturation_count: int | None = None

    def __post_init__(self):
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not math.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")
        if self.peak_spacing_mv <= 0:
            raise ValueError("peak_spacing_mv must be positive")
        if self.sigma0_mv <= 0:
            raise ValueError("sigma0_mv must be positive")
        if self.sigma_slope_mv < 0:
            raise ValueError("sigma_slope_mv must be >= 0")
        if self.saturation_count is not None and self.saturation_count < 0:
            raise ValueError("saturation_count must be >= 0 or None")

    @property
    def peak_resolution(self) -> float:
        """Peak spacing in units of the zero-count width."""
        return self.peak_spacing_mv / self.sigma0_mv


@dataclass(frozen=True, eq=False)
class AmplitudeTrace:
    """Per-pulse amplitudes for one probe, with optional ground truth."""

    probe_id: int
    amplitudes_mv: np.ndarray
    truth_counts: np.ndarray | None = None

    def __post_init__(self):
        amps = np.asarray(self.amplitudes_mv, dtype=float)
        if amps.ndim != 1:
            raise ValueError("amplitudes_mv must be 1-D")
        if amps.size and not np.isfinite(amps).all():
            raise ValueError("amplitudes_mv must be finite")
        object.__setattr__(self, "amplitudes_mv", amps)
        if self.truth_counts is not None:
            truth = np.asarray(self.truth_counts, dtype=np.int64)
            if truth.shape != amps.shape:
                raise ValueError("truth_counts must match amplitudes_mv in length")
            if truth.size and truth.min() < 0:
                raise ValueError("truth_counts must be >= 0")
            object.__setattr__(self, "truth_counts", truth)

    @property
    def n_pulses(self) -> int:
        return self.amplitudes_mv.shape[0]


def derive_subseed(seed: int, probe_id: int) -> int:
    """Stable 64-bit sub-seed for one probe of a seeded run.

    Splitmix-style finalizer, so adding or reordering probes never
    perturbs the stream of any existing probe.
    """
    z = (int(seed) + (int(probe_id) + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def simulate_trace(
    config: DetectorPhysicalConfig,
    mu: float,
    n_pulses: int,
    seed: int,
    probe_id: int = 0,
) -> AmplitudeTrace:
    """Simulate pulse amplitudes for one coherent probe.

    Per pulse: draw ``m ~ Poisson(mu)`` photons, thin to ``k ~
    Binomial(m, eta)`` detections, add ``d ~ Poisson(gamma)`` dark
    counts, apply saturation, then emit ``baseline + c * spacing`` plus
    Gaussian noise of width ``sigma0 + c * sigma_slope``.

    Deterministic for a fixed ``(config, mu, n_pulses, seed)``.
    """
    if not math.isfinite(mu) or mu < 0:
        raise ValueError(f"mu must be finite and >= 0, got {mu}")
    if n_pulses < 1:
        raise ValueError("n_pulses must be >= 1")
    rng = np.random.default_rng(seed)
    m = rng.poisson(mu, n_pulses)
    k = rng.binomial(m, config.eta) if config.eta > 0 else np.zeros(n_pulses, np.int64)
    d = rng.poisson(config.gamma, n_pulses) if config.gamma > 0 else 0
    c = k + d
    if config.saturation_count is not None:
        c = np.minimum(c, config.saturation_count)
    sigma = config.sigma0_mv + c * config.sigma_slope_mv
    amps = config.baseline_mv + c * config.peak_spacing_mv + rng.normal(0.0, 1.0, n_pulses) * sigma
    return AmplitudeTrace(
        probe_id=probe_id, amplitudes_mv=amps, truth_counts=np.asarray(c, np.int64)
    )


def simulate_ensemble(
    config: DetectorPhysicalConfig,
    ensemble: ProbeEnsemble,
    seed: int,
    jobs: int = 1,
) -> list[AmplitudeTrace]:
    """Simulate every probe of an ensemble.

    Each probe gets an independent stream via ``derive_subseed(seed,
    probe.id)``, so results do not depend on ``jobs`` or on the presence
    of other probes. Traces are returned in ensemble order.
    """
    def one(probe):
        return simulate_trace(
            config,
            probe.mean_photons,
            probe.n_pulses,
            derive_subseed(seed, probe.id),
            probe_id=probe.id,
        )

    if jobs <= 1:
        return [one(p) for p in ensemble.probes]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, ensemble.probes))
