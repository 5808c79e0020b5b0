"""Pulse-height calibration: peak fitting, thresholds, count binning.

A raw amplitude trace is histogrammed, a sum of Gaussians is fitted to
the peak structure, decision thresholds are placed at the density minima
between adjacent peaks, and events are binned into photon-count classes.
The leftmost fitted peak is taken to be the zero-detection peak, so
component index equals detected count.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal

from .errors import CalibrationError, FitError
from .photon_stats import COLUMN_SUM_TOL
from .tes_sim import AmplitudeTrace

__all__ = [
    "MIN_EVENTS",
    "WEIGHT_FLOOR_EVENTS",
    "GaussianComponent",
    "GaussianMixtureFit",
    "ThresholdSet",
    "CountTable",
    "fit_peaks",
    "place_thresholds",
    "bin_counts",
    "bin_counts_by_area",
]

# Fewer events than this cannot support a mixture fit.
MIN_EVENTS = 100

# Fitted components carrying fewer expected events than this are pruned.
WEIGHT_FLOOR_EVENTS = 10.0

_SQRT2PI = math.sqrt(2.0 * math.pi)
_PEAK_NOISE_FLOOR = 0.01  # stage-1 height floor, fraction of global max
_RESCAN_ABS_FLOOR = 3.0   # stage-2 height floor, counts per bin


@dataclass(frozen=True)
class GaussianComponent:
    """One fitted peak: expected event count, location and width in mV."""

    weight: float
    mean_mv: float
    sigma_mv: float


@dataclass(frozen=True, eq=False)
class GaussianMixtureFit:
    """A multi-Gaussian fit to a binned pulse-height spectrum.

    Components are ordered by strictly increasing mean. ``goodness`` is
    the reduced chi-square of the Poisson-weighted fit.
    """

    components: tuple[GaussianComponent, ...]
    goodness: float
    bin_width_mv: float
    n_events: int

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ValueError("fit must hold at least one component")
        means = self.means
        if np.any(np.diff(means) <= 0):
            raise ValueError("component means must be strictly increasing")
        for c in self.components:
            if c.weight <= 0 or c.sigma_mv <= 0:
                raise ValueError("component weights and sigmas must be positive")

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean_mv for c in self.components])

    @property
    def n_components(self) -> int:
        return len(self.components)

    def density(self, x) -> np.ndarray:
        """Event-weighted mixture density (events per mV) at ``x``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c in self.components:
            z = (x - c.mean_mv) / c.sigma_mv
            out = out + c.weight / (c.sigma_mv * _SQRT2PI) * np.exp(-0.5 * z * z)
        return out


@dataclass(frozen=True)
class ThresholdSet:
    """Sorted decision boundaries between adjacent count classes."""

    cut_points_mv: tuple[float, ...]

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cut_points_mv)
        if any(not math.isfinite(c) for c in cuts):
            raise ValueError("cut points must be finite")
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ValueError("cut points must be strictly increasing")
        object.__setattr__(self, "cut_points_mv", cuts)

    @property
    def n_cuts(self) -> int:
        return len(self.cut_points_mv)


@dataclass(frozen=True, eq=False)
class CountTable:
    """Outcome-by-probe count statistics.

    ``probs`` always holds column-normalized probabilities. ``counts``
    is present when the table came from event data; tables built from
    exact model probabilities carry ``counts=None``.
    """

    probs: np.ndarray
    counts: np.ndarray | None = None
    probe_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2:
            raise ValueError("probs must be 2-D (outcomes x probes)")
        if not np.isfinite(probs).all() or probs.min() < 0:
            raise ValueError("probs must be finite and nonnegative")
        colsums = probs.sum(axis=0)
        if np.abs(colsums - 1.0).max() > COLUMN_SUM_TOL:
            raise ValueError("probability columns must sum to 1")
        object.__setattr__(self, "probs", probs)
        if self.counts is not None:
            counts = np.asarray(self.counts)
            if counts.shape != probs.shape:
                raise ValueError("counts must match probs in shape")
            if not np.issubdtype(counts.dtype, np.integer):
                raise ValueError("counts must be integers")
            if counts.min() < 0:
                raise ValueError("counts must be >= 0")
            object.__setattr__(self, "counts", counts.astype(np.int64))
        if self.probe_ids is not None:
            ids = tuple(int(i) for i in self.probe_ids)
            if len(ids) != probs.shape[1]:
                raise ValueError("probe_ids must match the number of columns")
            if len(set(ids)) != len(ids):
                raise ValueError("probe_ids must be unique")
            object.__setattr__(self, "probe_ids", ids)

    @classmethod
    def from_counts(cls, counts, probe_ids=None) -> "CountTable":
        counts = np.asarray(counts)
        totals = counts.sum(axis=0)
        if np.any(totals <= 0):
            empty = np.nonzero(totals <= 0)[0].tolist()
            raise ValueError(f"count columns {empty} have no events")
        return cls(counts / totals, counts=counts, probe_ids=probe_ids)

    @classmethod
    def from_probs(cls, probs, probe_ids=None) -> "CountTable":
        return cls(np.asarray(probs, dtype=float), probe_ids=probe_ids)

    @property
    def n_outcomes(self) -> int:
        return self.probs.shape[0]

    @property
    def n_probes(self) -> int:
        return self.probs.shape[1]

    def column(self, j: int) -> np.ndarray:
        """Event weights for probe column ``j``: counts when available."""
        if self.counts is not None:
            return self.counts[:, j]
        return self.probs[:, j]


def _histogram(amps: np.ndarray, bin_width: float):
    lo = math.floor(amps.min() / bin_width) * bin_width
    n_bins = max(1, math.ceil((amps.max() - lo) / bin_width) + 1)
    edges = lo + bin_width * np.arange(n_bins + 1)
    counts, _ = np.histogram(amps, bins=edges)
    centers = edges[:-1] + 0.5 * bin_width
    return counts.astype(float), centers, edges


def _find_peak_bins(counts: np.ndarray, max_peaks: int) -> np.ndarray:
    """Two-stage peak search on a smoothed histogram.

    Stage 1 finds prominent peaks above a 1 percent noise floor; stage 2
    rescans with a minimum peak distance inferred from the stage-1
    spacing and a low absolute floor, which recovers weak outer peaks
    (the zero peak of a bright probe) without admitting valley noise.
    """
    smooth = np.convolve(counts, np.ones(3) / 3.0, mode="same")
    strong, _ = signal.find_peaks(smooth, height=_PEAK_NOISE_FLOOR * smooth.max())
    if strong.size == 0:
        # Degenerate but legal: everything in one bin, or a monotone edge
        # profile. Fall back to the tallest bin.
        strong = np.array([int(np.argmax(smooth))])
    if strong.size >= 2:
        spacing = float(np.median(np.diff(strong)))
        distance = max(2, int(round(0.6 * spacing)))
        floor = max(_RESCAN_ABS_FLOOR, 5e-4 * smooth.max())
        rescanned, _ = signal.find_peaks(smooth, height=floor, distance=distance)
        if rescanned.size:
            strong = rescanned
    return strong[:max_peaks]


def _mixture_counts(params: np.ndarray, centers: np.ndarray) -> np.ndarray:
    p = params.reshape(-1, 3)
    z = (centers[None, :] - p[:, 1:2]) / p[:, 2:3]
    return (p[:, 0:1] * np.exp(-0.5 * z * z)).sum(axis=0)


def _fit_mixture(x0, counts, centers, edges, bin_width):
    inv_err = 1.0 / np.sqrt(np.maximum(counts, 1.0))

    def residuals(params):
        return (_mixture_counts(params, centers) - counts) * inv_err

    k = len(x0) // 3
    span = edges[-1] - edges[0]
    lo = np.tile([0.0, edges[0], bin_width / 4.0], k)
    hi = np.tile([1.5 * counts.max() + 10.0, edges[-1], span / 2.0], k)
    x0 = np.clip(x0, lo, hi)
    res = optimize.least_squares(
        residuals, x0, bounds=(lo, hi), max_nfev=400 * len(x0)
    )
    if res.status == 0:
        raise FitError(
            f"peak fit did not converge within the evaluation budget "
            f"(residual norm {np.linalg.norm(res.fun):.4g})",
            residual=float(np.linalg.norm(res.fun)),
        )
    return res


def _components_from_params(params, bin_width) -> list[GaussianComponent]:
    comps = []
    for amp, mean, sig in params.reshape(-1, 3):
        weight = amp * sig * _SQRT2PI / bin_width
        comps.append(GaussianComponent(float(weight), float(mean), float(sig)))
    comps.sort(key=lambda c: c.mean_mv)
    return comps


def _prune(comps: list[GaussianComponent], bin_width) -> list[GaussianComponent]:
    kept = [c for c in comps if c.weight >= WEIGHT_FLOOR_EVENTS]
    # Collapse collided components onto the heavier one.
    out: list[GaussianComponent] = []
    for c in kept:
        if out and c.mean_mv - out[-1].mean_mv < bin_width:
            if c.weight > out[-1].weight:
                out[-1] = c
        else:
            out.append(c)
    return out


def fit_peaks(
    trace: AmplitudeTrace,
    bin_width_mv: float = 1.3,
    max_peaks: int = 16,
) -> GaussianMixtureFit:
    """Fit a sum of Gaussians to the pulse-height spectrum of a trace.

    The amplitude histogram (bin width ``bin_width_mv``) is scanned for
    peaks, one Gaussian per peak is seeded, and the mixture is fitted by
    Poisson-weighted least squares. Components carrying fewer than
    ``WEIGHT_FLOOR_EVENTS`` expected events are pruned and the remainder
    refitted until stable. At most the ``max_peaks`` leftmost peaks are
    kept; higher peaks belong to the cumulative top bin anyway.

    Raises:
        CalibrationError: Fewer than ``MIN_EVENTS`` events, or no usable
            peak structure.
        FitError: The nonlinear fit did not converge.
    """
    amps = np.asarray(trace.amplitudes_mv, dtype=float)
    if amps.size < MIN_EVENTS:
        raise CalibrationError(
            f"trace has {amps.size} events, need at least {MIN_EVENTS}"
        )
    if bin_width_mv <= 0:
        raise ValueError("bin_width_mv must be positive")
    if max_peaks < 1:
        raise ValueError("max_peaks must be >= 1")

    counts, centers, edges = _histogram(amps, bin_width_mv)
    peak_bins = _find_peak_bins(counts, max_peaks)
    smooth = np.convolve(counts, np.ones(3) / 3.0, mode="same")
    widths = signal.peak_widths(smooth, peak_bins, rel_height=0.5)[0]
    sigmas = np.clip(
        widths * bin_width_mv / 2.355, bin_width_mv / 2.0, (edges[-1] - edges[0]) / 4.0
    )
    x0 = np.column_stack(
        [np.maximum(smooth[peak_bins], 1.0), centers[peak_bins], sigmas]
    ).ravel()

    res = _fit_mixture(x0, counts, centers, edges, bin_width_mv)
    comps = _components_from_params(res.x, bin_width_mv)
    for _ in range(5):
        pruned = _prune(comps, bin_width_mv)
        if not pruned:
            raise CalibrationError("all fitted components fell below the weight floor")
        if len(pruned) == len(comps):
            comps = pruned
            break
        x0 = np.array(
            [[c.weight * bin_width_mv / (c.sigma_mv * _SQRT2PI), c.mean_mv, c.sigma_mv]
             for c in pruned]
        ).ravel()
        res = _fit_mixture(x0, counts, centers, edges, bin_width_mv)
        comps = _components_from_params(res.x, bin_width_mv)
    comps = _prune(comps, bin_width_mv)
    if not comps:
        raise CalibrationError("all fitted components fell below the weight floor")

    dof = max(1, counts.size - 3 * len(comps))
    goodness = float(2.0 * res.cost / dof)
    return GaussianMixtureFit(
        components=tuple(comps),
        goodness=goodness,
        bin_width_mv=float(bin_width_mv),
        n_events=int(amps.size),
    )


def place_thresholds(fit: GaussianMixtureFit, xatol: float = 1e-3) -> ThresholdSet:
    """Place decision thresholds at the mixture-density minima.

    For each pair of adjacent component means the fitted mixture density
    is minimized on the open interval between them (tolerance ``xatol``
    mV). If the density has no interior valley there, the midpoint is
    used and a warning is emitted.
    """
    cuts = []
    means = fit.means
    for a, b in zip(means, means[1:]):
        grid = np.linspace(a, b, 512)[1:-1]
        dens = fit.density(grid)
        i = int(np.argmin(dens))
        if i == 0 or i == grid.size - 1:
            warnings.warn(
                f"no interior density minimum between peaks at {a:.3f} and "
                f"{b:.3f} mV; using the midpoint",
                stacklevel=2,
            )
            cuts.append(0.5 * (a + b))
            continue
        res = optimize.minimize_scalar(
            lambda x: float(fit.density(x)),
            bounds=(grid[i - 1], grid[i + 1]),
            method="bounded",
            options={"xatol": xatol},
        )
        cuts.append(float(res.x))
    return ThresholdSet(tuple(cuts))


def bin_counts(
    trace: AmplitudeTrace, thresholds: ThresholdSet, n_outcomes: int
) -> np.ndarray:
    """Bin trace amplitudes into count classes by thresholding.

    Intervals are half-open with the upper side owning the boundary: an
    amplitude exactly on a cut point belongs to the upper class. Classes
    at or above ``n_outcomes - 1`` are folded into the cumulative top
    outcome. Binning is invariant under a common affine rescale of
    amplitudes and cut points.

    Returns:
        Integer counts of length ``n_outcomes``.
    """
    if n_outcomes < 2:
        raise ValueError("n_outcomes must be >= 2")
    cuts = np.asarray(thresholds.cut_points_mv, dtype=float)
    idx = np.searchsorted(cuts, trace.amplitudes_mv, side="right")
    outcome = np.minimum(idx, n_outcomes - 1)
    return np.bincount(outcome, minlength=n_outcomes).astype(np.int64)[:n_outcomes]


def _round_preserving_total(x: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder rounding of nonnegative reals to a fixed total."""
    base = np.floor(x).astype(np.int64)
    short = int(total - base.sum())
    if short > 0:
        order = np.argsort(-(x - base), kind="stable")
        base[order[:short]] += 1
    return base


def bin_counts_by_area(
    trace: AmplitudeTrace, fit: GaussianMixtureFit, n_outcomes: int
) -> np.ndarray:
    """Bin a trace by fitted Gaussian areas instead of thresholds.

    Count class ``i`` receives the fitted weight of component ``i``
    (components beyond the top class fold into it), scaled to the number
    of events in the trace with total-preserving rounding.
    """
    if n_outcomes < 2:
        raise ValueError("n_outcomes must be >= 2")
    folded = np.zeros(n_outcomes)
    for i, comp in enumerate(fit.components):
        folded[min(i, n_outcomes - 1)] += comp.weight
    probs = folded / folded.sum()
    return _round_preserving_total(probs * trace.n_pulses, trace.n_pulses)
