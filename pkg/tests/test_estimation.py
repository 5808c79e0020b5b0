"""Tests for efficiency and dark-count maximum-likelihood estimation."""

import math

import numpy as np
import pytest

import tespovm as tp

# Exact one-sided Clopper-Pearson upper limits (scipy.stats.beta.ppf).
CP_0_OF_1E5_99 = 4.605064149653605e-05
CP_0_OF_1E6_95 = 2.9957277863525433e-06
CP_3_OF_1E6_99 = 1.0045082130300849e-05


def _poisson_column(lam, n_outcomes):
    body = tp.poisson_pmf(lam, np.arange(n_outcomes - 1))
    return np.append(body, 1.0 - body.sum())


@pytest.mark.parametrize("mu", [6.5, 31.0, 130.0])
@pytest.mark.parametrize("eta", [0.02, 0.051, 0.09])
def test_loglik_routes_agree(mu, eta):
    """Closed form and explicit photon-number sum give the same value."""
    rng = np.random.default_rng(3)
    counts = rng.multinomial(100_000, tp.linear_prediction(0.051, mu, 12).probs)
    a = tp.loglik_eta(eta, counts, mu)
    b = tp.loglik_eta_msum(eta, counts, mu, truncation=600)
    assert math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-8)


def test_loglik_eta_is_linear_in_weights():
    counts = np.array([70.0, 20.0, 10.0])
    one = tp.loglik_eta(0.3, counts, 4.0)
    assert math.isclose(tp.loglik_eta(0.3, 2.0 * counts, 4.0), 2.0 * one, rel_tol=1e-12)


def test_loglik_eta_zero_probability_outcome():
    # eta * mu = 0 puts all mass on outcome 0; any other count is -inf.
    assert tp.loglik_eta(0.0, np.array([5.0, 1.0]), 10.0) == -math.inf
    assert tp.loglik_eta(0.0, np.array([5.0, 0.0]), 10.0) == 0.0


def test_loglik_eta_validation():
    with pytest.raises(ValueError):
        tp.loglik_eta(1.2, np.ones(3), 1.0)
    with pytest.raises(ValueError):
        tp.loglik_eta(0.5, np.ones(3), -1.0)
    with pytest.raises(ValueError):
        tp.loglik_eta(0.5, np.array([1.0, -1.0]), 1.0)
    with pytest.raises(ValueError):
        tp.loglik_eta(0.5, np.ones(1), 1.0)


def test_estimate_eta_exact_probs():
    ens = tp.geometric_ensemble(n_probes=5, mu_min=5.0, mu_max=60.0)
    cols = [_poisson_column(0.051 * p.mean_photons, 12) for p in ens.probes]
    table = tp.CountTable.from_probs(np.column_stack(cols), probe_ids=ens.ids)
    est = tp.estimate_eta(table, ens)
    assert np.abs(est.per_probe_etas - 0.051).max() < 1e-5
    assert abs(est.eta_hat - 0.051) < 1e-5
    assert est.eta_se < 1e-5
    assert est.loglik < 0.0
    assert est.gamma_hat is None


def test_estimate_eta_noisy_recovery():
    ens = tp.geometric_ensemble(n_probes=5, mu_min=5.0, mu_max=60.0, n_pulses=50_000)
    rng = np.random.default_rng(14)
    cols = [
        rng.multinomial(50_000, _poisson_column(0.051 * p.mean_photons, 12))
        for p in ens.probes
    ]
    table = tp.CountTable.from_counts(np.column_stack(cols).astype(np.int64),
                                      probe_ids=ens.ids)
    est = tp.estimate_eta(table, ens)
    assert abs(est.eta_hat - 0.051) < 5.0 * est.eta_se
    assert est.eta_se < 5e-4


def test_estimate_eta_gamma_zero_bound_reduces_to_plain():
    ens = tp.geometric_ensemble(n_probes=4, mu_min=5.0, mu_max=40.0)
    cols = [_poisson_column(0.051 * p.mean_photons, 12) for p in ens.probes]
    table = tp.CountTable.from_probs(np.column_stack(cols), probe_ids=ens.ids)
    plain = tp.estimate_eta(table, ens)
    joint = tp.estimate_eta_gamma(table, ens, gamma_max=0.0)
    assert math.isclose(joint.eta_hat, plain.eta_hat, rel_tol=1e-10)
    assert joint.gamma_hat == 0.0
    assert joint.gamma_upper == 0.0
    assert np.array_equal(joint.per_probe_gammas, np.zeros(4))


def test_estimate_eta_gamma_joint_recovery():
    """The mu dependence separates efficiency from a flat dark rate."""
    mus = (2.0, 5.0, 10.0, 20.0, 40.0)
    ens = tp.ProbeEnsemble(
        tuple(tp.Probe(id=i, mean_photons=m) for i, m in enumerate(mus))
    )
    cols = [_poisson_column(0.05 * m + 0.3, 12) for m in mus]
    table = tp.CountTable.from_probs(np.column_stack(cols), probe_ids=ens.ids)
    est = tp.estimate_eta_gamma(table, ens)
    assert abs(est.eta_hat - 0.05) < 1e-4
    assert abs(est.gamma_hat - 0.3) < 1e-3
    assert est.gamma_upper >= est.gamma_hat
    assert est.per_probe_gammas.shape == (5,)


def test_estimate_eta_gamma_validation():
    ens = tp.geometric_ensemble(n_probes=2, mu_min=2.0, mu_max=8.0)
    cols = [_poisson_column(0.1 * p.mean_photons, 6) for p in ens.probes]
    table = tp.CountTable.from_probs(np.column_stack(cols), probe_ids=ens.ids)
    with pytest.raises(ValueError):
        tp.estimate_eta_gamma(table, ens, gamma_max=-1.0)


def test_estimate_eta_skips_degenerate_probes():
    ens = tp.ProbeEnsemble((
        tp.Probe(id=0, mean_photons=0.0),
        tp.Probe(id=1, mean_photons=10.0),
    ))
    cols = np.column_stack([
        _poisson_column(0.0, 6),
        _poisson_column(0.5, 6),
    ])
    table = tp.CountTable.from_probs(cols, probe_ids=(0, 1))
    with pytest.warns(UserWarning, match="skipped"):
        est = tp.estimate_eta(table, ens)
    assert math.isnan(est.per_probe_etas[0])
    assert abs(est.per_probe_etas[1] - 0.05) < 1e-5
    assert est.eta_se is None  # single usable probe


def test_estimate_eta_all_degenerate_raises():
    ens = tp.ProbeEnsemble((tp.Probe(id=0, mean_photons=0.0),))
    table = tp.CountTable.from_probs(np.array([[1.0], [0.0]]), probe_ids=(0,))
    with pytest.warns(UserWarning):
        with pytest.raises(tp.EstimationError, match="no usable probes"):
            tp.estimate_eta(table, ens)


def test_estimate_alignment_validation():
    ens = tp.geometric_ensemble(n_probes=3, mu_min=2.0, mu_max=10.0)
    table = tp.CountTable.from_probs(
        np.column_stack([_poisson_column(0.2, 6)] * 2), probe_ids=(0, 1)
    )
    with pytest.raises(ValueError, match="probes"):
        tp.estimate_eta(table, ens)
    bad_ids = tp.CountTable.from_probs(
        np.column_stack([_poisson_column(0.2, 6)] * 3), probe_ids=(5, 6, 7)
    )
    with pytest.raises(ValueError, match="ids"):
        tp.estimate_eta(bad_ids, ens)


def test_dark_rate_direct_zero_events():
    trace = tp.AmplitudeTrace(probe_id=0, amplitudes_mv=np.zeros(100_000))
    est = tp.dark_rate_direct(trace, None, tp.ThresholdSet((6.5,)))
    assert est.rate == 0.0
    assert est.std_error == 0.0
    assert not est.suspect
    assert est.confidence == 0.99
    assert math.isclose(est.upper_bound, CP_0_OF_1E5_99, rel_tol=1e-12)


def test_dark_rate_direct_clopper_pearson_values():
    amps = np.zeros(1_000_000)
    amps[:3] = 10.0
    trace = tp.AmplitudeTrace(probe_id=0, amplitudes_mv=amps)
    cuts = tp.ThresholdSet((6.5,))
    est99 = tp.dark_rate_direct(trace, None, cuts, confidence=0.99)
    assert est99.rate == 3e-6
    assert math.isclose(est99.upper_bound, CP_3_OF_1E6_99, rel_tol=1e-12)
    clean = tp.AmplitudeTrace(probe_id=0, amplitudes_mv=np.zeros(1_000_000))
    est95 = tp.dark_rate_direct(clean, None, cuts, confidence=0.95)
    assert math.isclose(est95.upper_bound, CP_0_OF_1E6_95, rel_tol=1e-12)


def test_dark_rate_direct_boundary_belongs_above():
    trace = tp.AmplitudeTrace(
        probe_id=0, amplitudes_mv=np.array([5.0, 6.5, 7.0, 1.0])
    )
    est = tp.dark_rate_direct(trace, None, tp.ThresholdSet((6.5,)))
    assert est.rate == 0.5


def test_dark_rate_direct_fallback_cut_and_suspect():
    fit = tp.GaussianMixtureFit(
        components=(tp.GaussianComponent(weight=100.0, mean_mv=0.0, sigma_mv=2.0),),
        goodness=1.0,
        bin_width_mv=1.3,
        n_events=100,
    )
    # Cut falls back to mean + 5 sigma = 10; everything fires -> suspect.
    trace = tp.AmplitudeTrace(probe_id=0, amplitudes_mv=np.full(1000, 20.0))
    est = tp.dark_rate_direct(trace, fit, None)
    assert est.rate == 1.0
    assert est.upper_bound == 1.0
    assert est.suspect
    below = tp.AmplitudeTrace(probe_id=0, amplitudes_mv=np.full(1000, 5.0))
    assert tp.dark_rate_direct(below, fit, None).rate == 0.0


def test_dark_rate_direct_validation():
    trace = tp.AmplitudeTrace(probe_id=0, amplitudes_mv=np.zeros(10))
    with pytest.raises(ValueError):
        tp.dark_rate_direct(trace, None, None)
    with pytest.raises(ValueError):
        tp.dark_rate_direct(trace, None, tp.ThresholdSet((1.0,)), confidence=1.0)
