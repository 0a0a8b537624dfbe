import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from annipol import physics
from annipol.analysis import (DeltaPhiHistogram, ScatterPairs, Unreconstructable, accumulate_delta_phi,
                              acceptance_correct, analyze_pairs, bin_averaged_cos2, estimate_theta_systematic,
                              event_mixing, fill_delta_phi, fit_modulation, reconstruct_compton, reconstruct_events,
                              widen_window)
from annipol.detector import HitTable, PixelHit
from annipol.errors import FitError, MixingError
from annipol.sampling import PairModel, RandomStreamSpec, sample_pairs

EDGES = physics.delta_phi_bin_edges(24)


def pairs_from(theta1, phi1, theta2, phi2):
    n = len(theta1)
    return ScatterPairs(np.arange(n), np.asarray(theta1, float), np.asarray(phi1, float),
                        np.asarray(theta2, float), np.asarray(phi2, float))


def truth_pairs(n, seed, window=(72.0, 90.0), kappa=1.0):
    model = PairModel(kappa=kappa, theta1_window=window, theta2_window=window)
    b = sample_pairs(model, RandomStreamSpec(seed).generator(), n)
    return pairs_from(b.theta1, b.phi1, b.theta2, b.phi2)


def test_reconstruct_examples():
    assert reconstruct_compton(PixelHit("A", 3, 3, 255.5, 0), PixelHit("A", 4, 3, 255.5, 0)).theta == pytest.approx(90.0)
    r = reconstruct_compton(PixelHit("A", 3, 3, 340.67, 0), PixelHit("A", 3, 2, 170.33, 0))
    assert r.theta == pytest.approx(60.0, abs=1e-3)
    assert r.phi == pytest.approx(90.0)  # from the lower-energy pixel (3,2) to (3,3)
    assert r.E_sum == pytest.approx(511.0)
    assert reconstruct_compton(PixelHit("A", 3, 3, 200, 0), PixelHit("A", 4, 3, 300, 0)).phi == pytest.approx(0.0)


def test_reconstruct_unphysical():
    with pytest.raises(Unreconstructable):
        reconstruct_compton(PixelHit("A", 3, 3, 100.0, 0), PixelHit("A", 4, 3, 105.0, 0))


@given(st.floats(0.5, 179.5))
def test_compton_inversion(theta):
    e_out = physics.scattered_energy(511.0, theta)
    recoil = 511.0 - e_out
    lo, hi = sorted((recoil, e_out))
    r = reconstruct_compton(PixelHit("A", 0, 0, recoil, 0), PixelHit("A", 1, 0, e_out, 0))
    if recoil < e_out:
        assert r.theta == pytest.approx(theta, abs=1e-9)
    else:
        # ordering assumption swaps the roles; the inversion is still exact for the swapped pair
        assert np.cos(np.radians(r.theta)) == pytest.approx(511 / 511 - 511 / hi + 1, abs=1e-9)


def test_reconstruct_events_table():
    table = HitTable(
        event_id=np.array([1, 1, 1, 1, 2, 2, 2]),
        detector=np.array([0, 0, 1, 1, 0, 0, 1], dtype=np.int8),
        ix=np.array([3, 4, 2, 2, 3, 4, 2], dtype=np.int16),
        iy=np.array([3, 3, 2, 3, 3, 3, 2], dtype=np.int16),
        energy=np.array([255.5, 255.5, 170.33, 340.67, 200.0, 311.0, 511.0]),
        time=np.zeros(7),
    )
    pairs = reconstruct_events(table)
    assert list(pairs.event_id) == [1]
    assert pairs.theta1[0] == pytest.approx(90.0) and pairs.theta2[0] == pytest.approx(60.0, abs=1e-3)
    assert pairs.phi2[0] == pytest.approx(90.0)


def test_accumulate_examples():
    p = pairs_from([80, 60], [90, 0], [85, 80], [0, 0])
    h = accumulate_delta_phi(p, (72, 90), (72, 90))
    assert h.raw_counts.sum() == 1
    assert h.raw_counts[np.argmin(np.abs(h.centers - 90.0))] == 1
    counts = fill_delta_phi([185.0], EDGES)
    k = int(np.argmax(counts))
    assert EDGES[k] <= -175.0 < EDGES[k + 1]


def test_fill_delta_phi_periodic():
    counts = fill_delta_phi([-187.0, 172.6, 179.9, -180.0], EDGES)
    assert counts[0] == 4 and counts.sum() == 4


def test_fit_noiseless_exact():
    y = 1000.0 * (1 - 0.4 * bin_averaged_cos2(EDGES))
    fit = fit_modulation(DeltaPhiHistogram.from_counts(y, EDGES))
    assert fit.M == pytest.approx(1000.0, abs=1e-10 * 1000)
    assert fit.mu == pytest.approx(0.4, abs=1e-10)
    assert fit.ndf == 22
    assert fit.R == pytest.approx(physics.ratio_R(fit.mu)[0])


def test_fit_flat_poisson():
    rng = RandomStreamSpec(3).generator()
    y = rng.poisson(5000, 24).astype(float)
    fit = fit_modulation(DeltaPhiHistogram.from_counts(y, EDGES))
    assert abs(fit.mu) < 3 * fit.sigma_mu
    assert 0.2 < fit.chi2 / fit.ndf < 2.5


def test_fit_needs_four_bins():
    h = DeltaPhiHistogram.from_counts(np.ones(24) * 10, EDGES)
    h.usable = np.zeros(24, bool)
    h.usable[:3] = True
    with pytest.raises(FitError):
        fit_modulation(h)


def test_fit_sign_flip_invariance():
    p = truth_pairs(50_000, 4)
    flipped = pairs_from(p.theta1, p.phi2, p.theta2, p.phi1)
    _, f1, _ = analyze_pairs(p, n_mix=20)
    _, f2, _ = analyze_pairs(flipped, n_mix=20)
    assert f1.mu == pytest.approx(f2.mu, abs=5e-3)


def test_fit_recovery_and_scaling():
    rng = RandomStreamSpec(5).generator()
    for mu in (0.0, 0.25, 0.5):
        pulls = []
        for _ in range(20):
            counts = rng.poisson(1e5 * physics.binned_modulation_probabilities(mu, EDGES)).astype(float)
            fit = fit_modulation(DeltaPhiHistogram.from_counts(counts, EDGES))
            pulls.append((fit.mu - mu) / fit.sigma_mu)
        assert np.max(np.abs(pulls)) < 4
    small = fit_modulation(DeltaPhiHistogram.from_counts(1e5 * physics.binned_modulation_probabilities(0.3, EDGES)))
    big = fit_modulation(DeltaPhiHistogram.from_counts(4e5 * physics.binned_modulation_probabilities(0.3, EDGES)))
    assert big.sigma_mu / small.sigma_mu == pytest.approx(0.5, rel=0.1)


def test_acceptance_correct_identity():
    raw = DeltaPhiHistogram(EDGES, raw_counts=np.arange(1, 25, dtype=float))
    mixed = DeltaPhiHistogram(EDGES, mixed_counts=np.arange(1, 25, dtype=float))
    corr = acceptance_correct(raw, mixed)
    np.testing.assert_allclose(corr.corrected_values, 1.0)


def test_acceptance_correct_error_formula():
    r = np.full(24, 100.0)
    m = np.full(24, 10000.0)
    corr = acceptance_correct(DeltaPhiHistogram(EDGES, raw_counts=r), DeltaPhiHistogram(EDGES, mixed_counts=m))
    # normalising the mixed total to the raw total rescales by 1/100
    assert corr.mixed_scale == pytest.approx(0.01)
    v = corr.corrected_values[0]
    assert corr.corrected_errors[0] == pytest.approx(v * np.sqrt(1 / 100 + 1 / 10000))


def test_acceptance_correct_flags_empty_bins():
    m = np.full(24, 50.0)
    m[5] = 0
    corr = acceptance_correct(DeltaPhiHistogram(EDGES, raw_counts=np.full(24, 40.0)),
                              DeltaPhiHistogram(EDGES, mixed_counts=m))
    assert not corr.usable[5] and corr.usable.sum() == 23
    with pytest.raises(MixingError):
        acceptance_correct(DeltaPhiHistogram(EDGES, raw_counts=np.ones(24)),
                           DeltaPhiHistogram(EDGES, mixed_counts=np.zeros(24)))


def test_mixing_counts_and_flatness():
    rng = RandomStreamSpec(6).generator()
    n = 5000
    p = pairs_from(np.full(n, 80.0), rng.uniform(-180, 180, n), np.full(n, 80.0), rng.uniform(-180, 180, n))
    mixed = event_mixing(p, n_mix=100, rng=RandomStreamSpec(6).generator(2))
    assert mixed.mixed_counts.sum() == 100 * n
    expected = 100 * n / 24
    assert np.all(np.abs(mixed.mixed_counts - expected) < 3 * np.sqrt(expected) + 1)


def test_mixing_destroys_correlation():
    p = truth_pairs(20_000, 7)
    mixed = event_mixing(p, n_mix=50, rng=RandomStreamSpec(7).generator(2))
    fit = fit_modulation(DeltaPhiHistogram.from_counts(mixed.mixed_counts, EDGES))
    # mixed entries are not independent, so compare against the per-event Poisson scale
    sigma = fit.sigma_mu * np.sqrt(50)
    assert abs(fit.mu) < 3 * sigma


def test_mixing_needs_two_events():
    with pytest.raises(MixingError):
        event_mixing(pairs_from([80], [0], [80], [0]))


def test_mixing_corrects_discrete_acceptance():
    # azimuths restricted to the eight neighbour directions of a pixel grid, no correlation
    rng = RandomStreamSpec(8).generator()
    n = 40_000
    grid = np.arange(-180, 180, 45.0)
    p = pairs_from(np.full(n, 80.0), rng.choice(grid, n), np.full(n, 80.0), rng.choice(grid, n))
    hist, fit, _ = analyze_pairs(p, n_mix=100)
    assert abs(fit.mu) < 3 * fit.sigma_mu


def test_pinned_sample_matches_oracle():
    p = truth_pairs(200_000, 9, window=(81.9, 82.1))
    hist, fit, n = analyze_pairs(p, (81.9, 82.1), (81.9, 82.1), n_mix=50)
    pred = physics.integrate_acceptance((81.9, 82.1), (81.9, 82.1))
    use = hist.usable
    expected = pred.bin_probabilities * 24
    chi2 = np.sum(((hist.corrected_values - expected) / hist.corrected_errors)[use] ** 2)
    assert stats.chi2.sf(chi2, use.sum() - 1) > 0.01
    assert abs(fit.mu - pred.mu) < 3 * fit.sigma_mu


def test_systematic_zero_width():
    p = truth_pairs(2000, 10)
    assert estimate_theta_systematic(p, sigma_theta=0.0) == 0.0


def test_widen_window_clips():
    assert widen_window((3.0, 178.0), 6.5) == (0.0, 180.0)


def test_fit_report_key_order():
    y = 1000.0 * (1 - 0.3 * bin_averaged_cos2(EDGES))
    rep = fit_modulation(DeltaPhiHistogram.from_counts(y, EDGES)).report(123)
    assert list(rep) == ["M", "mu", "sigma_mu", "chi2", "ndf", "R", "sigma_R", "n_events"]
