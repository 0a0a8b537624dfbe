"""Reconstruction, azimuthal-difference histograms, event mixing and the modulation fit."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from annipol import physics
from annipol.detector import DET_A, DET_B, HitTable, PixelHit
from annipol.errors import DomainError, FitError, MixingError
from annipol.geometry import DetectorGeometry
from annipol.physics import ELECTRON_REST_ENERGY, delta_phi_bin_edges, wrap_degrees
from annipol.sampling import PURPOSE_MIXING, RandomStreamSpec
from annipol.selection import summarize_module


class Unreconstructable(DomainError):
    """Smeared energies give an arccos argument outside [-1, 1]."""


@dataclass(frozen=True)
class ReconstructedScatter:
    theta: float
    phi: float
    E_sum: float
    lower_energy_first: bool = True


def compton_angles(e_lo, e_hi, dx, dy):
    """Vectorised reconstruction from the lower (recoil) and higher (absorbed) deposit.

    Returns ``(theta, phi, valid)`` in degrees; ``phi`` points from the
    lower-energy pixel to the higher-energy one.
    """
    e_lo = np.asarray(e_lo, dtype=float)
    e_hi = np.asarray(e_hi, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = ELECTRON_REST_ENERGY / (e_lo + e_hi) - ELECTRON_REST_ENERGY / e_hi + 1.0
    valid = (e_lo > 0) & (e_hi > 0) & (np.abs(arg) <= 1.0)
    theta = np.degrees(np.arccos(np.where(valid, arg, 0.0)))
    phi = wrap_degrees(np.degrees(np.arctan2(dy, dx)))
    return theta, phi, valid


def reconstruct_compton(hit_a: PixelHit, hit_b: PixelHit,
                        geometry: DetectorGeometry | None = None) -> ReconstructedScatter:
    """Scattering angles of a two-pixel Compton event, lower-energy pixel taken first."""
    geometry = geometry or DetectorGeometry()
    first, second = sorted((hit_a, hit_b), key=lambda h: h.energy)
    if first.energy <= 0:
        raise Unreconstructable("both deposits must be positive")
    x1, y1 = geometry.pixel_center(first.ix, first.iy)
    x2, y2 = geometry.pixel_center(second.ix, second.iy)
    theta, phi, valid = compton_angles(first.energy, second.energy, x2 - x1, y2 - y1)
    if not valid:
        raise Unreconstructable(f"unphysical energies ({first.energy}, {second.energy}) keV")
    return ReconstructedScatter(float(theta), float(phi), first.energy + second.energy)


@dataclass
class ScatterPairs:
    """Reconstructed scatters in A (index 1) and B (index 2) for each usable event."""

    event_id: np.ndarray
    theta1: np.ndarray
    phi1: np.ndarray
    theta2: np.ndarray
    phi2: np.ndarray

    def __len__(self):
        return len(self.event_id)

    def in_windows(self, theta1_window, theta2_window) -> np.ndarray:
        return (
            (self.theta1 > theta1_window[0]) & (self.theta1 < theta1_window[1])
            & (self.theta2 > theta2_window[0]) & (self.theta2 < theta2_window[1])
        )

    def subset(self, mask) -> "ScatterPairs":
        return ScatterPairs(self.event_id[mask], self.theta1[mask], self.phi1[mask],
                            self.theta2[mask], self.phi2[mask])


def reconstruct_events(table: HitTable, pixel_threshold: float = 100.0,
                       geometry_a: DetectorGeometry | None = None,
                       geometry_b: DetectorGeometry | None = None) -> ScatterPairs:
    """Reconstruct A and B of every event with exactly two fired pixels in each.

    Events whose energies violate the Compton inversion are dropped.
    """
    ids = np.unique(table.event_id)
    out = []
    for det, geom in ((DET_A, geometry_a or DetectorGeometry()), (DET_B, geometry_b or DetectorGeometry())):
        s = summarize_module(table, ids, det, pixel_threshold)
        two = s.n_fired == 2
        lo, hi = s.lo[two], s.hi[two]
        x1, y1 = geom.pixel_center(table.ix[lo], table.iy[lo])
        x2, y2 = geom.pixel_center(table.ix[hi], table.iy[hi])
        theta, phi, valid = compton_angles(table.energy[lo], table.energy[hi], x2 - x1, y2 - y1)
        full_theta = np.full(len(ids), np.nan)
        full_phi = np.full(len(ids), np.nan)
        full_theta[np.flatnonzero(two)[valid]] = theta[valid]
        full_phi[np.flatnonzero(two)[valid]] = phi[valid]
        out.append((full_theta, full_phi))
    (t1, p1), (t2, p2) = out
    ok = np.isfinite(t1) & np.isfinite(t2)
    return ScatterPairs(ids[ok], t1[ok], p1[ok], t2[ok], p2[ok])


# ---------------------------------------------------------------------------
# Histograms
# ---------------------------------------------------------------------------


@dataclass
class DeltaPhiHistogram:
    """Azimuthal-difference histogram in its raw, mixed and corrected stages.

    ``mixed_counts`` are unnormalised mixed entries; ``mixed_scale`` is the
    factor bringing their total to the raw total.  Bins without mixed
    entries are marked unusable and skipped by the fit.
    """

    bin_edges: np.ndarray
    raw_counts: np.ndarray | None = None
    mixed_counts: np.ndarray | None = None
    mixed_scale: float = 1.0
    corrected_values: np.ndarray | None = None
    corrected_errors: np.ndarray | None = None
    usable: np.ndarray | None = None

    @property
    def n_bins(self) -> int:
        return len(self.bin_edges) - 1

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @classmethod
    def from_counts(cls, counts, bin_edges=None) -> "DeltaPhiHistogram":
        """Treat plain counts as an already corrected histogram with Poisson errors."""
        counts = np.asarray(counts, dtype=float)
        edges = delta_phi_bin_edges(len(counts)) if bin_edges is None else np.asarray(bin_edges)
        return cls(edges, raw_counts=counts, corrected_values=counts.copy(),
                   corrected_errors=np.sqrt(np.maximum(counts, 1.0)), usable=np.ones(len(counts), bool))


def fill_delta_phi(delta_phi, edges) -> np.ndarray:
    """Histogram azimuthal differences (deg) into a periodic binning."""
    n = len(edges) - 1
    width = (edges[-1] - edges[0]) / n
    idx = np.floor((wrap_degrees(np.asarray(delta_phi, dtype=float)) - edges[0]) / width).astype(np.int64) % n
    return np.bincount(idx, minlength=n).astype(float)


def accumulate_delta_phi(pairs: ScatterPairs, theta1_window=(72.0, 90.0), theta2_window=(72.0, 90.0),
                         n_bins: int = 24) -> DeltaPhiHistogram:
    edges = delta_phi_bin_edges(n_bins)
    sel = pairs.in_windows(theta1_window, theta2_window)
    return DeltaPhiHistogram(edges, raw_counts=fill_delta_phi(pairs.phi1[sel] - pairs.phi2[sel], edges))


def event_mixing(pairs: ScatterPairs, theta1_window=(72.0, 90.0), theta2_window=(72.0, 90.0),
                 n_mix: int = 100, rng: np.random.Generator | None = None, n_bins: int = 24,
                 chunk: int = 20000) -> DeltaPhiHistogram:
    """Pair each A scatter with ``n_mix`` B scatters drawn from other events.

    Partners are drawn uniformly with replacement from the events passing the
    same angular windows, never from the event itself.
    """
    rng = rng or np.random.default_rng(0)
    sel = pairs.in_windows(theta1_window, theta2_window)
    phi1, phi2 = pairs.phi1[sel], pairs.phi2[sel]
    n = len(phi1)
    if n < 2:
        raise MixingError("event mixing needs at least two selected events")
    edges = delta_phi_bin_edges(n_bins)
    counts = np.zeros(n_bins)
    for start in range(0, n, chunk):
        rows = np.arange(start, min(start + chunk, n))
        partner = rng.integers(0, n - 1, size=(len(rows), n_mix))
        partner += partner >= rows[:, None]
        counts += fill_delta_phi((phi1[rows][:, None] - phi2[partner]).ravel(), edges)
    return DeltaPhiHistogram(edges, mixed_counts=counts)


def acceptance_correct(raw: DeltaPhiHistogram, mixed: DeltaPhiHistogram) -> DeltaPhiHistogram:
    """Divide raw by the mixed histogram scaled to the raw total."""
    if raw.raw_counts is None or mixed.mixed_counts is None:
        raise MixingError("need a raw and a mixed histogram")
    if raw.n_bins != mixed.n_bins or not np.allclose(raw.bin_edges, mixed.bin_edges):
        raise MixingError("raw and mixed histograms use different binning")
    m = mixed.mixed_counts
    if not np.any(m > 0):
        raise MixingError("mixed histogram is empty")
    r = raw.raw_counts
    scale = r.sum() / m.sum()
    usable = m > 0
    m_safe = np.where(usable, m, 1.0)
    norm = m_safe * scale
    values = np.where(usable, r / norm, 0.0)
    # Same as value*sqrt(1/raw + 1/mixed), kept finite for empty raw bins.
    errors = np.where(usable, np.sqrt(np.maximum(r, 1.0)) / norm * np.sqrt(1.0 + r / m_safe), 0.0)
    return DeltaPhiHistogram(raw.bin_edges, r, m, scale, values, errors, usable)


# ---------------------------------------------------------------------------
# Fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    M: float
    mu: float
    sigma_mu: float
    chi2: float
    ndf: int
    R: float
    sigma_R: float
    sigma_M: float = 0.0

    def report(self, n_events: int) -> dict:
        """Flat report in canonical key order."""
        return {
            "M": self.M,
            "mu": self.mu,
            "sigma_mu": self.sigma_mu,
            "chi2": self.chi2,
            "ndf": self.ndf,
            "R": self.R,
            "sigma_R": self.sigma_R,
            "n_events": int(n_events),
        }


def bin_averaged_cos2(edges) -> np.ndarray:
    """Mean of cos(2x) over each bin."""
    a = np.radians(edges[:-1])
    b = np.radians(edges[1:])
    return (np.sin(2 * b) - np.sin(2 * a)) / (2.0 * (b - a))


def fit_modulation(hist: DeltaPhiHistogram) -> FitResult:
    """Weighted least-squares fit of M*(1 - mu*cos(2 dphi)) to the corrected histogram.

    The model is linear in (M, -M*mu) on the basis {1, <cos 2 dphi>_bin}, so
    the normal equations are solved in closed form and mapped back.
    """
    if hist.corrected_values is None:
        raise FitError("histogram has no corrected values")
    use = hist.usable if hist.usable is not None else np.ones(hist.n_bins, bool)
    y = hist.corrected_values[use]
    sig = hist.corrected_errors[use]
    c = bin_averaged_cos2(hist.bin_edges)[use]
    if len(y) < 4:
        raise FitError(f"need at least 4 usable bins, got {len(y)}")
    if np.any(sig <= 0):
        raise FitError("bin errors must be positive")
    w = 1.0 / sig**2
    A = np.array([[w.sum(), (w * c).sum()], [(w * c).sum(), (w * c * c).sum()]])
    rhs = np.array([(w * y).sum(), (w * c * y).sum()])
    det = A[0, 0] * A[1, 1] - A[0, 1] ** 2
    if not det > 1e-12 * A[0, 0] * A[1, 1]:
        raise FitError("singular normal equations")
    cov = np.array([[A[1, 1], -A[0, 1]], [-A[0, 1], A[0, 0]]]) / det
    a0, a1 = cov @ rhs
    if a0 == 0:
        raise FitError("fitted amplitude is zero")
    mu = -a1 / a0
    jac = np.array([a1 / a0**2, -1.0 / a0])
    sigma_mu = math.sqrt(max(jac @ cov @ jac, 0.0))
    chi2 = float(np.sum(w * (y - a0 - a1 * c) ** 2))
    if -1.0 < mu < 1.0:
        R, sigma_R = physics.ratio_R(mu, sigma_mu)
    else:
        R, sigma_R = math.inf, math.inf
    return FitResult(float(a0), float(mu), sigma_mu, chi2, len(y) - 2, R, sigma_R, math.sqrt(cov[0, 0]))


# ---------------------------------------------------------------------------
# Full chain on reconstructed pairs
# ---------------------------------------------------------------------------


def analyze_pairs(pairs: ScatterPairs, theta1_window=(72.0, 90.0), theta2_window=(72.0, 90.0),
                  n_bins: int = 24, n_mix: int = 100, mix_seed: int = 0):
    """Histogram, mix, correct and fit; returns ``(histogram, fit, n_events)``."""
    raw = accumulate_delta_phi(pairs, theta1_window, theta2_window, n_bins)
    rng = RandomStreamSpec(mix_seed).generator(PURPOSE_MIXING)
    mixed = event_mixing(pairs, theta1_window, theta2_window, n_mix, rng, n_bins)
    corrected = acceptance_correct(raw, mixed)
    return corrected, fit_modulation(corrected), int(raw.raw_counts.sum())


def widen_window(window, sigma):
    return max(0.0, window[0] - sigma), min(180.0, window[1] + sigma)


def estimate_theta_systematic(pairs: ScatterPairs, theta1_window=(72.0, 90.0), theta2_window=(72.0, 90.0),
                              sigma_theta: float = 6.5, n_bins: int = 24, n_mix: int = 100,
                              mix_seed: int = 0) -> float:
    """Relative change (mu_nominal - mu_widened)/mu_nominal when both windows grow by sigma_theta."""
    if sigma_theta == 0:
        return 0.0
    _, nominal, _ = analyze_pairs(pairs, theta1_window, theta2_window, n_bins, n_mix, mix_seed)
    _, widened, _ = analyze_pairs(pairs, widen_window(theta1_window, sigma_theta),
                                  widen_window(theta2_window, sigma_theta), n_bins, n_mix, mix_seed)
    return (nominal.mu - widened.mu) / nominal.mu
