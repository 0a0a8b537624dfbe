"""Closed-form Compton polarimetry formulas.

Angles at every public function are in degrees and energies in keV.  The
functions accept scalars or numpy arrays; scalar input gives scalar output.

The double Compton cross-section of an annihilation pair is proportional to

    F(th1) F(th2) - G(th1) G(th2) cos(2 dphi)

and for a photon of energy E the kinematic factors generalise to the
Klein-Nishina pieces F_E = eps^2 (eps + 1/eps - sin^2) and G_E = eps^2 sin^2,
with eps = E'/E.  At E = 511 keV these reduce exactly to the familiar
F = (2 + (1-cos)^3)/(2-cos)^3 and G = sin^2/(2-cos)^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar

from annipol.errors import DomainError

ELECTRON_REST_ENERGY = 511.0  # keV, exact by convention
CLASSICAL_ELECTRON_RADIUS = 2.8179403262e-15  # m


@dataclass(frozen=True)
class PhysicsConstants:
    electron_rest_energy: float = ELECTRON_REST_ENERGY
    # Only sets the absolute cross-section scale, which never enters a ratio.
    classical_electron_radius: float = CLASSICAL_ELECTRON_RADIUS


class KinematicFactors(NamedTuple):
    F: float | np.ndarray
    G: float | np.ndarray


class TheoryPrediction(NamedTuple):
    mu: float
    R: float


@dataclass(frozen=True)
class ScatterAngles:
    """Polar angles of both scatters and the azimuthal difference.

    ``delta_phi`` is wrapped into [-180, 180) on construction.
    """

    theta1: float
    theta2: float
    delta_phi: float

    def __post_init__(self):
        _check_theta(self.theta1)
        _check_theta(self.theta2)
        object.__setattr__(self, "delta_phi", float(wrap_degrees(self.delta_phi)))


def wrap_degrees(angle):
    """Wrap an angle (or array of angles) into [-180, 180)."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + 180.0, 360.0) - 180.0
    return wrapped if np.ndim(wrapped) else float(wrapped)


def _check_theta(theta):
    t = np.asarray(theta, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 180.0):
        raise DomainError(f"scattering angle outside [0, 180] deg: {theta!r}")


def _check_energy(energy):
    e = np.asarray(energy, dtype=float)
    if np.any(~np.isfinite(e)) or np.any(e <= 0.0):
        raise DomainError(f"photon energy must be positive: {energy!r}")


def _out(x):
    return x if np.ndim(x) else float(x)


def kinematic_factors(theta) -> KinematicFactors:
    """F and G of the annihilation-pair cross-section at polar angle ``theta``."""
    _check_theta(theta)
    c = np.cos(np.radians(theta))
    s2 = np.sin(np.radians(theta)) ** 2
    F = (2.0 + (1.0 - c) ** 3) / (2.0 - c) ** 3
    G = s2 / (2.0 - c) ** 2
    return KinematicFactors(_out(F), _out(G))


def energy_ratio(energy, theta):
    """eps = E'/E for Compton scattering of a photon of ``energy`` keV."""
    k = np.asarray(energy, dtype=float) / ELECTRON_REST_ENERGY
    return 1.0 / (1.0 + k * (1.0 - np.cos(np.radians(theta))))


def klein_nishina_factors(energy, theta) -> KinematicFactors:
    """Energy-dependent F_E, G_E; identical to :func:`kinematic_factors` at 511 keV."""
    _check_energy(energy)
    _check_theta(theta)
    eps = energy_ratio(energy, theta)
    s2 = np.sin(np.radians(theta)) ** 2
    F = eps**2 * (eps + 1.0 / eps - s2)
    G = eps**2 * s2
    return KinematicFactors(_out(F), _out(G))


def joint_cross_section_shape(angles: ScatterAngles) -> float:
    """Bracket of the double Compton cross-section, without the r0^4/16 prefactor."""
    F1, G1 = kinematic_factors(angles.theta1)
    F2, G2 = kinematic_factors(angles.theta2)
    return F1 * F2 - G1 * G2 * math.cos(2.0 * math.radians(angles.delta_phi))


def scattered_energy(energy, theta):
    """Photon energy after Compton scattering through ``theta``."""
    _check_energy(energy)
    return _out(np.asarray(energy, dtype=float) * energy_ratio(energy, theta))


def analyzing_power(energy, theta):
    """A = sin^2 / (eps + 1/eps - sin^2), the single-photon azimuthal asymmetry."""
    _check_energy(energy)
    _check_theta(theta)
    eps = energy_ratio(energy, theta)
    s2 = np.sin(np.radians(theta)) ** 2
    return _out(s2 / (eps + 1.0 / eps - s2))


def optimal_theta(energy: float) -> float:
    """Scattering angle (deg) that maximises the analyzing power at ``energy``."""
    _check_energy(energy)
    res = minimize_scalar(
        lambda t: -analyzing_power(energy, t),
        bounds=(1.0, 179.0),
        method="bounded",
        options={"xatol": 1e-4},
    )
    return float(res.x)


def theory_modulation(E1, theta1, E2, theta2, kappa=1.0) -> TheoryPrediction:
    """Modulation factor kappa*A1*A2 and the 90/0 degree rate ratio.

    ``kappa`` is the retained fraction of the entangled correlation:
    1 entangled, 0.5 separable, 0 fully decohered.
    """
    if not 0.0 <= kappa <= 1.0:
        raise DomainError(f"kappa must lie in [0, 1], got {kappa}")
    mu = kappa * analyzing_power(E1, theta1) * analyzing_power(E2, theta2)
    R, _ = ratio_R(mu)
    return TheoryPrediction(float(mu), R)


def ratio_R(mu: float, sigma_mu: float = 0.0) -> tuple[float, float]:
    """R = (1+mu)/(1-mu) with first-order error propagation."""
    if not -1.0 < mu < 1.0:
        raise DomainError(f"mu must lie in (-1, 1), got {mu}")
    R = (1.0 + mu) / (1.0 - mu)
    sigma_R = 2.0 * sigma_mu / (1.0 - mu) ** 2
    return float(R), float(sigma_R)


def mu_from_R(R: float) -> float:
    return (R - 1.0) / (R + 1.0)


# ---------------------------------------------------------------------------
# Finite-window oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AcceptancePrediction:
    mu: float
    R: float
    bin_edges: np.ndarray
    bin_probabilities: np.ndarray  # sums to 1 over the full period


def _gauss_legendre_panels(lo: float, hi: float, n_panels: int, order: int):
    """Nodes and weights of composite Gauss-Legendre on [lo, hi] (radians)."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _window_moments(window, energy, n_panels, order):
    lo, hi = (float(v) for v in window)
    if not (0.0 <= lo <= 180.0 and 0.0 <= hi <= 180.0):
        raise DomainError(f"theta window outside [0, 180] deg: {window!r}")
    if hi < lo:
        raise DomainError(f"empty theta window: {window!r}")
    if hi == lo:
        F, G = klein_nishina_factors(energy, lo)
        return float(F), float(G)
    nodes, weights = _gauss_legendre_panels(math.radians(lo), math.radians(hi), n_panels, order)
    F, G = klein_nishina_factors(energy, np.degrees(nodes))
    jac = np.sin(nodes) * weights
    return float(np.sum(F * jac)), float(np.sum(G * jac))


def delta_phi_bin_edges(n_bins: int = 24) -> np.ndarray:
    """Uniform edges over one full period, offset half a bin so 0 and +-90 sit at centres."""
    width = 360.0 / n_bins
    return -180.0 - 0.5 * width + width * np.arange(n_bins + 1)


def binned_modulation_probabilities(mu: float, edges: np.ndarray) -> np.ndarray:
    """Probability per bin of the density (1 - mu cos 2x)/(2 pi)."""
    a = np.radians(edges[:-1])
    b = np.radians(edges[1:])
    return ((b - a) - 0.5 * mu * (np.sin(2 * b) - np.sin(2 * a))) / (2.0 * math.pi)


def integrate_acceptance(
    theta1_window,
    theta2_window,
    E1: float = ELECTRON_REST_ENERGY,
    E2: float = ELECTRON_REST_ENERGY,
    kappa: float = 1.0,
    n_bins: int = 24,
    n_panels: int = 4,
    order: int = 16,
) -> AcceptancePrediction:
    """Average the pair cross-section over finite polar-angle windows.

    Solid-angle weights sin(theta) are included.  The effective modulation is
    the ratio of the cos(2 dphi) coefficient to the constant one; the returned
    bin probabilities describe the resulting dphi density.  A window with
    equal edges is evaluated pointwise.
    """
    if not 0.0 <= kappa <= 1.0:
        raise DomainError(f"kappa must lie in [0, 1], got {kappa}")
    F1, G1 = _window_moments(theta1_window, E1, n_panels, order)
    F2, G2 = _window_moments(theta2_window, E2, n_panels, order)
    mu = kappa * (G1 * G2) / (F1 * F2)
    edges = delta_phi_bin_edges(n_bins)
    R, _ = ratio_R(mu)
    return AcceptancePrediction(mu, R, edges, binned_modulation_probabilities(mu, edges))
