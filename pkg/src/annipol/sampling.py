"""Seeded generation of annihilation-pair kinematics.

A pair is generated in factorised form: both polar angles from their
azimuth-averaged marginals, then the azimuthal difference from
1 - amp*cos(2 dphi) with amp = kappa * A(E1, th1) * A(E2, th2).  For 511/511
keV pairs this reproduces the double Compton cross-section exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from functools import lru_cache

import numpy as np

from annipol import physics
from annipol.errors import ConfigError, DomainError
from annipol.geometry import SetupGeometry

THETA_TABLE_SIZE = 2048
_ENERGY_NODE_STEP = 1.0  # keV between cached marginal tables


@dataclass(frozen=True)
class RandomStreamSpec:
    """Address of one independent random stream.

    Streams are derived with ``SeedSequence(master_seed, spawn_key=(stream_id, purpose))``
    so the same address yields the same numbers regardless of which worker
    (or how many workers) consume it.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        if self.stream_id < 0:
            raise ConfigError("stream_id must be non-negative")

    def generator(self, purpose: int = 0) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id, purpose))
        return np.random.Generator(np.random.PCG64(seq))


# Purposes within one stream.
PURPOSE_SAMPLING = 0
PURPOSE_DIGITIZE = 1
PURPOSE_MIXING = 2


# ---------------------------------------------------------------------------
# Polar-angle marginal
# ---------------------------------------------------------------------------


@lru_cache(maxsize=512)
def theta_cdf_table(energy: float, lo: float = 0.0, hi: float = 180.0):
    """Tabulated CDF of F_E(theta) sin(theta) on [lo, hi] (deg).

    Returns ``(theta_grid, cdf)``, both of length THETA_TABLE_SIZE.
    """
    grid = np.linspace(lo, hi, THETA_TABLE_SIZE)
    F, _ = physics.klein_nishina_factors(energy, grid)
    dens = F * np.sin(np.radians(grid))
    steps = 0.5 * (dens[1:] + dens[:-1]) * np.diff(grid)
    cdf = np.concatenate(([0.0], np.cumsum(steps)))
    cdf /= cdf[-1]
    grid.setflags(write=False)
    cdf.setflags(write=False)
    return grid, cdf


def _invert_table(energy, u, window):
    grid, cdf = theta_cdf_table(float(energy), float(window[0]), float(window[1]))
    return np.interp(u, cdf, grid)


def sample_theta_marginal(energy, rng: np.random.Generator, size=None, window=(0.0, 180.0)):
    """Draw polar scattering angles (deg) from F_E(theta) sin(theta).

    ``energy`` may be a scalar or an array of per-draw energies (then ``size``
    defaults to its length); non-tabulated energies are handled by blending
    the inverse CDFs of the two neighbouring cached energy nodes.
    """
    lo, hi = window
    if not 0.0 <= lo < hi <= 180.0:
        raise DomainError(f"invalid theta window {window!r}")
    energy = np.asarray(energy, dtype=float)
    if np.any(energy <= 0):
        raise DomainError("photon energy must be positive")
    if energy.ndim == 0:
        u = rng.random(size)
        out = _invert_table(float(energy), u, window)
        return out if np.ndim(out) else float(out)

    n = energy.shape[0] if size is None else size
    u = rng.random(n)
    node_lo = np.floor(energy / _ENERGY_NODE_STEP) * _ENERGY_NODE_STEP
    frac = (energy - node_lo) / _ENERGY_NODE_STEP
    out = np.empty(n)
    for node in np.unique(node_lo):
        sel = node_lo == node
        t_lo = _invert_table(node, u[sel], window)
        f = frac[sel]
        if np.any(f > 0):
            t_hi = _invert_table(node + _ENERGY_NODE_STEP, u[sel], window)
            out[sel] = (1.0 - f) * t_lo + f * t_hi
        else:
            out[sel] = t_lo
    return out


# ---------------------------------------------------------------------------
# Azimuthal difference
# ---------------------------------------------------------------------------


def delta_phi_cdf(x_rad, mu_amp):
    """CDF of (1 - mu cos 2x)/(2 pi) on [-pi, pi)."""
    return (x_rad + math.pi - 0.5 * mu_amp * np.sin(2.0 * x_rad)) / (2.0 * math.pi)


def sample_delta_phi(mu_amp, rng: np.random.Generator, size=None, tol=1e-10, max_iter=20):
    """Draw dphi (deg) in [-180, 180) from a density proportional to 1 - mu_amp*cos(2 dphi).

    Newton iteration on the analytic CDF; draws that fail to converge within
    ``max_iter`` steps fall back to bisection.
    """
    amp = np.asarray(mu_amp, dtype=float)
    if np.any(amp < 0.0) or np.any(amp >= 1.0):
        raise DomainError("mu_amp must lie in [0, 1)")
    if size is None and amp.ndim:
        size = amp.shape
    u = rng.random(size)
    amp = np.broadcast_to(amp, np.shape(u))
    target = 2.0 * math.pi * u - math.pi
    x = target.copy()
    done = np.zeros(np.shape(u), dtype=bool)
    for _ in range(max_iter):
        g = x - 0.5 * amp * np.sin(2.0 * x) - target
        step = g / (1.0 - amp * np.cos(2.0 * x))
        x = np.where(done, x, x - step)
        done |= np.abs(step) < tol
        if done.all():
            break
    if not done.all():
        x = np.where(done, x, _bisect_delta_phi(target, amp, tol))
    deg = np.clip(np.degrees(x), -180.0, np.nextafter(180.0, 0.0))
    return deg if np.ndim(deg) else float(deg)


def _bisect_delta_phi(target, amp, tol):
    a = np.full(np.shape(target), -math.pi)
    b = np.full(np.shape(target), math.pi)
    while np.max(b - a) > tol:
        m = 0.5 * (a + b)
        left = m - 0.5 * amp * np.sin(2.0 * m) - target < 0.0
        a = np.where(left, m, a)
        b = np.where(left, b, m)
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# Pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairModel:
    kappa: float = 1.0
    theta_scat_nominal: float = 0.0  # deg; 0 means no prior scatter
    geometry: SetupGeometry = field(default_factory=SetupGeometry)
    theta1_window: tuple[float, float] = (0.0, 180.0)
    theta2_window: tuple[float, float] = (0.0, 180.0)

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ConfigError("kappa must lie in [0, 1]")
        if not 0.0 <= self.theta_scat_nominal < 180.0:
            raise ConfigError("theta_scat_nominal must lie in [0, 180)")


@dataclass(frozen=True)
class PairTruth:
    E1: float
    E2_after_scatter: float
    theta_scat_true: float
    theta1: float
    theta2: float
    phi1: float
    phi2: float
    kappa_used: float
    weight: float
    dir1: tuple[float, float, float]
    dir2: tuple[float, float, float]
    origin2: tuple[float, float, float]

    @property
    def delta_phi(self) -> float:
        return physics.wrap_degrees(self.phi1 - self.phi2)


@dataclass
class PairBatch:
    """Column-oriented batch of :class:`PairTruth` records."""

    E1: np.ndarray
    E2_after_scatter: np.ndarray
    theta_scat_true: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    kappa_used: np.ndarray
    weight: np.ndarray
    dir1: np.ndarray  # (n, 3) travel direction of the photon into Detector A
    dir2: np.ndarray  # (n, 3) travel direction of the photon into Detector B
    origin2: np.ndarray  # (n, 3) point the B photon leaves from (source or scatter vertex)

    def __len__(self):
        return len(self.E1)

    def __getitem__(self, i: int) -> PairTruth:
        vals = {}
        for f in fields(self):
            v = getattr(self, f.name)[i]
            vals[f.name] = tuple(float(c) for c in v) if np.ndim(v) else float(v)
        return PairTruth(**vals)

    @property
    def delta_phi(self) -> np.ndarray:
        return physics.wrap_degrees(self.phi1 - self.phi2)

    @classmethod
    def from_pairs(cls, pairs) -> "PairBatch":
        cols = {f.name: np.array([getattr(p, f.name) for p in pairs], dtype=float) for f in fields(cls)}
        return cls(**cols)

    @classmethod
    def concatenate(cls, batches) -> "PairBatch":
        return cls(**{f.name: np.concatenate([getattr(b, f.name) for b in batches]) for f in fields(cls)})


def _orthonormal_basis(axis):
    axis = np.asarray(axis, dtype=float)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return u, v


def sample_cone(axis, half_angle: float, rng: np.random.Generator, n: int) -> np.ndarray:
    """Unit vectors uniform in solid angle within ``half_angle`` (rad) of ``axis``."""
    axis = np.asarray(axis, dtype=float)
    cos_t = 1.0 - rng.random(n) * (1.0 - math.cos(half_angle))
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t**2))
    az = 2.0 * math.pi * rng.random(n)
    u, v = _orthonormal_basis(axis)
    return (
        (sin_t * np.cos(az))[:, None] * u
        + (sin_t * np.sin(az))[:, None] * v
        + cos_t[:, None] * axis
    )


def _sample_prior_scatter(geom: SetupGeometry, theta_nominal: float, rng, n: int):
    """Incoming direction, vertex and outgoing direction of the scatter in Detector C.

    Outgoing directions are restricted to the cone around Detector B and
    accepted with probability proportional to the unpolarized Klein-Nishina
    density at 511 keV.
    """
    alpha_c = geom.cone_to_scatterer()
    alpha_b = geom.cone_to_b_from_scatterer()
    if alpha_c <= 0.0 or alpha_b <= 0.0:
        raise ConfigError("empty acceptance cone for the prior scatter")
    b_axis = geom.frame_b().axis
    src = geom.source_position
    half_side = 0.5 * geom.scatterer.side

    reach = math.degrees(alpha_b + alpha_c)
    grid = np.linspace(max(0.0, theta_nominal - reach), min(180.0, theta_nominal + reach), 2001)
    f_max = float(np.max(physics.kinematic_factors(grid).F)) * 1.001

    d_in, vert, d_out = [], [], []
    have = 0
    efficiency = 0.5
    while have < n:
        m = int((n - have) / efficiency * 1.2) + 64
        d0 = sample_cone([0.0, 0.0, 1.0], alpha_c, rng, m)
        p = src + d0 * (geom.scatterer.source_distance / d0[:, 2])[:, None]
        d1 = sample_cone(b_axis, alpha_b, rng, m)
        cos_s = np.clip(np.einsum("ij,ij->i", d0, d1), -1.0, 1.0)
        w = physics.kinematic_factors(np.degrees(np.arccos(cos_s))).F / f_max
        ok = (np.abs(p[:, 0]) <= half_side) & (np.abs(p[:, 1]) <= half_side) & (rng.random(m) < w)
        efficiency = max(ok.mean(), 1e-3)
        take = np.flatnonzero(ok)[: n - have]
        d_in.append(d0[take])
        vert.append(p[take])
        d_out.append(d1[take])
        have += len(take)
    return np.concatenate(d_in), np.concatenate(vert), np.concatenate(d_out)


def sample_pairs(model: PairModel, rng: np.random.Generator, n: int) -> PairBatch:
    """Generate ``n`` annihilation pairs heading for the polarimeters."""
    geom = model.geometry
    src = geom.source_position
    if model.theta_scat_nominal > 0.0:
        d_in, vertex, d_out = _sample_prior_scatter(geom, model.theta_scat_nominal, rng, n)
        cos_s = np.clip(np.einsum("ij,ij->i", d_in, d_out), -1.0, 1.0)
        theta_scat = np.degrees(np.arccos(cos_s))
        E2 = physics.scattered_energy(physics.ELECTRON_REST_ENERGY, theta_scat)
        dir1 = -d_in
        dir2 = d_out
        origin2 = vertex
    else:
        alpha = geom.cone_to_b_from_source()
        if alpha <= 0.0:
            raise ConfigError("empty acceptance cone towards Detector B")
        dir2 = sample_cone([0.0, 0.0, 1.0], alpha, rng, n)
        dir1 = -dir2
        origin2 = np.broadcast_to(src, (n, 3)).copy()
        theta_scat = np.zeros(n)
        E2 = np.full(n, physics.ELECTRON_REST_ENERGY)

    E1 = np.full(n, physics.ELECTRON_REST_ENERGY)
    theta1 = sample_theta_marginal(physics.ELECTRON_REST_ENERGY, rng, n, model.theta1_window)
    theta2 = sample_theta_marginal(E2, rng, n, model.theta2_window)
    amp = model.kappa * physics.analyzing_power(E1, theta1) * physics.analyzing_power(E2, theta2)
    phi1 = 360.0 * rng.random(n) - 180.0
    dphi = sample_delta_phi(amp, rng)
    phi2 = physics.wrap_degrees(phi1 - dphi)
    return PairBatch(
        E1=E1,
        E2_after_scatter=np.asarray(E2, dtype=float),
        theta_scat_true=theta_scat,
        theta1=theta1,
        theta2=theta2,
        phi1=phi1,
        phi2=phi2,
        kappa_used=np.full(n, model.kappa),
        weight=np.ones(n),
        dir1=dir1,
        dir2=dir2,
        origin2=origin2,
    )


def sample_pair(model: PairModel, rng: np.random.Generator) -> PairTruth:
    return sample_pairs(model, rng, 1)[0]
