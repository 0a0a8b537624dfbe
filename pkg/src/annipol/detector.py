"""Simplified photon transport and digitization.

Each polarimeter photon undergoes exactly one Compton scatter (the recoil
energy stays in the pixel where it happens) followed by photoabsorption of
the scattered photon wherever its free path ends.  Photons that leave the
matrix, or land in the pixel they scattered in, give incomplete records that
selection later rejects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from annipol import physics
from annipol.geometry import DetectorGeometry, Frame, SetupGeometry, angular_coverage  # noqa: F401
from annipol.sampling import PairBatch, PairTruth

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))

DETECTOR_IDS = ("A", "B", "C")
DET_A, DET_B, DET_C = 0, 1, 2


@dataclass(frozen=True)
class TransportConfig:
    lambda511_mm: float = 20.0
    lambda_abs_mm: float = 10.0
    sigma_t_ns: float = 0.3


def energy_sigma(energy, fwhm_at_511):
    """Gaussian width (keV) of a deposit, scaling as sqrt(E) from the 511 keV point."""
    e = np.maximum(np.asarray(energy, dtype=float), 0.0)
    return fwhm_at_511 * physics.ELECTRON_REST_ENERGY * FWHM_TO_SIGMA * np.sqrt(e / physics.ELECTRON_REST_ENERGY)


def smear_energy(E_true, fwhm_at_511, rng: np.random.Generator):
    """Apply Gaussian energy resolution; negative outcomes are clamped to zero."""
    e = np.asarray(E_true, dtype=float)
    if np.any(e < 0):
        raise ValueError("true energy must be non-negative")
    out = np.maximum(e + energy_sigma(e, fwhm_at_511) * rng.standard_normal(e.shape), 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class PixelHit:
    detector_id: str
    ix: int
    iy: int
    energy: float
    time: float


@dataclass
class EventRecord:
    event_id: int
    hits: list[PixelHit]
    truth: PairTruth | None = None

    def module(self, detector_id: str) -> list[PixelHit]:
        return [h for h in self.hits if h.detector_id == detector_id]


@dataclass
class HitTable:
    """Column store of digitized hits, one row per hit, grouped by ascending event id.

    The ``truth_*`` columns repeat the event-level truth on every row of the
    event (NaN when unknown); ``truth_first_pixel`` is 1 for the pixel of the
    first interaction, 0 for the absorption pixel and -1 for the scatterer.
    """

    event_id: np.ndarray
    detector: np.ndarray
    ix: np.ndarray
    iy: np.ndarray
    energy: np.ndarray
    time: np.ndarray
    truth_theta1: np.ndarray | None = None
    truth_theta2: np.ndarray | None = None
    truth_dphi: np.ndarray | None = None
    truth_thetascat: np.ndarray | None = None
    truth_first_pixel: np.ndarray | None = None

    def __len__(self):
        return len(self.event_id)

    @property
    def has_truth(self) -> bool:
        return self.truth_theta1 is not None

    def event_ids(self) -> np.ndarray:
        return np.unique(self.event_id)

    def take_rows(self, mask_or_idx) -> "HitTable":
        out = {}
        for f in fields(self):
            col = getattr(self, f.name)
            out[f.name] = None if col is None else col[mask_or_idx]
        return HitTable(**out)

    def take_events(self, ids) -> "HitTable":
        return self.take_rows(np.isin(self.event_id, ids))

    @classmethod
    def empty(cls, truth: bool = False) -> "HitTable":
        t = np.empty(0) if truth else None
        return cls(
            np.empty(0, np.int64), np.empty(0, np.int8), np.empty(0, np.int16), np.empty(0, np.int16),
            np.empty(0), np.empty(0), t, t, t, t, None if t is None else np.empty(0, np.int8),
        )

    @classmethod
    def concatenate(cls, tables) -> "HitTable":
        tables = list(tables)
        if not tables:
            return cls.empty()
        out = {}
        for f in fields(cls):
            cols = [getattr(t, f.name) for t in tables]
            out[f.name] = None if any(c is None for c in cols) else np.concatenate(cols)
        return cls(**out)

    def records(self):
        """Iterate over :class:`EventRecord` objects (slow path, for inspection and tests)."""
        if len(self) == 0:
            return
        starts = np.flatnonzero(np.r_[True, self.event_id[1:] != self.event_id[:-1]])
        ends = np.r_[starts[1:], len(self)]
        for s, e in zip(starts, ends):
            hits = [
                PixelHit(DETECTOR_IDS[self.detector[k]], int(self.ix[k]), int(self.iy[k]),
                         float(self.energy[k]), float(self.time[k]))
                for k in range(s, e)
            ]
            yield EventRecord(int(self.event_id[s]), hits)

    @classmethod
    def from_records(cls, records) -> "HitTable":
        rows = [(r.event_id, h) for r in records for h in r.hits]
        return cls(
            event_id=np.array([r[0] for r in rows], dtype=np.int64),
            detector=np.array([DETECTOR_IDS.index(h.detector_id) for _, h in rows], dtype=np.int8),
            ix=np.array([h.ix for _, h in rows], dtype=np.int16),
            iy=np.array([h.iy for _, h in rows], dtype=np.int16),
            energy=np.array([h.energy for _, h in rows], dtype=float),
            time=np.array([h.time for _, h in rows], dtype=float),
        )


@dataclass
class PhotonDeposits:
    """Truth-level outcome of one photon in a polarimeter (vectorised)."""

    first_ok: np.ndarray
    ix1: np.ndarray
    iy1: np.ndarray
    e1: np.ndarray
    second_ok: np.ndarray
    ix2: np.ndarray
    iy2: np.ndarray
    e2: np.ndarray


def _perp_component(vec, d):
    out = vec[None, :] - np.einsum("ij,j->i", d, vec)[:, None] * d
    return out / np.linalg.norm(out, axis=1)[:, None]


def transport_photons(origin, direction, energy, theta, phi, frame: Frame,
                      det: DetectorGeometry, depth, path) -> PhotonDeposits:
    """Deterministic core of the polarimeter transport.

    ``depth`` and ``path`` are the already drawn free path lengths (mm) to the
    Compton vertex and from there to the absorption point.  The scatter
    azimuth is measured in the plane transverse to the photon, from the
    projection of the module x axis towards the projection of its y axis.
    """
    origin = np.atleast_2d(np.asarray(origin, dtype=float))
    d = np.atleast_2d(np.asarray(direction, dtype=float))
    n = len(d)
    energy = np.broadcast_to(np.asarray(energy, dtype=float), (n,))
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (n,))
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (n,))

    dn = d @ frame.axis
    heading_in = dn > 1e-12
    t_entry = np.where(heading_in, ((frame.center - origin) @ frame.axis) / np.where(heading_in, dn, 1.0), 0.0)
    entry = origin + t_entry[:, None] * d

    p1 = entry + np.asarray(depth, dtype=float)[:, None] * d
    rel1 = p1 - frame.center
    x1, y1, z1 = rel1 @ frame.ex, rel1 @ frame.ey, rel1 @ frame.axis
    ix1, iy1 = det.pixel_index(x1, y1)
    first_ok = heading_in & (z1 <= det.crystal_length) & (ix1 >= 0)

    e_scat = physics.scattered_energy(energy, theta)
    recoil = energy - e_scat

    u_ref = _perp_component(frame.ex, d)
    v_raw = frame.ey[None, :] - np.einsum("ij,j->i", d, frame.ey)[:, None] * d
    v_raw -= np.einsum("ij,ij->i", v_raw, u_ref)[:, None] * u_ref
    v_ref = v_raw / np.linalg.norm(v_raw, axis=1)[:, None]
    th, ph = np.radians(theta), np.radians(phi)
    d2 = (np.sin(th) * np.cos(ph))[:, None] * u_ref + (np.sin(th) * np.sin(ph))[:, None] * v_ref + np.cos(th)[:, None] * d

    p2 = p1 + np.asarray(path, dtype=float)[:, None] * d2
    rel2 = p2 - frame.center
    x2, y2, z2 = rel2 @ frame.ex, rel2 @ frame.ey, rel2 @ frame.axis
    ix2, iy2 = det.pixel_index(x2, y2)
    second_ok = first_ok & (z2 >= 0.0) & (z2 <= det.crystal_length) & (ix2 >= 0)

    same = second_ok & (ix1 == ix2) & (iy1 == iy2)
    e1 = np.where(same, energy, recoil)
    second_ok = second_ok & ~same
    return PhotonDeposits(first_ok, ix1, iy1, np.where(first_ok, e1, 0.0),
                          second_ok, ix2, iy2, np.where(second_ok, e_scat, 0.0))


def digitize_batch(pairs: PairBatch, setup: SetupGeometry, transport: TransportConfig,
                   rng: np.random.Generator, first_event_id: int = 0, scatterer_active: bool = True,
                   with_truth: bool = True) -> HitTable:
    """Digitize a batch of pairs into a :class:`HitTable`.

    Event ids are ``first_event_id + index`` within the batch; events without
    any hit do not appear in the table.
    """
    n = len(pairs)
    dep_a, dep_b = _transport_pairs(pairs, setup, transport, rng)
    e_c = physics.ELECTRON_REST_ENERGY - pairs.E2_after_scatter
    c_ok = (pairs.theta_scat_true > 0.0) & scatterer_active

    # Five slots per event: A first, A second, B first, B second, C.
    valid = np.stack([dep_a.first_ok, dep_a.second_ok, dep_b.first_ok, dep_b.second_ok, c_ok], axis=1)
    det = np.broadcast_to(np.array([DET_A, DET_A, DET_B, DET_B, DET_C], dtype=np.int8), (n, 5))
    zeros = np.zeros(n, dtype=np.int64)
    ix = np.stack([dep_a.ix1, dep_a.ix2, dep_b.ix1, dep_b.ix2, zeros], axis=1)
    iy = np.stack([dep_a.iy1, dep_a.iy2, dep_b.iy1, dep_b.iy2, zeros], axis=1)
    e_true = np.stack([dep_a.e1, dep_a.e2, dep_b.e1, dep_b.e2, e_c], axis=1)
    first = np.broadcast_to(np.array([1, 0, 1, 0, -1], dtype=np.int8), (n, 5))
    fwhm = np.array([setup.detector_a.energy_resolution_fwhm_at_511] * 2
                    + [setup.detector_b.energy_resolution_fwhm_at_511] * 2
                    + [setup.scatterer.energy_resolution_fwhm_at_511])
    event = np.broadcast_to((first_event_id + np.arange(n, dtype=np.int64))[:, None], (n, 5))

    rows = valid.ravel()
    e_sel = e_true.ravel()[rows]
    fwhm_sel = np.broadcast_to(fwhm, (n, 5)).ravel()[rows]
    energy = np.maximum(e_sel + energy_sigma(e_sel, fwhm_sel) * rng.standard_normal(len(e_sel)), 0.0)
    time = transport.sigma_t_ns * rng.standard_normal(len(e_sel))

    table = HitTable(
        event_id=event.ravel()[rows],
        detector=det.ravel()[rows],
        ix=ix.ravel()[rows].astype(np.int16),
        iy=iy.ravel()[rows].astype(np.int16),
        energy=energy,
        time=time,
    )
    if with_truth:
        def per_row(col):
            return np.broadcast_to(np.asarray(col, dtype=float)[:, None], (n, 5)).ravel()[rows]

        table.truth_theta1 = per_row(pairs.theta1)
        table.truth_theta2 = per_row(pairs.theta2)
        table.truth_dphi = per_row(pairs.delta_phi)
        table.truth_thetascat = per_row(pairs.theta_scat_true)
        table.truth_first_pixel = first.ravel()[rows]
    return table


def _transport_pairs(pairs: PairBatch, setup: SetupGeometry, transport: TransportConfig,
                     rng: np.random.Generator):
    n = len(pairs)
    src = np.broadcast_to(setup.source_position, (n, 3))
    depth_a = rng.exponential(transport.lambda511_mm, n)
    path_a = rng.exponential(transport.lambda_abs_mm, n)
    depth_b = rng.exponential(transport.lambda511_mm, n)
    path_b = rng.exponential(transport.lambda_abs_mm, n)
    dep_a = transport_photons(src, pairs.dir1, pairs.E1, pairs.theta1, pairs.phi1,
                              setup.frame_a(), setup.detector_a, depth_a, path_a)
    dep_b = transport_photons(pairs.origin2, pairs.dir2, pairs.E2_after_scatter, pairs.theta2, pairs.phi2,
                              setup.frame_b(), setup.detector_b, depth_b, path_b)
    return dep_a, dep_b


def truth_deposits(pairs: PairBatch, setup: SetupGeometry, transport: TransportConfig,
                   rng: np.random.Generator):
    """Pre-smearing deposits (A, B, C) using the same draws as :func:`digitize_batch`."""
    dep_a, dep_b = _transport_pairs(pairs, setup, transport, rng)
    e_c = np.where(pairs.theta_scat_true > 0.0, physics.ELECTRON_REST_ENERGY - pairs.E2_after_scatter, 0.0)
    return dep_a, dep_b, e_c


def digitize(pair: PairTruth, setup: SetupGeometry, transport: TransportConfig,
             rng: np.random.Generator, event_id: int = 0, scatterer_active: bool = True) -> EventRecord:
    """Digitize a single pair; the returned record keeps the full truth."""
    table = digitize_batch(PairBatch.from_pairs([pair]), setup, transport, rng,
                           first_event_id=event_id, scatterer_active=scatterer_active, with_truth=False)
    records = list(table.records())
    record = records[0] if records else EventRecord(event_id, [])
    record.truth = pair
    return record
