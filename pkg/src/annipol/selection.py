"""Trigger and offline event selection.

All cuts are evaluated column-wise on a :class:`HitTable`; the per-event
functions wrap the same code path for a single :class:`EventRecord`.

Selection modes:

* ``direct``  - A and B each need a two-pixel Compton event summing to 511 keV.
* ``active``  - nominal angle 0: C must stay silent (correlation baseline);
  nominal angle > 0: C must fire, C + B must sum to 511 keV and the C deposit
  must match Compton kinematics at the nominal angle.
* ``passive`` - C is not read out; B's two-pixel sum must match the scattered
  photon energy and A-B timing must be in coincidence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from annipol import physics
from annipol.detector import DET_A, DET_B, DET_C, EventRecord, HitTable, energy_sigma
from annipol.errors import ConfigError

MODES = ("direct", "active", "passive")
STAGES = ("triggered", "multiplicity2", "pixel_threshold", "sum_window", "kinematics", "timing", "accepted")


@dataclass(frozen=True)
class SelectionConfig:
    pixel_threshold: float = 100.0  # keV
    sum_window_half_width: float = 70.0  # keV, three sigma at 511 keV
    timing_window: float = 1.95  # ns
    theta_scat_nominal: float = 0.0  # deg
    scatterer_window_sigmas: float = 3.0
    mode: str = "direct"
    scatterer_threshold: float = 0.0  # keV; C counts as fired above this
    fwhm_b_at_511: float = 0.081
    fwhm_c_at_511: float = 0.121

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown selection mode {self.mode!r}")
        if self.pixel_threshold <= 0 or self.sum_window_half_width <= 0 or self.timing_window <= 0:
            raise ConfigError("thresholds and windows must be positive")
        if self.scatterer_window_sigmas <= 0:
            raise ConfigError("scatterer_window_sigmas must be positive")
        if self.mode == "passive" and self.theta_scat_nominal <= 0:
            raise ConfigError("passive mode needs a positive nominal scatter angle")
        if self.mode == "direct" and self.theta_scat_nominal != 0:
            raise ConfigError("direct mode requires theta_scat_nominal = 0")

    @property
    def scattered_chain(self) -> bool:
        return self.mode == "active" and self.theta_scat_nominal > 0

    @property
    def expected_b_energy(self) -> float:
        return float(physics.scattered_energy(physics.ELECTRON_REST_ENERGY, self.theta_scat_nominal))

    @property
    def expected_c_energy(self) -> float:
        return physics.ELECTRON_REST_ENERGY - self.expected_b_energy

    def b_window(self) -> tuple[float, float] | None:
        """Allowed B two-pixel sum, or None when B's sum is not cut on its own."""
        if self.scattered_chain:
            return None
        if self.mode == "passive":
            centre = self.expected_b_energy
            half = self.scatterer_window_sigmas * float(energy_sigma(centre, self.fwhm_b_at_511))
            return centre - half, centre + half
        return _window_511(self)

    def c_window(self) -> tuple[float, float]:
        centre = self.expected_c_energy
        half = self.scatterer_window_sigmas * float(energy_sigma(centre, self.fwhm_c_at_511))
        return centre - half, centre + half


def _window_511(config):
    m = physics.ELECTRON_REST_ENERGY
    return m - config.sum_window_half_width, m + config.sum_window_half_width


class Verdict(NamedTuple):
    accepted: bool
    reason: str | None = None


@dataclass
class ModuleSummary:
    """Per-event view of one module, aligned with ``event_ids``.

    ``lo``/``hi`` index the rows of the lower- and higher-energy fired pixel;
    they are only meaningful where ``n_fired == 2``.
    """

    n_hits: np.ndarray
    n_fired: np.ndarray
    e_sum: np.ndarray
    t_first: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


def summarize_module(table: HitTable, event_ids: np.ndarray, detector: int, threshold: float) -> ModuleSummary:
    n_ev = len(event_ids)
    ev_index = np.searchsorted(event_ids, table.event_id)
    in_det = table.detector == detector
    fired = in_det & (table.energy >= threshold)
    n_hits = np.bincount(ev_index[in_det], minlength=n_ev)
    n_fired = np.bincount(ev_index[fired], minlength=n_ev)
    e_sum = np.bincount(ev_index[fired], weights=table.energy[fired], minlength=n_ev)
    t_first = np.full(n_ev, np.inf)
    np.minimum.at(t_first, ev_index[fired], table.time[fired])

    rows = np.flatnonzero(fired)
    order = rows[np.lexsort((table.energy[rows], ev_index[rows]))]
    first_pos = np.concatenate(([0], np.cumsum(n_fired)[:-1]))
    lo = np.full(n_ev, -1)
    hi = np.full(n_ev, -1)
    two = n_fired == 2
    lo[two] = order[first_pos[two]]
    hi[two] = order[first_pos[two] + 1]
    return ModuleSummary(n_hits, n_fired, e_sum, t_first, lo, hi)


@dataclass
class SelectionResult:
    event_ids: np.ndarray
    stage: np.ndarray  # index of the first failed cut (see STAGES); len(STAGES) - 1 when accepted
    reason: np.ndarray  # object array of reason strings, None when accepted

    @property
    def accepted(self) -> np.ndarray:
        return self.stage == len(STAGES) - 1

    def accepted_ids(self) -> np.ndarray:
        return self.event_ids[self.accepted]

    def cutflow(self) -> "CutflowReport":
        counts = [int(np.sum(self.stage > k)) for k in range(len(STAGES) - 1)]
        counts.append(int(np.sum(self.accepted)))
        return CutflowReport(list(zip(STAGES, counts)), n_input=len(self.event_ids))


@dataclass
class CutflowReport:
    """Events surviving each successive cut; fractions are relative to the input events."""

    counts: list[tuple[str, int]]
    n_input: int = 0

    def as_text(self) -> str:
        total = self.n_input
        lines = []
        for name, count in self.counts:
            frac = count / total if total else 0.0
            lines.append(f"{name} {count} {frac:.6f}")
        return "\n".join(lines) + "\n"

    def __getitem__(self, name: str) -> int:
        return dict(self.counts)[name]


def trigger_mask(table: HitTable, mode: str = "active") -> tuple[np.ndarray, np.ndarray]:
    """Event ids of ``table`` and whether each one satisfies the hardware trigger."""
    ids = np.unique(table.event_id)
    ev_index = np.searchsorted(ids, table.event_id)
    counts = [np.bincount(ev_index[table.detector == d], minlength=len(ids)) for d in (DET_A, DET_B, DET_C)]
    other = counts[1] > 0
    if mode != "passive":
        other |= counts[2] > 0
    return ids, (counts[0] > 0) & other


def _module_checks(s: ModuleSummary, window):
    mult = s.n_hits >= 2
    thr = s.n_fired == 2
    if window is None:
        summ = np.ones_like(thr)
    else:
        summ = (s.e_sum >= window[0]) & (s.e_sum <= window[1])
    return mult, thr, summ


def evaluate(table: HitTable, config: SelectionConfig) -> SelectionResult:
    """Apply trigger and all offline cuts to every event of ``table``."""
    ids = np.unique(table.event_id)
    n = len(ids)
    a = summarize_module(table, ids, DET_A, config.pixel_threshold)
    b = summarize_module(table, ids, DET_B, config.pixel_threshold)
    c = summarize_module(table, ids, DET_C, 0.0)

    _, trig = trigger_mask(table, config.mode)

    mult_a, thr_a, sum_a = _module_checks(a, _window_511(config))
    mult_b, thr_b, sum_b = _module_checks(b, config.b_window())

    e_c = c.e_sum  # C is a single pixel; threshold 0 keeps every recorded deposit
    c_fired = (c.n_hits > 0) & (e_c > config.scatterer_threshold)

    sum_reason = np.full(n, "sum_window", dtype=object)
    kin_reason = np.full(n, "kinematics", dtype=object)
    kin = np.ones(n, bool)
    timing = np.ones(n, bool)
    sum_ok = sum_a & sum_b
    if config.scattered_chain:
        lo, hi = _window_511(config)
        total = e_c + b.e_sum
        chain_sum = (total >= lo) & (total <= hi)
        sum_reason = np.where(sum_a & ~c_fired, "no_scatterer_hit", sum_reason)
        sum_ok = sum_a & c_fired & chain_sum
        clo, chi = config.c_window()
        kin = (e_c >= clo) & (e_c <= chi)
    elif config.mode == "active":
        kin = ~c_fired
        kin_reason = np.full(n, "scatterer_fired", dtype=object)
    elif config.mode == "passive":
        both = np.isfinite(a.t_first) & np.isfinite(b.t_first)
        dt = np.where(both, a.t_first - np.where(both, b.t_first, 0.0), np.inf)
        timing = np.abs(dt) < config.timing_window

    checks = [
        (trig, np.full(n, "trigger", dtype=object)),
        (mult_a & mult_b, np.full(n, "multiplicity", dtype=object)),
        (thr_a & thr_b, np.full(n, "pixel_threshold", dtype=object)),
        (sum_ok, sum_reason),
        (kin, kin_reason),
        (timing, np.full(n, "timing", dtype=object)),
    ]
    stage = np.full(n, len(STAGES) - 1)
    reason = np.full(n, None, dtype=object)
    undecided = np.ones(n, bool)
    for k, (ok, why) in enumerate(checks):
        fail = undecided & ~ok
        stage[fail] = k
        reason[fail] = why[fail]
        undecided &= ok
    return SelectionResult(ids, stage, reason)


def select(table: HitTable, config: SelectionConfig) -> tuple[HitTable, CutflowReport]:
    """Accepted events (all their hits) and the cutflow."""
    result = evaluate(table, config)
    return table.take_events(result.accepted_ids()), result.cutflow()


# ---------------------------------------------------------------------------
# Per-event interface
# ---------------------------------------------------------------------------


def _single(event: EventRecord) -> HitTable:
    table = HitTable.from_records([event])
    if len(table) == 0:
        return HitTable.empty()
    return table


def trigger(event: EventRecord, mode: str = "active") -> bool:
    """A in coincidence with B or C; C is ignored for a passive scatterer."""
    dets = {h.detector_id for h in event.hits}
    other = "B" in dets or (mode != "passive" and "C" in dets)
    return "A" in dets and other


def select_module_compton(event: EventRecord, detector_id: str, config: SelectionConfig) -> Verdict:
    """Two fired pixels in the module, with the energy-sum window where it applies."""
    table = _single(event)
    ids = np.array([event.event_id])
    det = {"A": DET_A, "B": DET_B}[detector_id]
    s = summarize_module(table, ids, det, config.pixel_threshold)
    window = _window_511(config) if det == DET_A else config.b_window()
    mult, thr, summ = _module_checks(s, window)
    if not mult[0]:
        return Verdict(False, "multiplicity")
    if not thr[0]:
        return Verdict(False, "pixel_threshold")
    if not summ[0]:
        return Verdict(False, "sum_window")
    return Verdict(True)


def _verdict(event: EventRecord, config: SelectionConfig) -> Verdict:
    result = evaluate(_single(event), config)
    if len(result.event_ids) == 0:
        return Verdict(False, "trigger")
    return Verdict(bool(result.accepted[0]), result.reason[0])


def select_scattered_chain(event: EventRecord, config: SelectionConfig) -> Verdict:
    if not config.scattered_chain:
        raise ConfigError("scattered-chain selection needs active mode and a positive nominal angle")
    return _verdict(event, config)


def select_baseline_zero_deg(event: EventRecord, config: SelectionConfig) -> Verdict:
    if config.mode != "active" or config.theta_scat_nominal != 0:
        raise ConfigError("baseline selection needs active mode at nominal angle 0")
    return _verdict(event, config)


def select_passive(event: EventRecord, config: SelectionConfig) -> Verdict:
    if config.mode != "passive":
        raise ConfigError("passive selection needs passive mode")
    return _verdict(event, config)


def select_event(event: EventRecord, config: SelectionConfig) -> Verdict:
    return _verdict(event, config)
