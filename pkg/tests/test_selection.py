import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from annipol.detector import EventRecord, HitTable, PixelHit, TransportConfig, digitize_batch
from annipol.errors import ConfigError
from annipol.geometry import DetectorGeometry, ScattererSpec, SetupGeometry
from annipol.sampling import PairModel, RandomStreamSpec, sample_pairs
from annipol.selection import (STAGES, SelectionConfig, Verdict, evaluate, select, select_baseline_zero_deg,
                               select_event, select_module_compton, select_passive, select_scattered_chain,
                               trigger)

DIRECT = SelectionConfig()
CHAIN30 = SelectionConfig(mode="active", theta_scat_nominal=30.0)
BASELINE = SelectionConfig(mode="active", theta_scat_nominal=0.0)
PASSIVE = SelectionConfig(mode="passive", theta_scat_nominal=30.0)


def event(a=(200.0, 311.0), b=(200.0, 311.0), c=None, t_a=0.0, t_b=0.0):
    hits = [PixelHit("A", 1 + k, 1, e, t_a) for k, e in enumerate(a)]
    hits += [PixelHit("B", 1 + k, 2, e, t_b) for k, e in enumerate(b)]
    if c is not None:
        hits.append(PixelHit("C", 0, 0, c, 0.0))
    return EventRecord(1, hits)


def test_trigger_examples():
    assert trigger(event())
    assert not trigger(EventRecord(1, [PixelHit("A", 0, 0, 300.0, 0.0)]))
    assert not trigger(EventRecord(1, [PixelHit("B", 0, 0, 300.0, 0.0), PixelHit("C", 0, 0, 60.0, 0.0)]))
    a_and_c = EventRecord(1, [PixelHit("A", 0, 0, 300.0, 0.0), PixelHit("C", 0, 0, 60.0, 0.0)])
    assert trigger(a_and_c, "active")
    assert not trigger(a_and_c, "passive")


def test_module_compton_examples():
    assert select_module_compton(event(a=(200.0, 311.0)), "A", DIRECT) == Verdict(True)
    assert select_module_compton(event(a=(90.0, 421.0)), "A", DIRECT) == Verdict(False, "pixel_threshold")
    assert select_module_compton(event(a=(150.0, 200.0)), "A", DIRECT) == Verdict(False, "sum_window")
    assert select_module_compton(event(a=(511.0,)), "A", DIRECT) == Verdict(False, "multiplicity")


def test_scattered_chain_examples():
    assert select_scattered_chain(event(b=(200.0, 250.0), c=60.0), CHAIN30) == Verdict(True)
    assert select_scattered_chain(event(b=(176.0, 200.0), c=135.0), CHAIN30) == Verdict(False, "kinematics")
    assert select_scattered_chain(event(b=(200.0, 250.0)), CHAIN30) == Verdict(False, "no_scatterer_hit")
    with pytest.raises(ConfigError):
        select_scattered_chain(event(), DIRECT)


def test_baseline_examples():
    assert select_baseline_zero_deg(event(), BASELINE) == Verdict(True)
    assert select_baseline_zero_deg(event(c=60.0), BASELINE) == Verdict(False, "scatterer_fired")
    assert select_baseline_zero_deg(event(b=(150.0, 250.0)), BASELINE) == Verdict(False, "sum_window")


def test_passive_examples():
    b450 = (200.0, 250.6)
    assert select_passive(event(b=b450, t_a=0.0, t_b=0.5), PASSIVE) == Verdict(True)
    assert select_passive(event(b=b450, t_a=0.0, t_b=2.5), PASSIVE) == Verdict(False, "timing")
    assert select_passive(event(b=(200.0, 311.0)), PASSIVE) == Verdict(False, "sum_window")


def test_passive_window_width():
    lo, hi = PASSIVE.b_window()
    centre = 0.5 * (lo + hi)
    assert centre == pytest.approx(450.627, abs=1e-3)
    assert (hi - lo) / 6 == pytest.approx(16.5, abs=0.2)
    assert hi < 511.0


def test_config_validation():
    with pytest.raises(ConfigError):
        SelectionConfig(mode="bogus")
    with pytest.raises(ConfigError):
        SelectionConfig(pixel_threshold=0.0)
    with pytest.raises(ConfigError):
        SelectionConfig(mode="passive", theta_scat_nominal=0.0)
    with pytest.raises(ConfigError):
        SelectionConfig(mode="direct", theta_scat_nominal=30.0)


def test_select_event_is_pure():
    ev = event(b=(200.0, 250.0), c=60.0)
    assert select_event(ev, CHAIN30) == select_event(ev, CHAIN30)


def _simulated(theta, n, seed, active=True):
    setup = SetupGeometry(detector_b=DetectorGeometry(rotation_theta_scat=theta),
                          scatterer=ScattererSpec(active=active))
    pairs = sample_pairs(PairModel(theta_scat_nominal=theta, geometry=setup), RandomStreamSpec(seed).generator(0), n)
    return digitize_batch(pairs, setup, TransportConfig(), RandomStreamSpec(seed).generator(1),
                          scatterer_active=active)


def test_cutflow_monotone_and_consistent():
    table = _simulated(30.0, 100_000, 11)
    selected, flow = select(table, CHAIN30)
    counts = [c for _, c in flow.counts]
    assert [name for name, _ in flow.counts] == list(STAGES)
    assert all(x >= y for x, y in zip(counts, counts[1:]))
    assert counts[-1] == len(np.unique(selected.event_id)) > 0
    assert flow.n_input == len(np.unique(table.event_id))
    lines = flow.as_text().splitlines()
    assert lines[0].startswith("triggered ") and len(lines) == len(STAGES)


@given(st.integers(0, 2**31), st.sampled_from([DIRECT, CHAIN30, BASELINE, PASSIVE]))
def test_cutflow_monotone_random_tables(seed, config):
    rng = np.random.default_rng(seed)
    n = 300
    ids = np.sort(rng.integers(0, 60, n))
    table = HitTable(ids, rng.integers(0, 3, n).astype(np.int8), rng.integers(0, 8, n).astype(np.int16),
                     rng.integers(0, 8, n).astype(np.int16), rng.uniform(0, 520, n), rng.normal(0, 1.5, n))
    res = evaluate(table, config)
    counts = [c for _, c in res.cutflow().counts]
    assert all(x >= y for x, y in zip(counts, counts[1:]))
    assert np.all((res.reason == None) == res.accepted)  # noqa: E711


@pytest.fixture(scope="module")
def chain_purity():
    """Share of 30-degree chains among events accepted from equal-size 10/30/50-degree samples."""
    accepted = {}
    for theta in (10.0, 30.0, 50.0):
        table = _simulated(theta, 400_000, 20 + int(theta))
        accepted[theta] = int(evaluate(table, CHAIN30).accepted.sum())
    return accepted[30.0] / sum(accepted.values())


def test_chain_purity_pinned(chain_purity):
    assert chain_purity == pytest.approx(0.820, abs=0.03)


@pytest.mark.xfail(strict=True, reason="C window of 3 sigma spans 33-87 keV; neighbouring chains leak in")
def test_chain_purity_reaches_ninety_percent(chain_purity):
    assert chain_purity > 0.9


def test_baseline_accepts_small_fraction():
    table = _simulated(0.0, 200_000, 31)
    frac = evaluate(table, BASELINE).accepted.mean()
    assert 0.0 < frac < 0.1
