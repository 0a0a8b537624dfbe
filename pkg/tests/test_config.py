import pytest
from hypothesis import given
from hypothesis import strategies as st

from annipol.config import RunConfig, bundled_configs, load_config, parse_text, serialize
from annipol.errors import ConfigError


def test_defaults_describe_measured_setup():
    cfg = RunConfig().validate()
    assert cfg.detector_a.pitch_mm == 2.2 and cfg.detector_a.pixels_per_side == 8
    assert cfg.detector_a.distance_mm == 50.0 and cfg.detector_a.fwhm_at_511 == 0.081
    assert cfg.scatterer.fwhm_at_511 == 0.121 and cfg.scatterer.source_distance_mm == 10.0
    assert cfg.selection.pixel_threshold_kev == 100.0 and cfg.selection.timing_window_ns == 1.95
    assert cfg.analysis.bins == 24 and cfg.analysis.mix == 100
    assert cfg.theta1_window() == (72.0, 90.0)


@pytest.mark.parametrize("theta, low", [(0, 72.0), (10, 72.0), (30, 73.0), (50, 74.0)])
def test_auto_theta2_window(theta, low):
    cfg = parse_text(f"[model]\nmode = active\ntheta_scat_deg = {theta}\n")
    assert cfg.theta2_window() == (low, 90.0)


def test_explicit_theta2_overrides_auto():
    cfg = parse_text("[analysis]\ntheta2_min = 70\n")
    assert cfg.theta2_window() == (70.0, 90.0)


def test_round_trip_idempotent():
    cfg = load_config("scat30_passive")
    text = serialize(cfg)
    assert serialize(parse_text(text)) == text
    assert parse_text(text) == cfg


@given(st.floats(0, 1), st.sampled_from([0.0, 10.0, 30.0, 50.0]), st.integers(0, 2**63),
       st.integers(1, 64), st.booleans())
def test_round_trip_property(kappa, theta, seed, streams, truth):
    mode = "active" if theta else "direct"
    cfg = parse_text(f"[model]\nkappa = {kappa!r}\ntheta_scat_deg = {theta}\nmode = {mode}\n"
                     f"[rng]\nmaster_seed = {seed}\nstreams = {streams}\n[output]\nwrite_truth = {truth}\n")
    again = parse_text(cfg.to_text())
    assert again == cfg and again.to_text() == cfg.to_text()
    assert again.sha256() == cfg.sha256()


@pytest.mark.parametrize("text", [
    "[model]\nkapa = 1\n",
    "[nosuch]\nx = 1\n",
    "[model]\nkappa = lots\n",
    "[model]\nkappa = 2\n",
    "[model]\nmode = direct\ntheta_scat_deg = 30\n",
    "[model]\nmode = passive\n",
    "[analysis]\ntheta1_min = 95\n",
    "[rng]\nstreams = 0\n",
    "kappa = 1\n",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_text(text)


def test_keys_are_case_sensitive():
    cfg = parse_text("[transport]\nlambdaAbs_mm = 12\n")
    assert cfg.transport.lambdaAbs_mm == 12.0
    with pytest.raises(ConfigError):
        parse_text("[transport]\nlambdaabs_mm = 12\n")


def test_bundled_configs_load():
    names = bundled_configs()
    for name in ("direct", "scat0", "scat10", "scat30", "scat50", "scat30_passive", "scat30_decohered"):
        assert name in names
    for name in names:
        load_config(name)
    assert load_config("scat30_passive").detector_b.distance_mm == 75.0
    assert load_config("scat30_decohered").model.kappa == 0.0


def test_missing_config():
    with pytest.raises(ConfigError):
        load_config("no_such_config")


def test_replace_returns_validated_copy():
    cfg = load_config("direct")
    other = cfg.replace(run__n_pairs=5)
    assert other.run.n_pairs == 5 and cfg.run.n_pairs != 5
    with pytest.raises(ConfigError):
        cfg.replace(model__kappa=3.0)
