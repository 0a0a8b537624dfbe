"""Run configuration: INI-style sections of ``key = value`` lines.

Grammar: ``[section]`` headers followed by ``key = value`` lines; ``#`` or
``;`` start a comment line.  Keys are case-sensitive.  Every key is
optional and defaults to the measured setup; unknown sections or keys are
an error.  Values are plain numbers, ``true``/``false``, strings, or
``auto`` where a field documents a derived default.

Sections and keys::

    [model]       kappa, theta_scat_deg, mode (direct | active | passive)
    [detector.A]  pixels_per_side, pitch_mm, crystal_side_mm, crystal_length_mm,
    [detector.B]  distance_mm, fwhm_at_511
    [scatterer]   side_mm, length_mm, fwhm_at_511, source_distance_mm
    [transport]   lambda511_mm, lambdaAbs_mm
    [timing]      sigma_ns
    [selection]   pixel_threshold_kev, sum_window_half_width_kev, timing_window_ns,
                  scatterer_window_sigmas, scatterer_threshold_kev
    [analysis]    bins, mix, theta1_min, theta1_max, theta2_min (auto), theta2_max,
                  sigma_theta_deg
    [rng]         master_seed, streams
    [run]         n_pairs
    [output]      prefix, write_truth
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from annipol import physics
from annipol.errors import ConfigError


@dataclass
class ModelSection:
    kappa: float = 1.0
    theta_scat_deg: float = 0.0
    mode: str = "direct"


@dataclass
class DetectorSection:
    pixels_per_side: int = 8
    pitch_mm: float = 2.2
    crystal_side_mm: float = 1.9
    crystal_length_mm: float = 20.0
    distance_mm: float = 50.0
    fwhm_at_511: float = 0.081


@dataclass
class ScattererSection:
    side_mm: float = 3.0
    length_mm: float = 20.0
    fwhm_at_511: float = 0.121
    source_distance_mm: float = 10.0


@dataclass
class TransportSection:
    lambda511_mm: float = 20.0
    lambdaAbs_mm: float = 10.0


@dataclass
class TimingSection:
    sigma_ns: float = 0.3


@dataclass
class SelectionSection:
    pixel_threshold_kev: float = 100.0
    sum_window_half_width_kev: float = 70.0
    timing_window_ns: float = 1.95
    scatterer_window_sigmas: float = 3.0
    scatterer_threshold_kev: float = 0.0


@dataclass
class AnalysisSection:
    bins: int = 24
    mix: int = 100
    theta1_min: float = 72.0
    theta1_max: float = 90.0
    # auto: ten degrees below the optimal angle at the nominal scattered energy
    theta2_min: typing.Optional[float] = None
    theta2_max: float = 90.0
    sigma_theta_deg: float = 6.5


@dataclass
class RngSection:
    master_seed: int = 2024
    streams: int = 16


@dataclass
class RunSection:
    n_pairs: int = 10_000_000


@dataclass
class OutputSection:
    prefix: str = "annipol_out/run"
    write_truth: bool = True


SECTIONS = {
    "model": ("model", ModelSection),
    "detector.A": ("detector_a", DetectorSection),
    "detector.B": ("detector_b", DetectorSection),
    "scatterer": ("scatterer", ScattererSection),
    "transport": ("transport", TransportSection),
    "timing": ("timing", TimingSection),
    "selection": ("selection", SelectionSection),
    "analysis": ("analysis", AnalysisSection),
    "rng": ("rng", RngSection),
    "run": ("run", RunSection),
    "output": ("output", OutputSection),
}


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    detector_a: DetectorSection = field(default_factory=DetectorSection)
    detector_b: DetectorSection = field(default_factory=DetectorSection)
    scatterer: ScattererSection = field(default_factory=ScattererSection)
    transport: TransportSection = field(default_factory=TransportSection)
    timing: TimingSection = field(default_factory=TimingSection)
    selection: SelectionSection = field(default_factory=SelectionSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    rng: RngSection = field(default_factory=RngSection)
    run: RunSection = field(default_factory=RunSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> "RunConfig":
        m = self.model
        if m.mode not in ("direct", "active", "passive"):
            raise ConfigError(f"model.mode must be direct, active or passive, got {m.mode!r}")
        if not 0.0 <= m.kappa <= 1.0:
            raise ConfigError("model.kappa must lie in [0, 1]")
        if not 0.0 <= m.theta_scat_deg < 180.0:
            raise ConfigError("model.theta_scat_deg must lie in [0, 180)")
        if m.mode == "direct" and m.theta_scat_deg != 0:
            raise ConfigError("direct mode requires model.theta_scat_deg = 0")
        if m.mode == "passive" and m.theta_scat_deg <= 0:
            raise ConfigError("passive mode requires model.theta_scat_deg > 0")
        if self.run.n_pairs < 1:
            raise ConfigError("run.n_pairs must be >= 1")
        if self.rng.streams < 1:
            raise ConfigError("rng.streams must be >= 1")
        if not 0 <= self.rng.master_seed < 2**64:
            raise ConfigError("rng.master_seed must be an unsigned 64-bit integer")
        if self.analysis.bins < 4 or self.analysis.mix < 1:
            raise ConfigError("analysis.bins must be >= 4 and analysis.mix >= 1")
        for lo, hi, name in ((*self.theta1_window(), "theta1"), (*self.theta2_window(), "theta2")):
            if not 0.0 <= lo < hi <= 180.0:
                raise ConfigError(f"analysis {name} window [{lo}, {hi}] is invalid")
        return self

    def theta1_window(self) -> tuple[float, float]:
        return self.analysis.theta1_min, self.analysis.theta1_max

    def theta2_window(self) -> tuple[float, float]:
        lo = self.analysis.theta2_min
        if lo is None:
            e2 = physics.scattered_energy(physics.ELECTRON_REST_ENERGY, self.model.theta_scat_deg)
            lo = round(physics.optimal_theta(e2)) - 10.0
        return float(lo), self.analysis.theta2_max

    def to_text(self) -> str:
        return serialize(self)

    def sha256(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def replace(self, **dotted) -> "RunConfig":
        """Copy with overrides given as ``section__key=value`` (section attr names)."""
        cfg = parse_text(self.to_text())
        for name, value in dotted.items():
            sec, key = name.split("__", 1)
            setattr(getattr(cfg, sec), key, value)
        return cfg.validate()


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(raw: str, ftype, where: str):
    raw = raw.strip()
    optional = typing.get_origin(ftype) is typing.Union
    base = typing.get_args(ftype)[0] if optional else ftype
    if optional and raw.lower() == "auto":
        return None
    try:
        if base is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if base is int:
            return int(raw.replace("_", ""))
        if base is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {base.__name__}") from None


def parse_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}".replace("\n", " ")) from None
    if parser.defaults():
        raise ConfigError("keys outside a section are not allowed")
    cfg = RunConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        attr, cls = SECTIONS[section]
        obj = getattr(cfg, attr)
        hints = typing.get_type_hints(cls)
        known = {f.name for f in dataclasses.fields(cls)}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown config key {section}.{key}")
            setattr(obj, key, _coerce(raw, hints[key], f"{section}.{key}"))
    return cfg.validate()


def serialize(cfg: RunConfig) -> str:
    out = io.StringIO()
    for section, (attr, cls) in SECTIONS.items():
        obj = getattr(cfg, attr)
        out.write(f"[{section}]\n")
        for f in dataclasses.fields(cls):
            out.write(f"{f.name} = {_format(getattr(obj, f.name))}\n")
        out.write("\n")
    return out.getvalue()


def bundled_configs() -> list[str]:
    root = resources.files("annipol") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_config(source: str | Path | None) -> RunConfig:
    """Load a config file, or a bundled config by name (e.g. ``direct``); None gives defaults."""
    if source is None:
        return RunConfig().validate()
    path = Path(source)
    if path.is_file():
        return parse_text(path.read_text())
    name = str(source).removesuffix(".cfg")
    res = resources.files("annipol") / "configs" / f"{name}.cfg"
    if res.is_file():
        return parse_text(res.read_text())
    raise ConfigError(f"config not found: {source}")
