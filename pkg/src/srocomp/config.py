"""Run configuration: a versioned INI schema read with :mod:`configparser`.

Every section and key is listed in :data:`SCHEMA`; anything else is rejected
with an error naming it. Physical invariants (positions inside the room, SRO
bounds, the phase-ramp validity condition over the whole run) are checked
when the file is loaded.
"""
from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, replace
from importlib import resources

from .binaural import BandSpec, erb_space
from .dsp import StftConfig, n_frames_for
from .dwacd import DwacdConfig
from .errors import ConfigError, DomainError
from .resample import check_validity
from .room import SceneConfig

SCHEMA_VERSION = 1
CONDITIONS = ("reference", "uncompensated", "oracle_comp", "estimated_comp")
LOOPS = ("closed", "open")
COMP_MODES = ("absolute", "accumulate")


def _floats(text, n=None):
    vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} values, got {len(vals)}")
    return tuple(vals)


def _optional(conv):
    def parse(text):
        return None if text.strip().lower() in ("", "none") else conv(text)
    return parse


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _sro_grid(text):
    pairs = []
    for item in text.split(";"):
        if item.strip():
            pairs.append(_floats(item, 2))
    if not pairs:
        raise ValueError("empty SRO grid")
    return tuple(pairs)


def _str(text):
    return text.strip()


# section -> key -> (parser, default); default None marks an optional key
SCHEMA = {
    "meta": {"version": (int, None)},
    "scene": {
        "room_dims": (lambda t: _floats(t, 3), "7, 7, 6"),
        "rt60": (float, "0.3"),
        "source1": (lambda t: _floats(t, 3), "2.2, 3.4, 1.8"),
        "source2": (lambda t: _floats(t, 3), "5.2, 3.5, 2.1"),
        "array_center": (lambda t: _floats(t, 3), "3.75, 3.35, 2.0"),
        "array_radius": (float, "0.10"),
        "mic_count": (int, "4"),
        "ear_left": (_optional(lambda t: _floats(t, 3)), "none"),
        "ear_right": (_optional(lambda t: _floats(t, 3)), "none"),
        "sample_rate": (float, "16000"),
        "noise_level_db": (_optional(float), "-40"),
        "noise_seed": (int, "0"),
        "sro_mode": (_str, "source"),
        "ear_mode": (_str, "direct"),
        "absorption": (_str, "eyring"),
        "rir_length": (_optional(int), "none"),
        "rir_dir": (_optional(_str), "none"),
    },
    "sro": {
        "eps0": (float, "0"),
        "eps1": (float, "10"),
        "eps2": (float, "-100"),
        "grid": (_sro_grid, "10, -10; 10, -50; 10, -100"),
    },
    "stft": {
        "window_size": (int, "8192"),
        "hop_size": (int, "2048"),
        "window": (_str, "hann"),
        "fft_size": (_optional(int), "none"),
    },
    "dwacd": {
        "temporal_distance": (int, "8"),
        "alpha_s": (float, "0.95"),
        "estimate_smoothing": (float, "0.95"),
        "activity_threshold_db": (float, "40"),
        "peak_decay": (float, "0.999"),
        "psd_smoothing": (float, "0.5"),
        "max_lag": (int, "50"),
        "golden_tol": (float, "1e-3"),
        "warmup_frames": (_optional(int), "none"),
    },
    "beamformer": {
        "alpha": (float, "1e-6"),
        "init_duration": (float, "10"),
    },
    "resampler": {
        "segment_len": (int, "8192"),
    },
    "metrics": {
        "bands": (int, "24"),
        "low_hz": (float, "100"),
        "high_hz": (float, "7500"),
        "block_len": (float, "1.0"),
        "overlap": (float, "0.5"),
        "max_itd": (float, "1e-3"),
        "min_peak": (float, "0.1"),
    },
    "run": {
        "condition": (_str, "estimated_comp"),
        "duration": (float, "480"),
        "loop": (_str, "closed"),
        "compensation_mode": (_str, "absolute"),
        "playback": (_str, "noise"),
        "playback_seed": (int, "0"),
        "output_dir": (_str, "out"),
        "write_mics": (_bool, "false"),
        "workers": (int, "1"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration.

    Args:
        scene: Room, geometry and clocks (``scene.sro`` holds the run's
            ``(eps_0, eps_1, eps_2)``).
        stft: Frame layout for compensation and estimation.
        dwacd: Estimator settings.
        bands: Cue-map grid.
        condition: One of :data:`CONDITIONS`.
        duration: Program length in seconds (solo phases come on top).
        playback: ``"noise"`` for the seeded generator (identical noise in
            both channels) or the path of a stereo WAV file.
        playback_seed: Seed of the noise generator.
        output_dir: Directory receiving all artifacts.
        bf_alpha: Diagonal loading of the beamformer.
        init_duration: Solo phase length per loudspeaker in seconds.
        loop: ``"closed"`` (compensation feeds back into the estimator's
            input) or ``"open"`` (estimation on the uncompensated stream).
        compensation_mode: Delay bookkeeping of the estimated compensation.
        segment_len: FFT length of the device resampler.
        sro_grid: ``(eps_1, eps_2)`` pairs of the ``grid`` command.
        write_mics: Also write the microphone signals.
        workers: Worker processes of the ``grid`` command.
        source_text: Text the configuration was parsed from (for hashing).
    """

    scene: SceneConfig = SceneConfig()
    stft: StftConfig = StftConfig()
    dwacd: DwacdConfig = DwacdConfig()
    bands: BandSpec = BandSpec()
    condition: str = "estimated_comp"
    duration: float = 480.0
    playback: str = "noise"
    playback_seed: int = 0
    output_dir: str = "out"
    bf_alpha: float = 1e-6
    init_duration: float = 10.0
    loop: str = "closed"
    compensation_mode: str = "absolute"
    segment_len: int = 8192
    sro_grid: tuple = ((10.0, -10.0), (10.0, -50.0), (10.0, -100.0))
    write_mics: bool = False
    workers: int = 1
    source_text: str = field(default="", compare=False)

    def __post_init__(self):
        validate(self)

    @property
    def sample_rate(self) -> float:
        return self.scene.sample_rate

    def solo_samples(self) -> int:
        return int(round(self.init_duration * self.sample_rate))

    def program_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    def stream_samples(self) -> int:
        """Samples transmitted in this condition (solo phases only precede
        the program in ``estimated_comp``)."""
        extra = 2 * self.solo_samples() if self.condition == "estimated_comp" else 0
        return self.program_samples() + extra

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def with_sro(self, eps1: float, eps2: float) -> "RunConfig":
        return replace(self, scene=self.scene.with_sro(eps1, eps2))

    def digest(self) -> str:
        """SHA-256 of the canonical description of this configuration."""
        return hashlib.sha256(canonical_text(self).encode()).hexdigest()


def validate(cfg: RunConfig):
    """Cross-module checks; raises :class:`ConfigError` or :class:`DomainError`."""
    if cfg.condition not in CONDITIONS:
        raise ConfigError(f"run.condition must be one of {CONDITIONS}, got {cfg.condition!r}")
    if cfg.loop not in LOOPS:
        raise ConfigError(f"run.loop must be one of {LOOPS}, got {cfg.loop!r}")
    if cfg.compensation_mode not in COMP_MODES:
        raise ConfigError(f"run.compensation_mode must be one of {COMP_MODES}")
    if not cfg.duration > 0:
        raise ConfigError("run.duration must be positive")
    if not cfg.init_duration > 0:
        raise ConfigError("beamformer.init_duration must be positive")
    if not cfg.bf_alpha > 0:
        raise ConfigError("beamformer.alpha must be positive")
    if cfg.workers < 1:
        raise ConfigError("run.workers must be >= 1")
    if cfg.segment_len <= 0 or cfg.segment_len & (cfg.segment_len - 1):
        raise ConfigError(f"resampler.segment_len must be a power of two, got {cfg.segment_len}")
    if cfg.stft.sample_rate != cfg.scene.sample_rate:
        raise ConfigError("stft and scene sample rates differ")
    if cfg.program_samples() < cfg.stft.window_size:
        raise ConfigError("run.duration is shorter than one STFT window")
    if cfg.condition == "estimated_comp":
        warmup_s = cfg.dwacd.warmup_frames * cfg.stft.hop_size / cfg.sample_rate
        if cfg.duration < warmup_s + 30:
            raise ConfigError(f"run.duration must be >= warm-up ({warmup_s:.1f} s) + 30 s "
                              f"for estimated_comp")
    n_frames = n_frames_for(cfg.stream_samples(), cfg.stft)
    for q in (1, 2):
        check_validity(cfg.scene.effective_sro(q), n_frames, cfg.stft, f"eps_{q} + eps_0")
    for pair in cfg.sro_grid:
        for q, v in enumerate(pair, start=1):
            check_validity(v + cfg.scene.sro[0], n_frames, cfg.stft, f"grid eps_{q}")


def canonical_text(cfg: RunConfig) -> str:
    """Deterministic text rendering of every effective setting."""
    parts = [f"version={SCHEMA_VERSION}", repr(cfg.scene), repr(cfg.stft), repr(cfg.dwacd),
             repr(cfg.bands)]
    for name in ("condition", "duration", "playback", "playback_seed", "bf_alpha",
                 "init_duration", "loop", "compensation_mode", "segment_len", "sro_grid"):
        parts.append(f"{name}={getattr(cfg, name)!r}")
    return "\n".join(parts)


def _parse(parser: configparser.ConfigParser):
    if not parser.sections():
        raise ConfigError("configuration is empty: missing section [meta]")
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
    if not parser.has_option("meta", "version"):
        raise ConfigError("missing key meta.version")
    values = {}
    for section, keys in SCHEMA.items():
        for key, (conv, default) in keys.items():
            if parser.has_option(section, key):
                text = parser.get(section, key)
            elif default is None:
                raise ConfigError(f"missing key {section}.{key}")
            else:
                text = default
            try:
                values[(section, key)] = conv(text)
            except ValueError as exc:
                raise ConfigError(f"invalid value for {section}.{key}: {text!r} ({exc})") from None
    if values[("meta", "version")] != SCHEMA_VERSION:
        raise ConfigError(f"meta.version {values[('meta', 'version')]} is not supported "
                          f"(expected {SCHEMA_VERSION})")
    return values


def build_config(values: dict, text: str = "") -> RunConfig:
    v = values
    ears = None
    if v[("scene", "ear_left")] is not None or v[("scene", "ear_right")] is not None:
        if v[("scene", "ear_left")] is None or v[("scene", "ear_right")] is None:
            raise ConfigError("scene.ear_left and scene.ear_right must be given together")
        ears = (v[("scene", "ear_left")], v[("scene", "ear_right")])
    fs = v[("scene", "sample_rate")]
    try:
        scene = SceneConfig(
            room_dims=v[("scene", "room_dims")], rt60=v[("scene", "rt60")],
            source_positions=(v[("scene", "source1")], v[("scene", "source2")]),
            array_center=v[("scene", "array_center")], array_radius=v[("scene", "array_radius")],
            mic_count=v[("scene", "mic_count")], ear_positions=ears, sample_rate=fs,
            noise_level=v[("scene", "noise_level_db")],
            sro=(v[("sro", "eps0")], v[("sro", "eps1")], v[("sro", "eps2")]),
            seed=v[("scene", "noise_seed")], sro_mode=v[("scene", "sro_mode")],
            ear_mode=v[("scene", "ear_mode")], absorption=v[("scene", "absorption")],
            rir_length=v[("scene", "rir_length")], rir_dir=v[("scene", "rir_dir")])
        stft = StftConfig(v[("stft", "window_size")], v[("stft", "hop_size")],
                          v[("stft", "window")], v[("stft", "fft_size")], fs)
        dwacd = DwacdConfig(**{k: v[("dwacd", k)] for k in SCHEMA["dwacd"]})
    except (ConfigError, DomainError):
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    m = {k: v[("metrics", k)] for k in SCHEMA["metrics"]}
    if m["bands"] < 1 or not 0 < m["low_hz"] < m["high_hz"] < fs / 2:
        raise ConfigError("metrics bands must lie strictly between 0 Hz and Nyquist")
    if not 0 <= m["overlap"] < 1 or not m["block_len"] > 0 or not m["max_itd"] > 0:
        raise ConfigError("invalid metrics block settings")
    bands = BandSpec(tuple(erb_space(m["low_hz"], m["high_hz"], m["bands"])), m["block_len"],
                     m["overlap"], m["max_itd"], m["min_peak"])
    return RunConfig(
        scene=scene, stft=stft, dwacd=dwacd, bands=bands,
        condition=v[("run", "condition")], duration=v[("run", "duration")],
        playback=v[("run", "playback")], playback_seed=v[("run", "playback_seed")],
        output_dir=v[("run", "output_dir")], bf_alpha=v[("beamformer", "alpha")],
        init_duration=v[("beamformer", "init_duration")], loop=v[("run", "loop")],
        compensation_mode=v[("run", "compensation_mode")],
        segment_len=v[("resampler", "segment_len")], sro_grid=v[("sro", "grid")],
        write_mics=v[("run", "write_mics")], workers=v[("run", "workers")],
        source_text=text)


def loads_config(text: str) -> RunConfig:
    """Parse configuration text (see :data:`SCHEMA`)."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    return build_config(_parse(parser), text)


def load_config(path) -> RunConfig:
    """Read and validate a configuration file.

    Raises:
        OSError: The file cannot be read.
        ConfigError: Schema violation, naming the offending key.
        DomainError: Physically invalid settings (geometry, SRO validity).
    """
    with open(path, encoding="utf-8") as f:
        text = f.read()
    return loads_config(text)


def bundled_config_path(name: str = "default_scene.cfg") -> str:
    """Filesystem path of a configuration shipped with the package."""
    return str(resources.files("srocomp") / "data" / name)


def default_config(**overrides) -> RunConfig:
    """The bundled default-scene configuration, optionally overridden."""
    cfg = load_config(bundled_config_path())
    return replace(cfg, **overrides) if overrides else cfg


def warmup_seconds(cfg: RunConfig) -> float:
    return cfg.dwacd.warmup_frames * cfg.stft.hop_size / cfg.sample_rate


def output_path(cfg: RunConfig, *parts) -> str:
    return os.path.join(cfg.output_dir, *parts)


__all__ = ["RunConfig", "load_config", "loads_config", "default_config", "bundled_config_path",
           "SCHEMA", "SCHEMA_VERSION", "CONDITIONS", "canonical_text"]
