"""Shoebox image-source room simulation and scene rendering.

Renders the microphone-array signals of the primary device and the ear
signals of the listener for two loudspeakers whose clocks run at individual
sampling-rate offsets.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.io import wavfile
from scipy.signal import butter, fftconvolve, sosfilt

from . import _kernels
from .errors import DomainError, GeometryError, ShapeError
from .resample import apply_sro, check_sro

SPEED_OF_SOUND = 343.0
SABINE_CONSTANT = 24 * math.log(10) / SPEED_OF_SOUND   # 0.1611 s/m
SRO_MODES = ("source", "image")
EAR_MODES = ("room", "direct")
ABSORPTION_MODELS = ("sabine", "eyring")
DC_BLOCK_HZ = 20.0


def _vec3(v, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise GeometryError(f"{name} must be three finite coordinates, got {v!r}")
    return v


def check_inside(room_dims, pos, name="position"):
    """Raise :class:`GeometryError` unless ``pos`` lies strictly inside the room."""
    pos = _vec3(pos, name)
    room_dims = _vec3(room_dims, "room_dims")
    if np.any(pos <= 0) or np.any(pos >= room_dims):
        raise GeometryError(f"{name} {pos.tolist()} is not strictly inside room "
                            f"{room_dims.tolist()}")
    return pos


def wall_absorption(room_dims, rt60: float, model: str = "eyring") -> float:
    """Uniform energy absorption coefficient giving reverberation time ``rt60``.

    Args:
        room_dims: Room size ``[Lx, Ly, Lz]`` in meters.
        rt60: Target reverberation time in seconds.
        model: ``"sabine"`` (``0.1611 V / (S rt60)``) or ``"eyring"``
            (``1 - exp(-0.1611 V / (S rt60))``).

    Returns:
        Absorption coefficient in ``(0, 1)``.

    Raises:
        DomainError: If Sabine's formula gives ``alpha >= 1`` (the
            reverberation time is too short for the room), whatever ``model``.
    """
    dims = _vec3(room_dims, "room_dims")
    if np.any(dims <= 0):
        raise GeometryError(f"room dimensions must be positive, got {dims.tolist()}")
    if not rt60 > 0:
        raise DomainError(f"rt60 must be positive, got {rt60}")
    if model not in ABSORPTION_MODELS:
        raise DomainError(f"unknown absorption model {model!r}")
    volume = float(np.prod(dims))
    surface = 2 * float(dims[0] * dims[1] + dims[0] * dims[2] + dims[1] * dims[2])
    sabine = SABINE_CONSTANT * volume / (surface * rt60)
    if sabine >= 1:
        raise DomainError(f"rt60 = {rt60} s is infeasible for this room: "
                          f"Sabine absorption {sabine:.3f} >= 1")
    if model == "sabine":
        return sabine
    return 1 - math.exp(-sabine)


def default_rir_length(rt60: float, max_distance: float, sample_rate: float,
                       half_width: int = 16) -> int:
    """Samples needed to cover ``rt60`` plus the direct-path delay."""
    return int(math.ceil(rt60 * sample_rate)
               + math.ceil(max_distance / SPEED_OF_SOUND * sample_rate) + half_width + 1)


def _image_sources(room_dims, src, max_dist):
    """Image positions and reflection counts within ``max_dist`` of the room."""
    coords, orders = [], []
    for axis in range(3):
        length, s = room_dims[axis], src[axis]
        n_max = int(math.ceil(max_dist / (2 * length))) + 1
        n = np.arange(-n_max, n_max + 1)
        # p = 0: 2nL + s reflects |2n| times; p = 1: 2nL - s reflects |2n - 1| times
        pos = np.concatenate([2 * n * length + s, 2 * n * length - s])
        refl = np.concatenate([np.abs(2 * n), np.abs(2 * n - 1)])
        coords.append(pos)
        orders.append(refl)
    gx, gy, gz = np.meshgrid(*coords, indexing="ij")
    ox, oy, oz = np.meshgrid(*orders, indexing="ij")
    return (np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1),
            (ox + oy + oz).ravel())


def image_source_rir(room_dims, rt60: float, src, rcv, max_len: int | None = None,
                     sample_rate: float = 16000.0, half_width: int = 16,
                     absorption: str = "eyring",
                     highpass_hz: float | None = DC_BLOCK_HZ) -> np.ndarray:
    """Room impulse response of a shoebox room by the image-source method.

    Every image contributes a Hann-windowed sinc tap at its fractional
    propagation delay, scaled by ``sqrt(1 - alpha) ** reflections / (4 pi d)``.
    All image taps are positive, so their sum carries a slowly decaying DC
    component that real transducers do not pass; a causal second-order
    high-pass at ``highpass_hz`` removes it.

    Args:
        room_dims: Room size in meters.
        rt60: Reverberation time in seconds, mapped to a uniform wall
            absorption by :func:`wall_absorption`.
        src: Source position in meters.
        rcv: Receiver position in meters.
        max_len: RIR length in samples; default covers ``rt60`` plus the
            direct path.
        sample_rate: Sampling rate in Hz.
        half_width: Half length of the fractional-delay kernel in samples.
        absorption: Inversion of ``rt60`` to wall absorption, see
            :func:`wall_absorption`.
        highpass_hz: DC-blocking cutoff in Hz, ``None`` to keep DC.

    Returns:
        The impulse response, ``max_len`` samples.
    """
    room_dims = _vec3(room_dims, "room_dims")
    src = check_inside(room_dims, src, "source")
    rcv = check_inside(room_dims, rcv, "receiver")
    alpha = wall_absorption(room_dims, rt60, absorption)
    if max_len is None:
        max_len = default_rir_length(rt60, float(np.linalg.norm(src - rcv)), sample_rate,
                                     half_width)
    max_dist = (max_len + half_width) / sample_rate * SPEED_OF_SOUND
    images, refl = _image_sources(room_dims, src, max_dist)
    dist = np.linalg.norm(images - rcv, axis=1)
    keep = dist <= max_dist
    dist, refl = dist[keep], refl[keep]
    gains = np.sqrt(1 - alpha) ** refl / (4 * np.pi * np.maximum(dist, SPEED_OF_SOUND / sample_rate))
    delays = dist / SPEED_OF_SOUND * sample_rate
    out = np.zeros(int(max_len))
    _kernels.accumulate_fractional_taps(out, delays, gains, int(half_width))
    if highpass_hz:
        out = sosfilt(butter(2, highpass_hz, "highpass", fs=sample_rate, output="sos"), out)
    return out


def schroeder_decay_db(rir) -> np.ndarray:
    """Energy decay curve (backward-integrated energy) in dB, 0 dB at start."""
    e = np.cumsum(np.asarray(rir, dtype=float)[::-1] ** 2)[::-1]
    return 10 * np.log10(np.maximum(e / e[0], 1e-300))


def measure_rt60(rir, sample_rate: float = 16000.0, start_db: float = -5.0,
                 stop_db: float = -25.0) -> float:
    """Reverberation time from a line fit to the Schroeder curve.

    The decay between ``start_db`` and ``stop_db`` (a T20 range by default)
    is extrapolated to -60 dB. Integration starts at the direct-path peak.
    """
    rir = np.asarray(rir, dtype=float)
    edc = schroeder_decay_db(rir[int(np.argmax(np.abs(rir))):])
    idx = np.nonzero((edc <= start_db) & (edc >= stop_db))[0]
    if idx.size < 2:
        raise DomainError("decay range not covered by the impulse response")
    slope, _ = np.polyfit(idx / sample_rate, edc[idx], 1)
    return -60.0 / slope


def default_ear_positions(source_positions, array_center, distance: float = 1.5,
                          spacing: float = 0.18) -> np.ndarray:
    """Left and right ear positions facing the loudspeaker midpoint.

    The listener sits ``distance`` meters from the array centre,
    perpendicular (in the horizontal plane) to the loudspeaker axis and on the
    side from which loudspeaker 1 appears on the left.
    """
    s1, s2 = (np.asarray(p, dtype=float) for p in source_positions)
    center = np.asarray(array_center, dtype=float)
    axis = (s2 - s1)[:2]
    axis = axis / np.linalg.norm(axis)
    normal = np.array([-axis[1], axis[0]])      # listener faces +normal
    head = center.copy()
    head[:2] = center[:2] - distance * normal
    # facing direction +normal; left = z x facing
    left = np.array([-normal[1], normal[0], 0.0])
    return np.stack([head + spacing / 2 * left, head - spacing / 2 * left])


@dataclass(frozen=True)
class SceneConfig:
    """Geometry, clocks and rendering options of the acoustic scene.

    Args:
        room_dims: Room size in meters.
        rt60: Reverberation time in seconds.
        source_positions: Loudspeaker positions, shape ``(2, 3)``.
        array_center: Centre of the circular microphone array.
        array_radius: Array radius in meters.
        mic_count: Number of microphones ``M >= 2``.
        ear_positions: Listener ear positions ``(2, 3)`` (left, right); derived
            from the geometry when ``None``.
        sample_rate: Nominal sampling rate in Hz.
        noise_level: Sensor noise power per microphone in dB relative to the
            noiseless microphone signal; ``None`` disables noise.
        sro: ``(eps_0, eps_1, eps_2)`` in ppm for the primary device's ADC and
            the two loudspeakers.
        seed: Seed of the sensor-noise generator.
        sro_mode: ``"source"`` applies each loudspeaker's SRO to its playback
            before the room; ``"image"`` applies it to that loudspeaker's
            contribution after the room.
        ear_mode: ``"room"`` renders the ears through the room;
            ``"direct"`` feeds ``apply_sro(x_q, eps_q)`` straight to ear ``q``.
        absorption: Inversion of ``rt60`` to wall absorption.
        rir_length: RIR length in samples (default from ``rt60``).
        rir_dir: Directory of external RIRs replacing the simulator.
    """

    room_dims: tuple = (7.0, 7.0, 6.0)
    rt60: float = 0.3
    source_positions: tuple = ((2.2, 3.4, 1.8), (5.2, 3.5, 2.1))
    array_center: tuple = (3.75, 3.35, 2.0)
    array_radius: float = 0.10
    mic_count: int = 4
    ear_positions: tuple | None = None
    sample_rate: float = 16000.0
    noise_level: float | None = -40.0
    sro: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    sro_mode: str = "source"
    ear_mode: str = "room"
    absorption: str = "eyring"
    rir_length: int | None = None
    rir_dir: str | None = None

    def __post_init__(self):
        room = _vec3(self.room_dims, "room_dims")
        if np.any(room <= 0):
            raise GeometryError("room dimensions must be positive")
        if not self.rt60 > 0:
            raise DomainError(f"rt60 must be positive, got {self.rt60}")
        if int(self.mic_count) < 2:
            raise DomainError(f"mic_count must be >= 2, got {self.mic_count}")
        if not self.array_radius > 0:
            raise GeometryError("array_radius must be positive")
        if len(self.source_positions) != 2:
            raise ShapeError("exactly two loudspeaker positions are required")
        for q, p in enumerate(self.source_positions, start=1):
            check_inside(room, p, f"loudspeaker {q}")
        for m, p in enumerate(self.mic_positions()):
            check_inside(room, p, f"microphone {m}")
        for name, p in zip(("left ear", "right ear"), self.ears()):
            check_inside(room, p, name)
        if len(self.sro) != 3:
            raise ShapeError("sro must hold (eps_0, eps_1, eps_2)")
        for name, v in zip(("eps_0", "eps_1", "eps_2"), self.sro):
            check_sro(v, name)
        for q in (1, 2):
            check_sro(self.sro[0] + self.sro[q], f"eps_0 + eps_{q}")
        if self.sro_mode not in SRO_MODES:
            raise DomainError(f"sro_mode must be one of {SRO_MODES}")
        if self.ear_mode not in EAR_MODES:
            raise DomainError(f"ear_mode must be one of {EAR_MODES}")
        wall_absorption(room, self.rt60, self.absorption)
        if self.sample_rate <= 0:
            raise DomainError("sample_rate must be positive")

    def mic_positions(self) -> np.ndarray:
        """Microphones on a horizontal circle, azimuths ``2 pi m / M`` from 0."""
        az = 2 * np.pi * np.arange(self.mic_count) / self.mic_count
        c = np.asarray(self.array_center, dtype=float)
        return c + self.array_radius * np.stack([np.cos(az), np.sin(az),
                                                 np.zeros_like(az)], axis=1)

    def ears(self) -> np.ndarray:
        if self.ear_positions is not None:
            return np.asarray(self.ear_positions, dtype=float).reshape(2, 3)
        return default_ear_positions(self.source_positions, self.array_center)

    def effective_sro(self, q: int) -> float:
        """SRO seen by the array for loudspeaker ``q``: ``eps_q + eps_0``."""
        return self.sro[0] + self.sro[q]

    def with_sro(self, eps1: float, eps2: float, eps0: float | None = None) -> "SceneConfig":
        return replace(self, sro=(self.sro[0] if eps0 is None else eps0, eps1, eps2))


@dataclass
class RirSet:
    """Impulse responses ``rirs[q, r]`` from loudspeaker ``q`` to receiver ``r``.

    Receivers are the ``M`` microphones followed by the left and right ear.
    """

    rirs: np.ndarray
    sample_rate: float
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.rirs = np.asarray(self.rirs, dtype=float)
        if self.rirs.ndim != 3:
            raise ShapeError(f"rirs must be (sources, receivers, taps), got {self.rirs.shape}")
        if not np.all(np.isfinite(self.rirs)):
            raise DomainError("impulse responses must be finite")
        if not self.labels:
            self.labels = [f"r{j}" for j in range(self.rirs.shape[1])]

    @property
    def length(self) -> int:
        return self.rirs.shape[2]

    def mics(self) -> np.ndarray:
        return self.rirs[:, [j for j, n in enumerate(self.labels) if n.startswith("mic")]]

    def ears(self) -> np.ndarray:
        return self.rirs[:, [self.labels.index("ear_l"), self.labels.index("ear_r")]]


def receiver_labels(mic_count: int) -> list:
    return [f"mic{m}" for m in range(mic_count)] + ["ear_l", "ear_r"]


def simulate_rirs(cfg: SceneConfig, half_width: int = 16) -> RirSet:
    """Image-source RIRs from both loudspeakers to all microphones and ears."""
    receivers = np.concatenate([cfg.mic_positions(), cfg.ears()])
    srcs = np.asarray(cfg.source_positions, dtype=float)
    length = cfg.rir_length
    if length is None:
        dmax = max(np.linalg.norm(s - r) for s in srcs for r in receivers)
        length = default_rir_length(cfg.rt60, dmax, cfg.sample_rate, half_width)
    rirs = np.stack([[image_source_rir(cfg.room_dims, cfg.rt60, s, r, length,
                                       cfg.sample_rate, half_width, cfg.absorption)
                      for r in receivers] for s in srcs])
    return RirSet(rirs, cfg.sample_rate, receiver_labels(cfg.mic_count))


def save_rirs(rirs: RirSet, directory: str, fmt: str = "wav") -> list:
    """Write one file per pair, named ``rir_s{q}_r{j}.wav`` or ``.f32``.

    ``q`` counts loudspeakers from 1, ``j`` receivers from 0 in
    :func:`receiver_labels` order. ``.f32`` files are raw little-endian
    float32; ``.wav`` files are mono float32 WAV at the set's rate.
    """
    if fmt not in ("wav", "f32"):
        raise DomainError(f"unknown RIR format {fmt!r}")
    os.makedirs(directory, exist_ok=True)
    paths = []
    for q in range(rirs.rirs.shape[0]):
        for j in range(rirs.rirs.shape[1]):
            path = os.path.join(directory, f"rir_s{q + 1}_r{j}.{fmt}")
            data = rirs.rirs[q, j].astype("<f4")
            if fmt == "wav":
                wavfile.write(path, int(rirs.sample_rate), data)
            else:
                data.tofile(path)
            paths.append(path)
    return paths


def load_rirs(directory: str, mic_count: int, sample_rate: float = 16000.0) -> RirSet:
    """Read RIRs written by :func:`save_rirs` (or by any other tool using its
    naming). Shorter responses are zero-padded to the longest."""
    n_rcv = mic_count + 2
    rows = []
    for q in (1, 2):
        row = []
        for j in range(n_rcv):
            base = os.path.join(directory, f"rir_s{q}_r{j}")
            if os.path.exists(base + ".wav"):
                rate, data = wavfile.read(base + ".wav")
                if rate != int(sample_rate):
                    raise DomainError(f"{base}.wav has rate {rate}, expected {sample_rate}")
                if data.ndim != 1:
                    raise ShapeError(f"{base}.wav must be mono")
            elif os.path.exists(base + ".f32"):
                data = np.fromfile(base + ".f32", dtype="<f4")
            else:
                raise FileNotFoundError(f"missing impulse response {base}.wav/.f32")
            row.append(np.asarray(data, dtype=float))
        rows.append(row)
    n = max(len(h) for row in rows for h in row)
    rirs = np.zeros((2, n_rcv, n))
    for q, row in enumerate(rows):
        for j, h in enumerate(row):
            rirs[q, j, :len(h)] = h
    return RirSet(rirs, sample_rate, receiver_labels(mic_count))


@dataclass
class SceneRender:
    """Result of :func:`synthesize_scene`.

    ``mics`` is ``(M, n)``; ``ears`` is ``(2, n)``; ``mic_images`` holds the
    noiseless per-loudspeaker microphone contributions ``(2, M, n)``.
    """

    mics: np.ndarray
    ears: np.ndarray
    rirs: RirSet | None
    mic_images: np.ndarray
    noise: np.ndarray


def _fit(x, n):
    out = np.zeros(x.shape[:-1] + (n,))
    m = min(n, x.shape[-1])
    out[..., :m] = x[..., :m]
    return out


def _convolve(h, x, n):
    """``(h * x)[:n]`` for one source signal and a stack of RIRs."""
    return fftconvolve(h, x[None, :], axes=-1)[..., :n]


def sensor_noise(clean, level_db, seed):
    """White noise with per-channel power ``level_db`` relative to ``clean``."""
    rng = np.random.default_rng(seed)
    power = np.mean(clean ** 2, axis=-1, keepdims=True)
    return rng.standard_normal(clean.shape) * np.sqrt(power * 10 ** (level_db / 10))


def synthesize_scene(cfg: SceneConfig, playback, rirs: RirSet | None = None,
                     segment_len: int = 8192, render_mics: bool = True) -> SceneRender:
    """Render microphone and ear signals for a stereo playback.

    Args:
        cfg: Scene description.
        playback: Loudspeaker signals, shape ``(2, n)``.
        rirs: Precomputed impulse responses; simulated (or loaded from
            ``cfg.rir_dir``) when ``None``.
        segment_len: FFT length of the device resampler.
        render_mics: When false only the ears are rendered and the
            microphone fields hold zero-channel arrays.

    Returns:
        :class:`SceneRender` whose signals have the playback length ``n``.
        Microphone ``m`` carries
        ``sum_q h_{0,q,m} * apply_sro(x_q, eps_q + eps_0)`` plus noise; the
        ears carry the same with ``eps_q`` alone.
    """
    x = np.asarray(playback, dtype=float)
    if x.ndim != 2 or x.shape[0] != 2:
        raise ShapeError(f"playback must be (2, samples), got {x.shape}")
    n = x.shape[1]
    need_rirs = render_mics or cfg.ear_mode == "room"
    if rirs is None and need_rirs:
        rirs = (load_rirs(cfg.rir_dir, cfg.mic_count, cfg.sample_rate) if cfg.rir_dir
                else simulate_rirs(cfg))
    if rirs is not None:
        h_mic, h_ear = rirs.mics(), rirs.ears()
        if h_mic.shape[1] != cfg.mic_count:
            raise ShapeError(f"RIR set has {h_mic.shape[1]} microphones, "
                             f"config {cfg.mic_count}")
    n_mics = cfg.mic_count if render_mics else 0
    images = np.zeros((2, n_mics, n))
    ears = np.zeros((2, n))

    def device(sig, eps):
        return _fit(apply_sro(sig, eps, segment_len), n)

    for q in (0, 1):
        eps_mic = cfg.effective_sro(q + 1)
        eps_ear = cfg.sro[q + 1]
        if not np.any(x[q]):
            continue
        if render_mics:
            if cfg.sro_mode == "source":
                images[q] = _convolve(h_mic[q], device(x[q], eps_mic), n)
            else:
                images[q] = device(_convolve(h_mic[q], x[q], n), eps_mic)
        if cfg.ear_mode == "direct":
            ears[q] = device(x[q], eps_ear)
        elif cfg.sro_mode == "source":
            ears += _convolve(h_ear[q], device(x[q], eps_ear), n)
        else:
            ears += device(_convolve(h_ear[q], x[q], n), eps_ear)
    clean = images.sum(axis=0)
    if not render_mics or cfg.noise_level is None or not math.isfinite(cfg.noise_level):
        noise = np.zeros_like(clean)
    else:
        noise = sensor_noise(clean, cfg.noise_level, cfg.seed)
    return SceneRender(clean + noise, ears, rirs, images, noise)
