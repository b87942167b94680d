"""Condition orchestration: render, estimate, compensate, measure, emit.

A run plays a stereo program through two loudspeakers whose clocks deviate
from the nominal rate, and evaluates what a listener hears under one of four
conditions:

``reference``
    Synchronized playback (no offset anywhere).
``uncompensated``
    The loudspeakers run at their offsets and nothing is done about it.
``oracle_comp``
    Playback is pre-compensated with the true offsets.
``estimated_comp``
    Each loudspeaker first plays alone (solo phase) so that its relative
    transfer functions can be measured; afterwards both play, a beamformer
    isolates each one at the microphone array, the DWACD estimator tracks its
    offset, and playback is pre-compensated with the running estimate.

In the closed loop the compensated playback is what the loudspeakers emit and
what the array records, so the chain is simulated frame by frame: the
transmit frame ``l`` is delayed using the estimate of microphone frame
``l - D``, where ``D`` is the processing latency of the simulated chain.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve

from .beamformer import (RtfMatrix, beamform_frame, estimate_oracle_rtf, lcmv_weights)
from .binaural import CueMap, cue_difference, cue_map, mean_abs_difference
from .config import RunConfig, canonical_text
from .dsp import Spectrogram, istft, n_frames_for, stft
from .dwacd import DwacdEstimator, SroTrace
from .errors import DataError, ShapeError, ValidityError
from .resample import (PPM, StreamingWarp, accumulated_delay, compensate_sro, delay_gain)
from .room import RirSet, load_rirs, simulate_rirs, synthesize_scene

PLAYBACK_RMS = 0.1
LOW_BAND_HZ = 2000.0


# ---------------------------------------------------------------- playback

def read_wav(path: str):
    """Read a WAV file as float ``(channels, samples)`` and its rate.

    Integer formats are scaled to ``[-1, 1)``.
    """
    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if np.issubdtype(data.dtype, np.integer):
        info = np.iinfo(data.dtype)
        scale = float(-info.min) if info.min < 0 else float(info.max + 1) / 2
        offset = 0.0 if info.min < 0 else 1.0
        data = data.astype(float) / scale - offset
    data = data.astype(float)
    if data.ndim == 1:
        data = data[:, None]
    return data.T.copy(), float(rate)


def write_wav(path: str, signals, sample_rate: float):
    """Write ``(channels, samples)`` as 32-bit float WAV."""
    x = np.asarray(signals, dtype=np.float32)
    if x.ndim == 1:
        x = x[None]
    wavfile.write(path, int(round(sample_rate)), x.T)


def program_signal(cfg: RunConfig) -> np.ndarray:
    """Stereo program material of ``cfg.duration`` seconds.

    ``playback = noise`` gives the same seeded white noise in both channels;
    otherwise ``playback`` names a stereo WAV file at the scene rate whose
    first ``duration`` seconds are used.
    """
    n = cfg.program_samples()
    if cfg.playback == "noise":
        rng = np.random.default_rng([cfg.playback_seed, 0])
        x = rng.standard_normal(n) * PLAYBACK_RMS
        return np.stack([x, x])
    data, rate = read_wav(cfg.playback)
    if rate != cfg.sample_rate:
        raise DataError(f"{cfg.playback}: sampled at {rate:g} Hz, scene at "
                        f"{cfg.sample_rate:g} Hz")
    if data.shape[0] != 2:
        raise ShapeError(f"{cfg.playback}: expected 2 channels, found {data.shape[0]}")
    if data.shape[1] < n:
        raise DataError(f"{cfg.playback}: {data.shape[1] / rate:.1f} s of audio, "
                        f"{cfg.duration:g} s requested")
    return data[:, :n].copy()


def solo_signals(cfg: RunConfig) -> np.ndarray:
    """Seeded white noise for the two solo phases, shape ``(2, S)``."""
    rng = np.random.default_rng([cfg.playback_seed, 1])
    return rng.standard_normal((2, cfg.solo_samples())) * PLAYBACK_RMS


def stream_signal(cfg: RunConfig, program=None) -> np.ndarray:
    """Everything the loudspeakers play in this condition, shape ``(2, n)``.

    For ``estimated_comp`` loudspeaker 1 plays its solo phase, then
    loudspeaker 2, then both play the program; other conditions play the
    program only.
    """
    if program is None:
        program = program_signal(cfg)
    if cfg.condition != "estimated_comp":
        return program
    solo = solo_signals(cfg)
    s = solo.shape[1]
    out = np.zeros((2, 2 * s + program.shape[1]))
    out[0, :s] = solo[0]
    out[1, s:2 * s] = solo[1]
    out[:, 2 * s:] = program
    return out


# ---------------------------------------------------------------- estimation

class SroTracker:
    """Frame-by-frame estimation of both loudspeaker offsets.

    Frames lying entirely inside loudspeaker ``q``'s solo phase feed its
    estimator with the reference microphone and are kept for the RTF
    estimate; at the first program frame the LCMV weights are computed and
    from then on each estimator sees its beamformer output. Frames that
    straddle a phase boundary are gated out.

    Args:
        cfg: Run configuration (STFT layout, estimator and beamformer
            settings, solo-phase length).
    """

    def __init__(self, cfg: RunConfig):
        c = cfg.stft
        self.cfg = cfg
        self.stft_cfg = c
        self.estimators = {q: DwacdEstimator(c.n_bins, c.fft_size, c.hop_size, cfg.dwacd)
                           for q in (1, 2)}
        self.steps = {1: [], 2: []}
        self.solo = {1: ([], []), 2: ([], [])}
        self.weights = None
        self.rtf = None
        self.n_frames = 0
        self._solo_len = cfg.solo_samples()

    def phase(self, l: int):
        """``1`` or ``2`` inside a solo phase, ``0`` in the program, ``None``
        for frames crossing a boundary."""
        c = self.stft_cfg
        start = -c.pad + l * c.hop_size
        end = start + c.window_size
        s = self._solo_len
        if end <= s:
            return 1
        if start >= s and end <= 2 * s:
            return 2
        if start >= 2 * s:
            return 0
        return None

    def _build_beamformers(self):
        c = self.stft_cfg
        cols = []
        for q in (1, 2):
            Y, X = self.solo[q]
            cols.append(estimate_oracle_rtf(Spectrogram(np.stack(Y, axis=1), c),
                                            Spectrogram(np.array(X)[None], c)))
        self.rtf = RtfMatrix.from_columns(*cols)
        self.weights = {q: lcmv_weights(self.rtf, q, self.cfg.bf_alpha) for q in (1, 2)}
        self.solo = None

    def push(self, y, x):
        """Process microphone frame ``y`` ``(M, K)`` and playback frames ``x``
        ``(2, K)`` of the next frame index."""
        ph = self.phase(self.n_frames)
        if ph in (1, 2):
            self.solo[ph][0].append(y)
            self.solo[ph][1].append(x[ph - 1])
        if ph == 0 and self.weights is None:
            self._build_beamformers()
        for q in (1, 2):
            if ph == 0:
                z, gate = beamform_frame(self.weights[q], y), True
            else:
                z, gate = y[0], ph == q
            self.steps[q].append(self.estimators[q].update(z, x[q - 1], gate))
        self.n_frames += 1

    def estimate(self, q: int, l: int) -> float:
        """Smoothed estimate (ppm) after frame ``l``; 0 before the first frame."""
        if l < 0:
            return 0.0
        if l >= self.n_frames:
            raise IndexError(f"frame {l} not yet processed")
        return self.steps[q][l].smoothed_ppm

    def traces(self) -> dict:
        c = self.stft_cfg
        idx = np.arange(self.n_frames)
        times = (-c.pad + idx * c.hop_size + c.window_size / 2) / c.sample_rate
        out = {}
        for q in (1, 2):
            st = self.steps[q]
            out[q] = SroTrace(idx, times, [s.raw_ppm for s in st],
                              [s.smoothed_ppm for s in st], [s.active for s in st],
                              [s.gcc_peak for s in st])
        return out


def loop_delay(cfg: RunConfig) -> int:
    """Frames between a microphone frame and the first transmit frame that
    can use its estimate.

    A transmit frame completes the playback samples of the frame three hops
    earlier; the device resampler needs its read block, the block grid
    spacing, the interpolation tail and the accumulated drift beyond that;
    the microphone frame then needs one more hop.
    """
    c = cfg.stft
    block = cfg.segment_len // 8
    spill = (cfg.segment_len - block) // 2
    eps = max(abs(cfg.scene.effective_sro(q)) for q in (1, 2)) * PPM
    max_shift = math.ceil(eps * cfg.stream_samples()) + 1
    extra = block + block // 4 + spill + max_shift
    return c.window_size // c.hop_size + math.ceil(extra / c.hop_size)


# ---------------------------------------------------------------- closed loop

class _StreamingConvolver:
    """``(h * x)`` for streamed ``x`` and a stack of filters ``h`` ``(M, R)``."""

    def __init__(self, h):
        self.h = np.asarray(h, dtype=float)
        self.buf = np.zeros((self.h.shape[0], 0))
        self.pos = 0

    def push(self, x):
        x = np.asarray(x, dtype=float)
        if x.size == 0:
            return np.zeros((self.h.shape[0], 0))
        y = fftconvolve(self.h, x[None, :], axes=-1)
        need = y.shape[1] - self.buf.shape[1]
        if need > 0:
            self.buf = np.concatenate([self.buf, np.zeros((self.buf.shape[0], need))], axis=1)
        self.buf[:, :y.shape[1]] += y
        out = self.buf[:, :x.size].copy()
        self.buf = self.buf[:, x.size:]
        self.pos += x.size
        return out


class _DeviceChain:
    """Loudspeaker ``q`` to all microphones: device clock plus room.

    In ``source`` mode the clock acts on the loudspeaker signal before the
    room; in ``image`` mode on each microphone image after it.
    """

    def __init__(self, h, eps_ppm, sro_mode, segment_len):
        eps = eps_ppm * PPM
        self.mode = sro_mode
        n_warps = 1 if sro_mode == "source" else h.shape[0]
        self.warps = [StreamingWarp(lambda n: eps * n, segment_len) for _ in range(n_warps)]
        self.conv = _StreamingConvolver(h)

    @staticmethod
    def _warp(w, x, close_len):
        y = w.push(x)
        if close_len is not None:
            y = np.concatenate([y, w.close(close_len)])[:close_len]
        return y

    def push(self, x, close_len=None):
        """Feed final playback samples; return newly final microphone images
        ``(M, n)``. ``close_len`` ends the stream at that many samples."""
        if self.mode == "source":
            return self.conv.push(self._warp(self.warps[0], x, close_len))
        images = self.conv.push(x)
        return np.stack([self._warp(w, images[m], close_len)
                         for m, w in enumerate(self.warps)])


def _frame_delay(history, cfg: RunConfig, c) -> float:
    return float(accumulated_delay(np.asarray(history), c, -c.pad,
                                   cfg.compensation_mode)[-1])


def closed_loop(cfg: RunConfig, stream, rirs: RirSet, noise):
    """Simulate estimation and compensation frame by frame.

    Args:
        cfg: Run configuration.
        stream: Playback ``(2, n)`` including the solo phases.
        rirs: Impulse responses of the scene.
        noise: Sensor noise ``(M, n)`` added to the microphones.

    Returns:
        ``(transmitted, mics, tracker, delay_frames, comp_trace)`` where
        ``comp_trace[q]`` holds the offset (ppm) used per transmit frame.
    """
    c = cfg.stft
    H, nw, pad = c.hop_size, c.window_size, c.pad
    n = stream.shape[1]
    F = n_frames_for(n, c)
    D = loop_delay(cfg)
    X = stft(stream, c).data
    ws = c.synthesis_window
    wa = c.analysis_window
    k = np.arange(c.n_bins)
    eps0 = cfg.scene.sro[0]
    h_mic = rirs.mics()
    chains = [_DeviceChain(h_mic[q], cfg.scene.effective_sro(q + 1), cfg.scene.sro_mode,
                           cfg.segment_len) for q in (0, 1)]
    M = h_mic.shape[1]
    total = (F - 1) * H + nw
    xbar_buf = np.zeros((2, total))       # coordinates shifted by ``pad``
    mics = np.zeros((M, n))
    mic_clean = np.zeros((2, M, n))
    done = [0, 0]
    ready = 0
    tracker = SroTracker(cfg)
    history = {1: [], 2: []}
    fed = 0

    def frame_of(sig, j):
        lo = j * H - pad
        seg = np.zeros((sig.shape[0], nw))
        a, b = max(lo, 0), min(lo + nw, n)
        if b > a:
            seg[:, a - lo:b - lo] = sig[:, a:b]
        return np.fft.rfft(seg * wa, n=c.fft_size, axis=-1)

    def drain(final_mic):
        while tracker.n_frames < F:
            j = tracker.n_frames
            if min(j * H - pad + nw, n) > final_mic:
                break
            xbar = xbar_buf[:, pad:pad + n]
            tracker.push(frame_of(mics, j), frame_of(xbar, j))

    for l in range(F):
        if l - D >= tracker.n_frames:
            raise RuntimeError(f"closed loop: estimate of frame {l - D} not available "
                               f"at transmit frame {l}")
        for q in (1, 2):
            history[q].append(tracker.estimate(q, l - D) - eps0)
            delay = _frame_delay(history[q], cfg, c)
            if abs(delay) > nw / 4:
                raise ValidityError(f"compensation delay of loudspeaker {q} exceeds N_w/4 "
                                    f"at frame {l}")
            ramp = np.exp(-2j * np.pi * k * delay / c.fft_size)
            if delay:
                ramp /= delay_gain(delay, c)[0]
            seg = np.fft.irfft(X[q - 1, l] * ramp, n=c.fft_size)[:nw] * ws
            xbar_buf[q - 1, l * H:l * H + nw] += seg
        last = l == F - 1
        final = n if last else min(max((l - 2) * H, 0), n)
        chunk = xbar_buf[:, pad + fed:pad + final]
        fed = final
        for q in (0, 1):
            out = chains[q].push(chunk[q], close_len=n if last else None)
            m = min(out.shape[1], n - done[q])
            mic_clean[q, :, done[q]:done[q] + m] = out[:, :m]
            done[q] += m
        new = min(done)
        if new > ready:
            mics[:, ready:new] = (mic_clean[0, :, ready:new] + mic_clean[1, :, ready:new]
                                  + noise[:, ready:new])
            ready = new
        drain(ready)
    transmitted = xbar_buf[:, pad:pad + n].copy()
    comp = {q: np.asarray(history[q]) for q in (1, 2)}
    return transmitted, mics, tracker, D, comp


def open_loop(cfg: RunConfig, stream, mics):
    """Estimate on the uncompensated recording, then compensate causally with
    the estimate delayed by :func:`loop_delay` frames."""
    c = cfg.stft
    Y = stft(mics, c).data
    X = stft(stream, c)
    tracker = SroTracker(cfg)
    for j in range(Y.shape[1]):
        tracker.push(Y[:, j], X.data[:, j])
    D = loop_delay(cfg)
    eps0 = cfg.scene.sro[0]
    out = np.empty_like(stream)
    comp = {}
    for q in (1, 2):
        sm = np.array([s.smoothed_ppm for s in tracker.steps[q]])
        trace = np.concatenate([np.zeros(min(D, sm.size)), sm[:max(sm.size - D, 0)]]) - eps0
        comp[q] = trace
        spec = compensate_sro(X.channel(q - 1), trace, cfg.compensation_mode)
        out[q - 1] = istft(spec, stream.shape[1])[0]
    return out, tracker, D, comp


# ---------------------------------------------------------------- conditions

@dataclass
class RunResult:
    """Everything a run produces.

    ``ears`` covers the program only; ``traces`` and ``rtf`` are ``None``
    unless the condition estimates offsets.
    """

    cfg: RunConfig
    transmitted: np.ndarray
    ears: np.ndarray
    cues: CueMap
    reference_cues: CueMap
    diff: CueMap
    mics: np.ndarray | None = None
    traces: dict | None = None
    comp_traces: dict | None = None
    rtf: RtfMatrix | None = None
    loop_delay: int | None = None
    summary: dict = field(default_factory=dict)


def _ears(cfg: RunConfig, scene, playback, rirs):
    return synthesize_scene(scene, playback, rirs, cfg.segment_len, render_mics=False).ears


def synchronized(scene):
    """``scene`` with every clock at the nominal rate."""
    return replace(scene, sro=(0.0, 0.0, 0.0))


def reference_ears(cfg: RunConfig, program, rirs=None):
    """Ear signals of synchronized playback of ``program``."""
    return _ears(cfg, synchronized(cfg.scene), program, rirs)


def needs_rirs(cfg: RunConfig) -> bool:
    return cfg.condition == "estimated_comp" or cfg.write_mics or cfg.scene.ear_mode == "room"


def scene_rirs(cfg: RunConfig) -> RirSet | None:
    """Impulse responses of the scene, or ``None`` if the run needs none."""
    if not needs_rirs(cfg):
        return None
    s = cfg.scene
    return load_rirs(s.rir_dir, s.mic_count, s.sample_rate) if s.rir_dir else simulate_rirs(s)


def run_condition(cfg: RunConfig, rirs: RirSet | None = None) -> RunResult:
    """Execute one condition.

    Args:
        cfg: Validated configuration.
        rirs: Impulse responses to reuse; simulated when needed and ``None``.

    Returns:
        :class:`RunResult`.
    """
    if rirs is None:
        rirs = scene_rirs(cfg)
    program = program_signal(cfg)
    fs = cfg.sample_rate
    n_prog = program.shape[1]
    ref_ears = reference_ears(cfg, program, rirs)
    ref_cues = cue_map(ref_ears[0], ref_ears[1], cfg.bands, fs)
    mics = traces = comp = rtf = D = None
    scene = cfg.scene
    if cfg.condition == "reference":
        transmitted, ears = program, ref_ears
        if cfg.write_mics:
            mics = synthesize_scene(synchronized(scene), program, rirs, cfg.segment_len).mics
    elif cfg.condition in ("uncompensated", "oracle_comp"):
        if cfg.condition == "uncompensated":
            transmitted = program
        else:
            spec = stft(program, cfg.stft)
            transmitted = np.stack([
                istft(compensate_sro(spec.channel(q), scene.effective_sro(q + 1) - scene.sro[0],
                                     cfg.compensation_mode), n_prog)[0]
                for q in (0, 1)])
        render = synthesize_scene(scene, transmitted, rirs, cfg.segment_len,
                                  render_mics=cfg.write_mics)
        ears = render.ears
        mics = render.mics if cfg.write_mics else None
    else:
        stream = stream_signal(cfg, program)
        uncomp = synthesize_scene(scene, stream, rirs, cfg.segment_len)
        if cfg.loop == "closed":
            transmitted, mics, tracker, D, comp = closed_loop(cfg, stream, rirs, uncomp.noise)
        else:
            transmitted, tracker, D, comp = open_loop(cfg, stream, uncomp.mics)
            mics = uncomp.mics
        traces = tracker.traces()
        rtf = tracker.rtf
        start = 2 * cfg.solo_samples()
        ears = _ears(cfg, scene, transmitted, rirs)[:, start:start + n_prog]
        if not cfg.write_mics:
            mics = None
    cues = cue_map(ears[0], ears[1], cfg.bands, fs)
    diff = cue_difference(cues, ref_cues)
    result = RunResult(cfg, transmitted, ears, cues, ref_cues, diff, mics, traces, comp, rtf, D)
    result.summary = summarize(result)
    return result


def summarize(result: RunResult) -> dict:
    """Final estimation error and mean cue differences."""
    cfg = result.cfg
    bands = np.asarray(result.diff.band_centers)
    dic, ditd = mean_abs_difference(result.diff)
    low_ic, low_itd = mean_abs_difference(result.diff, bands < LOW_BAND_HZ)
    high_ic, high_itd = mean_abs_difference(result.diff, bands >= LOW_BAND_HZ)
    out = {
        "mean_abs_dic": dic, "mean_abs_ditd_s": ditd,
        "mean_abs_dic_below_2khz": low_ic, "mean_abs_ditd_below_2khz_s": low_itd,
        "mean_abs_dic_above_2khz": high_ic, "mean_abs_ditd_above_2khz_s": high_itd,
        "final_sro_error_ppm": None, "final_sro_estimate_ppm": None,
    }
    if result.traces is not None:
        out["final_sro_estimate_ppm"] = {str(q): float(t.smoothed_ppm[-1])
                                         for q, t in result.traces.items()}
        out["final_sro_error_ppm"] = {
            str(q): float(t.smoothed_ppm[-1] - cfg.scene.effective_sro(q))
            for q, t in result.traces.items()}
    return out


# ---------------------------------------------------------------- outputs

def check_writable(directory: str):
    """Create ``directory`` if needed and make sure files can be written.

    Raises:
        OSError: The directory cannot be created or written.
    """
    os.makedirs(directory, exist_ok=True)
    fd, probe = tempfile.mkstemp(prefix=".probe-", dir=directory)
    os.close(fd)
    os.remove(probe)


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (float, np.floating)):
        return None if not math.isfinite(v) else float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def manifest_inputs(cfg: RunConfig) -> dict:
    from . import __version__
    s = cfg.scene
    return {
        "software": "srocomp",
        "version": __version__,
        "config_sha256": cfg.digest(),
        "condition": cfg.condition,
        "seeds": {"playback": cfg.playback_seed, "sensor_noise": s.seed},
        "sro_ppm": {"eps0": s.sro[0], "eps1": s.sro[1], "eps2": s.sro[2]},
        "duration_s": cfg.duration,
        "loop": cfg.loop if cfg.condition == "estimated_comp" else None,
        "compensation_mode": cfg.compensation_mode,
    }


def emit_outputs(result: RunResult, directory: str) -> dict:
    """Write the artifacts of a run and its manifest.

    Files (relative to ``directory``): ``playback.wav`` (what the
    loudspeakers emitted), ``ears.wav`` (program part of the ear signals),
    ``cues.csv``, ``cues_reference.csv``, ``cue_diff.csv``,
    ``ic_diff.txt``, ``itd_diff.txt``, plus ``sro_trace_q{1,2}.csv``,
    ``comp_trace.csv`` and ``rtf.csv`` when offsets were estimated and
    ``mics.wav`` when requested. ``manifest.json`` lists each file with its
    SHA-256 hash.

    Returns:
        The manifest as a dict.
    """
    cfg = result.cfg
    fs = cfg.sample_rate
    written = []
    created_dir = not os.path.isdir(directory)
    try:
        os.makedirs(directory, exist_ok=True)

        def path(name):
            p = os.path.join(directory, name)
            written.append(p)
            return p

        write_wav(path("playback.wav"), result.transmitted, fs)
        write_wav(path("ears.wav"), result.ears, fs)
        if result.mics is not None:
            write_wav(path("mics.wav"), result.mics, fs)
        result.cues.to_csv(path("cues.csv"))
        result.reference_cues.to_csv(path("cues_reference.csv"))
        result.diff.to_csv(path("cue_diff.csv"))
        result.diff.to_grid(path("ic_diff.txt"), "ic")
        result.diff.to_grid(path("itd_diff.txt"), "itd")
        if result.traces is not None:
            for q, t in result.traces.items():
                t.to_csv(path(f"sro_trace_q{q}.csv"))
            with open(path("comp_trace.csv"), "w", encoding="utf-8") as f:
                f.write("frame,comp_q1_ppm,comp_q2_ppm\n")
                for l, (a, b) in enumerate(zip(result.comp_traces[1], result.comp_traces[2])):
                    f.write(f"{l},{float(a)!r},{float(b)!r}\n")
        if result.rtf is not None:
            result.rtf.save_csv(path("rtf.csv"))
        with open(path("config.txt"), "w", encoding="utf-8") as f:
            f.write(canonical_text(cfg) + "\n")
        manifest = manifest_inputs(cfg)
        manifest["closed_loop_delay_frames"] = result.loop_delay
        manifest["summary"] = result.summary
        manifest["files"] = [{"path": os.path.relpath(p, directory), "sha256": sha256_file(p),
                              "bytes": os.path.getsize(p)} for p in written]
        text = json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n"
        with open(path("manifest.json"), "w", encoding="utf-8") as f:
            f.write(text)
        return manifest
    except BaseException:
        remove_partial(written, directory if created_dir else None)
        raise


def remove_partial(paths, directory=None):
    """Delete files of an aborted run (and the directory if it was new)."""
    for p in paths:
        try:
            os.remove(p)
        except OSError:
            pass
    if directory is not None:
        shutil.rmtree(directory, ignore_errors=True)


def execute(cfg: RunConfig, directory: str | None = None, rirs=None) -> dict:
    """Check the output directory, run the condition and write its outputs.

    Raises:
        OSError: Before any computation if ``directory`` is not writable.
    """
    directory = directory or cfg.output_dir
    existed = os.path.isdir(directory)
    check_writable(directory)
    try:
        result = run_condition(cfg, rirs)
    except BaseException:
        if not existed:
            shutil.rmtree(directory, ignore_errors=True)
        raise
    return emit_outputs(result, directory)
