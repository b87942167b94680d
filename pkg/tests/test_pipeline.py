"""Condition orchestration, artifacts and the closed loop."""
import json
import math
import os
from dataclasses import replace

import numpy as np
import pytest

from srocomp import pipeline
from srocomp.config import default_config
from srocomp.dwacd import SroTrace
from srocomp.errors import DataError, ShapeError
from srocomp.pipeline import (SroTracker, closed_loop, emit_outputs, execute, loop_delay,
                              program_signal, read_wav, run_condition, scene_rirs,
                              stream_signal, write_wav)
from srocomp.room import simulate_rirs, synthesize_scene

FS = 16000


def short(condition, duration=20.0, **kw):
    cfg = default_config(condition=condition, duration=duration, **kw)
    return cfg.with_overrides(scene=replace(cfg.scene, rir_length=2400))


@pytest.fixture(scope="module")
def estimated(tmp_path_factory):
    cfg = short("estimated_comp", 32.0, init_duration=4.0, write_mics=True)
    out = str(tmp_path_factory.mktemp("est"))
    return cfg, out, execute(cfg, out)


# ------------------------------------------------------------ signals

def test_noise_program_is_identical_in_both_channels():
    x = program_signal(short("reference"))
    assert x.shape == (2, 20 * FS)
    np.testing.assert_array_equal(x[0], x[1])
    assert np.std(x) == pytest.approx(pipeline.PLAYBACK_RMS, rel=0.01)


def test_stream_layout():
    cfg = short("estimated_comp", 32.0, init_duration=4.0)
    s = stream_signal(cfg)
    solo = 4 * FS
    assert s.shape == (2, 40 * FS)
    assert not np.any(s[1, :solo]) and not np.any(s[0, solo:2 * solo])
    np.testing.assert_array_equal(s[:, 2 * solo:], program_signal(cfg))


def test_wav_playback(tmp_path):
    data = np.random.default_rng(2).uniform(-0.5, 0.5, (2, 21 * FS))
    p = str(tmp_path / "music.wav")
    write_wav(p, data, FS)
    x = program_signal(short("reference", playback=p))
    np.testing.assert_array_equal(x, data[:, :20 * FS].astype(np.float32))


def test_wav_playback_checks(tmp_path):
    p = str(tmp_path / "mono.wav")
    write_wav(p, np.zeros(21 * FS), FS)
    with pytest.raises(ShapeError):
        program_signal(short("reference", playback=p))
    write_wav(p, np.zeros((2, 5 * FS)), FS)
    with pytest.raises(DataError):
        program_signal(short("reference", playback=p))
    write_wav(p, np.zeros((2, 30 * 8000)), 8000)
    with pytest.raises(DataError):
        program_signal(short("reference", playback=p))


def test_integer_wav_is_scaled(tmp_path):
    from scipy.io import wavfile
    p = str(tmp_path / "i16.wav")
    wavfile.write(p, FS, np.array([[-32768, 16384]], dtype=np.int16))
    x, rate = read_wav(p)
    np.testing.assert_array_equal(x[:, 0], [-1.0, 0.5])


# ------------------------------------------------------------ conditions

def test_reference_self_difference_is_zero():
    r = run_condition(short("reference"))
    assert r.traces is None and r.rtf is None
    assert np.all(r.diff.ic[np.isfinite(r.diff.ic)] == 0)
    assert np.all(r.diff.itd[r.diff.reliable] == 0)


def test_oracle_compensation_matches_reference():
    r = run_condition(short("oracle_comp").with_sro(10.0, -100.0))
    assert r.summary["mean_abs_dic"] <= 0.02
    assert r.summary["mean_abs_ditd_s"] <= 20e-6


def test_uncompensated_differs_from_reference():
    r = run_condition(short("uncompensated").with_sro(10.0, -100.0))
    assert r.summary["mean_abs_dic"] > 0.05


def test_condition_order_does_not_matter():
    a = run_condition(short("uncompensated"))
    b = run_condition(short("reference"))
    c = run_condition(short("uncompensated"))
    np.testing.assert_array_equal(a.ears, c.ears)
    np.testing.assert_array_equal(b.reference_cues.ic, c.reference_cues.ic)


def test_rirs_only_when_needed():
    assert scene_rirs(short("reference")) is None
    assert scene_rirs(short("estimated_comp", 32.0)) is not None


# ------------------------------------------------------------ estimated condition

def test_estimated_run_converges(estimated):
    cfg, _, manifest = estimated
    err = manifest["summary"]["final_sro_error_ppm"]
    assert abs(err["1"]) <= 1.0 and abs(err["2"]) <= 1.0


def test_manifest_lists_every_file_with_hash(estimated):
    _, out, manifest = estimated
    listed = {f["path"] for f in manifest["files"]}
    on_disk = set(os.listdir(out)) - {"manifest.json"}
    assert listed == on_disk
    for f in manifest["files"]:
        assert f["sha256"] == pipeline.sha256_file(os.path.join(out, f["path"]))
    with open(os.path.join(out, "manifest.json"), encoding="utf-8") as fh:
        stored = json.load(fh)
    assert stored["config_sha256"] == manifest["config_sha256"]
    assert stored["seeds"] == {"playback": 0, "sensor_noise": 0}
    for name in ("ears.wav", "playback.wav", "mics.wav", "sro_trace_q1.csv", "rtf.csv",
                 "comp_trace.csv", "cue_diff.csv", "config.txt"):
        assert name in listed


def test_outputs_are_float32_wav(estimated):
    _, out, _ = estimated
    from scipy.io import wavfile
    rate, data = wavfile.read(os.path.join(out, "ears.wav"))
    assert rate == FS and data.dtype == np.float32 and data.shape == (32 * FS, 2)


def test_trace_csv_reloads(estimated):
    _, out, _ = estimated
    tr = SroTrace.from_csv(os.path.join(out, "sro_trace_q2.csv"))
    tr.to_csv(os.path.join(out, "..", "again.csv"))
    again = SroTrace.from_csv(os.path.join(out, "..", "again.csv"))
    np.testing.assert_array_equal(tr.smoothed_ppm, again.smoothed_ppm)
    assert math.isfinite(tr.smoothed_ppm[-1])


def test_identical_inputs_give_identical_hashes(estimated, tmp_path):
    cfg, _, first = estimated
    second = execute(cfg, str(tmp_path / "again"))
    assert [f["sha256"] for f in first["files"]] == [f["sha256"] for f in second["files"]]


def test_open_loop_runs():
    r = run_condition(short("estimated_comp", 32.0, init_duration=4.0, loop="open"))
    assert r.loop_delay == loop_delay(r.cfg)
    assert set(r.traces) == {1, 2}
    # the open loop compensates with the delayed trace
    comp = r.comp_traces[2]
    sm = r.traces[2].smoothed_ppm
    np.testing.assert_array_equal(comp[r.loop_delay:], sm[:sm.size - r.loop_delay])


# ------------------------------------------------------------ closed loop

def test_closed_loop_is_causal():
    cfg = short("estimated_comp", 32.0, init_duration=4.0)
    stream = stream_signal(cfg)
    rirs = simulate_rirs(cfg.scene)
    noise = synthesize_scene(cfg.scene, stream, rirs).noise
    _, _, _, D, comp_a = closed_loop(cfg, stream, rirs, noise)
    s0 = 30 * FS
    changed = stream.copy()
    changed[:, s0:] *= -1.7
    _, _, _, _, comp_b = closed_loop(cfg, changed, rirs, noise)
    c = cfg.stft
    first_frame = (s0 + c.pad - c.window_size) // c.hop_size + 1
    for q in (1, 2):
        differ = np.nonzero(comp_a[q] != comp_b[q])[0]
        assert differ.size, "the perturbation must eventually matter"
        # the first mic frame that sees the change feeds transmit frame + D
        assert differ[0] >= first_frame + D


def test_tracker_phases():
    cfg = short("estimated_comp", 32.0, init_duration=4.0)
    t = SroTracker(cfg)
    c = cfg.stft
    assert t.phase(0) == 1
    edge = (4 * FS + c.pad) // c.hop_size
    assert t.phase(edge) is None
    assert t.phase(edge + 4) == 2
    assert t.phase((8 * FS + c.pad) // c.hop_size + 4) == 0


def test_loop_delay_for_default_layout():
    assert loop_delay(default_config(duration=120.0).with_sro(10.0, -100.0)) == 7


# ------------------------------------------------------------ failures

def test_unwritable_directory_fails_before_running(monkeypatch):
    called = []
    monkeypatch.setattr(pipeline, "run_condition", lambda *a: called.append(1))
    with pytest.raises(OSError):
        execute(short("reference"), "/proc/not-writable/run")
    assert not called


def test_partial_outputs_removed(tmp_path, monkeypatch):
    r = run_condition(short("reference"))

    def boom(path):
        raise OSError("disk full")

    monkeypatch.setattr(pipeline, "sha256_file", boom)
    out = tmp_path / "run"
    with pytest.raises(OSError):
        emit_outputs(r, str(out))
    assert not out.exists()
    existing = tmp_path / "kept"
    existing.mkdir()
    (existing / "other.txt").write_text("x")
    with pytest.raises(OSError):
        emit_outputs(r, str(existing))
    assert os.listdir(existing) == ["other.txt"]


def test_failed_run_removes_new_directory(tmp_path, monkeypatch):
    def fail(*a):
        raise ArithmeticError("diverged")

    monkeypatch.setattr(pipeline, "run_condition", fail)
    with pytest.raises(ArithmeticError):
        execute(short("reference"), str(tmp_path / "new"))
    assert not (tmp_path / "new").exists()
