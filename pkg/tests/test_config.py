"""Configuration schema, validation and the bundled scene."""
import numpy as np
import pytest

from srocomp.config import (SCHEMA, RunConfig, bundled_config_path, canonical_text,
                            default_config, load_config, loads_config, warmup_seconds)
from srocomp.errors import ConfigError, DomainError, GeometryError, ValidityError


def bundled_text():
    with open(bundled_config_path(), encoding="utf-8") as f:
        return f.read()


def test_bundled_config_is_the_default_scene():
    cfg = load_config(bundled_config_path())
    s = cfg.scene
    assert s.room_dims == (7.0, 7.0, 6.0)
    assert s.rt60 == 0.3
    assert s.source_positions == ((2.2, 3.4, 1.8), (5.2, 3.5, 2.1))
    assert s.array_center == (3.75, 3.35, 2.0)
    assert s.array_radius == 0.10 and s.mic_count == 4
    assert s.sample_rate == 16000.0
    assert cfg.stft.window_size == 8192 and cfg.stft.hop_size == 2048
    assert cfg.dwacd.alpha_s == 0.95
    assert cfg.bf_alpha == 1e-6
    assert cfg.sro_grid == ((10.0, -10.0), (10.0, -50.0), (10.0, -100.0))
    assert cfg.duration == 480.0


def test_every_schema_key_appears_in_bundled_file():
    text = bundled_text()
    for section, keys in SCHEMA.items():
        assert f"[{section}]" in text
        for key in keys:
            assert f"\n{key} =" in text, key


def test_defaults_fill_missing_keys():
    cfg = loads_config("[meta]\nversion = 1\n")
    assert cfg.scene.rt60 == 0.3 and cfg.condition == "estimated_comp"


def test_empty_file_is_a_schema_error():
    with pytest.raises(ConfigError, match="meta"):
        loads_config("")


def test_missing_version():
    with pytest.raises(ConfigError, match="meta.version"):
        loads_config("[scene]\nrt60 = 0.3\n")


def test_unsupported_version():
    with pytest.raises(ConfigError, match="version"):
        loads_config("[meta]\nversion = 2\n")


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="scene.rt6"):
        loads_config("[meta]\nversion = 1\n[scene]\nrt6 = 0.3\n")


def test_unknown_section_is_named():
    with pytest.raises(ConfigError, match=r"\[extras\]"):
        loads_config("[meta]\nversion = 1\n[extras]\na = 1\n")


def test_bad_value_is_named():
    with pytest.raises(ConfigError, match="scene.room_dims"):
        loads_config("[meta]\nversion = 1\n[scene]\nroom_dims = 7, 7\n")
    with pytest.raises(ConfigError, match="run.write_mics"):
        loads_config("[meta]\nversion = 1\n[run]\nwrite_mics = maybe\n")


def test_malformed_text():
    with pytest.raises(ConfigError):
        loads_config("no section header\n")


def test_source_outside_room_is_a_domain_error():
    with pytest.raises(GeometryError):
        loads_config("[meta]\nversion = 1\n[scene]\nsource1 = 8, 3, 2\n")


def test_validity_bound_over_the_run():
    # 100 ppm: the phase ramp stays valid for 10000 frames (~1280 s)
    text = "[meta]\nversion = 1\n[sro]\neps2 = -100\n[run]\nduration = 1400\n"
    with pytest.raises(ValidityError, match="validity"):
        loads_config(text)
    loads_config(text.replace("1400", "600"))


def test_short_estimated_run_rejected():
    with pytest.raises(ConfigError, match="warm-up"):
        loads_config("[meta]\nversion = 1\n[run]\nduration = 20\n")
    loads_config("[meta]\nversion = 1\n[run]\nduration = 20\ncondition = reference\n")


def test_enumerations_checked():
    for key, value in (("condition", "other"), ("loop", "half"),
                       ("compensation_mode", "both")):
        with pytest.raises(ConfigError):
            loads_config(f"[meta]\nversion = 1\n[run]\n{key} = {value}\n")
    with pytest.raises(DomainError):
        loads_config("[meta]\nversion = 1\n[scene]\near_mode = hrtf\n")


def test_ears_must_come_in_pairs():
    with pytest.raises(ConfigError, match="together"):
        loads_config("[meta]\nversion = 1\n[scene]\near_left = 3, 1, 1.5\n")
    cfg = loads_config("[meta]\nversion = 1\n[scene]\near_left = 3, 1, 1.5\n"
                       "ear_right = 3.2, 1, 1.5\n")
    np.testing.assert_allclose(cfg.scene.ears(), [[3, 1, 1.5], [3.2, 1, 1.5]])


def test_metrics_band_limits():
    with pytest.raises(ConfigError):
        loads_config("[meta]\nversion = 1\n[metrics]\nhigh_hz = 9000\n")


def test_segment_length_power_of_two():
    with pytest.raises(ConfigError):
        loads_config("[meta]\nversion = 1\n[resampler]\nsegment_len = 6000\n")


def test_inline_comments_allowed():
    cfg = loads_config("[meta]\nversion = 1  # schema\n[scene]\nrt60 = 0.4 # longer\n")
    assert cfg.scene.rt60 == 0.4


def test_missing_file_raises_os_error(tmp_path):
    with pytest.raises(OSError):
        load_config(str(tmp_path / "absent.cfg"))


def test_digest_tracks_effective_settings():
    a = default_config()
    b = loads_config(bundled_text() + "\n")
    assert a.digest() == b.digest()
    assert a.with_sro(10.0, -50.0).digest() != a.digest()
    assert "version=1" in canonical_text(a)


def test_overrides_revalidate():
    cfg = default_config()
    assert cfg.with_overrides(condition="reference").condition == "reference"
    with pytest.raises(ConfigError):
        cfg.with_overrides(duration=-1.0)


def test_stream_length_includes_solo_phases():
    cfg = default_config(duration=60.0)
    assert cfg.stream_samples() == 80 * 16000
    assert cfg.with_overrides(condition="uncompensated").stream_samples() == 60 * 16000


def test_warmup_seconds():
    assert warmup_seconds(RunConfig()) == pytest.approx(13 * 2048 / 16000)
