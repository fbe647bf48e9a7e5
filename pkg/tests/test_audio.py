import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from helpers import tone
from srb.audio import (
    AudioBuffer,
    ImpulseResponse,
    NoiseClip,
    RoomMeta,
    add_noise_at_snr,
    convolve,
    dominant_frequency,
    measure_snr,
    noise_component_of,
    read_wav,
    resample,
    time_stretch,
    wav_payload,
    write_wav,
)
from srb.errors import AudioFormatError, SnrUndefinedError


def test_buffer_copies_and_freezes_samples():
    raw = np.zeros(8)
    buf = AudioBuffer(raw, 16000)
    raw[0] = 1.0
    assert buf.samples[0] == 0.0
    with pytest.raises(ValueError):
        buf.samples[0] = 1.0


def test_buffer_rejects_bad_input():
    with pytest.raises(ValueError):
        AudioBuffer(np.zeros((2, 4)), 16000)
    with pytest.raises(ValueError):
        AudioBuffer(np.array([0.0, np.nan]), 16000)
    with pytest.raises(ValueError):
        AudioBuffer(np.zeros(4), 0)
    with pytest.raises(ValueError):
        AudioBuffer(np.zeros(4), -8000)


def test_buffer_duration_and_len():
    buf = AudioBuffer(np.zeros(8000), 16000)
    assert len(buf) == 8000
    assert buf.duration_seconds == pytest.approx(0.5)


def test_noise_clip_and_ir_are_buffers():
    clip = NoiseClip(np.zeros(4), 16000, source_tag="hum")
    assert clip.source_tag == "hum"
    ir = ImpulseResponse(np.array([1.0]), 16000, rt60_seconds=0.3)
    assert ir.rt60_seconds == 0.3
    assert isinstance(clip, AudioBuffer) and isinstance(ir, AudioBuffer)


def test_room_meta_validation():
    RoomMeta(100.0, 120.0, 0.3)
    with pytest.raises(ValueError):
        RoomMeta(-1.0, 120.0, 0.3)
    with pytest.raises(ValueError):
        RoomMeta(100.0, 120.0, 0.0)
    with pytest.raises(ValueError):
        RoomMeta(100.0, 120.0, 1.5)


def test_wav_round_trip_pcm16(tmp_path):
    buf = tone(440.0, duration_s=0.1)
    path = tmp_path / "t.wav"
    write_wav(path, buf)
    back = read_wav(path)
    assert back.sample_rate == 16000
    np.testing.assert_allclose(back.samples, buf.samples, atol=1.0 / 32767)


def test_wav_round_trip_float32(tmp_path):
    buf = AudioBuffer(np.array([0.0, 1.5, -2.0, 0.25]), 8000)
    path = tmp_path / "t.wav"
    write_wav(path, buf, float32=True)
    back = read_wav(path)
    np.testing.assert_allclose(back.samples, buf.samples, rtol=1e-7)


def test_pcm16_export_saturates():
    buf = AudioBuffer(np.array([2.0, -2.0, 0.0]), 16000)
    payload = wav_payload(buf)
    assert payload.dtype == np.int16
    assert payload[0] == 32767 and payload[1] == -32767


def test_read_wav_downmixes_stereo(tmp_path):
    path = tmp_path / "st.wav"
    left = np.full(100, 0.5, dtype=np.float32)
    right = np.full(100, -0.1, dtype=np.float32)
    wavfile.write(path, 16000, np.stack([left, right], axis=1))
    buf = read_wav(path)
    np.testing.assert_allclose(buf.samples, 0.2, atol=1e-7)


def test_read_wav_rejects_other_formats(tmp_path):
    path = tmp_path / "i32.wav"
    wavfile.write(path, 16000, np.zeros(16, dtype=np.int32))
    with pytest.raises(AudioFormatError):
        read_wav(path)
    garbage = tmp_path / "not.wav"
    garbage.write_bytes(b"not a wav at all")
    with pytest.raises(AudioFormatError):
        read_wav(garbage)


def test_read_wav_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_wav(tmp_path / "absent.wav")


def test_measure_snr_known_ratios():
    rng = np.random.default_rng(0)
    sig = AudioBuffer(rng.standard_normal(4000), 16000)
    assert measure_snr(sig, sig) == pytest.approx(0.0, abs=1e-12)
    tenth = AudioBuffer(sig.samples * 0.1, 16000)
    assert measure_snr(sig, tenth) == pytest.approx(20.0, abs=1e-9)
    assert measure_snr(tenth, sig) == pytest.approx(-20.0, abs=1e-9)


def test_measure_snr_degenerate_inputs():
    sig = tone(440.0, duration_s=0.1)
    silence = AudioBuffer(np.zeros(len(sig)), 16000)
    with pytest.raises(SnrUndefinedError):
        measure_snr(sig, silence)
    assert measure_snr(silence, sig) == -np.inf
    with pytest.raises(ValueError):
        measure_snr(sig, AudioBuffer(np.zeros(10), 16000))


def test_add_noise_hits_target_exactly():
    rng = np.random.default_rng(1)
    sig = tone(300.0, duration_s=0.25)
    noise = AudioBuffer(rng.standard_normal(len(sig)), 16000)
    for target in (-10.0, 0.0, 12.5, 40.0):
        mixed = add_noise_at_snr(sig, noise, target)
        achieved = measure_snr(sig, noise_component_of(mixed, sig))
        assert achieved == pytest.approx(target, abs=1e-9)


def test_add_noise_rejects_degenerate_inputs():
    sig = tone(300.0, duration_s=0.1)
    silence = AudioBuffer(np.zeros(len(sig)), 16000)
    with pytest.raises(ValueError):
        add_noise_at_snr(sig, silence, 10.0)
    with pytest.raises(ValueError):
        add_noise_at_snr(silence, sig, 10.0)
    with pytest.raises(ValueError):
        add_noise_at_snr(sig, AudioBuffer(np.zeros(10) + 1.0, 8000), 10.0)


def test_noise_component_recovers_additive_part():
    sig = tone(250.0, duration_s=0.1)
    noise = tone(3000.0, duration_s=0.1, amplitude=0.05)
    mixture = AudioBuffer(sig.samples + noise.samples, 16000)
    recovered = noise_component_of(mixture, sig)
    assert isinstance(recovered, NoiseClip)
    np.testing.assert_allclose(recovered.samples, noise.samples, atol=1e-12)


def test_convolve_identity_impulse():
    sig = tone(500.0, duration_s=0.05)
    ir = ImpulseResponse(np.array([1.0]), 16000)
    out = convolve(sig, ir)
    assert len(out) == len(sig)
    np.testing.assert_allclose(out.samples, sig.samples, atol=1e-12)


def test_convolve_renormalizes_peak():
    sig = tone(500.0, duration_s=0.05)
    ir = ImpulseResponse(np.array([4.0]), 16000)
    out = convolve(sig, ir)
    assert np.max(np.abs(out.samples)) == pytest.approx(np.max(np.abs(sig.samples)))


def test_convolve_delayed_impulse_shifts():
    x = np.zeros(64)
    x[0] = 1.0
    sig = AudioBuffer(x, 16000)
    h = np.zeros(8)
    h[5] = 1.0
    out = convolve(sig, ImpulseResponse(h, 16000))
    assert out.samples[5] == pytest.approx(1.0)
    assert np.sum(np.abs(out.samples)) == pytest.approx(1.0)


def test_convolve_rejects_mismatch_and_empty():
    sig = tone(500.0, duration_s=0.05)
    with pytest.raises(ValueError):
        convolve(sig, ImpulseResponse(np.array([1.0]), 8000))
    with pytest.raises(ValueError):
        convolve(sig, ImpulseResponse(np.zeros(0), 16000))


def test_resample_identity_and_halving():
    sig = tone(440.0, duration_s=0.5)
    same = resample(sig, 16000)
    np.testing.assert_allclose(same.samples, sig.samples)
    half = resample(sig, 8000)
    assert half.sample_rate == 8000
    assert len(half) == len(sig) // 2
    assert dominant_frequency(half) == pytest.approx(440.0, abs=2.0)


def test_resample_round_trip_preserves_tone():
    sig = tone(1000.0, duration_s=0.5)
    back = resample(resample(sig, 8000), 16000)
    assert len(back) == len(sig)
    assert dominant_frequency(back) == pytest.approx(1000.0, abs=2.0)


def test_time_stretch_identity():
    sig = tone(440.0, duration_s=0.3)
    out = time_stretch(sig, 1.0)
    assert len(out) == len(sig)
    np.testing.assert_allclose(out.samples, sig.samples)


@pytest.mark.parametrize("factor", [0.5, 0.75, 1.5, 2.0])
def test_time_stretch_scales_duration_not_pitch(factor):
    sig = tone(440.0, duration_s=0.5)
    out = time_stretch(sig, factor)
    assert out.sample_rate == sig.sample_rate
    assert len(out) == int(round(len(sig) / factor))
    assert dominant_frequency(out) == pytest.approx(440.0, rel=0.01)


def test_time_stretch_rejects_extreme_factors():
    sig = tone(440.0, duration_s=0.1)
    for factor in (0.0, -1.0, 0.2, 5.0):
        with pytest.raises(ValueError):
            time_stretch(sig, factor)


def test_dominant_frequency_pure_tone():
    assert dominant_frequency(tone(440.0, duration_s=1.0)) == pytest.approx(440.0, abs=0.5)
    assert dominant_frequency(tone(123.0, duration_s=1.0)) == pytest.approx(123.0, abs=0.5)


@settings(max_examples=30, deadline=None)
@given(
    target=st.floats(min_value=-20.0, max_value=50.0),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_add_noise_round_trip_property(target, seed):
    rng = np.random.default_rng(seed)
    sig = AudioBuffer(rng.standard_normal(512) + 0.1, 16000)
    noise = AudioBuffer(rng.standard_normal(512) + 0.1, 16000)
    mixed = add_noise_at_snr(sig, noise, target)
    achieved = measure_snr(sig, noise_component_of(mixed, sig))
    assert achieved == pytest.approx(target, abs=1e-8)
