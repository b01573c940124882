import struct

import numpy as np
import pytest

from src.audio.models import Waveform
from src.audio.wavio import wav_decode, wav_read, wav_write
from src.core.errors import SignalError, WavFormatError


def _header(channels=1, fmt_tag=1, bits=16, rate=8000, data=b"\x00\x00" * 4):
    fmt = b"fmt " + struct.pack("<IHHIIHH", 16, fmt_tag, channels, rate, rate * 2 * channels, 2 * channels, bits)
    body = b"WAVE" + fmt + b"data" + struct.pack("<I", len(data)) + data
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_pcm16_values_survive_a_file(tmp_path):
    samples = np.array([0.0, 0.5, -0.5, 32767 / 32768, -1.0])
    wav_write(tmp_path / "x.wav", Waveform(samples, 8000))
    back = wav_read(tmp_path / "x.wav")
    assert back.sample_rate == 8000
    np.testing.assert_array_equal(back.samples, samples)


def test_out_of_range_samples_are_clipped(tmp_path):
    wav_write(tmp_path / "x.wav", Waveform(np.array([2.0, -3.0]), 4000))
    back = wav_read(tmp_path / "x.wav")
    np.testing.assert_allclose(back.samples, [32767 / 32768, -1.0])


def test_unknown_chunks_are_skipped():
    blob = _header()
    extra = b"LIST" + struct.pack("<I", 3) + b"abc" + b"\x00"
    blob = blob[:12] + extra + blob[12:]
    assert len(wav_decode(blob)) == 4


@pytest.mark.parametrize("blob, message", [
    (b"RIFF", "too short"),
    (b"RIFX" + b"\x00" * 8, "RIFF"),
    (b"RIFF\x00\x00\x00\x00WAVX", "WAVE"),
    (_header(channels=2), "stereo"),
    (_header(fmt_tag=3), "only PCM"),
    (_header(bits=24), "16-bit"),
    (_header()[:-3], "Truncated 'data'"),
    (_header()[:36], "Missing 'data'"),
])
def test_malformed_files_name_the_problem(blob, message):
    with pytest.raises(WavFormatError, match=message) as exc:
        wav_decode(blob, "bad.wav")
    assert exc.value.details["path"] == "bad.wav"
    assert exc.value.offset >= 0


def test_stereo_error_points_at_channel_field():
    with pytest.raises(WavFormatError) as exc:
        wav_decode(_header(channels=2))
    assert exc.value.offset == 22


def test_waveform_rejects_empty_and_nonfinite():
    with pytest.raises(SignalError):
        Waveform(np.array([]), 8000)
    with pytest.raises(SignalError):
        Waveform(np.array([0.0, np.nan]), 8000)
