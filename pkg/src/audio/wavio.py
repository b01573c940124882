import logging
import os
import struct
from pathlib import Path

import numpy as np

from ..core.errors import WavFormatError
from .models import Waveform

logger = logging.getLogger(__name__)

# RIFF / PCM16 / mono only. Read errors name the byte offset where parsing stopped.
PCM_SCALE = 32768.0
WAVE_FORMAT_PCM = 1


def wav_write(path, wave: Waveform):
    """Writes 16-bit PCM mono; samples are clipped to [-1, 1] first."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    clipped = np.clip(wave.samples, -1.0, 1.0)
    pcm = np.clip(np.round(clipped * PCM_SCALE), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()

    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    fmt = b"fmt " + struct.pack("<IHHIIHH", 16, WAVE_FORMAT_PCM, 1, int(wave.sample_rate),
                                int(wave.sample_rate) * 2, 2, 16)
    data = b"data" + struct.pack("<I", len(payload)) + payload

    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(header + fmt + data)
    os.replace(tmp, path)


def wav_read(path) -> Waveform:
    with open(path, "rb") as f:
        blob = f.read()
    return wav_decode(blob, str(path))


def wav_decode(blob: bytes, path: str = "<bytes>") -> Waveform:
    if len(blob) < 12:
        raise WavFormatError("File too short for RIFF header", offset=len(blob), path=path)
    if blob[0:4] != b"RIFF":
        raise WavFormatError(f"Missing 'RIFF' magic, found {blob[0:4]!r}", offset=0, path=path)
    if blob[8:12] != b"WAVE":
        raise WavFormatError(f"Missing 'WAVE' form type, found {blob[8:12]!r}", offset=8, path=path)

    fmt = None
    pos = 12
    while True:
        if pos + 8 > len(blob):
            missing = "'fmt '" if fmt is None else "'data'"
            raise WavFormatError(f"Missing {missing} chunk (file truncated)", offset=pos, path=path)
        chunk_id = blob[pos:pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = pos + 8

        if chunk_id == b"fmt ":
            if size < 16 or body + 16 > len(blob):
                raise WavFormatError("Truncated 'fmt ' chunk", offset=body, path=path)
            audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", blob, body)
            if audio_format != WAVE_FORMAT_PCM:
                raise WavFormatError(f"Unsupported encoding (format tag {audio_format}); only PCM is read",
                                     offset=body, path=path)
            if channels != 1:
                kind = "stereo" if channels == 2 else f"{channels}-channel"
                raise WavFormatError(f"Unsupported format: {kind} audio, only mono is read",
                                     offset=body + 2, path=path)
            if bits != 16:
                raise WavFormatError(f"Unsupported sample width {bits} bits; only 16-bit PCM is read",
                                     offset=body + 14, path=path)
            fmt = rate

        elif chunk_id == b"data":
            if fmt is None:
                raise WavFormatError("Missing 'fmt ' chunk before 'data'", offset=pos, path=path)
            if body + size > len(blob):
                raise WavFormatError(f"Truncated 'data' chunk: declared {size} bytes, "
                                     f"{len(blob) - body} present", offset=len(blob), path=path)
            if size % 2:
                raise WavFormatError("Odd byte count in 16-bit 'data' chunk", offset=body, path=path)
            pcm = np.frombuffer(blob, dtype="<i2", count=size // 2, offset=body)
            return Waveform(pcm.astype(np.float64) / PCM_SCALE, fmt)

        pos = body + size + (size % 2)
