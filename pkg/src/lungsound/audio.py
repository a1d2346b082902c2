"""Audio clip container and PCM WAV reading."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.io import wavfile


class AudioError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClipSource:
    """Where a clip came from: recording, patient, and (for Task 1) which cycle."""

    recording_id: str = ""
    patient_id: str = ""
    cycle_index: Optional[int] = None
    label: Optional[int] = None


@dataclass
class AudioClip:
    """Mono sample buffer with its rate and provenance."""

    samples: np.ndarray
    sample_rate: int
    source: ClipSource = field(default_factory=ClipSource)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError("AudioClip expects a 1-D mono buffer")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)

    def with_samples(self, samples: np.ndarray, **source_updates) -> "AudioClip":
        src = replace(self.source, **source_updates) if source_updates else self.source
        return AudioClip(samples, self.sample_rate, src)


def wav_info(path) -> tuple[int, int]:
    """Read (sample_rate, n_frames) from a WAV header without decoding audio.

    Walks the RIFF chunk list; handles PCM, float, and extensible fmt tags.
    """
    path = Path(path)
    with open(path, "rb") as f:
        riff = f.read(12)
        if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
            raise AudioError(f"not a RIFF/WAVE file: {path}")
        sample_rate = None
        block_align = None
        data_size = None
        while True:
            head = f.read(8)
            if len(head) < 8:
                break
            tag, size = head[:4], struct.unpack("<I", head[4:])[0]
            if tag == b"fmt ":
                fmt = f.read(size)
                if len(fmt) < 16:
                    raise AudioError(f"truncated fmt chunk: {path}")
                _, _, sample_rate, _, block_align, _ = struct.unpack("<HHIIHH", fmt[:16])
            elif tag == b"data":
                data_size = size
                f.seek(size + (size & 1), 1)
            else:
                f.seek(size + (size & 1), 1)
        if sample_rate is None or block_align in (None, 0) or data_size is None:
            raise AudioError(f"missing fmt or data chunk: {path}")
        return sample_rate, data_size // block_align


def read_wav(path, source: Optional[ClipSource] = None) -> AudioClip:
    """Decode a PCM WAV file to a mono float clip in [-1, 1).

    Integer PCM is scaled by its full-scale value; stereo is averaged to mono.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise AudioError(f"cannot read {path}: {exc}") from exc
    if data.ndim == 2:
        data = data.mean(axis=1)
    data = np.asarray(data)
    if data.dtype.kind == "i":
        scale = float(2 ** (8 * data.dtype.itemsize - 1))
        data = data.astype(np.float64) / scale
    elif data.dtype.kind == "u":  # 8-bit WAV is unsigned, midpoint 128
        data = (data.astype(np.float64) - 128.0) / 128.0
    else:
        data = data.astype(np.float64)
    if source is None:
        source = ClipSource(recording_id=path.stem)
    return AudioClip(data, int(rate), source)


def write_wav(path, clip: AudioClip) -> None:
    """Write a clip as 16-bit PCM (test fixtures and debugging)."""
    scaled = np.clip(clip.samples, -1.0, 1.0 - 1.0 / 32768) * 32768
    wavfile.write(path, clip.sample_rate, scaled.astype(np.int16))
