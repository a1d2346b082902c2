"""Shared fixtures: a synthetic miniature corpus in ICBHI layout."""

import numpy as np
import pytest

from lungsound.audio import AudioClip, write_wav
from lungsound.icbhi import CycleAnnotation, format_annotation


def _tone_clip(rate: int, seconds: float, freqs, noise: float, seed: int) -> AudioClip:
    rng = np.random.default_rng(seed)
    t = np.arange(int(rate * seconds)) / rate
    x = noise * rng.standard_normal(t.size)
    for f, amp in freqs:
        x = x + amp * np.sin(2 * np.pi * f * t)
    peak = np.abs(x).max()
    return AudioClip(0.8 * x / max(peak, 1e-9), rate)


# recording id -> (native rate, duration s, tone spec, cycles)
# cycle tuple: (onset, offset, has_crackle, has_wheeze)
_RECORDINGS = {
    "101_1b1_Al_sc_Meditron": (
        16000,
        6.0,
        [(440.0, 0.4)],
        [(0.0, 2.0, 0, 0), (2.0, 4.4, 1, 0), (4.4, 6.0, 0, 1)],
    ),
    "101_1b2_Pr_sc_Meditron": (
        8000,
        5.0,
        [(300.0, 0.3), (900.0, 0.2)],
        [(0.1, 2.6, 1, 1), (2.6, 5.0, 0, 0)],
    ),
    "102_1b1_Ar_sc_Litt3200": (
        44100,
        4.0,
        [(650.0, 0.5)],
        [(0.0, 1.3, 0, 0), (1.3, 2.5, 0, 0), (2.5, 4.0, 0, 0)],
    ),
}

_DIAGNOSES = {"101": "COPD", "102": "Healthy"}

_OFFICIAL = {
    "101_1b1_Al_sc_Meditron": "train",
    "101_1b2_Pr_sc_Meditron": "train",
    "102_1b1_Ar_sc_Litt3200": "test",
}


def build_corpus(root) -> dict:
    """Write the miniature corpus under ``root`` and describe it."""
    audio_dir = root / "audio_and_txt_files"
    audio_dir.mkdir(parents=True, exist_ok=True)
    for seed, (rec, (rate, seconds, freqs, cycles)) in enumerate(_RECORDINGS.items()):
        clip = _tone_clip(rate, seconds, freqs, noise=0.05, seed=seed)
        write_wav(audio_dir / f"{rec}.wav", clip)
        anns = [CycleAnnotation(a, b, bool(c), bool(w)) for a, b, c, w in cycles]
        (audio_dir / f"{rec}.txt").write_text(format_annotation(anns))
    (root / "patient_diagnosis.csv").write_text(
        "".join(f"{pid},{dx}\n" for pid, dx in _DIAGNOSES.items())
    )
    split_file = root / "ICBHI_challenge_train_test.txt"
    split_file.write_text("".join(f"{rec}\t{tag}\n" for rec, tag in _OFFICIAL.items()))
    return {
        "root": root,
        "audio_dir": audio_dir,
        "recordings": dict(_RECORDINGS),
        "diagnoses": dict(_DIAGNOSES),
        "official": dict(_OFFICIAL),
        "split_file": split_file,
        "n_recordings": len(_RECORDINGS),
        "n_cycles": sum(len(v[3]) for v in _RECORDINGS.values()),
        "n_patients": len(_DIAGNOSES),
    }


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    return build_corpus(tmp_path_factory.mktemp("corpus"))
