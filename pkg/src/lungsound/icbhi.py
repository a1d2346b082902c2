"""ICBHI corpus ingestion: annotations, labels, diagnosis groups, and splits.

The corpus layout is one ``<recording_id>.wav`` plus one ``<recording_id>.txt``
annotation file per recording, and a single two-column diagnosis table mapping
patient ids to diagnosis strings.  Recording ids start with the patient id
(``101_1b1_Al_sc_Meditron`` -> patient ``101``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .audio import AudioClip, AudioError, ClipSource, read_wav, wav_info

# Offsets in the annotation files occasionally overrun the audio length by a
# few milliseconds; anything within this slack is clamped instead of rejected.
OFFSET_SLACK_S = 0.050

MIN_CYCLE_SECONDS = 5.0


class CycleLabel(IntEnum):
    """Four-way respiratory cycle label, in confusion-matrix column order."""

    CRACKLE = 0
    WHEEZE = 1
    BOTH = 2
    NORMAL = 3


class DiseaseGroup(IntEnum):
    """Three-way diagnosis group, in confusion-matrix column order."""

    CHRONIC = 0
    NON_CHRONIC = 1
    HEALTHY = 2


CHRONIC_DIAGNOSES = {"copd", "bronchiectasis", "asthma"}
NON_CHRONIC_DIAGNOSES = {"urti", "lrti", "pneumonia", "bronchiolitis"}


class AnnotationError(ValueError):
    pass


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class CycleAnnotation:
    onset: float
    offset: float
    has_crackle: bool
    has_wheeze: bool

    @property
    def label(self) -> CycleLabel:
        return label_cycle(self.has_crackle, self.has_wheeze)


@dataclass(frozen=True)
class RecordingMeta:
    recording_id: str
    patient_id: str
    file_path: Path
    sample_rate_native: int
    duration: float


@dataclass
class DatasetIndex:
    """Immutable view of the scanned corpus: recordings, cycles, diagnoses."""

    recordings: dict[str, RecordingMeta] = field(default_factory=dict)
    cycles: dict[str, list[CycleAnnotation]] = field(default_factory=dict)
    diagnoses: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def n_recordings(self) -> int:
        return len(self.recordings)

    @property
    def n_cycles(self) -> int:
        return sum(len(c) for c in self.cycles.values())

    @property
    def patients(self) -> set[str]:
        return {m.patient_id for m in self.recordings.values()}

    def cycle_label_counts(self) -> dict[CycleLabel, int]:
        counts = {lab: 0 for lab in CycleLabel}
        for anns in self.cycles.values():
            for ann in anns:
                counts[ann.label] += 1
        return counts

    def recording_group(self, recording_id: str) -> DiseaseGroup:
        patient = self.recordings[recording_id].patient_id
        if patient not in self.diagnoses:
            raise DatasetError(f"no diagnosis for patient {patient}")
        return group_diagnosis(self.diagnoses[patient])


def label_cycle(has_crackle: bool, has_wheeze: bool) -> CycleLabel:
    if has_crackle and has_wheeze:
        return CycleLabel.BOTH
    if has_crackle:
        return CycleLabel.CRACKLE
    if has_wheeze:
        return CycleLabel.WHEEZE
    return CycleLabel.NORMAL


def label_flags(label: CycleLabel) -> tuple[bool, bool]:
    return (
        label in (CycleLabel.CRACKLE, CycleLabel.BOTH),
        label in (CycleLabel.WHEEZE, CycleLabel.BOTH),
    )


def group_diagnosis(diagnosis: str) -> DiseaseGroup:
    """Map one of the eight ICBHI diagnosis strings to its group."""
    key = diagnosis.strip().lower()
    if key in CHRONIC_DIAGNOSES:
        return DiseaseGroup.CHRONIC
    if key in NON_CHRONIC_DIAGNOSES:
        return DiseaseGroup.NON_CHRONIC
    if key == "healthy":
        return DiseaseGroup.HEALTHY
    raise DatasetError(f"unknown diagnosis string: {diagnosis!r}")


def parse_annotation(text: str) -> list[CycleAnnotation]:
    """Parse a cycle annotation file: onset offset crackle{0,1} wheeze{0,1} per line."""
    cycles = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        cols = line.split()
        if len(cols) != 4:
            raise AnnotationError(f"expected 4 columns, got {len(cols)}, line {lineno}")
        try:
            onset, offset = float(cols[0]), float(cols[1])
        except ValueError:
            raise AnnotationError(f"non-numeric onset/offset, line {lineno}") from None
        if cols[2] not in ("0", "1") or cols[3] not in ("0", "1"):
            raise AnnotationError(f"crackle/wheeze flag not in {{0,1}}, line {lineno}")
        if onset < 0:
            raise AnnotationError(f"negative onset, line {lineno}")
        if offset <= onset:
            raise AnnotationError(f"offset before onset, line {lineno}")
        cycles.append(CycleAnnotation(onset, offset, cols[2] == "1", cols[3] == "1"))
    return cycles


def format_annotation(cycles: Iterable[CycleAnnotation]) -> str:
    lines = [
        f"{c.onset:.6f}\t{c.offset:.6f}\t{int(c.has_crackle)}\t{int(c.has_wheeze)}"
        for c in cycles
    ]
    return "\n".join(lines) + ("\n" if lines else "")


DIAGNOSIS_FILENAMES = (
    "patient_diagnosis.csv",
    "patient_diagnosis.txt",
    "ICBHI_Challenge_diagnosis.txt",
)


def parse_diagnosis_table(text: str) -> dict[str, str]:
    """Parse the two-column (patient_id, diagnosis) table; comma or whitespace delimited."""
    table = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        cols = line.split(",") if "," in line else line.split()
        cols = [c.strip() for c in cols if c.strip()]
        if len(cols) != 2:
            raise DatasetError(f"diagnosis table: expected 2 columns, line {lineno}")
        table[cols[0]] = cols[1]
    return table


def scan_dataset(root, diagnosis_file: Optional[Path] = None) -> DatasetIndex:
    """Index a corpus directory.

    Recordings missing an annotation file, with an unparsable annotation, or
    with an unreadable WAV header are recorded in ``index.warnings`` rather
    than silently dropped (the recording itself is dropped from the index only
    when its audio header cannot be read).
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root is not a readable directory: {root}")

    index = DatasetIndex()

    if diagnosis_file is None:
        for name in DIAGNOSIS_FILENAMES:
            if (root / name).is_file():
                diagnosis_file = root / name
                break
    if diagnosis_file is not None and Path(diagnosis_file).is_file():
        index.diagnoses = parse_diagnosis_table(Path(diagnosis_file).read_text())
    else:
        index.warnings.append("no diagnosis table found")

    for wav_path in sorted(root.rglob("*.wav")):
        recording_id = wav_path.stem
        patient_id = recording_id.split("_")[0]
        try:
            rate, frames = wav_info(wav_path)
            duration = frames / rate
        except (AudioError, OSError) as exc:
            index.warnings.append(f"{recording_id}: unreadable audio ({exc})")
            continue
        if recording_id in index.recordings:
            index.warnings.append(f"{recording_id}: duplicate recording id")
            continue
        index.recordings[recording_id] = RecordingMeta(
            recording_id, patient_id, wav_path, rate, duration
        )

        ann_path = wav_path.with_suffix(".txt")
        if not ann_path.is_file():
            index.warnings.append(f"{recording_id}: missing annotation file")
            index.cycles[recording_id] = []
            continue
        try:
            index.cycles[recording_id] = parse_annotation(ann_path.read_text())
        except AnnotationError as exc:
            index.warnings.append(f"{recording_id}: bad annotation ({exc})")
            index.cycles[recording_id] = []

        if patient_id not in index.diagnoses and index.diagnoses:
            index.warnings.append(f"{recording_id}: patient {patient_id} has no diagnosis")

    return index


def extract_cycle_audio(
    clip: AudioClip, ann: CycleAnnotation, cycle_index: Optional[int] = None
) -> AudioClip:
    """Cut one respiratory cycle out of a recording clip.

    The slice is [round(onset*sr), round(offset*sr)); offsets overrunning the
    clip by up to OFFSET_SLACK_S are clamped to the clip end.
    """
    sr = clip.sample_rate
    if ann.offset > clip.duration + OFFSET_SLACK_S + 1e-9:
        raise AudioError(
            f"cycle offset {ann.offset:.3f}s lies beyond clip end "
            f"{clip.duration:.3f}s by more than {OFFSET_SLACK_S * 1000:.0f}ms"
        )
    start = int(round(ann.onset * sr))
    end = min(int(round(ann.offset * sr)), len(clip))
    if start >= end:
        raise AudioError(f"empty cycle slice [{start}, {end}) after clamping")
    return clip.with_samples(
        clip.samples[start:end], cycle_index=cycle_index, label=int(ann.label)
    )


def tile_to_min_duration(clip: AudioClip, min_seconds: float = MIN_CYCLE_SECONDS) -> AudioClip:
    """Repeat a short clip end-to-end until it lasts at least ``min_seconds``.

    The whole clip is tiled, never truncated, so the result may exceed the
    minimum by up to one original duration.
    """
    if len(clip) == 0:
        raise AudioError("cannot tile an empty clip")
    min_samples = min_seconds * clip.sample_rate
    if len(clip) >= min_samples:
        return clip
    reps = math.ceil(min_samples / len(clip))
    return clip.with_samples(np.tile(clip.samples, reps))


@dataclass(frozen=True)
class SplitPlan:
    """Assignment of every recording id to exactly one fold or subset tag."""

    scheme: str
    assignment: dict[str, str]

    def subset(self, tag: str) -> list[str]:
        return sorted(r for r, t in self.assignment.items() if t == tag)

    def tags(self) -> list[str]:
        return sorted(set(self.assignment.values()))

    def train_test(self, test_tag: str) -> tuple[list[str], list[str]]:
        train = sorted(r for r, t in self.assignment.items() if t != test_tag)
        return train, self.subset(test_tag)


def _check_patient_disjoint(index: DatasetIndex, assignment: dict[str, str]) -> None:
    patients_by_tag: dict[str, set[str]] = {}
    for rec, tag in assignment.items():
        patients_by_tag.setdefault(tag, set()).add(index.recordings[rec].patient_id)
    tags = sorted(patients_by_tag)
    for i, a in enumerate(tags):
        for b in tags[i + 1 :]:
            shared = patients_by_tag[a] & patients_by_tag[b]
            if shared:
                raise DatasetError(
                    f"patients {sorted(shared)} appear in both {a!r} and {b!r}"
                )


def make_kfold_split(index: DatasetIndex, k: int, seed: int) -> SplitPlan:
    """Assign whole recordings to k folds, deterministically per seed.

    All cycles of a recording share its fold, which keeps near-duplicate
    patches from one recording out of each other's test folds.
    """
    ids = sorted(index.recordings)
    rng = np.random.default_rng(seed)
    perm = [ids[i] for i in rng.permutation(len(ids))]
    assignment = {rec: f"fold{i % k}" for i, rec in enumerate(perm)}
    return SplitPlan(scheme=f"kfold(k={k}, seed={seed})", assignment=assignment)


def make_ratio_split(
    index: DatasetIndex, train_frac: float, seed: int, patient_disjoint: bool = True
) -> SplitPlan:
    rng = np.random.default_rng(seed)
    ids = sorted(index.recordings)
    assignment: dict[str, str]
    if patient_disjoint:
        by_patient: dict[str, list[str]] = {}
        for rec in ids:
            by_patient.setdefault(index.recordings[rec].patient_id, []).append(rec)
        patients = sorted(by_patient)
        patients = [patients[i] for i in rng.permutation(len(patients))]
        target = train_frac * len(ids)
        assignment = {}
        taken = 0
        for pat in patients:
            tag = "train" if taken < target else "test"
            for rec in by_patient[pat]:
                assignment[rec] = tag
            if tag == "train":
                taken += len(by_patient[pat])
        _check_patient_disjoint(index, assignment)
    else:
        perm = [ids[i] for i in rng.permutation(len(ids))]
        n_train = int(round(train_frac * len(perm)))
        assignment = {rec: ("train" if i < n_train else "test") for i, rec in enumerate(perm)}
    plan = SplitPlan(
        scheme=f"ratio(train_frac={train_frac}, seed={seed}, patient_disjoint={patient_disjoint})",
        assignment=assignment,
    )
    return plan


def make_official_split(index: DatasetIndex, split_file) -> SplitPlan:
    """Build a train/test plan from the published challenge list.

    The list has lines ``recording_id {train|test}``; it must cover known
    recordings only and keep every patient within one subset.
    """
    assignment = {}
    for lineno, raw in enumerate(Path(split_file).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        cols = line.split()
        if len(cols) != 2 or cols[1] not in ("train", "test"):
            raise DatasetError(f"official split: bad line {lineno}: {line!r}")
        rec, tag = cols
        if rec not in index.recordings:
            raise DatasetError(f"official split references unknown recording {rec!r}")
        assignment[rec] = tag
    missing = sorted(set(index.recordings) - set(assignment))
    if missing:
        raise DatasetError(f"official split leaves recordings unassigned: {missing[:5]}...")
    _check_patient_disjoint(index, assignment)
    return SplitPlan(scheme="official_list", assignment=assignment)


INDEX_SCHEMA_VERSION = 1


def save_index(index: DatasetIndex, path, splits: Optional[dict[str, SplitPlan]] = None) -> None:
    """Write the index cache document (schema: docs in README)."""
    doc = {
        "schema_version": INDEX_SCHEMA_VERSION,
        "recordings": [
            {
                "recording_id": m.recording_id,
                "patient_id": m.patient_id,
                "file_path": str(m.file_path),
                "sample_rate_native": m.sample_rate_native,
                "duration": m.duration,
            }
            for m in index.recordings.values()
        ],
        "cycles": {
            rec: [
                {
                    "onset": c.onset,
                    "offset": c.offset,
                    "crackle": int(c.has_crackle),
                    "wheeze": int(c.has_wheeze),
                    "label": int(c.label),
                }
                for c in anns
            ]
            for rec, anns in index.cycles.items()
        },
        "diagnoses": index.diagnoses,
        "warnings": index.warnings,
        "splits": {
            name: {"scheme": plan.scheme, "assignment": plan.assignment}
            for name, plan in (splits or {}).items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_index(path) -> tuple[DatasetIndex, dict[str, SplitPlan]]:
    doc = json.loads(Path(path).read_text())
    version = doc.get("schema_version")
    if version != INDEX_SCHEMA_VERSION:
        raise DatasetError(f"index cache schema {version} unsupported")
    index = DatasetIndex()
    for rec in doc["recordings"]:
        meta = RecordingMeta(
            rec["recording_id"],
            rec["patient_id"],
            Path(rec["file_path"]),
            int(rec["sample_rate_native"]),
            float(rec["duration"]),
        )
        index.recordings[meta.recording_id] = meta
    for rec, anns in doc["cycles"].items():
        index.cycles[rec] = [
            CycleAnnotation(a["onset"], a["offset"], bool(a["crackle"]), bool(a["wheeze"]))
            for a in anns
        ]
    index.diagnoses = dict(doc["diagnoses"])
    index.warnings = list(doc["warnings"])
    splits = {
        name: SplitPlan(scheme=s["scheme"], assignment=dict(s["assignment"]))
        for name, s in doc.get("splits", {}).items()
    }
    return index, splits


def load_recording(index: DatasetIndex, recording_id: str) -> AudioClip:
    meta = index.recordings[recording_id]
    return read_wav(
        meta.file_path,
        ClipSource(recording_id=recording_id, patient_id=meta.patient_id),
    )
