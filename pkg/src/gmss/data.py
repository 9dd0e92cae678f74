"""Dataset container, partition loading and the synthetic EEG-like generator.

Container = JSON manifest + binary payload.  Payload layout (little-endian)::

    8 bytes  magic b"GMSSDS1\\0"
    u32      format version (1)
    u32      record count
    per record (2496 bytes):
        62*5 float64 features, row-major (channel, band)
        u32 label, u32 subject, u32 session, u32 trial

The manifest's ``index`` lists the byte offset of every record.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, FormatError
from .graph import ElectrodeGraph, load_montage
from .puzzles import BANDS, BlockPartition

MAGIC = b"GMSSDS1\0"
VERSION = 1
N_CHANNELS = 62
N_BANDS = 5
HEADER = 16
RECORD_BYTES = N_CHANNELS * N_BANDS * 8 + 16


@dataclass(frozen=True)
class SampleRecord:
    features: np.ndarray
    label: int
    subject: int
    session: int
    trial: int

    def __post_init__(self):
        if self.features.shape != (N_CHANNELS, N_BANDS):
            raise ContractError(f"features must be {N_CHANNELS}x{N_BANDS}, got {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ContractError("features contain non-finite values")

    def same_as(self, other: "SampleRecord") -> bool:
        return (self.features.tobytes() == other.features.tobytes()
                and (self.label, self.subject, self.session, self.trial)
                == (other.label, other.subject, other.session, other.trial))


@dataclass
class DatasetManifest:
    name: str
    n_classes: int
    class_names: list[str]
    subjects: int
    sessions: int
    trials: int
    index: list[int] = field(default_factory=list)
    payload: str = ""

    @property
    def n_records(self) -> int:
        return len(self.index)

    def check(self, records) -> None:
        if len(self.class_names) != self.n_classes:
            raise ContractError("class_names length differs from n_classes")
        for r in records:
            if not 0 <= r.label < self.n_classes:
                raise ContractError(f"label {r.label} outside 0..{self.n_classes - 1}")


@dataclass
class Arrays:
    """Column view of a record list."""

    X: np.ndarray
    y: np.ndarray
    subject: np.ndarray
    session: np.ndarray
    trial: np.ndarray

    def __len__(self):
        return len(self.y)

    def take(self, idx) -> "Arrays":
        idx = np.asarray(idx, dtype=np.intp)
        return Arrays(self.X[idx], self.y[idx], self.subject[idx], self.session[idx], self.trial[idx])


def as_arrays(records) -> Arrays:
    return Arrays(
        np.stack([r.features for r in records]) if records else np.zeros((0, N_CHANNELS, N_BANDS)),
        np.array([r.label for r in records], dtype=np.int64),
        np.array([r.subject for r in records], dtype=np.int64),
        np.array([r.session for r in records], dtype=np.int64),
        np.array([r.trial for r in records], dtype=np.int64),
    )


def dataset_paths(path) -> tuple[Path, Path]:
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    return base.with_name(base.name + ".json"), base.with_name(base.name + ".bin")


def encode_payload(records) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for r in records:
        parts.append(np.ascontiguousarray(r.features, dtype="<f8").tobytes())
        parts.append(struct.pack("<IIII", r.label, r.subject, r.session, r.trial))
    return b"".join(parts)


def write_dataset(records, manifest: DatasetManifest, path) -> DatasetManifest:
    """Write manifest + payload; returns the manifest with index/payload filled in."""
    manifest.check(records)
    json_path, bin_path = dataset_paths(path)
    manifest.index = [HEADER + i * RECORD_BYTES for i in range(len(records))]
    manifest.payload = bin_path.name
    for target, blob in ((bin_path, encode_payload(records)),
                         (json_path, (json.dumps(asdict(manifest), indent=1) + "\n").encode())):
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_bytes(blob)
        os.replace(tmp, target)
    return manifest


def decode_payload(buf: bytes, manifest: DatasetManifest) -> list[SampleRecord]:
    if buf[:8] != MAGIC:
        raise FormatError("bad dataset magic", 0)
    if len(buf) < HEADER:
        raise FormatError("truncated header", len(buf))
    version, count = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}", 8)
    if count != manifest.n_records:
        raise FormatError(f"manifest lists {manifest.n_records} records, payload header says {count}", 12)
    records = []
    for i, off in enumerate(manifest.index):
        if off < HEADER or off + RECORD_BYTES > len(buf):
            raise FormatError(f"record {i} out of bounds", off)
        feats = np.frombuffer(buf, dtype="<f8", count=N_CHANNELS * N_BANDS, offset=off)
        feats = feats.reshape(N_CHANNELS, N_BANDS).astype(np.float64)
        label, subject, session, trial = struct.unpack_from("<IIII", buf, off + N_CHANNELS * N_BANDS * 8)
        if not np.all(np.isfinite(feats)):
            raise FormatError(f"record {i} has non-finite features", off)
        if label >= manifest.n_classes:
            raise FormatError(f"record {i} label {label} >= {manifest.n_classes}", off)
        records.append(SampleRecord(feats, label, subject, session, trial))
    if len(set(manifest.index)) != len(manifest.index):
        raise FormatError("manifest index repeats an offset")
    expected = HEADER + count * RECORD_BYTES
    if len(buf) != expected:
        raise FormatError(f"payload is {len(buf)} bytes, expected {expected}", min(len(buf), expected))
    return records


def load_dataset(path) -> tuple[DatasetManifest, list[SampleRecord]]:
    json_path, bin_path = dataset_paths(path)
    try:
        doc = json.loads(json_path.read_text())
        manifest = DatasetManifest(**doc)
    except (json.JSONDecodeError, TypeError) as exc:
        raise FormatError(f"bad manifest {json_path}: {exc}") from None
    payload = json_path.with_name(manifest.payload) if manifest.payload else bin_path
    return manifest, decode_payload(payload.read_bytes(), manifest)


# --- partition --------------------------------------------------------------

def load_partition(path=None, montage: ElectrodeGraph | None = None) -> BlockPartition:
    """Read ``{"regions": [{"name", "electrodes"}]}`` and map names to montage rows."""
    if path is None:
        text = resources.files("gmss.resources").joinpath("partition.json").read_text()
    else:
        text = Path(path).read_text()
    montage = montage or load_montage()
    regions = json.loads(text)["regions"]
    owner: dict[str, str] = {}
    blocks = []
    for region in regions:
        members = []
        for name in region["electrodes"]:
            if name in owner:
                raise ConfigError(f"electrode {name} appears in both {owner[name]} and {region['name']}")
            if name not in montage.names:
                raise ConfigError(f"electrode {name} is not in the montage")
            owner[name] = region["name"]
            members.append(montage.index(name))
        blocks.append((region["name"], tuple(members)))
    missing = [n for n in montage.names if n not in owner]
    if missing:
        raise ConfigError(f"electrode {missing[0]} is missing from the partition")
    return BlockPartition(tuple(blocks))


# --- synthetic data -----------------------------------------------------------

class GaussianStream:
    """Standard normals by Box-Muller over PCG64 doubles.

    Each pair of uniforms u1, u2 (numpy ``Generator(PCG64(seed)).random()``,
    i.e. the top 53 bits of each 64-bit draw scaled by 2**-53) yields
    sqrt(-2 ln(1 - u1)) * (cos 2 pi u2, sin 2 pi u2).
    """

    def __init__(self, seed: int):
        self.rng = np.random.Generator(np.random.PCG64(seed))

    def normal(self, size: int) -> np.ndarray:
        pairs = (size + 1) // 2
        u = self.rng.random(2 * pairs)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = 2.0 * np.pi * u[1::2]
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).reshape(-1)[:size]


@dataclass
class SyntheticSpec:
    """Class c signal = +shift on every (channel in region, band) cell listed for c.

    Trial t of each session carries class ``t % n_classes``; labels are
    exactly balanced when ``trials`` is a multiple of ``n_classes``.
    ``profile_scale`` adds a fixed per-(region, band) baseline shared by all
    records so the jigsaw arrangements are identifiable.  ``common_noise``
    is the std of a per-(record, channel) offset added to all five bands,
    the broadband component that dominates real band-power features.
    """

    n_classes: int = 3
    samples_per_trial: int = 50
    trials: int = 3
    subjects: int = 1
    sessions: int = 1
    signals: list[dict] = field(default_factory=list)
    noise: float = 1.0
    common_noise: float = 0.0
    profile_scale: float = 0.0
    seed: int = 0
    name: str = "synthetic"
    class_names: list[str] | None = None

    def validate(self, part: BlockPartition) -> None:
        if self.noise < 0 or self.common_noise < 0:
            raise ContractError("noise scales must be >= 0")
        covered = {int(s["class"]) for s in self.signals}
        if covered != set(range(self.n_classes)):
            raise ContractError(f"every class needs a signal; covered {sorted(covered)}")
        for s in self.signals:
            if s["region"] not in part.names:
                raise ContractError(f"unknown region {s['region']!r}")
            _band_index(s["band"])

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**doc)


def _band_index(band) -> int:
    if isinstance(band, int) and 0 <= band < N_BANDS:
        return band
    if isinstance(band, str) and band.lower() in BANDS:
        return BANDS.index(band.lower())
    raise ContractError(f"unknown band {band!r}")


def signal_map(spec: SyntheticSpec, part: BlockPartition) -> np.ndarray:
    """(n_classes, 62, 5) additive class signals."""
    shift = np.zeros((spec.n_classes, N_CHANNELS, N_BANDS))
    blocks = dict(part.blocks)
    for s in spec.signals:
        rows = list(blocks[s["region"]])
        shift[int(s["class"]), rows, _band_index(s["band"])] += float(s["shift"])
    return shift


def gen_synthetic(spec: SyntheticSpec, part: BlockPartition | None = None) -> tuple[DatasetManifest, list[SampleRecord]]:
    part = part or load_partition()
    spec.validate(part)
    stream = GaussianStream(spec.seed)
    region_of = np.empty(N_CHANNELS, dtype=np.intp)
    for r, (_, rows) in enumerate(part.blocks):
        region_of[list(rows)] = r
    profile = spec.profile_scale * stream.normal(part.m * N_BANDS).reshape(part.m, N_BANDS)
    baseline = profile[region_of]
    shifts = signal_map(spec, part)
    records = []
    for subject in range(spec.subjects):
        for session in range(spec.sessions):
            for trial in range(spec.trials):
                label = trial % spec.n_classes
                noise = stream.normal(spec.samples_per_trial * N_CHANNELS * N_BANDS)
                noise = noise.reshape(spec.samples_per_trial, N_CHANNELS, N_BANDS) * spec.noise
                if spec.common_noise:
                    common = stream.normal(spec.samples_per_trial * N_CHANNELS) * spec.common_noise
                    noise = noise + common.reshape(spec.samples_per_trial, N_CHANNELS, 1)
                for x in baseline + shifts[label] + noise:
                    records.append(SampleRecord(x, label, subject, session, trial))
    names = spec.class_names or [f"class{c}" for c in range(spec.n_classes)]
    manifest = DatasetManifest(spec.name, spec.n_classes, list(names), spec.subjects, spec.sessions, spec.trials,
                               [HEADER + i * RECORD_BYTES for i in range(len(records))])
    return manifest, records


# frozen 3-class benchmark: 14 trials x 50 samples, trials 0-9 train (500), 10-13 test (200)
BENCHMARK_SPLIT = (10, 4)


def benchmark_spec() -> SyntheticSpec:
    doc = json.loads(resources.files("gmss.resources").joinpath("benchmark.json").read_text())
    return SyntheticSpec.from_dict(doc)


def load_spec(path) -> SyntheticSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return SyntheticSpec.from_dict(doc)
