"""Sample/batch data model, dataset disk formats, and the synthetic task suite.

Datasets are triples of variable-length feature sequences (language, visual,
acoustic) with a scalar task label. Features arrive pre-extracted; this module
only loads, validates, batches and synthesizes them.
"""

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

MODALITIES = ("L", "V", "A")
_MODALITY_ATTR = {"L": "language", "V": "visual", "A": "acoustic"}
BINARY_MAGIC = b"DHMD1"
MANIFEST_NAME = "manifest.json"
SPLITS = ("train", "valid", "test")


class DataValidationError(ValueError):
    pass


class DatasetLoadError(RuntimeError):
    pass


def class_from_label(label, task, num_classes):
    """Deterministic class bucketing used for triplet mining.

    Score-regression tasks follow the 7-level convention on [-3, 3]
    (generalized to any odd class count); binary tasks use the label itself.
    """
    if task == "binary":
        return int(label)
    offset = (num_classes - 1) // 2
    return int(np.clip(int(round(label)) + offset, 0, num_classes - 1))


@dataclasses.dataclass
class ModalitySequence:
    data: np.ndarray  # [T, C] float32
    mask: np.ndarray  # [T] bool
    modality_id: str

    def validate(self, sample_id="<unknown>"):
        if self.modality_id not in MODALITIES:
            raise DataValidationError(
                f"sample {sample_id}: unknown modality {self.modality_id!r}")
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise DataValidationError(
                f"sample {sample_id}: modality {self.modality_id} must be [T>=1, C>=1], "
                f"got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise DataValidationError(
                f"sample {sample_id}: non-finite values in modality {self.modality_id}")
        if self.mask.shape != (self.data.shape[0],) or self.mask.dtype != np.bool_:
            raise DataValidationError(
                f"sample {sample_id}: bad mask for modality {self.modality_id}")
        if not self.mask.any():
            raise DataValidationError(
                f"sample {sample_id}: modality {self.modality_id} has no valid step")


@dataclasses.dataclass
class MultimodalSample:
    language: ModalitySequence
    visual: ModalitySequence
    acoustic: ModalitySequence
    label: float
    class_id: int
    sample_id: str

    def modality(self, key):
        return getattr(self, _MODALITY_ATTR[key])

    def validate(self):
        for key in MODALITIES:
            self.modality(key).validate(self.sample_id)
        if not np.isfinite(self.label):
            raise DataValidationError(f"sample {self.sample_id}: non-finite label")
        if self.class_id < 0:
            raise DataValidationError(f"sample {self.sample_id}: negative class_id")


def make_sample(sample_id, label, arrays, task, num_classes):
    """Build a validated sample from per-modality [T,C] float arrays."""
    seqs = {}
    for key in MODALITIES:
        data = np.asarray(arrays[key], dtype=np.float32)
        if data.ndim != 2:
            raise DataValidationError(
                f"sample {sample_id}: modality {key} must be 2-D, got ndim={data.ndim}")
        seqs[key] = ModalitySequence(data=data,
                                     mask=np.ones(data.shape[0], dtype=bool),
                                     modality_id=key)
    sample = MultimodalSample(
        language=seqs["L"], visual=seqs["V"], acoustic=seqs["A"],
        label=float(label),
        class_id=class_from_label(float(label), task, num_classes),
        sample_id=str(sample_id))
    sample.validate()
    return sample


@dataclasses.dataclass
class Batch:
    data: dict        # modality -> [B, Tmax, C] float64, zero padded
    mask: dict        # modality -> [B, Tmax] bool
    labels: np.ndarray      # [B] float64
    class_ids: np.ndarray   # [B] int64
    samples: list

    @property
    def size(self):
        return len(self.samples)

    def unpad(self):
        """Recover the original samples bit-exactly."""
        out = []
        for i, sample in enumerate(self.samples):
            arrays = {}
            for key in MODALITIES:
                t = sample.modality(key).data.shape[0]
                arrays[key] = self.data[key][i, :t, :].astype(np.float32)
            out.append(MultimodalSample(
                language=ModalitySequence(arrays["L"], np.ones(arrays["L"].shape[0], bool), "L"),
                visual=ModalitySequence(arrays["V"], np.ones(arrays["V"].shape[0], bool), "V"),
                acoustic=ModalitySequence(arrays["A"], np.ones(arrays["A"].shape[0], bool), "A"),
                label=sample.label, class_id=sample.class_id,
                sample_id=sample.sample_id))
        return out


def collate(samples):
    """Zero-pad a list of samples into dense per-modality tensors + masks."""
    if not samples:
        raise ValueError("collate() requires a non-empty sample list")
    dims = {key: samples[0].modality(key).data.shape[1] for key in MODALITIES}
    for s in samples:
        for key in MODALITIES:
            c = s.modality(key).data.shape[1]
            if c != dims[key]:
                raise DataValidationError(
                    f"sample {s.sample_id}: modality {key} dim {c} != {dims[key]}")
    data, mask = {}, {}
    for key in MODALITIES:
        tmax = max(s.modality(key).data.shape[0] for s in samples)
        arr = np.zeros((len(samples), tmax, dims[key]), dtype=np.float64)
        msk = np.zeros((len(samples), tmax), dtype=bool)
        for i, s in enumerate(samples):
            seq = s.modality(key)
            t = seq.data.shape[0]
            arr[i, :t, :] = seq.data
            msk[i, :t] = seq.mask
        data[key] = arr
        mask[key] = msk
    return Batch(data=data, mask=mask,
                 labels=np.array([s.label for s in samples], dtype=np.float64),
                 class_ids=np.array([s.class_id for s in samples], dtype=np.int64),
                 samples=list(samples))


# ---------------------------------------------------------------------------
# synthetic task generator
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class SyntheticTaskSpec:
    num_classes: int = 7
    samples_per_class: int = 100           # train split; valid/test derive below
    seq_len_range: dict = None             # modality -> (min, max)
    feature_dims: dict = None              # modality -> C
    signal_strength: dict = None           # modality -> [0, 1]
    noise_sigma: float = 1.0
    cue_sparsity: float = 0.25             # fraction of steps carrying signal
    seed: int = 0
    val_per_class: int = None
    test_per_class: int = None

    def __post_init__(self):
        if self.seq_len_range is None:
            self.seq_len_range = {m: (8, 16) for m in MODALITIES}
        if self.feature_dims is None:
            self.feature_dims = {"L": 20, "V": 16, "A": 12}
        if self.signal_strength is None:
            self.signal_strength = {"L": 0.9, "V": 0.4, "A": 0.2}
        if self.val_per_class is None:
            self.val_per_class = max(2, self.samples_per_class // 5)
        if self.test_per_class is None:
            self.test_per_class = max(2, self.samples_per_class // 5)

    @property
    def task(self):
        return "binary" if self.num_classes == 2 else "regression"

    def label_for_class(self, c):
        if self.task == "binary":
            return float(c)
        return float(c - (self.num_classes - 1) // 2)

    def validate(self):
        if self.num_classes < 2:
            raise ValueError("synthetic task needs num_classes >= 2")
        if self.num_classes > 2 and self.num_classes % 2 == 0:
            raise ValueError("score-regression tasks need an odd class count "
                             "(labels are centered integer scores)")
        if not (0.0 < self.cue_sparsity <= 1.0):
            raise ValueError("cue_sparsity must lie in (0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        for m in MODALITIES:
            s = self.signal_strength[m]
            if not (0.0 <= s <= 1.0):
                raise ValueError(f"signal_strength[{m}] must lie in [0, 1], got {s}")
            lo, hi = self.seq_len_range[m]
            if lo < 1 or hi < lo:
                raise ValueError(f"bad seq_len_range for {m}: {(lo, hi)}")


@dataclasses.dataclass
class SyntheticDataset:
    spec: SyntheticTaskSpec
    splits: dict                 # split -> list[MultimodalSample]
    templates: dict              # modality -> [num_classes, C] float64

    @property
    def train(self):
        return self.splits["train"]

    @property
    def valid(self):
        return self.splits["valid"]

    @property
    def test(self):
        return self.splits["test"]

    def manifest(self):
        return {
            "format": "dhmd-dataset-v1",
            "feature_dims": {m: int(self.spec.feature_dims[m]) for m in MODALITIES},
            "splits": {k: len(v) for k, v in self.splits.items()},
            "task": self.spec.task,
            "label_range": [self.spec.label_for_class(0),
                            self.spec.label_for_class(self.spec.num_classes - 1)],
            "num_classes": self.spec.num_classes,
        }

    def oracle_report(self):
        """Nearest-template (matched filter) accuracy per modality and split."""
        report = {}
        for split, samples in self.splits.items():
            report[split] = {
                m: nearest_template_accuracy(samples, self.templates[m], m)
                for m in MODALITIES
            }
        return report


def nearest_template_accuracy(samples, templates, modality):
    """Closed-form oracle: argmax over classes of max_t <x_t, template_c>."""
    if not samples:
        return float("nan")
    hits = 0
    for s in samples:
        x = s.modality(modality).data.astype(np.float64)
        scores = (x @ templates.T).max(axis=0)
        hits += int(np.argmax(scores) == s.class_id)
    return hits / len(samples)


def generate_synthetic(spec):
    """Deterministically generate a class-conditional multimodal dataset.

    Per sample and modality, a cue_sparsity fraction of timesteps carries the
    class template scaled by sqrt(signal_strength); every step carries
    isotropic noise scaled by sqrt(1 - signal_strength) * noise_sigma. At
    signal_strength 0 the stream is independent of the class.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    templates = {}
    for m in MODALITIES:
        t = rng.standard_normal((spec.num_classes, spec.feature_dims[m]))
        t *= np.sqrt(spec.feature_dims[m]) / np.linalg.norm(t, axis=1, keepdims=True)
        templates[m] = t

    counts = {"train": spec.samples_per_class, "valid": spec.val_per_class,
              "test": spec.test_per_class}
    splits = {}
    for split in SPLITS:
        n = counts[split] * spec.num_classes
        samples = []
        for i in range(n):
            c = i % spec.num_classes
            arrays = {}
            for m in MODALITIES:
                lo, hi = spec.seq_len_range[m]
                t = int(rng.integers(lo, hi + 1))
                n_cues = max(1, int(round(spec.cue_sparsity * t)))
                cues = rng.choice(t, size=n_cues, replace=False)
                s = spec.signal_strength[m]
                x = np.sqrt(1.0 - s) * spec.noise_sigma * rng.standard_normal(
                    (t, spec.feature_dims[m]))
                x[cues] += np.sqrt(s) * templates[m][c]
                arrays[m] = x.astype(np.float32)
            label = spec.label_for_class(c)
            samples.append(make_sample(f"synth-{split}-{i:05d}", label, arrays,
                                       spec.task, spec.num_classes))
        splits[split] = samples
    return SyntheticDataset(spec=spec, splits=splits, templates=templates)


# ---------------------------------------------------------------------------
# on-disk format: manifest + JSONL records, optional packed binary
# ---------------------------------------------------------------------------


def _record_dict(sample):
    return {
        "id": sample.sample_id,
        "label": float(np.float32(sample.label)),
        "L": [[float(v) for v in row] for row in sample.language.data],
        "V": [[float(v) for v in row] for row in sample.visual.data],
        "A": [[float(v) for v in row] for row in sample.acoustic.data],
    }


def save_dataset(splits, manifest, out_dir, binary=False):
    """Write manifest + per-split record files (JSONL, optionally packed)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    for split, samples in splits.items():
        with open(out / f"{split}.jsonl", "w") as fh:
            for s in samples:
                fh.write(json.dumps(_record_dict(s)) + "\n")
        if binary:
            _write_binary(out / f"{split}.bin", samples)


def _write_binary(path, samples):
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<I", len(samples)))
        for s in samples:
            sid = s.sample_id.encode("utf-8")
            fh.write(struct.pack("<H", len(sid)))
            fh.write(sid)
            fh.write(struct.pack("<f", np.float32(s.label)))
            for key in MODALITIES:
                data = np.ascontiguousarray(s.modality(key).data, dtype="<f4")
                fh.write(struct.pack("<II", data.shape[0], data.shape[1]))
                fh.write(data.tobytes())


def _read_binary(path):
    raw = Path(path).read_bytes()
    if raw[:5] != BINARY_MAGIC:
        raise DatasetLoadError(f"{path}: bad magic, expected {BINARY_MAGIC!r}")
    off = 5
    (n,) = struct.unpack_from("<I", raw, off)
    off += 4
    records = []
    for _ in range(n):
        (id_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        sid = raw[off:off + id_len].decode("utf-8")
        off += id_len
        (label,) = struct.unpack_from("<f", raw, off)
        off += 4
        arrays = {}
        for key in MODALITIES:
            t, c = struct.unpack_from("<II", raw, off)
            off += 8
            count = t * c
            arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
            off += 4 * count
            arrays[key] = arr.reshape(t, c).astype(np.float32)
        records.append((sid, float(label), arrays))
    return records


def _read_jsonl(path):
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            arrays = {key: np.asarray(rec[key], dtype=np.float32)
                      for key in MODALITIES}
            records.append((rec["id"], float(rec["label"]), arrays))
    return records


def load_manifest(path):
    mpath = Path(path) / MANIFEST_NAME
    if not mpath.exists():
        raise DatasetLoadError(f"no {MANIFEST_NAME} in {path}")
    with open(mpath) as fh:
        return json.load(fh)


def load_dataset(path, split, prefer_binary=True):
    """Load one split; binary and JSONL variants yield identical samples."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}, expected one of {SPLITS}")
    manifest = load_manifest(path)
    base = Path(path)
    bin_path = base / f"{split}.bin"
    jsonl_path = base / f"{split}.jsonl"
    if prefer_binary and bin_path.exists():
        records = _read_binary(bin_path)
    elif jsonl_path.exists():
        records = _read_jsonl(jsonl_path)
    elif bin_path.exists():
        records = _read_binary(bin_path)
    else:
        raise DatasetLoadError(f"missing record file for split {split!r} in {path}")

    dims = manifest["feature_dims"]
    task = manifest["task"]
    num_classes = manifest["num_classes"]
    samples = []
    for sid, label, arrays in records:
        for key in MODALITIES:
            if arrays[key].ndim != 2 or arrays[key].shape[1] != dims[key]:
                raise DataValidationError(
                    f"sample {sid}: modality {key} dim "
                    f"{arrays[key].shape} does not match manifest C={dims[key]}")
        samples.append(make_sample(sid, label, arrays, task, num_classes))
    declared = manifest["splits"].get(split)
    if declared is not None and declared != len(samples):
        raise DataValidationError(
            f"split {split!r}: manifest declares {declared} samples, file has {len(samples)}")
    return samples


def load_all_splits(path):
    manifest = load_manifest(path)
    return {split: load_dataset(path, split) for split in SPLITS}, manifest
