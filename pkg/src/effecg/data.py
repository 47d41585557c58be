"""Dataset ingestion, splitting, batching and distribution analysis.

Two interchange formats:

  * beat CSV: each row is F comma-separated floats followed by one
    integer class label (single-lead fixed-length beats);
  * multi-lead record file: a header line
    ``fs=<int> age=<int|?> gender=<F|M|?> labels=<comma ints>`` followed by
    N lines of C tab-separated floats (time-major).

Records containing NaN/Inf samples or a flatlined (zero variance) lead
are dropped on load with a logged count.
"""

from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import signal as sig
from .model import Batch, GENDER_VOCAB
from .signal import EcgRecord

logger = logging.getLogger(__name__)

RECORD_SUFFIX = ".rec"


@dataclass
class Dataset:
    records: list[EcgRecord]
    class_count: int
    label_mode: str = "single"  # "single" | "multi"
    provenance: str = ""
    fiducials: list[tuple[np.ndarray, np.ndarray]] | None = None

    def __post_init__(self):
        if self.label_mode not in ("single", "multi"):
            raise ValueError(f"label_mode must be 'single' or 'multi', got {self.label_mode!r}")
        rates = {r.sample_rate for r in self.records}
        leads = {r.leads for r in self.records}
        if len(rates) > 1 or len(leads) > 1:
            raise ValueError("records must share one sample_rate and lead count")
        for r in self.records:
            bad = [l for l in r.labels if l >= self.class_count or l < 0]
            if bad:
                raise ValueError(f"label {bad[0]} outside configured class count {self.class_count}")

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, indices) -> "Dataset":
        recs = [self.records[i] for i in indices]
        fid = [self.fiducials[i] for i in indices] if self.fiducials is not None else None
        return Dataset(recs, self.class_count, self.label_mode, self.provenance, fid)


@dataclass
class SplitSpec:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {self.ratios}")


def _is_abnormal(record: EcgRecord) -> bool:
    if not np.isfinite(record.samples).all():
        return True
    return bool((record.samples.var(axis=1) < 1e-24).any())


def _drop_abnormal(records: list[EcgRecord]) -> list[EcgRecord]:
    kept = [r for r in records if not _is_abnormal(r)]
    dropped = len(records) - len(kept)
    if dropped:
        logger.warning("dropped %d abnormal record(s) (NaN/Inf or flatlined lead)", dropped)
    return kept


def load_beat_csv(path: str, sample_rate: float = 125.0,
                  class_count: int | None = None) -> Dataset:
    """Fixed-length single-lead beats: F floats then one integer label."""
    records: list[EcgRecord] = []
    labels_seen: set[int] = set()
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells) - 1
                if width < 1:
                    raise ValueError(f"{path}:{lineno}: row needs at least one sample and a label")
            if len(cells) != width + 1:
                raise ValueError(
                    f"{path}:{lineno}: expected {width} samples + label, got {len(cells)} fields"
                )
            try:
                values = [float(c) for c in cells[:-1]]
                label = int(cells[-1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric cell ({exc})") from exc
            labels_seen.add(label)
            records.append(EcgRecord(np.array(values)[None, :], sample_rate, labels={label}))
    if not records:
        warnings.warn(f"{path}: empty beat file, returning empty dataset")
        return Dataset([], class_count or 0, "single", provenance=path)
    records = _drop_abnormal(records)
    k = class_count if class_count is not None else max(labels_seen) + 1
    return Dataset(records, k, "single", provenance=path)


def _format_header(record: EcgRecord) -> str:
    age = "?" if record.age is None else str(record.age)
    gender = "?" if record.gender is None else record.gender
    labels = ",".join(str(l) for l in sorted(record.labels))
    return f"fs={int(record.sample_rate)} age={age} gender={gender} labels={labels}"


def write_multilead(record: EcgRecord, path: str) -> None:
    """Write one record in the multi-lead text format (time-major body)."""
    with open(path, "w") as fh:
        fh.write(_format_header(record) + "\n")
        for row in record.samples.T:
            fh.write("\t".join(f"{v:.12g}" for v in row) + "\n")


def load_multilead_record(path: str) -> EcgRecord:
    with open(path) as fh:
        header = fh.readline().strip()
        fields = {}
        for token in header.split():
            if "=" not in token:
                raise ValueError(f"{path}: malformed header token {token!r}")
            key, value = token.split("=", 1)
            fields[key] = value
        for key in ("fs", "age", "gender", "labels"):
            if key not in fields:
                raise ValueError(f"{path}: header missing key {key!r}")
        unknown = set(fields) - {"fs", "age", "gender", "labels"}
        if unknown:
            raise ValueError(f"{path}: malformed header key {sorted(unknown)[0]!r}")
        fs = int(fields["fs"])
        age = None if fields["age"] == "?" else int(fields["age"])
        gender = None if fields["gender"] == "?" else fields["gender"]
        labels = set() if fields["labels"] == "" else {int(v) for v in fields["labels"].split(",")}
        rows = []
        width = None
        for rowno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split("\t")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ValueError(
                    f"{path}: body row {rowno} has {len(cells)} columns, expected {width}"
                )
            rows.append([float(c) for c in cells])
    if not rows:
        raise ValueError(f"{path}: record has no samples")
    samples = np.array(rows, dtype=np.float64).T  # -> [C, N]
    return EcgRecord(samples, float(fs), age=age, gender=gender, labels=labels)


def load_multilead(path: str, class_count: int | None = None,
                   label_mode: str = "multi", threads: int = 1) -> Dataset:
    """Load one record file or a directory of ``*.rec`` files.

    ``threads`` > 1 parallelizes per-file parsing (order preserved).
    """
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path) if n.endswith(RECORD_SUFFIX))
        if not names:
            warnings.warn(f"{path}: no {RECORD_SUFFIX} files found")
        paths = [os.path.join(path, n) for n in names]
        if threads > 1 and len(paths) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                records = list(pool.map(load_multilead_record, paths))
        else:
            records = [load_multilead_record(p) for p in paths]
    else:
        records = [load_multilead_record(path)]
    records = _drop_abnormal(records)
    if class_count is None:
        all_labels = set().union(*(r.labels for r in records)) if records else set()
        class_count = (max(all_labels) + 1) if all_labels else 0
    return Dataset(records, class_count, label_mode, provenance=path)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle then partition; single-label datasets stratify per
    class (ratio within one sample of the global ratios per class).

    Allocation rounds cumulatively across classes, so the combined part
    sizes always equal the global rounded targets.
    """
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    r_tr, r_va, _ = spec.ratios
    stratify = dataset.label_mode == "single"
    if stratify:
        by_class: dict[int, list[int]] = {}
        for i, rec in enumerate(dataset.records):
            label = min(rec.labels) if rec.labels else 0
            by_class.setdefault(label, []).append(i)
        if any(len(v) < 3 for v in by_class.values()):
            warnings.warn("a class has fewer than 3 samples; falling back to a global split")
            stratify = False
    groups: list[np.ndarray]
    if stratify:
        groups = [np.array(by_class[label]) for label in sorted(by_class)]
    else:
        groups = [np.arange(len(dataset))]
    parts: tuple[list[int], list[int], list[int]] = ([], [], [])
    done = 0
    taken_tr = taken_va = 0
    for idx in groups:
        rng.shuffle(idx)
        done += len(idx)
        n_tr = _round_half_up(r_tr * done) - taken_tr
        n_va = _round_half_up((r_tr + r_va) * done) - taken_tr - n_tr - taken_va
        n_tr = max(0, min(n_tr, len(idx)))
        n_va = max(0, min(n_va, len(idx) - n_tr))
        taken_tr += n_tr
        taken_va += n_va
        parts[0].extend(idx[:n_tr].tolist())
        parts[1].extend(idx[n_tr : n_tr + n_va].tolist())
        parts[2].extend(idx[n_tr + n_va :].tolist())
    return tuple(dataset.subset(sorted(p)) for p in parts)  # type: ignore[return-value]


def ensure_fiducials(dataset: Dataset, reference_lead: int = 0) -> Dataset:
    """Attach detected R/P indices to every record (no-op when present)."""
    if dataset.fiducials is not None or not dataset.records:
        return dataset
    fir = sig.design_bandpass(sample_rate=dataset.records[0].sample_rate)
    dataset.fiducials = [
        sig.extract_fiducials(rec, fir, reference_lead) for rec in dataset.records
    ]
    return dataset


def _pad_sequences(seqs: list[np.ndarray], pad_value: int = -1
                   ) -> tuple[np.ndarray, np.ndarray]:
    target = max(1, max((len(s) for s in seqs), default=1))
    feats = [sig.clip_pad(s, target, pad_value) for s in seqs]
    values = np.stack([f.values for f in feats]).astype(np.float64)
    mask = np.stack([f.mask for f in feats])
    return values, mask


def _to_batch(dataset: Dataset, indices: list[int]) -> Batch:
    recs = [dataset.records[i] for i in indices]
    fids = [dataset.fiducials[i] for i in indices]
    x = np.stack([r.samples for r in recs])
    r_vals, r_mask = _pad_sequences([f[0] for f in fids])
    p_vals, p_mask = _pad_sequences([f[1] for f in fids])
    ages = np.array([-1 if r.age is None else r.age for r in recs], dtype=np.int64)
    genders = np.array(
        [-1 if r.gender is None else GENDER_VOCAB[r.gender] for r in recs], dtype=np.int64
    )
    return Batch(x=x, r_values=r_vals, r_mask=r_mask, p_values=p_vals, p_mask=p_mask,
                 labels=[set(r.labels) for r in recs], ages=ages, genders=genders)


def make_batches(dataset: Dataset, batch_size: int, seed: int | None = 0):
    """Seeded shuffle, then fixed-size batches (final short batch kept).

    Fiducial sequences are padded to the longest in each batch with
    validity masks. Every record appears exactly once per epoch. A seed of
    None keeps the dataset order (used for evaluation).
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    ensure_fiducials(dataset)
    order = np.arange(len(dataset))
    if seed is not None:
        np.random.default_rng(seed).shuffle(order)
    for start in range(0, len(order), batch_size):
        yield _to_batch(dataset, order[start : start + batch_size].tolist())


def analyze_distribution(dataset: Dataset, label: int, age_bins: int = 10
                         ) -> np.ndarray:
    """Count of records carrying ``label`` per (age decade bin x gender)."""
    missing = [r for r in dataset.records if r.age is None or r.gender is None]
    if missing:
        raise ValueError("distribution analysis needs age and gender on every record")
    table = np.zeros((age_bins, len(GENDER_VOCAB)), dtype=np.int64)
    for rec in dataset.records:
        if label in rec.labels:
            b = min(rec.age // 10, age_bins - 1)
            table[b, GENDER_VOCAB[rec.gender]] += 1
    return table


def distribution_csv(table: np.ndarray) -> str:
    """Contingency table with row/column marginals as CSV."""
    lines = ["age_bin,female,male,total"]
    for i, row in enumerate(table):
        lo = i * 10
        name = f"{lo}-{lo + 9}" if i < len(table) - 1 else f"{lo}+"
        lines.append(f"{name},{row[0]},{row[1]},{row.sum()}")
    col = table.sum(axis=0)
    lines.append(f"total,{col[0]},{col[1]},{table.sum()}")
    return "\n".join(lines) + "\n"


def balanced_test_sample(dataset: Dataset, per_class: int, seed: int = 0) -> Dataset:
    """Draw ``per_class`` single-label records per class without
    replacement; a short class is an error."""
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    by_class: dict[int, list[int]] = {}
    for i, rec in enumerate(dataset.records):
        for l in rec.labels:
            by_class.setdefault(l, []).append(i)
    for label in range(dataset.class_count):
        pool = by_class.get(label, [])
        if len(pool) < per_class:
            raise ValueError(
                f"class {label} has only {len(pool)} samples, need {per_class}"
            )
        chosen.extend(rng.choice(pool, size=per_class, replace=False).tolist())
    return dataset.subset(sorted(chosen))
