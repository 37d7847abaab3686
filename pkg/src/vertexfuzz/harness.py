"""Datasets in the ``dsimg`` format and attack campaigns over them.

dsimg layout (little-endian)::

    b"DSIM"  u32 version=1  u32 count  u32 height  u32 width  u32 channels
    then per image: u32 label, height*width*channels f32 pixels
    (row-major, channel-last)
"""

from __future__ import annotations

import csv
import io
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from vertexfuzz import attacks
from vertexfuzz.attacks import AttackConfig, AttackOutcome
from vertexfuzz.backends import ModelError, model_digest
from vertexfuzz.core import (
    InputVector,
    QueryLedger,
    ScoreOracle,
    VERIFICATION,
    predict_label,
)
from vertexfuzz.metrics import (
    avg_distortion_l2,
    avg_distortion_linf,
    mean,
    query_stats,
    success_rate,
)
from vertexfuzz.remote import RemoteBackend, RemoteError, RemoteOracleConfig

MAGIC = b"DSIM"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")

SKIPPED = "skipped"
ERROR = "error"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    images: tuple[InputVector, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        images, labels = tuple(self.images), tuple(int(v) for v in self.labels)
        if not images:
            raise DatasetError("a dataset needs at least one image")
        if len(images) != len(labels):
            raise DatasetError("images and labels differ in count")
        shape = images[0].shape
        for i, img in enumerate(images):
            if img.shape != shape:
                raise DatasetError(f"image {i} has shape {img.shape}, expected {shape}")
        if min(labels) < 0:
            raise DatasetError("labels must be non-negative")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.images[0].shape

    def __len__(self) -> int:
        return len(self.images)

    def check_labels(self, n_classes: int) -> None:
        for i, label in enumerate(self.labels):
            if label >= n_classes:
                raise DatasetError(f"image {i}: label {label} out of range for a {n_classes}-class model")


def dumps_dataset(ds: Dataset) -> bytes:
    h, w, c = ds.shape
    out = bytearray(_HEADER.pack(MAGIC, VERSION, len(ds), h, w, c))
    for img, label in zip(ds.images, ds.labels):
        pixels = img.data.astype("<f4")
        if not np.array_equal(pixels.astype(np.float64), img.data):
            raise DatasetError("pixel values are not representable in single precision")
        out += struct.pack("<I", label)
        out += pixels.tobytes()
    return bytes(out)


def loads_dataset(blob: bytes) -> Dataset:
    if len(blob) < _HEADER.size:
        raise DatasetError("truncated header")
    magic, version, count, h, w, c = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise DatasetError("not a dsimg file (bad magic)")
    if version != VERSION:
        raise DatasetError(f"unsupported dsimg version {version}")
    if h == 0 or w == 0 or c == 0:
        raise DatasetError(f"invalid image shape {(h, w, c)}")
    n = h * w * c
    record = 4 + 4 * n
    expected = _HEADER.size + count * record
    if len(blob) != expected:
        raise DatasetError(f"expected {expected} bytes for {count} images, found {len(blob)}")
    images, labels = [], []
    for i in range(count):
        off = _HEADER.size + i * record
        (label,) = struct.unpack_from("<I", blob, off)
        pixels = np.frombuffer(blob, dtype="<f4", count=n, offset=off + 4).astype(np.float64)
        try:
            images.append(InputVector(pixels, (h, w, c)))
        except ValueError as exc:
            raise DatasetError(f"image {i} (byte offset {off}): {exc}") from None
        labels.append(label)
    return Dataset(tuple(images), tuple(labels))


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dumps_dataset(ds))


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise FileNotFoundError(f"dataset file not found: {path}") from None
    try:
        return loads_dataset(blob)
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from None


METHODS: dict[str, Callable] = {
    "attack": lambda x, oracle, cfg, label: attacks.attack(x, oracle, cfg, label),
    "hierarchy": lambda x, oracle, cfg, label: attacks.ds_hierarchy(x, None, oracle, cfg, label),
    "multiclass": lambda x, oracle, cfg, label: attacks.ds_multiclass(x, None, oracle, cfg, label),
    "multiclass-alt": lambda x, oracle, cfg, label: attacks.ds_multiclass_alt(x, None, oracle, cfg, label),
    "binary": lambda x, oracle, cfg, label: attacks.ds_binary(x, None, oracle, cfg, label),
    "random": lambda x, oracle, cfg, label: attacks.random_fuzz_baseline(x, oracle, cfg, label),
}

ROW_FIELDS = (
    "index", "label", "status", "predicted", "final_label", "attack_queries",
    "refinement_queries", "linf", "l2", "pre_refinement_linf", "dr_linf", "dr_l2", "error",
)


@dataclass
class CampaignReport:
    rows: list[dict]
    config: dict
    seed: int
    model_id: str
    method: str
    aggregates: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregates:
            self.aggregates = aggregate(self.rows)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "model_id": self.model_id,
            "seed": self.seed,
            "config": self.config,
            "aggregates": self.aggregates,
            "rows": self.rows,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# method={self.method} model_id={self.model_id} seed={self.seed}\n")
        buf.write("# config=" + json.dumps(self.config, sort_keys=True) + "\n")
        writer = csv.DictWriter(buf, fieldnames=ROW_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: "" if row.get(k) is None else row.get(k) for k in ROW_FIELDS})
        return buf.getvalue()

    def write(self, json_path=None, csv_path=None) -> None:
        if json_path is not None:
            Path(json_path).write_text(self.to_json(), encoding="utf-8")
        if csv_path is not None:
            Path(csv_path).write_text(self.to_csv(), encoding="utf-8")


def aggregate(rows: Sequence[dict]) -> dict:
    """Report aggregates from per-image rows. Skipped and errored images are
    left out of every denominator."""
    attempted = [r for r in rows if r["status"] not in (SKIPPED, ERROR)]
    wins = [r for r in attempted if r["status"] == attacks.FOUND]
    doc = {
        "images": len(rows),
        "attempted": len(attempted),
        "skipped": sum(r["status"] == SKIPPED for r in rows),
        "errors": sum(r["status"] == ERROR for r in rows),
        "successes": len(wins),
        "success_rate": success_rate(attempted) if attempted else None,
        "avg_dr_linf": mean([r["dr_linf"] for r in wins]) if wins else None,
        "avg_dr_l2": mean([r["dr_l2"] for r in wins]) if wins else None,
        "avg_queries": None,
        "median_queries": None,
    }
    if wins:
        doc["avg_queries"], doc["median_queries"] = query_stats(wins)
    return doc


def _row(index: int, label: int, status: str, **extra) -> dict:
    row = dict.fromkeys(ROW_FIELDS)
    row.update(index=index, label=label, status=status, **extra)
    return row


def _outcome_row(index: int, label: int, x: InputVector, out: AttackOutcome) -> dict:
    row = _row(
        index, label, out.status,
        predicted=label,
        final_label=out.label,
        attack_queries=out.attack_queries,
        refinement_queries=out.refinement_queries,
        linf=out.linf,
        l2=out.l2,
        pre_refinement_linf=out.pre_refinement_linf,
    )
    if out.found:
        row["dr_linf"] = avg_distortion_linf([(x, out.x)])
        row["dr_l2"] = avg_distortion_l2([(x, out.x)])
    return row


def _backend_for_run(source):
    if isinstance(source, RemoteOracleConfig):
        return RemoteBackend(source)
    return source


def model_identifier(source) -> str:
    if isinstance(source, RemoteOracleConfig):
        return source.describe()
    try:
        return model_digest(source)
    except AttributeError:
        return type(source).__name__


def run_campaign(
    dataset: Dataset,
    source,
    cfg: AttackConfig,
    *,
    parallelism: int = 1,
    method: str = "attack",
) -> CampaignReport:
    """Attack every correctly classified image and collect per-image rows.

    ``source`` is an in-process model or a RemoteOracleConfig; remote runs
    open one connection per image. Image i runs with seed ``cfg.seed ^ i``,
    so the report does not depend on ``parallelism``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    n_out = getattr(source, "n_outputs", None)
    if n_out is not None:
        dataset.check_labels(max(2, n_out))
    run = METHODS[method]

    def one(index: int) -> dict:
        x, label = dataset.images[index], dataset.labels[index]
        backend = None
        try:
            backend = _backend_for_run(source)
            # the correctness check is bookkeeping, not part of the attack budget
            check = ScoreOracle(backend, QueryLedger(0), phase=VERIFICATION)
            scores = check.scores(x)
            if label >= max(2, scores.size):
                return _row(index, label, ERROR, error=f"label {label} out of range")
            predicted = predict_label(scores)
            if predicted != label:
                return _row(index, label, SKIPPED, predicted=predicted)
            run_cfg = replace(cfg, seed=cfg.seed ^ index)
            out = run(x, attacks.make_oracle(backend, run_cfg), run_cfg, label)
            return _outcome_row(index, label, x, out)
        except (RemoteError, OSError, ModelError) as exc:
            return _row(index, label, ERROR, error=f"{type(exc).__name__}: {exc}")
        finally:
            if backend is not None and isinstance(source, RemoteOracleConfig):
                backend.close()

    if parallelism == 1:
        rows = [one(i) for i in range(len(dataset))]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(one, range(len(dataset))))

    if not any(r["status"] not in (SKIPPED, ERROR) for r in rows) and not any(r["status"] == ERROR for r in rows):
        raise DatasetError("no correctly classified images left to attack")
    return CampaignReport(
        rows=rows,
        config=cfg.to_dict(),
        seed=cfg.seed,
        model_id=model_identifier(source),
        method=method,
    )
