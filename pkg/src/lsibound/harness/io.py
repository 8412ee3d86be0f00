"""Dataset loaders/writers (IDX, CSV) and append-only JSON-lines persistence."""
from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from filelock import FileLock

from .. import __version__
from ..distributions import Dataset
from ..errors import FormatError, InvalidInputError, ParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
RECORD_SCHEMA = "lsibound.record/1"
RECORD_KINDS = ("bound", "verify", "sweep-row", "train-trace")


def _read_header(raw: bytes, path, n_fields: int, magic: int) -> tuple[int, ...]:
    need = 4 * (1 + n_fields)
    if len(raw) < need:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    fields = struct.unpack(f">{1 + n_fields}I", raw[:need])
    if fields[0] != magic:
        raise FormatError(f"{path}: bad magic 0x{fields[0]:08x}, expected 0x{magic:08x}")
    return fields[1:]


def load_idx(images_path, labels_path) -> Dataset:
    """Images scaled to [0, 1] and flattened row-major, paired with their labels."""
    img_raw = Path(images_path).read_bytes()
    lab_raw = Path(labels_path).read_bytes()
    n_img, rows, cols = _read_header(img_raw, images_path, 3, IDX_IMAGES_MAGIC)
    (n_lab,) = _read_header(lab_raw, labels_path, 1, IDX_LABELS_MAGIC)
    if n_img != n_lab:
        raise FormatError(f"{n_img} images but {n_lab} labels")
    if n_img == 0:
        raise InvalidInputError("empty dataset")
    pix = np.frombuffer(img_raw, dtype=np.uint8, offset=16)
    labels = np.frombuffer(lab_raw, dtype=np.uint8, offset=8)
    if pix.size != n_img * rows * cols:
        raise FormatError(f"{images_path}: expected {n_img * rows * cols} pixel bytes, found {pix.size}")
    if labels.size != n_lab:
        raise FormatError(f"{labels_path}: expected {n_lab} label bytes, found {labels.size}")
    X = pix.reshape(n_img, rows * cols).astype(float) / 255.0
    return Dataset(X, labels.astype(np.int64))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """``images`` is ``(n, rows, cols)`` uint8."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


def load_csv(path, k: int) -> Dataset:
    """Header row, then feature columns with the integer label last."""
    rows, labels = [], []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("missing header row", line=1)
        if len(header) < 2:
            raise ParseError("need at least one feature column and a label column", line=1)
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(f"expected {width} cells, found {len(row)}", line=lineno)
            try:
                feats = [float(c) for c in row[:-1]]
                label = int(row[-1])
            except ValueError as exc:
                raise ParseError(f"non-numeric cell ({exc})", line=lineno) from None
            if not 0 <= label < k:
                raise ParseError(f"label {label} outside [0, {k})", line=lineno)
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise InvalidInputError(f"{path}: no data rows")
    return Dataset(np.array(rows), np.array(labels, dtype=np.int64))


def write_csv(data: Dataset, path) -> Path:
    """Write ``data`` with 17 significant digits so a reload is bit-exact."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(data.dim)] + ["label"])
        for x, y in zip(data.X, data.y):
            w.writerow([f"{v:.17g}" for v in x] + [int(y)])
    return path


def write_table(rows: list[dict], path) -> Path:
    path = Path(path)
    if not rows:
        raise InvalidInputError("empty table")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()})
    return path


def jsonable(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats for strict JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


@dataclass(frozen=True)
class ResultRecord:
    kind: str
    payload: dict
    config_hash: str
    timestamp: str = ""
    version: str = __version__
    wall_time: float | None = None  # kept outside the payload so payloads stay reproducible

    def __post_init__(self):
        if self.kind not in RECORD_KINDS:
            raise InvalidInputError(f"unknown record kind {self.kind!r}")
        if not self.timestamp:
            now = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="microseconds")
            object.__setattr__(self, "timestamp", now)

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": RECORD_SCHEMA,
                "kind": self.kind,
                "timestamp": self.timestamp,
                "version": self.version,
                "config_hash": self.config_hash,
                "wall_time": self.wall_time,
                "payload": jsonable(self.payload),
            },
            sort_keys=True,
            allow_nan=False,
            ensure_ascii=False,
        )


def persist(records, directory) -> list[Path]:
    """Append each record as one line to ``<directory>/<kind>.jsonl``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    by_kind: dict[str, list[str]] = {}
    for rec in records:
        by_kind.setdefault(rec.kind, []).append(rec.to_json())
    paths = []
    for kind, lines in by_kind.items():
        path = directory / f"{kind}.jsonl"
        with FileLock(str(path) + ".lock"):
            with open(path, "a", encoding="utf-8") as fh:
                fh.write("".join(line + "\n" for line in lines))
        paths.append(path)
    return paths


def read_records(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
