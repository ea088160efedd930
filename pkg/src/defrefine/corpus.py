"""Labeled dataset loading, validation, and seeded sampling."""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import DataError

SPLITS = ("train", "dev", "test")
_REQUIRED_FIELDS = ("id", "text", "label", "split")


@dataclass(frozen=True)
class Document:
    """One labeled text sample."""

    id: str
    text: str
    label: str
    split: str


@dataclass(frozen=True)
class Dataset:
    """Immutable labeled corpus with a stable category order.

    The category tuple defines the index order used by every downstream
    matrix (similarities, confusion counts), so it must never be reordered
    after load.
    """

    name: str
    categories: tuple[str, ...]
    documents: tuple[Document, ...]

    def __post_init__(self) -> None:
        if not self.categories:
            raise DataError("dataset has no categories")
        if len(set(self.categories)) != len(self.categories):
            raise DataError("duplicate category names")
        seen_ids: set[str] = set()
        cats = set(self.categories)
        for doc in self.documents:
            if doc.id in seen_ids:
                raise DataError(f"duplicate id {doc.id!r}")
            seen_ids.add(doc.id)
            if not doc.text:
                raise DataError(f"document {doc.id!r} has empty text")
            if doc.label not in cats:
                raise DataError(f"document {doc.id!r} has unknown label {doc.label!r}")
            if doc.split not in SPLITS:
                raise DataError(f"document {doc.id!r} has unknown split {doc.split!r}")

    @property
    def category_index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.categories)}


def _read_categories_sidecar(path: Path) -> tuple[str, ...]:
    lines = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    categories = tuple(line for line in lines if line)
    if not categories:
        raise DataError(f"{path}: empty categories file")
    if len(set(categories)) != len(categories):
        raise DataError(f"{path}: duplicate category names")
    return categories


def _iter_jsonl_records(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: malformed record: {exc}") from exc
            yield lineno, record


def _iter_csv_records(path: Path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return
        missing = [f for f in _REQUIRED_FIELDS if f not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing columns: {', '.join(missing)}")
        for record in reader:
            yield reader.line_num, record


def load_dataset(
    path: str | Path,
    format: str = "jsonl",
    categories_path: str | Path | None = None,
    name: str | None = None,
) -> Dataset:
    """Load and validate a dataset from a JSONL or CSV file.

    Each record carries id, text, label, and split. The category order is
    taken from the optional sidecar file (one category per line) or derived
    as the sorted set of labels.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    if format == "jsonl":
        records = _iter_jsonl_records(path)
    elif format == "csv":
        records = _iter_csv_records(path)
    else:
        raise DataError(f"unknown dataset format {format!r}")

    declared: Optional[tuple[str, ...]] = None
    if categories_path is not None:
        declared = _read_categories_sidecar(Path(categories_path))

    documents: list[Document] = []
    seen_ids: set[str] = set()
    declared_set = set(declared) if declared else None
    for lineno, record in records:
        values = {}
        for field in _REQUIRED_FIELDS:
            value = record.get(field)
            if not isinstance(value, str) or not value:
                raise DataError(f"{path}: line {lineno}: missing or empty field {field!r}")
            values[field] = value
        if values["split"] not in SPLITS:
            raise DataError(f"{path}: line {lineno}: unknown split {values['split']!r}")
        if values["id"] in seen_ids:
            raise DataError(f"{path}: line {lineno}: duplicate id {values['id']!r}")
        seen_ids.add(values["id"])
        if declared_set is not None and values["label"] not in declared_set:
            raise DataError(
                f"{path}: line {lineno}: label {values['label']!r} not in declared categories"
            )
        documents.append(Document(**values))

    if not documents:
        raise DataError(f"{path}: no records")

    categories = declared or tuple(sorted({d.label for d in documents}))
    return Dataset(name=name or path.stem, categories=categories, documents=tuple(documents))


def split_view(dataset: Dataset, split: str) -> list[Document]:
    """Documents of one split, in dataset insertion order."""
    if split not in SPLITS:
        raise DataError(f"unknown split {split!r}")
    return [d for d in dataset.documents if d.split == split]


def sample_instance(
    dataset: Dataset,
    split: str,
    category: str | None = None,
    rng: random.Random | None = None,
) -> Document:
    """Draw one document uniformly from a (split, category) stratum.

    Consumes exactly one uniform draw from `rng` per call, so stream
    positions stay predictable across strategies and resumes.
    """
    if rng is None:
        raise ValueError("sample_instance requires a seeded rng")
    stratum = [
        d
        for d in dataset.documents
        if d.split == split and (category is None or d.label == category)
    ]
    if not stratum:
        raise DataError(f"empty stratum: split={split!r} category={category!r}")
    u = rng.random()
    return stratum[min(int(u * len(stratum)), len(stratum) - 1)]
