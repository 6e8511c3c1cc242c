"""Interaction and catalog data contracts, file parsing, the timeline split, and
warm/cold user segmentation."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Iterable

import numpy as np

ITEM_TYPES = ("audiobook", "podcast")
SIGNALS = ("stream", "follow", "preview", "intent_to_pay")
WEAK_SIGNALS = ("follow", "preview", "intent_to_pay")

DAY_SECONDS = 86_400


@dataclass(frozen=True)
class InteractionRecord:
    """One user/item event. Weak signals are only valid on audiobooks."""

    user_id: str
    item_id: str
    item_type: str
    signal: str
    timestamp: int


@dataclass(frozen=True)
class CatalogItem:
    item_id: str
    item_type: str
    content_vector: np.ndarray
    language: str
    genre: str


@dataclass
class ParseDiagnostic:
    line_no: int
    message: str


@dataclass
class ParsedInteractions:
    records: list[InteractionRecord]
    diagnostics: list[ParseDiagnostic]


@dataclass
class DatasetSplit:
    train: list[InteractionRecord]
    holdout: list[InteractionRecord]
    split_time: int


@dataclass
class UserSegments:
    warm: set[str]
    cold: set[str]


def record_to_dict(rec: InteractionRecord) -> dict:
    return {
        "user_id": rec.user_id,
        "item_id": rec.item_id,
        "item_type": rec.item_type,
        "signal": rec.signal,
        "timestamp": rec.timestamp,
    }


def _check_interaction(obj: dict) -> str | None:
    for key in ("user_id", "item_id", "item_type", "signal", "timestamp"):
        if key not in obj:
            return f"missing key {key!r}"
    if not isinstance(obj["user_id"], str) or not obj["user_id"]:
        return "user_id must be a non-empty string"
    if not isinstance(obj["item_id"], str) or not obj["item_id"]:
        return "item_id must be a non-empty string"
    if obj["item_type"] not in ITEM_TYPES:
        return f"unknown item_type {obj['item_type']!r}"
    if obj["signal"] not in SIGNALS:
        return f"unknown signal {obj['signal']!r}"
    if obj["signal"] in WEAK_SIGNALS and obj["item_type"] != "audiobook":
        return f"signal {obj['signal']!r} is only valid for audiobooks"
    ts = obj["timestamp"]
    if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
        return "timestamp must be a non-negative integer"
    return None


def parse_interactions(path) -> ParsedInteractions:
    """Parse a JSON-lines interaction file.

    Valid records are returned in file order; malformed lines are skipped and
    reported with their 1-based line number.
    """
    records: list[InteractionRecord] = []
    diagnostics: list[ParseDiagnostic] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                diagnostics.append(ParseDiagnostic(line_no, f"invalid JSON: {exc.msg}"))
                continue
            if not isinstance(obj, dict):
                diagnostics.append(ParseDiagnostic(line_no, "record is not an object"))
                continue
            problem = _check_interaction(obj)
            if problem is not None:
                diagnostics.append(ParseDiagnostic(line_no, problem))
                continue
            records.append(
                InteractionRecord(
                    user_id=obj["user_id"],
                    item_id=obj["item_id"],
                    item_type=obj["item_type"],
                    signal=obj["signal"],
                    timestamp=int(obj["timestamp"]),
                )
            )
    return ParsedInteractions(records, diagnostics)


def save_interactions(records: Iterable[InteractionRecord], path) -> None:
    from .io import write_jsonl

    write_jsonl((record_to_dict(r) for r in records), path)


def parse_catalog(path) -> dict[str, CatalogItem]:
    """Parse a JSON-lines catalog file into a map keyed by item_id.

    Duplicate ids and inconsistent content-vector dimensions are fatal.
    """
    catalog: dict[str, CatalogItem] = {}
    first_line: dict[str, int] = {}
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            for key in ("item_id", "item_type", "content_vector", "language", "genre"):
                if key not in obj:
                    raise ValueError(f"{path}:{line_no}: missing key {key!r}")
            item_id = obj["item_id"]
            if item_id in catalog:
                raise ValueError(
                    f"{path}: duplicate item_id {item_id!r} "
                    f"(lines {first_line[item_id]} and {line_no})"
                )
            if obj["item_type"] not in ITEM_TYPES:
                raise ValueError(f"{path}:{line_no}: unknown item_type {obj['item_type']!r}")
            vec = np.asarray(obj["content_vector"], dtype=np.float64)
            if vec.ndim != 1:
                raise ValueError(f"{path}:{line_no}: content_vector must be a flat array")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"{path}:{line_no}: content_vector has non-finite entries")
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise ValueError(
                    f"{path}:{line_no}: content_vector dimension {vec.shape[0]} "
                    f"does not match earlier dimension {dim}"
                )
            catalog[item_id] = CatalogItem(
                item_id=item_id,
                item_type=obj["item_type"],
                content_vector=vec,
                language=str(obj["language"]),
                genre=str(obj["genre"]),
            )
            first_line[item_id] = line_no
    return catalog


def save_catalog(catalog: dict[str, CatalogItem], path) -> None:
    from .io import write_jsonl

    rows = [
        {
            "item_id": item.item_id,
            "item_type": item.item_type,
            "content_vector": [float(x) for x in item.content_vector],
            "language": item.language,
            "genre": item.genre,
        }
        for item in catalog.values()
    ]
    write_jsonl(rows, path)


def timeline_split(
    records: list[InteractionRecord],
    split_time: int | None = None,
    holdout_days: int = 14,
) -> DatasetSplit:
    """Partition records at a single global time point.

    Records with timestamp >= split_time land in the holdout. The default
    split point is the maximum timestamp minus `holdout_days` days.
    """
    if not records:
        raise ValueError("cannot split an empty record list")
    ts = [r.timestamp for r in records]
    lo, hi = min(ts), max(ts)
    if split_time is None:
        split_time = hi - holdout_days * DAY_SECONDS
    train = [r for r in records if r.timestamp < split_time]
    holdout = [r for r in records if r.timestamp >= split_time]
    if not train or not holdout:
        side = "train" if not train else "holdout"
        warnings.warn(
            f"split_time {split_time} leaves the {side} side empty "
            f"(timestamps span [{lo}, {hi}])",
            stacklevel=2,
        )
    return DatasetSplit(train=train, holdout=holdout, split_time=int(split_time))


def truncate_history(
    records: list[InteractionRecord], history_days: int
) -> list[InteractionRecord]:
    """Drop records older than `history_days` before the most recent timestamp."""
    if not records:
        return []
    cutoff = max(r.timestamp for r in records) - history_days * DAY_SECONDS
    return [r for r in records if r.timestamp >= cutoff]


def user_segments(split: DatasetSplit) -> UserSegments:
    """Warm users had at least one train-window audiobook interaction of any
    signal type; cold users had none. Only users appearing in the holdout are
    segmented."""
    holdout_users = {r.user_id for r in split.holdout}
    warm_pool = {
        r.user_id for r in split.train if r.item_type == "audiobook"
    }
    warm = holdout_users & warm_pool
    return UserSegments(warm=warm, cold=holdout_users - warm)
