"""Record file format, encoded datasets, and mini-batch assembly.

One interaction per line:
label<TAB>scenario_id<TAB>user_id<TAB>item_id<TAB>category_id<TAB>destination_id<TAB>timestamp<TAB>behavior
where behavior is a semicolon-joined list of
item_id,category_id,destination_id,scenario_id,scenario_type,time_bucket
sextuples, oldest first, possibly empty.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .features import FeatureVocab

BehaviorEvent = tuple[str, str, str, str, str, str]


@dataclass
class InteractionRecord:
    label: int
    scenario_id: str
    user_id: str
    item_id: str
    category_id: str
    destination_id: str
    timestamp: int
    behavior: tuple[BehaviorEvent, ...] = ()
    scenario_type: str = ""  # joined in from the scenario metadata file
    fc: float = 1.0          # intervention-bias feature, default neutral


def format_record_line(r: InteractionRecord) -> str:
    beh = ";".join(",".join(ev) for ev in r.behavior)
    return (f"{r.label}\t{r.scenario_id}\t{r.user_id}\t{r.item_id}\t"
            f"{r.category_id}\t{r.destination_id}\t{r.timestamp}\t{beh}")


def parse_record_line(line: str, lineno: int = 0, path: str = "") -> InteractionRecord:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 8:
        raise DataError(f"{path}:{lineno}: expected 8 tab-separated columns, got {len(parts)}")
    label_s, scen, user, item, cat, dest, ts, beh = parts
    if label_s not in ("0", "1"):
        raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {label_s!r}")
    events = []
    if beh:
        for chunk in beh.split(";"):
            fields = chunk.split(",")
            if len(fields) != 6:
                raise DataError(f"{path}:{lineno}: behavior event needs 6 fields, got {len(fields)}")
            events.append(tuple(fields))
    try:
        ts_i = int(ts)
    except ValueError:
        raise DataError(f"{path}:{lineno}: timestamp must be an integer, got {ts!r}") from None
    return InteractionRecord(int(label_s), scen, user, item, cat, dest, ts_i, tuple(events))


def write_records(path, records: Iterable[InteractionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(format_record_line(r) + "\n")


def read_records(path, scenario_types: Mapping[str, str] | None = None) -> list[InteractionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            r = parse_record_line(line, lineno, str(path))
            if scenario_types is not None:
                r.scenario_type = scenario_types.get(r.scenario_id, "")
            out.append(r)
    return out


def write_scenario_types(path, types: Mapping[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for scen in sorted(types, key=lambda s: (len(s), s)):
            fh.write(f"{scen}\t{types[scen]}\n")


def read_scenario_types(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 columns")
            out[parts[0]] = parts[1]
    return out


_EVENT_FIELDS = ("item_id", "category_id", "destination_id", "scenario_id",
                 "scenario_type", "time_bucket")


@dataclass
class Batch:
    """Dense index views of a slice of records, padded to the longest
    behavior sequence actually present (at least 1 column)."""

    labels: np.ndarray          # (B,) float64 in {0,1}
    user_idx: np.ndarray        # (B,)
    item_idx: np.ndarray        # (B, 3) target item fields
    scen_ctx_idx: np.ndarray    # (B, 3) target scenario context fields
    beh_item_idx: np.ndarray    # (B, L, 3)
    beh_scen_idx: np.ndarray    # (B, L, 3)
    mask: np.ndarray            # (B, L) float64
    fc: np.ndarray              # (B,) float64
    scenario_key: np.ndarray    # (B,) int64 routing key (scenario vocab index)
    scenario_raw: list[str]
    item_raw: list[str]
    category_raw: list[str]

    @property
    def size(self) -> int:
        return self.labels.shape[0]


class Dataset:
    """Records encoded to index arrays; behavior events stored flat with
    per-record offsets so memory stays linear in the event count."""

    def __init__(self, records: Sequence[InteractionRecord], vocab: FeatureVocab,
                 limit: int = 50):
        n = len(records)
        self.vocab = vocab
        self.limit = limit
        self.labels = np.fromiter((r.label for r in records), dtype=np.float64, count=n)
        self.user_idx = vocab.encode_many("user_id", [r.user_id for r in records])
        self.item_idx = np.stack([
            vocab.encode_many("item_id", [r.item_id for r in records]),
            vocab.encode_many("category_id", [r.category_id for r in records]),
            vocab.encode_many("destination_id", [r.destination_id for r in records]),
        ], axis=1)
        target_bucket = ["0"] * n
        self.scen_ctx_idx = np.stack([
            vocab.encode_many("scenario_id", [r.scenario_id for r in records]),
            vocab.encode_many("scenario_type", [r.scenario_type for r in records]),
            vocab.encode_many("time_bucket", target_bucket),
        ], axis=1)
        self.scenario_key = self.scen_ctx_idx[:, 0].copy()
        self.fc = np.fromiter((r.fc for r in records), dtype=np.float64, count=n)
        self.scenario_raw = [r.scenario_id for r in records]
        self.item_raw = [r.item_id for r in records]
        self.category_raw = [r.category_id for r in records]
        self.timestamps = np.fromiter((r.timestamp for r in records), dtype=np.int64, count=n)

        # ragged behavior storage: most recent `limit` events per record
        kept = [r.behavior[-limit:] if len(r.behavior) > limit else r.behavior for r in records]
        lens = np.fromiter((len(b) for b in kept), dtype=np.int64, count=n)
        self.offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(lens, out=self.offsets[1:])
        flat_raw = {f: [] for f in _EVENT_FIELDS}
        for b in kept:
            for ev in b:
                for f, v in zip(_EVENT_FIELDS, ev):
                    flat_raw[f].append(v)
        self.ev_idx = {f: vocab.encode_many(f, flat_raw[f]) for f in _EVENT_FIELDS}

    def __len__(self) -> int:
        return self.labels.shape[0]

    def set_fc(self, fc: np.ndarray) -> None:
        if fc.shape != self.fc.shape:
            raise DataError("fairness coefficient array has the wrong length")
        self.fc = fc.astype(np.float64)

    def batch(self, indices: np.ndarray) -> Batch:
        idx = np.asarray(indices, dtype=np.int64)
        lens = self.offsets[idx + 1] - self.offsets[idx]
        L = max(int(lens.max()) if lens.size else 0, 1)
        B = idx.size
        valid = np.arange(L)[None, :] < lens[:, None]
        src = (self.offsets[idx][:, None] + np.arange(L)[None, :])[valid]

        def dense(field: str) -> np.ndarray:
            m = np.zeros((B, L), dtype=np.int64)
            m[valid] = self.ev_idx[field][src]
            return m

        beh_item = np.stack([dense("item_id"), dense("category_id"),
                             dense("destination_id")], axis=2)
        beh_scen = np.stack([dense("scenario_id"), dense("scenario_type"),
                             dense("time_bucket")], axis=2)
        return Batch(
            labels=self.labels[idx],
            user_idx=self.user_idx[idx],
            item_idx=self.item_idx[idx],
            scen_ctx_idx=self.scen_ctx_idx[idx],
            beh_item_idx=beh_item,
            beh_scen_idx=beh_scen,
            mask=valid.astype(np.float64),
            fc=self.fc[idx],
            scenario_key=self.scenario_key[idx],
            scenario_raw=[self.scenario_raw[i] for i in idx],
            item_raw=[self.item_raw[i] for i in idx],
            category_raw=[self.category_raw[i] for i in idx],
        )

    def all_batch(self) -> Batch:
        return self.batch(np.arange(len(self)))
