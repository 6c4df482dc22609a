"""Feature vocabularies, embedding tables, and record assembly.

Raw ids are mapped to contiguous indices per field, with index 0 reserved
for unknown or padding values. Each field owns one embedding table; records
are assembled into five fixed groups: user profile, behavior sequence (item
part and scenario part), scenario context, target item, and the scalar
intervention-bias feature.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import numerics as nx
from .errors import ContractViolation, DataError

FIELDS = (
    "user_id",
    "item_id",
    "category_id",
    "destination_id",
    "scenario_id",
    "scenario_type",
    "time_bucket",
)

PAD_INDEX = 0


class FeatureVocab:
    """Per-field maps from raw string values to contiguous indices.

    Index 0 is reserved in every field and never assigned to a real value;
    unseen values encode to 0.
    """

    def __init__(self, maps: Mapping[str, Mapping[str, int]]):
        self.maps: dict[str, dict[str, int]] = {}
        for fname, m in maps.items():
            m = dict(m)
            if 0 in m.values():
                raise ContractViolation(f"field {fname}: index 0 is reserved")
            want = set(range(1, len(m) + 1))
            if set(m.values()) != want:
                raise ContractViolation(f"field {fname}: indices not contiguous from 1")
            self.maps[fname] = m

    @classmethod
    def build(cls, values: Mapping[str, Iterable]) -> "FeatureVocab":
        """Assign indices 1..n to the distinct values of each field, in
        first-seen order."""
        maps = {}
        for fname, vals in values.items():
            m: dict[str, int] = {}
            for v in vals:
                key = str(v)
                if key not in m:
                    m[key] = len(m) + 1
            maps[fname] = m
        return cls(maps)

    def encode(self, field: str, raw) -> int:
        if field not in self.maps:
            raise ContractViolation(f"unknown feature field {field!r}")
        return self.maps[field].get(str(raw), PAD_INDEX)

    def encode_many(self, field: str, raws: Sequence) -> np.ndarray:
        if field not in self.maps:
            raise ContractViolation(f"unknown feature field {field!r}")
        m = self.maps[field]
        return np.fromiter((m.get(str(r), PAD_INDEX) for r in raws), dtype=np.int64, count=len(raws))

    def size(self, field: str) -> int:
        """Vocabulary size including the reserved index 0."""
        if field not in self.maps:
            raise ContractViolation(f"unknown feature field {field!r}")
        return len(self.maps[field]) + 1

    def save(self, path) -> None:
        rows = []
        for fname in sorted(self.maps):
            for raw, idx in sorted(self.maps[fname].items(), key=lambda kv: kv[1]):
                rows.append(f"{fname}\t{raw}\t{idx}\n")
        with open(path, "w", encoding="utf-8") as fh:
            fh.writelines(rows)

    @classmethod
    def load(cls, path) -> "FeatureVocab":
        maps: dict[str, dict[str, int]] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise DataError(f"{path}:{lineno}: expected 3 tab-separated columns")
                fname, raw, idx = parts
                maps.setdefault(fname, {})[raw] = int(idx)
        return cls(maps)


def encode_one_hot(field: str, raw, vocab: FeatureVocab) -> int:
    """Index of the raw value's one-hot position; 0 for unseen values."""
    return vocab.encode(field, raw)


class EmbeddingTable:
    """Trainable embedding vectors for one field.

    Stored as an (n, d) parameter whose row i is the embedding of index i,
    i.e. column i of the conceptual (d, n) projection applied to a one-hot
    vector. Row 0 (padding/unknown) starts at zero but remains trainable.
    """

    def __init__(self, field: str, n: int, d: int, rng: np.random.Generator | None = None,
                 weights: np.ndarray | None = None):
        if weights is None:
            if d >= n:
                raise ContractViolation(f"field {field}: embedding dim {d} must be < vocab size {n}")
            w = nx.uniform_init(rng, (n, d))
            w[PAD_INDEX] = 0.0
        else:
            w = np.asarray(weights, dtype=np.float64)
            n, d = w.shape
        self.field = field
        self.n = n
        self.d = d
        self.weights = nx.Tensor(w, requires_grad=True, name=f"emb.{field}")

    @classmethod
    def from_matrix(cls, field: str, weights: np.ndarray) -> "EmbeddingTable":
        """Wrap an explicit matrix; skips the d < n size check (tests,
        checkpoint restore)."""
        return cls(field, 0, 0, weights=weights)

    def embed(self, index: int) -> np.ndarray:
        if not 0 <= index < self.n:
            raise ContractViolation(f"field {self.field}: index {index} out of range [0, {self.n})")
        return self.weights.data[index].copy()

    def lookup(self, idx: np.ndarray) -> nx.Tensor:
        """Differentiable batched gather used by the model forward pass."""
        return nx.rows(self.weights, idx)


def embed(field: str, index: int, table: EmbeddingTable) -> np.ndarray:
    if table.field != field:
        raise ContractViolation(f"table holds field {table.field!r}, not {field!r}")
    return table.embed(index)


def build_tables(vocab: FeatureVocab, d: int, rng: np.random.Generator,
                 params: dict[str, nx.Tensor] | None = None) -> dict[str, EmbeddingTable]:
    tables = {}
    for fname in sorted(vocab.maps):
        t = EmbeddingTable(fname, vocab.size(fname), d, rng)
        tables[fname] = t
        if params is not None:
            params[t.weights.name] = t.weights
    return tables


@dataclass(frozen=True)
class FeatureGroupLayout:
    """Ordered field lists of the five feature groups and their widths.

    The behavior item part must mirror the target-item group and the
    behavior scenario part must mirror the scenario-context group, so the
    attention queries and keys share a width.
    """

    d: int
    user_fields: tuple[str, ...] = ("user_id",)
    target_item_fields: tuple[str, ...] = ("item_id", "category_id", "destination_id")
    scenario_context_fields: tuple[str, ...] = ("scenario_id", "scenario_type", "time_bucket")
    behavior_item_fields: tuple[str, ...] = ("item_id", "category_id", "destination_id")
    behavior_scenario_fields: tuple[str, ...] = ("scenario_id", "scenario_type", "time_bucket")
    bias_width: int = 1

    def __post_init__(self):
        if self.behavior_item_fields != self.target_item_fields:
            raise ContractViolation("behavior item part must mirror the target-item layout")
        if self.behavior_scenario_fields != self.scenario_context_fields:
            raise ContractViolation("behavior scenario part must mirror the scenario-context layout")

    @property
    def user_width(self) -> int:
        return self.d * len(self.user_fields)

    @property
    def item_width(self) -> int:
        return self.d * len(self.target_item_fields)

    @property
    def scenario_width(self) -> int:
        return self.d * len(self.scenario_context_fields)


TARGET_TIME_BUCKET = "0"  # the request itself has zero recency


def _concat_embeddings(fields: Sequence[str], raws: Mapping[str, str], vocab: FeatureVocab,
                       tables: Mapping[str, EmbeddingTable]) -> np.ndarray:
    parts = [tables[f].embed(vocab.encode(f, raws[f])) for f in fields]
    return np.concatenate(parts)


def assemble_record(record, vocab: FeatureVocab, tables: Mapping[str, EmbeddingTable],
                    layout: FeatureGroupLayout, limit: int = 50):
    """Embed one record into the model's input groups.

    Returns (p_bi, p_bs, v_u, v_ti, v_s, v_b, mask) where p_bi and p_bs are
    (limit, width) matrices padded at the tail, mask marks valid positions,
    and v_b is the scalar intervention-bias feature (fairness coefficient).
    The behavior sequence must already be truncated by the caller.
    """
    behavior = record.behavior
    if len(behavior) > limit:
        raise ContractViolation(f"behavior length {len(behavior)} exceeds limit {limit}")
    p_bi = np.zeros((limit, layout.item_width))
    p_bs = np.zeros((limit, layout.scenario_width))
    mask = np.zeros(limit)
    for k, ev in enumerate(behavior):
        item_id, category_id, destination_id, scenario_id, scenario_type, time_bucket = ev
        p_bi[k] = _concat_embeddings(
            layout.behavior_item_fields,
            {"item_id": item_id, "category_id": category_id, "destination_id": destination_id},
            vocab, tables)
        p_bs[k] = _concat_embeddings(
            layout.behavior_scenario_fields,
            {"scenario_id": scenario_id, "scenario_type": scenario_type, "time_bucket": time_bucket},
            vocab, tables)
        mask[k] = 1.0
    v_u = _concat_embeddings(layout.user_fields, {"user_id": record.user_id}, vocab, tables)
    v_ti = _concat_embeddings(
        layout.target_item_fields,
        {"item_id": record.item_id, "category_id": record.category_id,
         "destination_id": record.destination_id},
        vocab, tables)
    v_s = _concat_embeddings(
        layout.scenario_context_fields,
        {"scenario_id": record.scenario_id, "scenario_type": record.scenario_type,
         "time_bucket": TARGET_TIME_BUCKET},
        vocab, tables)
    v_b = float(getattr(record, "fc", 1.0))
    return p_bi, p_bs, v_u, v_ti, v_s, v_b, mask


def time_bucket_of(hours_since: float) -> int:
    """Recency bucket on a doubling scale: <1h, <3h, <7h, ... , >=127h."""
    if hours_since < 0:
        hours_since = 0.0
    return min(7, int(np.log2(hours_since + 1.0)))
