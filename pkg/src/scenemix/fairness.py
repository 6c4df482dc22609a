"""Fairness coefficients from daily exposure statistics, and the weighted loss.

For each (scenario, item) pair seen in a day of scored logs, the coefficient
is the pair's share of summed model scores divided by its share of exposure
count, both normalized within the scenario. Over-exposed items score below 1,
under-exposed above 1. Coefficients weight the training loss and feed each
expert's bias net.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import numerics as nx
from .errors import ContractViolation, DataError

CLIP_DEFAULT = (0.2, 5.0)


class ExposureStats:
    """Per (scenario, item): exposure count pv and summed model score f.

    Accumulation is order-independent and mergeable, so partial stats from
    split inputs combine into exactly the single-pass result.
    """

    def __init__(self, day: int = 0):
        self.day = day
        self.pv: dict[tuple[str, str], int] = {}
        self.f: dict[tuple[str, str], float] = {}

    def add(self, scenario_id: str, item_id: str, score: float) -> None:
        if not 0.0 < score < 1.0:
            raise ContractViolation(f"score {score} outside (0, 1)")
        key = (scenario_id, item_id)
        self.pv[key] = self.pv.get(key, 0) + 1
        self.f[key] = self.f.get(key, 0.0) + score

    def merge(self, other: "ExposureStats") -> "ExposureStats":
        out = ExposureStats(self.day)
        keys = sorted(set(self.pv) | set(other.pv))
        for k in keys:
            out.pv[k] = self.pv.get(k, 0) + other.pv.get(k, 0)
            out.f[k] = self.f.get(k, 0.0) + other.f.get(k, 0.0)
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("scenario_id,item_id,pv,f\n")
            for (s, i) in sorted(self.pv, key=_pair_order):
                fh.write(f"{s},{i},{self.pv[(s, i)]},{self.f[(s, i)]:.17g}\n")

    @classmethod
    def load(cls, path) -> "ExposureStats":
        stats = cls()
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if header != "scenario_id,item_id,pv,f":
                raise DataError(f"{path}: unexpected stats header {header!r}")
            for lineno, line in enumerate(fh, 2):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 4:
                    raise DataError(f"{path}:{lineno}: expected 4 columns")
                s, i, pv, f = parts
                stats.pv[(s, i)] = int(pv)
                stats.f[(s, i)] = float(f)
        return stats


def _pair_order(key: tuple[str, str]):
    s, i = key
    return (len(s), s, len(i), i)  # numeric-string order without parsing


def accumulate_stats(scores: Sequence[float], scenario_ids: Sequence[str],
                     item_ids: Sequence[str], day: int = 0) -> ExposureStats:
    if not (len(scores) == len(scenario_ids) == len(item_ids)):
        raise ContractViolation("scores, scenario ids, and item ids must align")
    stats = ExposureStats(day)
    for sc, s, i in zip(scores, scenario_ids, item_ids):
        stats.add(s, i, float(sc))
    return stats


class FairnessTable:
    """Clipped coefficients keyed by (scenario, item); unseen pairs are 1."""

    def __init__(self, values: dict[tuple[str, str], float],
                 clip: tuple[float, float] = CLIP_DEFAULT):
        lo, hi = clip
        for key, w in values.items():
            if not lo <= w <= hi:
                raise ContractViolation(f"coefficient {w} for {key} outside clip bounds")
        self.values = dict(values)
        self.clip = (float(lo), float(hi))

    def get(self, scenario_id: str, item_id: str) -> float:
        return self.values.get((scenario_id, item_id), 1.0)

    def weights_for(self, scenario_ids: Sequence[str], item_ids: Sequence[str]) -> np.ndarray:
        return np.array([self.get(s, i) for s, i in zip(scenario_ids, item_ids)])

    @classmethod
    def all_ones(cls) -> "FairnessTable":
        return cls({})

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("scenario_id,item_id,fc\n")
            for (s, i) in sorted(self.values, key=_pair_order):
                fh.write(f"{s},{i},{self.values[(s, i)]:.17g}\n")

    @classmethod
    def load(cls, path, clip: tuple[float, float] = CLIP_DEFAULT) -> "FairnessTable":
        values = {}
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if header != "scenario_id,item_id,fc":
                raise DataError(f"{path}: unexpected table header {header!r}")
            for lineno, line in enumerate(fh, 2):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 3:
                    raise DataError(f"{path}:{lineno}: expected 3 columns")
                values[(parts[0], parts[1])] = float(parts[2])
        return cls(values, clip)


def compute_fairness(stats: ExposureStats,
                     clip: tuple[float, float] = CLIP_DEFAULT) -> FairnessTable:
    """Score-share over exposure-share per scenario, clipped.

    w(i, s) = (F(i,s) / sum_i F) / (PV(i,s) / sum_i PV), sums within s.
    """
    if not stats.pv:
        raise ContractViolation("no exposure statistics accumulated")
    sum_f: dict[str, float] = {}
    sum_pv: dict[str, int] = {}
    for (s, i), pv in stats.pv.items():
        sum_pv[s] = sum_pv.get(s, 0) + pv
        sum_f[s] = sum_f.get(s, 0.0) + stats.f[(s, i)]
    lo, hi = clip
    values = {}
    for key in sorted(stats.pv, key=_pair_order):
        s, _ = key
        f_share = stats.f[key] / sum_f[s]
        pv_share = stats.pv[key] / sum_pv[s]
        values[key] = min(max(f_share / pv_share, lo), hi)
    return FairnessTable(values, clip)


def weighted_bce(pred: nx.Tensor, labels: np.ndarray, weights: np.ndarray) -> nx.Tensor:
    """Cross-entropy with per-sample weights, normalized by the weight sum.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logarithms.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ContractViolation("labels must be 0 or 1")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != labels.shape or pred.data.shape != labels.shape:
        raise ContractViolation("predictions, labels, and weights must align")
    p = nx.clamp(pred, 1e-7, 1.0 - 1e-7)
    y = nx.Tensor(labels)
    one = nx.Tensor(np.ones_like(labels))
    ce = nx.sub(nx.Tensor(np.zeros_like(labels)),
                nx.add(nx.mul(y, nx.log(p)),
                       nx.mul(nx.sub(one, y), nx.log(nx.sub(one, p)))))
    total = nx.tensor_sum(nx.mul(nx.Tensor(weights), ce))
    return nx.div(total, nx.Tensor(np.float64(weights.sum())))


def bias_adapting_loss(pred: nx.Tensor, labels: np.ndarray, scenario_ids: Sequence[str],
                       item_ids: Sequence[str], table: FairnessTable | None) -> nx.Tensor:
    """Weighted cross-entropy with each sample's fairness coefficient."""
    if table is None:
        weights = np.ones(len(labels))
    else:
        weights = table.weights_for(scenario_ids, item_ids)
    return weighted_bce(pred, np.asarray(labels), weights)


def two_pass_schedule(train_pass: Callable, score_final_day: Callable,
                      clip: tuple[float, float] = CLIP_DEFAULT):
    """Bootstrap around the circular coefficient definition.

    Pass 1 trains with every coefficient fixed at 1; its serve-mode scores on
    the final training day give the exposure stats; the resulting table
    drives pass 2 from fresh initialization.

    train_pass(table or None) -> model; score_final_day(model) ->
    (scores, scenario_ids, item_ids). Returns (table, pass-1 model,
    pass-2 model).
    """
    first = train_pass(None)
    scores, scenario_ids, item_ids = score_final_day(first)
    stats = accumulate_stats(scores, scenario_ids, item_ids)
    table = compute_fairness(stats, clip)
    second = train_pass(table)
    return table, first, second


def sub_sample(records: Iterable, intervened: set[tuple[str, str]], ratio: float,
               seed: int = 0) -> list:
    """Keep each intervened-item record with probability `ratio`.

    The baseline debiasing strategy: thin over-exposed (scenario, item)
    pairs instead of modeling the bias.
    """
    if not 0.0 < ratio <= 1.0:
        raise ContractViolation(f"ratio must be in (0, 1], got {ratio}")
    rng = np.random.default_rng(seed)
    out = []
    for r in records:
        if (r.scenario_id, r.item_id) in intervened and rng.random() >= ratio:
            continue
        out.append(r)
    return out
