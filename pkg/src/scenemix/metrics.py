"""Ranking metrics and evaluation reports.

AUC is the probability that a random positive outscores a random negative,
ties counted half, computed by rank sums with midranks. RelaImpr compares
two AUCs relative to the 0.5 random baseline. Category reports simulate
exposure by taking the top-scored fraction of the test set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DataError, UndefinedMetric


@dataclass
class ScoredSet:
    """Parallel columns of one evaluation pass."""

    scores: np.ndarray
    labels: np.ndarray
    scenario_ids: list[str]
    category_ids: list[str]
    item_ids: list[str] | None = None  # needed only for intervened-pair exclusion

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        n = self.scores.shape[0]
        if n == 0:
            raise ContractViolation("scored set is empty")
        if self.labels.shape[0] != n or len(self.scenario_ids) != n or len(self.category_ids) != n:
            raise ContractViolation("scored set columns must align")
        if self.item_ids is not None and len(self.item_ids) != n:
            raise ContractViolation("scored set columns must align")


def midranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their group's average rank."""
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    boundaries = np.flatnonzero(np.diff(s)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [s.size]))
    group_rank = (starts + ends + 1) / 2.0  # average of 1-based start..end
    ranks = np.empty(s.size)
    sizes = ends - starts
    ranks[order] = np.repeat(group_rank, sizes)
    return ranks


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-sum AUC with midrank tie handling.

    Every intermediate is a sum of integers and halves, exact in float64 at
    this scale, so the result equals the pair-counting definition exactly.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC needs at least one positive and one negative")
    r = midranks(scores)
    num = r[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return num / (n_pos * n_neg)


def auc_pair_oracle(scores: np.ndarray, labels: np.ndarray) -> float:
    """Direct O(n^2) pair counting; the reference for the rank-sum form."""
    pos = np.asarray(scores)[np.asarray(labels) == 1]
    neg = np.asarray(scores)[np.asarray(labels) == 0]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetric("AUC needs at least one positive and one negative")
    wins = 0.0
    for p in pos:
        wins += (p > neg).sum() + 0.5 * (p == neg).sum()
    return wins / (pos.size * neg.size)


def rela_impr(target_auc: float, base_auc: float) -> float:
    """Relative improvement over the 0.5 random baseline, in percent."""
    if base_auc == 0.5:
        raise UndefinedMetric("RelaImpr is undefined for a random-level base")
    return ((target_auc - 0.5) / (base_auc - 0.5) - 1.0) * 100.0


@dataclass
class MetricReport:
    overall_auc: float
    scenario_auc: dict[str, float]
    undefined_scenarios: list[str]
    rela_impr_vs: dict[str, float]
    exposure_ratio: dict[str, float]
    category_ctr: dict[str, float]
    counts: dict[str, int]


def scenario_aucs(s: ScoredSet) -> tuple[dict[str, float], list[str]]:
    """Per-scenario AUC; single-class scenarios are reported as undefined
    rather than failing the whole report."""
    values: dict[str, float] = {}
    undefined: list[str] = []
    for scen in sorted(set(s.scenario_ids), key=lambda x: (len(x), x)):
        sel = np.fromiter((sid == scen for sid in s.scenario_ids), dtype=bool,
                          count=len(s.scenario_ids))
        try:
            values[scen] = auc(s.scores[sel], s.labels[sel])
        except UndefinedMetric:
            undefined.append(scen)
    return values, undefined


def category_report(s: ScoredSet, top_frac: float = 0.1,
                    exclude_pairs: set[tuple[str, str]] | None = None):
    """Simulated exposure shares and CTR per category.

    The model's exposure is simulated by ranking the set by score and
    keeping the top fraction. Rows whose (scenario, item) pair is flagged
    as intervened are removed before any statistic.
    """
    if not 0.0 < top_frac <= 1.0:
        raise ContractViolation(f"top_frac must be in (0, 1], got {top_frac}")
    keep = np.ones(s.scores.shape[0], dtype=bool)
    if exclude_pairs:
        if s.item_ids is None:
            raise ContractViolation("exclusion needs item ids in the scored set")
        for j, (scen, item) in enumerate(zip(s.scenario_ids, s.item_ids)):
            if (scen, item) in exclude_pairs:
                keep[j] = False
    scores = s.scores[keep]
    labels = s.labels[keep]
    cats = [c for c, k in zip(s.category_ids, keep) if k]
    if scores.size == 0:
        raise ContractViolation("no rows left after exclusion")
    n_top = max(1, int(np.ceil(top_frac * scores.size)))
    top = np.argsort(-scores, kind="stable")[:n_top]
    ratio: dict[str, float] = {}
    ctr: dict[str, float] = {}
    shown: dict[str, int] = {}
    clicked: dict[str, int] = {}
    for j in top:
        c = cats[j]
        shown[c] = shown.get(c, 0) + 1
        clicked[c] = clicked.get(c, 0) + int(labels[j])
    for c in sorted(shown, key=lambda x: (len(x), x)):
        ratio[c] = shown[c] / n_top
        ctr[c] = clicked[c] / shown[c]
    return ratio, ctr


def build_report(s: ScoredSet, base: dict[str, float] | None = None,
                 top_frac: float = 0.1,
                 exclude_pairs: set[tuple[str, str]] | None = None) -> MetricReport:
    scen_auc, undefined = scenario_aucs(s)
    overall = auc(s.scores, s.labels)
    rel = {}
    if base:
        for name, base_auc in base.items():
            rel[name] = rela_impr(overall, base_auc)
    ratio, ctr = category_report(s, top_frac, exclude_pairs)
    counts = {"rows": int(s.scores.shape[0]), "positives": int((s.labels == 1).sum())}
    return MetricReport(overall, scen_auc, undefined, rel, ratio, ctr, counts)


def write_report(path, report: MetricReport) -> None:
    lines = [f"auc.overall={report.overall_auc:.17g}\n"]
    for scen, v in report.scenario_auc.items():
        lines.append(f"auc.scenario.{scen}={v:.17g}\n")
    for scen in report.undefined_scenarios:
        lines.append(f"auc.scenario.{scen}=undefined\n")
    for name, v in report.rela_impr_vs.items():
        lines.append(f"relaimpr.vs.{name}={v:.17g}\n")
    for cat, v in report.exposure_ratio.items():
        lines.append(f"exposure_ratio.category.{cat}={v:.17g}\n")
    for cat, v in report.category_ctr.items():
        lines.append(f"ctr.category.{cat}={v:.17g}\n")
    for key, v in report.counts.items():
        lines.append(f"count.{key}={v}\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def read_report(path) -> dict[str, float | str]:
    out: dict[str, float | str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key=value")
            key, val = line.split("=", 1)
            try:
                out[key] = float(val)
            except ValueError:
                out[key] = val
    return out


def median_over_seeds(values) -> float:
    vals = list(values)
    if not vals:
        raise ContractViolation("no values to take a median over")
    return float(np.median(vals))
