"""Synthetic multi-scenario click logs with controllable exposure bias.

The world draws latent vectors for scenarios, users, and items; the ground
truth is CTR(u, i, s) = sigmoid(b0 + <pref_u, qual_i> + affinity(u, s) +
<topic_s, qual_i>), with affinity carrying both a user-by-scenario taste
term and a fixed per-scenario offset so scenario mean CTRs spread. The
logging policy exposes items proportionally to exp(tau * <topic_s, qual_i>),
optionally boosted for chosen (scenario, item) pairs; the boost changes
which impressions happen, never the labels given (u, i, s). Training logs
are biased; the evaluation split is regenerated boost-free on later days
with behavior histories frozen at the split point.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .dataio import InteractionRecord, format_record_line
from .errors import ContractViolation
from .features import FeatureVocab, time_bucket_of


@dataclass
class WorldConfig:
    n_scenarios: int = 20
    n_users: int = 5000
    n_items: int = 2000
    n_categories: int = 10
    n_destinations: int = 30
    # enough distinct types that the type vocab stays wider than the default
    # embedding dimension
    n_types: int = 10
    latent_dim: int = 8
    user_scale: float = 1.0
    item_scale: float = 1.0
    topic_scale: float = 1.0
    affinity_scale: float = 1.0
    offset_spread: float = 0.55
    # optional sharp per-user scenario preference: each user gets home_count
    # home scenarios whose affinity is raised by home_affinity; 0 disables
    home_affinity: float = 0.0
    home_count: int = 1
    target_ctr: float = 0.05
    tau: float = 2.0
    impressions_per_day: int = 13000
    n_days: int = 30
    test_days: int = 4
    truncation: int = 50


@dataclass(frozen=True)
class InterventionPolicy:
    """Exposure boost for chosen (scenario, item) pairs on active days."""

    pairs: tuple[tuple[int, int], ...] = ()
    b: float = 1.0
    start_day: int = 0
    end_day: int | None = None

    def __post_init__(self):
        if self.b < 1.0:
            raise ContractViolation(f"boost factor must be >= 1, got {self.b}")

    @classmethod
    def none(cls) -> "InterventionPolicy":
        return cls()

    def active(self, day: int) -> bool:
        if self.b == 1.0 or not self.pairs:
            return False
        return self.start_day <= day and (self.end_day is None or day < self.end_day)

    def pair_set(self) -> set[tuple[str, str]]:
        return {(str(s), str(i)) for s, i in self.pairs}


class ScenarioWorld:
    """Latent structure plus the calibrated logistic link; see build_world."""

    def __init__(self, config: WorldConfig, seed: int):
        if config.n_scenarios < 2 or config.n_users < 1 or config.n_items < 2:
            raise ContractViolation("world needs >= 2 scenarios, >= 1 user, >= 2 items")
        self.config = config
        self.seed = seed
        c = config
        dl = c.latent_dim
        rng = np.random.default_rng([seed, 0])
        type_centroids = rng.normal(size=(c.n_types, dl)) * (c.topic_scale / np.sqrt(dl))
        self.type_of = np.arange(c.n_scenarios) % c.n_types
        self.type_names = [f"t{j}" for j in range(c.n_types)]
        self.topics = (type_centroids[self.type_of]
                       + rng.normal(size=(c.n_scenarios, dl)) * (0.5 * c.topic_scale / np.sqrt(dl)))
        self.shares = rng.dirichlet(np.full(c.n_scenarios, 5.0))
        self.prefs = rng.normal(size=(c.n_users, dl)) * (c.user_scale / np.sqrt(dl))
        styles = rng.normal(size=(c.n_users, dl)) * (1.0 / np.sqrt(dl))
        offsets = c.offset_spread * rng.permutation(np.linspace(-1.0, 1.0, c.n_scenarios))
        self.offsets = offsets
        self.affinity = c.affinity_scale * (styles @ self.topics.T) + offsets[None, :]
        if c.home_affinity > 0.0:
            # ranks of iid uniforms give each user home_count distinct homes;
            # the calibration below absorbs the mean shift into b0
            draws = rng.random((c.n_users, c.n_scenarios))
            homes = np.argsort(np.argsort(draws, axis=1), axis=1) < c.home_count
            self.affinity = self.affinity + c.home_affinity * homes
        cat_centroids = rng.normal(size=(c.n_categories, dl)) * (c.item_scale / np.sqrt(dl))
        self.item_cat = rng.integers(0, c.n_categories, c.n_items)
        self.quals = (cat_centroids[self.item_cat]
                      + rng.normal(size=(c.n_items, dl)) * (0.6 * c.item_scale / np.sqrt(dl)))
        self.item_dest = rng.integers(0, c.n_destinations, c.n_items)
        self.rel = self.topics @ self.quals.T  # (S, I) scenario-item alignment
        base = np.exp(c.tau * self.rel)
        self._base_expo = base / base.sum(axis=1, keepdims=True)
        # popularity-flavored item score: share-weighted alignment, as a
        # quantile rank in [0, 1]
        raw_score = self.shares @ self.rel
        order = np.argsort(np.argsort(raw_score))
        self.item_quantile = order / max(c.n_items - 1, 1)
        self.b0, self.scenario_mean_ctr = self._calibrate(rng)

    def _calibrate(self, rng: np.random.Generator):
        """Bisect the global offset so the exposure-weighted mean CTR under
        the boost-free policy hits the target."""
        c = self.config
        m = 200_000
        scens = rng.choice(c.n_scenarios, m, p=self.shares)
        users = rng.integers(0, c.n_users, m)
        items = np.empty(m, dtype=np.int64)
        for s in range(c.n_scenarios):
            sel = scens == s
            items[sel] = rng.choice(c.n_items, int(sel.sum()), p=self._base_expo[s])
        z = (np.einsum("ij,ij->i", self.prefs[users], self.quals[items])
             + self.affinity[users, scens] + self.rel[scens, items])
        lo, hi = -12.0, 12.0
        for _ in range(60):
            mid = (lo + hi) / 2.0
            if _sigmoid(z + mid).mean() > c.target_ctr:
                hi = mid
            else:
                lo = mid
        b0 = (lo + hi) / 2.0
        means = {}
        p = _sigmoid(z + b0)
        for s in range(c.n_scenarios):
            sel = scens == s
            if sel.any():
                means[s] = float(p[sel].mean())
        return b0, means

    def ctr(self, users: np.ndarray, items: np.ndarray, scens: np.ndarray) -> np.ndarray:
        z = (np.einsum("ij,ij->i", self.prefs[users], self.quals[items])
             + self.affinity[users, scens] + self.rel[scens, items] + self.b0)
        return _sigmoid(z)

    def exposure(self, policy: InterventionPolicy, day: int) -> np.ndarray:
        """Per-scenario item exposure distribution for one day."""
        if not policy.active(day):
            return self._base_expo
        w = np.exp(self.config.tau * self.rel)
        for s, i in policy.pairs:
            w[s, i] *= policy.b
        return w / w.sum(axis=1, keepdims=True)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def build_world(config: WorldConfig, seed: int) -> ScenarioWorld:
    return ScenarioWorld(config, seed)


def pick_boosted_items(world: ScenarioWorld, frac: float, b: float,
                       selection: str = "uniform", seed: int = 0) -> InterventionPolicy:
    """Boost a fraction of items in every scenario."""
    c = world.config
    n_boost = max(1, round(frac * c.n_items))
    if selection == "uniform":
        rng = np.random.default_rng([world.seed, 7, seed])
        items = rng.choice(c.n_items, n_boost, replace=False)
    elif selection == "tail":
        items = np.argsort(world.item_quantile)[:n_boost]
    else:
        raise ContractViolation(f"unknown selection {selection!r}")
    pairs = tuple((s, int(i)) for s in range(c.n_scenarios) for i in sorted(items))
    return InterventionPolicy(pairs=pairs, b=b)


def simulate_day(world: ScenarioWorld, policy: InterventionPolicy, day: int,
                 histories: dict[int, deque] | None = None,
                 grow: bool = True) -> list[InteractionRecord]:
    """One day of impressions; histories grow on clicks when `grow`.

    The random stream depends only on (world seed, day), so a boost factor
    of 1 reproduces the boost-free logs byte for byte.
    """
    c = world.config
    if histories is None:
        histories = {}
    rng = np.random.default_rng([world.seed, 1, day])
    n = c.impressions_per_day
    scens = rng.choice(c.n_scenarios, n, p=world.shares)
    users = rng.integers(0, c.n_users, n)
    expo = world.exposure(policy, day)
    items = np.empty(n, dtype=np.int64)
    for s in range(c.n_scenarios):
        sel = scens == s
        cnt = int(sel.sum())
        if cnt:
            items[sel] = rng.choice(c.n_items, cnt, p=expo[s])
    clicks = rng.random(n) < world.ctr(users, items, scens)

    tick_hours = 24.0 / n
    base_ts = day * n
    cat = world.item_cat
    dest = world.item_dest
    tname = [world.type_names[t] for t in world.type_of]
    records = []
    for t in range(n):
        u = int(users[t])
        ts = base_ts + t
        hist = histories.get(u)
        behavior = ()
        if hist:
            behavior = tuple(
                (str(it), str(cat[it]), str(dest[it]), str(sc), tname[sc],
                 str(time_bucket_of((ts - te) * tick_hours)))
                for it, sc, te in hist)
        i = int(items[t])
        s = int(scens[t])
        records.append(InteractionRecord(
            label=int(clicks[t]), scenario_id=str(s), user_id=str(u), item_id=str(i),
            category_id=str(cat[i]), destination_id=str(dest[i]), timestamp=ts,
            behavior=behavior, scenario_type=tname[s]))
        if grow and clicks[t]:
            if hist is None:
                hist = deque(maxlen=c.truncation)
                histories[u] = hist
            hist.append((i, s, ts))
    return records


def simulate_days(world: ScenarioWorld, policy: InterventionPolicy,
                  days: Iterable[int], histories: dict | None = None,
                  grow: bool = True) -> list[InteractionRecord]:
    if histories is None:
        histories = {}
    out = []
    for day in days:
        out.extend(simulate_day(world, policy, day, histories, grow))
    return out


def emit_splits(world: ScenarioWorld, policy: InterventionPolicy,
                train_path, test_path) -> dict:
    """Write the biased train split and the boost-free test split.

    Test days follow the train days with user histories frozen at the split,
    so no test behavior references a post-split event.
    """
    c = world.config
    if c.n_days < 2:
        raise ContractViolation("need at least 2 simulated days")
    histories: dict[int, deque] = {}
    per_scenario: dict[str, int] = {}
    n_train = 0
    with open(train_path, "w", encoding="utf-8") as fh:
        for day in range(c.n_days):
            recs = simulate_day(world, policy, day, histories, grow=True)
            for r in recs:
                fh.write(format_record_line(r) + "\n")
                per_scenario[r.scenario_id] = per_scenario.get(r.scenario_id, 0) + 1
            n_train += len(recs)
    n_test = 0
    unbiased = InterventionPolicy.none()
    with open(test_path, "w", encoding="utf-8") as fh:
        for day in range(c.n_days, c.n_days + c.test_days):
            recs = simulate_day(world, unbiased, day, histories, grow=False)
            for r in recs:
                fh.write(format_record_line(r) + "\n")
            n_test += len(recs)
    return {"train_rows": n_train, "test_rows": n_test, "per_scenario": per_scenario}


def build_vocab(world: ScenarioWorld) -> FeatureVocab:
    """Closed vocabulary straight from the world definition."""
    c = world.config
    return FeatureVocab.build({
        "user_id": [str(u) for u in range(c.n_users)],
        "item_id": [str(i) for i in range(c.n_items)],
        "category_id": [str(k) for k in range(c.n_categories)],
        "destination_id": [str(d) for d in range(c.n_destinations)],
        "scenario_id": [str(s) for s in range(c.n_scenarios)],
        "scenario_type": list(world.type_names),
        "time_bucket": [str(b) for b in range(8)],
    })


def scenario_type_map(world: ScenarioWorld) -> dict[str, str]:
    return {str(s): world.type_names[world.type_of[s]]
            for s in range(world.config.n_scenarios)}


def write_items_file(path, world: ScenarioWorld) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("item_id\tcategory_id\tdestination_id\tquality_quantile\n")
        for i in range(world.config.n_items):
            fh.write(f"{i}\t{world.item_cat[i]}\t{world.item_dest[i]}\t"
                     f"{world.item_quantile[i]:.6g}\n")
