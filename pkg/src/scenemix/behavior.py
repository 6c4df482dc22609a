"""Behavior-sequence pooling with item- and scenario-conditioned attention.

Each behavior position k carries an item part p_k_i and a scenario part
p_k_s. Two scorers produce softmax weights alpha_i (conditioned on the
target item) and alpha_s (conditioned on the request's scenario context);
the pooled interest vector is sum_k alpha_i_k * alpha_s_k * p_k_i with the
weight product deliberately left unnormalized. Ablation modes swap in
simpler pooling rules.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .errors import ContractViolation

POOL_MODES = ("full", "mean", "target_only", "scenario_only", "concat_query", "hierarchical")


class AttentionNet:
    """Two-layer scorer over a (key, query) pair of equal widths.

    The input feature is [key || query || key - query || key * query]; one
    hidden rectifier layer produces a scalar score.
    """

    def __init__(self, width: int, hidden: int, rng: np.random.Generator,
                 prefix: str, params: dict[str, nx.Tensor] | None = None):
        self.width = width
        self.hidden = hidden
        self.w1 = nx.Tensor(nx.uniform_init(rng, (4 * width, hidden)), requires_grad=True,
                            name=f"{prefix}.w1")
        self.b1 = nx.Tensor(np.zeros(hidden), requires_grad=True, name=f"{prefix}.b1")
        self.w2 = nx.Tensor(nx.uniform_init(rng, (hidden, 1)), requires_grad=True,
                            name=f"{prefix}.w2")
        self.b2 = nx.Tensor(np.zeros(1), requires_grad=True, name=f"{prefix}.b2")
        if params is not None:
            for t in (self.w1, self.b1, self.w2, self.b2):
                params[t.name] = t

    def score_pairs(self, keys: nx.Tensor, queries: nx.Tensor) -> nx.Tensor:
        """Scores for row-aligned (key, query) pairs; (n, w) inputs, (n, 1) output."""
        if keys.data.ndim != 2 or keys.data.shape[1] != self.width:
            raise ContractViolation(f"keys must be (n, {self.width}), got {keys.data.shape}")
        if queries.data.shape != keys.data.shape:
            raise ContractViolation("queries must align with keys")
        feats = nx.concat([keys, queries, nx.sub(keys, queries), nx.mul(keys, queries)], axis=1)
        h = nx.relu(nx.add(nx.matmul(feats, self.w1), self.b1))
        return nx.add(nx.matmul(h, self.w2), self.b2)

    def score_grid(self, keys: nx.Tensor, query: nx.Tensor) -> nx.Tensor:
        """One query per row against a (B, L, w) key block; (B, L) scores."""
        B, L, w = keys.data.shape
        k2 = nx.reshape(keys, (B * L, w))
        q2 = nx.reshape(nx.broadcast_to(nx.reshape(query, (B, 1, w)), (B, L, w)), (B * L, w))
        return nx.reshape(self.score_pairs(k2, q2), (B, L))


def attention_score(net: AttentionNet, key: np.ndarray, query: np.ndarray) -> float:
    """Convenience scalar form for a single (key, query) pair."""
    s = net.score_pairs(nx.Tensor(np.asarray(key).reshape(1, -1)),
                        nx.Tensor(np.asarray(query).reshape(1, -1)))
    return float(s.data[0, 0])


def masked_softmax(scores: nx.Tensor, mask: np.ndarray) -> nx.Tensor:
    """Row-wise softmax over valid positions only.

    Masked positions get an additive -1e9 before the shift and their weights
    are multiplied by the mask afterwards, which underflows them to exactly
    0.0, so masked content can never leak into values or gradients. Rows
    with no valid position come back as all zeros.
    """
    if scores.data.shape != mask.shape:
        raise ContractViolation("scores and mask shapes differ")
    shifted = nx.add(scores, nx.Tensor((mask - 1.0) * 1e9))
    row_max = nx.Tensor(shifted.data.max(axis=1, keepdims=True))  # detached shift
    e = nx.mul(nx.exp(nx.sub(shifted, row_max)), nx.Tensor(mask))
    denom = nx.tensor_sum(e, axis=1, keepdims=True)
    empty = (mask.max(axis=1, keepdims=True) == 0).astype(np.float64)
    return nx.div(e, nx.add(denom, nx.Tensor(empty)))


def item_attention_weights(net: AttentionNet, keys: nx.Tensor, query: nx.Tensor,
                           mask: np.ndarray) -> nx.Tensor:
    """Weights over behavior item parts, conditioned on the target item."""
    return masked_softmax(net.score_grid(keys, query), mask)


def scenario_attention_weights(net: AttentionNet, keys: nx.Tensor, query: nx.Tensor,
                               mask: np.ndarray) -> nx.Tensor:
    """Weights over behavior scenario parts, conditioned on the request context."""
    return masked_softmax(net.score_grid(keys, query), mask)


def pool_interest(keys: nx.Tensor, alpha_item: nx.Tensor, alpha_scen: nx.Tensor) -> nx.Tensor:
    """v_cb = sum_k alpha_item_k * alpha_scen_k * p_k_i, NOT renormalized."""
    return pool_weighted(keys, nx.mul(alpha_item, alpha_scen))


def pool_weighted(keys: nx.Tensor, weights: nx.Tensor) -> nx.Tensor:
    B, L, w = keys.data.shape
    if weights.data.shape != (B, L):
        raise ContractViolation("weights must align with keys")
    w3 = nx.broadcast_to(nx.reshape(weights, (B, L, 1)), (B, L, w))
    return nx.tensor_sum(nx.mul(w3, keys), axis=1)


def mean_weights(mask: np.ndarray) -> nx.Tensor:
    """Uniform weights over valid positions; all-zero rows stay zero."""
    counts = mask.sum(axis=1, keepdims=True)
    return nx.Tensor(mask / np.maximum(counts, 1.0))


class BehaviorExtract:
    """Pools the behavior sequence into the interest-transfer vector v_cb.

    The mode picks the pooling rule: `full` is the dual-attention product,
    the others are the ablation variants. Only the scorers the mode needs
    are created.
    """

    def __init__(self, item_width: int, scen_width: int, mode: str, hidden: int,
                 rng: np.random.Generator, params: dict[str, nx.Tensor] | None = None):
        if mode not in POOL_MODES:
            raise ContractViolation(f"unknown pooling mode {mode!r}")
        self.mode = mode
        self.item_width = item_width
        self.scen_width = scen_width
        self.item_net = None
        self.scen_net = None
        self.cat_net = None
        # fixed child streams per scorer: switching modes never changes the
        # initialization of the scorers the modes share
        r_item, r_scen, r_cat = rng.spawn(3)
        if mode in ("full", "target_only"):
            self.item_net = AttentionNet(item_width, hidden, r_item, "attn.item", params)
        if mode in ("full", "scenario_only", "hierarchical"):
            self.scen_net = AttentionNet(scen_width, hidden, r_scen, "attn.scen", params)
        if mode in ("concat_query", "hierarchical"):
            self.cat_net = AttentionNet(item_width + scen_width, hidden, r_cat,
                                        "attn.cat", params)

    def __call__(self, p_bi: nx.Tensor, p_bs: nx.Tensor, v_ti: nx.Tensor, v_s: nx.Tensor,
                 mask: np.ndarray):
        """Returns (v_cb, diagnostics); diagnostics carry the weight arrays."""
        mode = self.mode
        if mode == "mean":
            w = mean_weights(mask)
            return pool_weighted(p_bi, w), {"alpha": w.data}
        if mode == "target_only":
            a = item_attention_weights(self.item_net, p_bi, v_ti, mask)
            return pool_weighted(p_bi, a), {"alpha": a.data}
        if mode == "scenario_only":
            a = scenario_attention_weights(self.scen_net, p_bs, v_s, mask)
            return pool_weighted(p_bi, a), {"alpha": a.data}
        if mode == "concat_query":
            keys = nx.concat([p_bi, p_bs], axis=2)
            query = nx.concat([v_ti, v_s], axis=1)
            a = masked_softmax(self.cat_net.score_grid(keys, query), mask)
            return pool_weighted(p_bi, a), {"alpha": a.data}
        if mode == "hierarchical":
            keys = nx.concat([p_bi, p_bs], axis=2)
            query = nx.concat([v_ti, v_s], axis=1)
            a1 = masked_softmax(self.cat_net.score_grid(keys, query), mask)
            a2 = scenario_attention_weights(self.scen_net, p_bs, v_s, mask)
            return pool_interest(p_bi, a1, a2), {"alpha_item": a1.data, "alpha_scenario": a2.data}
        a_i = item_attention_weights(self.item_net, p_bi, v_ti, mask)
        a_s = scenario_attention_weights(self.scen_net, p_bs, v_s, mask)
        return pool_interest(p_bi, a_i, a_s), {"alpha_item": a_i.data, "alpha_scenario": a_s.data}
