"""Training loop helpers shared by the command-line entry points."""

from __future__ import annotations

import numpy as np

from . import fairness as fair
from . import numerics as nx
from .dataio import Dataset
from .errors import NumericFailure
from .experts import CtrModel, ModelConfig


def model_config_from(cfg) -> ModelConfig:
    return ModelConfig(
        embed_dim=cfg.embed_dim,
        attn_hidden=cfg.attn_hidden,
        expert_hidden=cfg.expert_hidden,
        expert_layers=cfg.expert_layers,
        m_specific=cfg.m_specific,
        m_shared=cfg.m_shared,
        bn_momentum=cfg.bn_momentum,
        attention_mode=cfg.attention_mode,
        transform_enabled=cfg.transform_enabled,
        bias_net_enabled=cfg.bias_net_enabled,
    )


def apply_fairness_features(dataset: Dataset, table: fair.FairnessTable | None) -> np.ndarray:
    """Set each record's coefficient feature; returns the loss weights."""
    if table is None:
        weights = np.ones(len(dataset))
    else:
        weights = table.weights_for(dataset.scenario_raw, dataset.item_raw)
    dataset.set_fc(weights)
    return weights


def train_model(cfg, vocab, dataset: Dataset, table: fair.FairnessTable | None,
                log_lines: list[str] | None = None) -> CtrModel:
    """Mini-batch Adam over the weighted cross-entropy.

    The fairness table (when given) supplies both the per-sample loss
    weights and the coefficient feature the bias nets consume; with the
    fairness loss toggled off the loss weights stay at 1 while the feature
    keeps the table values.
    """
    model = CtrModel(vocab, model_config_from(cfg), seed=cfg.seed)
    weights = apply_fairness_features(dataset, table)
    if not cfg.fairness_loss_enabled:
        weights = np.ones(len(dataset))
    opt = nx.Adam(model.params, lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 2])
    n = len(dataset)
    # monitor loss on the final simulated day's rows
    val_sel = _day_selector(dataset.timestamps, cfg.world.impressions_per_day)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        seen = 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            batch = dataset.batch(idx)
            with nx.Tape() as tape:
                pred, _ = model.forward(batch, "train")
                loss = fair.weighted_bce(pred, batch.labels, weights[idx])
            lval = float(loss.data)
            if not np.isfinite(lval):
                raise NumericFailure(f"loss became non-finite at epoch {epoch}, row {lo}")
            grads = tape.gradients(loss, model.params)
            opt.step(grads)
            total += lval * idx.size
            seen += idx.size
        val_loss = _eval_loss(model, dataset, val_sel, weights)
        line = (f"epoch={epoch + 1} train_loss={total / seen:.6f} "
                f"val_loss={val_loss:.6f}")
        if log_lines is not None:
            log_lines.append(line)
    return model


def _day_selector(timestamps: np.ndarray, day_length: int) -> np.ndarray:
    """Boolean mask of the rows belonging to the last simulated day.

    Timestamps are day * day_length + offset, so the day index is a plain
    integer division.
    """
    last_day = int(timestamps.max()) // day_length
    return timestamps // day_length == last_day


def _eval_loss(model: CtrModel, dataset: Dataset, sel: np.ndarray,
               weights: np.ndarray) -> float:
    idx = np.flatnonzero(sel)
    if idx.size == 0:
        return float("nan")
    total = 0.0
    wsum = 0.0
    for lo in range(0, idx.size, 2048):
        part = idx[lo:lo + 2048]
        batch = dataset.batch(part)
        pred, _ = model.forward(batch, "serve")
        p = np.clip(pred.data, 1e-7, 1 - 1e-7)
        y = batch.labels
        ce = -(y * np.log(p) + (1 - y) * np.log(1 - p))
        w = weights[part]
        total += float((w * ce).sum())
        wsum += float(w.sum())
    return total / wsum


def score_dataset(model: CtrModel, dataset: Dataset, batch_size: int = 2048,
                  mode: str = "serve") -> np.ndarray:
    return model.score(dataset, batch_size=batch_size, mode=mode)


def final_day_rows(dataset: Dataset, day_length: int) -> np.ndarray:
    return np.flatnonzero(_day_selector(dataset.timestamps, day_length))


def two_pass_train(cfg, vocab, dataset: Dataset, log_lines: list[str] | None = None):
    """Bootstrap schedule: all-ones pass, coefficient table from its
    serve-mode scores on the final day, then a fresh pass with the table."""

    def train_pass(table):
        return train_model(cfg, vocab, dataset, table, log_lines)

    def score_final(model):
        rows = final_day_rows(dataset, cfg.world.impressions_per_day)
        sub_scores = np.empty(rows.size)
        for lo in range(0, rows.size, 2048):
            part = rows[lo:lo + 2048]
            pred, _ = model.forward(dataset.batch(part), "serve")
            sub_scores[lo:lo + part.size] = pred.data
        scen = [dataset.scenario_raw[i] for i in rows]
        item = [dataset.item_raw[i] for i in rows]
        return sub_scores, scen, item

    return fair.two_pass_schedule(train_pass, score_final, (cfg.clip_lo, cfg.clip_hi))


def dump_attention(model: CtrModel, dataset: Dataset, path, batch_size: int = 2048) -> None:
    """Per-record attention weights: record_index, position, item weight,
    scenario weight (single-weight modes repeat their weight)."""
    with open(path, "w", encoding="utf-8") as fh:
        for lo in range(0, len(dataset), batch_size):
            idx = np.arange(lo, min(lo + batch_size, len(dataset)))
            batch = dataset.batch(idx)
            _, diag = model.forward(batch, "serve")
            a_i = diag.get("alpha_item", diag.get("alpha"))
            a_s = diag.get("alpha_scenario", diag.get("alpha"))
            for r in range(batch.size):
                valid = int(batch.mask[r].sum())
                for pos in range(valid):
                    fh.write(f"{lo + r}\t{pos}\t{a_i[r, pos]:.17g}\t{a_s[r, pos]:.17g}\n")
