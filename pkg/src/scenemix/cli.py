"""Command-line entry points wiring generation, training, fairness
computation, evaluation, scoring, and ablation sweeps into reproducible runs.

Exit codes: 0 success, 2 configuration problem, 3 data problem, 4 numeric
failure during training.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import config as cfgmod
from . import datagen, fairness, metrics, training
from .dataio import Dataset, read_records, read_scenario_types, write_scenario_types
from .errors import ConfigError, ContractViolation, DataError, NumericFailure, UndefinedMetric
from .experts import CtrModel
from .features import FeatureVocab


def _path(cfg, name: str) -> str:
    return name if os.path.isabs(name) else os.path.join(cfg.out_dir, name)


def _persist_config(cfg, command: str) -> None:
    os.makedirs(cfg.out_dir, exist_ok=True)
    cfgmod.save_config(os.path.join(cfg.out_dir, f"config.{command}.txt"), cfg)


def _load_policy_pairs(manifest: dict) -> set[tuple[str, str]]:
    raw = manifest.get("policy.pair_list", "")
    if not isinstance(raw, str) or not raw:
        return set()
    out = set()
    for chunk in raw.split(";"):
        s, i = chunk.split(":")
        out.add((s, i))
    return out


def _read_manifest(cfg) -> dict:
    return metrics.read_report(_path(cfg, cfg.manifest_file))


def _build_model(cfg, vocab) -> CtrModel:
    return CtrModel(vocab, training.model_config_from(cfg), seed=cfg.seed)


def _load_dataset(cfg, path) -> tuple[Dataset, FeatureVocab]:
    vocab = FeatureVocab.load(_path(cfg, cfg.vocab_file))
    types = read_scenario_types(_path(cfg, cfg.scenario_types_file))
    records = read_records(path, types)
    if not records:
        raise DataError(f"{path}: no records")
    return Dataset(records, vocab, cfg.truncation), vocab


def cmd_generate(cfg) -> int:
    world = datagen.build_world(cfg.world, cfg.seed)
    if cfg.boost_factor > 1.0:
        policy = datagen.pick_boosted_items(world, cfg.boost_frac, cfg.boost_factor,
                                            cfg.boost_selection)
    else:
        policy = datagen.InterventionPolicy.none()
    os.makedirs(cfg.out_dir, exist_ok=True)
    counts = datagen.emit_splits(world, policy, _path(cfg, cfg.train_file),
                                 _path(cfg, cfg.test_file))
    datagen.build_vocab(world).save(_path(cfg, cfg.vocab_file))
    write_scenario_types(_path(cfg, cfg.scenario_types_file), datagen.scenario_type_map(world))
    datagen.write_items_file(_path(cfg, cfg.items_file), world)
    lines = [f"{k}={v}\n" for k, v in cfgmod.config_items(cfg)]
    lines.append(f"b0={world.b0:.17g}\n")
    lines.append(f"train_rows={counts['train_rows']}\n")
    lines.append(f"test_rows={counts['test_rows']}\n")
    lines.append(f"policy.b={policy.b:.17g}\n")
    lines.append("policy.pair_list=" + ";".join(f"{s}:{i}" for s, i in policy.pairs) + "\n")
    with open(_path(cfg, cfg.manifest_file), "w", encoding="utf-8") as fh:
        fh.writelines(lines)
    _persist_config(cfg, "generate")
    for scen in sorted(counts["per_scenario"], key=lambda x: (len(x), x)):
        print(f"scenario {scen}: {counts['per_scenario'][scen]} train rows")
    print(f"train rows: {counts['train_rows']}  test rows: {counts['test_rows']}")
    return 0


def _training_dataset(cfg):
    train_path = _path(cfg, cfg.train_file)
    vocab = FeatureVocab.load(_path(cfg, cfg.vocab_file))
    types = read_scenario_types(_path(cfg, cfg.scenario_types_file))
    records = read_records(train_path, types)
    if not records:
        raise DataError(f"{train_path}: no records")
    if cfg.subsample_ratio < 1.0:
        pairs = _load_policy_pairs(_read_manifest(cfg))
        records = fairness.sub_sample(records, pairs, cfg.subsample_ratio, seed=cfg.seed)
    return Dataset(records, vocab, cfg.truncation), vocab


def cmd_train(cfg) -> int:
    dataset, vocab = _training_dataset(cfg)
    table = None
    if cfg.fairness_file:
        table = fairness.FairnessTable.load(_path(cfg, cfg.fairness_file),
                                            (cfg.clip_lo, cfg.clip_hi))
    log_lines: list[str] = []
    model = training.train_model(cfg, vocab, dataset, table, log_lines)
    model.save(_path(cfg, cfg.checkpoint_file))
    with open(os.path.join(cfg.out_dir, "training.log"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(log_lines) + "\n")
    _persist_config(cfg, "train")
    for line in log_lines:
        print(line)
    return 0


def cmd_compute_fc(cfg) -> int:
    dataset, vocab = _training_dataset(cfg)
    model = _build_model(cfg, vocab)
    model.load(_path(cfg, cfg.checkpoint_file))
    rows = training.final_day_rows(dataset, cfg.world.impressions_per_day)
    scores = np.empty(rows.size)
    for lo in range(0, rows.size, 2048):
        part = rows[lo:lo + 2048]
        pred, _ = model.forward(dataset.batch(part), "serve")
        scores[lo:lo + part.size] = pred.data
    scen = [dataset.scenario_raw[i] for i in rows]
    item = [dataset.item_raw[i] for i in rows]
    day = int(dataset.timestamps.max()) // cfg.world.impressions_per_day
    stats = fairness.accumulate_stats(scores, scen, item, day=day)
    stats.save(os.path.join(cfg.out_dir, "exposure_stats.csv"))
    table = fairness.compute_fairness(stats, (cfg.clip_lo, cfg.clip_hi))
    out = cfg.fairness_file or "fairness.csv"
    table.save(_path(cfg, out))
    _persist_config(cfg, "compute-fc")
    print(f"fairness table: {len(table.values)} pairs -> {_path(cfg, out)}")
    return 0


def _flagged_pairs(table: fairness.FairnessTable, lo: float, hi: float):
    return {pair for pair, w in table.values.items() if w < lo or w > hi}


def cmd_evaluate(cfg, base_report: str | None = None) -> int:
    dataset, vocab = _load_dataset(cfg, _path(cfg, cfg.test_file))
    model = _build_model(cfg, vocab)
    model.load(_path(cfg, cfg.checkpoint_file))
    scores = training.score_dataset(model, dataset)
    scored = metrics.ScoredSet(scores, dataset.labels, dataset.scenario_raw,
                               dataset.category_raw, dataset.item_raw)
    exclude = None
    if cfg.fairness_file and os.path.exists(_path(cfg, cfg.fairness_file)):
        table = fairness.FairnessTable.load(_path(cfg, cfg.fairness_file),
                                            (cfg.clip_lo, cfg.clip_hi))
        exclude = _flagged_pairs(table, cfg.flag_lo, cfg.flag_hi)
    base = None
    if base_report:
        ref = metrics.read_report(base_report)
        if "auc.overall" not in ref:
            raise DataError(f"{base_report}: missing auc.overall")
        name = os.path.splitext(os.path.basename(base_report))[0]
        base = {name: float(ref["auc.overall"])}
    report = metrics.build_report(scored, base, cfg.report_top_frac, exclude)
    metrics.write_report(_path(cfg, cfg.report_file), report)
    _persist_config(cfg, "evaluate")
    print(f"auc.overall={report.overall_auc:.6f}")
    for name, v in report.rela_impr_vs.items():
        print(f"relaimpr.vs.{name}={v:.3f}")
    return 0


def cmd_score(cfg, input_path: str | None, output_path: str | None,
              dump_attention: str | None) -> int:
    path = input_path or _path(cfg, cfg.test_file)
    dataset, vocab = _load_dataset(cfg, path)
    model = _build_model(cfg, vocab)
    model.load(_path(cfg, cfg.checkpoint_file))
    scores = training.score_dataset(model, dataset)
    out = output_path or os.path.join(cfg.out_dir, "scores.txt")
    with open(out, "w", encoding="utf-8") as fh:
        for i, s in enumerate(scores):
            fh.write(f"{i}\t{s:.17g}\n")
    if dump_attention:
        training.dump_attention(model, dataset, dump_attention)
    _persist_config(cfg, "score")
    print(f"scored {len(scores)} records -> {out}")
    return 0


ATTENTION_SUITE = ("mean", "target_only", "scenario_only", "concat_query",
                   "hierarchical", "full")
BIAS_SUITE = ("base", "subsample_0.9", "subsample_0.8", "subsample_0.7",
              "subsample_0.6", "bias_net", "loss", "full")
TRANSFORM_SUITE = ("base", "layers_2", "layers_3", "layers_4", "layers_5", "full")


def _suite_variant(cfg, suite: str, row: str):
    v = dataclasses.replace(cfg, world=dataclasses.replace(cfg.world))
    if suite == "attention":
        v.attention_mode = row
        return v
    if suite == "bias":
        v.bias_net_enabled = False
        v.fairness_loss_enabled = False
        if row.startswith("subsample_"):
            v.subsample_ratio = float(row.split("_")[1])
        elif row == "bias_net":
            v.bias_net_enabled = True
        elif row == "loss":
            v.fairness_loss_enabled = True
        elif row == "full":
            v.bias_net_enabled = True
            v.fairness_loss_enabled = True
        return v
    if suite == "transform":
        v.transform_enabled = False
        if row.startswith("layers_"):
            v.expert_layers = int(row.split("_")[1])
        elif row == "full":
            v.transform_enabled = True
            v.expert_layers = 1
        return v
    raise ConfigError(f"unknown ablation suite {suite!r}")


def _run_variant(v, dataset, vocab, test_set) -> float:
    needs_fc = v.bias_net_enabled or v.fairness_loss_enabled
    if needs_fc:
        _, _, model = training.two_pass_train(v, vocab, dataset)
    else:
        model = training.train_model(v, vocab, dataset, None)
    scores = training.score_dataset(model, test_set)
    return metrics.auc(scores, test_set.labels)


def cmd_ablate(cfg, suite: str) -> int:
    rows = {"attention": ATTENTION_SUITE, "bias": BIAS_SUITE,
            "transform": TRANSFORM_SUITE}.get(suite)
    if rows is None:
        raise ConfigError(f"unknown ablation suite {suite!r} "
                          "(expected attention, bias, or transform)")
    base_row = rows[0]
    per_row: dict[str, list[float]] = {r: [] for r in rows}
    for j in range(cfg.ablate_seeds):
        seed = cfg.seed + j
        seed_cfg = dataclasses.replace(cfg, world=dataclasses.replace(cfg.world),
                                       seed=seed,
                                       out_dir=os.path.join(cfg.out_dir, f"seed{seed}"))
        cmd_generate(seed_cfg)
        for row in rows:
            v = _suite_variant(seed_cfg, suite, row)
            if suite == "bias" and row.startswith("subsample_"):
                dataset, vocab = _training_dataset(v)
            else:
                v.subsample_ratio = 1.0
                dataset, vocab = _training_dataset(v)
            test_set, _ = _load_dataset(v, _path(v, v.test_file))
            per_row[row].append(_run_variant(v, dataset, vocab, test_set))
    med = {r: metrics.median_over_seeds(per_row[r]) for r in rows}
    out_path = os.path.join(cfg.out_dir, f"ablate.{suite}.txt")
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for r in rows:
            rel = metrics.rela_impr(med[r], med[base_row])
            fh.write(f"row.{r}.auc={med[r]:.17g}\n")
            fh.write(f"row.{r}.relaimpr={rel:.17g}\n")
            for j, v in enumerate(per_row[r]):
                fh.write(f"row.{r}.seed.{cfg.seed + j}={v:.17g}\n")
    _persist_config(cfg, f"ablate.{suite}")
    for r in rows:
        print(f"{suite}/{r}: median auc {med[r]:.4f} "
              f"relaimpr {metrics.rela_impr(med[r], med[base_row]):.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scenemix",
                                description="Multi-scenario CTR model workbench")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--seed", type=int, help="override the seed")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key")

    common(sub.add_parser("generate", help="simulate a world and write the splits"))
    common(sub.add_parser("train", help="train a model on the generated logs"))
    common(sub.add_parser("compute-fc", help="compute fairness coefficients"))
    ev = sub.add_parser("evaluate", help="score the test split and report metrics")
    common(ev)
    ev.add_argument("--base", help="report file to compare against")
    sc = sub.add_parser("score", help="score a record file")
    common(sc)
    sc.add_argument("--input", help="record file (default: the test split)")
    sc.add_argument("--output", help="destination (default: out_dir/scores.txt)")
    sc.add_argument("--dump-attention", help="write per-record attention weights here")
    ab = sub.add_parser("ablate", help="run an ablation suite")
    common(ab)
    ab.add_argument("--suite", required=True, choices=("attention", "bias", "transform"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config) if args.config else cfgmod.RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        cfgmod.apply_overrides(cfg, args.set)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "compute-fc":
            return cmd_compute_fc(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.base)
        if args.command == "score":
            return cmd_score(cfg, args.input, args.output, args.dump_attention)
        return cmd_ablate(cfg, args.suite)
    except (ConfigError, ContractViolation) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, UndefinedMetric, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
