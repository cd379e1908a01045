"""
Command-line entry point of the SPARK recommender.

Usage:
    python -m cli.main_cli gen-synthetic --out data/synth --seed 7
    python -m cli.main_cli train --interactions data/synth/interactions.tsv --kg data/synth/kg.tsv --out runs/a
    python -m cli.main_cli eval --interactions ... --kg ... --checkpoint runs/a/model.sprk

Exit codes: 0 success, 2 usage/config error, 1 runtime failure. Failures print
one JSON object on stderr.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

# Allow running from project root: python -m cli.main_cli
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

from core.config import VARIANTS, TrainConfig, get_settings, load_config_file  # noqa: E402
from core.errors import ConfigError, DatasetParseError, SparkError  # noqa: E402
from core.utils import configure_logging, mean_std, parse_int_list  # noqa: E402

logger = logging.getLogger("cli.main_cli")

SWEEP_PARAMS = ("embed_dim", "core_dim", "num_layers")


class UsageError(SparkError):
    """Flag combination rejected before any work starts."""


# ── Shared helpers ────────────────────────────────────────────────────────────

def _emit(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _cutoffs(text: str) -> list[int]:
    try:
        values = parse_int_list(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma list of integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("cutoff list is empty")
    return values


def _config(args, **extra) -> TrainConfig:
    """Profile defaults < config file < flags."""
    overrides = dict(
        seed=getattr(args, "seed", None),
        threads=getattr(args, "threads", None),
        epochs=getattr(args, "epochs", None),
        cutoffs=getattr(args, "cutoffs", None),
        tail_fraction=getattr(args, "tail_fraction", None),
        variant=getattr(args, "variant", None),
        profile=getattr(args, "profile", None),
        learning_rate=getattr(args, "lr", None),
        batch_size=getattr(args, "batch_size", None),
    )
    overrides.update(extra)
    return load_config_file(getattr(args, "config", None), **overrides)


def _svd_cache(args) -> Optional[str]:
    cache = getattr(args, "svd_cache", None) or get_settings().svd_cache_dir
    return str(cache) if cache else None


def _load_data(args, cfg: TrainConfig):
    from core.data_ingest import _kg_from_triples, load_interactions, load_kg_triples, split_dataset

    ds = split_dataset(load_interactions(args.interactions), cfg.seed)
    if args.kg:
        kg = load_kg_triples(args.kg, ds.num_items, item_ids=ds.item_ids)
    else:
        logger.warning("No --kg given; training with an empty knowledge graph")
        kg = _kg_from_triples(np.zeros((0, 3), dtype=np.int64), ds.num_items)
    return ds, kg


def _registry_session():
    from core.database import get_session, init_database

    init_database(get_settings().database_url)
    return get_session()


def _train_one(args, cfg: TrainConfig, ds, kg, out_dir: Optional[Path], command: str) -> dict:
    """Build, optionally KG-pretrain, fit and test one configuration."""
    from core.audit import finish_run, record_epoch, start_run
    from core.checkpoint import best_path, load_checkpoint
    from core.eval_metrics import evaluate_ranking
    from core.training import TrainingData, build_state, fit, kg_pretrain

    checkpoint = getattr(args, "checkpoint", None)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint = checkpoint or str(out_dir / "model.sprk")

    session = _registry_session()
    run = start_run(session, command, cfg, checkpoint_path=checkpoint)
    session.commit()
    try:
        state = build_state(cfg, ds, kg, svd_cache_dir=_svd_cache(args))
        data = TrainingData.build(ds, kg)
        if getattr(args, "resume", None):
            load_checkpoint(state, args.resume, expected_hash=cfg.config_hash())
        elif not getattr(args, "skip_kg_pretrain", False):
            kg_pretrain(state, data, cfg, progress=args.progress)

        log_path = out_dir / "epochs.jsonl" if out_dir is not None else None
        fit(state, data, cfg, log_path=log_path, checkpoint_path=checkpoint,
            on_epoch=lambda record: record_epoch(session, run, record), progress=args.progress)

        if checkpoint and best_path(checkpoint).exists():
            load_checkpoint(state, best_path(checkpoint), expected_hash=cfg.config_hash())
        report = evaluate_ranking(state.model, ds, "test", cfg.cutoffs, cfg.tail_fraction)
        result = {
            "variant": cfg.variant,
            "seed": cfg.seed,
            "config_hash": cfg.config_hash(),
            "best_val_recall@20": state.best_val_recall,
            "test": report.to_dict(),
        }
        if out_dir is not None:
            (out_dir / "metrics.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n",
                                                   encoding="utf-8")
        finish_run(session, run, best_val_recall=state.best_val_recall, test_metrics=result["test"])
        session.commit()
        return result
    except Exception as exc:
        session.rollback()
        finish_run(session, run, error=f"{type(exc).__name__}: {exc}")
        session.commit()
        raise
    finally:
        session.close()


def _restore(args, cfg: TrainConfig):
    from core.checkpoint import load_checkpoint
    from core.training import build_state

    ds, kg = _load_data(args, cfg)
    state = build_state(cfg, ds, kg, svd_cache_dir=_svd_cache(args))
    load_checkpoint(state, args.checkpoint, expected_hash=cfg.config_hash())
    return state, ds


# ── Commands ──────────────────────────────────────────────────────────────────

def cmd_ingest(args) -> int:
    from core.data_ingest import dataset_stats, load_interactions, load_kg_triples, split_dataset, write_splits

    ds = load_interactions(args.interactions)
    split = split_dataset(ds, args.seed)
    paths = write_splits(split, args.out)
    payload = {"interactions": ds.report.to_dict() if ds.report else None, "splits": paths,
               "stats": dataset_stats(split)}
    if args.kg:
        payload["kg"] = load_kg_triples(args.kg, ds.num_items, item_ids=ds.item_ids).report.to_dict()
    _emit(payload)
    return 0


def cmd_gen_synthetic(args) -> int:
    from core.data_ingest import gen_synthetic_longtail, write_interactions, write_kg_triples

    ds, kg = gen_synthetic_longtail(args.users, args.items, args.per_user, args.zipf,
                                    args.kg_relations, args.kg_triples_per_item, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(ds.interactions, out / "interactions.tsv")
    write_kg_triples(kg, out / "kg.tsv")
    _emit({"interactions": str(out / "interactions.tsv"), "kg": str(out / "kg.tsv"),
           "num_interactions": int(len(ds.interactions)), "num_triples": kg.num_triples})
    return 0


def cmd_stats(args) -> int:
    from core.data_ingest import dataset_stats, load_interactions

    _emit(dataset_stats(load_interactions(args.interactions)))
    return 0


def cmd_kg_pretrain(args) -> int:
    from core.checkpoint import save_checkpoint
    from core.training import TrainingData, build_state, kg_pretrain

    cfg = _config(args)
    ds, kg = _load_data(args, cfg)
    state = build_state(cfg, ds, kg, svd_cache_dir=_svd_cache(args))
    losses = kg_pretrain(state, TrainingData.build(ds, kg), cfg, epochs=args.kg_epochs,
                         progress=args.progress)
    save_checkpoint(state, args.checkpoint, cfg.config_hash())
    _emit({"kg_losses": losses, "checkpoint": args.checkpoint})
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    ds, kg = _load_data(args, cfg)
    _emit(_train_one(args, cfg, ds, kg, Path(args.out) if args.out else None, "train"))
    return 0


def cmd_eval(args) -> int:
    from core.eval_metrics import evaluate_ranking

    cfg = _config(args)
    state, ds = _restore(args, cfg)
    report = evaluate_ranking(state.model, ds, args.split, cfg.cutoffs, cfg.tail_fraction)
    _emit(report.to_dict())
    return 0


def cmd_export_embeddings(args) -> int:
    from core.eval_metrics import export_embeddings

    cfg = _config(args)
    state, ds = _restore(args, cfg)
    frame = export_embeddings(state.model, ds, args.out, cfg.tail_fraction)
    _emit({"path": args.out, "rows": int(len(frame))})
    return 0


def cmd_grad_check(args) -> int:
    from core.training import build_toy_state, grad_check

    state, _, batch = build_toy_state(seed=args.seed if args.seed is not None else 7,
                                      variant=args.variant or "full")
    report = grad_check(state, batch, state.cfg, tolerance=args.tolerance, step=args.step)
    payload = report.to_dict()
    payload["parameters"] = state.model.parameter_count()
    _emit(payload)
    return 0 if report.passed else 1


def _summarize(results: list[dict], cutoff: int = 20) -> dict:
    summary = {}
    for slice_name in ("all", "head", "tail"):
        for metric in ("recall", "ndcg"):
            values = [r["test"]["per_slice"][slice_name][metric][str(cutoff)] for r in results]
            mean, std = mean_std(values)
            summary[f"{slice_name}_{metric}@{cutoff}"] = {"mean": mean, "std": std}
    return summary


def cmd_ablate(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown variants: {', '.join(unknown)}")
    seeds = parse_int_list(args.seeds)
    base = _config(args)
    out = Path(args.out) if args.out else None

    table = {}
    for variant in variants:
        results = []
        for seed in seeds:
            cfg = base.with_overrides(variant=variant, seed=seed)
            ds, kg = _load_data(args, cfg)
            run_dir = out / f"{variant}_s{seed}" if out else None
            results.append(_train_one(args, cfg, ds, kg, run_dir, "ablate"))
        table[variant] = _summarize(results)
        logger.info("Variant %s: tail recall@20 %.4f", variant, table[variant]["tail_recall@20"]["mean"])

    payload = {"seeds": seeds, "variants": table}
    if "full" in table and "no-hyperbolic" in table:
        full_tail = table["full"]["tail_recall@20"]["mean"]
        euclid_tail = table["no-hyperbolic"]["tail_recall@20"]["mean"]
        holds = full_tail >= euclid_tail
        payload["tail_direction_holds"] = holds
        if holds:
            logger.info("Full model tail recall@20 %.4f >= Euclidean-only %.4f", full_tail, euclid_tail)
        else:
            logger.warning("Finding: full model tail recall@20 %.4f < Euclidean-only %.4f",
                           full_tail, euclid_tail)
    _emit(payload)
    return 0


def cmd_sweep(args) -> int:
    values = parse_int_list(args.values)
    base = _config(args)
    out = Path(args.out) if args.out else None
    rows = []
    for value in values:
        cfg = base.with_overrides(**{args.param: value})
        ds, kg = _load_data(args, cfg)
        result = _train_one(args, cfg, ds, kg, out / f"{args.param}_{value}" if out else None, "sweep")
        test = result["test"]
        rows.append({
            args.param: value,
            **{f"recall@{n}": test["recall"].get(str(n)) for n in (10, 20)},
            **{f"ndcg@{n}": test["ndcg"].get(str(n)) for n in (10, 20)},
        })
    _emit({"param": args.param, "results": rows})
    return 0


def cmd_runs(args) -> int:
    from core.audit import list_runs

    session = _registry_session()
    try:
        _emit(list_runs(session, limit=args.limit))
    finally:
        session.close()
    return 0


# ── Parser ────────────────────────────────────────────────────────────────────

def _add_common(p, seed_default: Optional[int] = None) -> None:
    p.add_argument("--seed", type=int, default=seed_default, help="RNG seed (config value when omitted)")
    p.add_argument("--threads", type=int, default=None,
                   help="Torch intra-op threads; 0 uses every core, 1 is deterministic (config value when omitted)")
    p.add_argument("--log-level", default=None, help="Logging level (SPARK_LOG_LEVEL when omitted)")


def _add_model(p, interactions_required: bool = True) -> None:
    p.add_argument("--interactions", required=interactions_required, help="user<TAB>item TSV")
    p.add_argument("--kg", default=None, help="head<TAB>relation<TAB>tail TSV")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--profile", choices=("desk", "full"), default=None, help="Dimension profile")
    p.add_argument("--variant", choices=VARIANTS, default=None, help="Model variant")
    p.add_argument("--epochs", type=int, default=None, help="Joint training epochs")
    p.add_argument("--lr", type=float, default=None, help="Adam learning rate")
    p.add_argument("--batch-size", type=int, default=None, help="Interaction batch size")
    p.add_argument("--cutoffs", type=_cutoffs, default=None, help="Ranking cutoffs, e.g. 10,20")
    p.add_argument("--tail-fraction", type=float, default=None, help="Head/tail slice fraction")
    p.add_argument("--svd-cache", default=None, help="SVD factor cache directory")
    p.add_argument("--progress", action="store_true", help="Show batch progress bars")
    _add_common(p)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="spark", description="Knowledge-aware hybrid-geometry recommender.",
                                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    p = sub.add_parser("ingest", help="Validate, split and write a dataset", formatter_class=fmt)
    p.add_argument("--interactions", required=True, help="user<TAB>item TSV")
    p.add_argument("--kg", default=None, help="KG triples TSV to validate")
    p.add_argument("--out", required=True, help="Directory for train/val/test TSV files")
    _add_common(p, seed_default=7)
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("gen-synthetic", help="Generate a Zipf long-tail dataset and KG", formatter_class=fmt)
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--users", type=int, default=500, help="Number of users")
    p.add_argument("--items", type=int, default=300, help="Number of items")
    p.add_argument("--per-user", type=int, default=20, help="Interactions per user")
    p.add_argument("--zipf", type=float, default=1.2, help="Zipf exponent")
    p.add_argument("--kg-relations", type=int, default=8, help="Relation types in the synthetic KG")
    p.add_argument("--kg-triples-per-item", type=int, default=3, help="KG triples drawn per item")
    _add_common(p, seed_default=7)
    p.set_defaults(handler=cmd_gen_synthetic)

    p = sub.add_parser("stats", help="Print degree histogram and sparsity", formatter_class=fmt)
    p.add_argument("--interactions", required=True, help="user<TAB>item TSV")
    _add_common(p)
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("kg-pretrain", help="Pretrain the KG scorer alone", formatter_class=fmt)
    _add_model(p)
    p.add_argument("--kg-epochs", type=int, default=None, help="Pretraining epochs (config value when omitted)")
    p.add_argument("--checkpoint", required=True, help="Checkpoint to write")
    p.set_defaults(handler=cmd_kg_pretrain)

    p = sub.add_parser("train", help="KG-pretrain, train and test a model", formatter_class=fmt)
    _add_model(p)
    p.add_argument("--out", default=None, help="Run directory (epochs.jsonl, metrics.json, model.sprk)")
    p.add_argument("--checkpoint", default=None, help="Checkpoint path (defaults to OUT/model.sprk)")
    p.add_argument("--resume", default=None, help="Continue from a checkpoint of the same config")
    p.add_argument("--skip-kg-pretrain", action="store_true", help="Skip the KG pretraining phase")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a checkpoint", formatter_class=fmt)
    _add_model(p)
    p.add_argument("--checkpoint", required=True, help="Checkpoint to evaluate")
    p.add_argument("--split", choices=("val", "test"), default="test", help="Split to rank")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("export-embeddings", help="Write final item embeddings as TSV", formatter_class=fmt)
    _add_model(p)
    p.add_argument("--checkpoint", required=True, help="Checkpoint to export")
    p.add_argument("--out", required=True, help="TSV path")
    p.set_defaults(handler=cmd_export_embeddings)

    p = sub.add_parser("grad-check", help="Verify gradients on the toy model", formatter_class=fmt)
    p.add_argument("--variant", choices=VARIANTS, default=None, help="Model variant")
    p.add_argument("--tolerance", type=float, default=1e-4, help="Largest accepted relative error")
    p.add_argument("--step", type=float, default=1e-5, help="Central-difference step")
    _add_common(p)
    p.set_defaults(handler=cmd_grad_check)

    p = sub.add_parser("ablate", help="Train variants over seeds and compare", formatter_class=fmt)
    _add_model(p)
    p.add_argument("--variants", default=",".join(VARIANTS), help="Comma list of variants")
    p.add_argument("--seeds", default="7,8,9", help="Comma list of seeds")
    p.add_argument("--out", default=None, help="Parent directory of per-run directories")
    p.add_argument("--skip-kg-pretrain", action="store_true", help="Skip the KG pretraining phase")
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("sweep", help="Vary one dimension and report metrics", formatter_class=fmt)
    _add_model(p)
    p.add_argument("--param", choices=SWEEP_PARAMS, required=True, help="Dimension to vary")
    p.add_argument("--values", required=True, help="Comma list of values")
    p.add_argument("--out", default=None, help="Parent directory of per-run directories")
    p.add_argument("--skip-kg-pretrain", action="store_true", help="Skip the KG pretraining phase")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("runs", help="List registered runs", formatter_class=fmt)
    p.add_argument("--limit", type=int, default=20, help="Most recent runs to list")
    p.add_argument("--log-level", default=None, help="Logging level")
    p.set_defaults(handler=cmd_runs)
    return parser


def _fail(exc: BaseException, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, DatasetParseError):
        payload["line_no"] = exc.line_no
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except (ConfigError, UsageError) as exc:
        return _fail(exc, 2)
    except (SparkError, OSError, ValueError, RuntimeError) as exc:
        logger.debug("Command %s failed", args.verb, exc_info=True)
        return _fail(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
