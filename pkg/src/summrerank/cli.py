"""Command-line entry point: ``summrerank <subcommand> [flags] [KEY=VALUE ...]``.

Every flag falls back to an environment variable ``SUMMRERANK_<FLAG>``
(e.g. ``SUMMRERANK_POOLS``).  Exit codes: 0 success, 1 usage error,
2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .encoder import OracleScorer, score_candidates, select_best
from .evaluation import (
    RankedPool,
    histogram_csv,
    identical_score_stats,
    model_order,
    oracle_order,
    qualities,
    ranking_report,
    report_json,
    rows_to_csv,
    semantic_source,
    sweep,
    sweep_table,
    z_distribution,
    z_statistic,
)
from .losses import LossConfig
from .pool import (
    PoolFormatError,
    attach_scores,
    generate_synthetic_corpus,
    load_pools,
    load_scores,
    write_pools,
)
from .training import NonFiniteLossError, TrainConfig, load_checkpoint, save_checkpoint, train

logger = logging.getLogger("summrerank")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
ENV_PREFIX = "SUMMRERANK_"
SUBCOMMANDS = ("analyze", "train", "rank", "evaluate", "sweep", "gen-synthetic")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _env(name: str, default=None, kind: Callable = str):
    raw = os.environ.get(ENV_PREFIX + name.upper())
    if raw is None:
        return default
    try:
        return kind(raw)
    except ValueError:
        raise UsageError(f"environment variable {ENV_PREFIX + name.upper()}={raw!r} is not a valid {kind.__name__}")


def _env_bool(name: str) -> bool:
    return os.environ.get(ENV_PREFIX + name.upper(), "").strip().lower() in {"1", "true", "yes", "on"}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="summrerank", description="Train and evaluate summary re-rankers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--pools", default=_env("pools"))
        p.add_argument("--scores", default=_env("scores"))
        p.add_argument("--checkpoint", default=_env("checkpoint"))
        p.add_argument("--config", default=_env("config"))
        p.add_argument("--seed", type=int, default=_env("seed", None, int))
        p.add_argument("--workers", type=int, default=_env("workers", 1, int))
        p.add_argument("--out", default=_env("out"))
        p.add_argument("--force", action="store_true", default=_env_bool("force"))
        p.add_argument("overrides", nargs="*", metavar="KEY=VALUE")
    return parser


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if raw.lower() in ("none", "null"):
            return None
        return raw


def read_config_file(path) -> dict[str, Any]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            data[key.strip()] = _parse_value(value.strip())
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a mapping")
    return _flatten(data)


def _flatten(data: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for key, val in data.items():
        if isinstance(val, dict) and key in ("loss",):
            out.update(_flatten(val, prefix + key + "."))
        else:
            out[prefix + key] = val
    return out


def parse_overrides(items: Sequence[str]) -> dict[str, Any]:
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not KEY=VALUE")
        key, value = item.split("=", 1)
        out[key.strip()] = _parse_value(value.strip())
    return out


def resolve_config(args) -> dict[str, Any]:
    cfg: dict[str, Any] = {}
    if args.config:
        if not Path(args.config).exists():
            raise UsageError(f"config file {args.config} does not exist")
        cfg.update(read_config_file(args.config))
    cfg.update(parse_overrides(args.overrides))
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"loss"}
_LOSS_KEYS = {f.name for f in fields(LossConfig)}


def train_config_from(flat: dict[str, Any], extra_keys: Sequence[str] = ()) -> TrainConfig:
    train_kw, loss_kw = {}, {}
    for key, val in flat.items():
        bare = key[5:] if key.startswith("loss.") else key
        if key in _TRAIN_KEYS:
            train_kw[key] = val
        elif bare in _LOSS_KEYS:
            loss_kw[bare] = val
        elif key not in extra_keys:
            raise UsageError(f"unknown config key {key!r}")
    try:
        return TrainConfig(loss=LossConfig(**loss_kw), **train_kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


# ---------------------------------------------------------------------------
# io helpers
# ---------------------------------------------------------------------------


def _need(args, *names):
    for name in names:
        if not getattr(args, name):
            raise UsageError(f"--{name} is required for {args.command}")


def _check_outputs(paths: Sequence[Path], force: bool) -> None:
    for path in paths:
        if path.exists() and not force:
            raise UsageError(f"{path} exists; pass --force to overwrite")


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def _read_corpus(args) -> list:
    path = Path(args.pools)
    if not path.exists():
        raise DataError(f"pools file {path} does not exist")
    pools = list(load_pools(path))
    if args.scores:
        if not Path(args.scores).exists():
            raise DataError(f"scores file {args.scores} does not exist")
        pools = attach_scores(pools, load_scores(args.scores))
    return pools


def _read_ranked_extras(path) -> list[dict]:
    extras = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            if raw.strip():
                rec = json.loads(raw)
                extras.append({k: rec[k] for k in ("order", "scores") if k in rec})
    return extras


def _load_model(spec: str):
    if spec == "oracle":
        return OracleScorer()
    if not Path(spec).exists():
        raise DataError(f"checkpoint {spec} does not exist")
    try:
        return load_checkpoint(spec).model
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {spec}: {exc}") from exc


def _parallel_map(fn, items: Sequence, workers: int) -> list:
    if workers < 1:
        raise UsageError("--workers must be >= 1")
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")


# per-pool work units (module level so they pickle)


def _pool_qualities(pool):
    return qualities(pool)


class _ScoreJob:
    def __init__(self, model):
        self.model = model

    def __call__(self, pool):
        return score_candidates(self.model, pool)


class _RankJob:
    def __init__(self, model):
        self.model = model

    def __call__(self, pool):
        return model_order(self.model, pool)


class _OracleJob:
    def __init__(self, by):
        self.by = by

    def __call__(self, pool):
        return oracle_order(pool, self.by)


def _ranked_from_order(item):
    pool, order = item
    lex, sem = qualities(pool)
    return RankedPool(pool, order, lex, sem)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_synthetic(args, cfg) -> None:
    _need(args, "out")
    out = Path(args.out)
    _check_outputs([out], args.force)
    allowed = {"n_docs", "m_candidates", "noise_levels", "false_positives", "seed", "id_prefix"}
    unknown = set(cfg) - allowed
    if unknown:
        raise UsageError(f"unknown keys for gen-synthetic: {sorted(unknown)}")
    levels = cfg.get("noise_levels")
    if isinstance(levels, str):
        levels = [float(x) for x in levels.split(",")]
    try:
        pools = generate_synthetic_corpus(
            int(cfg.get("n_docs", 100)),
            int(cfg.get("m_candidates", 8 if levels is None else len(levels))),
            levels,
            seed=int(cfg.get("seed", 0)),
            false_positives=int(cfg.get("false_positives", 0)),
            id_prefix=str(cfg.get("id_prefix", "syn")),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    write_pools(pools, out)
    logger.info("wrote %d pools to %s", len(pools), out)


def cmd_analyze(args, cfg) -> None:
    _need(args, "pools")
    pools = _read_corpus(args)
    out = Path(args.out) if args.out else None
    if out:
        _check_outputs([out, _sibling(out, ".zhist.csv")], args.force)
    quals = _parallel_map(_pool_qualities, pools, args.workers)
    zs = [z_statistic(lex, sem) for lex, sem in quals]
    zd = z_distribution(zs, max((p.m for p in pools), default=1))
    report = {
        "n_pools": len(pools),
        "z_histogram": zd["counts"],
        "z_percent": zd["percent"],
        "z_share_gt_1": zd["share_z_gt_1"],
        "identical_score_rate": identical_score_stats(pools),
        "semantic_source": semantic_source(pools),
    }
    _emit(json.dumps(report, indent=2, sort_keys=True) + "\n", out)
    if out:
        _sibling(out, ".zhist.csv").write_text(histogram_csv(zd["counts"]), encoding="utf-8")


def cmd_train(args, cfg) -> None:
    _need(args, "pools", "out")
    out = Path(args.out)
    log_path = _sibling(out, ".log.jsonl")
    _check_outputs([out, log_path], args.force)
    validation_path = cfg.pop("validation", None)
    config = train_config_from(cfg)
    logger.info("resolved config: %s", json.dumps(config.to_dict(), sort_keys=True))
    pools = _read_corpus(args)
    validation = list(load_pools(validation_path)) if validation_path else None
    records: list[str] = []
    try:
        ckpt = train(pools, config, validation, log=lambda rec: records.append(json.dumps(rec, sort_keys=True)))
    except NonFiniteLossError as exc:
        diag = _sibling(out, ".diagnostics.json")
        diag.write_text(json.dumps(exc.diagnostics, indent=2), encoding="utf-8")
        log_path.write_text("".join(r + "\n" for r in records), encoding="utf-8")
        logger.error("%s (diagnostics in %s)", exc, diag)
        raise
    save_checkpoint(ckpt, out)
    log_path.write_text("".join(r + "\n" for r in records), encoding="utf-8")
    logger.info("trained %d steps; objective %.4f -> %.4f", ckpt.step, ckpt.metrics["initial_objective"], ckpt.metrics["final_objective"])


def cmd_rank(args, cfg) -> None:
    _need(args, "pools", "checkpoint", "out")
    out = Path(args.out)
    _check_outputs([out], args.force)
    if cfg:
        raise UsageError(f"rank takes no config keys, got {sorted(cfg)}")
    model = _load_model(args.checkpoint)
    pools = _read_corpus(args)
    all_scores = _parallel_map(_ScoreJob(model), pools, args.workers)
    with open(out, "w", encoding="utf-8") as fh:
        for pool, scores in zip(pools, all_scores):
            rec = pool.to_record()
            best = select_best(scores)
            rec["scores"] = [float(s) for s in scores]
            rec["order"] = np.argsort(-scores, kind="stable").tolist()
            rec["selected"] = best
            rec["selected_summary"] = pool.candidates[best]
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def cmd_evaluate(args, cfg) -> None:
    _need(args, "pools")
    oracle = cfg.pop("oracle", None)
    if cfg:
        raise UsageError(f"unknown keys for evaluate: {sorted(cfg)}")
    out = Path(args.out) if args.out else None
    if out:
        _check_outputs([out, _sibling(out, ".pools.csv"), _sibling(out, ".zhist.csv")], args.force)
    pools = _read_corpus(args)
    if oracle is not None:
        if oracle not in ("lexical", "semantic"):
            raise UsageError("oracle must be 'lexical' or 'semantic'")
        ranked_pools = _parallel_map(_OracleJob(oracle), pools, args.workers)
        source = f"oracle-{oracle}"
    elif args.checkpoint:
        ranked_pools = _parallel_map(_RankJob(_load_model(args.checkpoint)), pools, args.workers)
        source = "checkpoint"
    else:
        extras = _read_ranked_extras(args.pools)
        if not all("order" in e for e in extras):
            raise UsageError("pools carry no ranking; pass --checkpoint, oracle=..., or a file produced by rank")
        try:
            ranked_pools = _parallel_map(
                _ranked_from_order, [(p, e["order"]) for p, e in zip(pools, extras)], args.workers
            )
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        source = "ranked-file"
    report, rows = ranking_report(ranked_pools)
    report.extra["ranking_source"] = source
    _emit(report_json(report), out)
    if out:
        _sibling(out, ".pools.csv").write_text(rows_to_csv(rows), encoding="utf-8")
        _sibling(out, ".zhist.csv").write_text(histogram_csv(report.z_histogram), encoding="utf-8")


def cmd_sweep(args, cfg) -> None:
    _need(args, "pools")
    out = Path(args.out) if args.out else None
    if out:
        _check_outputs([out, _sibling(out, ".csv")], args.force)
    eval_path = cfg.pop("eval_pools", None)
    grid_spec = cfg.pop("grid", None)
    base_flat = {}
    grid: dict[str, list] = {}
    for key, val in cfg.items():
        if isinstance(val, str) and "," in val:
            grid[key] = [_parse_value(v) for v in val.split(",")]
        elif isinstance(val, list):
            grid[key] = val
        else:
            base_flat[key] = val
    if isinstance(grid_spec, dict):
        grid.update({k: list(v) for k, v in grid_spec.items()})
    if not grid:
        raise UsageError("sweep needs at least one grid axis (KEY=v1,v2 or a 'grid' mapping)")
    base = train_config_from(base_flat)
    logger.info("sweep base config: %s grid: %s", json.dumps(base.to_dict(), sort_keys=True), grid)
    pools = _read_corpus(args)
    eval_pools = list(load_pools(eval_path)) if eval_path else None
    rows = sweep(grid, pools, base, eval_pools)
    _emit(json.dumps(rows, indent=2, sort_keys=True) + "\n", out)
    if out:
        _sibling(out, ".csv").write_text(rows_to_csv(sweep_table(rows)), encoding="utf-8")


COMMANDS = {
    "analyze": cmd_analyze,
    "train": cmd_train,
    "rank": cmd_rank,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "gen-synthetic": cmd_gen_synthetic,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing subcommand; choose from {', '.join(SUBCOMMANDS)}")
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        cfg = resolve_config(args)
        logger.info("%s: resolved options %s", args.command, json.dumps(cfg, sort_keys=True, default=str))
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"summrerank: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, PoolFormatError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"summrerank: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLossError, FloatingPointError) as exc:
        print(f"summrerank: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
