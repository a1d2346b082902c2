"""Command-line driver.

Subcommands: prepare (scan + index + splits), features (populate the feature
cache), train (fit + evaluate), grid (factor sweep), distill (teacher to
student), report (re-render a results document as tables and figures).

Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from lungsound import icbhi
from lungsound.architectures import build_model, load_model, save_model
from lungsound.audio import AudioError
from lungsound.config import (
    ConfigError,
    ExperimentConfig,
    GridSpec,
    build_config,
)
from lungsound.frontends import FRONTENDS, CacheError, FrontendConfig
from lungsound.metrics import ConfusionMatrix, SUBTASKS, pool_confusions
from lungsound.nn.checkpoint import CheckpointError
from lungsound.nn.store import TrainingError, count_params
from lungsound.patches import PATCH_WIDTHS
from lungsound.pipeline import (
    FeatureStats,
    evaluate_model,
    flat_patches,
    instance_patches,
    populate_cache,
    recording_instances,
)
from lungsound.report import (
    confusion_figure,
    grid_figure,
    load_results,
    render_confusion,
    results_document,
    safe_scores,
    save_results,
    score_figure,
    write_history,
)
from lungsound.training import TrainConfig, distill, train

SECONDS_PER_FRAME = 256.0 / 16000.0


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--preset", choices=("task1-final", "task2-final"))
    p.add_argument("--task", type=int, choices=(1, 2))
    p.add_argument("--subtask", choices=SUBTASKS, help="headline subtask for summaries")
    p.add_argument("--frontend", choices=FRONTENDS)
    p.add_argument("--patch-width", type=int, choices=PATCH_WIDTHS, dest="patch_width")
    p.add_argument("--overlap", type=float, choices=(0.0, 0.5))
    p.add_argument("--mixup", choices=("on", "off"))
    p.add_argument("--split", choices=("kfold5", "official", "ratio"))
    p.add_argument("--model", choices=("cdnn", "cnn_moe", "student"))
    p.add_argument("--experts", type=int, metavar="K")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--fold", type=int, help="restrict k-fold runs to one fold index")
    p.add_argument("--loss", choices=("auto", "cross_entropy", "kl"))
    p.add_argument("--gamma", type=float, help="distillation embedding-loss weight")
    p.add_argument("--train-frac", type=float, dest="train_frac")
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--out", dest="out_dir")


def _config_from_args(args) -> ExperimentConfig:
    keys = (
        "task", "frontend", "patch_width", "overlap", "model", "experts", "lr",
        "epochs", "batch", "seed", "split", "train_frac", "fold", "loss",
        "gamma", "data_root", "cache_dir", "out_dir",
    )
    overrides = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "mixup", None) is not None:
        overrides["mixup"] = args.mixup == "on"
    return build_config(args.config, args.preset, overrides)


def _headline_subtask(cfg: ExperimentConfig, args) -> str:
    sub = getattr(args, "subtask", None)
    if sub is not None:
        if int(sub[0]) != cfg.task:
            raise ConfigError(f"subtask {sub} does not belong to task {cfg.task}")
        return sub
    return "1-1" if cfg.task == 1 else "2-1"


def _index_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out_dir) / "index.json"


def _load_index(cfg: ExperimentConfig):
    path = _index_path(cfg)
    if not path.exists():
        raise icbhi.DatasetError(f"no index at {path}; run the prepare subcommand first")
    return icbhi.load_index(path)


def _cache_dir(cfg: ExperimentConfig) -> Path:
    d = Path(cfg.cache_dir) if cfg.cache_dir else Path(cfg.out_dir) / "cache"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _split_plan(cfg: ExperimentConfig, index, saved: dict):
    if cfg.split == "kfold5":
        plan = saved.get("kfold5")
        return plan if plan is not None else icbhi.make_kfold_split(index, 5, cfg.seed)
    if cfg.split == "official":
        plan = saved.get("official")
        if plan is None:
            raise icbhi.DatasetError(
                "no official split in the index; prepare did not find the challenge list"
            )
        return plan
    return icbhi.make_ratio_split(index, cfg.train_frac, cfg.seed)


def _fold_runs(cfg: ExperimentConfig, plan, single_fold: bool = False):
    """Yield (tag, train_ids, test_ids) per evaluation fold."""
    if cfg.split == "kfold5":
        tags = plan.tags()
        if cfg.fold is not None:
            if not 0 <= cfg.fold < len(tags):
                raise ConfigError(f"fold must be in [0, {len(tags)}), got {cfg.fold}")
            tags = [tags[cfg.fold]]
        elif single_fold:
            tags = tags[:1]
        return [(tag,) + plan.train_test(tag) for tag in tags]
    return [("test",) + plan.train_test("test")]


def _train_and_eval(cfg: ExperimentConfig, index, train_ids, test_ids, cache_dir):
    fe_cfg = FrontendConfig()
    stats = FeatureStats()
    train_inst = recording_instances(
        index, train_ids, cfg.task, cfg.frontend, fe_cfg, cache_dir, stats
    )
    test_inst = recording_instances(
        index, test_ids, cfg.task, cfg.frontend, fe_cfg, cache_dir, stats
    )
    train_pairs = instance_patches(train_inst, cfg.patch_width, cfg.overlap, cfg.task)
    test_pairs = instance_patches(test_inst, cfg.patch_width, cfg.overlap, cfg.task)
    model = build_model(cfg.model, cfg.n_classes, cfg.experts, seed=cfg.seed)
    tc = TrainConfig(
        epochs=cfg.epochs, batch_size=cfg.batch, lr=cfg.lr, loss=cfg.loss, seed=cfg.seed
    )
    history = train(model, flat_patches(train_pairs), tc, mixup=cfg.mixup_config())
    cm = evaluate_model(model, test_pairs, cfg.task)
    return model, history, cm, stats


def _run_dir(cfg: ExperimentConfig, kind: str) -> Path:
    d = Path(cfg.out_dir) / f"{kind}-task{cfg.task}-{cfg.model}-{cfg.config_hash()}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_run_outputs(run_dir: Path, cfg: ExperimentConfig, cm, split_scheme, extra=None):
    scores = safe_scores(cm)
    table = render_confusion(cm, scores)
    (run_dir / "confusion.tsv").write_text(table)
    doc = results_document(cfg.resolved(), cfg.config_hash(), cm, scores, split_scheme, extra)
    save_results(run_dir / "results.json", doc)
    confusion_figure(cm, run_dir / "confusion.png")
    score_figure(scores, run_dir / "scores.png", title=f"task {cfg.task} ({cfg.model})")
    return table, scores


# ---------------------------------------------------------------- subcommands


def cmd_prepare(args) -> int:
    cfg = _config_from_args(args)
    if not cfg.data_root:
        raise ConfigError("prepare needs --data-root (or the dataset root env var)")
    index = icbhi.scan_dataset(cfg.data_root)
    if not index.diagnoses:
        raise icbhi.DatasetError(
            f"no diagnosis table under {cfg.data_root} "
            f"(looked for {', '.join(icbhi.DIAGNOSIS_FILENAMES)})"
        )
    splits = {"kfold5": icbhi.make_kfold_split(index, 5, cfg.seed)}
    split_file = getattr(args, "split_file", None)
    if split_file is None:
        hits = sorted(Path(cfg.data_root).rglob("*train_test*.txt"))
        split_file = hits[0] if hits else None
    if split_file is not None:
        splits["official"] = icbhi.make_official_split(index, split_file)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    icbhi.save_index(index, out / "index.json", splits)
    counts = index.cycle_label_counts()
    print(f"indexed {index.n_recordings} recordings / {index.n_cycles} cycles "
          f"/ {len(index.patients)} patients")
    print("cycle labels: " + ", ".join(f"{k.name.lower()}={v}" for k, v in counts.items()))
    print(f"splits: {', '.join(sorted(splits))} -> {out / 'index.json'}")
    for w in index.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_features(args) -> int:
    cfg = _config_from_args(args)
    index, _ = _load_index(cfg)
    cache = _cache_dir(cfg)
    stats = populate_cache(index, cfg.task, cfg.frontend, cache)
    for w in stats.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"feature cache {cache}: computed={stats.computed} "
          f"recomputed={stats.recomputed} loaded={stats.loaded}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    headline = _headline_subtask(cfg, args)
    index, saved = _load_index(cfg)
    plan = _split_plan(cfg, index, saved)
    cache = _cache_dir(cfg)
    run_dir = _run_dir(cfg, "train")
    cms = []
    for tag, train_ids, test_ids in _fold_runs(cfg, plan):
        model, history, cm, _ = _train_and_eval(cfg, index, train_ids, test_ids, cache)
        save_model(model, run_dir / f"model-{tag}.ckpt")
        write_history(run_dir / f"history-{tag}.tsv", history)
        cms.append(cm)
        print(f"{tag}: trained on {len(train_ids)} recordings, "
              f"tested on {len(test_ids)}, final loss {history[-1].loss:.4f}")
    pooled = pool_confusions(cms)
    table, scores = _write_run_outputs(run_dir, cfg, pooled, plan.scheme)
    print(table, end="")
    triple = scores.get(headline)
    if triple is not None:
        print(f"headline task {headline}: score {triple.score:.4f} "
              f"(sens {triple.sensitivity:.4f}, spec {triple.specificity:.4f})")
    print(f"outputs in {run_dir}")
    return 0


def cmd_grid(args) -> int:
    cfg = _config_from_args(args)
    headline = _headline_subtask(cfg, args)
    axes = tuple(a.strip() for a in args.axes.split(",") if a.strip())
    grid = GridSpec(axes=axes, all_folds=args.all_folds)
    index, saved = _load_index(cfg)
    cache = _cache_dir(cfg)
    run_dir = _run_dir(cfg, "grid")
    rows = []
    for point in grid.points(cfg):
        plan = _split_plan(point, index, saved)
        cms = []
        for tag, train_ids, test_ids in _fold_runs(point, plan, single_fold=not grid.all_folds):
            _, _, cm, _ = _train_and_eval(point, index, train_ids, test_ids, cache)
            cms.append(cm)
        pooled = pool_confusions(cms)
        scores = safe_scores(pooled)
        label = _point_label(axes, point)
        triple = scores.get(headline)
        rows.append(
            {
                "label": label,
                "config_hash": point.config_hash(),
                "scores": scores,
                "score": None if triple is None else triple.score,
            }
        )
        print(f"grid point {label}: "
              + ("score undefined" if triple is None else f"score {triple.score:.4f}"))
    _write_grid_outputs(run_dir, cfg, axes, rows, headline)
    print(f"outputs in {run_dir}")
    return 0


def _point_label(axes, point: ExperimentConfig) -> str:
    parts = []
    for a in axes:
        v = getattr(point, a)
        if a == "patch_width":
            parts.append(f"W={v} ({v * SECONDS_PER_FRAME:.2f}s)")
        elif a == "mixup":
            parts.append("mixup" if v else "no-mixup")
        elif a == "overlap":
            parts.append(f"overlap={v:g}")
        else:
            parts.append(str(v))
    return " ".join(parts)


def _write_grid_outputs(run_dir: Path, cfg: ExperimentConfig, axes, rows, headline):
    lines = ["label\tconfig_hash\tsubtask\tsensitivity\tspecificity\ticbhi_score"]
    json_rows = []
    for r in rows:
        for subtask, triple in r["scores"].items():
            if triple is None:
                lines.append(f"{r['label']}\t{r['config_hash']}\t{subtask}\t"
                             "undefined\tundefined\tundefined")
            else:
                lines.append(
                    f"{r['label']}\t{r['config_hash']}\t{subtask}\t"
                    f"{triple.sensitivity:.6f}\t{triple.specificity:.6f}\t{triple.score:.6f}"
                )
        json_rows.append(
            {
                "label": r["label"],
                "config_hash": r["config_hash"],
                "scores": {
                    k: None if t is None else
                    {"sensitivity": t.sensitivity, "specificity": t.specificity,
                     "icbhi_score": t.score}
                    for k, t in r["scores"].items()
                },
            }
        )
    (run_dir / "grid.tsv").write_text("\n".join(lines) + "\n")
    save_results(
        run_dir / "grid.json",
        {
            "axes": list(axes),
            "headline_subtask": headline,
            "config": cfg.resolved(),
            "config_hash": cfg.config_hash(),
            "rows": json_rows,
        },
    )
    grid_figure(rows, run_dir / "grid.png", title=f"grid over {', '.join(axes)}")


def cmd_distill(args) -> int:
    cfg = _config_from_args(args)
    teacher = load_model(args.teacher)
    if teacher.arch != "cnn_moe":
        raise ConfigError(f"teacher checkpoint is {teacher.arch!r}, expected cnn_moe")
    cfg = cfg.replace(task=2 if teacher.n_classes == 3 else 1, model="student")
    index, saved = _load_index(cfg)
    plan = _split_plan(cfg, index, saved)
    cache = _cache_dir(cfg)
    run_dir = _run_dir(cfg, "distill")
    tag, train_ids, test_ids = _fold_runs(cfg, plan, single_fold=True)[0]
    fe_cfg = FrontendConfig()
    stats = FeatureStats()
    train_inst = recording_instances(index, train_ids, cfg.task, cfg.frontend, fe_cfg, cache, stats)
    test_inst = recording_instances(index, test_ids, cfg.task, cfg.frontend, fe_cfg, cache, stats)
    train_pairs = instance_patches(train_inst, cfg.patch_width, cfg.overlap, cfg.task)
    test_pairs = instance_patches(test_inst, cfg.patch_width, cfg.overlap, cfg.task)
    student = build_model("student", teacher.n_classes, seed=cfg.seed)
    tc = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch, lr=cfg.lr, seed=cfg.seed)
    history = distill(teacher, student, flat_patches(train_pairs), tc, gamma=cfg.gamma)
    save_model(student, run_dir / "student.ckpt")
    write_history(run_dir / "history.tsv", history)
    cm_student = evaluate_model(student, test_pairs, cfg.task)
    cm_teacher = evaluate_model(teacher, test_pairs, cfg.task)
    n_teacher, n_student = count_params(teacher.store), count_params(student.store)
    extra = {
        "teacher_checkpoint": str(args.teacher),
        "teacher_params": n_teacher,
        "student_params": n_student,
        "param_ratio": n_student / n_teacher,
        "gamma": cfg.gamma,
        "teacher_scores": {
            k: None if t is None else
            {"sensitivity": t.sensitivity, "specificity": t.specificity, "icbhi_score": t.score}
            for k, t in safe_scores(cm_teacher).items()
        },
    }
    table, _ = _write_run_outputs(run_dir, cfg, cm_student, plan.scheme, extra)
    print(f"fold {tag}: teacher {n_teacher} params, student {n_student} params "
          f"(ratio {n_student / n_teacher:.4f}, gamma {cfg.gamma})")
    print(table, end="")
    print(f"outputs in {run_dir}")
    return 0


def cmd_report(args) -> int:
    path = Path(args.results)
    if not path.exists():
        raise icbhi.DatasetError(f"no results document at {path}")
    doc = load_results(path)
    cm = ConfusionMatrix(doc["task"], np.array(doc["confusion"], dtype=np.int64))
    out = Path(args.out_dir) if args.out_dir else path.parent
    out.mkdir(parents=True, exist_ok=True)
    scores = safe_scores(cm)
    table = render_confusion(cm, scores)
    (out / "confusion.tsv").write_text(table)
    confusion_figure(cm, out / "confusion.png")
    score_figure(scores, out / "scores.png", title=f"task {doc['task']}")
    print(table, end="")
    print(f"figures in {out}")
    return 0


# ---------------------------------------------------------------------- main


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lungsound",
        description="Respiratory sound classification: features, training, reports.",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("prepare", help="scan the corpus, write the index and splits")
    _add_config_flags(p)
    p.add_argument("--split-file", dest="split_file", help="official train/test list")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("features", help="populate the feature cache")
    _add_config_flags(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a model and score the test subset")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="sweep factors and tabulate scores")
    _add_config_flags(p)
    p.add_argument("--axes", required=True,
                   help="comma list from frontend,overlap,patch_width,mixup")
    p.add_argument("--all-folds", action="store_true", dest="all_folds")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("distill", help="distill a teacher checkpoint into the student")
    _add_config_flags(p)
    p.add_argument("--teacher", required=True, help="teacher checkpoint path")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("report", help="render tables and figures from results.json")
    _add_config_flags(p)
    p.add_argument("results", help="path to a results.json document")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if not getattr(args, "func", None):
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 3
    except icbhi.AnnotationError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (
        icbhi.DatasetError,
        AudioError,
        CacheError,
        CheckpointError,
        OSError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
