"""Command-line entry point: generate | pretrain | train | eval | report.

Exit codes: 0 success, 2 usage or configuration problem, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import functools
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .corpus import (
    Corpus,
    LabelSpace,
    ctrs_space,
    format_summary,
    generate_synthetic,
    load_corpus,
    load_generator_spec,
    misc_space,
    parse_corpus_lines,
    summarize,
    write_corpus,
)
from .embed import SgnsConfig, pretrain_embeddings
from .errors import CheckpointError, ConfigError, DataError, MtlCoderError, NumericError, TrainingError, UsageError
from .evalreport import EvalReport, emit_comparison, emit_report
from .trainer import (
    MLMT,
    ModelConfig,
    TrainedModel,
    embedding_from_checkpoint,
    embedding_to_checkpoint,
    read_checkpoint,
    run_seeds,
    train_multitask,
    train_single_task,
    write_checkpoint,
)

log = logging.getLogger("mtlcoder")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
FORMATS = ("table", "json", "csv")
BUILTIN_SPACES = {"misc": misc_space, "ctrs": ctrs_space}


# ---------------------------------------------------------------------------
# config plumbing


def _resolve_path(value: str, base: Path) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def resolve_space(value: Any, base: Path = Path(".")) -> LabelSpace:
    """A built-in name (``misc``/``ctrs``), a path to a label-space JSON file, or an inline object."""
    if isinstance(value, dict):
        return LabelSpace.from_json(value)
    if isinstance(value, str):
        if value in BUILTIN_SPACES:
            return BUILTIN_SPACES[value]()
        path = _resolve_path(value, base)
        if not path.exists():
            raise ConfigError(f"label space file not found: {path}")
        return LabelSpace.from_json(json.loads(path.read_text(encoding="utf-8")))
    raise ConfigError(f"cannot interpret label space {value!r}")


def _load(entry: dict, key: str, space: LabelSpace, base: Path) -> Corpus | None:
    if entry.get(key) is None:
        return None
    path = _resolve_path(entry[key], base)
    if not path.exists():
        raise ConfigError(f"corpus file not found: {path}")
    return load_corpus(path, space)


def read_run_config(path: str | None) -> tuple[dict, Path]:
    if path is None:
        return {}, Path(".")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError("config root must be an object")
    return obj, p.parent


def model_config(run: dict, args: argparse.Namespace) -> ModelConfig:
    """Config-file model section with command-line overrides applied on top."""
    fields = dict(run.get("model", {}))
    if args.regime is not None:
        fields["regime"] = args.regime
    if args.sample_weights is not None:
        fields["sample_weighting"] = args.sample_weights == "on"
    if args.context is not None:
        fields["context"] = args.context
    if args.seed is not None:
        fields["seed"] = args.seed
    if args.patience is not None:
        fields["patience"] = args.patience
    if args.seeds is not None:
        fields["n_seeds"] = args.seeds
    if args.lr is not None:
        regime = fields.get("regime", "ML")
        # in ML-MT the only rate used is the fine-tuning one
        fields["finetune_learning_rate" if regime in (MLMT, "mlmt", "ml-mt") else "learning_rate"] = args.lr
    try:
        return ModelConfig.from_json(fields)
    except TypeError as exc:
        raise ConfigError(f"invalid model section: {exc}") from None


# ---------------------------------------------------------------------------
# output helpers


def _atomic_dir(out: Path):
    """Build the directory next to ``out`` and swap it into place once complete."""
    out.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}.", suffix=".tmp"))


def _commit_dir(tmp: Path, out: Path) -> None:
    if out.exists():
        old = out.with_name(f".{out.name}.old")
        shutil.rmtree(old, ignore_errors=True)
        os.replace(out, old)
        os.replace(tmp, out)
        shutil.rmtree(old, ignore_errors=True)
    else:
        os.replace(tmp, out)


def _write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    if args.spec is None:
        raise UsageError("generate needs a generator spec file")
    spec = load_generator_spec(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    corpus = generate_synthetic(spec)
    out = Path(args.out or f"{spec.task}.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus, out)
    _write_bytes(out.with_suffix(".space.json"), (json.dumps(spec.space.to_json(), sort_keys=True, indent=2) + "\n").encode())
    sys.stdout.write(format_summary(summarize(corpus)))
    return EXIT_OK


def cmd_pretrain(args) -> int:
    run, base = read_run_config(args.config)
    train = run.get("train")
    if not train:
        raise ConfigError("pretrain needs a 'train' section with corpus and space")
    corpus = _load(train, "corpus", resolve_space(train.get("space"), base), base)
    if corpus is None:
        raise ConfigError("pretrain 'train' section lacks a corpus path")
    sgns = dict(run.get("sgns", {}))
    if args.seed is not None:
        sgns["seed"] = args.seed
    try:
        cfg = SgnsConfig(**sgns)
    except TypeError as exc:
        raise ConfigError(f"invalid sgns section: {exc}") from None
    min_count = run.get("model", {}).get("min_count", cfg.min_count)
    table = pretrain_embeddings(corpus, SgnsConfig(**{**cfg.to_json(), "min_count": min_count}))
    out = Path(args.out or "embedding.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_checkpoint(embedding_to_checkpoint(table, {"sgns": cfg.to_json(), "seed": cfg.seed}), out)
    print(f"wrote {table.vocab_size} x {table.dim} embedding table to {out}")
    return EXIT_OK


def _train_one_single(config: ModelConfig, train: Corpus, val: Corpus | None, embedding_path: str | None,
                      metrics_dir: str) -> Any:
    embedding = embedding_from_checkpoint(read_checkpoint(embedding_path)) if embedding_path else None
    with open(Path(metrics_dir) / f"seed-{config.seed}.metrics.jsonl", "w", encoding="utf-8") as fh:
        return train_single_task(train, config, val_corpus=val, embedding=embedding, metrics_stream=fh)


def _train_one_multitask(config: ModelConfig, corpora: list, inits: list[str], metrics_dir: str) -> Any:
    ckpts = []
    for template in inits:
        path = Path(template.format(seed=config.seed))
        if not path.exists():
            raise ConfigError(f"init checkpoint not found: {path}")
        ckpts.append(read_checkpoint(path))
    (tr_a, va_a), (tr_b, va_b) = corpora
    with open(Path(metrics_dir) / f"seed-{config.seed}.metrics.jsonl", "w", encoding="utf-8") as fh:
        return train_multitask(tr_a, tr_b, config, ckpts[0], ckpts[1], val_a=va_a, val_b=va_b, metrics_stream=fh)


def _evaluate(ckpt, test: Corpus) -> EvalReport:
    return TrainedModel(ckpt).evaluate(test)


def cmd_train(args) -> int:
    run, base = read_run_config(args.config)
    config = model_config(run, args)
    out = Path(args.out or run.get("out") or "run")
    tmp = _atomic_dir(out)
    try:
        tests: list[Corpus] = []
        if config.regime == MLMT:
            tasks = run.get("tasks")
            if not isinstance(tasks, list) or len(tasks) != 2:
                raise ConfigError("ML-MT config needs a 'tasks' list of exactly two entries")
            corpora, inits = [], []
            for entry in tasks:
                space = resolve_space(entry.get("space"), base)
                train = _load(entry, "corpus", space, base)
                if train is None:
                    raise ConfigError("each ML-MT task needs a corpus")
                corpora.append((train, _load(entry, "val", space, base)))
                if not entry.get("init"):
                    raise ConfigError("ML-MT requires an 'init' single-task checkpoint per task")
                inits.append(str(_resolve_path(entry["init"], base)))
                test = _load(entry, "test", space, base)
                if test is not None:
                    tests.append(test)
            for template in inits:
                if not Path(template.format(seed=config.seed)).exists():
                    raise ConfigError(f"init checkpoint not found: {template.format(seed=config.seed)}")
            train_fn = functools.partial(_train_one_multitask, corpora=corpora, inits=inits, metrics_dir=str(tmp))
        else:
            entry = run.get("train")
            if not entry:
                raise ConfigError("config needs a 'train' section with corpus and space")
            space = resolve_space(entry.get("space"), base)
            train = _load(entry, "corpus", space, base)
            if train is None:
                raise ConfigError("'train' section lacks a corpus path")
            test = _load(entry, "test", space, base)
            if test is not None:
                tests.append(test)
            emb = run.get("embedding")
            if emb and not _resolve_path(emb, base).exists():
                raise ConfigError(f"embedding archive not found: {emb}")
            train_fn = functools.partial(
                _train_one_single, train=train, val=_load(entry, "val", space, base),
                embedding_path=str(_resolve_path(emb, base)) if emb else None, metrics_dir=str(tmp),
            )
        # the first test corpus (task A for ML-MT) drives the per-seed mean row
        eval_fn = functools.partial(_evaluate, test=tests[0]) if tests else None
        result = run_seeds(config, train_fn, eval_fn, parallel=args.parallel_seeds)

        rows = []
        for seed in result.seeds:
            if seed in result.failures:
                rows.append({"seed": seed, "failed": result.failures[seed]})
                continue
            ckpt = result.checkpoints[seed]
            write_checkpoint(ckpt, tmp / f"seed-{seed}.ckpt")
            row = {"seed": seed, "epochs_run": ckpt.metadata.get("epochs_run"),
                   "best_val_loss": ckpt.metadata.get("best_val_loss")}
            if seed in result.reports:
                _write_bytes(tmp / f"seed-{seed}.report.json", emit_report(result.reports[seed], "json"))
                row["macro_f1"] = result.reports[seed].macro_f1
            for extra in tests[1:]:
                rep = _evaluate(ckpt, extra)
                _write_bytes(tmp / f"seed-{seed}.{extra.task}.report.json", emit_report(rep, "json"))
                row[f"macro_f1.{extra.task}"] = rep.macro_f1
            rows.append(row)
        done = [r for r in rows if "failed" not in r]
        mean = {"seed": "mean"}
        if done:
            mean["best_val_loss"] = float(np.mean([r["best_val_loss"] for r in done]))
            if result.reports:
                mean["macro_f1"] = result.mean_macro_f1
                mean["std_macro_f1"] = result.std_macro_f1
                summary = result.summary_report()
                _write_bytes(tmp / "report.json", emit_report(summary, "json"))
        summary_obj = {"config": config.to_json(), "root_seed": config.seed, "runs": rows, "mean": mean}
        _write_bytes(tmp / "summary.json", (json.dumps(summary_obj, indent=2, sort_keys=True) + "\n").encode())
        _commit_dir(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    sys.stdout.write(_seed_table(rows + [mean], args.format))
    if result.failures:
        log.error("%d of %d seeds diverged", len(result.failures), len(result.seeds))
        return EXIT_NUMERIC
    return EXIT_OK


def _seed_table(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows, indent=2, sort_keys=True) + "\n"
    cols = ["seed", "epochs_run", "best_val_loss", "macro_f1"]
    cell = lambda v: "" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v))
    lines = [[cell(r.get(c)) if "failed" not in r or c == "seed" else ("diverged" if c == "epochs_run" else "") for c in cols]
             for r in rows]
    if fmt == "csv":
        return "\n".join(",".join(x) for x in [cols, *lines]) + "\n"
    widths = [max(len(c), *(len(x[i]) for x in lines)) for i, c in enumerate(cols)]
    render = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    return "\n".join([render(cols), *(render(x) for x in lines)]) + "\n"


def _corpus_for_checkpoint(path: Path, spaces: dict[str, LabelSpace]) -> Corpus:
    lines = path.read_text(encoding="utf-8").splitlines()
    first = next((ln for ln in lines if ln.strip()), None)
    if first is None:
        raise DataError(f"corpus {path} is empty")
    try:
        task = json.loads(first).get("task")
    except (json.JSONDecodeError, AttributeError):
        raise DataError(f"{path}: line 1 is not a session object") from None
    if task not in spaces:
        raise DataError(f"corpus task {task!r} is not covered by the checkpoint (tasks {sorted(spaces)})")
    return parse_corpus_lines(lines, spaces[task])


def cmd_eval(args) -> int:
    if args.corpus is None:
        raise UsageError("eval needs --corpus")
    corpus_path = Path(args.corpus)
    if not corpus_path.exists():
        raise ConfigError(f"corpus file not found: {corpus_path}")
    if args.checkpoint:
        model = TrainedModel(read_checkpoint(args.checkpoint))
        corpus = _corpus_for_checkpoint(corpus_path, model.spaces)
        report = model.evaluate(corpus)
    elif args.predictions:
        if args.space is None:
            raise UsageError("evaluating a predictions file needs --space")
        space = resolve_space(args.space)
        ref = load_corpus(corpus_path, space)
        pred = load_corpus(args.predictions, space)
        if [s.session_id for s in ref] != [s.session_id for s in pred] or ref.n_turns != pred.n_turns:
            raise DataError("predictions do not align with the reference corpus")
        level_ref = ref.session_labels() if space.granularity == "session" else ref.turn_labels()
        level_pred = pred.session_labels() if space.granularity == "session" else pred.turn_labels()
        report = EvalReport.from_predictions(space.task, space.codes, level_ref, level_pred, level=space.granularity)
    else:
        raise UsageError("eval needs --checkpoint or --predictions")
    data = emit_report(report, args.format)
    if args.out:
        _write_bytes(Path(args.out), data)
    print(f"macro-F1 {report.macro_f1:.4f}")
    if not args.out:
        sys.stdout.write(data.decode())
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.reports:
        raise UsageError("report needs at least one report file")
    columns = {}
    for path in args.reports:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"report file not found: {p}")
        try:
            columns[p.stem] = EvalReport.from_json(json.loads(p.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"{p} is not a report: {exc}") from None
    data = emit_report(next(iter(columns.values())), args.format) if len(columns) == 1 else emit_comparison(columns, args.format)
    if args.out:
        _write_bytes(Path(args.out), data)
    else:
        sys.stdout.write(data.decode())
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "pretrain": cmd_pretrain, "train": cmd_train, "eval": cmd_eval, "report": cmd_report}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep argparse's exit code but route through our handler
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mtlcoder", description="Multi-label multi-task behavioral code prediction.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("positional", nargs="*", help="generate: spec file; report: report files")
    parser.add_argument("--config")
    parser.add_argument("--regime", choices=["sl", "ml", "mlmt"])
    parser.add_argument("--sample-weights", choices=["on", "off"])
    parser.add_argument("--context", type=int)
    parser.add_argument("--seeds", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--out")
    parser.add_argument("--format", choices=FORMATS, default="table")
    parser.add_argument("--parallel-seeds", type=int, default=1)
    parser.add_argument("--checkpoint")
    parser.add_argument("--corpus")
    parser.add_argument("--predictions")
    parser.add_argument("--space")
    return parser


def configure_logging() -> None:
    level = os.environ.get("MTLCODER_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"MTLCODER_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        configure_logging()
        args = build_parser().parse_args(argv)
        args.spec = args.positional[0] if args.command == "generate" and args.positional else None
        args.reports = args.positional if args.command == "report" else []
        if args.command not in ("generate", "report") and args.positional:
            raise UsageError(f"{args.command} takes no positional arguments")
        if args.parallel_seeds < 1:
            raise UsageError("--parallel-seeds must be >= 1")
        return COMMANDS[args.command](args)
    except (NumericError, TrainingError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, DataError, CheckpointError, MtlCoderError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
