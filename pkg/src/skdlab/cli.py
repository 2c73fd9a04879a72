"""Experiment orchestration CLI.

Subcommands: gen-corpus, train-teacher, run, sweep-k, init-study,
specdec-bench, eval. Every run is a pure function of (config file, seed);
timestamps live only in ``meta.json``. Exit codes: 0 ok, 2 config error,
3 numerical failure, 4 I/O error.

Set ``SKDLAB_WORKERS=<n>`` to fan independent sweep / study rows out over
worker processes (default 1).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from datetime import datetime, timezone
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import __version__, kernel_backend
from .configio import ExperimentConfig, parse_config
from .corpus import (
    Corpus,
    Vocabulary,
    gen_arith_corpus,
    gen_markov_corpus,
    gen_reverse_corpus,
    load_corpus,
    load_markov_spec,
    random_markov_spec,
    save_corpus,
    save_markov_spec,
    split,
)
from .errors import ConfigError, NumericalError
from .evaluation import EvalReport, exact_model_kl, specdec_benchmark, task_accuracy
from .models import NeuralLM, TabularMarkovLM, load_model, save_model
from .reports import write_csv, write_eval_reports, write_runlog, write_speedup_reports
from .rng import stream
from .sampling import SamplerConfig
from .training import (
    MethodSpec,
    RunLog,
    TrainConfig,
    restore_checkpoint,
    select_checkpoint,
    train,
    train_teacher,
)


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def _worker_count() -> int:
    raw = os.environ.get("SKDLAB_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"SKDLAB_WORKERS must be an integer, got {raw!r}")


def _prepare_out(out: Path, force: bool):
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} already has artifacts (pass --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)


def _load_model_ref(ref: str):
    """``tabular:<spec path>`` or ``neural:<checkpoint path>``."""
    kind, _, path = ref.partition(":")
    if kind == "tabular":
        return TabularMarkovLM(load_markov_spec(path))
    if kind == "neural":
        return load_model(path, trainable=False)
    raise ConfigError(f"model reference must start with 'tabular:' or 'neural:', got {ref!r}")


def _load_teacher(cfg: ExperimentConfig, vocab: Vocabulary):
    if cfg.teacher_kind == "none":
        return None
    if cfg.teacher_path is None:
        raise ConfigError(f"[teacher] kind={cfg.teacher_kind} needs a path")
    if cfg.teacher_kind == "tabular":
        teacher = TabularMarkovLM(load_markov_spec(cfg.teacher_path))
    elif cfg.teacher_kind == "neural":
        teacher = load_model(cfg.teacher_path, trainable=False)
    else:
        raise ConfigError(f"[teacher] kind must be tabular/neural/none, got {cfg.teacher_kind!r}")
    if teacher.vocab.symbols != vocab.symbols:
        raise ConfigError("teacher and corpus vocabularies differ")
    return teacher


def _init_student(cfg: ExperimentConfig, vocab: Vocabulary) -> NeuralLM:
    if cfg.student_init == "fresh":
        return NeuralLM.init(
            vocab, cfg.context, cfg.d_emb, cfg.d_hid, stream(cfg.train.run_seed, "init")
        )
    return load_model(cfg.student_init, trainable=True)


def _task_metric_fn(cfg: ExperimentConfig, teacher, dev_corpus: Corpus):
    if cfg.task == "markov":
        if isinstance(teacher, TabularMarkovLM):
            return lambda student: exact_model_kl(student, teacher, cfg.horizon)
        return None
    return lambda student: task_accuracy(student, dev_corpus).value


def _prepare(cfg: ExperimentConfig):
    full = load_corpus(cfg.corpus_path)
    if full.task_tag != cfg.task:
        raise ConfigError(f"corpus task is {full.task_tag!r} but [task] name={cfg.task!r}")
    train_c, dev_c, test_c = split(full, cfg.split_fractions, cfg.split_seed)
    teacher = _load_teacher(cfg, full.vocab)
    return train_c, dev_c, test_c, teacher


def run_experiment(cfg: ExperimentConfig, out: Path, force: bool = False):
    """Train per config and write every artifact under ``out``."""
    _prepare_out(out, force)
    train_c, dev_c, test_c, teacher = _prepare(cfg)
    student = _init_student(cfg, train_c.vocab)
    metric_fn = _task_metric_fn(cfg, teacher, dev_c)

    checkpoints, runlog = train(cfg.method, cfg.train, train_c, dev_c, student, teacher, metric_fn)

    (out / "config.ini").write_text(cfg.raw_text, encoding="utf-8")
    for path in (out / "runlog.jsonl", out / "runlog.csv"):
        path.unlink(missing_ok=True)
    write_runlog(runlog, out / "runlog.jsonl", out / "runlog.csv")

    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    snapshot = student.copy()
    for rec in checkpoints:
        snapshot.set_parameters(rec.params)
        save_model(snapshot, ckpt_dir / f"ckpt-{rec.step:05d}.txt")
    best = select_checkpoint(checkpoints)
    snapshot.set_parameters(best.params)
    save_model(snapshot, out / "best.txt")

    reports = _final_reports(cfg, snapshot, teacher, test_c, best.dev_loss)
    write_eval_reports(reports, out / "eval_report.csv", out / "eval_report.jsonl")

    meta = {
        "created_utc": _utcnow(),
        "package_version": __version__,
        "kernel_backend": kernel_backend,
        "best_step": best.step,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return checkpoints, runlog, best


def _final_reports(cfg, model, teacher, test_c, best_dev_loss) -> list[EvalReport]:
    reports = [
        EvalReport(
            task_tag=cfg.task,
            metric="best_dev_loss",
            value=best_dev_loss,
            n_examples=0,
            decode_config="",
        )
    ]
    if cfg.task == "markov" and isinstance(teacher, TabularMarkovLM):
        reports.append(
            EvalReport(
                task_tag="markov",
                metric="exact_model_kl",
                value=exact_model_kl(model, teacher, cfg.horizon),
                n_examples=0,
                decode_config=f"horizon={cfg.horizon}",
            )
        )
    elif cfg.task in ("arith", "reverse"):
        reports.append(task_accuracy(model, test_c))
    return reports


def _mean_acceptance(runlog: RunLog):
    rates = [s.acceptance_rate for s in runlog.steps if s.acceptance_rate is not None]
    return sum(rates) / len(rates) if rates else None


def _sweep_worker(job):
    cfg, k, out_dir, force = job
    method = dataclasses.replace(cfg.method, accept_k=k)
    _, runlog, _ = run_experiment(cfg.with_method(method), Path(out_dir), force)
    last = runlog.evals[-1]
    return (k, last.dev_loss, last.task_metric, _mean_acceptance(runlog))


def run_k_sweep(cfg: ExperimentConfig, k_values, out: Path, force: bool = False):
    """One full run per acceptance rank, shared seeds; rows ascend in K."""
    if cfg.method.kind != "skd":
        raise ConfigError("sweep-k needs [method] kind = skd")
    vocab_size = len(load_corpus(cfg.corpus_path).vocab.symbols)
    for k in k_values:
        if not 0 <= k <= vocab_size:
            raise ConfigError(f"sweep K={k} outside [0, {vocab_size}]")
    _prepare_out(out, force)
    jobs = [(cfg, int(k), str(out / f"k_{int(k):03d}"), force) for k in sorted(set(k_values))]
    rows = _run_jobs(_sweep_worker, jobs)
    rows.sort(key=lambda r: r[0])
    write_csv(
        out / "sweep.csv",
        ("K", "final_dev_divergence", "task_metric", "mean_acceptance_rate"),
        rows,
    )
    return rows


def _init_study_worker(job):
    cfg, sft_steps, out_dir, force = job
    out_dir = Path(out_dir)
    _prepare_out(out_dir, force)
    train_c, dev_c, _, teacher = _prepare(cfg)
    student = _init_student(cfg, train_c.vocab)

    sft_cfg = TrainConfig(
        total_steps=sft_steps,
        batch_size=cfg.train.batch_size,
        schedule=dataclasses.replace(cfg.train.schedule, total_steps=sft_steps),
        optimizer=cfg.train.optimizer,
        eval_every=sft_steps,
        run_seed=cfg.train.run_seed,
        max_len=cfg.train.max_len,
    )
    checkpoints, sft_log = train(MethodSpec(kind="sft"), sft_cfg, train_c, dev_c, student)
    restore_checkpoint(student, checkpoints[-1])  # the checkpoint at exactly sft_steps
    save_model(student, out_dir / f"sft-{sft_steps:05d}.txt")
    sft_dev_loss = sft_log.evals[-1].dev_loss

    metric_fn = _task_metric_fn(cfg, teacher, dev_c)
    _, kd_log = train(cfg.method, cfg.train, train_c, dev_c, student, teacher, metric_fn)
    write_runlog(kd_log, out_dir / "runlog.jsonl", out_dir / "runlog.csv")
    last = kd_log.evals[-1]
    kd_metric = last.task_metric if last.task_metric is not None else last.dev_loss
    return (sft_steps, sft_dev_loss, kd_metric)


def run_init_study(cfg: ExperimentConfig, sft_steps_list, out: Path, force: bool = False):
    """SFT checkpoints at each step count, then the configured method from each."""
    if list(sft_steps_list) != sorted(sft_steps_list):
        raise ConfigError("sft step counts must be ascending")
    if any(s < 1 for s in sft_steps_list):
        raise ConfigError("sft step counts must be >= 1")
    _prepare_out(out, force)
    jobs = [(cfg, int(s), str(out / f"sft_{int(s):05d}"), force) for s in sft_steps_list]
    rows = _run_jobs(_init_study_worker, jobs)
    rows.sort(key=lambda r: r[0])
    write_csv(out / "init_study.csv", ("sft_steps", "sft_dev_loss", "kd_final_metric"), rows)
    return rows


def _run_jobs(worker, jobs):
    n = _worker_count()
    if n == 1 or len(jobs) == 1:
        return [worker(job) for job in jobs]
    with get_context("fork").Pool(min(n, len(jobs))) as pool:
        return pool.map(worker, jobs)


def run_specdec_bench(cfg: ExperimentConfig, out: Path, force: bool = False):
    """Benchmark every configured draft against the target, one row per gamma."""
    if cfg.specdec is None:
        raise ConfigError("specdec-bench needs a [specdec] section")
    sd = cfg.specdec
    if not sd["draft"] or not sd["target"]:
        raise ConfigError("[specdec] needs both draft and target model references")
    _prepare_out(out, force)
    target = _load_model_ref(sd["target"])
    corpus = load_corpus(cfg.corpus_path)
    prompts = [ex.prompt for ex in corpus.examples[: sd["n_prompts"]]]
    decode_cfg = SamplerConfig(temperature=sd["temperature"], max_len=sd["max_len"])
    rows = []
    for draft_ref in sd["draft"]:
        draft = _load_model_ref(draft_ref)
        for gamma in sd["gamma"]:
            report = specdec_benchmark(
                draft,
                target,
                prompts,
                gamma,
                n_runs=sd["n_runs"],
                cfg=decode_cfg,
                seed=cfg.train.run_seed,
            )
            rows.append((draft_ref, sd["target"], report))
    write_speedup_reports(rows, out / "specdec.csv")
    return rows


def cmd_gen_corpus(args) -> int:
    out = Path(args.out)
    _prepare_out(out, args.force)
    if args.task == "markov":
        vocab = Vocabulary.build(args.vocab_content)
        spec = random_markov_spec(
            vocab, args.order, seed=args.seed, eos_prob=args.eos_prob, concentration=args.concentration
        )
        save_markov_spec(spec, out / "teacher.spec")
        corpus = gen_markov_corpus(spec, args.n, (args.min_len, args.max_len), seed=args.seed)
    elif args.task == "arith":
        corpus = gen_arith_corpus(args.digit_max, args.n, seed=args.seed)
    else:
        corpus = gen_reverse_corpus(
            (args.min_len, args.max_len), args.n, seed=args.seed, n_letters=args.n_letters
        )
    save_corpus(corpus, out / "corpus.jsonl")
    print(f"wrote {len(corpus.examples)} {args.task} examples to {out / 'corpus.jsonl'}")
    return 0


def cmd_train_teacher(args) -> int:
    corpus = load_corpus(args.corpus)
    train_c, dev_c, _ = split(corpus, tuple(args.split), args.split_seed)
    teacher, runlog = train_teacher(
        train_c,
        dev_c,
        context=args.context,
        d_emb=args.d_emb,
        d_hid=args.d_hid,
        total_steps=args.steps,
        batch_size=args.batch_size,
        base_rate=args.base_rate,
        max_len=args.max_len,
        seed=args.seed,
    )
    save_model(teacher, args.out)
    line = f"saved teacher to {args.out}; dev_loss={runlog.evals[-1].dev_loss:.6f}"
    if corpus.task_tag in ("arith", "reverse"):
        acc = task_accuracy(teacher, dev_c).value
        line += f"; dev_accuracy={acc:.4f}"
    print(line)
    return 0


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    _, runlog, best = run_experiment(cfg, Path(args.out), args.force)
    last = runlog.evals[-1]
    print(
        f"done: {len(runlog.steps)} steps; best checkpoint at step {best.step} "
        f"(dev_loss={best.dev_loss:.6f}); final task_metric={last.task_metric}"
    )
    return 0


def cmd_sweep_k(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    rows = run_k_sweep(cfg, [int(k) for k in args.k_values.split(",")], Path(args.out), args.force)
    for row in rows:
        print("K=%d dev_divergence=%.6f metric=%s acceptance=%s" % (row[0], row[1], row[2], row[3]))
    return 0


def cmd_init_study(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    steps = [int(s) for s in args.sft_steps.split(",")]
    rows = run_init_study(cfg, steps, Path(args.out), args.force)
    for row in rows:
        print("sft_steps=%d sft_dev_loss=%.6f kd_final_metric=%s" % row)
    return 0


def cmd_specdec_bench(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    rows = run_specdec_bench(cfg, Path(args.out), args.force)
    for draft_ref, target_ref, rep in rows:
        print(
            f"draft={draft_ref} target={target_ref} gamma={rep.gamma}: "
            f"acceptance={rep.acceptance_ratio:.4f} tokens/call={rep.tokens_per_target_call:.3f}"
        )
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint, trainable=False)
    corpus = load_corpus(args.corpus)
    reports = []
    if corpus.task_tag in ("arith", "reverse"):
        reports.append(task_accuracy(model, corpus))
    if args.teacher is not None:
        teacher = TabularMarkovLM(load_markov_spec(args.teacher))
        reports.append(
            EvalReport(
                task_tag=corpus.task_tag,
                metric="exact_model_kl",
                value=exact_model_kl(model, teacher, args.horizon),
                n_examples=0,
                decode_config=f"horizon={args.horizon}",
            )
        )
    if not reports:
        raise ConfigError("nothing to evaluate: corpus is markov but no --teacher spec given")
    for rep in reports:
        print(f"{rep.metric}={rep.value:.6f} (task={rep.task_tag}, n={rep.n_examples})")
    if args.out is not None:
        write_eval_reports(reports, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skdlab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"skdlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic task corpus")
    p.add_argument("--task", choices=("markov", "arith", "reverse"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.add_argument("--n", type=int, default=1000, help="number of examples")
    p.add_argument("--vocab-content", default="abcdefghijklm", help="markov content glyphs")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--eos-prob", type=float, default=0.1)
    p.add_argument("--concentration", type=float, default=0.4)
    p.add_argument("--min-len", type=int, default=4)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--digit-max", type=int, default=9)
    p.add_argument("--n-letters", type=int, default=13)
    p.set_defaults(fn=cmd_gen_corpus)

    p = sub.add_parser("train-teacher", help="likelihood-train and freeze a neural teacher")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", type=float, nargs=3, default=(0.8, 0.1, 0.1))
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--context", type=int, default=6)
    p.add_argument("--d-emb", type=int, default=16)
    p.add_argument("--d-hid", type=int, default=256)
    p.add_argument("--steps", type=int, default=1500)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--base-rate", type=float, default=3e-3)
    p.add_argument("--max-len", type=int, default=16)
    p.set_defaults(fn=cmd_train_teacher)

    p = sub.add_parser("run", help="run one training experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override [train] run_seed")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep-k", help="full run per acceptance rank K")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-values", required=True, help="comma-separated K list")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_sweep_k)

    p = sub.add_parser("init-study", help="SFT checkpoints at several step counts, then KD from each")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sft-steps", required=True, help="comma-separated ascending step counts")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_init_study)

    p = sub.add_parser("specdec-bench", help="draft/verify speedup benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_specdec_bench)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--teacher", default=None, help="tabular spec for exact-KL evaluation")
    p.add_argument("--horizon", type=int, default=4)
    p.add_argument("--out", default=None, help="optional CSV path")
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
