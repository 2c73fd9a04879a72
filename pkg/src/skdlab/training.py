"""Training regimes behind one loop: likelihood fine-tuning, teacher-sequence
likelihood, distribution matching on fixed / self-generated / mixed / staged
targets, and interleaved speculative distillation.

Target-sequence source per method kind:

==============  =====================================================
sft             ground-truth responses, likelihood loss
seqkd           teacher-sampled responses (fresh each step), likelihood
supervised_kd   ground-truth responses, divergence loss
onpolicy_kd     student-sampled responses, divergence loss
imitkd          per-example coin between ground truth and student
two_stage       ground truth before the boundary step, student after
skd             interleaved student/teacher sampling (top-K acceptance)
==============  =====================================================

Teacher distributions enter batches as constants; the teacher is never
mutated. Everything is deterministic given the run seed.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    NLL,
    Batch,
    LrSchedule,
    forward_backward,
    init_optimizer,
    loss_value,
    lr_at,
    optimizer_step,
)
from .corpus import Corpus
from .divergence import DivergenceSpec
from .errors import ConfigError, NumericalError
from .models import NeuralLM, context_matrix, softmax_rows
from .rng import stream
from .sampling import (
    STUDENT_ACCEPTED,
    TEACHER_RESAMPLED,
    SamplerConfig,
    SkdConfig,
    default_accept_k,
    sample_autoregressive,
    skd_interleaved_sample,
)

METHOD_KINDS = ("sft", "seqkd", "supervised_kd", "onpolicy_kd", "imitkd", "two_stage", "skd")

GROUND_TRUTH = "ground_truth"


@dataclass(frozen=True)
class MethodSpec:
    kind: str
    divergence: DivergenceSpec = DivergenceSpec()
    student_sampler: SamplerConfig = SamplerConfig(temperature=0.5, top_p=0.5)
    teacher_sampler: SamplerConfig = SamplerConfig(temperature=0.2)
    accept_k: int | None = None  # skd; defaults to 40% of |V| at small vocabularies
    block_len: int = 5
    mix_probability: float = 0.5  # imitkd: chance an example keeps its ground truth
    stage_boundary: int | None = None  # two_stage

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ConfigError(f"unknown method {self.kind!r}; pick one of {METHOD_KINDS}")
        if not 0.0 <= self.mix_probability <= 1.0:
            raise ConfigError(f"mix_probability must be in [0, 1], got {self.mix_probability}")
        if self.kind == "two_stage" and self.stage_boundary is None:
            raise ConfigError("two_stage needs a stage_boundary")

    @property
    def needs_teacher(self) -> bool:
        return self.kind != "sft"

    @property
    def uses_divergence(self) -> bool:
        return self.kind not in ("sft", "seqkd")


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int
    batch_size: int
    schedule: LrSchedule
    optimizer: str = "adam"
    eval_every: int = 100
    run_seed: int = 0
    max_len: int = 16

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")


@dataclass
class StepRecord:
    step: int  # 1-based; the update this record describes
    loss: float
    lr: float
    acceptance_rate: float | None = None
    gt_fraction: float | None = None
    sequences: list[str] = field(default_factory=list)


@dataclass
class EvalRecord:
    step: int
    dev_loss: float
    task_metric: float | None = None


@dataclass
class RunLog:
    steps: list[StepRecord] = field(default_factory=list)
    evals: list[EvalRecord] = field(default_factory=list)


@dataclass
class CheckpointRecord:
    step: int
    params: dict
    dev_loss: float


def position_distributions(model, prompts, targets: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Full-support unit-temperature rows for every real response position."""
    b, l_max = targets.shape
    seqs, rows, cols = [], [], []
    for i, prompt in enumerate(prompts):
        toks = tuple(prompt) + tuple(int(t) for t in targets[i, : lengths[i]])
        for j in range(int(lengths[i])):
            seqs.append(toks[: len(prompt) + j])
            rows.append(i)
            cols.append(j)
    ctx = context_matrix(seqs, model.context_width, model.vocab.bos_id)
    probs = softmax_rows(model.logits_for_contexts(ctx))
    out = np.zeros((b, l_max, model.vocab_size))
    out[rows, cols] = probs
    return out


def _resolved_skd_config(method: MethodSpec, vocab_size: int, max_len: int) -> SkdConfig:
    k = method.accept_k if method.accept_k is not None else default_accept_k(vocab_size)
    return SkdConfig(
        accept_k=k,
        block_len=method.block_len,
        student=dataclasses.replace(method.student_sampler, max_len=max_len),
        teacher=dataclasses.replace(method.teacher_sampler, max_len=max_len),
    )


def make_training_batch(
    method: MethodSpec,
    step: int,
    corpus: Corpus,
    student: NeuralLM,
    teacher,
    cfg: TrainConfig,
) -> Batch:
    """Assemble one batch: pick examples, choose target sequences per the
    method, and attach per-position teacher/student distributions."""
    if not corpus.examples:
        raise ConfigError("training corpus is empty")
    if method.needs_teacher and teacher is None:
        raise ConfigError(f"method {method.kind!r} requires a teacher")
    pad = corpus.vocab.pad_id
    run_seed = cfg.run_seed
    idx = stream(run_seed, "data").at(step).integers(0, len(corpus.examples), cfg.batch_size)

    student_cfg = dataclasses.replace(method.student_sampler, max_len=cfg.max_len)
    teacher_cfg = dataclasses.replace(method.teacher_sampler, max_len=cfg.max_len)

    prompts, target_seqs, sources = [], [], []
    accepted = replaced = 0
    for slot, ex_i in enumerate(idx):
        ex = corpus.examples[int(ex_i)]
        prompts.append(ex.prompt)
        kind = method.kind
        if kind == "imitkd":
            u = stream(run_seed, "mix").uniform(step, slot)
            kind = "supervised_kd" if u < method.mix_probability else "onpolicy_kd"
        elif kind == "two_stage":
            kind = "supervised_kd" if step < method.stage_boundary else "onpolicy_kd"

        if kind in ("sft", "supervised_kd"):
            target_seqs.append(list(ex.response))
            sources.append(GROUND_TRUTH)
        elif kind == "seqkd":
            traj = sample_autoregressive(
                teacher, ex.prompt, teacher_cfg, stream(run_seed, "teacher", step, slot)
            )
            target_seqs.append(traj.tokens)
            sources.append("teacher")
        elif kind == "onpolicy_kd":
            traj = sample_autoregressive(
                student, ex.prompt, student_cfg, stream(run_seed, "student", step, slot)
            )
            target_seqs.append(traj.tokens)
            sources.append("student")
        else:  # skd
            skd_cfg = _resolved_skd_config(method, student.vocab_size, cfg.max_len)
            traj = skd_interleaved_sample(
                student,
                teacher,
                ex.prompt,
                skd_cfg,
                stream(run_seed, "student", step, slot),
                stream(run_seed, "teacher", step, slot),
            )
            target_seqs.append(traj.tokens)
            sources.append("skd")
            accepted += sum(1 for p in traj.provenance if p == STUDENT_ACCEPTED)
            replaced += sum(1 for p in traj.provenance if p == TEACHER_RESAMPLED)

    lengths = np.array([len(t) for t in target_seqs], dtype=np.int64)
    targets = np.full((cfg.batch_size, int(lengths.max())), pad, dtype=np.int64)
    for i, seq in enumerate(target_seqs):
        targets[i, : len(seq)] = seq

    teacher_dists = None
    if method.uses_divergence:
        teacher_dists = position_distributions(teacher, prompts, targets, lengths)
    student_dists = position_distributions(student, prompts, targets, lengths)
    return Batch(
        prompts=prompts,
        targets=targets,
        lengths=lengths,
        teacher_dists=teacher_dists,
        student_dists=student_dists,
        sources=sources,
        acceptance=(accepted, replaced) if method.kind == "skd" else None,
    )


def compute_loss(method: MethodSpec, batch: Batch, divergence: DivergenceSpec | None = None) -> float:
    """Batch loss from the distributions stored in the batch.

    Per-sequence mean over positions, then mean over the batch; independent
    of the vectorized path used for gradients.
    """
    from .divergence import sequence_divergence

    spec = divergence if divergence is not None else method.divergence
    total = 0.0
    for b in range(batch.size):
        n = int(batch.lengths[b])
        if method.uses_divergence:
            pairs_t = [batch.teacher_dists[b, i] for i in range(n)]
            pairs_s = [batch.student_dists[b, i] for i in range(n)]
            total += sequence_divergence(pairs_t, pairs_s, spec)
        else:
            nll = 0.0
            for i in range(n):
                p = batch.student_dists[b, i, int(batch.targets[b, i])]
                nll -= float(np.log(max(p, 1e-12)))
            total += nll / n
    return total / batch.size


def dev_loss_of(method: MethodSpec, student: NeuralLM, teacher, dev_corpus: Corpus) -> float:
    """Deterministic validation loss on ground-truth dev responses."""
    prompts = [ex.prompt for ex in dev_corpus.examples]
    lengths = np.array([len(ex.response) for ex in dev_corpus.examples], dtype=np.int64)
    targets = np.full((len(prompts), int(lengths.max())), dev_corpus.vocab.pad_id, dtype=np.int64)
    for i, ex in enumerate(dev_corpus.examples):
        targets[i, : len(ex.response)] = ex.response
    teacher_dists = None
    if method.uses_divergence:
        teacher_dists = position_distributions(teacher, prompts, targets, lengths)
    batch = Batch(prompts=prompts, targets=targets, lengths=lengths, teacher_dists=teacher_dists)
    loss_spec = method.divergence if method.uses_divergence else NLL
    return loss_value(student, batch, loss_spec)


def train(
    method: MethodSpec,
    cfg: TrainConfig,
    train_corpus: Corpus,
    dev_corpus: Corpus,
    student: NeuralLM,
    teacher=None,
    task_metric_fn=None,
) -> tuple[list[CheckpointRecord], RunLog]:
    """Run the full loop; returns eval-time checkpoints and the run log.

    A non-finite loss aborts with the offending step in the error message.
    """
    if not student.trainable:
        raise ConfigError("student model is frozen")
    if method.needs_teacher and teacher is None:
        raise ConfigError(f"method {method.kind!r} requires a teacher")
    if method.kind == "two_stage" and not 0 < method.stage_boundary < cfg.total_steps:
        raise ConfigError(
            f"stage_boundary must lie in (0, {cfg.total_steps}), got {method.stage_boundary}"
        )
    loss_spec = method.divergence if method.uses_divergence else NLL
    params = student.parameters()
    state = init_optimizer(cfg.optimizer, params)
    vocab = train_corpus.vocab
    runlog = RunLog()
    checkpoints: list[CheckpointRecord] = []

    def run_eval(at_step: int):
        dev = dev_loss_of(method, student, teacher, dev_corpus)
        metric = task_metric_fn(student) if task_metric_fn is not None else None
        runlog.evals.append(EvalRecord(step=at_step, dev_loss=dev, task_metric=metric))
        checkpoints.append(
            CheckpointRecord(step=at_step, params={k: v.copy() for k, v in params.items()}, dev_loss=dev)
        )

    run_eval(0)
    for step in range(cfg.total_steps):
        batch = make_training_batch(method, step, train_corpus, student, teacher, cfg)
        try:
            loss, grads = forward_backward(student, batch, loss_spec)
            state = optimizer_step(params, grads, state, cfg.schedule, step)
        except NumericalError as exc:
            raise NumericalError(f"training aborted at step {step + 1}: {exc}") from exc

        rate = None
        if batch.acceptance is not None:
            acc, rep = batch.acceptance
            rate = acc / (acc + rep) if acc + rep else None
        gt_frac = None
        if method.kind == "imitkd":
            gt_frac = sum(1 for s in batch.sources if s == GROUND_TRUTH) / batch.size
        runlog.steps.append(
            StepRecord(
                step=step + 1,
                loss=loss,
                lr=lr_at(cfg.schedule, step),
                acceptance_rate=rate,
                gt_fraction=gt_frac,
                sequences=[
                    vocab.decode(batch.targets[b, : batch.lengths[b]]) for b in range(batch.size)
                ],
            )
        )
        if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.total_steps:
            run_eval(step + 1)
    return checkpoints, runlog


def select_checkpoint(checkpoints: list[CheckpointRecord]) -> CheckpointRecord:
    """Lowest dev loss; ties go to the earliest step."""
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    return min(checkpoints, key=lambda c: (c.dev_loss, c.step))


def restore_checkpoint(student: NeuralLM, record: CheckpointRecord):
    student.set_parameters(record.params)


def train_teacher(
    train_corpus: Corpus,
    dev_corpus: Corpus,
    *,
    context: int,
    d_emb: int = 16,
    d_hid: int = 256,
    total_steps: int = 1500,
    batch_size: int = 16,
    base_rate: float = 3e-3,
    max_len: int = 16,
    seed: int = 0,
) -> tuple[NeuralLM, RunLog]:
    """Likelihood-train a large model on ground truth and freeze the best
    checkpoint; the standard way to mint a neural teacher for a task."""
    model = NeuralLM.init(train_corpus.vocab, context, d_emb, d_hid, stream(seed, "init"))
    cfg = TrainConfig(
        total_steps=total_steps,
        batch_size=batch_size,
        schedule=LrSchedule(base_rate=base_rate, total_steps=total_steps),
        eval_every=max(total_steps // 10, 1),
        run_seed=seed,
        max_len=max_len,
    )
    checkpoints, runlog = train(MethodSpec(kind="sft"), cfg, train_corpus, dev_corpus, model)
    restore_checkpoint(model, select_checkpoint(checkpoints))
    model.trainable = False
    return model, runlog
