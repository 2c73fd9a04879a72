"""Quality measurement: enumerated student-vs-chain KL, greedy task accuracy,
acceptance accounting, and the draft/verify speedup benchmark.

``exact_model_kl`` is the ground-truth distillation metric: it walks every
EOS-free prefix up to a horizon, weights each by its exact chain probability,
and sums the per-position KL between the chain's next-token row and the
student's conditional. No sampling, no variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .divergence import kl
from .errors import ConfigError
from .models import TabularMarkovLM, context_matrix, softmax_rows
from .rng import stream
from .sampling import (
    STUDENT_ACCEPTED,
    TEACHER_RESAMPLED,
    SamplerConfig,
    speculative_decode,
    sample_autoregressive,
)


@dataclass
class EvalReport:
    task_tag: str
    metric: str
    value: float
    n_examples: int
    decode_config: str


@dataclass
class SpeedupReport:
    acceptance_ratio: float
    tokens_per_target_call: float
    speedup_estimate: float  # emitted tokens per target call; plain decoding is 1
    gamma: int
    n_trajectories: int


def model_conditionals(model, prefixes) -> np.ndarray:
    """Next-token distributions for a batch of (empty-prompt) prefixes."""
    if hasattr(model, "logits_for_contexts"):
        ctx = context_matrix(prefixes, model.context_width, model.vocab.bos_id)
        return softmax_rows(model.logits_for_contexts(ctx))
    return softmax_rows(np.stack([model.next_logits((), p) for p in prefixes]))


def exact_model_kl(student, teacher: TabularMarkovLM, horizon: int) -> float:
    """Chain-weighted KL(teacher || student), enumerated over all

    EOS-free prefixes of length < horizon. EOS is absorbing: a prefix that
    drew EOS queries no further conditionals and stops contributing.
    """
    v = teacher.vocab_size
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    if v**horizon > 1_000_000:
        raise ConfigError(f"|V|^horizon = {v**horizon} exceeds the enumeration budget")
    eos = teacher.vocab.eos_id

    prefixes: list[tuple[int, ...]] = [()]
    weights = np.array([1.0])
    total = 0.0
    order = teacher.spec.order
    bos_pad = (teacher.vocab.bos_id,) * order
    for _depth in range(horizon):
        t_rows = np.stack([teacher.spec.row((bos_pad + p)[-order:]) for p in prefixes])
        s_rows = model_conditionals(student, prefixes)
        for i in range(len(prefixes)):
            total += weights[i] * kl(t_rows[i], s_rows[i])
        if _depth == horizon - 1:
            break
        next_prefixes, next_weights = [], []
        for i, prefix in enumerate(prefixes):
            row = t_rows[i]
            for tok in np.flatnonzero(row > 0):
                if tok == eos:
                    continue
                next_prefixes.append(prefix + (int(tok),))
                next_weights.append(weights[i] * row[tok])
        if not next_prefixes:
            break
        prefixes = next_prefixes
        weights = np.array(next_weights)
    return total


def task_accuracy(model, corpus, max_len: int | None = None) -> EvalReport:
    """Greedy decode every prompt; exact token match against the ground truth."""
    if corpus.task_tag not in ("arith", "reverse"):
        raise ConfigError(f"task accuracy is defined for arith/reverse, not {corpus.task_tag!r}")
    eos = corpus.vocab.eos_id
    if max_len is None:
        max_len = max(len(ex.response) for ex in corpus.examples) + 2
    cfg = SamplerConfig(temperature=0.0, max_len=max_len)
    rng = stream(0, "eval")  # greedy decoding consumes no randomness
    correct = 0
    for ex in corpus.examples:
        traj = sample_autoregressive(model, ex.prompt, cfg, rng)
        got = traj.tokens[:-1] if traj.tokens and traj.tokens[-1] == eos else traj.tokens
        if tuple(got) == ex.response[:-1]:
            correct += 1
    return EvalReport(
        task_tag=corpus.task_tag,
        metric="greedy_exact_match",
        value=correct / len(corpus.examples),
        n_examples=len(corpus.examples),
        decode_config=f"greedy,max_len={max_len}",
    )


def acceptance_rate(trajectories) -> float | None:
    """Fraction of verified tokens that kept the student's proposal.

    Plain tokens are excluded; with nothing verified the rate is undefined
    and reported as None.
    """
    accepted = replaced = 0
    for traj in trajectories:
        for flag in traj.provenance:
            if flag == STUDENT_ACCEPTED:
                accepted += 1
            elif flag == TEACHER_RESAMPLED:
                replaced += 1
    total = accepted + replaced
    return accepted / total if total else None


def specdec_benchmark(
    draft,
    target,
    prompts,
    gamma: int,
    n_runs: int = 1,
    cfg: SamplerConfig = SamplerConfig(),
    seed: int = 0,
) -> SpeedupReport:
    """Aggregate draft/verify statistics over prompts and repeated runs."""
    from .sampling import AcceptanceStats

    total = AcceptanceStats()
    count = 0
    for r in range(n_runs):
        for i, prompt in enumerate(prompts):
            _, stats = speculative_decode(
                draft,
                target,
                prompt,
                gamma,
                cfg,
                stream(seed, "draft", r, i),
                stream(seed, "accept", r, i),
                stream(seed, "target", r, i),
            )
            total.merge(stats)
            count += 1
    return SpeedupReport(
        acceptance_ratio=total.accepted / total.proposed if total.proposed else 0.0,
        tokens_per_target_call=total.emitted_tokens / total.target_calls,
        speedup_estimate=total.emitted_tokens / total.target_calls,
        gamma=gamma,
        n_trajectories=count,
    )
