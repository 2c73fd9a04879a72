"""Token generation: plain decoding, interleaved distillation sampling, and
lossless speculative decoding.

The interleaved sampler lets the student propose blocks of tokens and keeps a
proposal only if it lands in the teacher's top-K next tokens by raw logit
rank; the first rejected position is replaced with a draw from the teacher's
(temperature/top-p shaped) distribution, the rest of the block is discarded,
and proposing resumes after the replacement. Rank is computed before any
shaping, which makes acceptance invariant to temperature.

Randomness is positional: the draw for response position ``p`` always comes
from ``stream.at(p)``, so setting the acceptance rank to |V| (accept all) or
0 (replace all) reproduces plain student or teacher sampling token-for-token
under the same streams.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .models import softmax_with_temperature, truncate_top_k, truncate_top_p
from .rng import RngStream, categorical

STUDENT_ACCEPTED = "student_accepted"
TEACHER_RESAMPLED = "teacher_resampled"
PLAIN = "plain"


@dataclass(frozen=True)
class SamplerConfig:
    """Shaping for one sampling role; temperature 0 means greedy argmax."""

    temperature: float = 1.0
    top_k: int | None = None
    top_p: float | None = None
    max_len: int = 32

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if self.top_k is not None and self.top_p is not None:
            raise ConfigError("at most one of top_k/top_p may be set per role")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")


def default_accept_k(vocab_size: int) -> int:
    """25 at full vocabulary scale, 40% of |V| for the small vocabularies here."""
    return 25 if vocab_size >= 64 else math.ceil(0.4 * vocab_size)


@dataclass(frozen=True)
class SkdConfig:
    accept_k: int
    block_len: int = 5
    student: SamplerConfig = SamplerConfig(temperature=0.5, top_p=0.5)
    teacher: SamplerConfig = SamplerConfig(temperature=0.2)

    def __post_init__(self):
        if self.accept_k < 0:
            raise ConfigError(f"accept_k must be >= 0, got {self.accept_k}")
        if self.block_len < 1:
            raise ConfigError(f"block_len must be >= 1, got {self.block_len}")


@dataclass
class Trajectory:
    """A generated response with per-token provenance.

    ``teacher_ranks[i]`` is the token's rank under the teacher logits at its
    position (None for plain sampling, where no teacher was consulted).
    """

    prompt: tuple[int, ...]
    tokens: list[int]
    provenance: list[str]
    logprobs: list[float]
    teacher_ranks: list

    def validate(self, eos_id: int):
        n = len(self.tokens)
        if not (len(self.provenance) == len(self.logprobs) == len(self.teacher_ranks) == n):
            raise ValueError("per-token annotations must match token count")
        for i, t in enumerate(self.tokens):
            if t == eos_id and i != n - 1:
                raise ValueError("EOS may only be the final token")


def shaped_distribution(logits: np.ndarray, cfg: SamplerConfig) -> np.ndarray:
    """Temperature then optional truncation; a point mass when greedy."""
    logits = np.asarray(logits, dtype=np.float64)
    if cfg.temperature == 0:
        dist = np.zeros(len(logits))
        dist[int(np.argmax(logits))] = 1.0  # argmax takes the lowest id on ties
        return dist
    dist = softmax_with_temperature(logits, cfg.temperature)
    if cfg.top_k is not None:
        dist = truncate_top_k(dist, cfg.top_k)
    elif cfg.top_p is not None:
        dist = truncate_top_p(dist, cfg.top_p)
    return dist


def draw_token(logits: np.ndarray, cfg: SamplerConfig, u: float) -> tuple[int, float]:
    """One token plus its log-probability under the shaped distribution."""
    dist = shaped_distribution(logits, cfg)
    tok = int(np.argmax(dist)) if cfg.temperature == 0 else categorical(dist, u)
    return tok, float(np.log(dist[tok]))


def sample_autoregressive(model, prompt, cfg: SamplerConfig, rng: RngStream) -> Trajectory:
    """Decode until EOS or ``cfg.max_len`` tokens."""
    eos = model.vocab.eos_id
    tokens: list[int] = []
    logprobs: list[float] = []
    for pos in range(cfg.max_len):
        logits = model.next_logits(prompt, tokens)
        tok, lp = draw_token(logits, cfg, rng.uniform(pos))
        tokens.append(tok)
        logprobs.append(lp)
        if tok == eos:
            break
    traj = Trajectory(
        prompt=tuple(prompt),
        tokens=tokens,
        provenance=[PLAIN] * len(tokens),
        logprobs=logprobs,
        teacher_ranks=[None] * len(tokens),
    )
    traj.validate(eos)
    return traj


def teacher_rank(teacher_logits: np.ndarray, token: int) -> int:
    """Rank of ``token`` by descending logit, ties broken by ascending id."""
    logits = np.asarray(teacher_logits)
    mine = logits[token]
    better = int(np.sum(logits > mine))
    tied_lower = int(np.sum(logits[:token] == mine))
    return better + tied_lower


def topk_accept(student_token: int, teacher_logits: np.ndarray, k: int) -> bool:
    """True iff the token is among the teacher's K top-ranked next tokens."""
    if not 0 <= k <= len(teacher_logits):
        raise ConfigError(f"acceptance rank must be in [0, {len(teacher_logits)}], got {k}")
    return teacher_rank(teacher_logits, student_token) < k


def skd_interleaved_sample(
    student, teacher, prompt, cfg: SkdConfig, student_rng: RngStream, teacher_rng: RngStream
) -> Trajectory:
    """Student proposes blocks; the teacher keeps top-K tokens and replaces the
    first rejection, after which a fresh block starts."""
    if student.vocab_size != teacher.vocab_size:
        raise ValueError("student and teacher must share a vocabulary")
    if cfg.accept_k > teacher.vocab_size:
        raise ConfigError(f"accept_k {cfg.accept_k} exceeds |V|={teacher.vocab_size}")
    eos = student.vocab.eos_id
    alpha = cfg.student.max_len
    tokens: list[int] = []
    provenance: list[str] = []
    logprobs: list[float] = []
    ranks: list[int] = []

    while len(tokens) < alpha and (not tokens or tokens[-1] != eos):
        start = len(tokens)
        block = min(cfg.block_len, alpha - start)

        proposals: list[tuple[int, float]] = []
        lookahead = list(tokens)
        for j in range(block):
            logits = student.next_logits(prompt, lookahead)
            tok, lp = draw_token(logits, cfg.student, student_rng.uniform(start + j))
            proposals.append((tok, lp))
            lookahead.append(tok)
            if tok == eos:
                break

        context = list(tokens)
        for j, (tok, lp) in enumerate(proposals):
            t_logits = teacher.next_logits(prompt, context)
            if topk_accept(tok, t_logits, cfg.accept_k):
                tokens.append(tok)
                provenance.append(STUDENT_ACCEPTED)
                logprobs.append(lp)
                ranks.append(teacher_rank(t_logits, tok))
                context.append(tok)
            else:
                # replacement draw; the rest of the block is discarded
                new_tok, new_lp = draw_token(t_logits, cfg.teacher, teacher_rng.uniform(start + j))
                tokens.append(new_tok)
                provenance.append(TEACHER_RESAMPLED)
                logprobs.append(new_lp)
                ranks.append(teacher_rank(t_logits, new_tok))
                break

    traj = Trajectory(
        prompt=tuple(prompt),
        tokens=tokens,
        provenance=provenance,
        logprobs=logprobs,
        teacher_ranks=ranks,
    )
    traj.validate(eos)
    return traj


@dataclass
class AcceptanceStats:
    proposed: int = 0
    accepted: int = 0
    target_calls: int = 0
    emitted_tokens: int = 0

    def merge(self, other: "AcceptanceStats"):
        self.proposed += other.proposed
        self.accepted += other.accepted
        self.target_calls += other.target_calls
        self.emitted_tokens += other.emitted_tokens


def speculative_decode(
    draft,
    target,
    prompt,
    gamma: int,
    cfg: SamplerConfig,
    draft_rng: RngStream,
    accept_rng: RngStream,
    target_rng: RngStream,
) -> tuple[Trajectory, AcceptanceStats]:
    """Lossless draft/verify decoding.

    A draft token y with proposal probability p(y) is kept with probability
    min(1, q(y)/p(y)); the first rejection emits from the residual
    normalize(max(q - p, 0)); a fully accepted block earns one bonus draw
    from q. The emitted sequence is distributed exactly as target-only
    sampling under the same shaping config.
    """
    if draft.vocab_size != target.vocab_size:
        raise ValueError("draft and target must share a vocabulary")
    if gamma < 1:
        raise ConfigError(f"gamma must be >= 1, got {gamma}")
    eos = target.vocab.eos_id
    alpha = cfg.max_len
    stats = AcceptanceStats()
    tokens: list[int] = []
    provenance: list[str] = []
    logprobs: list[float] = []

    while len(tokens) < alpha and (not tokens or tokens[-1] != eos):
        start = len(tokens)
        block = min(gamma, alpha - start)

        proposals: list[tuple[int, np.ndarray]] = []
        lookahead = list(tokens)
        for j in range(block):
            p_dist = shaped_distribution(draft.next_logits(prompt, lookahead), cfg)
            if cfg.temperature == 0:
                tok = int(np.argmax(p_dist))
            else:
                tok = categorical(p_dist, draft_rng.uniform(start + j))
            proposals.append((tok, p_dist))
            lookahead.append(tok)
            if tok == eos:
                break
        stats.proposed += len(proposals)
        stats.target_calls += 1

        context = list(tokens)
        all_accepted = True
        for j, (tok, p_dist) in enumerate(proposals):
            q_dist = shaped_distribution(target.next_logits(prompt, context), cfg)
            p_y = p_dist[tok]
            if p_y <= 0.0:
                raise RuntimeError("draft proposed a zero-probability token")
            if accept_rng.uniform(start + j) < min(1.0, q_dist[tok] / p_y):
                stats.accepted += 1
                tokens.append(tok)
                provenance.append(STUDENT_ACCEPTED)
                logprobs.append(float(np.log(q_dist[tok])))
                context.append(tok)
            else:
                residual = np.maximum(q_dist - p_dist, 0.0)
                mass = residual.sum()
                dist = residual / mass if mass > 0 else q_dist
                new_tok = categorical(dist, target_rng.uniform(start + j))
                tokens.append(new_tok)
                provenance.append(TEACHER_RESAMPLED)
                logprobs.append(float(np.log(dist[new_tok])))
                all_accepted = False
                break

        if all_accepted and len(tokens) < alpha and tokens[-1] != eos:
            pos = len(tokens)
            q_dist = shaped_distribution(target.next_logits(prompt, tokens), cfg)
            if cfg.temperature == 0:
                tok = int(np.argmax(q_dist))
            else:
                tok = categorical(q_dist, target_rng.uniform(pos))
            tokens.append(tok)
            provenance.append(TEACHER_RESAMPLED)
            logprobs.append(float(np.log(q_dist[tok])))

    stats.emitted_tokens = len(tokens)
    traj = Trajectory(
        prompt=tuple(prompt),
        tokens=tokens,
        provenance=provenance,
        logprobs=logprobs,
        teacher_ranks=[None] * len(tokens),
    )
    traj.validate(eos)
    return traj, stats


def save_trajectories(trajectories, path):
    """One JSON record per trajectory (prompt, tokens, provenance, ranks)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for traj in trajectories:
            rec = {
                "prompt": list(traj.prompt),
                "tokens": list(traj.tokens),
                "provenance": list(traj.provenance),
                "teacher_rank": list(traj.teacher_ranks),
                "logprob": [round(x, 12) for x in traj.logprobs],
            }
            fh.write(json.dumps(rec) + "\n")


def load_trajectories(path) -> list[Trajectory]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            out.append(
                Trajectory(
                    prompt=tuple(rec["prompt"]),
                    tokens=list(rec["tokens"]),
                    provenance=list(rec["provenance"]),
                    logprobs=[float(x) for x in rec["logprob"]],
                    teacher_ranks=list(rec["teacher_rank"]),
                )
            )
    return out
