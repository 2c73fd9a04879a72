"""Exact loss gradients, a finite-difference oracle, and optimizer updates.

The loss over a batch is the batch mean of per-sequence losses, where each
per-sequence loss is the mean over its response positions of either the
negative log-likelihood of the target token or a divergence between the
(constant) teacher distribution and the student's softmax. Gradients are
hand-derived through the softmax and the MLP; ``finite_diff_grad`` provides
the independent numerical check.

No gradient ever flows into teacher-side inputs: teacher distributions enter
the formulas as constants only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .divergence import DivergenceSpec
from .errors import ConfigError, NumericalError
from .models import NeuralLM, context_matrix, softmax_rows

NLL = "nll"


@dataclass
class Batch:
    """Loss inputs: padded target ids plus per-position teacher distributions.

    ``targets`` is (B, Lmax) PAD-filled; only the first ``lengths[b]`` positions
    of row b are real. ``teacher_dists``/``student_dists`` are (B, Lmax, V)
    full-support rows at unit temperature (teacher side absent for likelihood
    training). ``sources``/trajectory metadata travel with the batch for
    logging only.
    """

    prompts: list
    targets: np.ndarray
    lengths: np.ndarray
    teacher_dists: np.ndarray | None = None
    student_dists: np.ndarray | None = None
    sources: list | None = None
    acceptance: tuple[int, int] | None = None  # (accepted, replaced) token counts

    @property
    def size(self) -> int:
        return len(self.prompts)


def batch_contexts(model: NeuralLM, batch: Batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flatten a batch into per-position model contexts.

    Returns (ctx, rows, cols): ctx is (N, c) with one row per real response
    position, and (rows, cols) index that position back into the batch arrays.
    """
    width = model.context_width
    bos = model.vocab.bos_id
    seqs, rows, cols = [], [], []
    for b, prompt in enumerate(batch.prompts):
        L = int(batch.lengths[b])
        toks = tuple(prompt) + tuple(int(t) for t in batch.targets[b, :L])
        base = len(prompt)
        for i in range(L):
            seqs.append(toks[: base + i])
            rows.append(b)
            cols.append(i)
    ctx = context_matrix(seqs, width, bos)
    return ctx, np.array(rows), np.array(cols)


def _position_weights(batch: Batch, rows: np.ndarray) -> np.ndarray:
    # each position carries 1 / (batch_size * L_y of its own sequence)
    return 1.0 / (batch.size * batch.lengths[rows].astype(np.float64))


def _loss_terms(probs, batch, rows, cols, loss_spec):
    """Per-position loss values and d(loss)/d(logits), both unweighted."""
    n, v = probs.shape
    if loss_spec == NLL:
        eps = 1e-12
        y = batch.targets[rows, cols]
        p_y = probs[np.arange(n), y]
        live = p_y > eps
        losses = -np.log(np.maximum(p_y, eps))
        dlogits = probs.copy()
        dlogits[np.arange(n), y] -= 1.0
        dlogits[~live] = 0.0
        return losses, dlogits

    if not isinstance(loss_spec, DivergenceSpec):
        raise ConfigError(f"unknown loss spec {loss_spec!r}")
    if batch.teacher_dists is None:
        raise ConfigError(f"{loss_spec.kind} loss needs teacher distributions in the batch")
    eps = loss_spec.epsilon_floor
    t = batch.teacher_dists[rows, cols]  # constants: no gradient flows teacher-side

    if loss_spec.kind == "forward_kl":
        live = probs > eps
        log_ratio = np.where(t > 0, np.log(np.where(t > 0, t, 1.0)), 0.0) - np.log(
            np.maximum(probs, eps)
        )
        losses = np.sum(np.where(t > 0, t, 0.0) * log_ratio, axis=1)
        t_live = np.where(live, t, 0.0)
        dlogits = probs * t_live.sum(axis=1, keepdims=True) - t_live
        return losses, dlogits

    if loss_spec.kind == "reverse_kl":
        r = np.where(
            probs > 0,
            np.log(np.maximum(probs, 1e-300)) - np.log(np.maximum(t, eps)),
            0.0,
        )
        losses = np.sum(probs * r, axis=1)
        dlogits = probs * (r - losses[:, None])
        return losses, dlogits

    if loss_spec.kind == "jsd":
        m = 0.5 * (t + probs)
        lp = np.where(probs > 0, np.log(np.maximum(probs, 1e-300) / np.maximum(m, 1e-300)), 0.0)
        lt = np.where(t > 0, np.log(np.maximum(t, 1e-300) / np.maximum(m, 1e-300)), 0.0)
        kl_pm = np.sum(probs * lp, axis=1)
        kl_tm = np.sum(t * lt, axis=1)
        losses = 0.5 * (kl_tm + kl_pm)
        dlogits = 0.5 * probs * (lp - kl_pm[:, None])
        return losses, dlogits

    if loss_spec.kind == "tv":
        diff = probs - t
        losses = 0.5 * np.sum(np.abs(diff), axis=1)
        s = np.sign(diff)
        dlogits = 0.5 * probs * (s - np.sum(probs * s, axis=1, keepdims=True))
        return losses, dlogits

    raise ConfigError(f"unknown divergence kind {loss_spec.kind!r}")


def loss_value(student: NeuralLM, batch: Batch, loss_spec) -> float:
    """Forward-only batch loss (shared by training logs and the FD oracle)."""
    ctx, rows, cols = batch_contexts(student, batch)
    probs = softmax_rows(student.logits_for_contexts(ctx))
    losses, _ = _loss_terms(probs, batch, rows, cols, loss_spec)
    return float(np.sum(losses * _position_weights(batch, rows)))


def forward_backward(student: NeuralLM, batch: Batch, loss_spec) -> tuple[float, dict]:
    """Batch loss and its exact gradient with respect to the student parameters."""
    ctx, rows, cols = batch_contexts(student, batch)
    logits = student.logits_for_contexts(ctx)
    probs = softmax_rows(logits)
    losses, dlogits = _loss_terms(probs, batch, rows, cols, loss_spec)
    w = _position_weights(batch, rows)
    loss = float(np.sum(losses * w))
    if not math.isfinite(loss):
        raise NumericalError(
            f"non-finite loss ({loss}) for {loss_spec!r}; "
            f"logit range [{logits.min():.3g}, {logits.max():.3g}]"
        )
    demb, dw1, db1, dw2, db2 = _kernels.mlp_backward(
        student.emb, student.w1, student.b1, student.w2, student.b2, ctx, dlogits * w[:, None]
    )
    grads = {"emb": demb, "w1": dw1, "b1": db1, "w2": dw2, "b2": db2}
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {name} for {loss_spec!r}")
    return loss, grads


def finite_diff_grad(student: NeuralLM, batch: Batch, loss_spec, h: float = 1e-5) -> dict:
    """Central-difference gradient, one coordinate at a time."""
    if h <= 0:
        raise ConfigError(f"finite-difference step must be > 0, got {h}")
    grads = {}
    for name, arr in student.parameters().items():
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value(student, batch, loss_spec)
            flat[i] = orig - h
            down = loss_value(student, batch, loss_spec)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup to the base rate, then linear decay to zero (or constant)."""

    base_rate: float
    total_steps: int
    warmup_ratio: float = 0.1
    decay: str = "linear"

    def __post_init__(self):
        if self.base_rate <= 0:
            raise ConfigError("base_rate must be > 0")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if not 0 <= self.warmup_ratio < 1:
            raise ConfigError("warmup_ratio must be in [0, 1)")
        if self.decay not in ("linear", "none"):
            raise ConfigError(f"decay must be 'linear' or 'none', got {self.decay!r}")

    @property
    def warmup_steps(self) -> int:
        return math.ceil(self.warmup_ratio * self.total_steps)


def lr_at(schedule: LrSchedule, step: int) -> float:
    if not 0 <= step <= schedule.total_steps:
        raise ConfigError(f"step {step} outside [0, {schedule.total_steps}]")
    warm = schedule.warmup_steps
    if warm > 0 and step <= warm:
        return schedule.base_rate * step / warm
    if schedule.decay == "none":
        return schedule.base_rate
    denom = max(schedule.total_steps - warm, 1)
    return schedule.base_rate * (schedule.total_steps - step) / denom


@dataclass
class OptimizerState:
    kind: str  # "sgd" | "adam"
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optimizer(kind: str, params: dict) -> OptimizerState:
    if kind not in ("sgd", "adam"):
        raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {kind!r}")
    state = OptimizerState(kind=kind)
    if kind == "adam":
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
    return state


def optimizer_step(
    params: dict, grads: dict, state: OptimizerState, schedule: LrSchedule, step: int
) -> OptimizerState:
    """Apply one in-place update at the scheduled rate for ``step``."""
    lr = lr_at(schedule, step)
    if state.kind == "sgd":
        for name, p in params.items():
            p -= lr * grads[name]
    else:
        state.step_count += 1
        bc1 = 1.0 - state.beta1**state.step_count
        bc2 = 1.0 - state.beta2**state.step_count
        for name, p in params.items():
            g = grads[name]
            state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
            state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
            m_hat = state.m[name] / bc1
            v_hat = state.v[name] / bc2
            p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    for name, p in params.items():
        if not np.all(np.isfinite(p)):
            raise NumericalError(f"non-finite parameter {name} after optimizer step {step}")
    return state
