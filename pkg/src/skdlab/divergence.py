"""Token-level divergences and the length-normalized sequence objective.

All four divergences take full-support categorical vectors of equal length.
Probabilities inside logarithms are clamped below at ``epsilon_floor`` so a
zero in the second argument yields a large finite value instead of infinity;
terms whose first-argument probability is zero contribute nothing.

The sequence objective pairs a teacher and a student distribution at every
response position and averages the per-position divergence over the sequence
length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

KINDS = ("forward_kl", "reverse_kl", "jsd", "tv")


@dataclass(frozen=True)
class DivergenceSpec:
    kind: str = "forward_kl"
    epsilon_floor: float = 1e-12

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown divergence {self.kind!r}; pick one of {KINDS}")
        if not 1e-15 <= self.epsilon_floor <= 1e-6:
            raise ConfigError(f"epsilon_floor must be in [1e-15, 1e-6], got {self.epsilon_floor}")


def _check_pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"distribution lengths differ: {p.shape} vs {q.shape}")
    return p, q


def kl(p, q, eps: float = 1e-12) -> float:
    """sum_c p(c) * (log p(c) - log max(q(c), eps)); zero-mass terms drop out."""
    p, q = _check_pair(p, q)
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(np.maximum(q[mask], eps)))))


def reverse_kl(p, q, eps: float = 1e-12) -> float:
    """kl with the arguments swapped, same clamping convention."""
    return kl(q, p, eps)


def jsd(p, q, eps: float = 1e-12) -> float:
    """0.5*kl(p, m) + 0.5*kl(q, m) with m the even mixture; bounded by ln 2."""
    p, q = _check_pair(p, q)
    m = 0.5 * (p + q)
    return 0.5 * kl(p, m, eps) + 0.5 * kl(q, m, eps)


def tv(p, q, eps: float = 1e-12) -> float:
    """Total variation distance 0.5 * sum |p - q|."""
    p, q = _check_pair(p, q)
    return float(0.5 * np.sum(np.abs(p - q)))


_FUNCS = {"forward_kl": kl, "reverse_kl": reverse_kl, "jsd": jsd, "tv": tv}


def token_divergence(teacher, student, spec: DivergenceSpec) -> float:
    """Divergence at one position; teacher is the first argument for forward KL."""
    return _FUNCS[spec.kind](teacher, student, spec.epsilon_floor)


def sequence_divergence(teacher_dists, student_dists, spec: DivergenceSpec) -> float:
    """(1/L) * sum_i D(teacher_i, student_i) over the response positions."""
    if len(teacher_dists) != len(student_dists):
        raise ValueError(
            f"sequence lengths differ: {len(teacher_dists)} vs {len(student_dists)}"
        )
    if len(teacher_dists) == 0:
        raise ValueError("sequence divergence needs at least one position")
    fn = _FUNCS[spec.kind]
    total = 0.0
    for t_dist, s_dist in zip(teacher_dists, student_dists):
        total += fn(t_dist, s_dist, spec.epsilon_floor)
    return total / len(teacher_dists)
