"""Language-model interface and its two implementations.

Both models answer one question: given a prompt and a generated prefix, what
is the next-token logit vector? The tabular model reads the answer off an
explicit chain (log-probabilities, exact); the neural model is a fixed-context
MLP over the last ``context`` tokens (concatenated embeddings, one tanh
hidden layer, linear output). Prefixes shorter than the context window are
left-padded with BOS.

Zero probabilities in the tabular model are stored as a large negative log
floor rather than -inf so downstream arithmetic stays finite; the floored
tokens still underflow to probability zero after softmax.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .corpus import MarkovSpec, Vocabulary
from .errors import ConfigError
from .rng import RngStream

LOG_FLOOR = -1e9


def context_matrix(sequences, width: int, bos_id: int) -> np.ndarray:
    """Stack the last ``width`` tokens of each sequence, BOS-padded on the left."""
    out = np.full((len(sequences), width), bos_id, dtype=np.int64)
    for i, seq in enumerate(sequences):
        tail = tuple(seq)[-width:]
        if tail:
            out[i, width - len(tail) :] = tail
    return out


def _check_tokens(seq, vocab_size: int):
    for t in seq:
        if not 0 <= t < vocab_size:
            raise ValueError(f"token id {t} out of range for |V|={vocab_size}")


class TabularMarkovLM:
    """Exact teacher: logits are the log of the chain's transition rows."""

    def __init__(self, spec: MarkovSpec):
        self.spec = spec
        self.vocab = spec.vocab
        self.context_width = spec.order
        with np.errstate(divide="ignore"):
            log_table = np.log(spec.table)
        self._log_table = np.where(np.isfinite(log_table), log_table, LOG_FLOOR)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def logits_for_contexts(self, ctx: np.ndarray) -> np.ndarray:
        return self._log_table[tuple(ctx[:, i] for i in range(self.context_width))]

    def next_logits(self, prompt, prefix) -> np.ndarray:
        _check_tokens(prompt, self.vocab_size)
        _check_tokens(prefix, self.vocab_size)
        ctx = context_matrix([tuple(prompt) + tuple(prefix)], self.context_width, self.vocab.bos_id)
        return self.logits_for_contexts(ctx)[0]


@dataclass
class NeuralLM:
    """Trainable fixed-context MLP language model."""

    vocab: Vocabulary
    context: int
    emb: np.ndarray = field(repr=False)
    w1: np.ndarray = field(repr=False)
    b1: np.ndarray = field(repr=False)
    w2: np.ndarray = field(repr=False)
    b2: np.ndarray = field(repr=False)
    trainable: bool = True

    def __post_init__(self):
        v = len(self.vocab)
        d_emb = self.emb.shape[1]
        d_hid = self.w1.shape[1]
        expect = {
            "emb": (v, d_emb),
            "w1": (self.context * d_emb, d_hid),
            "b1": (d_hid,),
            "w2": (d_hid, v),
            "b2": (v,),
        }
        for name, shape in expect.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ConfigError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"parameter {name} contains non-finite entries")

    @classmethod
    def init(
        cls,
        vocab: Vocabulary,
        context: int,
        d_emb: int,
        d_hid: int,
        init_stream: RngStream,
        scale: float = 0.08,
        trainable: bool = True,
    ) -> "NeuralLM":
        rng = init_stream.at(0)
        v = len(vocab)
        return cls(
            vocab=vocab,
            context=context,
            emb=rng.normal(0.0, scale, (v, d_emb)),
            w1=rng.normal(0.0, scale, (context * d_emb, d_hid)),
            b1=np.zeros(d_hid),
            w2=rng.normal(0.0, scale, (d_hid, v)),
            b2=np.zeros(v),
            trainable=trainable,
        )

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def context_width(self) -> int:
        return self.context

    @property
    def d_emb(self) -> int:
        return self.emb.shape[1]

    @property
    def d_hid(self) -> int:
        return self.w1.shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        return {"emb": self.emb, "w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def set_parameters(self, params: dict[str, np.ndarray]):
        if not self.trainable:
            raise ConfigError("model is frozen; refusing to overwrite parameters")
        for name, arr in params.items():
            getattr(self, name)[...] = arr

    def copy(self, trainable: bool | None = None) -> "NeuralLM":
        return NeuralLM(
            vocab=self.vocab,
            context=self.context,
            emb=self.emb.copy(),
            w1=self.w1.copy(),
            b1=self.b1.copy(),
            w2=self.w2.copy(),
            b2=self.b2.copy(),
            trainable=self.trainable if trainable is None else trainable,
        )

    def logits_for_contexts(self, ctx: np.ndarray) -> np.ndarray:
        return _kernels.mlp_forward(self.emb, self.w1, self.b1, self.w2, self.b2, ctx)

    def next_logits(self, prompt, prefix) -> np.ndarray:
        _check_tokens(prompt, self.vocab_size)
        _check_tokens(prefix, self.vocab_size)
        ctx = context_matrix([tuple(prompt) + tuple(prefix)], self.context, self.vocab.bos_id)
        return self.logits_for_contexts(ctx)[0]


def softmax_with_temperature(logits: np.ndarray, t: float) -> np.ndarray:
    """probs_i = exp(l_i / t) / sum_j exp(l_j / t), max-subtracted for stability."""
    if t <= 0:
        raise ConfigError(f"temperature must be > 0, got {t} (use greedy sampling for t=0)")
    z = np.asarray(logits, dtype=np.float64) / t
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise unit-temperature softmax for (n, |V|) logit matrices."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _descending_order(values: np.ndarray) -> np.ndarray:
    """Indices sorted by descending value, ties by ascending token id."""
    return np.lexsort((np.arange(len(values)), -values))


def truncate_top_k(dist: np.ndarray, k: int) -> np.ndarray:
    """Keep the k most probable tokens (ties at the boundary go to lower ids)."""
    v = len(dist)
    if not 1 <= k <= v:
        raise ConfigError(f"top-k must be in [1, {v}], got {k}")
    if k == v:
        return np.array(dist, dtype=np.float64)
    keep = _descending_order(np.asarray(dist))[:k]
    out = np.zeros(v)
    out[keep] = dist[keep]
    return out / out.sum()


def truncate_top_p(dist: np.ndarray, p: float) -> np.ndarray:
    """Keep the smallest descending-probability prefix with cumulative mass >= p."""
    if not 0 < p <= 1:
        raise ConfigError(f"top-p must be in (0, 1], got {p}")
    dist = np.asarray(dist, dtype=np.float64)
    if p == 1.0:
        return np.array(dist)
    order = _descending_order(dist)
    cum = np.cumsum(dist[order])
    cut = int(np.searchsorted(cum, p, side="left")) + 1
    keep = order[:cut]
    out = np.zeros(len(dist))
    out[keep] = dist[keep]
    return out / out.sum()


def save_model(model: NeuralLM, path):
    """Checkpoint: version line, hyperparameters, then shape + row-major values
    per parameter at 17 significant digits (exact float64 round-trip)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("skdlab-checkpoint 1\n")
        fh.write(f"symbols {''.join(model.vocab.symbols)}\n")
        fh.write(f"reserved {model.vocab.pad_id} {model.vocab.bos_id} {model.vocab.eos_id}\n")
        fh.write(
            f"dims vocab={model.vocab_size} context={model.context} "
            f"d_emb={model.d_emb} d_hid={model.d_hid}\n"
        )
        for name, arr in model.parameters().items():
            shape = " ".join(str(s) for s in arr.shape)
            fh.write(f"param {name} {shape}\n")
            fh.write(" ".join(format(x, ".17g") for x in arr.ravel()) + "\n")


def load_model(path, trainable: bool = True) -> NeuralLM:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("skdlab-checkpoint"):
        raise ValueError(f"{path}: not a checkpoint file")
    symbols = lines[1].split(" ", 1)[1]
    pad, bos, eos = (int(x) for x in lines[2].split()[1:])
    vocab = Vocabulary(symbols=tuple(symbols), pad_id=pad, bos_id=bos, eos_id=eos)
    dims = dict(kv.split("=") for kv in lines[3].split()[1:])
    params = {}
    i = 4
    while i < len(lines):
        head = lines[i].split()
        if head[0] != "param":
            raise ValueError(f"{path}: unexpected record {head[0]!r}")
        name = head[1]
        shape = tuple(int(s) for s in head[2:])
        values = np.array(lines[i + 1].split(), dtype=np.float64)
        params[name] = values.reshape(shape)
        i += 2
    return NeuralLM(
        vocab=vocab,
        context=int(dims["context"]),
        emb=params["emb"],
        w1=params["w1"],
        b1=params["b1"],
        w2=params["w2"],
        b2=params["b2"],
        trainable=trainable,
    )
