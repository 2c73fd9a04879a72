"""Synthetic prompt/response corpora with exact task oracles.

Three tasks, all over single-character tokens so that every model
distribution stays enumerable:

* ``markov``  - responses sampled from an explicit finite-order chain; the
  chain itself doubles as an exact teacher.
* ``arith``   - prompts ``a+b=``, responses the decimal digits of the sum.
* ``reverse`` - prompts are random letter strings, responses their reversal.

Generation is a pure function of (spec, n, seed); corpora are immutable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .rng import categorical, stream

PAD_GLYPH = "~"
BOS_GLYPH = "^"
EOS_GLYPH = "$"

_LETTERS = "abcdefghijklmnopqrstuvwxyz"
_MAX_GEN_ATTEMPTS = 1000


@dataclass(frozen=True)
class Vocabulary:
    """Bijection between glyphs and contiguous token ids, with reserved tokens."""

    symbols: tuple[str, ...]
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2

    def __post_init__(self):
        n = len(self.symbols)
        if not 4 <= n <= 64:
            raise ConfigError(f"vocabulary size must be in [4, 64], got {n}")
        if len(set(self.symbols)) != n:
            raise ConfigError("vocabulary symbols must be distinct")
        reserved = {self.pad_id, self.bos_id, self.eos_id}
        if len(reserved) != 3 or not all(0 <= r < n for r in reserved):
            raise ConfigError("PAD/BOS/EOS ids must be three distinct in-range ids")

    @classmethod
    def build(cls, content: str) -> "Vocabulary":
        """Vocabulary with PAD/BOS/EOS first, then the given content glyphs."""
        for g in (PAD_GLYPH, BOS_GLYPH, EOS_GLYPH):
            if g in content:
                raise ConfigError(f"content may not contain reserved glyph {g!r}")
        return cls(symbols=(PAD_GLYPH, BOS_GLYPH, EOS_GLYPH) + tuple(content))

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def content_ids(self) -> tuple[int, ...]:
        reserved = {self.pad_id, self.bos_id, self.eos_id}
        return tuple(i for i in range(len(self.symbols)) if i not in reserved)

    def encode(self, text: str) -> list[int]:
        index = {s: i for i, s in enumerate(self.symbols)}
        try:
            return [index[ch] for ch in text]
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids) -> str:
        n = len(self.symbols)
        out = []
        for i in ids:
            if not 0 <= i < n:
                raise ValueError(f"token id {i} out of range for |V|={n}")
            out.append(self.symbols[i])
        return "".join(out)


@dataclass(frozen=True)
class Example:
    """One prompt/response pair; the response ends in exactly one EOS."""

    prompt: tuple[int, ...]
    response: tuple[int, ...]

    def validate(self, vocab: Vocabulary):
        if len(self.prompt) == 0:
            raise ValueError("prompt must be non-empty")
        if len(self.response) == 0 or self.response[-1] != vocab.eos_id:
            raise ValueError("response must end in EOS")
        seq = self.prompt + self.response
        if any(t == vocab.pad_id for t in seq):
            raise ValueError("PAD may not appear inside an example")
        if vocab.eos_id in self.prompt or vocab.eos_id in self.response[:-1]:
            raise ValueError("EOS may only appear as the final response token")
        if any(not 0 <= t < len(vocab) for t in seq):
            raise ValueError("token id out of vocabulary range")


@dataclass(frozen=True)
class Corpus:
    vocab: Vocabulary
    examples: tuple[Example, ...]
    task_tag: str
    generation_seed: int


@dataclass(frozen=True)
class MarkovSpec:
    """Finite-order chain: a next-token distribution for every context tuple."""

    order: int
    table: np.ndarray = field(repr=False)  # shape (|V|,)*order + (|V|,)
    vocab: Vocabulary

    def __post_init__(self):
        v = len(self.vocab)
        if self.order < 1:
            raise ConfigError("chain order must be >= 1")
        if self.table.shape != (v,) * self.order + (v,):
            raise ConfigError(
                f"transition table shape {self.table.shape} does not match |V|={v}, order={self.order}"
            )
        sums = self.table.sum(axis=-1)
        if not np.all(np.abs(sums - 1.0) < 1e-9):
            raise ConfigError("every transition row must sum to 1 within 1e-9")
        if np.any(self.table < 0):
            raise ConfigError("transition probabilities must be non-negative")

    def row(self, context) -> np.ndarray:
        """Next-token distribution for the last ``order`` tokens of a context."""
        return self.table[tuple(int(t) for t in context)]


def random_markov_spec(
    vocab: Vocabulary,
    order: int,
    seed: int,
    eos_prob: float = 0.1,
    concentration: float = 0.4,
) -> MarkovSpec:
    """Random chain over content tokens.

    Rows for contexts made purely of content tokens put ``eos_prob`` mass on
    EOS and a Dirichlet draw on the content tokens. Contexts touching a
    reserved token (the start contexts, plus unreachable ones) get a uniform
    content row with no EOS mass, so prompts sampled from the chain start are
    always EOS-free.
    """
    v = len(vocab)
    if v**order > 1_000_000:
        raise ConfigError(f"|V|^order = {v**order} exceeds the enumeration budget")
    if not 0.0 <= eos_prob < 1.0:
        raise ConfigError("eos_prob must be in [0, 1)")
    content = np.array(vocab.content_ids)
    reserved = {vocab.pad_id, vocab.bos_id, vocab.eos_id}
    rng = np.random.default_rng(seed)

    table = np.zeros((v,) * order + (v,))
    uniform_row = np.zeros(v)
    uniform_row[content] = 1.0 / len(content)
    for ctx in np.ndindex(*(v,) * order):
        if any(t in reserved for t in ctx):
            table[ctx] = uniform_row
        else:
            row = np.zeros(v)
            row[content] = rng.dirichlet(np.full(len(content), concentration)) * (1.0 - eos_prob)
            row[vocab.eos_id] = eos_prob
            table[ctx] = row
    return MarkovSpec(order=order, table=table, vocab=vocab)


def _walk_chain(spec: MarkovSpec, rng: np.random.Generator, n_draws: int) -> list[int]:
    """Sample up to n_draws tokens from the chain start; stops after EOS."""
    ctx = (spec.vocab.bos_id,) * spec.order
    toks: list[int] = []
    for _ in range(n_draws):
        tok = categorical(spec.row(ctx), rng.random())
        toks.append(tok)
        if tok == spec.vocab.eos_id:
            break
        ctx = ctx[1:] + (tok,)
    return toks


def gen_markov_corpus(spec: MarkovSpec, n: int, len_range: tuple[int, int], seed: int) -> Corpus:
    """Corpus whose prompt is the chain's first ``order`` tokens and whose
    response is the continuation, EOS-terminated at the drawn length cap."""
    lo, hi = len_range
    if n < 1:
        raise ConfigError("n must be >= 1")
    if not hi >= lo >= spec.order:
        raise ConfigError(f"need max >= min >= order, got ({lo}, {hi}) with order {spec.order}")
    eos = spec.vocab.eos_id
    examples = []
    for i in range(n):
        for attempt in range(_MAX_GEN_ATTEMPTS):
            rng = stream(seed, "corpus", i, attempt).at(0)
            n_draws = int(rng.integers(lo, hi + 1))
            toks = _walk_chain(spec, rng, n_draws)
            if eos not in toks[: spec.order]:
                break
        else:
            raise ConfigError("chain emits EOS too early to form prompts; lower eos mass")
        prompt = tuple(toks[: spec.order])
        response = tuple(toks[spec.order :])
        if not response or response[-1] != eos:
            response = response + (eos,)
        ex = Example(prompt=prompt, response=response)
        ex.validate(spec.vocab)
        examples.append(ex)
    return Corpus(vocab=spec.vocab, examples=tuple(examples), task_tag="markov", generation_seed=seed)


def arith_vocab() -> Vocabulary:
    return Vocabulary.build("0123456789+=")


def gen_arith_corpus(digit_max: int, n: int, seed: int) -> Corpus:
    """Addition prompts ``a+b=`` with a, b uniform in [0, digit_max]."""
    if not 1 <= digit_max <= 99:
        raise ConfigError(f"digit_max must be in [1, 99], got {digit_max}")
    if n < 1:
        raise ConfigError("n must be >= 1")
    vocab = arith_vocab()
    examples = []
    for i in range(n):
        rng = stream(seed, "corpus", i).at(0)
        a = int(rng.integers(0, digit_max + 1))
        b = int(rng.integers(0, digit_max + 1))
        prompt = tuple(vocab.encode(f"{a}+{b}="))
        response = tuple(vocab.encode(str(a + b))) + (vocab.eos_id,)
        examples.append(Example(prompt=prompt, response=response))
    return Corpus(vocab=vocab, examples=tuple(examples), task_tag="arith", generation_seed=seed)


def reverse_vocab(n_letters: int = 13) -> Vocabulary:
    if not 1 <= n_letters <= 26:
        raise ConfigError("n_letters must be in [1, 26]")
    return Vocabulary.build(_LETTERS[:n_letters])


def gen_reverse_corpus(
    len_range: tuple[int, int], n: int, seed: int, n_letters: int = 13
) -> Corpus:
    """Random letter strings paired with their reversals."""
    lo, hi = len_range
    if lo < 1 or hi < lo:
        raise ConfigError(f"invalid length range ({lo}, {hi})")
    if n < 1:
        raise ConfigError("n must be >= 1")
    vocab = reverse_vocab(n_letters)
    first = vocab.content_ids[0]
    examples = []
    for i in range(n):
        rng = stream(seed, "corpus", i).at(0)
        length = int(rng.integers(lo, hi + 1))
        prompt = tuple(int(first + t) for t in rng.integers(0, n_letters, size=length))
        response = tuple(reversed(prompt)) + (vocab.eos_id,)
        examples.append(Example(prompt=prompt, response=response))
    return Corpus(vocab=vocab, examples=tuple(examples), task_tag="reverse", generation_seed=seed)


def split(corpus: Corpus, fractions: tuple[float, float, float], seed: int):
    """Disjoint (train, dev, test) partition.

    Sizes are the floors of the fractions; the remainder goes to train.
    """
    if any(f <= 0 for f in fractions):
        raise ConfigError("split fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)}")
    n = len(corpus.examples)
    # floor each non-train part (1e-9 slack absorbs float representation), remainder to train
    n_dev = int(fractions[1] * n + 1e-9)
    n_test = int(fractions[2] * n + 1e-9)
    n_train = n - n_dev - n_test
    if min(n_train, n_dev, n_test) < 1:
        raise ConfigError(f"split of {n} examples by {fractions} leaves an empty part")

    perm = stream(seed, "corpus").at(0).permutation(n)
    picks = (perm[:n_train], perm[n_train : n_train + n_dev], perm[n_train + n_dev :])
    parts = []
    for idx in picks:
        ex = tuple(corpus.examples[j] for j in sorted(idx))
        parts.append(
            Corpus(
                vocab=corpus.vocab,
                examples=ex,
                task_tag=corpus.task_tag,
                generation_seed=corpus.generation_seed,
            )
        )
    return tuple(parts)


def save_corpus(corpus: Corpus, path):
    """One JSON record per line; line 1 is the vocabulary header."""
    header = {
        "format": "skdlab-corpus",
        "version": 1,
        "task": corpus.task_tag,
        "seed": corpus.generation_seed,
        "symbols": "".join(corpus.vocab.symbols),
        "pad": corpus.vocab.pad_id,
        "bos": corpus.vocab.bos_id,
        "eos": corpus.vocab.eos_id,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header) + "\n")
        for ex in corpus.examples:
            rec = {
                "prompt": corpus.vocab.decode(ex.prompt),
                "response": corpus.vocab.decode(ex.response[:-1]),  # EOS implicit
            }
            fh.write(json.dumps(rec) + "\n")


def load_corpus(path) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty corpus file")
    header = json.loads(lines[0])
    if header.get("format") != "skdlab-corpus":
        raise ValueError(f"{path}: not a corpus file")
    vocab = Vocabulary(
        symbols=tuple(header["symbols"]),
        pad_id=header["pad"],
        bos_id=header["bos"],
        eos_id=header["eos"],
    )
    examples = []
    for line in lines[1:]:
        rec = json.loads(line)
        examples.append(
            Example(
                prompt=tuple(vocab.encode(rec["prompt"])),
                response=tuple(vocab.encode(rec["response"])) + (vocab.eos_id,),
            )
        )
    return Corpus(
        vocab=vocab,
        examples=tuple(examples),
        task_tag=header["task"],
        generation_seed=header["seed"],
    )


def save_markov_spec(spec: MarkovSpec, path):
    """Line-oriented text format: vocabulary header, then one row per context."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("skdlab-markov 1\n")
        fh.write(f"symbols {''.join(spec.vocab.symbols)}\n")
        fh.write(f"reserved {spec.vocab.pad_id} {spec.vocab.bos_id} {spec.vocab.eos_id}\n")
        fh.write(f"order {spec.order}\n")
        v = len(spec.vocab)
        for ctx in np.ndindex(*(v,) * spec.order):
            probs = " ".join(format(p, ".17g") for p in spec.table[ctx])
            fh.write(f"row {' '.join(str(t) for t in ctx)} {probs}\n")


def load_markov_spec(path) -> MarkovSpec:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("skdlab-markov"):
        raise ValueError(f"{path}: not a markov spec file")
    symbols = lines[1].split(" ", 1)[1]
    pad, bos, eos = (int(x) for x in lines[2].split()[1:])
    order = int(lines[3].split()[1])
    vocab = Vocabulary(symbols=tuple(symbols), pad_id=pad, bos_id=bos, eos_id=eos)
    v = len(vocab)
    table = np.zeros((v,) * order + (v,))
    for line in lines[4:]:
        parts = line.split()
        if parts[0] != "row":
            raise ValueError(f"{path}: unexpected record {parts[0]!r}")
        ctx = tuple(int(x) for x in parts[1 : 1 + order])
        table[ctx] = [float(x) for x in parts[1 + order :]]
    return MarkovSpec(order=order, table=table, vocab=vocab)
