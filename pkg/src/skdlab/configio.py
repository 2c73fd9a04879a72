"""Experiment config files: flat ``key = value`` sections with a hard schema.

Unknown sections or keys are errors (reported with their line number) so a
typo can never silently fall back to a default hyperparameter.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass

from .autodiff import LrSchedule
from .divergence import DivergenceSpec
from .errors import ConfigError
from .sampling import SamplerConfig
from .training import METHOD_KINDS, MethodSpec, TrainConfig


def _parse_bool(raw: str) -> bool:
    if raw.lower() in ("true", "1", "yes"):
        return True
    if raw.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_fractions(raw: str) -> tuple[float, float, float]:
    parts = [float(x) for x in raw.replace(",", " ").split()]
    if len(parts) != 3:
        raise ValueError("expected three fractions (train dev test)")
    return tuple(parts)  # type: ignore[return-value]


def _parse_int_list(raw: str) -> list[int]:
    return [int(x) for x in raw.replace(",", " ").split()]


def _parse_str_list(raw: str) -> list[str]:
    return [x.strip() for x in raw.split(",") if x.strip()]


# section -> key -> (converter, default); ``...`` marks a required key
SCHEMA = {
    "task": {
        "name": (str, ...),
        "corpus": (str, ...),
        "split": (_parse_fractions, (0.8, 0.1, 0.1)),
        "split_seed": (int, 0),
    },
    "teacher": {
        "kind": (str, "none"),  # tabular | neural | none
        "path": (str, None),
    },
    "student": {
        "init": (str, "fresh"),  # fresh | checkpoint path
        "context": (int, 4),
        "d_emb": (int, 16),
        "d_hid": (int, 64),
    },
    "method": {
        "kind": (str, ...),
        "divergence": (str, "forward_kl"),
        "epsilon_floor": (float, 1e-12),
        "accept_k": (int, None),
        "block_len": (int, 5),
        "student_temperature": (float, 0.5),
        "student_top_k": (int, None),
        "student_top_p": (float, 0.5),
        "teacher_temperature": (float, 0.2),
        "teacher_top_k": (int, None),
        "teacher_top_p": (float, None),
        "mix_probability": (float, 0.5),
        "stage_boundary": (int, None),
    },
    "train": {
        "total_steps": (int, ...),
        "batch_size": (int, 8),
        "base_rate": (float, 3e-3),
        "warmup_ratio": (float, 0.1),
        "decay": (str, "linear"),
        "optimizer": (str, "adam"),
        "eval_every": (int, 100),
        "max_len": (int, 16),
        "run_seed": (int, 0),
    },
    "eval": {
        "horizon": (int, 4),
    },
    "specdec": {
        "draft": (_parse_str_list, None),
        "target": (str, None),
        "gamma": (_parse_int_list, [5]),
        "n_prompts": (int, 50),
        "n_runs": (int, 1),
        "temperature": (float, 1.0),
        "max_len": (int, 16),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    corpus_path: str
    split_fractions: tuple[float, float, float]
    split_seed: int
    teacher_kind: str
    teacher_path: str | None
    student_init: str
    context: int
    d_emb: int
    d_hid: int
    method: MethodSpec
    train: TrainConfig
    horizon: int
    specdec: dict | None
    raw_text: str

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, train=dataclasses.replace(self.train, run_seed=seed))

    def with_method(self, method: MethodSpec) -> "ExperimentConfig":
        return dataclasses.replace(self, method=method)


def _line_of(text: str, section: str, key: str | None) -> int:
    """Best-effort line number of a key (or section header) in the raw text."""
    in_section = section is None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("["):
            if key is None and stripped == f"[{section}]":
                return lineno
            in_section = stripped == f"[{section}]"
        elif in_section and key is not None:
            body = stripped.split("#", 1)[0]
            if body.split("=", 1)[0].strip() == key:
                return lineno
    return 0


def parse_config_text(text: str, path: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    values: dict[str, dict] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(
                f"{path}:{_line_of(text, section, None)}: unknown section [{section}]"
            )
        values[section] = {}
        for key, raw in cp[section].items():
            if key not in SCHEMA[section]:
                raise ConfigError(
                    f"{path}:{_line_of(text, section, key)}: unknown key {key!r} in [{section}]"
                )
            conv = SCHEMA[section][key][0]
            try:
                values[section][key] = conv(raw) if raw != "" else None
            except ValueError as exc:
                raise ConfigError(
                    f"{path}:{_line_of(text, section, key)}: bad value for {key!r}: {exc}"
                ) from exc

    def get(section, key):
        if key in values.get(section, {}):
            return values[section][key]
        conv, default = SCHEMA[section][key]
        if default is ...:
            raise ConfigError(f"{path}: missing required key {key!r} in [{section}]")
        return default

    kind = get("method", "kind")
    if kind not in METHOD_KINDS:
        raise ConfigError(
            f"{path}:{_line_of(text, 'method', 'kind')}: unknown method kind {kind!r}; "
            f"pick one of {METHOD_KINDS}"
        )
    teacher_top_p = get("method", "teacher_top_p")
    method = MethodSpec(
        kind=kind,
        divergence=DivergenceSpec(get("method", "divergence"), get("method", "epsilon_floor")),
        student_sampler=SamplerConfig(
            temperature=get("method", "student_temperature"),
            top_k=get("method", "student_top_k"),
            top_p=get("method", "student_top_p"),
        ),
        teacher_sampler=SamplerConfig(
            temperature=get("method", "teacher_temperature"),
            top_k=get("method", "teacher_top_k"),
            top_p=None if teacher_top_p in (None, 1.0) else teacher_top_p,
        ),
        accept_k=get("method", "accept_k"),
        block_len=get("method", "block_len"),
        mix_probability=get("method", "mix_probability"),
        stage_boundary=get("method", "stage_boundary"),
    )
    train_cfg = TrainConfig(
        total_steps=get("train", "total_steps"),
        batch_size=get("train", "batch_size"),
        schedule=LrSchedule(
            base_rate=get("train", "base_rate"),
            total_steps=get("train", "total_steps"),
            warmup_ratio=get("train", "warmup_ratio"),
            decay=get("train", "decay"),
        ),
        optimizer=get("train", "optimizer"),
        eval_every=get("train", "eval_every"),
        run_seed=get("train", "run_seed"),
        max_len=get("train", "max_len"),
    )
    specdec = None
    if "specdec" in values:
        specdec = {key: get("specdec", key) for key in SCHEMA["specdec"]}
    return ExperimentConfig(
        task=get("task", "name"),
        corpus_path=get("task", "corpus"),
        split_fractions=get("task", "split"),
        split_seed=get("task", "split_seed"),
        teacher_kind=get("teacher", "kind"),
        teacher_path=get("teacher", "path"),
        student_init=get("student", "init"),
        context=get("student", "context"),
        d_emb=get("student", "d_emb"),
        d_hid=get("student", "d_hid"),
        method=method,
        train=train_cfg,
        horizon=get("eval", "horizon"),
        specdec=specdec,
        raw_text=text,
    )


def parse_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError:
        raise
    return parse_config_text(text, str(path))
