"""Experiment configuration: a flat INI file with one section per module.

::

    [experiment]
    algorithm = m-omd
    environment = exploration
    seeds = 0, 1, 2

    [environment]
    width = 5
    height = 5
    horizon = 10

    [train]
    omd_tau = 10.0
    exploration_fraction = 0.1

    [train_distributions]
    kinds = dirac, gaussian
    counts = 2, 1

Keys under ``[train]`` are the learner hyperparameter names. Unknown sections
or keys are rejected, and every value is validated at load time.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields, replace

from ..core import EnvModel, ValidationError
from ..deep import VARIANTS, TrainConfig
from ..envs import (
    BeachBarSpec,
    ExplorationSpec,
    LQSpec,
    beachbar_model,
    exploration_model,
    lq_model,
)
from .distributions import DistributionSetSpec

EXACT_ALGORITHMS = ("fp", "omd")
ALGORITHMS = VARIANTS + EXACT_ALGORITHMS

ENV_SPECS = {
    "exploration": ExplorationSpec,
    "four-rooms": ExplorationSpec,
    "beach-bar": BeachBarSpec,
    "lq": LQSpec,
}
# walls are implied by the environment name, never set by hand
_HIDDEN_ENV_FIELDS = {"walls"}


def env_keys(environment: str) -> list:
    if environment not in ENV_SPECS:
        raise ValidationError(f"unknown environment {environment!r}; expected one of {tuple(ENV_SPECS)}")
    return [f.name for f in fields(ENV_SPECS[environment]) if f.name not in _HIDDEN_ENV_FIELDS]


def build_env_spec(environment: str, params: dict):
    unknown = set(params) - set(env_keys(environment))
    if unknown:
        raise ValidationError(f"unknown {environment} parameters: {sorted(unknown)}")
    if environment == "four-rooms":
        return ExplorationSpec.four_rooms(**params)
    try:
        return ENV_SPECS[environment](**params)
    except TypeError as exc:
        raise ValidationError(str(exc)) from None


def build_model(environment: str, params: dict) -> EnvModel:
    spec = build_env_spec(environment, params)
    if isinstance(spec, ExplorationSpec):
        return exploration_model(spec)
    if isinstance(spec, BeachBarSpec):
        return beachbar_model(spec)
    return lq_model(spec)


@dataclass
class ExperimentConfig:
    algorithm: str = "m-omd"
    environment: str = "exploration"
    env: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_distributions: DistributionSetSpec = field(default_factory=DistributionSetSpec)
    test_distributions: DistributionSetSpec | None = None
    seeds: tuple = (0,)
    output_dir: str = "runs"
    checkpoint_every: int = 0

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.validate()

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValidationError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        build_env_spec(self.environment, self.env)
        if self.algorithm in VARIANTS and self.train.variant != self.algorithm:
            self.train = self.train.replace(variant=self.algorithm)
        self.train.validate()
        if not self.seeds:
            raise ValidationError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("seeds must be distinct")
        if self.checkpoint_every < 0:
            raise ValidationError("checkpoint_every must be >= 0")
        if self.test_distributions is not None and self.test_distributions == self.train_distributions:
            raise ValidationError("train and test distribution specs are identical")

    @property
    def exact(self) -> bool:
        return self.algorithm in EXACT_ALGORITHMS

    def model(self) -> EnvModel:
        return build_model(self.environment, self.env)

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        """Apply ``{"section.key": "text"}`` overrides through the same parser as files."""
        parser = to_parser(self)
        for dotted, text in overrides.items():
            if "." not in dotted:
                raise ValidationError(f"override {dotted!r} must look like section.key")
            section, key = dotted.split(".", 1)
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, key, text)
        return from_parser(parser)

    def digest(self) -> str:
        """Short content hash of the run-defining settings (seeds and output dir excluded)."""
        text = dumps(replace(self, seeds=(0,), output_dir="."))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


# ---------------------------------------------------------------- value codecs


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(annotation: str, text: str, key: str):
    text = text.strip()
    optional = "None" in annotation
    if optional and text.lower() == "none":
        return None
    base = annotation.replace("| None", "").strip()
    try:
        if base == "bool":
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if base == "int":
            return int(text)
        if base == "float":
            return float(text)
        if base == "tuple":
            return tuple(_scalar(v) for v in text.split(",") if v.strip())
        return text
    except ValueError:
        raise ValidationError(f"cannot parse {key} = {text!r} as {base}") from None


def _scalar(text: str):
    text = text.strip()
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _histograms_to_text(histograms) -> str:
    return "; ".join(" ".join(repr(v) for v in h) for h in histograms)


def _histograms_from_text(text: str) -> tuple:
    try:
        return tuple(tuple(float(v) for v in part.split()) for part in text.split(";") if part.strip())
    except ValueError:
        raise ValidationError(f"cannot parse histograms {text!r}") from None


def _section_from_dataclass(obj, skip=()) -> dict:
    out = {}
    for f in fields(obj):
        if f.name in skip:
            continue
        value = getattr(obj, f.name)
        out[f.name] = _histograms_to_text(value) if f.name == "histograms" else _format(value)
    return out


def _dataclass_kwargs(cls, section, skip=()) -> dict:
    known = {f.name: f for f in fields(cls) if f.name not in skip}
    kwargs = {}
    for key, text in section.items():
        if key not in known:
            raise ValidationError(f"unknown key {key!r} in [{section.name}]")
        if key == "histograms":
            kwargs[key] = _histograms_from_text(text)
        else:
            kwargs[key] = _parse(str(known[key].type), text, key)
    return kwargs


# ---------------------------------------------------------------- parser <-> config

SECTIONS = ("experiment", "environment", "train", "train_distributions", "test_distributions")
_EXPERIMENT_KEYS = ("algorithm", "environment", "seeds", "output_dir", "checkpoint_every")


def _new_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive
    return parser


def to_parser(config: ExperimentConfig) -> configparser.ConfigParser:
    parser = _new_parser()
    parser["experiment"] = {
        "algorithm": config.algorithm,
        "environment": config.environment,
        "seeds": _format(config.seeds),
        "output_dir": config.output_dir,
        "checkpoint_every": str(config.checkpoint_every),
    }
    parser["environment"] = {k: _format(v) for k, v in sorted(config.env.items())}
    parser["train"] = _section_from_dataclass(config.train, skip=("variant", "seed"))
    parser["train_distributions"] = _section_from_dataclass(config.train_distributions)
    if config.test_distributions is not None:
        parser["test_distributions"] = _section_from_dataclass(config.test_distributions)
    return parser


def from_parser(parser: configparser.ConfigParser) -> ExperimentConfig:
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ValidationError(f"unknown config sections: {sorted(unknown)}")
    exp = parser["experiment"] if parser.has_section("experiment") else {}
    bad = set(exp) - set(_EXPERIMENT_KEYS)
    if bad:
        raise ValidationError(f"unknown key(s) {sorted(bad)} in [experiment]")
    algorithm = exp.get("algorithm", "m-omd").strip()
    environment = exp.get("environment", "exploration").strip()
    env_params = {}
    if parser.has_section("environment"):
        env_types = {f.name: str(f.type) for f in fields(ENV_SPECS.get(environment, ExplorationSpec))}
        allowed = env_keys(environment)
        for key, text in parser["environment"].items():
            if key not in allowed:
                raise ValidationError(f"unknown key {key!r} in [environment] for {environment}")
            env_params[key] = _parse(env_types[key], text, key)
    train_kwargs = {}
    if parser.has_section("train"):
        train_kwargs = _dataclass_kwargs(TrainConfig, parser["train"], skip=("variant", "seed"))
    if algorithm in VARIANTS:
        train_kwargs["variant"] = algorithm
    dists = {}
    for name in ("train_distributions", "test_distributions"):
        if parser.has_section(name):
            dists[name] = DistributionSetSpec(**_dataclass_kwargs(DistributionSetSpec, parser[name]))
    return ExperimentConfig(
        algorithm=algorithm,
        environment=environment,
        env=env_params,
        train=TrainConfig(**train_kwargs),
        train_distributions=dists.get("train_distributions", DistributionSetSpec()),
        test_distributions=dists.get("test_distributions"),
        seeds=_parse("tuple", exp.get("seeds", "0"), "seeds"),
        output_dir=exp.get("output_dir", "runs").strip(),
        checkpoint_every=_parse("int", exp.get("checkpoint_every", "0"), "checkpoint_every"),
    )


def dumps(config: ExperimentConfig) -> str:
    buf = io.StringIO()
    to_parser(config).write(buf)
    return buf.getvalue()


def loads(text: str) -> ExperimentConfig:
    parser = _new_parser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"malformed config: {exc}") from None
    return from_parser(parser)


def load(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
