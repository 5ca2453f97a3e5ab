"""Flat key=value run configuration.

Keys are ``section.field`` (e.g. ``model.d_model``, ``train.max_steps``)
plus the single top-level ``seed`` that feeds every random draw in a
run. Defaults come from the section dataclasses; unknown keys are
errors. Files hold one ``key=value`` per line (# comments allowed);
command-line overrides are applied after the file, last one wins.
"""

from dataclasses import dataclass, fields

from .decode import DecodeConfig
from .errors import UsageError
from .frontend import SpecAugConfig, SpecSubConfig, SynthConfig
from .model import ChunkPolicy, ModelConfig
from .train import TrainConfig

_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "decode": DecodeConfig,
    "chunk": ChunkPolicy,
    "specsub": SpecSubConfig,
    "specaug": SpecAugConfig,
    "synth": SynthConfig,
}


def _parse_bool(raw: str) -> bool:
    if raw in ("true", "True", "1"):
        return True
    if raw in ("false", "False", "0"):
        return False
    raise UsageError(f"expected a boolean, got {raw!r}")


def _convert(section: str, name: str, default, raw):
    if not isinstance(raw, str):
        return raw
    if section == "decode" and name == "chunk":
        return None if raw == "full" else int(raw)
    if isinstance(default, bool):
        return _parse_bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


@dataclass
class RunConfig:
    seed: int
    model: ModelConfig
    train: TrainConfig
    decode: DecodeConfig
    chunk: ChunkPolicy
    specsub: SpecSubConfig
    specaug: SpecAugConfig
    synth: SynthConfig

    def render(self) -> str:
        """Echoable form: every resolved key, one per line."""
        lines = [f"seed={self.seed}"]
        for section in _SECTIONS:
            obj = getattr(self, section)
            for f in fields(obj):
                if section == "train" and f.name == "seed":
                    continue
                value = getattr(obj, f.name)
                if section == "decode" and f.name == "chunk" and value is None:
                    value = "full"
                lines.append(f"{section}.{f.name}={value}")
        return "\n".join(lines) + "\n"


def default_key_map() -> dict:
    keys = {"seed": 0}
    for section, cls in _SECTIONS.items():
        obj = cls()
        for f in fields(obj):
            if section == "train" and f.name == "seed":
                continue  # the top-level seed is the only seed knob
            keys[f"{section}.{f.name}"] = getattr(obj, f.name)
    return keys


def parse_assignments(pairs) -> dict:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise UsageError(f"expected key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def read_config_file(path: str) -> dict:
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            out[key.strip()] = value.strip()
    return out


def resolve_config(file_path: str | None = None, overrides=()) -> RunConfig:
    """Defaults <- optional file <- command-line overrides."""
    known = default_key_map()
    merged = dict(known)
    sources = []
    if file_path is not None:
        sources.append(read_config_file(file_path))
    sources.append(parse_assignments(overrides))
    for source in sources:
        for key, raw in source.items():
            if key not in known:
                raise UsageError(f"unknown config key {key!r}")
            merged[key] = raw

    seed = int(merged["seed"])
    built = {}
    for section, cls in _SECTIONS.items():
        kwargs = {}
        defaults = cls()
        for f in fields(cls):
            key = f"{section}.{f.name}"
            if key not in merged:
                continue  # train.seed, injected from the top-level seed below
            default = getattr(defaults, f.name)
            kwargs[f.name] = _convert(section, f.name, default, merged[key])
        built[section] = cls(**kwargs)
    built["train"].seed = seed
    cfg = RunConfig(seed=seed, **built)
    cfg.model.validate()
    cfg.train.validate()
    cfg.decode.validate()
    cfg.chunk.validate()
    cfg.specsub.validate()
    return cfg
