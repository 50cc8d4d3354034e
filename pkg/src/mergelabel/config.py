"""Plain-text ``key=value`` configuration (model hyperparameters plus run settings)."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .model import ModelConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def parse_value(kind: str, text: str):
    text = text.strip()
    if kind.startswith("tuple"):
        return tuple(int(v) for v in text.split(",") if v.strip())
    if kind == "bool":
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "str | None":
        return text or None
    return text


@dataclass
class RunConfig:
    """Everything a command needs: the model config plus paths and run flags."""

    model_values: dict = field(default_factory=dict)
    train: str | None = None
    dev: str | None = None
    test: str | None = None
    vectors: str | None = None
    contextual: str | None = None
    checkpoint: str | None = None
    output_dir: str | None = None
    seed: int = 0
    epochs: int = 60
    max_tokens: int = 900
    flat_eval: bool = False
    ace_eval: bool = True
    np_label: str = "NP"

    @staticmethod
    def run_keys() -> dict[str, str]:
        return {f.name: str(f.type) for f in dataclasses.fields(RunConfig) if f.name != "model_values"}

    @staticmethod
    def model_keys() -> dict[str, str]:
        return {f.name: str(f.type) for f in dataclasses.fields(ModelConfig)}

    def set(self, key: str, text: str) -> None:
        key = key.strip().replace("-", "_")
        alias = {
            "unnormalized_embed_update": ("normalized_embed_update", True),
            "no_static_layer": ("static_layer", True),
            "no_article_theme": ("article_theme", True),
            "sentence_boundary_clipping": ("sentence_clipping", False),
        }
        if key in alias:
            target, invert = alias[key]
            value = parse_value("bool", text)
            self.set(target, format_value(not value if invert else value))
            return
        run, mdl = self.run_keys(), self.model_keys()
        try:
            if key in run:
                setattr(self, key, parse_value(run[key], text))
            elif key in mdl:
                self.model_values[key] = parse_value(mdl[key], text)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except (ValueError, TypeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None

    @property
    def model(self) -> ModelConfig:
        """The validated model config (defaults overridden by every key set so far)."""
        try:
            return ModelConfig(**self.model_values)
        except ValueError as exc:
            raise ConfigError(f"invalid model config: {exc}") from None

    def lines(self) -> list[str]:
        defaults = {f.name: f.default for f in dataclasses.fields(ModelConfig)}
        out = [f"{k}={format_value(self.model_values.get(k, v))}" for k, v in defaults.items()]
        out += [f"{k}={format_value(getattr(self, k))}" for k in self.run_keys()]
        return out

    def dump(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunConfig":
        cfg = cls()
        cfg.update_from_text(Path(path).read_text(encoding="utf-8"), str(path))
        return cfg

    def update_from_text(self, text: str, source: str = "<config>") -> None:
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            self.set(key, value)


def model_config_lines(config: ModelConfig) -> list[str]:
    return [f"{k}={format_value(v)}" for k, v in dataclasses.asdict(config).items()]


def model_config_from_lines(lines) -> ModelConfig:
    types = RunConfig.model_keys()
    values = {}
    for line in lines:
        key, _, text = line.partition("=")
        if key not in types:
            raise ConfigError(f"unknown model config key {key!r}")
        values[key] = parse_value(types[key], text)
    return ModelConfig(**values)
