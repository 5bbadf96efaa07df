"""Run configuration: every tunable parameter, loadable from a ``key = value`` file.

Keys are ``section.name`` with sections ``search``, ``filter``, ``pipeline``
and ``run``; ``#`` starts a comment.  Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .depth_search import SearchParams
from .errors import ConfigError
from .pipeline_model import PipelineConfig
from .regularize import FilterParams


@dataclass
class RunSettings:
    keyframe_interval: int = 10


@dataclass
class RunConfig:
    search: SearchParams = field(default_factory=SearchParams)
    filter: FilterParams = field(default_factory=FilterParams)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    run: RunSettings = field(default_factory=RunSettings)

    SECTIONS = ("search", "filter", "pipeline", "run")

    def to_text(self) -> str:
        lines = []
        for section in self.SECTIONS:
            obj = getattr(self, section)
            for f in fields(obj):
                lines.append(f"{section}.{f.name} = {getattr(obj, f.name)}")
        return "\n".join(lines) + "\n"


def _convert(raw: str, like, key: str):
    try:
        if isinstance(like, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config(text: str) -> RunConfig:
    values: dict[str, dict[str, object]] = {s: {} for s in RunConfig.SECTIONS}
    defaults = RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in values:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        obj = getattr(defaults, section)
        if name not in {f.name for f in fields(obj)}:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[section][name] = _convert(raw, getattr(obj, name), key)
    try:
        return RunConfig(
            search=SearchParams(**values["search"]),
            filter=FilterParams(**values["filter"]),
            pipeline=PipelineConfig(**values["pipeline"]),
            run=RunSettings(**values["run"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text())
