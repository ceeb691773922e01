"""
RARARL Configuration Management

Two layers:
- ``Settings``: process environment (``RARARL_*`` variables, ``config/.env``)
  via pydantic-settings: seed fallback, default run config, output root, log
  level. Built on demand by ``load_settings()``.
- ``RunConfig``: one experiment, read from a TOML file with sections
  [run] [track] [train] [schedule] [risk] [eval]. Validation errors are
  reported against the line of the offending key.
"""

import hashlib
import json
import os
import re
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..rararl.errors import ConfigError
from ..rararl.speedway import TrackConfig
from ..rararl.trainer import TrainConfig, Variant, make_variant


class Settings(BaseSettings):
    """RARARL 环境配置"""

    # =====================================
    # Run defaults
    # =====================================
    seed: Optional[int] = None  # RARARL_SEED, used when --seed is absent
    run_config: str = "config/speedway.toml"  # used when train has no --config
    output_dir: Optional[str] = None  # replaces [run].output_dir when set

    # =====================================
    # Logging
    # =====================================
    log_level: str = "INFO"

    @field_validator("log_level")
    @classmethod
    def normalize_log_level(cls, v):
        v = str(v).upper()
        if v not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {v}")
        return v

    class Config:
        """Pydantic 配置"""
        env_prefix = "RARARL_"
        env_file = "config/.env"
        env_file_encoding = "utf-8"
        extra = "ignore"  # 忽略未定义的环境变量


def load_settings() -> Settings:
    """加载配置"""
    env_paths = [
        "config/.env",
        ".env",
        "../config/.env",
    ]

    for path in env_paths:
        if os.path.exists(path):
            return Settings(_env_file=path)

    return Settings()


# =====================================
# Run config
# =====================================

class RunSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "speedway"
    seed: int = 0
    output_dir: str = "runs"


class EvalSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    episodes: int = Field(10, ge=0)
    regimes: List[str] = ["none", "random", "adversarial"]

    @field_validator("regimes")
    @classmethod
    def known_regimes(cls, v):
        allowed = ("none", "random", "adversarial")
        bad = [r for r in v if r not in allowed]
        if bad:
            raise ValueError(f"unknown regime(s) {', '.join(bad)}; expected {', '.join(allowed)}")
        return v


class RunConfig(BaseModel):
    """A whole experiment; [schedule] and [risk] are stored inside ``train``."""
    model_config = ConfigDict(extra="forbid")

    run: RunSection = Field(default_factory=RunSection)
    track: TrackConfig = Field(default_factory=TrackConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalSection = Field(default_factory=EvalSection)

    def training(self) -> TrainConfig:
        """TrainConfig with the run seed applied."""
        return self.train.model_copy(update={"seed": self.run.seed})


NESTED_IN_TRAIN = ("schedule", "risk")

_SECTION_RE = re.compile(r"^\s*\[\s*([A-Za-z0-9_.-]+)\s*\]\s*(#.*)?$")
_KEY_RE = re.compile(r"^\s*([A-Za-z0-9_-]+)\s*=")
_TOML_LINE_RE = re.compile(r"line (\d+)")


def index_lines(text: str) -> Tuple[Dict[str, int], Dict[Tuple[str, str], int]]:
    """Line numbers of section headers and of ``key =`` lines per section."""
    sections: Dict[str, int] = {}
    keys: Dict[Tuple[str, str], int] = {}
    current = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            current = m.group(1)
            sections.setdefault(current, lineno)
            continue
        m = _KEY_RE.match(line)
        if m:
            keys.setdefault((current, m.group(1)), lineno)
    return sections, keys


def _file_location(loc: Tuple) -> Tuple[str, List[str]]:
    """pydantic error location -> (file section, key path inside it)."""
    parts = [str(p) for p in loc]
    if len(parts) >= 2 and parts[0] == "train" and parts[1] in NESTED_IN_TRAIN:
        return parts[1], parts[2:]
    if not parts:
        return "", []
    return parts[0], parts[1:]


def _line_for(section: str, key_path: List[str], sections, keys) -> int:
    if key_path and (section, key_path[0]) in keys:
        return keys[(section, key_path[0])]
    return sections.get(section, 1)


def validation_diagnostics(error: ValidationError, path: str, text: str) -> List[str]:
    """One ``path:line: section.key: message`` line per invalid field."""
    sections, keys = index_lines(text)
    seen = set()
    diagnostics = []
    for err in error.errors():
        section, key_path = _file_location(err["loc"])
        dotted = ".".join([section, *key_path]) if section else ".".join(key_path)
        if dotted in seen:
            continue
        seen.add(dotted)
        line = _line_for(section, key_path, sections, keys)
        diagnostics.append(f"{path}:{line}: {dotted or '<root>'}: {err['msg']}")
    return diagnostics


def _nest_sections(doc: dict) -> dict:
    doc = dict(doc)
    train = doc.get("train", {})
    if not isinstance(train, dict):
        return doc
    train = dict(train)
    for name in NESTED_IN_TRAIN:
        if isinstance(doc.get(name), dict):
            train[name] = doc.pop(name)
    doc["train"] = train
    return doc


def parse_run_config(text: str, path: str = "<config>") -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        lineno = getattr(e, "lineno", None)
        if lineno is None:
            m = _TOML_LINE_RE.search(str(e))
            lineno = int(m.group(1)) if m else 1
        raise ConfigError(f"{path}: not a valid config file", [f"{path}:{lineno}: {e}"]) from e

    try:
        cfg = RunConfig.model_validate(_nest_sections(doc))
    except ValidationError as e:
        diagnostics = validation_diagnostics(e, path, text)
        raise ConfigError(f"{path}: {len(diagnostics)} invalid setting(s)", diagnostics) from e

    check_variant(cfg, path, text)
    return cfg


def check_variant(cfg: RunConfig, path: str = "<config>", text: str = "") -> None:
    """Surface variant/head-count conflicts at load time, pointing at the offending line."""
    try:
        make_variant(cfg.training())
    except ConfigError as e:
        sections, keys = index_lines(text)
        key = "num_heads" if ("train", "num_heads") in keys else "variant"
        line = _line_for("train", [key], sections, keys)
        raise ConfigError(f"{path}: conflicting settings", [f"{path}:{line}: train.{key}: {e}"]) from e


def load_run_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror or e}") from e
    return parse_run_config(text, str(path))


def apply_overrides(
    cfg: RunConfig,
    seed: Optional[int] = None,
    variant: Optional[str] = None,
    total_steps: Optional[int] = None,
) -> RunConfig:
    """Command-line overrides, re-validated as a whole."""
    doc = cfg.model_dump()
    if seed is not None:
        doc["run"]["seed"] = seed
    if total_steps is not None:
        doc["train"]["total_steps"] = total_steps
    if variant is not None:
        doc["train"]["variant"] = variant
    try:
        updated = RunConfig.model_validate(doc)
    except ValidationError as e:
        flags = {"variant": "--variant", "seed": "--seed", "total_steps": "--steps"}
        diagnostics = []
        for err in e.errors():
            flag = flags.get(str(err["loc"][-1]), ".".join(str(p) for p in err["loc"]))
            diagnostics.append(f"{flag}: {err['msg']}")
        raise ConfigError("invalid command-line override", diagnostics) from e
    try:
        make_variant(updated.training())
    except ConfigError as e:
        raise ConfigError("conflicting settings", [f"--variant {updated.train.variant.value}: {e}"]) from e
    return updated


def config_digest(cfg: RunConfig) -> str:
    """SHA-256 of the canonical JSON dump."""
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


__all__ = [
    "Settings",
    "load_settings",
    "RunConfig",
    "RunSection",
    "EvalSection",
    "Variant",
    "parse_run_config",
    "load_run_config",
    "apply_overrides",
    "config_digest",
]
