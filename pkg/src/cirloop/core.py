"""Domain types, run configuration and the error taxonomy shared across the package."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

try:  # python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


class CirError(Exception):
    """Base error. ``code`` is a stable machine-readable tag, ``subject`` names
    the offending field, item id or stage."""

    def __init__(self, code: str, subject: str | None = None, message: str | None = None):
        self.code = code
        self.subject = subject
        text = code if subject is None else f"{code}({subject})"
        if message:
            text = f"{text}: {message}"
        super().__init__(text)


class ConfigError(CirError):
    pass


class IndexBuildError(CirError):
    pass


class BackendError(CirError):
    pass


class FusionError(CirError):
    pass


class RefinementError(CirError):
    pass


class DatasetError(CirError):
    pass


class MetricError(CirError):
    pass


class SynthError(CirError):
    pass


class Pathway(str, enum.Enum):
    T2I = "T2I"
    I2I = "I2I"

    def __lt__(self, other):
        if not isinstance(other, Pathway):
            return NotImplemented
        return _PATHWAY_ORDER[self] < _PATHWAY_ORDER[other]


_PATHWAY_ORDER = {Pathway.T2I: 0, Pathway.I2I: 1}
PATHWAYS = (Pathway.T2I, Pathway.I2I)


class FusionMode(str, enum.Enum):
    ADA = "ADA"
    AVG = "AVG"
    RAK = "RAK"
    T2I_ONLY = "T2I_ONLY"
    I2I_ONLY = "I2I_ONLY"


@dataclass(frozen=True)
class ComposedQuery:
    """One benchmark query: reference item, modification text and ground truth."""

    query_id: str
    reference_id: str
    modification_text: str
    ground_truth_ids: frozenset[str] = frozenset()
    subset_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "ground_truth_ids", frozenset(self.ground_truth_ids))
        if self.subset_ids is not None:
            object.__setattr__(self, "subset_ids", tuple(self.subset_ids))
        if not self.query_id:
            raise DatasetError("SCHEMA_ERROR", "query_id", "query_id must be nonempty")
        if not self.reference_id:
            raise DatasetError("SCHEMA_ERROR", "reference_id", f"query {self.query_id} has no reference_id")
        if self.subset_ids is not None:
            if len(self.subset_ids) != 6:
                raise DatasetError(
                    "SCHEMA_ERROR", "subset_ids",
                    f"query {self.query_id}: subset must have 6 members, got {len(self.subset_ids)}",
                )
            if self.ground_truth_ids and not (self.ground_truth_ids & set(self.subset_ids)):
                raise DatasetError(
                    "SCHEMA_ERROR", "subset_ids",
                    f"query {self.query_id}: subset contains no ground-truth id",
                )


_CONFIG_FILE_KEYS = ("top_k", "tau", "max_iterations", "fusion_mode", "lambda",
                     "backend_parallelism", "rng_seed")


@dataclass(frozen=True)
class PipelineConfig:
    """Run configuration. Defaults: K=50 candidates per pathway, tau=0.7, one
    refinement round."""

    top_k: int = 50
    tau: float = 0.7
    max_iterations: int = 1
    fusion_mode: FusionMode = FusionMode.ADA
    lam: float = 0.5
    # pathway reranked by RAK; encoded in the config file as "RAK:I2I"
    rak_pathway: Pathway = Pathway.T2I
    backend_parallelism: int = 4
    rng_seed: int = 0
    # fuse only reliable pathways when one stays uncertain after refinement
    strict_gate: bool = False
    trace_ranking_len: int = 100

    def mode_label(self) -> str:
        if self.fusion_mode is FusionMode.AVG:
            return f"AVG({self.lam:g})"
        if self.fusion_mode is FusionMode.RAK:
            return f"RAK:{self.rak_pathway.value}"
        return self.fusion_mode.value

    def to_dict(self) -> dict[str, Any]:
        """Flat document with the config-file keys."""
        mode = self.fusion_mode.value
        if self.fusion_mode is FusionMode.RAK and self.rak_pathway is not Pathway.T2I:
            mode = f"RAK:{self.rak_pathway.value}"
        return {
            "top_k": self.top_k,
            "tau": self.tau,
            "max_iterations": self.max_iterations,
            "fusion_mode": mode,
            "lambda": self.lam,
            "backend_parallelism": self.backend_parallelism,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], base: "PipelineConfig | None" = None) -> "PipelineConfig":
        unknown = sorted(set(doc) - set(_CONFIG_FILE_KEYS))
        if unknown:
            raise ConfigError("RANGE", unknown[0], "unknown config key")
        cfg = base or cls()
        updates: dict[str, Any] = {}
        for key, value in doc.items():
            if key == "fusion_mode":
                mode, path = parse_fusion_mode(value)
                updates["fusion_mode"] = mode
                if path is not None:
                    updates["rak_pathway"] = path
            elif key == "lambda":
                updates["lam"] = value
            else:
                updates[key] = value
        return replace(cfg, **updates)

    def fingerprint(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def parse_fusion_mode(value: Any) -> tuple[FusionMode, Pathway | None]:
    if isinstance(value, FusionMode):
        return value, None
    text = str(value).strip().upper()
    path = None
    if ":" in text:
        text, _, suffix = text.partition(":")
        try:
            path = Pathway(suffix)
        except ValueError:
            raise ConfigError("RANGE", "fusion_mode", f"unknown pathway {suffix!r}") from None
        if text != "RAK":
            raise ConfigError("RANGE", "fusion_mode", "only RAK takes a pathway suffix")
    try:
        return FusionMode(text), path
    except ValueError:
        choices = ", ".join(m.value for m in FusionMode)
        raise ConfigError("RANGE", "fusion_mode", f"expected one of {choices}") from None


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v: Any) -> bool:
    return (_is_int(v) or isinstance(v, float)) and math.isfinite(v)


def validate_config(cfg: PipelineConfig) -> PipelineConfig:
    """Return ``cfg`` unchanged if every field is in range, else raise
    :class:`ConfigError` with code ``RANGE`` naming the field."""
    if not _is_int(cfg.top_k) or cfg.top_k < 1:
        raise ConfigError("RANGE", "top_k", f"must be a positive integer, got {cfg.top_k!r}")
    if not _is_real(cfg.tau) or not 0.0 <= cfg.tau <= 1.0:
        raise ConfigError("RANGE", "tau", f"must lie in [0, 1], got {cfg.tau!r}")
    if not _is_int(cfg.max_iterations) or cfg.max_iterations < 0:
        raise ConfigError("RANGE", "max_iterations", f"must be >= 0, got {cfg.max_iterations!r}")
    if not isinstance(cfg.fusion_mode, FusionMode):
        raise ConfigError("RANGE", "fusion_mode", f"not a fusion mode: {cfg.fusion_mode!r}")
    if not _is_real(cfg.lam) or not 0.0 <= cfg.lam <= 1.0:
        raise ConfigError("RANGE", "lambda", f"must lie in [0, 1], got {cfg.lam!r}")
    if not isinstance(cfg.rak_pathway, Pathway):
        raise ConfigError("RANGE", "fusion_mode", f"bad RAK pathway {cfg.rak_pathway!r}")
    if not _is_int(cfg.backend_parallelism) or cfg.backend_parallelism < 1:
        raise ConfigError("RANGE", "backend_parallelism",
                          f"must be a positive integer, got {cfg.backend_parallelism!r}")
    if not _is_int(cfg.rng_seed) or not 0 <= cfg.rng_seed < 2**64:
        raise ConfigError("RANGE", "rng_seed", f"must be an unsigned 64-bit integer, got {cfg.rng_seed!r}")
    if not isinstance(cfg.strict_gate, bool):
        raise ConfigError("RANGE", "strict_gate", "must be a boolean")
    if not _is_int(cfg.trace_ranking_len) or cfg.trace_ranking_len < 1:
        raise ConfigError("RANGE", "trace_ranking_len", "must be a positive integer")
    return cfg


def load_config_file(path: str | Path, base: PipelineConfig | None = None) -> PipelineConfig:
    """Read a flat TOML or JSON config document. Validation is left to the caller
    so CLI overrides can be applied first."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".toml":
        doc = tomllib.loads(raw.decode("utf-8"))
    else:
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError:
            try:
                doc = tomllib.loads(raw.decode("utf-8"))
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError("RANGE", str(path), f"neither JSON nor TOML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("RANGE", str(path), "config must be a flat key/value document")
    return PipelineConfig.from_dict(doc, base)

