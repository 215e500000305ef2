import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple

from .attribution import IGConfig
from .exceptions import ConfigError, ValidationError
from .utils import derive_seed, dict_merge, log_message


DEFAULT_CONFIG: Dict[str, Dict[str, Any]] = {
    "backend": {
        "kind": "reference",  # reference | external
        "seed": None,  # None -> derived from run.seed
        "embedding_dim": 32,
        "max_seq_len": 350,
        "model": "GPL/msmarco-distilbert-margin-mse",
        "params_path": None,
        "batch_size": 32,
    },
    "data": {
        "corpus": None,
        "queries": None,
        "qrels": None,
    },
    "ig": {
        "steps": 128,
        "rule": "trapezoid",
        "rtol": 1e-3,
        "atol": 1e-6,
    },
    "retrieval": {
        "k_retrieve": 100,
        "k_eval": 10,
    },
    "explain": {
        "k_explain": 25,
        "separate_signs": False,
        "relevance_threshold": 1,
    },
    "output": {
        "dir": "dexplain-out",
    },
    "run": {
        "seed": 42,
        "threads": 1,
    },
}

# Types for keys whose default is None.
_NULLABLE_TYPES: Dict[str, type] = {
    "backend.seed": int,
    "backend.params_path": str,
    "data.corpus": str,
    "data.queries": str,
    "data.qrels": str,
}

BACKEND_KINDS = ("reference", "external")


@dataclass(frozen=True)
class BackendSpec:
    kind: str = "reference"
    seed: Optional[int] = None
    embedding_dim: int = 32
    max_seq_len: int = 350
    model: str = "GPL/msmarco-distilbert-margin-mse"
    params_path: Optional[str] = None
    batch_size: int = 32

    def __post_init__(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise ConfigError(f"Invalid backend kind: {self.kind}. Must be one of: {', '.join(BACKEND_KINDS)}")
        for name in ("embedding_dim", "max_seq_len", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"backend.{name} must be >= 1, got: {getattr(self, name)}")
        if self.max_seq_len < 3:
            raise ConfigError("backend.max_seq_len must leave room for [CLS], one token and [SEP]")

    def resolved_seed(self, run_seed: int) -> int:
        """Encoder init seed: explicit backend.seed or one derived from the run seed."""
        return self.seed if self.seed is not None else derive_seed(run_seed, "encoder")


@dataclass(frozen=True)
class DataPaths:
    corpus: Optional[Path] = None
    queries: Optional[Path] = None
    qrels: Optional[Path] = None


@dataclass(frozen=True)
class RetrievalSettings:
    k_retrieve: int = 100
    k_eval: int = 10


@dataclass(frozen=True)
class ExplainSettings:
    k_explain: int = 25
    separate_signs: bool = False
    relevance_threshold: int = 1


@dataclass(frozen=True)
class RunConfig:
    """Every setting a command hands to the library, resolved once."""

    backend: BackendSpec = field(default_factory=BackendSpec)
    data: DataPaths = field(default_factory=DataPaths)
    ig: IGConfig = field(default_factory=IGConfig)
    retrieval: RetrievalSettings = field(default_factory=RetrievalSettings)
    explain: ExplainSettings = field(default_factory=ExplainSettings)
    output_dir: Path = Path("dexplain-out")
    seed: int = 42
    threads: int = 1

    @property
    def encoder_seed(self) -> int:
        return self.backend.resolved_seed(self.seed)

    @property
    def title_seed(self) -> int:
        return derive_seed(self.seed, "title-sampling")

    def as_dict(self) -> Dict[str, Any]:
        """Nested plain-JSON echo of the configuration."""
        return {
            "backend": {
                "kind": self.backend.kind,
                "seed": self.encoder_seed,
                "embedding_dim": self.backend.embedding_dim,
                "max_seq_len": self.backend.max_seq_len,
                "model": self.backend.model,
                "params_path": self.backend.params_path,
                "batch_size": self.backend.batch_size,
            },
            "data": {
                "corpus": str(self.data.corpus) if self.data.corpus else None,
                "queries": str(self.data.queries) if self.data.queries else None,
                "qrels": str(self.data.qrels) if self.data.qrels else None,
            },
            "ig": {"steps": self.ig.steps, "rule": self.ig.rule, "rtol": self.ig.rtol, "atol": self.ig.atol},
            "retrieval": {"k_retrieve": self.retrieval.k_retrieve, "k_eval": self.retrieval.k_eval},
            "explain": {
                "k_explain": self.explain.k_explain,
                "separate_signs": self.explain.separate_signs,
                "relevance_threshold": self.explain.relevance_threshold,
            },
            "output": {"dir": str(self.output_dir)},
            "run": {"seed": self.seed, "threads": self.threads},
        }


def _coerce(dotted: str, raw: Any, default: Any) -> Any:
    """Coerce raw to the type of the default value for dotted."""
    if isinstance(raw, str) and raw.strip().lower() in ("none", "null"):
        if default is None or dotted in _NULLABLE_TYPES:
            return None
        raise ConfigError(f"{dotted} cannot be empty")

    target = type(default) if default is not None else _NULLABLE_TYPES.get(dotted, str)
    if raw is None:
        return None
    try:
        if target is bool:
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text in ("true", "yes", "1", "on"):
                return True
            if text in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if target is int:
            if isinstance(raw, bool):
                raise ValueError(raw)
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(str(raw).strip()) if isinstance(raw, str) else int(raw)
        if target is float:
            return float(raw)
        return str(raw).strip()
    except (ValueError, TypeError):
        raise ConfigError(f"Invalid value for {dotted}: {raw!r} (expected {target.__name__})")


def parse_flat_config(text: str, source: str = "<config>") -> Dict[str, Dict[str, Any]]:
    """Parse ``section.key = value`` lines into a nested dict of raw strings.

    Args:
        text: File content.
        source: Name used in error messages.

    Returns:
        Dict: Nested {section: {key: raw_value}}.

    Raises:
        ConfigError: If a line is not a ``section.key = value`` pair.
    """
    nested: Dict[str, Dict[str, Any]] = {}
    for number, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{number}: expected 'section.key = value', got: {stripped}")
        key, value = stripped.split("=", 1)
        section, name = _split_key(key.strip())
        nested.setdefault(section, {})[name] = value.strip()
    return nested


def _split_key(dotted: str) -> Tuple[str, str]:
    parts = dotted.split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"Invalid config key: {dotted}. Use section.key")
    section, name = parts
    if section not in DEFAULT_CONFIG or name not in DEFAULT_CONFIG[section]:
        raise ConfigError(f"Unknown config key: {dotted}")
    return section, name


class ConfigManager:
    def __init__(self, config_path: Optional[Path] = None, overrides: Iterable[str] = ()):
        self.config_path = Path(config_path) if config_path else None
        self.config = self._load_config()
        self.applied: list[str] = []
        self.apply_overrides(overrides)

    def _load_config(self) -> Dict[str, Dict[str, Any]]:
        """Load the config file over the defaults, or the defaults alone."""
        config = copy.deepcopy(DEFAULT_CONFIG)
        if self.config_path is None:
            return config

        if not self.config_path.exists():
            raise ConfigError(f"Config file not found: {self.config_path}")

        try:
            text = self.config_path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"Cannot read config {self.config_path}: {e}")

        if self.config_path.suffix == ".json":
            try:
                loaded = json.loads(text)
            except json.JSONDecodeError as e:
                raise ConfigError(f"Config corrupted ({self.config_path}): {e}")
            if not isinstance(loaded, dict):
                raise ConfigError(f"Config root must be an object: {self.config_path}")
        else:
            loaded = parse_flat_config(text, str(self.config_path))

        for section, values in loaded.items():
            if not isinstance(values, dict):
                raise ConfigError(f"Config section must be a mapping: {section}")
            for name, raw in values.items():
                section_name = _split_key(f"{section}.{name}")
                dotted = ".".join(section_name)
                values[name] = _coerce(dotted, raw, DEFAULT_CONFIG[section][name])

        log_message(f"Config loaded from {self.config_path}")
        return dict_merge(config, loaded)

    # ========== OVERRIDES ==========

    def set_value(self, dotted: str, raw: Any) -> None:
        """Set one ``section.key`` value, coercing to the default's type."""
        section, name = _split_key(dotted.strip())
        self.config[section][name] = _coerce(dotted.strip(), raw, DEFAULT_CONFIG[section][name])
        self.applied.append(f"{section}.{name}")

    def apply_overrides(self, overrides: Iterable[str]) -> None:
        """Apply ``section.key=value`` overrides in order (last writer wins)."""
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"Invalid override: {item}. Use section.key=value")
            key, value = item.split("=", 1)
            self.set_value(key, value)

    def get(self, dotted: str) -> Any:
        section, name = _split_key(dotted)
        return self.config[section][name]

    def save_config(self, path: Path) -> None:
        """Save the current values in the flat ``section.key = value`` format."""
        lines = []
        for section, values in self.config.items():
            for name, value in values.items():
                text = "none" if value is None else str(value).lower() if isinstance(value, bool) else str(value)
                lines.append(f"{section}.{name} = {text}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
        log_message(f"Config saved to {path}")

    # ========== RESOLUTION ==========

    def run_config(self) -> RunConfig:
        """Resolve the merged dict into an immutable RunConfig."""
        c = self.config
        try:
            ig = IGConfig(
                steps=c["ig"]["steps"],
                rule=c["ig"]["rule"],
                rtol=c["ig"]["rtol"],
                atol=c["ig"]["atol"],
            )
        except ValidationError as e:
            raise ConfigError(str(e))

        retrieval = RetrievalSettings(**c["retrieval"])
        explain = ExplainSettings(**c["explain"])
        for name, value in (("retrieval.k_retrieve", retrieval.k_retrieve),
                            ("retrieval.k_eval", retrieval.k_eval),
                            ("explain.k_explain", explain.k_explain),
                            ("run.threads", c["run"]["threads"])):
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got: {value}")
        if explain.relevance_threshold < 0:
            raise ConfigError("explain.relevance_threshold must be >= 0")

        def as_path(value: Optional[str]) -> Optional[Path]:
            return Path(value) if value else None

        return RunConfig(
            backend=BackendSpec(**c["backend"]),
            data=DataPaths(
                corpus=as_path(c["data"]["corpus"]),
                queries=as_path(c["data"]["queries"]),
                qrels=as_path(c["data"]["qrels"]),
            ),
            ig=ig,
            retrieval=retrieval,
            explain=explain,
            output_dir=Path(c["output"]["dir"]),
            seed=c["run"]["seed"],
            threads=c["run"]["threads"],
        )
