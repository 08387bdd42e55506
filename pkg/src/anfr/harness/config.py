"""Experiment configuration: a sectioned INI file with every default resolved.

Grammar
-------
Standard ``configparser`` syntax: ``[section]`` headers followed by
``key = value`` lines; ``#`` and ``;`` start comments. Sections and keys:

``[experiment]``  name, seeds (comma list), output_dir
``[model]``       architecture, widths, depths (comma lists), attention, reduction, eca_kernel, groups, alpha
``[data]``        num_clients, num_classes, samples_per_client, image_size, test_fraction, standardize
``[partition]``   scheme, alpha, k, skew_exponent, shift_strength
``[fed]``         every :class:`~anfr.fed.FedConfig` field except seed
``[dp]``          clip_norm, noise_multiplier, delta, delta_factor (section present = DP enabled)
``[analysis]``    csi, attention (booleans)

Unknown sections or keys, malformed values and invalid combinations raise
:class:`~anfr.errors.ConfigError` naming the field and source line.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..data.partition import PartitionConfig
from ..dp.mechanism import DpConfig
from ..errors import ConfigError
from ..fed.aggregate import personal_names
from ..fed.simulation import FedConfig
from ..nn.models import ModelSpec, build_model

SECTIONS = ("experiment", "model", "data", "partition", "fed", "dp", "analysis")


@dataclass(frozen=True)
class DataConfig:
    num_clients: int = 4
    num_classes: int = 10
    samples_per_client: int = 150
    image_size: int = 16
    test_fraction: float = 1 / 3
    standardize: bool = True

    def __post_init__(self):
        for name in ("num_clients", "num_classes", "samples_per_client", "image_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive", field=f"data.{name}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)", field="data.test_fraction")


@dataclass(frozen=True)
class AnalysisConfig:
    csi: bool = True
    attention: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    fed: FedConfig = field(default_factory=FedConfig)
    dp: DpConfig | None = None
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs"
    name: str = "experiment"

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty", field="experiment.seeds")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, fed=dataclasses.replace(self.fed, seed=seed),
                                   partition=dataclasses.replace(self.partition, seed=seed))


# -- value codecs ------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got '{text}'")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _parse_optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else float(text)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def _codec(tp: str):
    tp = str(tp)
    if tp.startswith("bool"):
        return _parse_bool
    if tp.startswith("int"):
        return int
    if tp.startswith("float | None"):
        return _parse_optional_float
    if tp.startswith("float"):
        return float
    if tp.startswith("tuple[int"):
        return _parse_int_tuple
    if tp.startswith("str | None"):
        return lambda s: None if s.strip().lower() in ("", "none") else s.strip()
    return lambda s: s.strip()


_MODEL_KEYS = ("architecture", "widths", "depths", "attention", "reduction", "eca_kernel", "groups", "alpha")
_FED_KEYS = tuple(f.name for f in fields(FedConfig) if f.name != "seed")
_PARTITION_KEYS = ("scheme", "alpha", "k", "skew_exponent", "shift_strength")
_DP_KEYS = ("clip_norm", "noise_multiplier", "delta", "delta_factor")
_EXPERIMENT_KEYS = ("name", "seeds", "output_dir")

_SECTION_TYPES = {
    "model": (ModelSpec, _MODEL_KEYS),
    "data": (DataConfig, tuple(f.name for f in fields(DataConfig))),
    "partition": (PartitionConfig, _PARTITION_KEYS),
    "fed": (FedConfig, _FED_KEYS),
    "dp": (DpConfig, _DP_KEYS),
    "analysis": (AnalysisConfig, tuple(f.name for f in fields(AnalysisConfig))),
}


def _line_index(text: str) -> dict[tuple[str, str | None], int]:
    """(section, key) -> 1-based source line; key None marks the section header."""
    where: dict[tuple[str, str | None], int] = {}
    section = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and "]" in line:
            section = line[1:line.index("]")].strip().lower()
            where.setdefault((section, None), i)
        elif section is not None:
            for sep in ("=", ":"):
                if sep in line:
                    where.setdefault((section, line.split(sep, 1)[0].strip().lower()), i)
                    break
    return where


def _build(cls, section: str, keys, values: dict, lines: dict, extra: dict | None = None):
    kwargs = dict(extra or {})
    types = {f.name: f.type for f in fields(cls)}
    for key, text in values.items():
        line = lines.get((section, key))
        if key not in keys:
            raise ConfigError(f"unknown key '{key}' in [{section}]", field=f"{section}.{key}", line=line)
        try:
            kwargs[key] = _codec(types[key])(text)
        except ValueError as exc:
            raise ConfigError(f"bad value '{text}': {exc}", field=f"{section}.{key}", line=line) from None
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        key = (exc.field or "").split(".")[-1]
        raise ConfigError(str(exc).split("] ", 1)[-1], field=exc.field,
                          line=lines.get((section, key), lines.get((section, None)))) from None


def parse_config(source) -> ExperimentConfig:
    """Parse INI text or a path to an INI file into a fully validated config."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and "[" not in source):
        text = Path(source).read_text()
    else:
        text = str(source)
    lines = _line_index(text)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}", line=getattr(exc, "lineno", None)) from None

    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", field=section, line=lines.get((section, None)))
    get = (lambda s: dict(parser.items(s)) if parser.has_section(s) else {})

    exp = get("experiment")
    for key in exp:
        if key not in _EXPERIMENT_KEYS:
            raise ConfigError(f"unknown key '{key}' in [experiment]", field=f"experiment.{key}",
                              line=lines.get(("experiment", key)))
    try:
        seeds = _parse_int_tuple(exp.get("seeds", "0"))
    except ValueError:
        raise ConfigError("seeds must be a comma-separated list of integers", field="experiment.seeds",
                          line=lines.get(("experiment", "seeds"))) from None

    data = _build(DataConfig, "data", _SECTION_TYPES["data"][1], get("data"), lines)
    model = _build(ModelSpec, "model", _MODEL_KEYS, get("model"), lines,
                   {"num_classes": data.num_classes, "image_size": data.image_size})
    partition = _build(PartitionConfig, "partition", _PARTITION_KEYS, get("partition"), lines,
                       {"seed": seeds[0] if seeds else 0})
    fed = _build(FedConfig, "fed", _FED_KEYS, get("fed"), lines, {"seed": seeds[0] if seeds else 0})
    dp = _build(DpConfig, "dp", _DP_KEYS, get("dp"), lines) if parser.has_section("dp") else None
    analysis = _build(AnalysisConfig, "analysis", _SECTION_TYPES["analysis"][1], get("analysis"), lines)

    try:
        cfg = ExperimentConfig(model, data, partition, fed, dp, analysis, seeds,
                               exp.get("output_dir", "runs").strip(), exp.get("name", "experiment").strip())
    except ConfigError as exc:
        raise ConfigError(str(exc).split("] ", 1)[-1], field=exc.field,
                          line=lines.get(("experiment", "seeds"))) from None
    validate_combinations(cfg, lines)
    return cfg


def validate_combinations(cfg: ExperimentConfig, lines: dict | None = None) -> None:
    lines = lines or {}
    arch_line = lines.get(("model", "architecture"))
    if cfg.dp is not None and cfg.model.norm == "batch":
        raise ConfigError(f"DP training is incompatible with batch norm (architecture '{cfg.model.architecture}')",
                          field="dp", line=lines.get(("dp", None), arch_line))
    if cfg.fed.aggregation == "fedbn":
        try:
            personal_names(build_model(cfg.model, 0), "fedbn")
        except ConfigError:
            raise ConfigError(f"fedbn needs batch-norm layers; '{cfg.model.architecture}' has none",
                              field="fed.aggregation", line=lines.get(("fed", "aggregation"))) from None
    if cfg.partition.scheme == "k_classes" and cfg.partition.k > cfg.data.num_classes:
        raise ConfigError(f"k={cfg.partition.k} exceeds {cfg.data.num_classes} classes", field="partition.k",
                          line=lines.get(("partition", "k")))
    if cfg.fed.loss == "bce":
        raise ConfigError("the colorshift task is single-label; use cross_entropy or focal", field="fed.loss",
                          line=lines.get(("fed", "loss")))
    if cfg.fed.participation * cfg.data.num_clients < 0.5:
        raise ConfigError("participation selects no client per round", field="fed.participation",
                          line=lines.get(("fed", "participation")))
    if not math.isfinite(cfg.fed.lr):
        raise ConfigError("lr must be finite", field="fed.lr", line=lines.get(("fed", "lr")))


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical INI text with every value explicit; parsing it returns ``cfg``."""
    out = ["[experiment]", f"name = {cfg.name}", f"seeds = {_format(cfg.seeds)}",
           f"output_dir = {cfg.output_dir}", ""]

    def section(name, obj, keys):
        out.append(f"[{name}]")
        for k in keys:
            out.append(f"{k} = {_format(getattr(obj, k))}")
        out.append("")

    section("model", cfg.model, _MODEL_KEYS)
    section("data", cfg.data, _SECTION_TYPES["data"][1])
    section("partition", cfg.partition, _PARTITION_KEYS)
    section("fed", cfg.fed, _FED_KEYS)
    if cfg.dp is not None:
        section("dp", cfg.dp, _DP_KEYS)
    section("analysis", cfg.analysis, _SECTION_TYPES["analysis"][1])
    return "\n".join(out)
