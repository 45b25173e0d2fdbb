"""Sectioned key/value run configuration.

The file format is INI-style ([section] headers, key = value lines, '#' or
';' comments) parsed with configparser. Keys carry units in their names
where a quantity has one (youngs_modulus_pa, force_range_n,
characteristic_length_m). Unknown sections or keys are rejected so a typo
cannot silently fall back to a default. Which sections are required depends
on the command; see the cli module.

Example:

    [files]
    mesh = lshape.mesh
    pool_plan = lshape.plan
    dataset = lshape.data
    model = lshape.model
    train_report = train_report.txt
    eval_report = eval_report.txt
    field = field.csv

    [material]
    youngs_modulus_pa = 500.0
    poissons_ratio = 0.4

    [boundary]
    fixed_edge = y_max
    load_edge = y_min

    [pooling]
    trials = 1000

    [model]
    num_poolings = 3
    aggs_per_level = 2
    window_power = 2
    channels = 8 16 32 64
    dtype = float64

    [data]
    force_range_n = -1.0 1.0
    samples_per_node = 400
    train_fraction = 0.95

    [train]
    epochs = 200
    batch_size = 4
    lr_start = 1e-4
    lr_end = 1e-6

    [run]
    seed = 0
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .fem import Material
from .network import ModelConfig
from .training import TrainConfig

EDGE_NAMES = ("x_min", "x_max", "y_min", "y_max")


class ConfigError(ValueError):
    """A config file is malformed, has unknown keys, or misses required ones."""


_SCHEMA: dict[str, set[str]] = {
    "files": {"mesh", "pool_plan", "dataset", "model", "train_report", "eval_report", "field"},
    "material": {"youngs_modulus_pa", "poissons_ratio"},
    "boundary": {"fixed_edge", "fixed_nodes", "load_edge", "load_nodes"},
    "pooling": {"trials"},
    "model": {
        "num_poolings",
        "aggs_per_level",
        "window_power",
        "channels",
        "activation",
        "leaky_slope",
        "aggregator",
        "dtype",
    },
    "data": {"force_range_n", "samples_per_node", "num_samples", "train_fraction"},
    "train": {"epochs", "batch_size", "lr_start", "lr_end"},
    "eval": {"characteristic_length_m", "residuals"},
    "run": {"seed", "threads"},
}


@dataclass(frozen=True)
class BoundarySpec:
    """Fixed and loaded regions, each either a mesh edge name or an explicit
    node list (exactly one of the pair)."""

    fixed_edge: str | None = None
    fixed_nodes: tuple[int, ...] | None = None
    load_edge: str | None = None
    load_nodes: tuple[int, ...] | None = None

    def __post_init__(self):
        if (self.fixed_edge is None) == (self.fixed_nodes is None):
            raise ConfigError("[boundary] needs exactly one of fixed_edge / fixed_nodes")
        if (self.load_edge is None) == (self.load_nodes is None):
            raise ConfigError("[boundary] needs exactly one of load_edge / load_nodes")
        for name in (self.fixed_edge, self.load_edge):
            if name is not None and name not in EDGE_NAMES:
                raise ConfigError(f"unknown edge name {name!r}, expected one of {EDGE_NAMES}")


@dataclass(frozen=True)
class DataSpec:
    force_range_n: tuple[float, float]
    samples_per_node: int
    train_fraction: float = 0.95
    num_samples: int | None = None

    def __post_init__(self):
        lo, hi = self.force_range_n
        if hi < lo:
            raise ConfigError("force_range_n must be 'low high' with low <= high")
        if self.samples_per_node < 1:
            raise ConfigError("samples_per_node must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.num_samples is not None and self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1 when given")


@dataclass(frozen=True)
class EvalSpec:
    characteristic_length_m: float = 1.0
    residuals: bool = False

    def __post_init__(self):
        if self.characteristic_length_m <= 0.0:
            raise ConfigError("characteristic_length_m must be positive")


@dataclass
class RunConfig:
    """Everything a CLI command may need; sections a command does not use may
    be absent (None)."""

    files: dict[str, str] = field(default_factory=dict)
    material: Material | None = None
    boundary: BoundarySpec | None = None
    pooling_trials: int = 1000
    model: ModelConfig | None = None
    model_dtype: str = "float64"
    data: DataSpec | None = None
    train: TrainConfig | None = None
    eval: EvalSpec = field(default_factory=EvalSpec)
    seed: int = 0
    threads: int | None = None

    def require_file(self, key: str) -> str:
        try:
            return self.files[key]
        except KeyError:
            raise ConfigError(f"config is missing [files] {key}") from None

    def require(self, attr: str, section: str):
        value = getattr(self, attr)
        if value is None:
            raise ConfigError(f"config is missing the [{section}] section")
        return value


class _Section:
    def __init__(self, name: str, items: dict[str, str]):
        self.name = name
        self.items = items

    def _raw(self, key: str, default=None):
        return self.items.get(key, default)

    def get_str(self, key: str, default=None, choices=None):
        value = self._raw(key, default)
        if value is not None and choices is not None and value not in choices:
            raise ConfigError(f"[{self.name}] {key} must be one of {tuple(choices)}, got {value!r}")
        return value

    def get_int(self, key: str, default=None):
        raw = self._raw(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"[{self.name}] {key} must be an integer, got {raw!r}") from None

    def get_float(self, key: str, default=None):
        raw = self._raw(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"[{self.name}] {key} must be a number, got {raw!r}") from None

    def get_bool(self, key: str, default=None):
        raw = self._raw(key)
        if raw is None:
            return default
        lowered = raw.strip().lower()
        if lowered in ("true", "yes", "on", "1"):
            return True
        if lowered in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"[{self.name}] {key} must be a boolean, got {raw!r}")

    def get_floats(self, key: str, count=None):
        raw = self._raw(key)
        if raw is None:
            return None
        try:
            values = tuple(float(tok) for tok in raw.split())
        except ValueError:
            raise ConfigError(f"[{self.name}] {key} must be numbers, got {raw!r}") from None
        if count is not None and len(values) != count:
            raise ConfigError(f"[{self.name}] {key} needs exactly {count} values, got {len(values)}")
        return values

    def get_ints(self, key: str):
        raw = self._raw(key)
        if raw is None:
            return None
        try:
            return tuple(int(tok) for tok in raw.split())
        except ValueError:
            raise ConfigError(f"[{self.name}] {key} must be integers, got {raw!r}") from None


def parse_run_config(text: str, origin: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), delimiters=("=",)
    )
    parser.optionxform = str
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as err:
        raise ConfigError(f"cannot parse {origin}: {err}") from None

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}] in {origin}")
        for key in parser.options(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}] of {origin}")

    def sec(name: str) -> _Section | None:
        if not parser.has_section(name):
            return None
        return _Section(name, dict(parser.items(name)))

    cfg = RunConfig()

    files = sec("files")
    if files is not None:
        cfg.files = dict(files.items)

    material = sec("material")
    if material is not None:
        e = material.get_float("youngs_modulus_pa")
        nu = material.get_float("poissons_ratio")
        if e is None or nu is None:
            raise ConfigError("[material] needs youngs_modulus_pa and poissons_ratio")
        try:
            cfg.material = Material(e, nu)
        except ValueError as err:
            raise ConfigError(f"[material]: {err}") from None

    boundary = sec("boundary")
    if boundary is not None:
        fixed_nodes = boundary.get_ints("fixed_nodes")
        load_nodes = boundary.get_ints("load_nodes")
        cfg.boundary = BoundarySpec(
            fixed_edge=boundary.get_str("fixed_edge"),
            fixed_nodes=fixed_nodes,
            load_edge=boundary.get_str("load_edge"),
            load_nodes=load_nodes,
        )

    pooling = sec("pooling")
    if pooling is not None:
        cfg.pooling_trials = pooling.get_int("trials", 1000)
        if cfg.pooling_trials < 1:
            raise ConfigError("[pooling] trials must be >= 1")

    model = sec("model")
    if model is not None:
        channels = model.get_ints("channels")
        num_poolings = model.get_int("num_poolings")
        aggs = model.get_int("aggs_per_level")
        power = model.get_int("window_power")
        if None in (channels, num_poolings, aggs, power):
            raise ConfigError(
                "[model] needs num_poolings, aggs_per_level, window_power and channels"
            )
        cfg.model_dtype = model.get_str("dtype", "float64", choices=("float64", "float32"))
        try:
            cfg.model = ModelConfig(
                num_poolings=num_poolings,
                aggs_per_level=aggs,
                window_power=power,
                channels_per_level=channels,
                in_channels=2,
                out_channels=2,
                activation=model.get_str(
                    "activation", "leaky_relu", choices=("leaky_relu", "linear")
                ),
                leaky_slope=model.get_float("leaky_slope", 0.3),
                aggregator=model.get_str("aggregator", "max", choices=("max", "avg")),
            )
        except ValueError as err:
            raise ConfigError(f"[model]: {err}") from None

    data = sec("data")
    if data is not None:
        force_range = data.get_floats("force_range_n", count=2)
        spn = data.get_int("samples_per_node")
        if force_range is None or spn is None:
            raise ConfigError("[data] needs force_range_n and samples_per_node")
        cfg.data = DataSpec(
            force_range_n=force_range,
            samples_per_node=spn,
            train_fraction=data.get_float("train_fraction", 0.95),
            num_samples=data.get_int("num_samples"),
        )

    train = sec("train")
    if train is not None:
        epochs = train.get_int("epochs")
        if epochs is None:
            raise ConfigError("[train] needs epochs")
        try:
            cfg.train = TrainConfig(
                epochs=epochs,
                batch_size=train.get_int("batch_size", 4),
                lr_start=train.get_float("lr_start", 1e-4),
                lr_end=train.get_float("lr_end", 1e-6),
            )
        except ValueError as err:
            raise ConfigError(f"[train]: {err}") from None

    ev = sec("eval")
    if ev is not None:
        cfg.eval = EvalSpec(
            characteristic_length_m=ev.get_float("characteristic_length_m", 1.0),
            residuals=ev.get_bool("residuals", False),
        )

    run = sec("run")
    if run is not None:
        cfg.seed = run.get_int("seed", 0)
        cfg.threads = run.get_int("threads")
        if cfg.threads is not None and cfg.threads < 1:
            raise ConfigError("[run] threads must be >= 1")

    return cfg


def load_run_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return parse_run_config(text, origin=str(path))
