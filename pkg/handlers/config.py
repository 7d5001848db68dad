"""
Run Configuration
Typed run settings, parameter presets and the layered flag / file / env parser
"""

import argparse
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from services.exceptions import UsageError
from services.imitation_dqn import DQNConfig, PriorityMode, SamplingMode
from services.reward import RewardConfig
from services.trainer import TrainerConfig

logger = logging.getLogger(__name__)

IGNORED_FLAGS = ("reward_mode", "data_batch_size")


class RunConfig(BaseModel):
    """Every setting of one CLI run; defaults are the NYC reward-priority parameters"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    # Experiment
    cross_validation: int = Field(0, ge=0, le=1)
    priority_mode: Literal["r", "td"] = "r"
    sampling: Literal["softmax", "topk"] = "softmax"
    model_name: Literal["dqn"] = "dqn"
    city: Literal["nyc", "bj", "tsv"] = "nyc"
    seed: int = 0
    run_id: str = "rirl"
    out_dir: str = "runs/latest"

    # Reward
    ld: float = Field(0.2, ge=0)
    lc: float = Field(0.6, ge=0)
    lp: float = Field(0.2, ge=0)
    time_window: int = Field(5, ge=1)
    distance_floor: float = Field(0.1, gt=0)

    # Imitation module
    epsilon: float = Field(0.97, ge=0, le=1)
    gamma: float = Field(0.94, ge=0, le=1)
    memory_capacity: int = Field(128, ge=1)
    batch_size: int = Field(32, ge=1)
    target_replace_iter: int = Field(5, ge=1)
    lr2: float = Field(0.0001, ge=0)
    hidden: int = Field(64, ge=1)

    # Representation module
    lr1: float = Field(0.001, ge=0)
    tau: float = Field(1.0, gt=0)
    dim: int = Field(200, ge=1)
    epochs: int = Field(1, ge=1)
    tail_sigmoid: bool = False
    state_pooling: bool = False

    # Data
    train_ratio: float = Field(0.9, gt=0, lt=1)
    groups: int = Field(5, ge=2)
    checkins: Optional[str] = None
    taxi: Optional[str] = None
    word_vectors: Optional[str] = None
    eval_from: Optional[str] = None
    vector_dim: int = Field(50, ge=1)
    grid_rows: int = Field(2, ge=1)
    grid_cols: int = Field(2, ge=1)
    synth_users: int = Field(5, ge=1)
    synth_pois: int = Field(20, ge=1)
    synth_categories: int = Field(4, ge=1)
    synth_events: int = Field(2200, ge=2)
    synth_concentration: float = Field(0.9, ge=0, le=1)

    @model_validator(mode="after")
    def check_consistency(self) -> "RunConfig":
        if self.ld + self.lc + self.lp <= 0:
            raise ValueError("ld + lc + lp must be positive")
        if self.batch_size > self.memory_capacity:
            raise ValueError("batch_size cannot exceed memory_capacity")
        if self.synth_pois < self.synth_categories:
            raise ValueError("synth_pois must be >= synth_categories")
        if (self.checkins is None) != (self.taxi is None):
            raise ValueError("checkins and taxi must be given together")
        if self.eval_from is not None and self.cross_validation:
            raise ValueError("eval_from evaluates one saved run; point it at a group_<i> "
                             "directory with cross_validation=0")
        return self

    def reward_config(self) -> RewardConfig:
        return RewardConfig(self.ld, self.lc, self.lp, self.time_window, self.distance_floor)

    def dqn_config(self) -> DQNConfig:
        return DQNConfig(gamma=self.gamma, epsilon=self.epsilon, batch_size=self.batch_size,
                         memory_capacity=self.memory_capacity,
                         target_replace_iter=self.target_replace_iter, lr2=self.lr2,
                         hidden=self.hidden, priority_mode=PriorityMode(self.priority_mode),
                         sampling=SamplingMode(self.sampling))

    def trainer_config(self, seed: Optional[int] = None) -> TrainerConfig:
        return TrainerConfig(dim=self.dim, lr1=self.lr1, tau=self.tau, epochs=self.epochs,
                             seed=self.seed if seed is None else seed,
                             state_pooling=self.state_pooling, tail_sigmoid=self.tail_sigmoid,
                             reward=self.reward_config(), dqn=self.dqn_config())

    def echo(self) -> str:
        """Sorted key=value lines; feeding them back through --config reproduces the run"""
        lines = []
        for key, value in sorted(self.model_dump().items()):
            if value is None:
                continue
            if isinstance(value, bool):
                value = str(value).lower()
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"


# ============================================
# PRESETS
# ============================================

_ROBUST = {"lr1": 0.001, "lr2": 0.0001, "cross_validation": 1}

PRESETS: Dict[str, Dict[str, Any]] = {
    "nyc-r": {"city": "nyc", "priority_mode": "r", "lr1": 0.001, "lr2": 0.0001,
              "ld": 0.2, "lc": 0.6, "lp": 0.2, "memory_capacity": 128, "batch_size": 32,
              "epsilon": 0.97, "gamma": 0.94},
    "nyc-td": {"city": "nyc", "priority_mode": "td", "lr1": 0.001, "lr2": 0.0001,
               "ld": 0.44, "lc": 0.33, "lp": 0.23, "memory_capacity": 20, "batch_size": 10,
               "epsilon": 0.98, "gamma": 0.85},
    "bj-r": {"city": "bj", "priority_mode": "r", "lr1": 0.001, "lr2": 0.001,
             "ld": 0.45, "lc": 0.3, "lp": 0.25, "memory_capacity": 64, "batch_size": 25,
             "epsilon": 0.92, "gamma": 0.99},
    "bj-td": {"city": "bj", "priority_mode": "td", "lr1": 0.001, "lr2": 0.01,
              "ld": 0.31, "lc": 0.08, "lp": 0.61, "memory_capacity": 64, "batch_size": 15,
              "epsilon": 0.95, "gamma": 0.75},
    "nyc-r-robust": {**_ROBUST, "city": "nyc", "priority_mode": "r",
                     "ld": 0.53, "lc": 0.12, "lp": 0.35, "memory_capacity": 64,
                     "batch_size": 25, "epsilon": 0.94, "gamma": 0.8},
    "nyc-td-robust": {**_ROBUST, "city": "nyc", "priority_mode": "td",
                      "ld": 0.57, "lc": 0.07, "lp": 0.36, "memory_capacity": 128,
                      "batch_size": 40, "epsilon": 0.98, "gamma": 0.88},
    "bj-r-robust": {**_ROBUST, "city": "bj", "priority_mode": "r",
                    "ld": 0.3, "lc": 0.4, "lp": 0.3, "memory_capacity": 64,
                    "batch_size": 25, "epsilon": 0.9, "gamma": 0.85},
    "bj-td-robust": {**_ROBUST, "city": "bj", "priority_mode": "td",
                     "ld": 0.2, "lc": 0.7, "lp": 0.1, "memory_capacity": 64,
                     "batch_size": 32, "epsilon": 0.93, "gamma": 0.9},
    # Small networks and a fast imitation rate for the default synthetic world
    "synthetic": {"priority_mode": "r", "dim": 8, "hidden": 32, "lr1": 0.001, "lr2": 0.05,
                  "memory_capacity": 128, "batch_size": 16, "epsilon": 0.7, "gamma": 0.5},
}

# ============================================
# PARSING
# ============================================


class RunArgumentParser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting"""

    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> RunArgumentParser:
    parser = RunArgumentParser(prog="main.py", description="Imitation-based user profiling runs",
                               argument_default=argparse.SUPPRESS, allow_abbrev=False)
    parser.add_argument("--config", help="key=value file; its entries sit below CLI flags")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="named parameter table")
    parser.add_argument("--verbose", action="store_true", help="debug-level console logging")
    for name, field in RunConfig.model_fields.items():
        parser.add_argument(f"--{name}", dest=name, metavar=name.upper(),
                            help=field.description)
    parser.add_argument("--ll", dest="ll", help="alias of --ld")
    parser.add_argument("--lr", dest="lr", help="sets lr1 and lr2 unless given separately")
    for name in IGNORED_FLAGS:
        parser.add_argument(f"--{name}", dest=name, help="accepted and ignored")
    return parser


def read_config_file(path: str) -> Dict[str, str]:
    entries: Dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{line_no}: expected key=value, got {line!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                entries[key.lstrip("-")] = value
    except (OSError, UnicodeDecodeError) as e:
        raise UsageError(f"Cannot read config file {path}: {e}") from e
    return entries


def _as_float(value: Any, source: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise UsageError(f"{source}: {value!r} is not a number") from None


def _normalize(layer: Mapping[str, Any], source: str) -> Dict[str, Any]:
    """Resolve the alias and ignored flags of one layer"""
    layer = dict(layer)
    if "ll" in layer:
        ll = layer.pop("ll")
        if "ld" in layer and _as_float(layer["ld"], source) != _as_float(ll, source):
            raise UsageError(f"{source}: --ll={ll} conflicts with --ld={layer['ld']}")
        layer["ld"] = ll
    if "lr" in layer:
        lr = layer.pop("lr")
        layer.setdefault("lr1", lr)
        layer.setdefault("lr2", lr)
    for name in IGNORED_FLAGS:
        if name in layer:
            logger.warning(f"{source}: {name}={layer.pop(name)} is accepted but has no effect")
    unknown = sorted(set(layer) - set(RunConfig.model_fields))
    if unknown:
        raise UsageError(f"{source}: unknown setting(s) {', '.join(unknown)}")
    return layer


def parse_config(argv: Optional[Sequence[str]] = None,
                 environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """
    Resolve a RunConfig; precedence is CLI flag > --config file > --preset >
    RIRL_SEED > defaults. environ defaults to os.environ after loading .env.
    """
    args = vars(build_parser().parse_args(list(argv) if argv is not None else None))
    if environ is None:
        load_dotenv()
        environ = os.environ

    values: Dict[str, Any] = {}
    if environ.get("RIRL_SEED"):
        values["seed"] = environ["RIRL_SEED"]
    preset = args.pop("preset", None)
    if preset is not None:
        values.update(PRESETS[preset])
    config_path = args.pop("config", None)
    if config_path is not None:
        file_layer = read_config_file(config_path)
        file_layer.pop("preset", None)
        values.update(_normalize(file_layer, config_path))
    args.pop("verbose", None)
    values.update(_normalize(args, "command line"))

    try:
        return RunConfig(**values)
    except ValidationError as e:
        problems: List[str] = []
        for err in e.errors():
            where = ".".join(str(p) for p in err["loc"]) or "config"
            problems.append(f"{where}: {err['msg']}")
        raise UsageError("; ".join(problems)) from None


def wants_verbose(argv: Optional[Sequence[str]]) -> bool:
    return "--verbose" in (argv or [])


def write_echo(cfg: RunConfig, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.echo", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(cfg.echo())
