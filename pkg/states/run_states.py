import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

from config import config
from services.bounds_service import BoundCheck
from services.discretization import DiscretizationError, Grid, Params
from services.wells import Well, WellError, radial_well

logger = logging.getLogger(__name__)


class RunMode(str, Enum):
    """Режимы запуска"""
    SOLVE = "solve"
    GROUND_STATE = "ground-state"
    DOMAIN_APPROX = "domain-approx"
    LAMBDA_SWEEP = "lambda-sweep"
    MU_SWEEP = "mu-sweep"
    VERIFY = "verify"
    NONEXISTENCE = "nonexistence-probe"


SWEEP_MODES = (RunMode.LAMBDA_SWEEP, RunMode.MU_SWEEP)
VERIFY_PARAMS = {"p": 1.5, "lambda": 0.01, "mu": 100.0}
VERIFY_GRID = {"kind": "radial", "k": 4.0, "n": 1025}


class ConfigError(ValueError):
    """Некорректный конфиг запуска; path - путь к полю в JSON"""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class GridSpec:
    kind: str
    k: float
    n: int
    k_schedule: tuple[float, ...] = ()

    def build(self) -> Grid:
        return Grid(self.kind, self.k, self.n)

    def to_dict(self) -> dict:
        data = {"kind": self.kind, "k": self.k, "n": self.n}
        if self.k_schedule:
            data["k_schedule"] = list(self.k_schedule)
        return data


def _number(data: dict, key: str, path: str, cast=float, default: Any = None):
    if key not in data:
        if default is None:
            raise ConfigError(f"{path}.{key}", "missing")
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {value!r}")
    if cast is int and value != int(value):
        raise ConfigError(f"{path}.{key}", f"expected an integer, got {value!r}")
    return cast(value)


def _numbers(data: dict, key: str, path: str) -> tuple[float, ...]:
    values = data.get(key, [])
    if not isinstance(values, list):
        raise ConfigError(f"{path}{key}", "expected a list")
    out = []
    for i, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{path}{key}[{i}]", f"expected a number, got {v!r}")
        out.append(float(v))
    return tuple(out)


def _section(data: dict, key: str) -> dict:
    section = data.get(key)
    if not isinstance(section, dict):
        raise ConfigError(key, "missing or not an object")
    return section


@dataclass(frozen=True)
class RunConfig:
    """
    Конфиг запуска (run.json). Допуски не из конфига берутся из config.tolerances().
    schedule - значения λ (lambda-sweep) или μ (mu-sweep).
    """
    mode: RunMode
    params: Params
    well: Well
    grid: GridSpec
    tolerances: dict = field(default_factory=config.tolerances)
    seed: int = 0
    output_dir: str = config.OUTPUT_DIR
    schedule: tuple[float, ...] = ()
    n_starts: int = 4
    n_inits: int = 20
    seed_field: Optional[str] = None
    flow_oracle: bool = True

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("$", "run config must be a JSON object")
        try:
            mode = RunMode(data.get("mode", "solve"))
        except ValueError:
            raise ConfigError("mode", f"unknown mode {data.get('mode')!r}")

        raw_params = data.get("params", VERIFY_PARAMS if mode == RunMode.VERIFY else None)
        if not isinstance(raw_params, dict):
            raise ConfigError("params", "missing or not an object")
        try:
            params = Params(
                _number(raw_params, "p", "params"),
                _number(raw_params, "lambda", "params"),
                _number(raw_params, "mu", "params"),
            )
        except DiscretizationError as e:
            raise ConfigError("params", str(e))

        try:
            well = Well.from_dict(data["well"]) if "well" in data else radial_well()
        except (WellError, KeyError, TypeError) as e:
            raise ConfigError("well", str(e))

        raw_grid = data.get("grid", VERIFY_GRID if mode == RunMode.VERIFY else None)
        if not isinstance(raw_grid, dict):
            raise ConfigError("grid", "missing or not an object")
        grid = GridSpec(
            str(raw_grid.get("kind", "radial")),
            _number(raw_grid, "k", "grid"),
            _number(raw_grid, "n", "grid", cast=int),
            _numbers(raw_grid, "k_schedule", "grid."),
        )
        try:
            grid.build()
        except DiscretizationError as e:
            raise ConfigError("grid", str(e))

        tolerances = config.tolerances()
        raw_tol = data.get("tolerances", {})
        if not isinstance(raw_tol, dict):
            raise ConfigError("tolerances", "expected an object")
        for key in raw_tol:
            if key not in tolerances:
                raise ConfigError(f"tolerances.{key}", "unknown tolerance")
            value = _number(raw_tol, key, "tolerances")
            if value <= 0:
                raise ConfigError(f"tolerances.{key}", "must be positive")
            tolerances[key] = value

        seed_field = data.get("seed_field")
        if seed_field is not None and not isinstance(seed_field, str):
            raise ConfigError("seed_field", "expected a path string")

        cfg = cls(
            mode=mode,
            params=params,
            well=well,
            grid=grid,
            tolerances=tolerances,
            seed=_number(data, "seed", "$", cast=int, default=0),
            output_dir=str(data.get("output_dir", config.OUTPUT_DIR)),
            schedule=_numbers(data, "schedule", ""),
            n_starts=_number(data, "n_starts", "$", cast=int, default=4),
            n_inits=_number(data, "n_inits", "$", cast=int, default=20),
            seed_field=seed_field,
            flow_oracle=bool(data.get("flow_oracle", True)),
        )
        cfg._check_mode()
        return cfg

    def _check_mode(self):
        """Поля, обязательные для режима"""
        if self.mode != RunMode.VERIFY:
            grid = self.grid.build()
            if self.grid.k_schedule:
                grid = Grid.with_spacing(grid.kind, min(self.grid.k_schedule), grid.h)
            try:
                self.well.check_grid(grid)
            except WellError as e:
                raise ConfigError("well", str(e))
        if self.mode == RunMode.DOMAIN_APPROX:
            ks = self.grid.k_schedule
            if not ks:
                raise ConfigError("grid.k_schedule", "required for domain-approx")
            if any(b <= a for a, b in zip(ks, ks[1:])):
                raise ConfigError("grid.k_schedule", "must be strictly increasing")
        if self.mode in SWEEP_MODES:
            if not self.schedule:
                raise ConfigError("schedule", f"required for {self.mode.value}")
            s = self.schedule
            if len(set(s)) != len(s) or (s != tuple(sorted(s)) and s != tuple(sorted(s, reverse=True))):
                raise ConfigError("schedule", "must be strictly monotone")
            if self.mode == RunMode.MU_SWEEP and s != tuple(sorted(s)):
                raise ConfigError("schedule", "mu values must increase")
            if self.mode == RunMode.LAMBDA_SWEEP and min(s) < 0:
                raise ConfigError("schedule", "lambda values must be >= 0")
        if self.mode == RunMode.GROUND_STATE and self.n_starts < 1:
            raise ConfigError("n_starts", "must be >= 1")
        if self.mode == RunMode.NONEXISTENCE and self.n_inits < 1:
            raise ConfigError("n_inits", "must be >= 1")

    @staticmethod
    def read(path: str) -> dict:
        """Сырой JSON конфига; ошибки чтения - ConfigError"""
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError("$", f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError("$", f"invalid JSON: {e}")
        return data

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        return cls.from_dict(cls.read(path))

    def to_dict(self) -> dict:
        data = {
            "mode": self.mode.value,
            "params": self.params.to_dict(),
            "well": self.well.to_dict(),
            "grid": self.grid.to_dict(),
            "tolerances": dict(self.tolerances),
            "seed": self.seed,
            "output_dir": self.output_dir,
            "n_starts": self.n_starts,
            "n_inits": self.n_inits,
            "flow_oracle": self.flow_oracle,
        }
        if self.schedule:
            data["schedule"] = list(self.schedule)
        if self.seed_field is not None:
            data["seed_field"] = self.seed_field
        return data

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None) -> "RunConfig":
        """Переопределения из командной строки"""
        return RunConfig.from_dict({
            **self.to_dict(),
            **({"seed": seed} if seed is not None else {}),
            **({"output_dir": output_dir} if output_dir is not None else {}),
        })


@dataclass
class RunReport:
    """Отчёт запуска; timings не входят в report.json"""
    mode: str
    config: dict
    solutions: list[dict] = field(default_factory=list)
    constants: Optional[dict] = None
    checks: list[dict] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @classmethod
    def for_config(cls, cfg: RunConfig) -> "RunReport":
        """Эхо конфига без output_dir: отчёт не зависит от того, куда он записан"""
        echo = cfg.to_dict()
        echo.pop("output_dir")
        return cls(mode=cfg.mode.value, config=echo)

    def add_check(self, check: BoundCheck):
        self.checks.append(check.to_dict())
        if not check.passed:
            level = logging.ERROR if check.hard else logging.WARNING
            logger.log(level, f"check {check.name} failed: lhs={check.lhs:.6g}, rhs={check.rhs:.6g}")

    def add_checks(self, checks: list[BoundCheck]):
        for check in checks:
            self.add_check(check)

    def add_failure(self, stage: str, error: BaseException):
        self.failures.append({"stage": stage, "type": type(error).__name__, "message": str(error)})

    @property
    def hard_failures(self) -> list[str]:
        return [c["name"] for c in self.checks if c["hard"] and not c["passed"]]

    @property
    def passed(self) -> bool:
        return not self.failures and not self.hard_failures

    def pass_counts(self) -> tuple[int, int]:
        passed = sum(1 for c in self.checks if c["passed"])
        return passed, len(self.checks) - passed

    def to_dict(self) -> dict:
        passed, failed = self.pass_counts()
        return {
            "mode": self.mode,
            "config": self.config,
            "solutions": self.solutions,
            "constants": self.constants,
            "checks": self.checks,
            "rows": self.rows,
            "extras": self.extras,
            "failures": self.failures,
            "warnings": self.warnings,
            "summary": {"passed": self.passed, "checks_passed": passed, "checks_failed": failed},
        }
