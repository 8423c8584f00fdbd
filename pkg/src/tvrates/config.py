"""JSON experiment configuration: schema, overrides and object builders."""
from __future__ import annotations

import copy
import json
import re
from pathlib import Path
from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PField, ValidationError, model_validator

from .forward_ops import BlurOperator, ForwardOperator, IdentityOperator, MatrixOperator
from .grid import Grid
from .mdp import IndexFunction
from .solver import SolveConfig

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "apply_overrides",
]


class ConfigError(ValueError):
    """Unreadable or invalid configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSpec(_Strict):
    dims: list[int] = PField(min_length=1, max_length=2)
    spacing: Optional[list[float]] = None

    @model_validator(mode="after")
    def _lengths(self):
        if any(n < 1 for n in self.dims):
            raise ValueError("dims entries must be positive")
        if self.spacing is not None and len(self.spacing) != len(self.dims):
            raise ValueError("spacing needs one entry per dimension")
        return self


class OperatorSpec(_Strict):
    kind: Literal["identity", "blur", "matrix"] = "identity"
    kernel: Optional[list[float]] = None
    matrix: Optional[list[list[float]]] = None
    matrix_csv: Optional[str] = None
    range_weight: Optional[float] = PField(default=None, gt=0)

    @model_validator(mode="after")
    def _payload(self):
        if self.kind == "blur" and not self.kernel:
            raise ValueError("blur operator needs a kernel")
        if self.kind == "matrix" and (self.matrix is None) == (self.matrix_csv is None):
            raise ValueError("matrix operator needs exactly one of matrix, matrix_csv")
        return self


class PhantomSpec(_Strict):
    kind: Literal["constant", "ramp", "bump", "piecewise"] = "bump"
    amplitude: float = 1.0


class IndexSpec(_Strict):
    C: float = PField(gt=0)
    kappa: float = PField(gt=0, lt=2)


class SolverSpec(_Strict):
    max_iters: int = PField(default=20000, ge=1)
    grad_tol: float = PField(default=1e-8, gt=0, lt=1)
    c1: float = PField(default=1e-4, gt=0, lt=1)
    backtrack: float = PField(default=0.5, gt=0, lt=1)
    initial_step: float = PField(default=1.0, gt=0)
    initial_guess: Literal["zeros", "adjoint"] = "adjoint"
    barzilai_borwein: bool = True


class OutputSpec(_Strict):
    records_csv: str = "records.csv"
    report_json: str = "report.json"
    trace_csv: str = "mdp_trace.csv"
    solution_csv: str = "solution.csv"
    solution_json: str = "solution.json"


class ExperimentConfig(_Strict):
    grid: GridSpec
    operator: OperatorSpec = OperatorSpec()
    phantom: PhantomSpec = PhantomSpec()
    beta: float = PField(gt=0, lt=1)
    deltas: list[float] = PField(default_factory=list)
    strategy: Literal["mdp", "index"] = "mdp"
    tau_low: float = PField(default=1.1, ge=1)
    tau_high: float = 1.5
    alpha_bracket: tuple[float, float] = (1e-8, 1e4)
    max_solves: int = PField(default=60, ge=2)
    index_function: Optional[IndexSpec] = None
    solver: SolverSpec = SolverSpec()
    seed: int = PField(default=0, ge=0, lt=2 ** 64)
    fit_target: Literal["bregman_dist", "j_gap", "l2_error"] = "bregman_dist"
    workers: int = PField(default=1, ge=1)
    # single-level solve
    delta: Optional[float] = None
    measurement_csv: Optional[str] = None
    output: OutputSpec = OutputSpec()

    @model_validator(mode="after")
    def _consistency(self):
        for i, d in enumerate(self.deltas):
            if not d > 0:
                raise ValueError(f"deltas[{i}] = {d}: noise levels must be positive")
        if any(b >= a for a, b in zip(self.deltas, self.deltas[1:])):
            raise ValueError("deltas must be strictly descending")
        if self.delta is not None and not self.delta > 0:
            raise ValueError(f"delta = {self.delta}: noise level must be positive")
        if not self.tau_low <= self.tau_high:
            raise ValueError(
                f"tau ordering violated: need 1 <= tau_low <= tau_high, got "
                f"tau_low={self.tau_low}, tau_high={self.tau_high}"
            )
        lo, hi = self.alpha_bracket
        if not 0 < lo < hi:
            raise ValueError(f"alpha_bracket must satisfy 0 < min < max, got {list(self.alpha_bracket)}")
        if self.strategy == "index" and self.index_function is None:
            raise ValueError("strategy 'index' requires index_function {C, kappa}")
        return self

    # ---------------------------------------------------------- builders
    def build_grid(self) -> Grid:
        return Grid(tuple(self.grid.dims), tuple(self.grid.spacing or ()))

    def build_operator(self) -> ForwardOperator:
        grid = self.build_grid()
        o = self.operator
        if o.kind == "identity":
            return IdentityOperator(grid)
        if o.kind == "blur":
            return BlurOperator(grid, o.kernel)
        m = np.array(o.matrix, dtype=float) if o.matrix is not None else \
            np.loadtxt(o.matrix_csv, delimiter=",", ndmin=2)
        return MatrixOperator(grid, m, o.range_weight)

    def build_index_function(self) -> Optional[IndexFunction]:
        f = self.index_function
        return None if f is None else IndexFunction.power_law(f.C, f.kappa)

    def build_solve_config(self) -> SolveConfig:
        return SolveConfig(**self.solver.model_dump())

    def echo(self) -> dict:
        return self.model_dump(mode="json")


# ------------------------------------------------------------- loading

def _key_line(text: str, key: str) -> Optional[int]:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _describe(exc: ValidationError, text: str, source: str) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        keys = [str(x) for x in err["loc"] if isinstance(x, str)]
        if not keys:
            # model-level checks name their fields in the message
            keys = [n for n in ExperimentConfig.model_fields
                    if re.search(r"\b%s\b" % n, err["msg"])][:1]
        line = _key_line(text, keys[-1]) if keys else None
        if line is None and keys:
            line = _key_line(text, keys[0])
        if not err["loc"] and keys:
            loc = keys[0]
        where = f"{source}:{line}" if line else source
        msg = err["msg"].removeprefix("Value error, ")
        if err["type"] == "missing":
            msg = f"required field {loc!r} is missing"
        lines.append(f"{where}: {loc}: {msg}")
    return "\n".join(lines)


def _set_dotted(data: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key=value`` strings; dotted keys descend, values parse as JSON
    and fall back to plain strings."""
    out = copy.deepcopy(data)
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_dotted(out, key.strip(), value)
    return out


def parse_config(text: str, overrides=(), source: str = "<config>") -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: top level must be a JSON object")
    data = apply_overrides(data, overrides)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_describe(exc, text, source)) from exc


def load_config(path, overrides=()) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    cfg = parse_config(text, overrides, str(path))
    # data files are resolved relative to the config file
    base = path.resolve().parent
    if cfg.operator.matrix_csv and not Path(cfg.operator.matrix_csv).is_absolute():
        cfg.operator.matrix_csv = str(base / cfg.operator.matrix_csv)
    if cfg.measurement_csv and not Path(cfg.measurement_csv).is_absolute():
        cfg.measurement_csv = str(base / cfg.measurement_csv)
    return cfg
