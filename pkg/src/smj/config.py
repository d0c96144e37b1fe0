"""
Run configuration: a strict schema over a YAML file.

Unknown keys are rejected and validation errors point at the offending line.
``RunConfig.echo()`` returns the full parsed config with every default filled in.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .disability import DisabilityRates, default_rates, disability_family
from .expressions import compile_expression
from .intensity import IntensityFamily, constant_family, expression_family, shift
from .valuation import DiscountCurve, PaymentSpec

__all__ = ["RunConfig", "ConfigError", "load_config", "parse_config"]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelBlock(_Strict):
    family: Literal["constant", "expression", "disability"]
    matrix: Optional[list[list[float]]] = None
    entries: Optional[list[list[Union[str, float, None]]]] = None
    gamma0: Optional[float] = None
    lipschitz_K: Optional[float] = None
    params: Optional[dict] = None
    time_offset: float = 0.0
    labels: Optional[list[str]] = None

    @model_validator(mode="after")
    def _needs(self):
        if self.family == "constant" and self.matrix is None:
            raise ValueError("constant family needs 'matrix'")
        if self.family == "expression" and (self.entries is None or self.gamma0 is None):
            raise ValueError("expression family needs 'entries' and 'gamma0'")
        if self.family != "constant" and self.matrix is not None:
            raise ValueError("'matrix' only applies to the constant family")
        if self.family != "expression" and self.entries is not None:
            raise ValueError("'entries' only applies to the expression family")
        if self.family != "disability" and self.params is not None:
            raise ValueError("'params' only applies to the disability family")
        if self.time_offset < 0:
            raise ValueError("time_offset must be >= 0")
        return self

    def build(self) -> IntensityFamily:
        if self.family == "constant":
            fam = constant_family(self.matrix, self.gamma0)
        elif self.family == "expression":
            fam = expression_family(self.entries, self.gamma0, self.lipschitz_K)
        else:
            rates = default_rates()
            if self.params:
                merged = rates.to_dict()
                merged.update(self.params)
                rates = DisabilityRates.from_dict(merged)
            fam = disability_family(rates)
        fam = shift(fam, self.time_offset)
        if self.labels is not None:
            if len(self.labels) != fam.states:
                raise ValueError(f"{len(self.labels)} labels for {fam.states} states")
            from dataclasses import replace

            fam = replace(fam, labels=tuple(self.labels))
        return fam


class DiscreteBlock(_Strict):
    time: float
    state: int
    amount: float
    v_min: float = 0.0
    v_max: Optional[float] = None


class PaymentsBlock(_Strict):
    rate: Optional[str] = None
    lump: Optional[str] = None
    discrete: list[DiscreteBlock] = Field(default_factory=list)
    b0: float = 0.0

    @field_validator("rate", "lump", mode="before")
    @classmethod
    def _compile(cls, v, info):
        if v is None:
            return None
        names = {"j", "s", "v"} if info.field_name == "rate" else {"j", "k", "s", "v"}
        compile_expression(str(v), allowed=names)
        return str(v)


class DiscountBlock(_Strict):
    breaks: list[float] = Field(default_factory=lambda: [0.0])
    rates: list[float] = Field(default_factory=lambda: [0.0])

    def build(self) -> DiscountCurve:
        return DiscountCurve(tuple(self.breaks), tuple(self.rates))


class StartBlock(_Strict):
    states: list[int] = Field(default_factory=lambda: [1])
    duration: float = 0.0
    time: float = 0.0

    @field_validator("duration", "time")
    @classmethod
    def _nonneg(cls, v):
        if v < 0:
            raise ValueError("must be >= 0")
        return v


class EngineBlock(_Strict):
    horizon: float
    gammas: list[float] = Field(default_factory=lambda: [30.0])
    mode: Literal["conditional", "unconditional", "both"] = "both"
    seeds: list[int] = Field(default_factory=lambda: [0])
    tail_prob: float = 1e-10
    N_s: int = 200
    N_v: int = 200
    epsilon: float = 0.1
    cashflow_points: int = 50
    # None resolves to min(1, horizon) and min(2, horizon)
    transition_s: Optional[list[float]] = None
    convergence_s: Optional[float] = None
    accum_subsets: int = 3

    @field_validator("N_s")
    @classmethod
    def _simpson(cls, n):
        if n < 2 or n % 2:
            raise ValueError("N_s must be an even integer >= 2 (composite Simpson)")
        return n

    @field_validator("N_v")
    @classmethod
    def _nv(cls, n):
        if n < 1:
            raise ValueError("N_v must be >= 1")
        return n

    @field_validator("cashflow_points")
    @classmethod
    def _points(cls, n):
        if n < 2:
            raise ValueError("cashflow_points must be >= 2")
        return n

    @model_validator(mode="after")
    def _ranges(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not 0 < self.tail_prob < 1:
            raise ValueError("tail_prob must lie in (0, 1)")
        if not self.gammas or any(g <= 0 for g in self.gammas):
            raise ValueError("gammas must be a non-empty list of positive rates")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.transition_s is None:
            self.transition_s = [min(1.0, self.horizon)]
        if self.convergence_s is None:
            self.convergence_s = min(2.0, self.horizon)
        if any(s < 0 or s > self.horizon for s in self.transition_s):
            raise ValueError("transition_s values must lie in [0, horizon]")
        if not 0 < self.convergence_s <= self.horizon:
            raise ValueError("convergence_s must lie in (0, horizon]")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        return self

    @property
    def modes(self) -> list[str]:
        return ["conditional", "unconditional"] if self.mode == "both" else [self.mode]


class MCBlock(_Strict):
    n_paths: int = 100_000
    seeds: list[int] = Field(default_factory=lambda: [12345])
    gamma0_rate: Optional[float] = None


class OutputBlock(_Strict):
    directory: str = "out"
    formats: list[Literal["csv"]] = Field(default_factory=lambda: ["csv"])


class RunConfig(_Strict):
    name: str = "run"
    model: ModelBlock
    payments: PaymentsBlock = Field(default_factory=PaymentsBlock)
    discount: DiscountBlock = Field(default_factory=DiscountBlock)
    start: StartBlock = Field(default_factory=StartBlock)
    engine: EngineBlock
    mc: MCBlock = Field(default_factory=MCBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)

    def family(self) -> IntensityFamily:
        return self.model.build()

    def payment_spec(self, J: int) -> PaymentSpec:
        p = self.payments
        disc = [
            {k: v for k, v in d.model_dump().items() if v is not None} for d in p.discrete
        ]
        return PaymentSpec.from_expressions(J, self.engine.horizon, p.rate, p.lump, disc, p.b0)

    def discount_curve(self) -> DiscountCurve:
        return self.discount.build()

    def cashflow_grid(self) -> np.ndarray:
        n = self.engine.cashflow_points
        return self.engine.horizon * np.arange(1, n + 1) / n

    def echo(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)


def _line_map(node, path=(), out=None):
    """Map key paths (tuples of str/int) to 1-based source lines."""
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[path + (k.value,)] = k.start_mark.line + 1
            _line_map(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for n, v in enumerate(node.value):
            _line_map(v, path + (n,), out)
    return out


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: config must be a mapping")
    lines = _line_map(node)
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = tuple(x for x in err["loc"] if not (isinstance(x, str) and x.startswith("function-")))
            line = None
            for cut in range(len(loc), -1, -1):
                if loc[:cut] in lines:
                    line = lines[loc[:cut]]
                    break
            key = ".".join(str(x) for x in loc) or "<root>"
            msgs.append(f"{source}:{line or 1}: {key}: {err['msg']}")
        raise ConfigError("\n".join(msgs)) from None
    # semantic checks that need built objects, anchored at their block
    def anchor(block, exc):
        return ConfigError(f"{source}:{lines.get((block,), 1)}: {block}: {exc}")

    try:
        fam = cfg.family()
    except (ValueError, TypeError) as exc:
        raise anchor("model", exc) from None
    try:
        cfg.payment_spec(fam.states)
    except (ValueError, TypeError) as exc:
        raise anchor("payments", exc) from None
    try:
        cfg.discount_curve()
    except ValueError as exc:
        raise anchor("discount", exc) from None
    bad = [st for st in cfg.start.states if not 1 <= st <= fam.states]
    if bad:
        raise anchor("start", f"start states {bad} outside 1..{fam.states}")
    if cfg.start.time >= cfg.engine.horizon:
        raise anchor("start", "start time must be before the horizon")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
