"""Market case data model and its JSON serialisation.

A case file is one JSON document::

    {
      "name": "...",                      # optional
      "generators": [{"id", "p_min", "p_max", "c2", "c1", "c_beta",
                      "epsilon", "epsilon_ext", "node"}, ...],
      "wind": [{"id", "forecast", "std", "node"}, ...],
      "network": {"nodes": [{"id", "demand"}],
                  "lines": [{"from", "to", "susceptance", "f_max"}]},   # optional
      "demand": 270.0,                    # required without a network
      "voll": 9000.0,
      "options": {...}                    # see ModelOptions
    }

Units: MW, $/MWh, $/MWh^2, $ per unit of extreme participation. Line
susceptance is in MW per radian, so ``flow = susceptance * angle_diff``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .probkit import GaussianSpec

__all__ = [
    "CaseError",
    "Generator",
    "WindSpec",
    "Node",
    "Line",
    "NetworkSpec",
    "RegularBoundary",
    "FractionOfOmegaStar",
    "ModelOptions",
    "SystemCase",
    "load_case",
    "dump_case",
    "case_hash",
    "AggregateWind",
    "aggregate_wind",
    "bundled_case_path",
]


class CaseError(ValueError):
    """A case document failed validation; ``field`` names the offending path."""

    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)


class Generator(_Frozen):
    id: str
    p_min: float = 0.0
    p_max: float
    c2: float = Field(ge=0.0)
    c1: float
    c_beta: float = 0.0
    epsilon: float = Field(gt=0.0, lt=1.0)
    epsilon_ext: float = Field(gt=0.0, lt=1.0)
    node: Optional[str] = None

    @model_validator(mode="after")
    def _check(self) -> "Generator":
        if self.p_min > self.p_max:
            raise ValueError(f"p_min {self.p_min} exceeds p_max {self.p_max}")
        if not self.epsilon_ext < self.epsilon:
            raise ValueError("epsilon_ext must be smaller than epsilon")
        return self


class WindSpec(_Frozen):
    id: str = "wind"
    forecast: float = Field(ge=0.0)
    std: float = Field(ge=0.0)
    node: Optional[str] = None


class Node(_Frozen):
    id: str
    demand: float = 0.0


class Line(_Frozen):
    from_: str = Field(alias="from")
    to: str
    susceptance: float = Field(gt=0.0)
    f_max: float = Field(gt=0.0)

    @property
    def key(self) -> str:
        return f"{self.from_}-{self.to}"


class NetworkSpec(_Frozen):
    nodes: tuple[Node, ...]
    lines: tuple[Line, ...] = ()

    @model_validator(mode="after")
    def _check(self) -> "NetworkSpec":
        ids = [n.id for n in self.nodes]
        if not ids:
            raise ValueError("network needs at least one node")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node id")
        index = {k: i for i, k in enumerate(ids)}
        seen = set()
        for ln in self.lines:
            for end in (ln.from_, ln.to):
                if end not in index:
                    raise ValueError(f"line {ln.key} references unknown node {end!r}")
            if ln.from_ == ln.to:
                raise ValueError(f"line {ln.key} is a self loop")
            key = frozenset((ln.from_, ln.to))
            if key in seen:
                raise ValueError(f"duplicate line {ln.key}")
            seen.add(key)
        if len(ids) > 1:
            rows = [index[ln.from_] for ln in self.lines]
            cols = [index[ln.to] for ln in self.lines]
            adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(ids),) * 2)
            n_comp, _ = connected_components(adj, directed=False)
            if n_comp != 1:
                raise ValueError("network is not connected")
        return self

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes)


class RegularBoundary(_Frozen):
    """Split the extreme region at the regular coverage boundary."""

    kind: Literal["regular_boundary"] = "regular_boundary"


class FractionOfOmegaStar(_Frozen):
    """Split the extreme region at ``kappa`` times the dominant point."""

    kind: Literal["fraction_of_omega_star"] = "fraction_of_omega_star"
    kappa: float = Field(gt=0.0, lt=1.0)


OmegaEpsRule = Annotated[Union[RegularBoundary, FractionOfOmegaStar], Field(discriminator="kind")]


class ModelOptions(_Frozen):
    """Solver and modelling switches shared by every formulation.

    ``extreme_anchor`` selects the constant of the above-region policy
    ``p + beta * anchor + (alpha - beta) * omega``. With ``boundary`` the
    anchor is the region split point itself, which keeps the policy
    continuous there. ``omega_star`` anchors at the dominant point instead.
    """

    enforce_min_side: bool = False
    omega_eps_rule: OmegaEpsRule = RegularBoundary()
    extreme_anchor: Literal["boundary", "omega_star"] = "boundary"
    cut_tolerance: float = Field(default=1e-7, gt=0.0)
    max_cut_iterations: int = Field(default=100, ge=1)
    duality_gap_tol: float = Field(default=1e-6, gt=0.0)


class SystemCase(_Frozen):
    name: str = ""
    generators: tuple[Generator, ...]
    wind: tuple[WindSpec, ...] = ()
    network: Optional[NetworkSpec] = None
    total_demand: Optional[float] = Field(default=None, alias="demand")
    voll: float = Field(default=9000.0, ge=0.0)
    options: ModelOptions = ModelOptions()

    @model_validator(mode="after")
    def _check(self) -> "SystemCase":
        if not self.generators:
            raise ValueError("at least one generator is required")
        gids = [g.id for g in self.generators]
        if len(set(gids)) != len(gids):
            raise ValueError("duplicate generator id")
        if self.network is None:
            if self.total_demand is None:
                raise ValueError("demand is required when no network is given")
            return self
        nodes = set(self.network.node_ids)
        for g in self.generators:
            if g.node not in nodes:
                raise ValueError(f"generator {g.id} references unknown node {g.node!r}")
        for w in self.wind:
            if w.node not in nodes:
                raise ValueError(f"wind {w.id} references unknown node {w.node!r}")
        nodal = math.fsum(n.demand for n in self.network.nodes)
        if self.total_demand is None:
            object.__setattr__(self, "total_demand", nodal)
        elif abs(nodal - self.total_demand) > 1e-9 * max(1.0, abs(nodal)):
            raise ValueError(f"nodal demand {nodal} disagrees with demand {self.total_demand}")
        return self

    @property
    def demand(self) -> float:
        return float(self.total_demand)

    @property
    def wind_forecast(self) -> float:
        return math.fsum(w.forecast for w in self.wind)

    @property
    def net_load(self) -> float:
        """Demand left for conventional generation at the wind forecast."""
        return self.demand - self.wind_forecast

    def generator(self, gid: str) -> Generator:
        for g in self.generators:
            if g.id == gid:
                return g
        raise KeyError(gid)

    def with_options(self, **changes) -> "SystemCase":
        return self.model_copy(update={"options": self.options.model_copy(update=changes)})


def _to_case_error(exc: ValidationError) -> CaseError:
    err = exc.errors()[0]
    field = ".".join(str(p) for p in err["loc"]) or "<root>"
    return CaseError(field, err["msg"])


def load_case(source: Union[str, Path, bytes, dict]) -> SystemCase:
    """Parse and validate a case from a path, raw JSON bytes, or a dict."""
    if isinstance(source, dict):
        doc = source
    else:
        if isinstance(source, (bytes, bytearray)):
            raw = bytes(source)
        else:
            try:
                raw = Path(source).read_bytes()
            except OSError as exc:
                raise CaseError("<file>", str(exc)) from exc
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CaseError("<document>", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CaseError("<root>", "case document must be a JSON object")
    try:
        return SystemCase.model_validate(doc)
    except ValidationError as exc:
        raise _to_case_error(exc) from None


def dump_case(case: SystemCase) -> dict:
    """Plain-dict form that :func:`load_case` accepts back unchanged."""
    return case.model_dump(mode="json", by_alias=True, exclude_none=True)


def case_hash(case: SystemCase) -> str:
    blob = json.dumps(dump_case(case), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class AggregateWind:
    """Total forecast and zero-mean aggregate forecast-error spread."""

    forecast: float
    std: float

    @property
    def spec(self) -> GaussianSpec:
        if self.std <= 0.0:
            raise CaseError("wind", "no uncertainty to balance (aggregate std is zero)")
        return GaussianSpec(0.0, self.std)


def aggregate_wind(case: SystemCase) -> AggregateWind:
    """Aggregate the wind farms of ``case``; farm errors are independent."""
    std = math.sqrt(math.fsum(w.std**2 for w in case.wind))
    return AggregateWind(case.wind_forecast, std)


def bundled_case_path(name: str) -> Path:
    """Path of a case shipped with the package, e.g. ``illustrative``."""
    stem = name[:-5] if name.endswith(".json") else name
    path = Path(__file__).with_name("data") / f"{stem}.json"
    if not path.exists():
        raise FileNotFoundError(path)
    return path
