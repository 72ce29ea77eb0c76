"""Outer approximation of expected-overload constraints by tangent cuts.

The constraints handled here have the form::

    sum_r expected_overload(m_r . x + c_r, |s_r . x|) <= rhs

Each region term ``r`` is a Gaussian whose mean and spread are affine in
the decision vector. ``expected_overload`` is jointly convex and
nondecreasing in the spread, and ``|s . x|`` is convex, so the whole left
side is convex. Every tangent plane is therefore a valid cut.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .convexcore import ConvexProgram, InfeasibleError, NoConvergenceError, Row, Solution, SolveError, solve
from .probkit import expected_overload, expected_overload_grad

__all__ = [
    "RegionTerm",
    "OverloadConstraint",
    "CutProblem",
    "CutLog",
    "DegenerateCutError",
    "make_cut",
    "solve_with_cuts",
]


class DegenerateCutError(SolveError):
    """A violated constraint has a zero gradient, so no separating cut exists."""


@dataclass(frozen=True)
class RegionTerm:
    mean: Mapping[str, float]
    mean_const: float
    spread: Mapping[str, float]

    def moments(self, x: Mapping[str, float]) -> tuple[float, float]:
        m = math.fsum(c * x[v] for v, c in self.mean.items()) + self.mean_const
        s = math.fsum(c * x[v] for v, c in self.spread.items())
        return m, s


@dataclass(frozen=True)
class OverloadConstraint:
    """Expected limit overload of one generator on one side, bounded by ``rhs``."""

    label: str
    generator: str
    side: str
    terms: tuple[RegionTerm, ...]
    rhs: float

    @property
    def variables(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for t in self.terms:
            seen.update(dict.fromkeys(t.mean))
            seen.update(dict.fromkeys(t.spread))
        return tuple(seen)

    def value(self, x: Mapping[str, float]) -> float:
        total = []
        for t in self.terms:
            m, s = t.moments(x)
            total.append(expected_overload(m, abs(s)))
        return math.fsum(total)

    def gradient(self, x: Mapping[str, float]) -> dict[str, float]:
        g = dict.fromkeys(self.variables, 0.0)
        for t in self.terms:
            m, s = t.moments(x)
            d_m, d_s = expected_overload_grad(m, abs(s))
            sign = math.copysign(1.0, s) if s != 0.0 else 0.0
            for v, c in t.mean.items():
                g[v] += d_m * c
            for v, c in t.spread.items():
                g[v] += d_s * sign * c
        return g


@dataclass(frozen=True)
class CutProblem:
    base: ConvexProgram
    constraints: tuple[OverloadConstraint, ...]


@dataclass
class CutLog:
    iterations: list[dict] = field(default_factory=list)
    converged: bool = False
    multipliers: dict[str, float] = field(default_factory=dict)
    tangent_resolve: bool = False
    final_program: Optional[ConvexProgram] = field(default=None, repr=False)

    @property
    def cut_count(self) -> int:
        return sum(len(it["cuts"]) for it in self.iterations)

    def to_json(self) -> str:
        doc = {
            "iterations": self.iterations,
            "converged": self.converged,
            "multipliers": self.multipliers,
            "tangent_resolve": self.tangent_resolve,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def make_cut(constraint: OverloadConstraint, point: Mapping[str, float], label: str,
             require_violation: bool = True) -> Row:
    """Tangent row ``g(x*) + grad g(x*) . (x - x*) <= rhs`` at ``point``."""
    g0 = constraint.value(point)
    if require_violation and g0 <= constraint.rhs:
        raise ValueError(f"{constraint.label} is not violated at the given point")
    grad = constraint.gradient(point)
    if all(c == 0.0 for c in grad.values()):
        raise DegenerateCutError(f"{constraint.label}: zero gradient at a violated point")
    rhs = constraint.rhs - g0 + math.fsum(c * point[v] for v, c in grad.items())
    return Row({v: c for v, c in grad.items() if c != 0.0}, rhs, label)


def _check(sol: Solution) -> None:
    if sol.status == "infeasible":
        raise InfeasibleError("relaxation is infeasible")
    if sol.status in ("iteration_limit", "numerical_error"):
        raise NoConvergenceError(f"relaxation solve ended with status {sol.status}")
    if sol.status != "optimal":
        raise SolveError(f"relaxation solve ended with status {sol.status}")


def solve_with_cuts(
    problem: CutProblem,
    tol: float = 1e-7,
    max_iter: int = 100,
    solver_tol: float = 1e-10,
) -> tuple[Solution, CutLog]:
    """Cutting-plane loop; adds a cut for every violated constraint per round.

    After convergence the relaxation is re-solved with only the tangent
    planes at the final point, one per near-active constraint. The dual of
    each tangent row is then the multiplier of its nonlinear constraint,
    which is what the price formulas need. If that re-solve drifts off the
    feasible set, the last relaxation is kept and each multiplier is the
    sum of the duals of that constraint's cuts.
    """
    log = CutLog()
    program = problem.base
    owner: dict[str, str] = {}
    sol = solve(program, tol=solver_tol)
    _check(sol)
    for it in range(max_iter):
        x = sol.primal
        values = {c.label: c.value(x) for c in problem.constraints}
        violated = [c for c in problem.constraints if values[c.label] > c.rhs + tol]
        entry = {
            "iteration": it,
            "objective": sol.objective_value,
            "violations": [[c.label, values[c.label]] for c in violated],
            "cuts": [],
        }
        log.iterations.append(entry)
        if not violated:
            log.converged = True
            break
        rows = []
        for c in violated:
            label = f"cut:{c.label}#{it}"
            rows.append(make_cut(c, x, label))
            owner[label] = c.label
            entry["cuts"].append(label)
        program = program.with_rows(ineq=rows)
        sol = solve(program, tol=solver_tol)
        _check(sol)

    log.final_program = program
    for c in problem.constraints:
        log.multipliers[c.label] = math.fsum(d for k, d in sol.duals_ineq.items() if owner.get(k) == c.label)
    if not log.converged:
        return sol, log

    x = sol.primal
    active = []
    for c in problem.constraints:
        near = c.value(x) >= c.rhs - 10.0 * tol
        if near or log.multipliers[c.label] > 1e-12:
            active.append(c)
    if not active:
        return sol, log
    tangents = [make_cut(c, x, f"tangent:{c.label}", require_violation=False) for c in active]
    polished_program = problem.base.with_rows(ineq=tangents)
    polished = solve(polished_program, tol=solver_tol)
    if polished.status != "optimal":
        return sol, log
    ok = all(c.value(polished.primal) <= c.rhs + tol for c in problem.constraints)
    drift = max(abs(polished.primal[v] - x[v]) for v in x)
    if not ok or drift > 1e-5 * (1.0 + max(abs(v) for v in x.values())):
        return sol, log
    log.tangent_resolve = True
    log.final_program = polished_program
    log.multipliers = {c.label: 0.0 for c in problem.constraints}
    for c in active:
        log.multipliers[c.label] = polished.duals_ineq[f"tangent:{c.label}"]
    return polished, log
