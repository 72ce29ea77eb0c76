"""Solver-neutral convex programs (QP with second-order cones) and their duals.

Programs are built with :class:`ProgramBuilder` and frozen into a
:class:`ConvexProgram`. :func:`solve` hands them to the Clarabel
interior-point solver and maps the result back to named primal values and
labelled multipliers.

Sign convention for multipliers, fixed for the whole package::

    L(x) = f(x) + sum_i mu_i * (g_i(x) - b_i) + sum_j lam_j * (h_j(x) - c_j)

with ``mu_i >= 0`` for every ``g_i(x) <= b_i`` row and ``lam_j`` free.
Variable bounds are exposed as inequality rows labelled ``lb:<name>`` and
``ub:<name>``. A cone block ``||scale*(R x + r)|| <= B x + b`` contributes
``-(B^T z0 + scale R^T z1)`` to stationarity, with ``(z0, z1)`` in the cone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Sequence

import clarabel
import numpy as np
import scipy.sparse as sp

__all__ = [
    "Variable",
    "Row",
    "SocBlock",
    "ConvexProgram",
    "ProgramBuilder",
    "Solution",
    "SolveError",
    "InfeasibleError",
    "NoConvergenceError",
    "solve",
    "kkt_residuals",
    "lagrangian_gradient",
    "dump_program",
]

INF = math.inf


class SolveError(RuntimeError):
    """A program could not be solved to optimality."""


class InfeasibleError(SolveError):
    pass


class NoConvergenceError(SolveError):
    pass


@dataclass(frozen=True)
class Variable:
    name: str
    lower: float = -INF
    upper: float = INF


@dataclass(frozen=True)
class Row:
    """Linear form ``sum(coefs[v] * v)`` compared against ``rhs``."""

    coefs: Mapping[str, float]
    rhs: float
    label: str

    def value(self, x: Mapping[str, float]) -> float:
        return math.fsum(c * x[v] for v, c in self.coefs.items())


@dataclass(frozen=True)
class SocBlock:
    """Cone row ``|| scale * (rows . x + offsets) ||_2 <= bound . x + bound_const``."""

    label: str
    scale: float
    rows: tuple[Mapping[str, float], ...]
    offsets: tuple[float, ...]
    bound: Mapping[str, float]
    bound_const: float = 0.0

    def parts(self, x: Mapping[str, float]) -> tuple[float, np.ndarray]:
        t = math.fsum(c * x[v] for v, c in self.bound.items()) + self.bound_const
        u = np.array(
            [self.scale * (math.fsum(c * x[v] for v, c in r.items()) + o) for r, o in zip(self.rows, self.offsets)]
        )
        return t, u


@dataclass(frozen=True)
class ConvexProgram:
    """min sum q_ij x_i x_j + sum c_i x_i + constant over the rows below."""

    variables: tuple[Variable, ...]
    quadratic: Mapping[tuple[str, str], float]
    linear: Mapping[str, float]
    constant: float
    eq_constraints: tuple[Row, ...]
    ineq_constraints: tuple[Row, ...]
    soc_blocks: tuple[SocBlock, ...] = ()
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("duplicate variable name")
        known = set(names)
        labels = [r.label for r in self.eq_constraints + self.ineq_constraints] + [b.label for b in self.soc_blocks]
        labels += [f"lb:{v.name}" for v in self.variables if v.lower > -INF]
        labels += [f"ub:{v.name}" for v in self.variables if v.upper < INF]
        if len(set(labels)) != len(labels):
            dup = sorted({x for x in labels if labels.count(x) > 1})
            raise ValueError(f"duplicate constraint labels: {dup[:5]}")
        for r in self.eq_constraints + self.ineq_constraints:
            if not set(r.coefs) <= known:
                raise ValueError(f"row {r.label} uses unknown variables {set(r.coefs) - known}")
        for (a, b), q in self.quadratic.items():
            if a not in known or b not in known:
                raise ValueError(f"quadratic term ({a}, {b}) uses an unknown variable")
            if a == b and q < 0.0:
                raise ValueError(f"negative diagonal quadratic coefficient on {a}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    def with_rows(self, ineq: Iterable[Row] = (), eq: Iterable[Row] = ()) -> "ConvexProgram":
        return replace(
            self,
            ineq_constraints=self.ineq_constraints + tuple(ineq),
            eq_constraints=self.eq_constraints + tuple(eq),
        )

    def objective(self, x: Mapping[str, float]) -> float:
        terms = [q * x[a] * x[b] for (a, b), q in self.quadratic.items()]
        terms += [c * x[v] for v, c in self.linear.items()]
        terms.append(self.constant)
        return math.fsum(terms)

    def gradient(self, x: Mapping[str, float]) -> dict[str, float]:
        g = {v: self.linear.get(v, 0.0) for v in self.names}
        for (a, b), q in self.quadratic.items():
            g[a] += q * x[b]
            g[b] += q * x[a]
        return g

    def bound_rows(self) -> tuple[Row, ...]:
        rows = []
        for v in self.variables:
            if v.lower > -INF:
                rows.append(Row({v.name: -1.0}, -v.lower, f"lb:{v.name}"))
            if v.upper < INF:
                rows.append(Row({v.name: 1.0}, v.upper, f"ub:{v.name}"))
        return tuple(rows)


class ProgramBuilder:
    """Mutable helper that accumulates variables, objective terms and rows."""

    def __init__(self) -> None:
        self._vars: dict[str, Variable] = {}
        self._quad: dict[tuple[str, str], float] = {}
        self._lin: dict[str, float] = {}
        self._const = 0.0
        self._eq: list[Row] = []
        self._ineq: list[Row] = []
        self._soc: list[SocBlock] = []
        self.metadata: dict[str, object] = {}

    def var(self, name: str, lower: float = -INF, upper: float = INF) -> str:
        if name in self._vars:
            raise ValueError(f"variable {name} already defined")
        self._vars[name] = Variable(name, lower, upper)
        return name

    def quad(self, a: str, b: str, coef: float) -> None:
        key = (a, b)
        self._quad[key] = self._quad.get(key, 0.0) + coef

    def lin(self, v: str, coef: float) -> None:
        self._lin[v] = self._lin.get(v, 0.0) + coef

    def const(self, value: float) -> None:
        self._const += value

    def eq(self, coefs: Mapping[str, float], rhs: float, label: str) -> None:
        self._eq.append(Row(MappingProxyType(dict(coefs)), float(rhs), label))

    def le(self, coefs: Mapping[str, float], rhs: float, label: str) -> None:
        self._ineq.append(Row(MappingProxyType(dict(coefs)), float(rhs), label))

    def ge(self, coefs: Mapping[str, float], rhs: float, label: str) -> None:
        self.le({v: -c for v, c in coefs.items()}, -rhs, label)

    def soc(
        self,
        label: str,
        scale: float,
        rows: Sequence[Mapping[str, float]],
        bound: Mapping[str, float],
        bound_const: float = 0.0,
        offsets: Optional[Sequence[float]] = None,
    ) -> None:
        offs = tuple(offsets) if offsets is not None else (0.0,) * len(rows)
        self._soc.append(
            SocBlock(label, float(scale), tuple(MappingProxyType(dict(r)) for r in rows), offs,
                     MappingProxyType(dict(bound)), float(bound_const))
        )

    def build(self) -> ConvexProgram:
        return ConvexProgram(
            variables=tuple(self._vars.values()),
            quadratic=MappingProxyType(dict(self._quad)),
            linear=MappingProxyType(dict(self._lin)),
            constant=self._const,
            eq_constraints=tuple(self._eq),
            ineq_constraints=tuple(self._ineq),
            soc_blocks=tuple(self._soc),
            metadata=MappingProxyType(dict(self.metadata)),
        )


@dataclass(frozen=True)
class Solution:
    status: str  # optimal | infeasible | unbounded | iteration_limit | numerical_error
    primal: Mapping[str, float]
    duals_eq: Mapping[str, float]
    duals_ineq: Mapping[str, float]
    duals_soc: Mapping[str, np.ndarray]
    objective_value: float
    dual_objective: float
    duality_gap: float
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def dual(self, label: str) -> float:
        if label in self.duals_eq:
            return self.duals_eq[label]
        return self.duals_ineq[label]


_STATUS = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
    "MaxIterations": "iteration_limit",
    "MaxTime": "iteration_limit",
}


def _rows_matrix(rows: Sequence[Mapping[str, float]], index: Mapping[str, int], n: int) -> sp.csr_matrix:
    data, ri, ci = [], [], []
    for i, coefs in enumerate(rows):
        for v, c in coefs.items():
            if c != 0.0:
                ri.append(i)
                ci.append(index[v])
                data.append(c)
    return sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n))


def solve(program: ConvexProgram, tol: float = 1e-9, max_iter: int = 200) -> Solution:
    """Solve ``program`` with Clarabel and return labelled primal and dual values."""
    names = program.names
    n = len(names)
    index = {v: i for i, v in enumerate(names)}

    pi, pj, pv = [], [], []
    for (a, b), q in program.quadratic.items():
        i, j = index[a], index[b]
        if i == j:
            pi.append(i), pj.append(i), pv.append(2.0 * q)
        else:
            lo, hi = min(i, j), max(i, j)
            pi.append(lo), pj.append(hi), pv.append(q)
    P = sp.csc_matrix((pv, (pi, pj)), shape=(n, n))
    P.sum_duplicates()
    q = np.zeros(n)
    for v, c in program.linear.items():
        q[index[v]] += c

    eq = program.eq_constraints
    ineq = program.ineq_constraints + program.bound_rows()
    blocks, b_parts, cones = [], [], []
    if eq:
        blocks.append(_rows_matrix([r.coefs for r in eq], index, n))
        b_parts.append(np.array([r.rhs for r in eq]))
        cones.append(clarabel.ZeroConeT(len(eq)))
    if ineq:
        blocks.append(_rows_matrix([r.coefs for r in ineq], index, n))
        b_parts.append(np.array([r.rhs for r in ineq]))
        cones.append(clarabel.NonnegativeConeT(len(ineq)))
    for blk in program.soc_blocks:
        rows = [blk.bound] + [{v: blk.scale * c for v, c in r.items()} for r in blk.rows]
        blocks.append(-_rows_matrix(rows, index, n))
        b_parts.append(np.array([blk.bound_const] + [blk.scale * o for o in blk.offsets]))
        cones.append(clarabel.SecondOrderConeT(len(rows)))
    if blocks:
        A = sp.vstack(blocks, format="csc")
        b = np.concatenate(b_parts)
    else:
        A = sp.csc_matrix((0, n))
        b = np.zeros(0)

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.presolve_enable = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.tol_ktratio = 1e-7
    result = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()

    status = _STATUS.get(str(result.status), "numerical_error")
    x = np.asarray(result.x, dtype=float)
    z = np.asarray(result.z, dtype=float)
    primal = {v: float(x[i]) for v, i in index.items()}
    k = 0
    duals_eq = {}
    for r in eq:
        duals_eq[r.label] = float(z[k])
        k += 1
    duals_ineq = {}
    for r in ineq:
        duals_ineq[r.label] = float(z[k])
        k += 1
    duals_soc = {}
    for blk in program.soc_blocks:
        m = 1 + len(blk.rows)
        duals_soc[blk.label] = z[k : k + m].copy()
        k += m

    obj = program.objective(primal)
    dual_obj = float(-0.5 * x @ (P @ x + P.T @ x - P.diagonal() * x) - b @ z) + program.constant
    gap = (obj - dual_obj) / (1.0 + abs(obj))
    return Solution(
        status=status,
        primal=MappingProxyType(primal),
        duals_eq=MappingProxyType(duals_eq),
        duals_ineq=MappingProxyType(duals_ineq),
        duals_soc=MappingProxyType(duals_soc),
        objective_value=obj,
        dual_objective=dual_obj,
        duality_gap=gap,
        iterations=int(result.iterations),
    )


def lagrangian_gradient(
    program: ConvexProgram, solution: Solution, skip: Iterable[str] = ()
) -> dict[str, float]:
    """Gradient of the Lagrangian in each variable, leaving out the rows in ``skip``.

    With every row included this is the stationarity residual. Leaving out
    one equality row recovers that row's multiplier, with its sign flipped,
    at each variable the row touches with a unit coefficient.
    """
    x = solution.primal
    skip = frozenset(skip)
    grad = program.gradient(x)
    for r in program.eq_constraints:
        if r.label in skip:
            continue
        lam = solution.duals_eq[r.label]
        for v, c in r.coefs.items():
            grad[v] += lam * c
    for r in program.ineq_constraints + program.bound_rows():
        if r.label in skip:
            continue
        mu = solution.duals_ineq[r.label]
        for v, c in r.coefs.items():
            grad[v] += mu * c
    for blk in program.soc_blocks:
        if blk.label in skip:
            continue
        zz = solution.duals_soc[blk.label]
        for v, c in blk.bound.items():
            grad[v] -= zz[0] * c
        for zi, row in zip(zz[1:], blk.rows):
            for v, c in row.items():
                grad[v] -= blk.scale * zi * c
    return grad


def kkt_residuals(program: ConvexProgram, solution: Solution) -> dict[str, float]:
    """Max-norm residual of each KKT block of ``program`` at ``solution``."""
    x = solution.primal
    grad = lagrangian_gradient(program, solution)
    primal_res = [0.0]
    dual_res = [0.0]
    comp_res = [0.0]
    for r in program.eq_constraints:
        primal_res.append(abs(r.value(x) - r.rhs))
    for r in program.ineq_constraints + program.bound_rows():
        mu = solution.duals_ineq[r.label]
        slack = r.value(x) - r.rhs
        primal_res.append(max(slack, 0.0))
        dual_res.append(max(-mu, 0.0))
        comp_res.append(abs(mu * slack))
    for blk in program.soc_blocks:
        zz = solution.duals_soc[blk.label]
        t, u = blk.parts(x)
        primal_res.append(max(float(np.linalg.norm(u)) - t, 0.0))
        dual_res.append(max(float(np.linalg.norm(zz[1:])) - zz[0], 0.0))
        comp_res.append(abs(zz[0] * t + float(zz[1:] @ u)))
    return {
        "stationarity": max(abs(g) for g in grad.values()) if grad else 0.0,
        "primal": max(primal_res),
        "dual": max(dual_res),
        "complementarity": max(comp_res),
    }


def _fmt_form(coefs: Mapping[str, float]) -> str:
    parts = [f"{c:+.12g} {v}" for v, c in sorted(coefs.items())]
    return " ".join(parts) if parts else "0"


def dump_program(program: ConvexProgram) -> str:
    """Deterministic plain-text rendering, one row per line, for diffing."""
    out = ["minimize"]
    for (a, b), q in sorted(program.quadratic.items()):
        out.append(f"  {q:+.12g} {a}*{b}")
    for v, c in sorted(program.linear.items()):
        out.append(f"  {c:+.12g} {v}")
    out.append(f"  {program.constant:+.12g}")
    out.append("variables")
    for v in program.variables:
        out.append(f"  {v.name} in [{v.lower:.12g}, {v.upper:.12g}]")
    out.append("equalities")
    for r in program.eq_constraints:
        out.append(f"  {r.label}: {_fmt_form(r.coefs)} == {r.rhs:.12g}")
    out.append("inequalities")
    for r in program.ineq_constraints:
        out.append(f"  {r.label}: {_fmt_form(r.coefs)} <= {r.rhs:.12g}")
    if program.soc_blocks:
        out.append("cones")
        for blk in program.soc_blocks:
            rows = "; ".join(f"{_fmt_form(r)} {o:+.12g}" for r, o in zip(blk.rows, blk.offsets))
            out.append(f"  {blk.label}: ||{blk.scale:.12g} * [{rows}]|| <= {_fmt_form(blk.bound)} {blk.bound_const:+.12g}")
    return "\n".join(out) + "\n"
