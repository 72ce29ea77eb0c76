"""The four single-period clearing models and the shared result type.

Decision variables per generator ``g``:

* ``p[g]``     scheduled output at the wind forecast, MW
* ``alpha[g]`` share of regular forecast deviations the unit absorbs
* ``beta[g]``  share of extreme deviations (only for the large-deviation models)

Every model minimises the expected production cost for a zero-mean
Gaussian forecast error of spread ``sigma``::

    sum_g c2 * (p^2 + sigma^2 * alpha^2) + c1 * p + c_beta * beta

In the policy algebra, ``omega`` is the wind *shortfall*. A positive value
is met by raising output ``p + alpha * omega``, so the upper limits bind in
deficit scenarios. :mod:`ldtmarket.evaluate` converts signed surplus
samples into this convention.

With ``network=True`` the single balance row becomes one balance per
node, plus DC flow variables. Everything else is unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Optional

from .convexcore import (
    ConvexProgram,
    InfeasibleError,
    NoConvergenceError,
    ProgramBuilder,
    Solution,
    SolveError,
    solve,
)
from .cuttingplane import CutLog, CutProblem, OverloadConstraint, RegionTerm, solve_with_cuts
from .model import CaseError, FractionOfOmegaStar, SystemCase, aggregate_wind
from .probkit import GaussianSpec, normal_quantile, truncated_moments

__all__ = [
    "ModelKind",
    "ClearingResult",
    "sigma_hat",
    "build_cc",
    "build_wcc",
    "derive_omega_star",
    "build_ldtcc",
    "build_ldtwcc",
    "select_omega_eps",
    "clear",
    "scheduled_cost",
]

TIE_BREAK = 1e-9
PROVIDER_TOL = 1e-6


class ModelKind(str, Enum):
    CC = "cc"
    WCC = "wcc"
    LDTCC = "ldt-cc"
    LDTWCC = "ldt-wcc"

    @classmethod
    def parse(cls, value: "str | ModelKind") -> "ModelKind":
        if isinstance(value, ModelKind):
            return value
        key = value.strip().lower().replace("_", "-")
        aliases = {"ldtcc": "ldt-cc", "ldtwcc": "ldt-wcc"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown model {value!r}; choose from cc, wcc, ldt-cc, ldt-wcc") from None

    @property
    def has_beta(self) -> bool:
        return self in (ModelKind.LDTCC, ModelKind.LDTWCC)

    @property
    def uses_cuts(self) -> bool:
        return self in (ModelKind.WCC, ModelKind.LDTWCC)


@dataclass
class ClearingResult:
    model: ModelKind
    p: dict[str, float]
    alpha: dict[str, float]
    beta: Optional[dict[str, float]]
    sigma: float
    sigma_hat: dict[str, float]
    net_load: float
    scheduled_cost: float
    duals: dict[str, float]
    cut_count: int = 0
    omega_star: Optional[float] = None
    omega_eps: Optional[float] = None
    extreme_anchor: Optional[float] = None
    lambda_star: Optional[dict[str, Optional[float]]] = None
    metadata: dict = field(default_factory=dict)
    # Solver artefacts used by the pricing checks; not serialised.
    program: Optional[ConvexProgram] = field(default=None, repr=False, compare=False)
    solution: Optional[Solution] = field(default=None, repr=False, compare=False)
    constraints: tuple[OverloadConstraint, ...] = field(default=(), repr=False, compare=False)
    cut_log: Optional[CutLog] = field(default=None, repr=False, compare=False)

    @property
    def generators(self) -> tuple[str, ...]:
        return tuple(self.p)

    def to_dict(self) -> dict:
        return {
            "model": self.model.value,
            "p": self.p,
            "alpha": self.alpha,
            "beta": self.beta,
            "sigma": self.sigma,
            "sigma_hat": self.sigma_hat,
            "net_load": self.net_load,
            "scheduled_cost": self.scheduled_cost,
            "duals": self.duals,
            "cut_count": self.cut_count,
            "omega_star": self.omega_star,
            "omega_eps": self.omega_eps,
            "extreme_anchor": self.extreme_anchor,
            "lambda_star": self.lambda_star,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ClearingResult":
        kw = dict(doc)
        kw["model"] = ModelKind.parse(kw["model"])
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in kw.items() if k in known})


def sigma_hat(case: SystemCase, sigma: float) -> dict[str, float]:
    """Regular reserve requirement ``quantile(1 - eps) * sigma`` per generator."""
    return {g.id: normal_quantile(1.0 - g.epsilon) * sigma for g in case.generators}


def scheduled_cost(case: SystemCase, sigma: float, p, alpha, beta=None) -> float:
    terms = []
    for g in case.generators:
        terms.append(g.c2 * (p[g.id] ** 2 + sigma**2 * alpha[g.id] ** 2) + g.c1 * p[g.id])
        if beta is not None:
            terms.append(g.c_beta * beta[g.id])
    return math.fsum(terms)


def _sigma(case: SystemCase) -> float:
    return aggregate_wind(case).spec.std


def _pv(gid: str) -> str:
    return f"p[{gid}]"


def _av(gid: str) -> str:
    return f"alpha[{gid}]"


def _bv(gid: str) -> str:
    return f"beta[{gid}]"


def _add_balance(b: ProgramBuilder, case: SystemCase, network: bool) -> list[str]:
    """Energy balance rows; returns their labels."""
    if not network:
        b.eq({_pv(g.id): 1.0 for g in case.generators}, case.net_load, "balance")
        return ["balance"]
    net = case.network
    if net is None:
        raise CaseError("network", "network clearing requested but the case has no network")
    labels = []
    for n in net.nodes:
        b.var(f"theta[{n.id}]")
    for ln in net.lines:
        f = b.var(f"flow[{ln.key}]")
        b.eq({f: 1.0, f"theta[{ln.from_}]": -ln.susceptance, f"theta[{ln.to}]": ln.susceptance}, 0.0,
             f"flow_def[{ln.key}]")
        b.le({f: 1.0}, ln.f_max, f"flow_max[{ln.key}]")
        b.le({f: -1.0}, ln.f_max, f"flow_min[{ln.key}]")
    b.eq({f"theta[{net.nodes[0].id}]": 1.0}, 0.0, "slack_angle")
    for n in net.nodes:
        row: dict[str, float] = {}
        for g in case.generators:
            if g.node == n.id:
                row[_pv(g.id)] = row.get(_pv(g.id), 0.0) + 1.0
        for ln in net.lines:
            if ln.to == n.id:
                row[f"flow[{ln.key}]"] = 1.0
            elif ln.from_ == n.id:
                row[f"flow[{ln.key}]"] = -1.0
        wind = math.fsum(w.forecast for w in case.wind if w.node == n.id)
        label = f"balance_{n.id}"
        b.eq(row, n.demand - wind, label)
        labels.append(label)
    return labels


def _base(case: SystemCase, sigma: float, with_beta: bool, network: bool) -> tuple[ProgramBuilder, list[str]]:
    b = ProgramBuilder()
    for k, g in enumerate(case.generators):
        p = b.var(_pv(g.id), lower=g.p_min, upper=g.p_max)
        a = b.var(_av(g.id), lower=0.0)
        b.quad(p, p, g.c2)
        b.quad(a, a, g.c2 * sigma**2)
        b.lin(p, g.c1)
        b.lin(a, TIE_BREAK * k)
        if with_beta:
            bv = b.var(_bv(g.id), lower=0.0)
            b.lin(bv, g.c_beta + TIE_BREAK * k)
    balance = _add_balance(b, case, network)
    return b, balance


def _add_regular_rows(b: ProgramBuilder, case: SystemCase, shat: Mapping[str, float]) -> None:
    for g in case.generators:
        b.le({_pv(g.id): 1.0, _av(g.id): shat[g.id]}, g.p_max, f"reg_{g.id}")
        if case.options.enforce_min_side:
            b.le({_pv(g.id): -1.0, _av(g.id): shat[g.id]}, -g.p_min, f"reg_min_{g.id}")


def build_cc(case: SystemCase, network: bool = False) -> ConvexProgram:
    """Affine-policy chance-constrained dispatch as a QP."""
    sigma = _sigma(case)
    shat = sigma_hat(case, sigma)
    b, _ = _base(case, sigma, with_beta=False, network=network)
    b.eq({_av(g.id): 1.0 for g in case.generators}, 1.0, "reserve")
    _add_regular_rows(b, case, shat)
    b.metadata.update(model="cc", sigma=sigma)
    return b.build()


def _wcc_constraint(g, sigma: float, side: str) -> OverloadConstraint:
    if side == "max":
        term = RegionTerm({_pv(g.id): 1.0}, -g.p_max, {_av(g.id): sigma})
    else:
        term = RegionTerm({_pv(g.id): -1.0}, g.p_min, {_av(g.id): sigma})
    return OverloadConstraint(f"wcc_{side}_{g.id}", g.id, side, (term,), g.epsilon)


def build_wcc(case: SystemCase, network: bool = False) -> CutProblem:
    """Affine-policy dispatch with expected-overload limits, ready for cutting planes."""
    sigma = _sigma(case)
    b, _ = _base(case, sigma, with_beta=False, network=network)
    b.eq({_av(g.id): 1.0 for g in case.generators}, 1.0, "reserve")
    b.metadata.update(model="wcc", sigma=sigma)
    sides = ("max", "min") if case.options.enforce_min_side else ("max",)
    cons = tuple(_wcc_constraint(g, sigma, s) for g in case.generators for s in sides)
    return CutProblem(b.build(), cons)


def derive_omega_star(case: SystemCase) -> float:
    """Dominant extreme shortfall: total headroom left at the forecast.

    Summing the per-generator extreme rows under unit-sum participations
    and the energy balance leaves ``sum(p_max) - net_load``.
    """
    headroom = math.fsum(g.p_max for g in case.generators) - case.net_load
    if headroom < 0.0:
        raise InfeasibleError(f"capacity short of net load by {-headroom:.6g} MW")
    return headroom


def _check_ldt_bound(case: SystemCase, omega_star: float, sigma: float) -> dict[str, float]:
    """Margin of ``omega_star / sigma`` over each unit's extreme quantile."""
    margins = {g.id: omega_star / sigma - normal_quantile(1.0 - g.epsilon_ext) for g in case.generators}
    worst = min(margins, key=margins.get)
    if margins[worst] < 0.0:
        raise InfeasibleError(
            f"dominant point {omega_star:.6g} MW is inside the extreme-quantile band of {worst} "
            f"(short by {-margins[worst] * sigma:.6g} MW)"
        )
    return margins


def build_ldtcc(case: SystemCase, network: bool = False) -> ConvexProgram:
    """Large-deviation chance-constrained dispatch with the dominant point eliminated."""
    sigma = _sigma(case)
    shat = sigma_hat(case, sigma)
    omega_star = derive_omega_star(case)
    margins = _check_ldt_bound(case, omega_star, sigma)
    b, balance = _base(case, sigma, with_beta=True, network=network)
    b.eq({_av(g.id): 1.0 for g in case.generators}, 1.0, "reserve_reg")
    b.eq({_bv(g.id): 1.0 for g in case.generators}, 1.0, "reserve_ext")
    for g in case.generators:
        b.eq({_pv(g.id): 1.0, _av(g.id): shat[g.id], _bv(g.id): omega_star - shat[g.id]}, g.p_max, f"ext_{g.id}")
    _add_regular_rows(b, case, shat)
    b.metadata.update(model="ldt-cc", sigma=sigma, omega_star=omega_star, ldt_bound_margin=margins)
    # With a common regular requirement the extreme rows are implied by the
    # balance and both unit-sum rows, so one dual direction is free.
    levels = set(round(v, 12) for v in shat.values())
    if len(levels) == 1:
        s = next(iter(shat.values()))
        direction = {f"ext_{g.id}": 1.0 for g in case.generators}
        direction.update({lab: -1.0 for lab in balance})
        direction["reserve_reg"] = -s
        direction["reserve_ext"] = -(omega_star - s)
        b.metadata["dual_null_direction"] = direction
    return b.build()


def select_omega_eps(case: SystemCase, omega_star: float, sigma: float) -> float:
    """Boundary between the regular and extreme pieces of the policy."""
    rule = case.options.omega_eps_rule
    if isinstance(rule, FractionOfOmegaStar):
        return rule.kappa * omega_star
    return max(sigma_hat(case, sigma).values())


def _ldtwcc_constraint(g, spec: GaussianSpec, omega_eps: float, anchor: float, side: str) -> OverloadConstraint:
    m_lo, v_lo = truncated_moments(spec, omega_eps, "below")
    m_hi, v_hi = truncated_moments(spec, omega_eps, "above")
    s_lo, s_hi = math.sqrt(v_lo), math.sqrt(v_hi)
    p, a, bt = _pv(g.id), _av(g.id), _bv(g.id)
    below_mean = {p: 1.0, a: m_lo}
    above_mean = {p: 1.0, a: m_hi, bt: anchor - m_hi}
    const = -g.p_max
    if side == "min":
        below_mean = {k: -v for k, v in below_mean.items()}
        above_mean = {k: -v for k, v in above_mean.items()}
        const = g.p_min
    terms = (
        RegionTerm(below_mean, const, {a: s_lo}),
        RegionTerm(above_mean, const, {a: s_hi, bt: -s_hi}),
    )
    return OverloadConstraint(f"wcc_{side}_{g.id}", g.id, side, terms, g.epsilon)


def build_ldtwcc(case: SystemCase, omega_star: float, omega_eps: float, network: bool = False) -> CutProblem:
    """Piecewise-policy dispatch with expected-overload limits in both regions."""
    if not omega_eps < omega_star:
        raise ValueError(f"region boundary {omega_eps} must lie below the dominant point {omega_star}")
    sigma = _sigma(case)
    spec = GaussianSpec(0.0, sigma)
    anchor = omega_eps if case.options.extreme_anchor == "boundary" else omega_star
    b, _ = _base(case, sigma, with_beta=True, network=network)
    b.eq({_av(g.id): 1.0 for g in case.generators}, 1.0, "reserve_reg")
    b.eq({_bv(g.id): 1.0 for g in case.generators}, 1.0, "reserve_ext")
    b.metadata.update(model="ldt-wcc", sigma=sigma, omega_star=omega_star, omega_eps=omega_eps, anchor=anchor)
    sides = ("max", "min") if case.options.enforce_min_side else ("max",)
    cons = tuple(_ldtwcc_constraint(g, spec, omega_eps, anchor, s) for g in case.generators for s in sides)
    return CutProblem(b.build(), cons)


def _canonical_duals(program: ConvexProgram, sol: Solution) -> Solution:
    """Pick one member of a one-parameter family of optimal duals.

    Moving along the family changes every unit's profit by the same
    multiple of its capacity. The shift is chosen so that the smallest
    extreme-row multiplier is exactly zero. Every multiplier is then
    nonnegative, which makes each unit's profit at least its quadratic
    cost term, and the cheapest unit on its extreme row earns no scarcity
    rent there.
    """
    direction = program.metadata.get("dual_null_direction")
    if not direction:
        return sol
    ext = [lab for lab in direction if lab.startswith("ext_")]
    t = -min(sol.duals_eq[lab] for lab in ext)
    duals_eq = dict(sol.duals_eq)
    for label, d in direction.items():
        duals_eq[label] += t * d
    return replace(sol, duals_eq=duals_eq)


def _raise_for_status(sol: Solution, what: str) -> None:
    if sol.status == "infeasible":
        raise InfeasibleError(f"{what}: infeasible")
    if sol.status in ("iteration_limit", "numerical_error"):
        raise NoConvergenceError(f"{what}: solver stopped with status {sol.status}")
    if sol.status != "optimal":
        raise SolveError(f"{what}: solver status {sol.status}")


def _solve_program(case: SystemCase, program: ConvexProgram, what: str) -> Solution:
    sol = solve(program, tol=min(1e-9, case.options.duality_gap_tol))
    _raise_for_status(sol, what)
    if abs(sol.duality_gap) > case.options.duality_gap_tol:
        raise NoConvergenceError(f"{what}: duality gap {sol.duality_gap:.3g} above tolerance")
    return sol


def _solve_cuts(case: SystemCase, problem: CutProblem, what: str) -> tuple[Solution, CutLog]:
    sol, log = solve_with_cuts(problem, tol=case.options.cut_tolerance, max_iter=case.options.max_cut_iterations)
    if not log.converged:
        raise NoConvergenceError(f"{what}: no convergence after {len(log.iterations)} cut rounds")
    return sol, log


def clear(case: SystemCase, kind: "str | ModelKind", network: bool = False) -> ClearingResult:
    """Build, solve and package one clearing model for ``case``."""
    kind = ModelKind.parse(kind)
    sigma = aggregate_wind(case).spec.std
    shat = sigma_hat(case, sigma)
    what = f"{kind.value} clearing"
    log = None
    cons: tuple[OverloadConstraint, ...] = ()
    omega_star = omega_eps = anchor = None
    if kind is ModelKind.CC:
        program = build_cc(case, network)
        sol = _solve_program(case, program, what)
    elif kind is ModelKind.LDTCC:
        program = build_ldtcc(case, network)
        sol = _solve_program(case, program, what)
        omega_star = program.metadata["omega_star"]
    else:
        if kind is ModelKind.WCC:
            problem = build_wcc(case, network)
        else:
            omega_star = derive_omega_star(case)
            omega_eps = select_omega_eps(case, omega_star, sigma)
            problem = build_ldtwcc(case, omega_star, omega_eps, network)
            anchor = problem.base.metadata["anchor"]
        sol, log = _solve_cuts(case, problem, what)
        program = log.final_program
        cons = problem.constraints

    x = sol.primal
    gids = [g.id for g in case.generators]
    p = {g: x[_pv(g)] for g in gids}
    alpha = {g: x[_av(g)] for g in gids}
    beta = {g: x[_bv(g)] for g in gids} if kind.has_beta else None
    if kind is ModelKind.LDTCC:
        sol = _canonical_duals(program, sol)

    duals = dict(sol.duals_eq)
    duals.update(sol.duals_ineq)
    if log is not None:
        duals.update({f"nl:{k}": v for k, v in log.multipliers.items()})

    lam = None
    if kind is ModelKind.LDTCC:
        lam = {g: (omega_star / (sigma**2 * beta[g]) if beta[g] > PROVIDER_TOL else None) for g in gids}

    meta = {k: v for k, v in program.metadata.items() if k not in ("dual_null_direction",)}
    meta.update(
        status=sol.status,
        duality_gap=sol.duality_gap,
        objective=sol.objective_value,
        network=network,
        case_name=case.name,
    )
    if log is not None:
        meta.update(cut_rounds=len(log.iterations), tangent_resolve=log.tangent_resolve)
    return ClearingResult(
        model=kind,
        p=p,
        alpha=alpha,
        beta=beta,
        sigma=sigma,
        sigma_hat=shat,
        net_load=case.net_load,
        scheduled_cost=scheduled_cost(case, sigma, p, alpha, beta),
        duals=duals,
        cut_count=log.cut_count if log is not None else 0,
        omega_star=omega_star,
        omega_eps=omega_eps,
        extreme_anchor=anchor,
        lambda_star=lam,
        metadata=meta,
        program=program,
        solution=sol,
        constraints=cons,
        cut_log=log,
    )
