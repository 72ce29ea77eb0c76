"""DC-network clearing: system-wide reserves with nodal prices, and locational reserves.

Flow convention: ``flow[j-k] = susceptance * (theta[j] - theta[k])`` is
positive from ``j`` to ``k``. The nodal balance is::

    sum(p at i) + inflow(i) - outflow(i) = demand(i) - wind_forecast(i)

The first listed node is the angle reference. Reserve deliverability
after activation is not checked; flow limits apply to the scheduled
operating point only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .convexcore import ConvexProgram, ProgramBuilder, Solution
from .formulations import (
    PROVIDER_TOL,
    ClearingResult,
    ModelKind,
    _add_balance,
    _canonical_duals,
    _check_ldt_bound,
    _solve_program,
    build_ldtcc,
    clear,
    derive_omega_star,
)
from .model import CaseError, SystemCase, aggregate_wind
from .probkit import normal_quantile

__all__ = [
    "NetworkClearingResult",
    "build_network_ldtcc",
    "build_locational_ldtcc",
    "extract_lmps",
    "clear_network",
    "clear_locational",
    "wind_nodes",
]


@dataclass
class NetworkClearingResult(ClearingResult):
    lmp: dict[str, float] = field(default_factory=dict)
    flows: dict[str, float] = field(default_factory=dict)
    angles: dict[str, float] = field(default_factory=dict)
    congestion_duals: dict[str, tuple[float, float]] = field(default_factory=dict)
    A: Optional[dict[str, dict[str, float]]] = None
    B: Optional[dict[str, dict[str, float]]] = None
    omega_star_nodal: Optional[dict[str, float]] = None

    def to_dict(self) -> dict:
        doc = super().to_dict()
        doc.update(
            lmp=self.lmp,
            flows=self.flows,
            angles=self.angles,
            congestion_duals={k: list(v) for k, v in self.congestion_duals.items()},
            A=self.A,
            B=self.B,
            omega_star_nodal=self.omega_star_nodal,
        )
        return doc


def _require_network(case: SystemCase) -> None:
    if case.network is None:
        raise CaseError("network", "case has no network")


def build_network_ldtcc(case: SystemCase) -> ConvexProgram:
    """Large-deviation dispatch with one balance per node and DC line limits."""
    _require_network(case)
    return build_ldtcc(case, network=True)


def wind_nodes(case: SystemCase) -> dict[str, float]:
    """Aggregate forecast-error spread per node that hosts uncertain wind."""
    _require_network(case)
    var: dict[str, float] = {}
    for w in case.wind:
        if w.std > 0.0:
            var[w.node] = var.get(w.node, 0.0) + w.std**2
    return {n: math.sqrt(v) for n, v in var.items()}


def _nodal_dominant_points(omega_star: float, sig: Mapping[str, float]) -> dict[str, float]:
    # Most likely split of an aggregate shortfall across independent nodes:
    # minimise sum(w_i^2 / 2 s_i^2) subject to sum(w_i) = omega_star.
    total = math.fsum(s * s for s in sig.values())
    return {i: omega_star * s * s / total for i, s in sig.items()}


def build_locational_ldtcc(case: SystemCase) -> ConvexProgram:
    """Large-deviation dispatch with separate reserve shares for each wind node.

    ``A[g][i]`` and ``B[g][i]`` are the regular and extreme shares of unit
    ``g`` in the deviations at wind node ``i``. The regular limit is a cone
    row ``q_g * ||sigma o A_g|| <= p_max - p``.
    """
    sig = wind_nodes(case)
    if not sig:
        raise CaseError("wind", "no uncertainty to balance (no wind node with positive std)")
    nodes = list(sig)
    sigma = aggregate_wind(case).spec.std
    omega_star = derive_omega_star(case)
    _check_ldt_bound(case, omega_star, sigma)
    nodal = _nodal_dominant_points(omega_star, sig)
    b = ProgramBuilder()
    for k, g in enumerate(case.generators):
        p = b.var(f"p[{g.id}]", lower=g.p_min, upper=g.p_max)
        b.quad(p, p, g.c2)
        b.lin(p, g.c1)
        for i in nodes:
            a = b.var(f"A[{g.id},{i}]", lower=0.0)
            bb = b.var(f"B[{g.id},{i}]", lower=0.0)
            b.quad(a, a, g.c2 * sig[i] ** 2)
            b.lin(a, 1e-9 * k)
            b.lin(bb, g.c_beta + 1e-9 * k)
    balance = _add_balance(b, case, network=True)
    for i in nodes:
        b.eq({f"A[{g.id},{i}]": 1.0 for g in case.generators}, 1.0, f"reserve_reg_{i}")
        b.eq({f"B[{g.id},{i}]": 1.0 for g in case.generators}, 1.0, f"reserve_ext_{i}")
    q = {g.id: normal_quantile(1.0 - g.epsilon) for g in case.generators}
    for g in case.generators:
        b.soc(f"reg_{g.id}", q[g.id], [{f"A[{g.id},{i}]": sig[i]} for i in nodes], {f"p[{g.id}]": -1.0}, g.p_max)
        row = {f"p[{g.id}]": 1.0}
        for i in nodes:
            shat = q[g.id] * sig[i]
            row[f"A[{g.id},{i}]"] = shat
            row[f"B[{g.id},{i}]"] = nodal[i] - shat
        b.eq(row, g.p_max, f"ext_{g.id}")
    margins = {i: nodal[i] / sig[i] - max(normal_quantile(1.0 - g.epsilon_ext) for g in case.generators) for i in nodes}
    b.metadata.update(
        model="ldt-cc-locational",
        sigma=sigma,
        omega_star=omega_star,
        omega_star_nodal=nodal,
        omega_star_rule="variance-proportional split of the aggregate dominant point",
        nodal_ldt_bound_margin=margins,
        wind_nodes=nodes,
    )
    if len(set(round(v, 12) for v in q.values())) == 1:
        qq = next(iter(q.values()))
        direction = {f"ext_{g.id}": 1.0 for g in case.generators}
        direction.update({lab: -1.0 for lab in balance})
        for i in nodes:
            direction[f"reserve_reg_{i}"] = -qq * sig[i]
            direction[f"reserve_ext_{i}"] = -(nodal[i] - qq * sig[i])
        b.metadata["dual_null_direction"] = direction
    return b.build()


def extract_lmps(solution: Solution, case: SystemCase) -> dict[str, float]:
    """Nodal prices; the balance multiplier with its sign flipped to $/MWh."""
    _require_network(case)
    if solution.status != "optimal":
        raise ValueError(f"nodal prices need an optimal solution, got {solution.status}")
    return {n.id: -solution.duals_eq[f"balance_{n.id}"] for n in case.network.nodes}


def _network_fields(case: SystemCase, sol: Solution) -> dict:
    x = sol.primal
    net = case.network
    return dict(
        lmp=extract_lmps(sol, case),
        flows={ln.key: x[f"flow[{ln.key}]"] for ln in net.lines},
        angles={n.id: x[f"theta[{n.id}]"] for n in net.nodes},
        congestion_duals={
            ln.key: (sol.duals_ineq[f"flow_max[{ln.key}]"], sol.duals_ineq[f"flow_min[{ln.key}]"]) for ln in net.lines
        },
    )


def clear_network(case: SystemCase, kind: "str | ModelKind" = ModelKind.LDTCC) -> NetworkClearingResult:
    """Clear any of the four models with nodal balances and report nodal prices."""
    _require_network(case)
    base = clear(case, kind, network=True)
    fields = {f: getattr(base, f) for f in ClearingResult.__dataclass_fields__}
    return NetworkClearingResult(**fields, **_network_fields(case, base.solution))


def clear_locational(case: SystemCase) -> NetworkClearingResult:
    """Solve the locational-reserve model and package its nodal shares."""
    program = build_locational_ldtcc(case)
    sol = _solve_program(case, program, "locational ldt-cc clearing")
    x = sol.primal
    nodes = program.metadata["wind_nodes"]
    gids = [g.id for g in case.generators]
    A = {g: {i: x[f"A[{g},{i}]"] for i in nodes} for g in gids}
    B = {g: {i: x[f"B[{g},{i}]"] for i in nodes} for g in gids}
    sig = wind_nodes(case)
    weight = {i: sig[i] ** 2 / math.fsum(s * s for s in sig.values()) for i in nodes}
    alpha = {g: math.fsum(A[g][i] * weight[i] for i in nodes) for g in gids}
    beta = {g: math.fsum(B[g][i] * weight[i] for i in nodes) for g in gids}
    sol = _canonical_duals(program, sol)
    p = {g: x[f"p[{g}]"] for g in gids}
    cost = math.fsum(
        [
            gg.c2 * (p[gg.id] ** 2 + math.fsum(sig[i] ** 2 * A[gg.id][i] ** 2 for i in nodes))
            + gg.c1 * p[gg.id]
            + gg.c_beta * math.fsum(B[gg.id].values())
            for gg in case.generators
        ]
    )
    sigma = program.metadata["sigma"]
    duals = dict(sol.duals_eq)
    duals.update(sol.duals_ineq)
    meta = {k: v for k, v in program.metadata.items() if k != "dual_null_direction"}
    meta.update(status=sol.status, duality_gap=sol.duality_gap, objective=sol.objective_value, network=True,
                case_name=case.name, shares="alpha/beta are variance-weighted sums of A/B rows",
                nodal_variance={i: sig[i] ** 2 for i in nodes})
    omega_star = program.metadata["omega_star"]
    return NetworkClearingResult(
        model=ModelKind.LDTCC,
        p=p,
        alpha=alpha,
        beta=beta,
        sigma=sigma,
        sigma_hat={gg.id: normal_quantile(1.0 - gg.epsilon) * sigma for gg in case.generators},
        net_load=case.net_load,
        scheduled_cost=cost,
        duals=duals,
        omega_star=omega_star,
        lambda_star={g: (omega_star / (sigma**2 * beta[g]) if beta[g] > PROVIDER_TOL else None) for g in gids},
        metadata=meta,
        program=program,
        solution=sol,
        A=A,
        B=B,
        omega_star_nodal=program.metadata["omega_star_nodal"],
        **_network_fields(case, sol),
    )
