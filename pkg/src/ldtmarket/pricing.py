"""Prices from clearing duals, settlements, and the producer-equilibrium check.

Sign convention: rows enter the Lagrangian as ``+ lambda * (row - rhs)``, so
a price is the *negated* multiplier of its balance row. The energy price is
``pi``, the regular reserve price is ``rho`` (per unit of ``alpha``) and the
extreme reserve price is ``chi`` (per unit of ``beta``).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Union

from .convexcore import ConvexProgram, ProgramBuilder, Solution, lagrangian_gradient, solve
from .cuttingplane import CutProblem, solve_with_cuts
from .formulations import (
    PROVIDER_TOL,
    ClearingResult,
    ModelKind,
    _ldtwcc_constraint,
    _wcc_constraint,
)
from .model import SystemCase
from .probkit import GaussianSpec

__all__ = [
    "PricingError",
    "PriceSet",
    "extract_prices",
    "closed_form_prices_ldtcc",
    "ProducerSettlement",
    "Settlement",
    "settle",
    "ProducerCheck",
    "EquilibriumReport",
    "verify_equilibrium",
]

Price = Union[float, dict]

PRICE_RTOL = 1e-4
# Upper box on shares in the producer problems; reported if it ever binds.
SHARE_BOX = 10.0


class PricingError(ValueError):
    """Duals are missing, stale, or disagree with the stationarity conditions."""


@dataclass(frozen=True)
class PriceSet:
    """Market prices. ``pi`` is a float, or a node-to-price dict on a network."""

    pi: Price
    rho: Optional[Price]
    chi: Optional[Price] = None
    recomputed: Mapping[str, float] = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def energy(self, node: Optional[str] = None) -> float:
        if isinstance(self.pi, dict):
            if node is None:
                raise KeyError("nodal prices need a node id")
            return self.pi[node]
        return float(self.pi)

    def to_dict(self) -> dict:
        return {"pi": self.pi, "rho": self.rho, "chi": self.chi, "recomputed": dict(self.recomputed),
                "flags": list(self.flags)}

    def shifted(self, d_pi: float = 0.0, d_rho: float = 0.0, d_chi: float = 0.0) -> "PriceSet":
        def bump(v, d):
            if v is None:
                return None
            if isinstance(v, dict):
                return {k: x + d for k, x in v.items()}
            return v + d

        return PriceSet(bump(self.pi, d_pi), bump(self.rho, d_rho), bump(self.chi, d_chi), {}, self.flags)


def _is_price_row(label: str) -> bool:
    return label == "balance" or label.startswith(("balance_", "reserve"))


def _is_cut_row(label: str) -> bool:
    return label.startswith(("cut:", "tangent:"))


def _require(result: ClearingResult) -> tuple[ConvexProgram, Solution]:
    if result.program is None or result.solution is None:
        raise PricingError("result carries no solver artefacts; re-clear the case to price it")
    if not result.solution.optimal:
        raise PricingError(f"result is not optimal ({result.solution.status})")
    return result.program, result.solution


def _price_of(label: str, sol: Solution) -> float:
    return -sol.duals_eq[label]


def _split_price(labels: list[str], prefix: str, sol: Solution) -> Optional[Price]:
    exact = [lab for lab in labels if lab == prefix]
    if exact:
        return _price_of(exact[0], sol)
    nodal = {lab[len(prefix) + 1 :]: _price_of(lab, sol) for lab in labels if lab.startswith(prefix + "_")}
    return nodal or None


def _stationarity_prices(result: ClearingResult, program: ConvexProgram, sol: Solution) -> dict[str, float]:
    """Price implied at each priced variable by the stationarity conditions alone.

    The balance rows are left out of the Lagrangian gradient. For models
    solved with cuts, the linearised rows are also left out and replaced by
    ``nu * grad g(x)`` of the exact expected-overload constraints, with
    ``nu`` the multiplier recovered for each constraint.
    """
    skip = {r.label for r in program.eq_constraints if _is_price_row(r.label)}
    skip |= {r.label for r in program.ineq_constraints if _is_cut_row(r.label)}
    grad = lagrangian_gradient(program, sol, skip)
    for c in result.constraints:
        nu = result.duals.get(f"nl:{c.label}", 0.0)
        if nu:
            for v, d in c.gradient(sol.primal).items():
                grad[v] += nu * d
    out: dict[str, float] = {}
    for r in program.eq_constraints:
        if r.label not in skip:
            continue
        for v, c in r.coefs.items():
            if v.startswith(("p[", "alpha[", "beta[", "A[", "B[")):
                out[f"{r.label}@{v}"] = grad[v] / c
    return out


def extract_prices(result: ClearingResult, check: bool = True) -> PriceSet:
    """Read the prices off the balance duals and confirm them from stationarity.

    Every generator's stationarity condition gives its own value of each
    price; with ``check`` these must agree with the dual to ``1e-4``
    relative, otherwise :class:`PricingError` is raised.
    """
    program, sol = _require(result)
    labels = [r.label for r in program.eq_constraints if _is_price_row(r.label)]
    pi = _split_price(labels, "balance", sol)
    if result.model.has_beta:
        rho = _split_price(labels, "reserve_reg", sol)
        chi = _split_price(labels, "reserve_ext", sol)
    else:
        rho = _split_price(labels, "reserve", sol)
        chi = None
    recomputed = _stationarity_prices(result, program, sol)
    if check:
        bad = []
        for key, value in recomputed.items():
            want = _price_of(key.split("@", 1)[0], sol)
            if abs(value - want) > PRICE_RTOL * max(1.0, abs(want)):
                bad.append(f"{key}: stationarity {value:.6g} vs dual {want:.6g}")
        if bad:
            raise PricingError("inconsistent duals: " + "; ".join(bad[:5]))
    flags = []
    for name, v in (("rho", rho), ("chi", chi)):
        vals = v.values() if isinstance(v, dict) else ([] if v is None else [v])
        if any(x < -1e-7 for x in vals):
            flags.append(f"negative {name}")
    return PriceSet(pi, rho, chi, recomputed, tuple(flags))


def closed_form_prices_ldtcc(result: ClearingResult, case: SystemCase) -> PriceSet:
    """Energy and reserve prices from the ratio-of-sums expressions.

    Each unit's stationarity conditions are solved for ``p`` and ``alpha``
    and substituted into the balance and regular-reserve rows::

        pi  = (L + sum (c1 + k_p) / 2c2) / sum 1 / 2c2
        rho = (1 + sum k_a / (2 c2 sigma^2)) / sum 1 / (2 c2 sigma^2)

    where ``L`` is the net load and ``k_p``, ``k_a`` collect the limit-row
    multipliers of the unit. ``chi`` is the extreme-row expression at the
    units that carry extreme reserve; all of them must agree.
    """
    if result.model is not ModelKind.LDTCC or result.metadata.get("network"):
        raise PricingError("closed forms apply to the single-bus large-deviation chance-constrained model")
    program, sol = _require(result)
    if any(g.c2 <= 0.0 for g in case.generators):
        raise PricingError("closed forms need c2 > 0 for every unit")
    sigma = result.sigma
    omega_star = result.omega_star
    lin = program.linear
    dual = {**sol.duals_eq, **sol.duals_ineq}
    num_pi, den_pi, num_rho, den_rho = [case.net_load], [], [1.0], []
    chis: dict[str, float] = {}
    for g in case.generators:
        s = result.sigma_hat[g.id]
        mu = dual[f"ext_{g.id}"]
        delta = dual[f"reg_{g.id}"]
        delta_min = dual.get(f"reg_min_{g.id}", 0.0)
        k_p = mu + delta - delta_min + dual[f"ub:p[{g.id}]"] - dual[f"lb:p[{g.id}]"]
        k_a = (mu + delta + delta_min) * s - dual[f"lb:alpha[{g.id}]"] + lin.get(f"alpha[{g.id}]", 0.0)
        w_p = 1.0 / (2.0 * g.c2)
        w_a = 1.0 / (2.0 * g.c2 * sigma**2)
        num_pi.append((g.c1 + k_p) * w_p)
        den_pi.append(w_p)
        num_rho.append(k_a * w_a)
        den_rho.append(w_a)
        if result.beta[g.id] > PROVIDER_TOL:
            chis[g.id] = lin[f"beta[{g.id}]"] + mu * (omega_star - s) - dual[f"lb:beta[{g.id}]"]
    values = list(chis.values())
    ref = values[0]
    if any(abs(v - ref) > PRICE_RTOL * max(1.0, abs(ref)) for v in values):
        raise PricingError(f"extreme-row prices disagree across providers: {chis}")
    return PriceSet(
        math.fsum(num_pi) / math.fsum(den_pi),
        math.fsum(num_rho) / math.fsum(den_rho),
        ref,
        {f"chi@{k}": v for k, v in chis.items()},
    )


def _unit_node(case: SystemCase, gid: str) -> Optional[str]:
    return case.generator(gid).node if case.network is not None else None


def _pi_at(prices: PriceSet, case: SystemCase, gid: str) -> float:
    return prices.energy(_unit_node(case, gid) if isinstance(prices.pi, dict) else None)


def _reserve_terms(result: ClearingResult, prices: PriceSet, gid: str) -> float:
    A = getattr(result, "A", None)
    if A is not None:
        B = result.B
        return math.fsum(
            [prices.rho[i] * A[gid][i] for i in A[gid]] + [prices.chi[i] * B[gid][i] for i in B[gid]]
        )
    terms = [prices.rho * result.alpha[gid]]
    if result.beta is not None:
        terms.append(prices.chi * result.beta[gid])
    return math.fsum(terms)


def _unit_cost(result: ClearingResult, case: SystemCase, gid: str) -> float:
    g = case.generator(gid)
    p = result.p[gid]
    A = getattr(result, "A", None)
    if A is not None:
        sig2 = {i: v for i, v in result.metadata.get("nodal_variance", {}).items()}
        var_term = math.fsum(sig2[i] * A[gid][i] ** 2 for i in A[gid])
        return g.c2 * (p * p + var_term) + g.c1 * p + g.c_beta * math.fsum(result.B[gid].values())
    cost = g.c2 * (p * p + result.sigma**2 * result.alpha[gid] ** 2) + g.c1 * p
    if result.beta is not None:
        cost += g.c_beta * result.beta[gid]
    return cost


@dataclass(frozen=True)
class ProducerSettlement:
    revenue: float
    cost: float
    profit: float


@dataclass(frozen=True)
class Settlement:
    producers: dict[str, ProducerSettlement]
    consumer_payment: float
    wind_credit: float
    producer_payments: float
    deficit: float
    reserve_price_sum: Optional[float]
    congestion_rent: float

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["producers"] = {k: asdict(v) for k, v in self.producers.items()}
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["producer", "revenue", "cost", "profit"])
        for gid, s in self.producers.items():
            w.writerow([gid, repr(s.revenue), repr(s.cost), repr(s.profit)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def settle(result: ClearingResult, prices: PriceSet, case: SystemCase) -> Settlement:
    """Producer payments, costs and profits, and the market's revenue deficit.

    The deficit is ``max(0, sum payments + wind credit - consumer payment)``.
    On a single bus, with every balance row satisfied, it reduces to
    ``rho + chi``.
    """
    producers = {}
    energy_to_units = []
    for gid in result.p:
        pi_n = _pi_at(prices, case, gid)
        energy_to_units.append(pi_n * result.p[gid])
        revenue = pi_n * result.p[gid] + _reserve_terms(result, prices, gid)
        cost = _unit_cost(result, case, gid)
        producers[gid] = ProducerSettlement(revenue, cost, revenue - cost)
    if isinstance(prices.pi, dict):
        consumer = math.fsum(prices.pi[n.id] * n.demand for n in case.network.nodes)
        wind = math.fsum(prices.pi[w.node] * w.forecast for w in case.wind)
    else:
        consumer = prices.pi * case.demand
        wind = prices.pi * case.wind_forecast
    paid = math.fsum(s.revenue for s in producers.values())
    reduction = None
    if not isinstance(prices.rho, dict) and prices.rho is not None:
        reduction = prices.rho + (prices.chi or 0.0)
    return Settlement(
        producers=producers,
        consumer_payment=consumer,
        wind_credit=wind,
        producer_payments=paid,
        deficit=max(0.0, paid + wind - consumer),
        reserve_price_sum=reduction,
        congestion_rent=consumer - wind - math.fsum(energy_to_units),
    )


@dataclass(frozen=True)
class ProducerCheck:
    dispatch_profit: float
    best_profit: float
    gap: float
    deviation: float
    box_active: bool


@dataclass(frozen=True)
class EquilibriumReport:
    producers: dict[str, ProducerCheck]
    clearing_residual: float
    tol: float
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "producers": {k: asdict(v) for k, v in self.producers.items()},
            "clearing_residual": self.clearing_residual,
            "tol": self.tol,
            "violations": list(self.violations),
            "ok": self.ok,
        }


def _producer_problem(result: ClearingResult, prices: PriceSet, case: SystemCase, gid: str):
    """Profit maximisation of one unit at posted prices, as a minimisation.

    Returns the base program and the expected-overload constraints (empty
    for the chance-constrained models).
    """
    g = case.generator(gid)
    sigma = result.sigma
    pi_n = _pi_at(prices, case, gid)
    b = ProgramBuilder()
    p = b.var(f"p[{gid}]", lower=g.p_min, upper=g.p_max)
    b.quad(p, p, g.c2)
    b.lin(p, g.c1 - pi_n)
    A = getattr(result, "A", None)
    if A is not None:
        sig = {i: math.sqrt(v) for i, v in result.metadata["nodal_variance"].items()}
        nodal = result.omega_star_nodal
        ext_row = {p: 1.0}
        q = result.sigma_hat[gid] / sigma
        for i in A[gid]:
            a = b.var(f"A[{gid},{i}]", lower=0.0, upper=SHARE_BOX)
            bb = b.var(f"B[{gid},{i}]", lower=0.0, upper=SHARE_BOX)
            b.quad(a, a, g.c2 * sig[i] ** 2)
            b.lin(a, -prices.rho[i])
            b.lin(bb, g.c_beta - prices.chi[i])
            ext_row[a] = q * sig[i]
            ext_row[bb] = nodal[i] - q * sig[i]
        b.soc("reg", q, [{f"A[{gid},{i}]": sig[i]} for i in A[gid]], {p: -1.0}, g.p_max)
        b.eq(ext_row, g.p_max, "ext")
        return b.build(), ()
    a = b.var(f"alpha[{gid}]", lower=0.0, upper=SHARE_BOX)
    b.quad(a, a, g.c2 * sigma**2)
    b.lin(a, -prices.rho)
    s = result.sigma_hat[gid]
    if result.beta is not None:
        bt = b.var(f"beta[{gid}]", lower=0.0, upper=SHARE_BOX)
        b.lin(bt, g.c_beta - prices.chi)
    sides = ("max", "min") if case.options.enforce_min_side else ("max",)
    kind = result.model
    if kind in (ModelKind.CC, ModelKind.LDTCC):
        b.le({p: 1.0, a: s}, g.p_max, "reg")
        if case.options.enforce_min_side:
            b.le({p: -1.0, a: s}, -g.p_min, "reg_min")
        if kind is ModelKind.LDTCC:
            b.eq({p: 1.0, a: s, bt: result.omega_star - s}, g.p_max, "ext")
        return b.build(), ()
    if kind is ModelKind.WCC:
        return b.build(), tuple(_wcc_constraint(g, sigma, side) for side in sides)
    spec = GaussianSpec(0.0, sigma)
    return b.build(), tuple(
        _ldtwcc_constraint(g, spec, result.omega_eps, result.extreme_anchor, side) for side in sides
    )


def _dispatch_of(result: ClearingResult, gid: str) -> dict[str, float]:
    x = {f"p[{gid}]": result.p[gid]}
    A = getattr(result, "A", None)
    if A is not None:
        x.update({f"A[{gid},{i}]": v for i, v in A[gid].items()})
        x.update({f"B[{gid},{i}]": v for i, v in result.B[gid].items()})
        return x
    x[f"alpha[{gid}]"] = result.alpha[gid]
    if result.beta is not None:
        x[f"beta[{gid}]"] = result.beta[gid]
    return x


def verify_equilibrium(
    result: ClearingResult, prices: PriceSet, case: SystemCase, tol: float = 1e-3
) -> EquilibriumReport:
    """Check that no unit can raise its profit by deviating from its dispatch.

    Each unit's profit problem is built afresh from the case data and the
    posted prices and solved on its own. The gap between its best profit
    and the profit of the dispatched quantities must be at most ``tol``
    dollars. The balance rows of the central program must also hold.
    """
    program, sol = _require(result)
    checks: dict[str, ProducerCheck] = {}
    violations = []
    for gid in result.p:
        base, cons = _producer_problem(result, prices, case, gid)
        if cons:
            psol, _ = solve_with_cuts(CutProblem(base, cons), tol=case.options.cut_tolerance,
                                      max_iter=case.options.max_cut_iterations)
        else:
            psol = solve(base, tol=1e-10)
        if not psol.optimal:
            violations.append(f"{gid}: producer problem status {psol.status}")
            continue
        mine = _dispatch_of(result, gid)
        dispatch_profit = -base.objective(mine)
        best_profit = -psol.objective_value
        deviation = max(abs(psol.primal[v] - mine[v]) for v in mine)
        box = any(abs(psol.primal[v] - SHARE_BOX) < 1e-6 for v in psol.primal if not v.startswith("p["))
        gap = best_profit - dispatch_profit
        checks[gid] = ProducerCheck(dispatch_profit, best_profit, gap, deviation, box)
        if gap > tol:
            violations.append(f"{gid}: profit gap {gap:.6g} $ (best response moves by {deviation:.4g})")
        if box:
            violations.append(f"{gid}: best response reached the share box {SHARE_BOX}")
    residual = max(
        (abs(r.value(sol.primal) - r.rhs) for r in program.eq_constraints if _is_price_row(r.label)),
        default=0.0,
    )
    if residual > 1e-6:
        violations.append(f"market does not clear: balance residual {residual:.3g}")
    return EquilibriumReport(checks, residual, tol, tuple(violations))
