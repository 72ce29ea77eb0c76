"""Out-of-sample Monte Carlo evaluation of a fixed schedule and response policy.

Samples are signed wind *surplus* ``w ~ N(0, sigma^2)``. The policies are
written in terms of the shortfall ``x = -w``:

* chance-constrained and expected-overload models: ``p + alpha * x``
* large-deviation chance-constrained model, with ``s`` the unit's regular
  requirement: ``p + alpha * x`` up to ``x = s`` and
  ``p + (alpha - beta) * s + beta * x`` beyond it, which reaches the
  extreme row exactly at the dominant point
* piecewise expected-overload model: ``p + alpha * x`` up to the region
  boundary and ``p + beta * anchor + (alpha - beta) * x`` beyond it

Outputs are clipped to the unit limits. A remaining deficit is unserved
energy charged at the value of lost load; a remaining surplus is spilled
wind at no cost. Extreme reserve capacity ``c_beta * beta`` is bought ahead
of time, so by default it is added to every scenario's cost. Network flows
are not re-checked per scenario.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import special

from .formulations import ClearingResult, ModelKind
from .model import SystemCase

__all__ = [
    "ScenarioReport",
    "sample_surplus",
    "apply_policy",
    "policy_jump",
    "evaluate",
    "cost_moments",
    "limit_violation_frequency",
]

_U53 = 2.0**53


def sample_surplus(sigma: float, n: int, seed: int) -> np.ndarray:
    """``n`` draws of N(0, sigma^2) from a Philox stream by inverse CDF.

    Uniforms sit on the midpoints of a 2**-53 grid, so the quantile is
    always finite.
    """
    if n < 0:
        raise ValueError("scenario count must be >= 0")
    rng = np.random.Generator(np.random.Philox(seed))
    k = rng.integers(0, 2**53, size=n, dtype=np.int64).astype(float)
    return sigma * special.ndtri((k + 0.5) / _U53)


def _arrays(result: ClearingResult):
    gids = list(result.p)
    p = np.array([result.p[g] for g in gids])
    a = np.array([result.alpha[g] for g in gids])
    b = np.array([result.beta[g] for g in gids]) if result.beta is not None else np.zeros(len(gids))
    s = np.array([result.sigma_hat[g] for g in gids])
    return gids, p, a, b, s


def _unclipped(result: ClearingResult, shortfall: np.ndarray) -> np.ndarray:
    """Policy outputs before limits, shape ``(n, units)``."""
    _, p, a, b, s = _arrays(result)
    x = np.asarray(shortfall, dtype=float)[:, None]
    regular = p + a * x
    if result.model is ModelKind.LDTCC:
        extreme = p + (a - b) * s + b * x
        return np.where(x > s, extreme, regular)
    if result.model is ModelKind.LDTWCC:
        edge = result.omega_eps
        extreme = p + b * result.extreme_anchor + (a - b) * x
        return np.where(x > edge, extreme, regular)
    return np.broadcast_to(regular, (x.shape[0], p.size)).copy()


def _limits(case: SystemCase, gids) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([case.generator(g).p_min for g in gids])
    hi = np.array([case.generator(g).p_max for g in gids])
    return lo, hi


def apply_policy(result: ClearingResult, case: SystemCase, omega_surplus: float) -> dict[str, float]:
    """Clipped unit outputs for one wind surplus sample, in MW."""
    gids = list(result.p)
    raw = _unclipped(result, np.array([-float(omega_surplus)]))[0]
    lo, hi = _limits(case, gids)
    return dict(zip(gids, np.clip(raw, lo, hi).tolist()))


def policy_jump(result: ClearingResult) -> dict[str, float]:
    """Per-unit jump of the response where its regular piece hands over.

    Zero for the affine policies and for the continuous piecewise forms; a
    piecewise policy anchored away from its boundary jumps by
    ``beta * (anchor - boundary)``.
    """
    gids, p, a, b, s = _arrays(result)
    if result.model is ModelKind.LDTCC:
        left = p + a * s
        right = p + (a - b) * s + b * s
    elif result.model is ModelKind.LDTWCC:
        e = result.omega_eps
        left = p + a * e
        right = p + b * result.extreme_anchor + (a - b) * e
    else:
        return dict.fromkeys(gids, 0.0)
    return dict(zip(gids, (right - left).tolist()))


def cost_moments(costs) -> tuple[float, float]:
    """Mean and population standard deviation, with compensated sums."""
    c = [float(v) for v in costs]
    if not c:
        return math.nan, math.nan
    mean = math.fsum(c) / len(c)
    var = math.fsum((v - mean) ** 2 for v in c) / len(c)
    return mean, math.sqrt(var)


@dataclass(frozen=True)
class ScenarioReport:
    model: str
    seed: int
    omega: np.ndarray
    cost: np.ndarray
    unserved: np.ndarray
    spill: np.ndarray
    violations: np.ndarray
    mean_cost: float
    std_cost: float

    @property
    def n(self) -> int:
        return int(self.omega.size)

    def summary(self) -> dict:
        return {"model": self.model, "seed": self.seed, "scenarios": self.n, "mean_cost": self.mean_cost,
                "std_cost": self.std_cost, "mean_unserved": float(self.unserved.mean()) if self.n else 0.0,
                "mean_spill": float(self.spill.mean()) if self.n else 0.0}

    def to_json(self) -> str:
        doc = self.summary()
        doc["scenarios_detail"] = {
            "omega": self.omega.tolist(),
            "cost": self.cost.tolist(),
            "unserved": self.unserved.tolist(),
            "spill": self.spill.tolist(),
            "violations": self.violations.tolist(),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "omega", "cost", "unserved", "spill", "violations"])
        for k in range(self.n):
            w.writerow([k, repr(float(self.omega[k])), repr(float(self.cost[k])), repr(float(self.unserved[k])),
                        repr(float(self.spill[k])), int(self.violations[k])])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _run(result: ClearingResult, case: SystemCase, omega: np.ndarray, reserve_charge: bool = True):
    gids = list(result.p)
    lo, hi = _limits(case, gids)
    raw = _unclipped(result, -omega)
    out = np.clip(raw, lo, hi)
    upper = raw > hi + 1e-9
    lower = raw < lo - 1e-9
    violations = upper.sum(axis=1) + (lower.sum(axis=1) if case.options.enforce_min_side else 0)
    residual = case.net_load - omega - out.sum(axis=1)
    unserved = np.maximum(residual, 0.0)
    spill = np.maximum(-residual, 0.0)
    c1 = np.array([case.generator(g).c1 for g in gids])
    c2 = np.array([case.generator(g).c2 for g in gids])
    fixed = 0.0
    if reserve_charge and result.beta is not None:
        fixed = math.fsum(case.generator(g).c_beta * result.beta[g] for g in gids)
    cost = (c1 * out + c2 * out * out).sum(axis=1) + fixed + case.voll * unserved
    return out, cost, unserved, spill, violations, upper, lower


def evaluate(result: ClearingResult, case: SystemCase, n_scenarios: int, seed: int,
             sigma: Optional[float] = None, reserve_charge: bool = True) -> ScenarioReport:
    """Realised cost of ``result`` over ``n_scenarios`` seeded wind samples.

    ``sigma`` defaults to the case's aggregate spread; override it to stress
    a schedule under a different error level. ``reserve_charge=False``
    leaves out the fixed extreme-reserve capacity cost and reports
    production and lost-load cost only.
    """
    spread = result.sigma if sigma is None else sigma
    omega = sample_surplus(spread, n_scenarios, seed)
    _, cost, unserved, spill, violations, _, _ = _run(result, case, omega, reserve_charge)
    mean, std = cost_moments(cost)
    return ScenarioReport(result.model.value, seed, omega, cost, unserved, spill, violations, mean, std)


def limit_violation_frequency(result: ClearingResult, case: SystemCase, n: int, seed: int) -> dict[str, float]:
    """Share of samples in which each unit's unclipped response crosses ``p_max``."""
    omega = sample_surplus(result.sigma, n, seed)
    *_, upper, _ = _run(result, case, omega)
    return dict(zip(result.p, (upper.sum(axis=0) / max(n, 1)).tolist()))
