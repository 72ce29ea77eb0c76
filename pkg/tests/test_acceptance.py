"""Acceptance criteria 1 to 10, each checked at its stated tolerance.

Every test records one PASS/FAIL line, printed in the run summary, and
then asserts the same outcome.
"""

import math
import time

import numpy as np
import pytest
from scipy import integrate

from conftest import CRITERIA, nodal_fd, random_case, single_node_doc, three_node_doc
from ldtmarket.evaluate import evaluate, limit_violation_frequency
from ldtmarket.formulations import _ldtwcc_constraint, _wcc_constraint, clear, derive_omega_star
from ldtmarket.model import load_case
from ldtmarket.network import clear_network
from ldtmarket.pricing import extract_prices, settle, verify_equilibrium
from ldtmarket.probkit import GaussianSpec, expected_overload, normal_pdf, truncated_moments

IDS = ("G1", "G2", "G3")


class Checks:
    """Named sub-checks of one criterion."""

    def __init__(self):
        self.items = []
        self.notes = []

    def add(self, name, ok, got=None):
        self.items.append((name, bool(ok), got))

    def close(self, k):
        failed = [f"{n} ({g})" if g is not None else n for n, ok, g in self.items if not ok]
        ok = not failed
        detail = f"{len(self.items)} checks" if ok else "failed: " + "; ".join(failed)
        if self.notes:
            detail += " | " + "; ".join(self.notes)
        CRITERIA[k] = (ok, detail)
        assert ok, detail


def _close(a, b, tol):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def test_criterion_01_dispatch_table(illustrative):
    c = Checks()
    start = time.perf_counter()
    res = {m: clear(illustrative, m) for m in ("cc", "ldt-cc", "ldt-wcc")}
    elapsed = time.perf_counter() - start
    vec = lambda d: [d[g] for g in IDS]  # noqa: E731
    r = res["cc"]
    c.add("cc p", _close(vec(r.p), [75, 45, 0], 0.01), vec(r.p))
    c.add("cc alpha", _close(vec(r.alpha), [0, 0.33, 0.67], 0.01), vec(r.alpha))
    r = res["ldt-cc"]
    c.add("ldt-cc alpha", _close(vec(r.alpha), [0, 0, 1], 0.01), vec(r.alpha))
    c.add("ldt-cc beta", _close(vec(r.beta), [0, 0.75, 0.25], 0.01), vec(r.beta))
    r = res["ldt-wcc"]
    c.add("ldt-wcc alpha", _close(vec(r.alpha), [0, 0.44, 0.56], 0.02), vec(r.alpha))
    c.add("ldt-wcc beta", _close(vec(r.beta), [0, 1, 0], 0.02), vec(r.beta))
    c.add("runtime < 5 s", elapsed < 5.0, f"{elapsed:.2f} s")
    c.close(1)


TABLE_II = {
    "cc": (39.20, 83.33, None, 2524.17),
    "ldt-wcc": (39.50, 109.25, 300.00, 2826.16),
    "ldt-cc": (41.47, 125.74, 601.37, 2919.15),
}


def test_criterion_02_price_table(cleared):
    c = Checks()
    for model, (pi, rho, chi, cost) in TABLE_II.items():
        r = cleared[model]
        pr = extract_prices(r)
        for name, want, got in (("pi", pi, pr.pi), ("rho", rho, pr.rho), ("chi", chi, pr.chi),
                                ("cost", cost, r.scheduled_cost)):
            if want is None:
                c.add(f"{model} {name} absent", got is None, got)
                continue
            rel = abs(got - want) / abs(want)
            c.add(f"{model} {name}", rel <= 0.005, f"{got:.2f} vs {want:.2f}, {100 * rel:.2f}%")
    c.close(2)


def test_criterion_03_dominant_point(illustrative, cleared):
    c = Checks()
    omega = derive_omega_star(illustrative)
    c.add("omega* = 235", omega == pytest.approx(235.0, abs=1e-12), omega)
    r = cleared["ldt-cc"]
    worst = max(
        abs(r.p[g.id] + (r.alpha[g.id] - r.beta[g.id]) * r.sigma_hat[g.id] + r.beta[g.id] * omega - g.p_max)
        for g in illustrative.generators
    )
    c.add("extreme rows", worst <= 1e-6, f"{worst:.2e}")
    c.close(3)


def _quad_overload(mu, sigma):
    val, _ = integrate.quad(lambda y: y * normal_pdf((y - mu) / sigma) / sigma, 0.0, np.inf,
                            epsabs=1e-14, epsrel=1e-13, limit=200)
    return val


def _quad_moments(z, side):
    lo, hi = (-np.inf, z) if side == "below" else (z, np.inf)
    mass, _ = integrate.quad(normal_pdf, lo, hi, epsabs=0.0, epsrel=1e-13)
    m1, _ = integrate.quad(lambda t: t * normal_pdf(t), lo, hi, epsabs=0.0, epsrel=1e-13)
    m2, _ = integrate.quad(lambda t: t * t * normal_pdf(t), lo, hi, epsabs=0.0, epsrel=1e-13)
    mean = m1 / mass
    return mean, m2 / mass - mean * mean


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_criterion_04_truncated_expectation():
    c = Checks()
    ratios = np.linspace(-6.0, 6.0, 200)
    spec = GaussianSpec(0.0, 1.0)
    start = time.perf_counter()
    ours = [expected_overload(float(r), 1.0) for r in ratios]
    moments = [(truncated_moments(spec, float(z), "below"), truncated_moments(spec, float(z), "above")) for z in ratios]
    elapsed = time.perf_counter() - start
    worst = max(abs(o - _quad_overload(float(r), 1.0)) / max(1.0, abs(o)) for o, r in zip(ours, ratios))
    c.add("overload vs quadrature", worst <= 1e-8, f"{worst:.1e}")
    worst_m = 0.0
    for z, (below, above) in zip(ratios, moments):
        for side, got in (("below", below), ("above", above)):
            want = _quad_moments(float(z), side)
            worst_m = max(worst_m, abs(got[0] - want[0]), abs(got[1] - want[1]))
    c.add("moments vs quadrature", worst_m <= 1e-8, f"{worst_m:.1e}")
    c.add("runtime < 1 s", elapsed < 1.0, f"{elapsed:.3f} s")
    c.close(4)


def _quad_constraint(con, x):
    total = 0.0
    for t in con.terms:
        m, s = t.moments(x)
        s = abs(s)
        total += max(m, 0.0) if s < 1e-12 else _quad_overload(m, s)
    return total


def test_criterion_05_cutting_planes(illustrative, cleared):
    c = Checks()
    for model in ("wcc", "ldt-wcc"):
        r = cleared[model]
        worst = max(_quad_constraint(con, r.solution.primal) - con.rhs for con in r.constraints)
        c.add(f"{model} feasible by quadrature", worst <= 1e-6, f"{worst:.2e}")
    g = illustrative.generator("G2")
    spec = GaussianSpec(0.0, 50.0)
    cons = [_wcc_constraint(g, 50.0, "max"), _ldtwcc_constraint(g, spec, 176.25, 176.25, "max")]
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        x = {"p[G2]": rng.uniform(60.0, 180.0), "alpha[G2]": rng.uniform(0.05, 1.0), "beta[G2]": rng.uniform(0.0, 1.0)}
        for con in cons:
            pt = {v: x[v] for v in con.variables}
            grad = con.gradient(pt)
            for v in pt:
                h = 1e-6 * max(1.0, abs(pt[v]))
                up, dn = dict(pt), dict(pt)
                up[v] += h
                dn[v] -= h
                fd = (con.value(up) - con.value(dn)) / (2 * h)
                worst = max(worst, abs(grad[v] - fd) / max(abs(fd), 1e-3))
    c.add("gradients vs central differences", worst <= 1e-6, f"{worst:.1e}")
    c.close(5)


def test_criterion_06_equilibrium_and_settlement(illustrative, cleared):
    c = Checks()
    for model, r in cleared.items():
        pr = extract_prices(r)
        report = verify_equilibrium(r, pr, illustrative, tol=1e-3)
        gap = max(p.gap for p in report.producers.values())
        c.add(f"{model} equilibrium", report.ok, f"gap {gap:.1e}")
        s = settle(r, pr, illustrative)
        low = min(p.profit for p in s.producers.values())
        c.add(f"{model} cost recovery", low >= -1e-6, f"{low:.3g}")
        c.add(f"{model} deficit = rho + chi", abs(s.deficit - s.reserve_price_sum) <= 1e-6,
              f"{s.deficit:.6f} vs {s.reserve_price_sum:.6f}")
    c.close(6)


def test_criterion_07_coverage(illustrative, cleared):
    c = Checks()
    n = 1_000_000
    freq = limit_violation_frequency(cleared["cc"], illustrative, n, 77)
    for g in illustrative.generators:
        band = g.epsilon + 3.0 * math.sqrt(g.epsilon * (1.0 - g.epsilon) / n)
        c.add(f"{g.id} frequency", freq[g.id] <= band, f"{freq[g.id]:.5f} <= {band:.5f}")
    c.close(7)


def test_criterion_08_network(illustrative):
    c = Checks()
    single = clear(illustrative, "ldt-cc")
    wrapped = clear_network(load_case(single_node_doc()), "ldt-cc")
    rel = abs(wrapped.scheduled_cost - single.scheduled_cost) / single.scheduled_cost
    c.add("one-node wrapper", rel <= 1e-8, f"{rel:.1e}")
    doc = three_node_doc()
    case = load_case(doc)
    for model in ("ldt-cc", "cc"):
        r = clear_network(case, model)
        c.add(f"{model} congested", abs(r.flows["a-b"]) >= 40.0 - 1e-6, r.flows["a-b"])
        fd = nodal_fd(doc, model, clear_network)
        worst = max(abs(r.lmp[n] - fd[n]) for n in fd)
        c.add(f"{model} lmp levels vs finite differences", worst <= 1e-3, f"max error {worst:.4f}")
        nodes = list(fd)
        spread = max(abs((r.lmp[i] - r.lmp[j]) - (fd[i] - fd[j])) for i in nodes for j in nodes)
        c.add(f"{model} lmp spreads vs finite differences", spread <= 1e-3, f"max error {spread:.1e}")
    c.close(8)


def test_criterion_09_out_of_sample(isone8):
    c = Checks()
    start = time.perf_counter()
    reports = {}
    for model in ("cc", "ldt-cc", "ldt-wcc"):
        r = clear_network(isone8, model)
        reports[model] = evaluate(r, isone8, 3000, 7)
    elapsed = time.perf_counter() - start
    production = {m: round(evaluate(clear_network(isone8, m), isone8, 3000, 7, reserve_charge=False).mean_cost)
                  for m in reports}
    c.notes.append(f"means without the fixed extreme-reserve charge {production}")
    mean = {m: rep.mean_cost for m, rep in reports.items()}
    std = {m: rep.std_cost for m, rep in reports.items()}
    c.add("mean ldt-wcc < ldt-cc < cc", mean["ldt-wcc"] < mean["ldt-cc"] < mean["cc"],
          {m: round(v) for m, v in mean.items()})
    c.add("cc has the largest std", std["cc"] > max(std["ldt-cc"], std["ldt-wcc"]),
          {m: round(v) for m, v in std.items()})
    c.add("runtime < 60 s", elapsed < 60.0, f"{elapsed:.1f} s")
    c.close(9)


def test_criterion_10_cost_ordering():
    c = Checks()
    bad = []
    for seed in range(50):
        case = random_case(seed)
        cost = {m: clear(case, m).scheduled_cost for m in ("cc", "ldt-wcc", "ldt-cc")}
        slack = 1e-6 * max(cost.values())
        if not (cost["cc"] <= cost["ldt-wcc"] + slack and cost["ldt-wcc"] <= cost["ldt-cc"] + slack):
            bad.append(f"seed {seed}: {cost['cc']:.2f}/{cost['ldt-wcc']:.2f}/{cost['ldt-cc']:.2f}")
    c.add("cc <= ldt-wcc <= ldt-cc on 50 cases", not bad, ", ".join(bad) or None)
    c.close(10)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
