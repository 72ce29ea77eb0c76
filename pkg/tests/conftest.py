import numpy as np
import pytest

from ldtmarket import bundled_case_path, clear, load_case

MODELS = ("cc", "wcc", "ldt-cc", "ldt-wcc")

# Filled by the acceptance suite, printed once at the end of the run.
CRITERIA: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def illustrative():
    return load_case(bundled_case_path("illustrative"))


@pytest.fixture(scope="session")
def isone8():
    return load_case(bundled_case_path("isone8"))


@pytest.fixture(scope="session")
def cleared(illustrative):
    return {k: clear(illustrative, k) for k in MODELS}


def illustrative_doc():
    import json

    return json.loads(bundled_case_path("illustrative").read_text())


def three_node_doc(f_max=40.0):
    """Illustrative units spread over a triangle with one tight line."""
    doc = illustrative_doc()
    doc.pop("demand")
    doc["generators"] = [dict(g, node=n) for g, n in zip(doc["generators"], ["a", "b", "c"])]
    doc["wind"] = [
        {"id": "Wa", "node": "a", "forecast": 100.0, "std": 40.0},
        {"id": "Wc", "node": "c", "forecast": 50.0, "std": 30.0},
    ]
    doc["network"] = {
        "nodes": [{"id": "a", "demand": 60.0}, {"id": "b", "demand": 90.0}, {"id": "c", "demand": 120.0}],
        "lines": [
            {"from": "a", "to": "b", "susceptance": 400.0, "f_max": f_max},
            {"from": "b", "to": "c", "susceptance": 300.0, "f_max": 200.0},
            {"from": "a", "to": "c", "susceptance": 250.0, "f_max": 200.0},
        ],
    }
    return doc


def single_node_doc():
    doc = illustrative_doc()
    doc.pop("demand")
    doc["generators"] = [dict(g, node="n1") for g in doc["generators"]]
    doc["wind"] = [dict(w, node="n1") for w in doc["wind"]]
    doc["network"] = {"nodes": [{"id": "n1", "demand": 270.0}], "lines": []}
    return doc


def random_case(seed):
    """Random single-bus case with 3 to 8 units and a feasible large-deviation bound."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9))
    pmax = rng.uniform(50.0, 200.0, n)
    total = float(pmax.sum())
    net = rng.uniform(0.5, 0.8) * total
    sigma = (total - net) / rng.uniform(4.2, 6.0)
    wind = rng.uniform(0.2, 0.5) * net
    gens = [
        {
            "id": f"G{i + 1}",
            "p_max": float(pmax[i]),
            "c2": float(rng.uniform(0.005, 0.06)),
            "c1": float(rng.uniform(5.0, 60.0)),
            "c_beta": float(rng.uniform(100.0, 800.0)),
            "epsilon": 0.05,
            "epsilon_ext": 5e-5,
        }
        for i in range(n)
    ]
    return load_case(
        {
            "name": f"random-{seed}",
            "generators": gens,
            "wind": [{"forecast": float(wind), "std": float(sigma)}],
            "demand": float(net + wind),
            "options": {"omega_eps_rule": {"kind": "fraction_of_omega_star", "kappa": 0.75}},
        }
    )


def two_node_doc(f_max=30.0):
    """Radial two-bus case: cheap units at ``a``, load and an expensive unit at ``b``."""
    doc = three_node_doc()
    doc["generators"][2]["node"] = "b"
    doc["wind"] = [{"id": "Wa", "node": "a", "forecast": 100.0, "std": 50.0}]
    doc["network"] = {
        "nodes": [{"id": "a", "demand": 90.0}, {"id": "b", "demand": 110.0}],
        "lines": [{"from": "a", "to": "b", "susceptance": 400.0, "f_max": f_max}],
    }
    return doc


def nodal_fd(doc, kind, clear_fn, h=1e-3):
    """Central difference of the scheduled cost in each node's demand."""
    import copy

    out = {}
    for k, node in enumerate(doc["network"]["nodes"]):
        costs = []
        for step in (h, -h):
            d = copy.deepcopy(doc)
            d["network"]["nodes"][k]["demand"] += step
            costs.append(clear_fn(load_case(d), kind).scheduled_cost)
        out[node["id"]] = (costs[0] - costs[1]) / (2 * h)
    return out
