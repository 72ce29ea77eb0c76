"""Nodal prices on a small meshed network with one congested line.

Run: python3 demos/03_network_prices.py
"""

import copy
import json

from ldtmarket import bundled_case_path, load_case
from ldtmarket.network import clear_locational, clear_network
from ldtmarket.pricing import extract_prices, settle

doc = json.loads(bundled_case_path("illustrative").read_text())
doc.pop("demand")
doc["generators"] = [dict(g, node=n) for g, n in zip(doc["generators"], "abc")]
doc["wind"] = [
    {"id": "Wa", "node": "a", "forecast": 100.0, "std": 40.0},
    {"id": "Wc", "node": "c", "forecast": 50.0, "std": 30.0},
]
doc["network"] = {
    "nodes": [{"id": "a", "demand": 60.0}, {"id": "b", "demand": 90.0}, {"id": "c", "demand": 120.0}],
    "lines": [
        {"from": "a", "to": "b", "susceptance": 400.0, "f_max": 40.0},
        {"from": "b", "to": "c", "susceptance": 300.0, "f_max": 200.0},
        {"from": "a", "to": "c", "susceptance": 250.0, "f_max": 200.0},
    ],
}
case = load_case(doc)

result = clear_network(case, "cc")
print("flows (MW):", {k: round(v, 2) for k, v in result.flows.items()})
print("nodal prices ($/MWh):", {k: round(v, 3) for k, v in result.lmp.items()})

# A nodal price is what one more MW of demand at that node costs the system.
h = 1e-3
for k, node in enumerate(doc["network"]["nodes"]):
    costs = []
    for step in (h, -h):
        d = copy.deepcopy(doc)
        d["network"]["nodes"][k]["demand"] += step
        costs.append(clear_network(load_case(d), "cc").scheduled_cost)
    print(f"  node {node['id']}: price {result.lmp[node['id']]:8.3f}, finite difference {(costs[0] - costs[1]) / (2 * h):8.3f}")

s = settle(result, extract_prices(result), case)
print(f"\ncongestion rent collected: {s.congestion_rent:.2f} $")

# With reserve priced per wind node, each node gets its own reserve prices.
loc = clear_locational(case)
pr = extract_prices(loc)
print("\nlocational reserve prices:")
for i in pr.rho:
    print(f"  wind node {i}: rho {pr.rho[i]:8.3f}  chi {pr.chi[i]:8.3f}  dominant point {loc.omega_star_nodal[i]:.1f} MW")
