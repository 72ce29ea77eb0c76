"""Where the prices come from, and why nobody wants to deviate from them.

Run: python3 demos/02_prices_and_equilibrium.py
"""

from ldtmarket import bundled_case_path, clear, load_case
from ldtmarket.pricing import closed_form_prices_ldtcc, extract_prices, verify_equilibrium

case = load_case(bundled_case_path("illustrative"))
result = clear(case, "ldt-cc")

# Prices are negated balance and reserve multipliers, cross-checked
# against each unit's stationarity conditions.
duals = extract_prices(result)
print(f"from duals:       pi {duals.pi:8.3f}  rho {duals.rho:8.3f}  chi {duals.chi:8.3f}")

# The same prices follow from solving each unit's optimality conditions
# for p and alpha and substituting into the market-clearing rows.
closed = closed_form_prices_ldtcc(result, case)
print(f"from closed form: pi {closed.pi:8.3f}  rho {closed.rho:8.3f}  chi {closed.chi:8.3f}")

# Each unit, facing these prices alone, picks exactly its dispatch.
report = verify_equilibrium(result, duals, case)
print("\nbest response at the posted prices:")
for gid, chk in report.producers.items():
    print(f"  {gid}: profit {chk.dispatch_profit:9.2f}, best {chk.best_profit:9.2f}, gap {chk.gap:.1e}")
print(f"equilibrium holds: {report.ok}")

# Nudge the energy price up by one dollar and the marginal unit wants
# to produce more than its dispatch.
nudged = verify_equilibrium(result, duals.shifted(d_pi=1.0), case)
print("\nwith pi + 1 $/MWh:")
for line in nudged.violations:
    print(f"  {line}")
