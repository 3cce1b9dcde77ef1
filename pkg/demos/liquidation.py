"""Optimal liquidation: the feedback policy read off the BSDE against simple alternatives.

Its simulated cost should match Y0 |x|^p, and scaling it up or down
should cost more.
"""
from _common import scenario

from bsdelab import bsde_solver as S, cli_io, liquidation as L

sc = scenario("liquidation.json")
bundle = cli_io._bundle(sc)
n = float(sc.control["n"])
sol = S.solve_truncated(sc.gen, sc.tc, bundle, sc.basis, n)
pol = L.feedback_policy(sol, sc.gen)
policies = [pol, L.twap_policy(bundle.grid, bundle.M, bundle.K)]
policies += [L.perturbed_policy(pol, f) for f in sc.control["factors"]]
runs = [L.run_controlled(p, bundle, sc.gen, sc.tc, n) for p in policies]
cmp_ = L.compare_policies(runs, sol.y0)

print(f"Y0 = {sol.y0:.4f}")
for r, d, se in zip(runs, cmp_.paired_diff, cmp_.paired_se):
    print(f"{r.policy:>22}: cost {r.cost:.4f}  minus feedback {d:+.4f} +- {se:.4f}")
print("value matches:", cmp_.value_matches)
