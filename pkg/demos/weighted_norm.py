"""Weighted Z/U norm across truncation levels when rho < 1.

The weight (T-t)^rho tames the growth of Z and U near T, so the norm
should not drift with n.
"""
from _common import scenario

from bsdelab import bsde_solver as S, cli_io, terminal_behavior as TB

sc = scenario("toy_q4_weighted.json")
bundle = cli_io._bundle(sc)
sols = [S.solve_truncated(sc.gen, sc.tc, bundle, sc.basis, n) for n in sc.n_list]
rep = TB.weighted_zu_norm(sols, sc.rho, sc.ell, sc.gen.jumps, eta=sc.eta)

print(f"rho = {sc.rho:.3f}")
for n, v, se in zip(rep.n_levels, rep.values, rep.se):
    print(f"n={n:4g}  {v:.4f} +- {se:.4f}")
print(f"max/min ratio {rep.ratio:.3f}")
