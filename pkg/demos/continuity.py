"""Continuity in mean at T, off the singular set and on it.

Off the set, E[Y_t phi(X_t)] closes in on E[Phi phi(X_T)].  On the set,
the solution at the last step climbs with the truncation level.
"""
import numpy as np
from _common import scenario

from bsdelab import bsde_solver as S, cli_io, forward_sde as F, terminal_behavior as TB

sc = scenario("toy_q4_continuity.json")
bundle = cli_io._bundle(sc)
sols = [S.solve_truncated(sc.gen, sc.tc, bundle, sc.basis, n) for n in sc.n_list]
fine = F.simulate(sc.sde, F.make_grid(sc.gen.T, 2 * sc.N, cli_io.DIVERGENCE_REFINEMENT), sc.M, sc.seed)
on_set = [S.solve_truncated(sc.gen, sc.tc, fine, sc.basis, n) for n in cli_io.DIVERGENCE_LEVELS]

rep = TB.continuity_test(sols, sc.tc, bundle, gen=sc.gen, sde=sc.sde, divergence=(on_set, fine))
for row in rep.to_dict()["levels"]:
    print(f"n={row['n']:5g}  gaps {np.round(row['tail_gap'], 5)}  within 3 SE: {row['final_within_3se']}")
print("on-set values", np.round(rep.divergence_values, 1), "crossings", rep.crossings())
