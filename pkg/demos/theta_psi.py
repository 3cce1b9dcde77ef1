"""Theta transform of the singular solution and its split into psi+ and psi-.

Both parts should behave like supermartingales and psi- should fade
toward zero near the terminal time.
"""
import numpy as np
from _common import scenario

from bsdelab import bsde_solver as S, cli_io, theta_transform as TT

sc = scenario("toy_q3.json")
bundle = cli_io._bundle(sc)
sol = S.solve_truncated(sc.gen, sc.tc, bundle, sc.basis, sc.n_list[-1])
tm = TT.ThetaMap.from_generator(sc.gen)

x = np.array([0.0, 1.0, 10.0, 50.0])
print("Theta at", x, "->", np.round(TT.theta(tm, x), 6))

est = TT.psi_estimate(sol, tm, sc.tc, bundle)
for name, series in (("psi+", est.psi_plus), ("psi-", est.psi_minus)):
    rep = TT.supermartingale_test(series, bundle, sc.basis, series_se=est.se)
    print(f"{name}: violation rate {rep.violation_rate:.3f}")

bound = TT.neg_part_bound(sc.gen, 1, float(bundle.grid[-2]), tm=tm)
print("mean psi- over the last grid times:", np.round(est.mean("psi_minus")[-6:-1], 4))
print(f"bound at the last interior time: {bound:.4f}")
