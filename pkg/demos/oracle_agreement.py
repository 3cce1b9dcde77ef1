"""Deterministic toy problem: the regression solver against the closed-form ODE solution.

With no noise every path follows the same trajectory, so the only error is
the time stepping.  The exact power-flow step makes that error tiny.
"""
import numpy as np

from bsdelab import bsde_solver as S, forward_sde as F, generator as G
from bsdelab.regression import RegressionBasis

bundle = F.simulate(F.SdeSpec(1, [0.0]), F.make_grid(1.0, 200), 200, seed=1)
basis = RegressionBasis("partition", bins=1)

print(f"{'q':>4} {'n':>6} {'Y0 solver':>12} {'Y0 exact':>12} {'rel err':>9}")
for q in (1.0, 3.0, 4.0):
    gen = G.toy(q)
    for n in (1.0, 10.0, 100.0):
        tc = S.TerminalCondition(lambda x, n=n: np.full(len(x), n))
        y0 = S.solve_truncated(gen, tc, bundle, basis, n).y0
        exact = float(S.ode_oracle(gen, n)(0.0))
        print(f"{q:4g} {n:6g} {y0:12.8f} {exact:12.8f} {abs(y0 / exact - 1):9.1e}")
