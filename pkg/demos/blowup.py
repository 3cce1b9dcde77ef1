"""A source term that is not integrable at T forces blow-up even with zero terminal data."""
from bsdelab import generator as G, terminal_behavior as TB

for varpi in (1.0, 0.5):
    rep = TB.blowup_test(G.power_singularity(3.0, 0.0, varpi))
    vals = ", ".join(f"{v:.3f}" for v in rep.values)
    print(f"varpi={varpi}: Y at t={rep.t_probe:.2f} for n={rep.n_levels}: {vals}")
    print(f"  growth per decade {[round(g, 2) for g in rep.growth]}, lower bound holds: {rep.lower_bound_holds}")
