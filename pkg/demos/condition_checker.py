"""Which parameter choices land in the regime where the continuity argument applies."""
from bsdelab import generator as G

for q in (1.0, 2.5, 4.0):
    print(f"toy q={q}: {G.check_conditions(G.toy(q))['continuity_regime'].verdict}")
for q, vs, vp in [(3.0, 0.0, 0.5), (3.0, 0.0, 1.0), (3.0, 1.0, 0.5), (5.0, 1.0, 0.9)]:
    rep = G.check_conditions(G.power_singularity(q, vs, vp))
    print(f"power q={q} varsigma={vs} varpi={vp}: {rep['continuity_regime'].verdict}"
          f"  failing: {rep.failing()}")
