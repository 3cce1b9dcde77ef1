"""Scenario files, experiment orchestration and the ``bsde-lab`` command line.

Usage::

    bsde-lab <check|simulate|solve|sweep|verify|control|report> --scenario FILE [--out DIR] [--seed U64]

Exit codes: 0 ok, 2 invalid scenario, 3 failed precondition, 4 numeric abort.
"""
from __future__ import annotations

import argparse
import copy
import datetime as _dt
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import __version__
from . import generator as G
from . import liquidation as L
from . import persistence as P
from . import terminal_behavior as TB
from . import theta_transform as TT
from .bsde_solver import (PreconditionError, SolverError, TerminalCondition, singular_terminal,
                          solve_singular_sequence, solve_truncated)
from .forward_sde import Ball, ComplementOfBall, HalfLine, SdeSpec, SimulationError, make_grid, simulate
from .regression import BasisError, RegressionBasis

log = logging.getLogger("bsdelab")

EXIT_OK, EXIT_SCHEMA, EXIT_PRECONDITION, EXIT_NUMERIC = 0, 2, 3, 4
DIVERGENCE_LEVELS = (10.0, 100.0, 1000.0)
DIVERGENCE_REFINEMENT = 6.0
COMMANDS = ("check", "simulate", "solve", "sweep", "verify", "control", "report")


class ScenarioError(ValueError):
    pass


class PreconditionFailed(RuntimeError):
    def __init__(self, conditions):
        super().__init__("failed conditions: " + ", ".join(conditions))
        self.conditions = list(conditions)


def load_schema() -> dict:
    return json.loads(resources.files("bsdelab").joinpath("scenario.schema.json").read_text())


def _ext(v) -> float:
    return math.inf if isinstance(v, str) else float(v)


@dataclass
class Scenario:
    raw: dict
    name: str
    gen: G.GeneratorSpec
    sde: SdeSpec
    tc: TerminalCondition
    N: int = 100
    refinement: float = 1.0
    M: int = 10000
    seed: int = 1
    basis: RegressionBasis = field(default_factory=RegressionBasis)
    n: float = 100.0
    n_list: list = field(default_factory=lambda: [1.0, 4.0, 16.0, 64.0])
    epsilon: Optional[float] = None
    gamma: Optional[float] = None
    ell: float = 1.1
    eta: float = 0.05
    experiments: list = field(default_factory=list)
    control: dict = field(default_factory=dict)
    require: Optional[list] = None

    @property
    def rho(self) -> float:
        # recomputed here, never read from the file
        return G.rho(self.gen.q, self.ell, self.eta)

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()

    def grid(self):
        return make_grid(self.gen.T, self.N, self.refinement)


def _finite_part(spec):
    if isinstance(spec, (int, float)):
        return float(spec)
    a, b, sc = float(spec.get("a", 0.0)), float(spec.get("b", 1.0)), float(spec.get("scale", 1.0))
    if spec["kind"] == "constant":
        return a
    if spec["kind"] == "tanh":
        return lambda x: a + b * np.tanh(x[:, 0] / sc)
    return lambda x: a + b * np.abs(x[:, 0]) / sc


def _shape(spec, d):
    kind = spec["type"]
    if kind == "halfline":
        if d != 1:
            raise ScenarioError("a half-line set needs a one-dimensional factor")
        return HalfLine(float(spec.get("threshold", 0.0)), side=spec.get("side", "below"), nu=spec["nu"])
    if "center" not in spec or "radius" not in spec:
        raise ScenarioError("ball sets need 'center' and 'radius'")
    if len(spec["center"]) != d:
        raise ScenarioError("ball centre dimension differs from the factor dimension")
    cls = Ball if kind == "ball" else ComplementOfBall
    return cls(tuple(spec["center"]), float(spec["radius"]), nu=spec["nu"])


def build_scenario(raw: dict, seed: Optional[int] = None) -> Scenario:
    """Validate ``raw`` against the schema and build the model objects."""
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"{path}: {exc.message}") from None
    raw = copy.deepcopy(raw)
    num = raw.setdefault("numerics", {})
    if seed is not None:
        num["seed"] = int(seed)
    gspec = raw["generator"]
    jm = G.JumpMeasure.empty()
    if "jumps" in raw:
        try:
            jm = G.JumpMeasure(raw["jumps"]["marks"], raw["jumps"]["weights"])
        except ValueError as exc:
            raise ScenarioError(f"jumps: {exc}") from None
    ell = float(num.get("ell", gspec.get("ell", 1.1)))
    eta = float(num.get("eta", gspec.get("eta", 0.05)))
    q, T = float(gspec["q"]), float(gspec.get("T", 1.0))
    fam = gspec["family"]
    if fam == "toy":
        gen = G.toy(q, T, ell=ell, eta=eta, jumps=jm)
    elif fam == "power_singularity":
        for k in ("varsigma", "varpi"):
            if k not in gspec:
                raise ScenarioError(f"generator: power_singularity needs '{k}'")
        gen = G.power_singularity(q, float(gspec["varsigma"]), float(gspec["varpi"]), T,
                                  ell=ell, eta=eta, jumps=jm)
    else:
        beta = gspec.get("beta", "inf")
        beta = [_ext(b) for b in beta] if isinstance(beta, list) else _ext(beta)
        if isinstance(beta, list) and len(beta) != jm.size:
            raise ScenarioError("generator: one beta per jump mark expected")
        gen = G.control(q, jm, alpha=float(gspec.get("alpha", 1.0)), beta=beta,
                        gamma=float(gspec.get("gamma", 0.0)), T=T, ell=ell, eta=eta)
    s = raw.get("sde", {"x0": [0.0]})
    d = len(s["x0"])
    jump = s.get("jump", 0.0)
    sde = SdeSpec(d, s["x0"], drift=s.get("drift", 0.0), diffusion=s.get("diffusion", 0.0),
                  jump=jump, jumps=jm, K_h=float(np.max(np.abs(jump))) if jm.size else 0.0)
    t = raw.get("terminal", {"kind": "constant", "value": "inf"})
    if t["kind"] == "singular":
        if "set" not in t:
            raise ScenarioError("terminal: a singular terminal needs 'set'")
        tc = singular_terminal(_shape(t["set"], d), _finite_part(t.get("finite", 0.0)))
    elif t["kind"] == "bounded":
        fin = _finite_part(t.get("finite", 0.0))
        tc = TerminalCondition(fin if callable(fin) else (lambda x, c=fin: np.full(len(x), c)))
    else:
        val = _ext(t.get("value", "inf"))
        tc = TerminalCondition(lambda x, c=val: np.full(len(x), c))
    b = num.get("basis", {})
    basis = RegressionBasis(b.get("kind", "partition"), int(b.get("degree", 3)), int(b.get("bins", 40)))
    n_list = [float(v) for v in num.get("n_list", [1, 4, 16, 64])]
    if any(y < x for x, y in zip(n_list, n_list[1:])):
        raise ScenarioError("numerics/n_list: must be ascending")
    return Scenario(raw, raw.get("name", "scenario"), gen, sde, tc, int(num.get("N", 100)),
                    float(num.get("refinement", 1.0)), int(num.get("M", 10000)),
                    int(num.get("seed", 1)), basis, _ext(num.get("n", n_list[-1])), n_list,
                    num.get("epsilon"), num.get("gamma"), ell, eta, list(raw.get("experiments", [])),
                    dict(raw.get("control", {})), raw.get("require"))


def load_scenario(path, seed: Optional[int] = None) -> Scenario:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from None
    return build_scenario(raw, seed)


# ---------------------------------------------------------------------------
# commands; each returns a dict of verdicts and writes its artifacts to ``out``


def cmd_check(sc: Scenario, out: Path) -> dict:
    rep = G.check_conditions(sc.gen, zdim=sc.sde.dim)
    d = rep.to_dict()
    d["rho"] = sc.rho
    P.write_json(out / "conditions.json", d)
    P.write_csv(out / "conditions.csv", ["condition", "tag", "verdict"],
                [(k, v.tag, v.verdict) for k, v in rep.verdicts.items()])
    names = sc.require if sc.require is not None else list(rep.verdicts)
    unknown = [c for c in names if c not in rep.verdicts]
    if unknown:
        raise ScenarioError("require: unknown conditions " + ", ".join(unknown))
    failing = [c for c in names if rep.verdicts[c].verdict == "fails"]
    verdicts = {k: v.verdict for k, v in rep.verdicts.items()}
    if failing:
        raise PreconditionFailed(failing)
    return verdicts


def _bundle(sc: Scenario):
    return simulate(sc.sde, sc.grid(), sc.M, sc.seed)


def cmd_simulate(sc: Scenario, out: Path) -> dict:
    b = _bundle(sc)
    P.save_bundle(b, out / "bundle.bin")
    mean, sd = b.paths.mean(axis=0), b.paths.std(axis=0)
    jumps = np.cumsum(b.jump_counts.sum(axis=2), axis=1).mean(axis=0) if b.K else np.zeros(b.N)
    jumps = np.concatenate([[0.0], jumps])
    hdr = ["t"] + [f"mean_x{j}" for j in range(b.d)] + [f"sd_x{j}" for j in range(b.d)] + ["mean_jumps"]
    P.write_csv(out / "paths.csv", hdr,
                [[t, *mean[i], *sd[i], jumps[i]] for i, t in enumerate(b.grid)])
    return {"M": b.M, "N": b.N, "d": b.d, "K": b.K, "seed": b.seed, "stream": b.stream_scheme}


def _solution_rows(sol):
    return [(t, sol.y[:, i].mean(), sol.y[:, i].std(), sol.se_y[:, i].mean(),
             sol.y[:, i].min(), sol.y[:, i].max()) for i, t in enumerate(sol.grid)]


def cmd_solve(sc: Scenario, out: Path) -> dict:
    b = _bundle(sc)
    sol = solve_truncated(sc.gen, sc.tc, b, sc.basis, sc.n)
    P.save_solution(sol, out / "solution.bin")
    P.write_csv(out / "solution.csv", ["t", "mean_y", "sd_y", "mean_se", "min_y", "max_y"],
                _solution_rows(sol))
    d = {"tag": "truncated solution", "n": sol.n, "y0": sol.y0, "flagged_steps": sol.flagged_steps,
         "clip_count": sol.clip_count, "clip_violation": sol.clip_violation}
    P.write_json(out / "solve.json", d)
    return {"y0": sol.y0}


def cmd_sweep(sc: Scenario, out: Path) -> dict:
    b = _bundle(sc)
    sols, diag = solve_singular_sequence(sc.gen, sc.tc, b, sc.basis, sc.n_list)
    d = diag.to_dict()
    P.write_json(out / "sweep.json", d)
    hdr = ["t"] + [f"mean_y_n{n:g}" for n in sc.n_list] + ["monotonicity_violation"]
    P.write_csv(out / "sweep.csv", hdr,
                [[t, *[s.y[:, i].mean() for s in sols], diag.monotonicity_per_time[i]]
                 for i, t in enumerate(b.grid)])
    return {"monotonicity_violation_rate": diag.monotonicity_violation_rate,
            "bound_violation_rate": diag.bound_violation_rate}


def _psi(sc, sols, b, out):
    sol = sols[-1]
    tm = TT.ThetaMap.from_generator(sc.gen)
    est = TT.psi_estimate(sol, tm, sc.tc, b)
    sm_plus = TT.supermartingale_test(est.psi_plus, b, sc.basis, series_se=est.se)
    sm_minus = TT.supermartingale_test(est.psi_minus, b, sc.basis, series_se=est.se)
    case = 1 if sc.gen.jumps.size == 0 or not np.any(sc.gen.vartheta) else 3
    try:
        bound = lambda t: TT.neg_part_bound(sc.gen, case, t, tm=tm)  # noqa: E731
        t_last = float(b.grid[-2])
        bval = bound(t_last)
    except ValueError as exc:
        bound, bval = None, None
        log.warning("no negative-part bound: %s", exc)
    m_minus = est.mean("psi_minus")
    se = est.mean_se("psi")
    rows = list(est.rows(bound))
    P.write_csv(out / "psi.csv", ["t", "psi", "psi_plus", "psi_minus", "se", "neg_bound"], rows)
    below = None if bval is None else bool(m_minus[-2] <= bval + 3 * se[-2])
    tail = m_minus[-6:-1]
    return {"tag": "psi decomposition", "n": sol.n, "case": case,
            "reconstruction_error": est.reconstruction_error(),
            "supermartingale_plus": sm_plus.to_dict(), "supermartingale_minus": sm_minus.to_dict(),
            "psi_minus_last": float(m_minus[-2]), "neg_part_bound": bval,
            "below_bound": below, "psi_minus_tail": tail.tolist(),
            "verdict": "holds" if sm_plus.passed and sm_minus.passed and below is not False else "fails"}


def cmd_verify(sc: Scenario, out: Path) -> dict:
    exps = sc.experiments or ["weighted_norm"]
    res = {}
    b = sols = None
    if any(e in exps for e in ("psi", "weighted_norm", "continuity")):
        b = _bundle(sc)
        sols = [solve_truncated(sc.gen, sc.tc, b, sc.basis, n) for n in sc.n_list]
    if "psi" in exps:
        res["psi"] = _psi(sc, sols, b, out)
    if "weighted_norm" in exps:
        wr = TB.weighted_zu_norm(sols, sc.rho, sc.ell, sc.gen.jumps, eta=sc.eta)
        d = wr.to_dict()
        asserted = sc.rho < 1
        d["asserted"] = asserted
        d["verdict"] = ("holds" if wr.bounded() else "fails") if asserted else "reported"
        res["weighted_norm"] = d
        P.write_csv(out / "weighted_norm.csv", ["n", "value", "se"],
                    list(zip(wr.n_levels, wr.values, wr.se)))
    if "continuity" in exps:
        # the on-set branch needs a last step far below n^-q, hence its own strongly refined grid
        db = simulate(sc.sde, make_grid(sc.gen.T, 2 * sc.N, DIVERGENCE_REFINEMENT), sc.M, sc.seed)
        dsols = [solve_truncated(sc.gen, sc.tc, db, sc.basis, n) for n in DIVERGENCE_LEVELS]
        rep = TB.continuity_test(sols, sc.tc, b, sc.epsilon, sc.gamma, gen=sc.gen, sde=sc.sde,
                                 divergence=(dsols, db))
        d = rep.to_dict()
        ok = all(r["monotone"] and r["final_within_3se"] for r in d["levels"])
        ok = ok and rep.crossings().get(100.0) is not None
        d["verdict"] = "holds" if ok else "fails"
        res["continuity"] = d
        P.write_csv(out / "continuity.csv",
                    ["t"] + [f"gap_n{n:g}" for n in rep.n_levels] + [f"se_n{n:g}" for n in rep.n_levels],
                    [[t, *[g[i] for g in rep.gap], *[s[i] for s in rep.gap_se]]
                     for i, t in enumerate(rep.grid)])
    if "blowup" in exps:
        rep = TB.blowup_test(sc.gen)
        d = rep.to_dict()
        ok = rep.diverges if rep.regime == "divergent" else rep.stabilizes
        d["verdict"] = "holds" if ok and rep.lower_bound_holds else "fails"
        res["blowup"] = d
        P.write_csv(out / "blowup.csv", ["n", "value", "lower_bound"],
                    list(zip(rep.n_levels, rep.values, rep.lower_bounds)))
    P.write_json(out / "verify.json", res)
    return {k: v.get("verdict") for k, v in res.items()}


def cmd_control(sc: Scenario, out: Path) -> dict:
    if sc.gen.family is not G.Family.CONTROL:
        raise ScenarioError("generator: the control command needs family 'control'")
    b = _bundle(sc)
    n = float(sc.control.get("n", sc.n))
    x0 = float(sc.control.get("x0", 1.0))
    factors = sc.control.get("factors", [0.5, 0.8, 1.25, 2.0])
    sol = solve_truncated(sc.gen, sc.tc, b, sc.basis, n)
    pol = L.feedback_policy(sol, sc.gen)
    pols = [pol, L.twap_policy(b.grid, b.M, b.K)] + [L.perturbed_policy(pol, f) for f in factors]
    runs = [L.run_controlled(p, b, sc.gen, sc.tc, n, x0) for p in pols]
    value = sol.y0 * abs(x0) ** sc.gen.p
    cmp_ = L.compare_policies(runs, value)
    d = cmp_.to_dict()
    d["feedback_check"] = pol.check
    d["components"] = {r.policy: r.components() for r in runs}
    d["perturbed_strictly_worse"] = cmp_.strictly_worse()[2:]
    d["verdict"] = "holds" if cmp_.value_matches and cmp_.reference_best() else "fails"
    P.write_json(out / "control.json", d)
    P.write_csv(out / "control.csv",
                ["policy", "rate", "state", "jump", "terminal", "total", "se", "paired_diff", "paired_se"],
                [(r.policy, *[r.components()[k] for k in ("rate", "state", "jump", "terminal", "total", "se")],
                  pd, ps) for r, pd, ps in zip(runs, cmp_.paired_diff, cmp_.paired_se)])
    return {"value_matches": cmp_.value_matches, "feedback_best": cmp_.reference_best()}


_REPORT_SOURCES = ("conditions.json", "solve.json", "sweep.json", "verify.json", "control.json")


def cmd_report(sc: Scenario, out: Path) -> dict:
    agg, rows = {"scenario": sc.name, "scenario_sha256": sc.digest}, []
    for name in _REPORT_SOURCES:
        f = out / name
        if not f.exists():
            continue
        data = json.loads(f.read_text())
        agg[f.stem] = data
        if f.stem == "conditions":
            for k, v in data.get("conditions", {}).items():
                if isinstance(v, dict) and "verdict" in v:
                    rows.append((f.stem, k, v.get("tag", ""), v["verdict"]))
        elif f.stem == "verify":
            for k, v in data.items():
                rows.append((f.stem, k, v.get("tag", ""), v.get("verdict", "")))
        else:
            rows.append((f.stem, "", data.get("tag", ""), data.get("verdict", "")))
    if len(agg) == 2:
        raise ScenarioError(f"nothing to report in {out}; run other commands first")
    P.write_json(out / "report.json", agg)
    P.write_csv(out / "report.csv", ["source", "item", "tag", "verdict"], rows)
    return {"sources": [k for k in agg if k not in ("scenario", "scenario_sha256")]}


_HANDLERS = {"check": cmd_check, "simulate": cmd_simulate, "solve": cmd_solve, "sweep": cmd_sweep,
             "verify": cmd_verify, "control": cmd_control, "report": cmd_report}


def _write_manifest(out: Path, sc: Optional[Scenario], command: str, started, status: int, verdicts):
    mf = out / "manifest.json"
    old = json.loads(mf.read_text()) if mf.exists() else {}
    files = {}
    for f in sorted(out.iterdir()):
        if f.is_file() and f.name != "manifest.json":
            files[f.name] = P.sha256_file(f)
    runs = old.get("runs", {})
    runs[command] = {"exit_status": status, "verdicts": verdicts,
                     "started": started, "finished": _now()}
    P.write_json(mf, {"tool": "bsde-lab", "version": __version__,
                      "scenario_sha256": sc.digest if sc else None,
                      "seed": sc.seed if sc else None, "files": files, "runs": runs})


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def run(command: str, scenario, out=None, seed: Optional[int] = None) -> int:
    """Run one subcommand; returns the process exit status."""
    if command not in _HANDLERS:
        print(f"unknown command {command!r}", file=sys.stderr)
        return EXIT_SCHEMA
    started = _now()
    out = Path(out or "bsde-lab-out")
    out.mkdir(parents=True, exist_ok=True)
    sc, verdicts, status = None, {}, EXIT_OK
    try:
        sc = scenario if isinstance(scenario, Scenario) else load_scenario(scenario, seed)
        verdicts = _HANDLERS[command](sc, out)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        status = EXIT_SCHEMA
    except PreconditionFailed as exc:
        print(f"precondition failed: {', '.join(exc.conditions)}", file=sys.stderr)
        verdicts, status = {"failed": exc.conditions}, EXIT_PRECONDITION
    except PreconditionError as exc:
        print(f"precondition failed: {exc.condition}: {exc}", file=sys.stderr)
        verdicts, status = {"failed": [exc.condition]}, EXIT_PRECONDITION
    except BasisError as exc:
        print(f"precondition failed: basis size: {exc}", file=sys.stderr)
        verdicts, status = {"failed": ["basis_size"]}, EXIT_PRECONDITION
    except (SolverError, SimulationError, L.ControlError, FloatingPointError, TT.ThetaDomainError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        status = EXIT_NUMERIC
    _write_manifest(out, sc, command, started, status, verdicts)
    if status == EXIT_OK:
        print(json.dumps(P.to_jsonable(verdicts), sort_keys=True))
    return status


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="bsde-lab", description="Singular-terminal BSDE laboratory")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--scenario", required=True, help="scenario JSON file")
    ap.add_argument("--out", default="bsde-lab-out", help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.command, args.scenario, args.out, args.seed)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
