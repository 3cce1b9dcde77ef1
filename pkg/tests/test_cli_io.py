import json

import numpy as np
import pytest

from bsdelab import cli_io as C
from bsdelab import forward_sde as F
from bsdelab import generator as G
from bsdelab import persistence as P
from bsdelab import bsde_solver as S
from bsdelab.regression import RegressionBasis

SMALL = {"N": 20, "M": 2000, "seed": 3, "basis": {"kind": "partition", "bins": 10}}

TOY = {
    "name": "toy",
    "generator": {"family": "toy", "q": 3.0},
    "sde": {"x0": [0.3], "diffusion": 0.5},
    "terminal": {"kind": "singular", "set": {"type": "halfline", "threshold": 0.0, "nu": 0.4},
                 "finite": {"kind": "abs", "a": 1.0, "b": 1.0}},
    "numerics": dict(SMALL, n_list=[1, 4, 16]),
    "experiments": ["psi", "weighted_norm"],
}


def write(tmp_path, obj, name="scenario.json"):
    f = tmp_path / name
    f.write_text(json.dumps(obj))
    return f


def run(tmp_path, cmd, obj, out="out", **kw):
    return C.run(cmd, write(tmp_path, obj), tmp_path / out, **kw)


class TestCheck:
    def test_toy_passes(self, tmp_path):
        assert run(tmp_path, "check", TOY) == C.EXIT_OK
        rows = (tmp_path / "out" / "conditions.csv").read_text().splitlines()
        assert rows[0] == "condition,tag,verdict"
        assert all(r.endswith(("holds", "holds-with-bound")) for r in rows[1:])

    def test_non_integrable_source(self, tmp_path, capsys):
        sc = {"generator": {"family": "power_singularity", "q": 1.0, "varsigma": 0.0, "varpi": 1.6}}
        assert run(tmp_path, "check", sc) == C.EXIT_PRECONDITION
        err = capsys.readouterr().err
        assert "A8" in err
        man = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert "A8" in man["runs"]["check"]["verdicts"]["failed"]

    def test_require_subset(self, tmp_path):
        sc = {"generator": {"family": "toy", "q": 1.0}, "require": ["A", "B"]}
        assert run(tmp_path, "check", sc) == C.EXIT_OK
        sc["require"] = ["A9"]
        assert run(tmp_path, "check", sc) == C.EXIT_PRECONDITION
        sc["require"] = ["nonsense"]
        assert run(tmp_path, "check", sc) == C.EXIT_SCHEMA


class TestScenarioErrors:
    @pytest.mark.parametrize("bad", [
        {"generator": {"family": "cubic", "q": 1.0}},
        {"generator": {"family": "toy", "q": -1.0}},
        {"generator": {"family": "toy", "q": 1.0}, "extra": 1},
        {"generator": {"family": "power_singularity", "q": 1.0}},
        {"generator": {"family": "toy", "q": 1.0}, "numerics": {"n_list": [4, 1]}},
        {"generator": {"family": "toy", "q": 1.0}, "terminal": {"kind": "singular"}},
    ])
    def test_schema(self, tmp_path, bad):
        assert run(tmp_path, "check", bad) == C.EXIT_SCHEMA

    def test_unreadable(self, tmp_path):
        assert C.run("check", tmp_path / "missing.json", tmp_path / "o") == C.EXIT_SCHEMA
        f = tmp_path / "broken.json"
        f.write_text("{not json")
        assert C.run("check", f, tmp_path / "o") == C.EXIT_SCHEMA

    def test_derived_values_recomputed(self):
        sc = C.build_scenario({"generator": {"family": "toy", "q": 4.0},
                               "numerics": {"ell": 1.1, "eta": 0.05}})
        assert sc.rho == pytest.approx(G.rho(4.0, 1.1, 0.05))
        assert sc.gen.p == pytest.approx(1.25)


def test_numeric_abort(tmp_path):
    sc = {"generator": {"family": "toy", "q": 2.0}, "sde": {"x0": [1e308], "drift": 1e308},
          "numerics": {"N": 5, "M": 50}}
    with np.errstate(over="ignore", invalid="ignore"):
        assert run(tmp_path, "simulate", sc) == C.EXIT_NUMERIC


def test_basis_size_is_a_precondition(tmp_path):
    sc = dict(TOY, numerics={"N": 5, "M": 50, "basis": {"kind": "partition", "bins": 40}})
    assert run(tmp_path, "solve", sc) == C.EXIT_PRECONDITION


class TestDeterminism:
    def test_repeat_and_threads(self, tmp_path, monkeypatch):
        digests = []
        for k, threads in enumerate(("1", "4")):
            monkeypatch.setenv("BSDE_LAB_THREADS", threads)
            for cmd in ("simulate", "solve"):
                assert run(tmp_path, cmd, TOY, out=f"o{k}") == C.EXIT_OK
            digests.append(json.loads((tmp_path / f"o{k}" / "manifest.json").read_text())["files"])
        assert digests[0] == digests[1]
        assert {"bundle.bin", "paths.csv", "solution.bin", "solution.csv"} <= set(digests[0])

    def test_seed_override_changes_output(self, tmp_path):
        run(tmp_path, "simulate", TOY, out="a")
        run(tmp_path, "simulate", TOY, out="b", seed=99)
        da = json.loads((tmp_path / "a" / "manifest.json").read_text())
        db = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert da["files"]["paths.csv"] != db["files"]["paths.csv"]
        assert db["seed"] == 99


def test_pipeline_and_report(tmp_path):
    for cmd in ("check", "sweep", "verify", "report"):
        assert run(tmp_path, cmd, TOY) == C.EXIT_OK, cmd
    out = tmp_path / "out"
    rep = json.loads((out / "report.json").read_text())
    assert {"conditions", "sweep", "verify"} <= set(rep)
    assert rep["verify"]["weighted_norm"]["tag"]
    csv = (out / "report.csv").read_text()
    assert "psi" in csv and "weighted_norm" in csv
    sweep = (out / "sweep.csv").read_text().splitlines()
    assert sweep[0].startswith("t,mean_y_n1,mean_y_n4,mean_y_n16")


def test_report_needs_inputs(tmp_path):
    assert run(tmp_path, "report", TOY) == C.EXIT_SCHEMA


def test_blowup_verify(tmp_path):
    sc = {"generator": {"family": "power_singularity", "q": 3.0, "varsigma": 0.0, "varpi": 1.0},
          "experiments": ["blowup"]}
    assert run(tmp_path, "verify", sc) == C.EXIT_OK
    d = json.loads((tmp_path / "out" / "verify.json").read_text())
    assert d["blowup"]["verdict"] == "holds"


def test_control_command(tmp_path):
    sc = {"generator": {"family": "control", "q": 1.0, "alpha": 1.0},
          "terminal": {"kind": "constant", "value": "inf"},
          "numerics": {"N": 100, "M": 20, "basis": {"kind": "partition", "bins": 1}},
          "control": {"n": 1e6, "factors": [0.8, 1.25]}}
    assert run(tmp_path, "control", sc) == C.EXIT_OK
    d = json.loads((tmp_path / "out" / "control.json").read_text())
    assert d["value_matches"] and d["reference_best"]
    assert d["costs"][1] == pytest.approx(1.0)
    assert run(tmp_path, "control", TOY, out="x") == C.EXIT_SCHEMA


def test_main_entry(tmp_path, capsys):
    f = write(tmp_path, TOY)
    assert C.main(["check", "--scenario", str(f), "--out", str(tmp_path / "m")]) == 0
    assert json.loads(capsys.readouterr().out)["A9"] == "holds"


class TestPersistence:
    def test_bundle_round_trip(self, tmp_path):
        jm = G.JumpMeasure([0.0], [1.0])
        b = F.simulate(F.SdeSpec(1, [0.1], diffusion=0.3, jump=-0.2, jumps=jm), F.make_grid(1.0, 7), 30, 5)
        back = P.load_bundle(P.save_bundle(b, tmp_path / "b.bin"))
        for name in ("grid", "paths", "brownian_increments", "jump_counts"):
            assert np.array_equal(getattr(b, name), getattr(back, name))
        assert back.seed == 5 and (tmp_path / "b.bin").read_bytes()[:8] == P.MAGIC

    def test_solution_round_trip(self, tmp_path, flat_bundle, one_bin):
        sol = S.solve_truncated(G.toy(2.0), S.TerminalCondition(lambda x: np.full(len(x), 3.0)),
                                flat_bundle, one_bin, 3.0)
        back = P.load_solution(P.save_solution(sol, tmp_path / "s.bin"))
        assert back.n == 3.0 and np.array_equal(back.y, sol.y)

    def test_wrong_kind(self, tmp_path, flat_bundle):
        P.save_bundle(flat_bundle, tmp_path / "b.bin")
        with pytest.raises(ValueError):
            P.load_solution(tmp_path / "b.bin")
        (tmp_path / "junk.bin").write_bytes(b"12345678" * 10)
        with pytest.raises(ValueError):
            P.load_bundle(tmp_path / "junk.bin")

    def test_json_handles_non_finite(self, tmp_path):
        P.write_json(tmp_path / "x.json", {"a": float("inf"), "b": np.float64(np.nan), "c": np.arange(2)})
        assert json.loads((tmp_path / "x.json").read_text()) == {"a": "inf", "b": "nan", "c": [0, 1]}
