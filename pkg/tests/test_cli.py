import csv
import time

import pytest

from ldas.bench import HEADER, BenchConfig, preprocess_share, run_bench, time_interleaved
from ldas.cli import main
from ldas.core import ContractViolation
from ldas.fem import load_density
from ldas.responses import EXPECTED_SOLVES, MODES, ProblemDefinition


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("flags", [[], ["--exact"]])
def test_analytical(capsys, flags):
    assert main(["analytical", *flags]) == 0
    out = capsys.readouterr().out
    assert "backend solves: 2 of 6 loads" in out
    assert "FAIL" not in out


def test_analytical_exact_prints_rationals(capsys):
    main(["analytical", "--exact"])
    out = capsys.readouterr().out
    assert "dg2/du3  -> (1, 3/2)" in out
    assert "f3       -> (4, 2)" in out


@pytest.mark.parametrize("mode, solves", [("ldas", 8), ("naive", 40)])
def test_mechanism_one_iteration(tmp_path, mode, solves):
    out = tmp_path / "it.csv"
    assert main(["mechanism", "--mesh", "40x40", "--mode", mode, "--iters", "1", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 1 and int(rows[0]["backend_solves"]) == solves


@pytest.mark.parametrize("mode", ["naive", "ldap", "signaware", "ldas"])
def test_mechanism_counts_stable_across_iterations(tmp_path, mode):
    out = tmp_path / "it.csv"
    assert main(["mechanism", "--mesh", "10x8", "--mode", mode, "--iters", "2", "--out", str(out)]) == 0
    counts = {int(r["backend_solves"]) for r in read_csv(out)}
    assert len(counts) == 1


def test_mechanism_outputs(tmp_path):
    it, resp, dens = tmp_path / "it.csv", tmp_path / "resp.csv", tmp_path / "rho.txt"
    code = main(["mechanism", "--mesh", "8x6", "--iters", "3", "--backend", "cg", "--out", str(it),
                 "--responses-out", str(resp), "--density-out", str(dens)])
    assert code == 0
    assert len(read_csv(it)) == 3
    rows = read_csv(resp)
    assert len(rows) == 3 * 32 and set(rows[0]) == {"iteration", "response", "value"}
    s, nx, ny = load_density(dens)
    assert (nx, ny) == (8, 6) and s.size == 48


def test_mechanism_stdout(capsys):
    assert main(["mechanism", "--mesh", "6x6", "--iters", "1"]) == 0
    captured = capsys.readouterr()
    assert captured.out.startswith("iteration,objective")
    assert "8 backend solves" in captured.err


@pytest.mark.parametrize("mesh", ["3x8", "40", "axb"])
def test_bad_mesh(mesh):
    with pytest.raises(SystemExit) as info:
        main(["mechanism", "--mesh", mesh])
    assert info.value.code == 2


def test_bench_csv(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--sizes", "8,6", "--repeats", "1", "--out", str(out)]) == 0
    with open(out) as fh:
        assert fh.readline().strip() == ",".join(HEADER)
    rows = read_csv(out)
    assert len(rows) == 2 * 2 * 4
    ns = [int(r["n"]) for r in rows]
    assert ns == sorted(ns)
    for r in rows:
        if r["mode"] == "naive":
            assert float(r["t_hat"]) == 1.0
        assert int(r["solves"]) == {"naive": 40, "ldap": 34, "signaware": 20, "ldas": 8}[r["mode"]]


def test_bench_stdout_single_mode(capsys):
    assert main(["bench", "--mesh", "6x6", "--backend", "direct", "--mode", "ldas", "--repeats", "1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == ",".join(HEADER)
    # naive is always added as the normalization reference
    assert [ln.split(",")[1] for ln in lines[1:]] == ["naive", "ldas"]


def test_bench_config_validation():
    with pytest.raises(ValueError):
        BenchConfig(repeats=0)
    with pytest.raises(ValueError):
        BenchConfig(modes=("fast",))
    assert BenchConfig(sizes=(40, 20)).sizes == (20, 40)


def test_preprocess_share():
    rows = run_bench(BenchConfig(sizes=(6,), backends=("direct",), repeats=1))
    share = preprocess_share(rows, rows[0].n, "direct")
    assert 0 < share < 1


@pytest.mark.parametrize("backend", ["direct", "cg"])
def test_interleaved_timing(backend):
    problem = ProblemDefinition.default(10)
    system = problem.assemble(problem.filter(problem.initial_design()))
    t0 = time.perf_counter()
    timed = time_interleaved(problem, system, list(MODES), backend)
    wall = time.perf_counter() - t0
    assert set(timed) == set(MODES)
    for mode, (total, ledger) in timed.items():
        assert ledger.backend_solves == EXPECTED_SOLVES[mode] and ledger.balanced
        assert 0 < ledger.solve_seconds and ledger.preprocess_seconds + ledger.solve_seconds <= total
    # a mode is only timed while it holds the turn, so the shares add up to at most the wall time
    assert sum(total for total, _ in timed.values()) <= wall


def test_interleaved_timing_reraises():
    problem = ProblemDefinition.default(6)
    system = problem.assemble(problem.filter(problem.initial_design()))
    with pytest.raises(ContractViolation):
        time_interleaved(problem, system, ["naive", "fast", "ldas"], "direct")
