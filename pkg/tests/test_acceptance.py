"""Acceptance criteria 1-10.  Each test appends one PASS/FAIL line to the
summary printed at the end of the pytest run."""

import csv
import functools
import ipaddress
import math
import re
import socket
import statistics
import time

import numpy as np
import pytest

from acceptance_log import RESULTS
from oracles import bt_grid_mle, logistic_nelder_mead, random_logistic_designs, random_tallies_3
from pairscale.btfit import fit_bt
from pairscale.cli import main
from pairscale.core import Entity, WinTally
from pairscale.harness import schedule_pairs, tally
from pairscale.report import STAR_NOTE, read_meta
from pairscale.stats import DesignMatrix, logistic_fit, pearson, significance_stars
from pairscale.synth import SynthSpec, generate


def criterion(number, title):
    """Record ``[PASS]``/``[FAIL]`` for the wrapped check, which returns
    ``(ok, detail)``; an exception counts as a failure."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                ok, detail = fn(*args, **kwargs)
            except Exception as exc:
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            line = f"[{'PASS' if ok else 'FAIL'}] C{number} {title}: {detail}"
            RESULTS.append(line)
            print(line)
            assert ok, line

        return run

    return wrap


def cli(*argv):
    return main([str(a) for a in argv])


@criterion(1, "two-entity closed form")
def test_c1_two_entity_closed_form():
    t = WinTally(("A", "B"), np.array([[0.0, 2.0], [1.0, 0.0]]))
    for _ in range(5):
        fit_bt(t)  # warm-up
    times = []
    for _ in range(200):
        start = time.perf_counter()
        s = fit_bt(t)
        times.append(time.perf_counter() - start)
    diff = s.lam[0] - s.lam[1]
    err = abs(diff - math.log(2))
    runtime = statistics.median(times)
    ok = err < 1e-8 and runtime < 1e-3
    return ok, f"|diff - ln 2| = {err:.1e} (< 1e-8), median runtime {runtime * 1e3:.3f} ms (< 1 ms)"


@criterion(2, "brute-force oracle equivalence")
def test_c2_grid_oracle():
    start = time.perf_counter()
    worst = 0.0
    for W in random_tallies_3(20251015, 25):
        lam = fit_bt(WinTally(("A", "B", "C"), W)).lam
        worst = max(worst, float(np.max(np.abs(lam - bt_grid_mle(W, step=1e-3)))))
    elapsed = time.perf_counter() - start
    ok = worst <= 2e-3 and elapsed < 10
    return ok, f"worst coordinate gap {worst:.1e} (<= 2e-3) over 25 tallies in {elapsed:.2f} s (< 10 s)"


@criterion(3, "tie symmetry")
def test_c3_tie_symmetry():
    n = 5
    W = np.full((n, n), 1.0)  # two ties per pair
    np.fill_diagonal(W, 0.0)
    s = fit_bt(WinTally(tuple("ABCDE"), W))
    lam_err = float(np.max(np.abs(s.lam)))
    se_spread = float(np.ptp(s.quasi_se))
    ok = lam_err < 1e-10 and se_spread < 1e-8
    return ok, f"max |lambda| {lam_err:.1e} (< 1e-10), quasi-SE spread {se_spread:.1e} (< 1e-8)"


@criterion(4, "quasi-variance single contrast")
def test_c4_quasi_variance_two_entities():
    worst = 0.0
    for w_ab, w_ba in [(2, 1), (5, 3), (1, 1), (7.5, 0.5), (40, 13)]:
        s = fit_bt(WinTally(("A", "B"), np.array([[0.0, w_ab], [w_ba, 0.0]])))
        v = (w_ab + w_ba) / (w_ab * w_ba)
        worst = max(worst, float(np.max(np.abs(s.quasi_se**2 - v / 2))))
    return worst < 1e-8, f"max |q - v/2| {worst:.1e} (< 1e-8) over 5 tallies"


@criterion(5, "synthetic recovery")
def test_c5_synthetic_recovery():
    true = np.linspace(-2, 2, 20)
    start = time.perf_counter()
    spec = SynthSpec(tuple(true), repeats=10, seed=20251015)
    s = fit_bt(tally(generate(spec), spec.ids))
    elapsed = time.perf_counter() - start
    r = pearson(s.lam, true)
    return r >= 0.95 and elapsed < 5, f"Pearson r = {r:.4f} (>= 0.95) in {elapsed:.2f} s (< 5 s)"


@criterion(6, "pair-count replication")
def test_c6_pair_count():
    n_tasks = len(schedule_pairs([Entity(f"Agency {k}") for k in range(123)], 1, "ideology-liberal", 0))
    return n_tasks == 7503, f"{n_tasks} tasks for 123 entities (expected 7503)"


@criterion(7, "logistic-regression oracle")
def test_c7_logistic_oracle():
    x = [0] * 40 + [1] * 40
    y = [1] * 10 + [0] * 30 + [1] * 30 + [0] * 10
    slope_err = abs(logistic_fit(DesignMatrix.from_columns({"x": x}, y)).beta[1] - math.log(9))
    worst_nm, worst_score = 0.0, 0.0
    for X, yy in random_logistic_designs(20251015, 10):
        res = logistic_fit(DesignMatrix(("a", "b"), X, yy))
        worst_nm = max(worst_nm, float(np.max(np.abs(res.beta - logistic_nelder_mead(X, yy)))))
        p_hat = 1 / (1 + np.exp(-(X @ res.beta)))
        worst_score = max(worst_score, abs(float(p_hat.sum() - yy.sum())))
    ok = slope_err < 1e-6 and worst_nm < 1e-4 and worst_score < 1e-8
    return ok, (f"2x2 slope error {slope_err:.1e} (< 1e-6); Nelder-Mead gap {worst_nm:.1e} (< 1e-4) "
                f"over 10 designs; |sum(p) - sum(y)| {worst_score:.1e} (< 1e-8)")


@pytest.fixture
def loopback_only(monkeypatch):
    """Record every outbound connection; refuse anything not on loopback."""
    remote = []
    original = socket.socket.connect

    def guarded(self, address):
        host = address[0] if isinstance(address, tuple) else None
        if host is not None:
            try:
                loop = host == "localhost" or ipaddress.ip_address(host).is_loopback
            except ValueError:
                loop = False
            if not loop:
                remote.append(address)
                raise OSError(f"non-loopback connection blocked: {address}")
        return original(self, address)

    monkeypatch.setattr(socket.socket, "connect", guarded)
    return remote


E2E_FILES = ("scores_ideology-liberal__mock.csv", "scores_ideology-liberal__mock.meta.json",
             "comparisons.meta.json", "correlations.csv", "regressions.csv", "report.md")


def e2e_run(roster, out):
    codes = (
        cli("elicit", "--mock", "--roster", roster, "--repeats", 10, "--seed", 7,
            "--mock-tie-rate", 0.1, "--out", out),
        cli("fit", out / "comparisons.jsonl", "--roster", roster, "--out", out),
        cli("analyze", out / "scores_ideology-liberal__mock.csv", "--roster", roster,
            "--out", out),
    )
    outputs = {name: (out / name).read_bytes() for name in E2E_FILES}
    # the cache holds wall-clock timestamps and completion order; compare its content
    lines = (out / "comparisons.jsonl").read_text().splitlines()
    outputs["comparisons.jsonl (timestamps dropped, sorted)"] = "\n".join(sorted(
        re.sub(r'"timestamp": "[^"]*"', "", line) for line in lines)).encode()
    ranking = [row["id"] for row in csv.DictReader((out / E2E_FILES[0]).open())]
    return codes, outputs, ranking


@criterion(8, "end-to-end mock run")
def test_c8_end_to_end(tmp_path, loopback_only, capsys):
    notes, ok = [], True
    for gap in (3, 4, 5):
        base = tmp_path / f"gap{gap}"
        assert cli("synth", "--n", 10, "--gap", gap, "--repeats", 1, "--seed", 7,
                   "--out", base / "synth") == 0
        roster = base / "synth" / "roster.csv"
        codes_a, out_a, rank_a = e2e_run(roster, base / "run1")
        codes_b, out_b, rank_b = e2e_run(roster, base / "run2")
        true_rank = [f"E{k:02d}" for k in range(10, 0, -1)]
        identical = out_a == out_b
        completed = codes_a == codes_b == (0, 0, 0)
        recovered = rank_a == rank_b == true_rank
        ok &= identical and completed and recovered
        notes.append(f"gap {gap}: exit codes {codes_a}, byte-identical={identical}, "
                     f"ranking recovered={recovered}")
    capsys.readouterr()
    ok &= not loopback_only
    return ok, "; ".join(notes) + f"; non-loopback connections: {len(loopback_only)}"


@criterion(9, "regression table structure")
def test_c9_table_structure(tmp_path, capsys):
    a, b, s, r = (tmp_path / d for d in ("aips", "kips", "scores", "report"))
    roster = a / "roster.csv"
    assert cli("synth", "--n", 30, "--spread", 2, "--repeats", 5, "--seed", 3, "--out", a) == 0
    assert cli("synth", "--n", 30, "--spread", 2, "--repeats", 5, "--seed", 4,
               "--attribute", "knowledge-institution", "--out", b) == 0
    assert cli("fit", a / "comparisons.jsonl", "--roster", roster, "--out", s) == 0
    assert cli("fit", b / "comparisons.jsonl", "--roster", roster,
               "--attribute", "knowledge-institution", "--out", s) == 0
    code = cli("analyze", *sorted(s.glob("scores_*.csv")), "--roster", roster, "--out", r)
    capsys.readouterr()
    report = (r / "report.md").read_text()
    rows = list(csv.DictReader((r / "regressions.csv").open()))

    def predictors(table, column):
        return [x["predictor"] for x in rows if x["table"] == table and x["column"] == column]

    controls = ["log(Annual Budget)", "log(Total Staff)"]
    expected = {
        ("table2", "synthetic"): ["Constant", "Ideology"] + controls,
        ("table3", "Model 1"): ["Constant", "Knowledge Institution Pairwise Scores"] + controls,
        ("table3", "Model 2"): ["Constant", "Knowledge Institution Pairwise Scores",
                                "Agency Ideology Pairwise Scores"] + controls,
        ("table3", "Model 3"): ["Constant", "Knowledge Institution Pairwise Scores",
                                "Perceived Agency Ideology"] + controls,
    }
    structure = all(predictors(*key) == value for key, value in expected.items())
    table3_rows = [line.split("|")[1].strip() for line in report.split("Table 3 layout")[1].splitlines()
                   if line.startswith("| ") and not line.startswith("| |")]
    order = table3_rows == ["Knowledge Institution Pairwise Scores", "Agency Ideology Pairwise Scores",
                            "Perceived Agency Ideology"] + controls + ["Constant", "N"]
    stars = all(x["stars"] == significance_stars(float(x["p"])) for x in rows) and [
        significance_stars(p) for p in (0.051, 0.049, 0.0099, 0.00099)] == ["", "*", "**", "***"]
    note = report.count(f"Note: {STAR_NOTE}") == 2 and STAR_NOTE == "*p<0.05; **p<0.01; ***p<0.001"
    ok = code == 0 and structure and order and stars and note
    return ok, (f"analyze exit {code}; predictor rows match Tables 2-3={structure}; "
                f"row order={order}; star thresholds 0.05/0.01/0.001={stars}; note={note}")


@criterion(10, "fault tolerance")
def test_c10_fault_tolerance(tmp_path, capsys):
    assert cli("synth", "--n", 10, "--spread", 2, "--repeats", 1, "--seed", 11,
               "--out", tmp_path / "synth") == 0
    roster = tmp_path / "synth" / "roster.csv"
    out = tmp_path / "run"
    code = cli("elicit", "--mock", "--roster", roster, "--repeats", 20, "--seed", 11,
               "--mock-garbage-rate", 0.05, "--unusable-threshold", 0.07, "--out", out)
    printed = capsys.readouterr().out
    rate = float(re.search(r"unusable_rate=([0-9.]+)", printed).group(1))
    fit_code = cli("fit", out / "comparisons.jsonl", "--roster", roster, "--out", out)
    capsys.readouterr()
    meta = read_meta(out / "scores_ideology-liberal__mock.csv")
    ok = code == 0 and 0.03 <= rate <= 0.07 and fit_code == 0 and meta["converged"] is True
    return ok, (f"elicit exit {code}, unusable rate {rate:.4f} (in [0.03, 0.07]), "
                f"fit exit {fit_code}, converged={meta['converged']}, n_unusable={meta['n_unusable']}")
