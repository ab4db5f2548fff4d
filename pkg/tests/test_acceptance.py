"""Acceptance criteria, each at its stated tolerance; one PASS/FAIL line per criterion is printed
in the terminal summary.

The full set takes roughly half an hour on one core (six-level runs of all three examples in P1,
five-level runs with quadratic V spaces).
"""
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import pytest

from lsbalance.diagnostics import collision_point, error_norms, smooth_error_norms
from lsbalance.exact import exact_solution
from lsbalance.problems import example_spec, manufactured_solution, manufactured_spec
from lsbalance.solver import GNOptions, nested_iterate

pytestmark = pytest.mark.slow

# published Gauss-Newton iteration counts per refinement (linear / quadratic V spaces)
TABLE = {
    (1, 1): [6, 4, 4, 4, 4, 5], (1, 2): [8, 4, 4, 4, 5, 10],
    (2, 1): [5, 3, 3, 3, 3, 3], (2, 2): [5, 3, 3, 3, 2, 2],
    (3, 1): [7, 4, 4, 5, 5, 6], (3, 2): [10, 5, 6, 8, 10, 5],
}
LEVELS = 6
# Quadratic V spaces on refinement 5 need far more memory than the smaller levels: measured
# assembly alone peaks at 5.6 GB and the factorization of the 4.7M-unknown system does not fit in
# 5 GB even out of core.  Attempted only on machines with at least this much physical memory.
P2_FINEST_MIN_BYTES = 24 * 2 ** 30


def physical_memory() -> int:
    try:
        return os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError, AttributeError):
        return 0


class Runs:
    """Nested-iteration runs shared between criteria, keeping only per-level numbers."""

    def __init__(self):
        self._cache = {}

    def get(self, example, levels=LEVELS, order_v=1, eta=None):
        key = (example, levels, order_v, eta)
        if key not in self._cache:
            self._cache[key] = self._run(*key)
        return self._cache[key]

    def _run(self, example, levels, order_v, eta):
        smooth = example == "manufactured"
        prob = manufactured_spec() if smooth else example_spec(example)
        exact = manufactured_solution if smooth else exact_solution(example)
        rows = []

        def measure(rep, disc):
            e = smooth_error_norms(rep.u, exact) if smooth else error_norms(rep.u, exact)
            row = dict(level=rep.level, h=rep.h, iters=rep.iterations, M=rep.M_h, l2sq=e[0], l1sq=e[2])
            if example == 3 and rep.level == levels - 1:
                row["collision"] = collision_point(rep.u)
            rows.append(row)

        t0 = time.perf_counter()
        nested_iterate(prob, levels, (1, order_v), GNOptions(eta=eta), callback=measure)
        return dict(rows=rows, seconds=time.perf_counter() - t0)


@pytest.fixture(scope="session")
def runs():
    return Runs()


def rate(values, intervals=2):
    return math.log2(values[-1 - intervals] / values[-1]) / intervals


def col(run, name):
    return [r[name] for r in run["rows"]]


def test_c1_example1_rate(runs, acceptance_record):
    r = runs.get(1)
    k = rate(col(r, "l2sq"))
    ok = 0.75 <= k <= 1.5 and r["seconds"] <= 600
    acceptance_record(1, ok, f"Ex1 P1 squared-L2 rate over last two intervals {k:.3f} (window [0.75, 1.5]); "
                             f"6-level run {r['seconds']:.0f} s (budget 600 s)")
    assert ok


def test_c2_example3_rate_and_collision(runs, acceptance_record):
    r = runs.get(3)
    k = rate(col(r, "l2sq"))
    oracle = exact_solution(3).collision
    found = r["rows"][-1]["collision"]
    h = r["rows"][-1]["h"]
    dist = math.inf if found is None else math.hypot(found[0] - oracle[0], found[1] - oracle[1])
    ok = 0.75 <= k <= 1.5 and dist <= 2 * h
    acceptance_record(2, ok, f"Ex3 P1 rate {k:.3f} (window [0.75, 1.5]); collision from solution {found} vs oracle "
                             f"({oracle[0]:.5f}, {oracle[1]:.5f}), distance {dist / h:.2f} h (limit 2 h)")
    assert ok


def test_c3_example2_monotone(runs, acceptance_record):
    e = col(runs.get(2), "l2sq")
    run, best = 1, 1
    for a, b in zip(e, e[1:]):
        run = run + 1 if b < a else 1
        best = max(best, run)
    ok = best >= 4
    acceptance_record(3, ok, f"Ex2 P1 squared-L2 errors {['%.3e' % v for v in e]}; "
                             f"longest strictly decreasing run {best} levels (need >= 4)")
    assert ok


def test_c4_iteration_counts(runs, acceptance_record):
    fits = physical_memory() >= P2_FINEST_MIN_BYTES or os.environ.get("LSBALANCE_FULL_P2") == "1"
    lines, ok = [], True
    for (k, ov), ref in TABLE.items():
        levels = LEVELS if ov == 1 or fits else LEVELS - 1
        got = col(runs.get(k, levels, ov), "iters")
        row_ok = len(got) == len(ref) and all(abs(a - b) <= 3 for a, b in zip(got, ref))
        note = "" if len(got) == len(ref) else " (refinement 5 not attempted: insufficient memory)"
        lines.append(f"Ex{k} {'linear' if ov == 1 else 'quadratic'} {got} vs {ref}{note}")
        ok &= row_ok
    acceptance_record(4, ok, "GN iterations within +-3: " + "; ".join(lines))
    assert ok


def test_c5_functional_decay(runs, acceptance_record):
    parts, ok = [], True
    for k in (1, 2, 3):
        M = col(runs.get(k), "M")
        d = [a - b for a, b in zip(M, M[1:])]
        nonneg = all(x >= -1e-10 for x in d)
        ok &= nonneg
        msg = f"Ex{k} min dM {min(d):.3e}"
        if k != 2:
            kd, ke = rate(d), rate(col(runs.get(k), "l2sq"))
            ok &= kd >= ke - 0.5
            msg += f", dM rate {kd:.3f} vs L2 rate {ke:.3f} - 0.5"
        parts.append(msg)
    acceptance_record(5, ok, "; ".join(parts))
    assert ok


def test_c6_regularization(runs, acceptance_record):
    parts, ok = [], True
    for k in (1, 2, 3):
        base = col(runs.get(k), "l2sq")[:3]
        reg = col(runs.get(k, 3, 1, eta=1.0), "l2sq")
        dev = [abs(b / a - 1) for a, b in zip(base, reg)]
        ok &= max(dev) <= 0.25
        parts.append(f"Ex{k} max relative change {max(dev):.3f}")
    acceptance_record(6, ok, "eps = h vs unregularized on 3 coarsest levels (limit 0.25): " + "; ".join(parts))
    assert ok


PROPERTY_TESTS = [
    "tests/test_spaces.py::test_discrete_orthogonality",
    "tests/test_forms.py::test_regularized_coercivity_bounds",
    "tests/test_forms.py::test_directional_derivative",
    "tests/test_solver.py::test_linear_flux_converges_in_one_step",
    "tests/test_diagnostics.py::test_reduced_is_half_residual_squared",
    "tests/test_quadrature.py::test_exact_through_degree",
]


def test_c7_property_suite(acceptance_record):
    root = Path(__file__).resolve().parents[1]
    t0 = time.perf_counter()
    p = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *PROPERTY_TESTS],
                       cwd=root, capture_output=True, text=True)
    dt = time.perf_counter() - t0
    summary = (p.stdout.strip().splitlines() or ["no output"])[-1]
    ok = p.returncode == 0 and dt < 60
    acceptance_record(7, ok, f"property suite {summary!r} in {dt:.1f} s (limit 60 s)")
    assert ok, p.stdout[-2000:]


def test_c8_manufactured(runs, acceptance_record):
    e = col(runs.get("manufactured", 4), "l2sq")
    f = [a / b for a, b in zip(e, e[1:])]
    ok = all(x >= 3 for x in f)
    acceptance_record(8, ok, f"manufactured P1 contraction factors {[round(x, 3) for x in f]} (need >= 3)")
    assert ok
