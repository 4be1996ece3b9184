"""Randomized property-check module used by the check command."""

import pytest

from manifed import SphereKernel, StiefelKernel, cpesph_make
from manifed.checks import (
    CheckRow,
    experiment_kernels,
    geometry_rows,
    gradient_row,
    run_all_checks,
    small_gradient_problems,
)


def test_check_row_formatting_and_verdict():
    good = CheckRow("sphere(d=2)", "retraction feasibility", 1e-12, 1e-10)
    bad = CheckRow("sphere(d=2)", "transport isometry", 1e-3, 1e-10)
    assert good.passed and not bad.passed
    assert str(good).startswith("[pass]")
    assert str(bad).startswith("[FAIL]")
    assert "worst=1.000e-03" in str(bad)


def test_geometry_rows_pass_on_every_experiment_kernel():
    for kernel in experiment_kernels():
        rows = geometry_rows(kernel, cases=10, seed=1)
        for row in rows:
            assert row.passed, str(row)


def test_geometry_rows_cover_round_trip_where_supported():
    sphere_names = {r.name for r in geometry_rows(SphereKernel(3), cases=5)}
    assert "inverse retraction round trip" in sphere_names
    frames = geometry_rows(StiefelKernel(2, 5), cases=5)
    by_name = {r.name: r for r in frames}
    # frames advertise no inverse retraction; the check records that honestly
    assert by_name["inverse retraction unsupported"].passed


def test_gradient_row_matches_finite_differences():
    problem = cpesph_make(d=6, S=2, N=6, eigengap=0.05, seed=3)
    row = gradient_row(problem, points=3, seed=3)
    assert row.passed, str(row)
    assert "cpesph" in row.name


def test_run_all_checks_small_budget_all_pass():
    rows = run_all_checks(cases=5, points=2, seed=0)
    kinds = {r.name.split("(")[-1].rstrip(")") for r in rows if "gradient" in r.name}
    assert kinds == {"cpesph", "cfmspd", "mbcfsti", "mtfl"}
    assert all(r.passed for r in rows), "\n".join(
        str(r) for r in rows if not r.passed
    )


def test_small_gradient_problems_cover_all_kinds():
    pairs = small_gradient_problems(seed=0)
    kinds = [problem.kind for problem, _ in pairs]
    assert kinds == ["cpesph", "cfmspd", "mbcfsti", "mtfl", "mtfl"]
    assert pairs[-1][0].lam > 0  # the ridge-corrected gradient path is covered
    assert all(problem.S >= 2 for problem, _ in pairs)
