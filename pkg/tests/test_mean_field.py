import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import seeded_simple_zeros
from gaussbif.mean_field import (PrescribeError, _excluded_masses, from_direct, mean_field_residual,
                                 prescribe_extrinsic_curvature, solve_mean_field, sweep_rho,
                                 write_sweep_csv)
from gaussbif.mesh import generate_genus2_mesh, generate_polygon_surface
from gaussbif.solver import continue_branch, residual, residual_norm
from gaussbif.weight import constant_weight, make_weight

MESH1 = generate_genus2_mesh(1)
S1 = MESH1.total_area
CONST1 = constant_weight(MESH1, 0.25)
GENERIC1 = make_weight(MESH1, seeded_simple_zeros(MESH1, 4), 1.0, True)


def _mass(sol, K):
    return sol.t_rho ** 2 * K.mesh.integrate(K.values * np.exp(sol.v))


def test_direct_solutions_solve_the_mean_field_equation(generic_k1, generic_curve1):
    for p in generic_curve1.points[5::10]:
        rho, w = from_direct(p, generic_k1)
        assert residual_norm(generic_k1, mean_field_residual(rho, generic_k1, w)) < 1e-8


def test_mean_field_recovers_direct_unstable_point(generic_k1, generic_curve1):
    p = generic_curve1.unstable_points[len(generic_curve1.unstable_points) // 2]
    rho, w = from_direct(p, generic_k1)
    sol = solve_mean_field(rho, generic_k1, w)
    assert sol.t_rho == pytest.approx(p.t, rel=1e-8)
    assert sol.c_rho == pytest.approx(p.c, abs=1e-8)
    assert sol.residual_direct < 1e-9


def test_rho_out_of_range_rejected():
    for rho in (0.0, -1.0, S1, S1 + 1):
        with pytest.raises(ValueError):
            solve_mean_field(rho, GENERIC1)


def test_sweep_grid_validation():
    with pytest.raises(ValueError, match="increasing"):
        sweep_rho(GENERIC1, [2.0, 1.0])
    with pytest.raises(ValueError, match="inside"):
        sweep_rho(GENERIC1, [1.0, S1])


def test_sweep_crosses_a_fold_in_rho(mesh2):
    # a zero of multiplicity 4 makes rho non-monotone along the direct curve
    K = make_weight(mesh2, [(0, 4)], 1.0, True)
    sols = sweep_rho(K, np.linspace(0.4, 12.0, 30))
    assert all(s.converged for s in sols)
    assert max(s.residual_direct for s in sols) < 1e-8
    for s in sols:
        assert _mass(s, K) == pytest.approx(s.rho, rel=1e-10)


def test_sweep_csv(tmp_path):
    sols = sweep_rho(GENERIC1, [1.0, 2.0, 3.0])
    path = tmp_path / "s.csv"
    write_sweep_csv(sols, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# SWEEP 1"
    rows = list(csv.DictReader(lines[1:]))
    assert [float(r["rho"]) for r in rows] == [1.0, 2.0, 3.0]
    assert all(r["converged"] == "1" for r in rows)


def test_prescribe_rejects_out_of_range():
    for rho in (0.0, 4 * math.pi, 20.0):
        with pytest.raises(PrescribeError):
            prescribe_extrinsic_curvature(rho, GENERIC1)


def test_excluded_masses():
    assert _excluded_masses(2) == []
    assert _excluded_masses(3) == []
    assert _excluded_masses(5) == pytest.approx([8 * math.pi, 12 * math.pi])


def test_prescribe_rejects_excluded_mass_on_genus4():
    mesh = generate_polygon_surface(4, 0)
    K = constant_weight(mesh, 1.0)
    with pytest.raises(PrescribeError, match="4\\*pi\\*2"):
        prescribe_extrinsic_curvature(8 * math.pi, K)


def test_prescribe_constant_weight_midpoint():
    # constant K keeps w = 0, so t_rho = sqrt(rho (S - rho) / k) / S
    sol = prescribe_extrinsic_curvature(S1 / 2, CONST1)
    assert sol.t_rho == pytest.approx(1.0, rel=1e-12)
    assert np.max(np.abs(sol.w)) < 1e-10


def test_prescribe_two_pi_constant_weight_matches_half_inverse_root():
    # exact only at |S|/2; at 2 pi the gap is second order in the area error
    sol = prescribe_extrinsic_curvature(2 * math.pi, CONST1)
    assert sol.t_rho == pytest.approx(1.0 / (2 * math.sqrt(0.25)), rel=1e-4)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.95))
def test_constant_weight_closed_form(frac):
    rho = frac * S1
    sol = solve_mean_field(rho, CONST1)
    k = 0.25
    assert sol.t_rho == pytest.approx(math.sqrt(rho * (S1 - rho) / k) / S1, rel=1e-12)
    assert sol.c_rho == pytest.approx(math.log(S1 / (S1 - rho)), rel=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.3, 12.0))
def test_prescribed_mass_and_conservation(rho):
    sol = prescribe_extrinsic_curvature(rho, GENERIC1)
    v = sol.v
    assert _mass(sol, GENERIC1) == pytest.approx(rho, rel=1e-12)
    # t^2 int K e^v + int e^{-v} = |S|
    assert _mass(sol, GENERIC1) + MESH1.integrate(np.exp(-v)) == pytest.approx(S1, rel=1e-12)
    assert residual_norm(GENERIC1, residual(sol.t_rho, GENERIC1, v)) < 1e-8
    assert abs(MESH1.mean(sol.w)) < 1e-12


def test_window_bound_controls_solution_size(generic_k2):
    # away from 4 pi the sweep stays compact
    sols = sweep_rho(generic_k2, np.linspace(0.5, 11.0, 12))
    assert max(s.sup_w for s in sols) < 15.0
