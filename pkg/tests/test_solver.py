import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import eigh

from gaussbif.mesh import generate_genus2_mesh
from gaussbif.solver import (BlowupError, ConvergenceError, SolveConfig, SolverError, continue_branch,
                             energy, hatv_roots, jacobian, mountain_pass, newton_solve, read_field,
                             residual, residual_norm, stability_min_eig, write_field)
from conftest import seeded_simple_zeros
from gaussbif.weight import constant_weight, make_weight

# Fold data of the seeded generic weights (4 simple zeros on genus 2, 8 on
# the shipped genus-3 mesh, tstar = 1), frozen from the first verified run.
FROZEN_FOLDS = {
    "generic_curve1": (0.6310895568313273, 4.275835194170801, 0.42784545339534846),
    "generic_curve2": (0.6314141117278234, 4.62425219804552, 0.4748115879589773),
    "generic_curve3": (0.3983686101888362, 4.573759072765669, 0.21405754516954548),
}

CONST_MESH = generate_genus2_mesh(1)
CONST_K = constant_weight(CONST_MESH, 0.25)
GENERIC_K = make_weight(CONST_MESH, seeded_simple_zeros(CONST_MESH, 4), 1.0, True)


@pytest.mark.parametrize("name", sorted(FROZEN_FOLDS))
def test_frozen_fold_values(name, request):
    curve = request.getfixturevalue(name)
    tau0, rho, c = FROZEN_FOLDS[name]
    fpt = curve.fold[1]
    assert curve.tau0 == pytest.approx(tau0, rel=1e-7)
    assert fpt.rho == pytest.approx(rho, rel=1e-5)
    assert fpt.c == pytest.approx(c, rel=1e-5)


def test_residual_vanishes_at_constant_roots():
    t, k = 0.7, 0.25
    for root in hatv_roots(t, CONST_K, np.zeros(CONST_MESH.n_vertices)):
        v = np.full(CONST_MESH.n_vertices, math.log(root))
        assert residual_norm(CONST_K, residual(t, CONST_K, v)) < 1e-12
    # the roots solve t^2 k x^2 - x + 1 = 0
    lo, hi = sorted(hatv_roots(t, CONST_K, np.zeros(CONST_MESH.n_vertices)))
    assert lo * hi == pytest.approx(1.0 / (t * t * k), rel=1e-13)


def test_hatv_roots_degenerate_at_t_zero(generic_k1):
    big, small = hatv_roots(0.0, generic_k1, np.zeros(generic_k1.mesh.n_vertices))
    assert big == math.inf
    assert small == pytest.approx(1.0)


def test_jacobian_matches_finite_differences(generic_k1):
    K = generic_k1
    rng = np.random.default_rng(1)
    v = 0.3 * rng.standard_normal(K.mesh.n_vertices)
    d = rng.standard_normal(K.mesh.n_vertices)
    h = 1e-6
    fd = (residual(0.5, K, v + h * d) - residual(0.5, K, v - h * d)) / (2 * h)
    exact = jacobian(0.5, K, v) @ d
    assert np.linalg.norm(fd - exact) <= 1e-7 * np.linalg.norm(exact)


def test_residual_is_energy_gradient(generic_k1):
    K = generic_k1
    rng = np.random.default_rng(2)
    v = 0.3 * rng.standard_normal(K.mesh.n_vertices)
    d = rng.standard_normal(K.mesh.n_vertices)
    h = 1e-5
    fd = (energy(0.5, K, v + h * d) - energy(0.5, K, v - h * d)) / (2 * h)
    assert fd == pytest.approx(float(residual(0.5, K, v) @ d), rel=1e-7)


def test_overflow_guard(generic_k1):
    v = np.zeros(generic_k1.mesh.n_vertices)
    v[0] = 800.0
    with pytest.raises(BlowupError):
        residual(0.5, generic_k1, v)


def test_newton_from_zero_reaches_stable_solution(generic_k2):
    pt = newton_solve(0.3, generic_k2)
    assert pt.newton_residual <= 1e-10
    assert pt.lambda_min > 0
    assert pt.sign_hatv == -1
    assert pt.gb_residual <= 1e-9


def test_newton_rejects_negative_t(generic_k1):
    with pytest.raises(ValueError):
        newton_solve(-0.1, generic_k1)


def test_newton_beyond_fold_fails(generic_k1, generic_curve1):
    with pytest.raises(ConvergenceError):
        newton_solve(1.2 * generic_curve1.tau0, generic_k1, cfg=SolveConfig(max_newton_iters=30))


def test_sparse_eigensolver_matches_dense(generic_k2, generic_curve2):
    K = generic_k2
    for p in (generic_curve2.points[5], generic_curve2.unstable_points[3]):
        lam, vec = stability_min_eig(p.t, K, p.v)
        m = K.mesh.vertex_area
        ref = eigh(jacobian(p.t, K, p.v).toarray(), np.diag(m), eigvals_only=True,
                   subset_by_index=[0, 0])[0]
        assert lam == pytest.approx(ref, abs=1e-8)
        assert np.sum(m * vec * vec) == pytest.approx(1.0)
        assert np.sum(m * vec) > 0


def test_lambda_at_t_zero_is_two(generic_curve1):
    # at t = 0 the second variation is L + 2
    assert generic_curve1.points[0].lambda_min == pytest.approx(2.0, rel=1e-8)


def test_unstable_branch_leaves_through_the_upper_root(generic_curve2):
    stable = generic_curve2.stable_points[:-1]
    unstable = generic_curve2.unstable_points
    assert all(p.sign_hatv == -1 for p in stable[1:])
    assert all(p.sign_hatv == 1 for p in unstable[5:])
    assert unstable[-1].sup_v > 5.0


def test_stop_at_fold(generic_k1, generic_curve1):
    curve = continue_branch(generic_k1, unstable=False)
    assert curve.fold_index == len(curve.points) - 1
    assert curve.tau0 == pytest.approx(generic_curve1.tau0, rel=1e-9)
    assert curve.unstable_points == []


def test_t_floor_is_respected(generic_curve1):
    floor = generic_curve1.metadata["t_floor"]
    assert floor == pytest.approx(1e-3 * generic_curve1.tau0)
    assert generic_curve1.points[-1].t <= floor * (1 + 1e-6)
    assert min(p.t for p in generic_curve1.points[1:]) > 0


def test_continuation_respects_dv_cap(generic_curve2):
    pts = generic_curve2.points
    jumps = [np.max(np.abs(b.v - a.v)) for a, b in zip(pts, pts[1:])]
    assert max(jumps) <= SolveConfig().max_dv + 1e-12


def test_branch_csv(generic_curve1, tmp_path):
    path = tmp_path / "b.csv"
    generic_curve1.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# BRANCH 1"
    rows = list(csv.DictReader(lines[1:]))
    assert len(rows) == len(generic_curve1.points)
    assert float(rows[-1]["t"]) == generic_curve1.points[-1].t


def test_mountain_pass_finds_second_solution(generic_k2, generic_curve2):
    t = 0.5 * generic_curve2.tau0
    stable = newton_solve(t, generic_k2)
    up = mountain_pass(t, generic_k2, stable)
    assert up.lambda_min < 0
    assert up.energy > stable.energy
    assert np.all(up.v > stable.v)
    # the same solution sits on the continued unstable branch
    ts = np.array([p.t for p in generic_curve2.unstable_points])
    j = int(np.argmin(np.abs(ts - t)))
    near = generic_curve2.unstable_points[j]
    assert up.rho == pytest.approx(near.rho, rel=0.2)


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(newton_tol=0)
    with pytest.raises(ValueError):
        SolveConfig(ls_shrink=1.5)
    with pytest.raises(ValueError):
        SolveConfig(mp_nodes=2)


def test_field_round_trip(tmp_path):
    path = tmp_path / "f.field"
    vals = np.array([0.1, -2.5, 1e-300, 3.0])
    write_field(path, vals, t=0.5, note="x")
    back, meta = read_field(path)
    assert np.array_equal(back, vals)
    assert float(meta["t"]) == 0.5


def test_field_rejects_bad_header(tmp_path):
    path = tmp_path / "f.field"
    path.write_text("nope\n")
    with pytest.raises(ValueError):
        read_field(path)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.01, 0.99))
def test_constant_weight_stable_solution_is_the_lower_root(t):
    pt = newton_solve(t, CONST_K, with_stability=False)
    exact = 2.0 / (1.0 + math.sqrt(1.0 - t * t))
    assert np.max(np.abs(np.exp(pt.v) - exact)) <= 1e-9 * exact


@settings(max_examples=15, deadline=None)
@given(st.floats(0.01, 0.99))
def test_conservation_identity_at_solutions(t):
    pt = newton_solve(t * 0.63, GENERIC_K, with_stability=False)
    assert pt.gb_residual <= 10 * SolveConfig().newton_tol

