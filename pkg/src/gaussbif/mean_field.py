"""Mean-field form of the Gauss equation.

Writing ``v = w + c`` with ``mean(w) = 0`` and ``rho = t^2 int K e^v`` turns
the direct problem into a zero-mean equation parameterized by the mass:

    L w = 2 rho (m K e^w / A - m/|S|) + 2 (|S| - rho) (m e^{-w} / B - m/|S|),

with ``A = int K e^w`` and ``B = int e^{-w}``.  Given a solution, the direct
parameter and mean are recovered from

    c = log(B / (|S| - rho)),      t^2 = rho (|S| - rho) / (A B).

``|S|`` is the discrete total area, so the recovered pair solves the discrete
direct equation exactly.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .solver import (BlowupError, ConvergenceError, SolveConfig, SolverError, residual,
                     residual_norm)
from .weight import WeightK

__all__ = [
    "MeanFieldSolution",
    "mean_field_residual",
    "mean_field_energy",
    "mean_field_jacobian_apply",
    "solve_mean_field",
    "sweep_rho",
    "prescribe_extrinsic_curvature",
    "from_direct",
    "write_sweep_csv",
    "PrescribeError",
]

log = logging.getLogger(__name__)

MIN_RHO_STEP = 1e-3


class PrescribeError(ValueError):
    """Target mass outside the range where existence is asserted."""


@dataclass
class MeanFieldSolution:
    rho: float
    w: np.ndarray = field(repr=False)
    t_rho: float
    c_rho: float
    residual_mf: float
    residual_direct: float
    converged: bool = True
    iterations: int = 0

    @property
    def v(self):
        return self.w + self.c_rho

    @property
    def sup_w(self):
        return float(np.max(self.w)) if self.converged else math.nan


def _pieces(K, w):
    m = K.mesh.vertex_area
    if float(np.max(np.abs(w))) > 700.0:
        raise BlowupError(f"exp overflow: max |w| = {np.max(np.abs(w)):.4g}")
    a = m * K.values * np.exp(w)
    b = m * np.exp(-w)
    return m, a, b, float(a.sum()), float(b.sum())


def mean_field_residual(rho, K: WeightK, w):
    """Weak-form residual of the mean-field equation (sums to zero)."""
    w = np.asarray(w, dtype=float)
    lap = K.mesh.laplacian
    S = K.mesh.total_area
    m, a, b, A, B = _pieces(K, w)
    return (lap.stiffness @ w - 2.0 * rho * (a / A - m / S)
            - 2.0 * (S - rho) * (b / B - m / S))


def mean_field_energy(rho, K: WeightK, w) -> float:
    """Functional whose gradient is :func:`mean_field_residual`.

    ``1/2 w.L w - 2 rho log A + 2 (|S| - rho) log B + 2 int w``.
    """
    w = np.asarray(w, dtype=float)
    lap = K.mesh.laplacian
    S = K.mesh.total_area
    m, a, b, A, B = _pieces(K, w)
    return float(0.5 * w @ (lap.stiffness @ w) - 2.0 * rho * math.log(A)
                 + 2.0 * (S - rho) * math.log(B) + 2.0 * (m @ w))


def mean_field_jacobian_apply(rho, K: WeightK, w, dw):
    """Directional derivative of :func:`mean_field_residual` at ``w``."""
    w = np.asarray(w, dtype=float)
    lap = K.mesh.laplacian
    S = K.mesh.total_area
    m, a, b, A, B = _pieces(K, w)
    return (lap.stiffness @ dw
            - 2.0 * rho * (a * dw / A - a * (a @ dw) / A ** 2)
            + 2.0 * (S - rho) * (b * dw / B - b * (b @ dw) / B ** 2))


def _newton_matrix(rho, K, w, rho_col=None, arc_row=None):
    """Bordered sparse system for the Newton step.

    The dense rank-two part of the Jacobian is carried by two auxiliary
    unknowns ``p = a.dw`` and ``q = b.dw``; one more row/column pins the
    mean of ``dw`` (the Jacobian annihilates constants).  For arclength
    correction ``rho_col`` is the derivative in rho and ``arc_row`` the
    (w, rho) row of the arclength constraint, both appended last.
    """
    lap = K.mesh.laplacian
    S = K.mesh.total_area
    m, a, b, A, B = _pieces(K, w)
    n = len(w)
    diag = -2.0 * rho * a / A + 2.0 * (S - rho) * b / B
    J = lap.stiffness + sparse.diags(diag)
    extra = [2.0 * rho / A ** 2 * a, -2.0 * (S - rho) / B ** 2 * b, m]
    corner = np.array([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 0.0]])
    rows = [a, b, m]
    if rho_col is not None:
        extra.append(rho_col)
        rows.append(arc_row[:-1])
        corner = np.zeros((4, 4))
        corner[:3, :3] = [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 0.0]]
        corner[3, 3] = arc_row[-1]
    top = sparse.hstack([J, sparse.csc_matrix(np.column_stack(extra))])
    bottom = sparse.hstack([sparse.csr_matrix(np.vstack(rows)), sparse.csr_matrix(corner)])
    return sparse.vstack([top, bottom], format="csc"), n


def _dG_drho(K, w):
    S = K.mesh.total_area
    m, a, b, A, B = _pieces(K, w)
    return -2.0 * (a / A - m / S) + 2.0 * (b / B - m / S)


def _recover(rho, K, w):
    mesh = K.mesh
    S = mesh.total_area
    A = mesh.integrate(K.values * np.exp(w))
    B = mesh.integrate(np.exp(-w))
    c = math.log(B / (S - rho))
    t = math.sqrt(rho * (S - rho) / (A * B))
    return t, c


def solve_mean_field(rho, K: WeightK, w_init=None, cfg: SolveConfig | None = None) -> MeanFieldSolution:
    """Newton's method on the zero-mean subspace at fixed mass ``rho``."""
    cfg = cfg or SolveConfig()
    mesh = K.mesh
    S = mesh.total_area
    if not 0.0 < rho < S:
        raise ValueError(f"rho={rho!r} outside (0, |S|) with |S|={S:.10g}")
    w = np.zeros(mesh.n_vertices) if w_init is None else mesh.zero_mean(np.array(w_init, dtype=float))
    G = mean_field_residual(rho, K, w)
    r = residual_norm(K, G)
    it = 0
    while r > cfg.newton_tol:
        if it >= cfg.max_newton_iters:
            raise ConvergenceError(
                f"mean-field Newton did not converge at rho={rho:.6g}: residual {r:.3e}")
        it += 1
        M, n = _newton_matrix(rho, K, w)
        dw = spla.spsolve(M, np.concatenate([-G, np.zeros(3)]))[:n]
        if not np.all(np.isfinite(dw)):
            raise ConvergenceError(f"mean-field Newton step singular at rho={rho:.6g}")
        alpha = 1.0
        while True:
            trial = mesh.zero_mean(w + alpha * dw)
            try:
                Gt = mean_field_residual(rho, K, trial)
                rt = residual_norm(K, Gt)
            except BlowupError:
                rt = math.inf
            if rt <= (1.0 - 1e-4 * alpha) * r or alpha < cfg.ls_min_step:
                break
            alpha *= cfg.ls_shrink
        if not np.isfinite(rt):
            raise ConvergenceError(f"mean-field Newton diverged at rho={rho:.6g}")
        w, G, r = trial, Gt, rt
    t, c = _recover(rho, K, w)
    r_direct = residual_norm(K, residual(t, K, w + c))
    return MeanFieldSolution(float(rho), w, t, c, float(r), float(r_direct), True, it)


def from_direct(point, K: WeightK):
    """Mass and zero-mean profile of a direct solution."""
    mesh = K.mesh
    w = mesh.zero_mean(point.v)
    rho = point.t ** 2 * mesh.integrate(K.values * np.exp(point.v))
    return float(rho), w


def _failed(rho):
    return MeanFieldSolution(float(rho), np.full(0, math.nan), math.nan, math.nan,
                             math.nan, math.nan, False, 0)


def _advance(rho_from, rho_to, K, w, cfg, min_step=MIN_RHO_STEP):
    """Reach ``rho_to`` from a solution at ``rho_from``, halving the step on failure."""
    cur, sol = rho_from, None
    step = rho_to - cur
    while True:
        nxt = rho_to if abs(rho_to - cur) <= abs(step) else cur + step
        try:
            sol = solve_mean_field(nxt, K, w, cfg)
        except SolverError:
            step *= 0.5
            if abs(step) < min_step:
                return None, cur, w
            continue
        cur, w = nxt, sol.w
        if nxt == rho_to:
            return sol, cur, w


class _RhoArclength:
    """Pseudo-arclength continuation of the mean-field curve in (w, rho).

    Used when the curve turns back in rho, where fixed-rho Newton stalls.
    The inner product weights w by vertex area / |S| and rho by 1 / |S|.
    """

    def __init__(self, K, cfg):
        self.K = K
        self.cfg = cfg
        self.S = K.mesh.total_area
        self.wts = K.mesh.vertex_area / self.S

    def inner(self, x, y):
        return float(np.sum(self.wts * x[:-1] * y[:-1]) + x[-1] * y[-1] / self.S)

    def row(self, tau):
        return np.append(self.wts * tau[:-1], tau[-1] / self.S)

    def tangent(self, y, tau_old):
        w, rho = y[:-1], y[-1]
        M, n = _newton_matrix(rho, self.K, w, _dG_drho(self.K, w), self.row(tau_old))
        rhs = np.zeros(n + 4)
        rhs[-1] = 1.0
        sol = spla.spsolve(M, rhs)
        tau = np.append(sol[:n], sol[-1])
        tau /= math.sqrt(self.inner(tau, tau))
        return tau if self.inner(tau, tau_old) > 0 else -tau

    def correct(self, y_pred, tau):
        cfg = self.cfg
        y = y_pred.copy()
        for it in range(1, cfg.max_newton_iters + 1):
            w, rho = y[:-1], y[-1]
            if not 0.0 < rho < self.S:
                return None, it
            try:
                G = mean_field_residual(rho, self.K, w)
            except BlowupError:
                return None, it
            N = self.inner(y - y_pred, tau)
            r = residual_norm(self.K, G)
            if not np.isfinite(r) or r > 1e8:
                return None, it
            if r <= cfg.newton_tol and abs(N) <= cfg.newton_tol:
                return y, it
            M, n = _newton_matrix(rho, self.K, w, _dG_drho(self.K, w), self.row(tau))
            sol = spla.spsolve(M, np.concatenate([-G, np.zeros(3), [-N]]))
            if not np.all(np.isfinite(sol)):
                return None, it
            y = y + np.append(sol[:n], sol[-1])
            y[:-1] = self.K.mesh.zero_mean(y[:-1])
        return None, cfg.max_newton_iters


def _arclength_reach(rho_from, rho_to, K, w, cfg, max_steps=400):
    """Follow the curve from ``(w, rho_from)`` until rho first passes ``rho_to``."""
    ac = _RhoArclength(K, cfg)
    direction = 1.0 if rho_to > rho_from else -1.0
    y = np.append(w, rho_from)
    tau = np.zeros_like(y)
    tau[-1] = direction
    tau = ac.tangent(y, tau / math.sqrt(ac.inner(tau, tau)))
    ds = min(cfg.arclength_step, 0.1) * math.sqrt(ac.S)
    for _ in range(max_steps):
        step = ds
        while True:
            yn, iters = ac.correct(y + step * tau, tau)
            if yn is not None:
                break
            step *= 0.5
            if step < cfg.ds_min:
                return None
        if (yn[-1] - rho_to) * direction >= 0:
            lam = (rho_to - y[-1]) / (yn[-1] - y[-1])
            guess = (1 - lam) * y[:-1] + lam * yn[:-1]
            try:
                return solve_mean_field(rho_to, K, guess, cfg)
            except SolverError:
                if (y[-1] - rho_to) * direction < 0 and abs(yn[-1] - y[-1]) < MIN_RHO_STEP:
                    return None
                ds = 0.5 * step
                continue
        if float(np.max(np.abs(yn[:-1]))) > cfg.v_cap:
            return None
        tau = ac.tangent(yn, tau)
        y = yn
        ds = 2.0 * step if iters <= 3 else (0.5 * step if iters >= 8 else step)
    return None


def sweep_rho(K: WeightK, rho_grid, cfg: SolveConfig | None = None, w_init=None) -> list:
    """Continuation in ``rho`` over a sorted grid with warm starts.

    A grid point that cannot be reached with steps down to ``1e-3`` is
    recorded as unconverged and the sweep restarts from the last good
    solution at the next grid point.
    """
    cfg = cfg or SolveConfig()
    grid = [float(r) for r in rho_grid]
    S = K.mesh.total_area
    if any(b <= a for a, b in zip(grid[:-1], grid[1:])):
        raise ValueError("rho_grid must be strictly increasing")
    if grid and not (0.0 < grid[0] and grid[-1] < S):
        raise ValueError(f"rho_grid must lie inside (0, |S|) with |S|={S:.10g}")
    out = []
    last_rho, last_w = None, w_init
    for rho in grid:
        if last_rho is None:
            try:
                sol = solve_mean_field(rho, K, last_w, cfg)
            except SolverError:
                sol = None
                if rho > 1e-2:
                    sol, _, _ = _advance(1e-2, rho, K, None, cfg)
        else:
            sol, reached, w_reached = _advance(last_rho, rho, K, last_w, cfg)
            if sol is None:
                # the curve may turn back in rho; follow it by arclength
                sol = _arclength_reach(reached, rho, K, w_reached, cfg)
        if sol is None:
            log.warning("mean-field sweep failed at rho=%.6g", rho)
            out.append(_failed(rho))
            continue
        out.append(sol)
        last_rho, last_w = rho, sol.w
    return out


def _excluded_masses(genus):
    return [4.0 * math.pi * k for k in range(2, genus - 1)]


def prescribe_extrinsic_curvature(rho_target, K: WeightK, cfg: SolveConfig | None = None,
                                  rho_step: float = 0.5) -> MeanFieldSolution:
    """Solution whose total extrinsic curvature equals ``rho_target``.

    Reached by continuation from small mass in steps of at most
    ``rho_step``.
    """
    cfg = cfg or SolveConfig()
    mesh = K.mesh
    g = mesh.genus
    upper = 4.0 * math.pi * (g - 1)
    rho_target = float(rho_target)
    if not 0.0 < rho_target < min(upper, mesh.total_area):
        raise PrescribeError(f"rho_target={rho_target!r} must lie in (0, 4*pi*(g-1)) = (0, {upper:.10g})")
    for bad in _excluded_masses(g):
        if abs(rho_target - bad) <= 1e-9 * bad:
            raise PrescribeError(
                f"rho_target={rho_target!r} equals 4*pi*{round(bad / (4 * math.pi))}; existence is only "
                "asserted away from 4*pi*m for m = 2..g-2")
    start = min(rho_step, 0.5 * rho_target)
    nsteps = max(1, math.ceil((rho_target - start) / rho_step))
    grid = np.linspace(start, rho_target, nsteps + 1)
    sols = sweep_rho(K, grid, cfg)
    final = sols[-1]
    if not final.converged:
        m = max(1, round(rho_target / (4.0 * math.pi)))
        hint = ("approach 4*pi from above (rho decreasing toward 4*pi stays compact)" if m == 1
                else f"approach 4*pi*{m} along a finer grid from the side away from the blow-up")
        raise ConvergenceError(
            f"no mean-field solution reached at rho={rho_target:.8g} near 4*pi*{m}; {hint}")
    return final


SWEEP_COLUMNS = ("rho", "t_rho", "c_rho", "sup_w", "residual_mf", "residual_direct", "converged")


def write_sweep_csv(solutions, path):
    with open(path, "w", newline="") as fh:
        fh.write("# SWEEP 1\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for s in solutions:
            writer.writerow([repr(float(x)) for x in (
                s.rho, s.t_rho, s.c_rho, s.sup_w, s.residual_mf, s.residual_direct)]
                + [int(s.converged)])
