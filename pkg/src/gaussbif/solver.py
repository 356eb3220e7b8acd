"""Direct solver for the Gauss equation in the variable v = -2u.

On a mesh with stiffness ``L`` and lumped mass ``m`` the discrete problem is

    F(v, t) = L v - 2 t^2 m K e^v + 2 m (1 - e^{-v}) = 0,

which is the gradient of the discrete energy

    I_t(v) = 1/2 v.L v - 2 t^2 sum(m K e^v) + 2 sum(m e^{-v}) + 2 sum(m v).

Its Hessian ``L + diag(m (2 e^{-v} - 2 t^2 K e^v))`` is the second
variation whose smallest eigenvalue decides stability.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .weight import WeightK, compute_tstar

__all__ = [
    "SolverError",
    "ConvergenceError",
    "BlowupError",
    "SolveConfig",
    "BranchPoint",
    "BranchCurve",
    "residual",
    "residual_norm",
    "jacobian",
    "energy",
    "newton_solve",
    "make_point",
    "stability_min_eig",
    "continue_branch",
    "mountain_pass",
    "write_field",
    "read_field",
]

log = logging.getLogger(__name__)

EXP_LIMIT = 700.0


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    pass


class BlowupError(SolverError):
    """Raised when v exceeds the exponential overflow guard."""


@dataclass
class SolveConfig:
    newton_tol: float = 1e-10
    max_newton_iters: int = 50
    ls_shrink: float = 0.5
    ls_min_step: float = 1e-6
    arclength_step: float = 0.05
    ds_min: float = 1e-8
    ds_max: float = 2.0
    eig_tol: float = 1e-12
    fold_tol: float = 1e-10
    v_cap: float = 30.0
    t_floor_ratio: float = 1e-4
    max_steps: int = 5000
    mp_nodes: int = 32
    mp_max_iters: int = 3000
    mp_step: float = 0.5
    mp_tol: float = 1e-4
    max_dv: float = 1.0

    def __post_init__(self):
        for name in ("newton_tol", "arclength_step", "ds_min", "ds_max", "eig_tol",
                     "fold_tol", "v_cap", "t_floor_ratio", "mp_step", "mp_tol", "max_dv"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.ls_shrink < 1:
            raise ValueError("ls_shrink must lie in (0, 1)")
        if self.max_newton_iters < 1 or self.max_steps < 1 or self.mp_max_iters < 1:
            raise ValueError("iteration limits must be >= 1")
        if self.mp_nodes < 3:
            raise ValueError("mp_nodes must be >= 3")


# ---------------------------------------------------------------------------
# discrete operators
# ---------------------------------------------------------------------------

def _exp_guard(v):
    vmax = float(np.max(np.abs(v)))
    if not vmax <= EXP_LIMIT:
        raise BlowupError(f"exp overflow: max |v| = {vmax:.4g} > {EXP_LIMIT}")


def residual(t, K: WeightK, v):
    """Weak-form residual ``F(v)``; zero exactly at discrete solutions."""
    v = np.asarray(v, dtype=float)
    _exp_guard(v)
    lap = K.mesh.laplacian
    m = lap.mass_diag
    return lap.stiffness @ v - 2.0 * t * t * m * K.values * np.exp(v) + 2.0 * m * (1.0 - np.exp(-v))


def residual_norm(K: WeightK, F) -> float:
    """Mass-weighted L2 norm of the strong residual ``F / m``."""
    m = K.mesh.vertex_area
    # an overflow to inf is a valid answer: line search rejects the step
    with np.errstate(over="ignore"):
        return float(np.sqrt(np.sum(F * F / m)))


def _hessian_coefficient(t, K, v):
    return 2.0 * np.exp(-v) - 2.0 * t * t * K.values * np.exp(v)


def jacobian(t, K: WeightK, v):
    """Second variation ``L + diag(m (2e^{-v} - 2t^2 K e^v))``."""
    lap = K.mesh.laplacian
    return (lap.stiffness + sparse.diags(lap.mass_diag * _hessian_coefficient(t, K, v))).tocsc()


def _dF_dt(t, K, v):
    return -4.0 * t * K.mesh.vertex_area * K.values * np.exp(v)


def energy(t, K: WeightK, v) -> float:
    v = np.asarray(v, dtype=float)
    _exp_guard(v)
    lap = K.mesh.laplacian
    m = lap.mass_diag
    return float(0.5 * v @ (lap.stiffness @ v) - 2.0 * t * t * np.sum(m * K.values * np.exp(v))
                 + 2.0 * np.sum(m * np.exp(-v)) + 2.0 * np.sum(m * v))


def stability_min_eig(t, K: WeightK, v, cfg: SolveConfig | None = None, v0=None):
    """Smallest generalized eigenpair of the second variation.

    Shift-invert Lanczos about a guaranteed lower bound of the spectrum
    (L is positive semidefinite, so the minimum of the diagonal coefficient
    bounds every eigenvalue from below).  The eigenfield is normalized to
    unit mass norm with a positive mass-weighted sum.
    """
    cfg = cfg or SolveConfig()
    A = jacobian(t, K, v)
    m = K.mesh.vertex_area
    coef = _hessian_coefficient(t, K, np.asarray(v, dtype=float))
    sigma = float(coef.min()) - 1e-3 * (1.0 + abs(float(coef.min())))
    n = len(m)
    if n <= 200:
        from scipy.linalg import eigh
        lam, vec = eigh(A.toarray(), np.diag(m), subset_by_index=[0, 0])
        lam, x = float(lam[0]), vec[:, 0]
    else:
        try:
            lam, vec = spla.eigsh(A, k=1, M=sparse.diags(m).tocsc(), sigma=sigma, which="LM",
                                  v0=v0, tol=cfg.eig_tol, ncv=min(n - 1, 40), maxiter=20 * n)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError("eigen-solver stagnation") from exc
        lam, x = float(lam[0]), vec[:, 0]
    x = x / math.sqrt(float(np.sum(m * x * x)))
    if np.sum(m * x) < 0:
        x = -x
    return lam, x


# ---------------------------------------------------------------------------
# solution records
# ---------------------------------------------------------------------------

@dataclass
class BranchPoint:
    t: float
    v: np.ndarray = field(repr=False)
    c: float
    w: np.ndarray = field(repr=False)
    rho: float
    lambda_min: float
    energy: float
    gb_residual: float
    newton_residual: float
    sign_hatv: int
    s: float = 0.0
    eigvec: np.ndarray | None = field(default=None, repr=False)

    @property
    def sup_v(self):
        return float(self.v.max())

    @property
    def min_v(self):
        return float(self.v.min())

    @property
    def stable(self):
        return self.lambda_min >= 0


def hatv_roots(t, K: WeightK, w):
    """Both admissible values of e^c for a zero-mean profile ``w``."""
    mesh = K.mesh
    A = t * t * mesh.integrate(K.values * np.exp(w))
    B = mesh.integrate(np.exp(-w))
    half = 0.5 * mesh.total_area
    if A == 0:
        return math.inf, B / mesh.total_area
    disc = math.sqrt(max(half * half - A * B, 0.0))
    # stable form of the smaller root
    return (half + disc) / A, B / (half + disc)


def make_point(t, K: WeightK, v, cfg: SolveConfig | None = None, newton_residual=None,
               with_stability=True, s=0.0, v0=None) -> BranchPoint:
    cfg = cfg or SolveConfig()
    mesh = K.mesh
    v = np.array(v, dtype=float)
    c = mesh.mean(v)
    w = v - c
    rho = t * t * mesh.integrate(K.values * np.exp(v))
    gb = abs(rho + mesh.integrate(np.exp(-v)) - mesh.total_area)
    A = t * t * mesh.integrate(K.values * np.exp(w))
    sign = 1 if A > 0 and math.exp(c) > 0.5 * mesh.total_area / A else -1
    if newton_residual is None:
        newton_residual = residual_norm(K, residual(t, K, v))
    if with_stability:
        lam, vec = stability_min_eig(t, K, v, cfg, v0=v0)
    else:
        lam, vec = math.nan, None
    return BranchPoint(float(t), v, float(c), w, float(rho), float(lam), energy(t, K, v), float(gb),
                       float(newton_residual), sign, float(s), vec)


def newton_solve(t, K: WeightK, v_init=None, cfg: SolveConfig | None = None,
                 with_stability=True) -> BranchPoint:
    """Damped Newton iteration for (1)_t at fixed ``t``."""
    cfg = cfg or SolveConfig()
    if t < 0:
        raise ValueError("t must be nonnegative")
    v = np.zeros(K.mesh.n_vertices) if v_init is None else np.array(v_init, dtype=float)
    F = residual(t, K, v)
    r = residual_norm(K, F)
    for _ in range(cfg.max_newton_iters):
        if r <= cfg.newton_tol:
            break
        dv = spla.spsolve(jacobian(t, K, v), -F)
        alpha = 1.0
        while True:
            trial = v + alpha * dv
            try:
                Ft = residual(t, K, trial)
                rt = residual_norm(K, Ft)
            except BlowupError:
                rt = math.inf
            if rt <= (1.0 - 1e-4 * alpha) * r or alpha < cfg.ls_min_step:
                break
            alpha *= cfg.ls_shrink
        if not np.isfinite(rt):
            raise ConvergenceError(f"Newton diverged at t={t:.6g}")
        v, F, r = trial, Ft, rt
    if r > cfg.newton_tol:
        raise ConvergenceError(
            f"Newton did not converge at t={t:.6g}: residual {r:.3e} after {cfg.max_newton_iters} iterations")
    return make_point(t, K, v, cfg, r, with_stability)


# ---------------------------------------------------------------------------
# pseudo-arclength continuation
# ---------------------------------------------------------------------------

@dataclass
class BranchCurve:
    points: list
    fold_index: int | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def fold(self):
        if self.fold_index is None:
            return None
        p = self.points[self.fold_index]
        return p.t, p

    @property
    def tau0(self):
        return None if self.fold_index is None else self.points[self.fold_index].t

    @property
    def stable_points(self):
        end = len(self.points) if self.fold_index is None else self.fold_index + 1
        return self.points[:end]

    @property
    def unstable_points(self):
        if self.fold_index is None:
            return []
        return self.points[self.fold_index + 1:]

    def lambda_sign_changes(self):
        lam = np.array([p.lambda_min for p in self.points])
        signs = np.sign(np.where(np.abs(lam) <= 1e-6, 0.0, lam))
        signs = signs[signs != 0]
        return int(np.sum(signs[1:] != signs[:-1]))

    CSV_COLUMNS = ("s", "t", "rho", "c", "sup_v", "min_v", "lambda_min", "energy",
                   "gb_residual", "newton_residual", "sign_in_hatv")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("# BRANCH 1\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.CSV_COLUMNS)
            for p in self.points:
                writer.writerow([repr(float(x)) for x in (
                    p.s, p.t, p.rho, p.c, p.sup_v, p.min_v, p.lambda_min, p.energy,
                    p.gb_residual, p.newton_residual)] + [p.sign_hatv])


class _Continuation:
    """Bordered Newton corrector and tangent computation for (v, t)."""

    def __init__(self, K, cfg):
        self.K = K
        self.cfg = cfg
        self.wts = K.mesh.vertex_area / K.mesh.total_area

    def inner(self, a, b):
        return float(np.sum(self.wts * a[:-1] * b[:-1]) + a[-1] * b[-1])

    def normalize(self, x):
        return x / math.sqrt(self.inner(x, x))

    def bordered(self, v, t, tau):
        J = jacobian(t, self.K, v)
        Ft = _dF_dt(t, self.K, v)
        row = sparse.csr_matrix(np.append(self.wts * tau[:-1], tau[-1])[None, :])
        return sparse.vstack([sparse.hstack([J, sparse.csc_matrix(Ft[:, None])]), row], format="csc")

    def tangent(self, v, t, tau_old):
        B = self.bordered(v, t, tau_old)
        rhs = np.zeros(len(v) + 1)
        rhs[-1] = 1.0
        tau = self.normalize(spla.spsolve(B, rhs))
        return tau if self.inner(tau, tau_old) > 0 else -tau

    def correct(self, x_pred, tau):
        """Newton on F = 0 plus the arclength plane through ``x_pred``."""
        cfg = self.cfg
        x = x_pred.copy()
        for it in range(1, cfg.max_newton_iters + 1):
            v, t = x[:-1], x[-1]
            try:
                F = residual(t, self.K, v)
            except BlowupError:
                return None, it
            N = self.inner(x - x_pred, tau)
            r = residual_norm(self.K, F)
            if not np.isfinite(r) or r > 1e8:
                return None, it
            if r <= cfg.newton_tol and abs(N) <= cfg.newton_tol:
                return x, it
            dx = spla.spsolve(self.bordered(v, t, tau), -np.append(F, N))
            if not np.all(np.isfinite(dx)):
                return None, it
            x = x + dx
        return None, cfg.max_newton_iters


def continue_branch(K: WeightK, cfg: SolveConfig | None = None, unstable: bool = True,
                    t_floor: float | None = None) -> BranchCurve:
    """Trace the solution curve from (t=0, v=0) through the fold.

    With ``unstable=False`` the curve stops at the refined fold point.
    Otherwise continuation proceeds on the unstable branch until
    ``max v >= cfg.v_cap`` or ``t <= t_floor`` (default
    ``cfg.t_floor_ratio * tau0``).
    """
    cfg = cfg or SolveConfig()
    n = K.mesh.n_vertices
    cont = _Continuation(K, cfg)
    first = make_point(0.0, K, np.zeros(n), cfg)
    points = [first]
    x = np.zeros(n + 1)
    tau = np.zeros(n + 1)
    tau[-1] = 1.0
    ds = cfg.arclength_step
    s = 0.0
    fold_index = None
    floor = t_floor

    for _ in range(cfg.max_steps):
        prev = points[-1]
        step = ds
        if fold_index is not None and tau[-1] < 0 and floor is not None:
            room = (x[-1] - floor) / -tau[-1]
            step = min(step, max(room, cfg.ds_min))
        while True:
            xn, iters = cont.correct(x + step * tau, tau)
            # the RMS arclength norm barely sees a localized spike, so the
            # max-norm change is capped too; this prevents branch jumping
            if (xn is not None and xn[-1] >= 0
                    and np.max(np.abs(xn[:-1] - x[:-1])) <= cfg.max_dv):
                break
            step *= 0.5
            if step < cfg.ds_min:
                raise ConvergenceError(
                    f"corrector failed below minimum step; last good t={prev.t:.8g}")
        v_new, t_new = xn[:-1], xn[-1]
        r = residual_norm(K, residual(t_new, K, v_new))
        pt = make_point(t_new, K, v_new, cfg, r, s=s + step, v0=prev.eigvec)
        tau_new = cont.tangent(v_new, t_new, tau)

        if fold_index is None and prev.lambda_min > 0 and pt.lambda_min <= 0:
            fpt = _refine_fold(K, cfg, cont, x, tau, prev, step, pt)
            points.append(fpt)
            fold_index = len(points) - 1
            if floor is None:
                floor = cfg.t_floor_ratio * fpt.t
            log.info("fold at tau0=%.10g (lambda_min=%.2e)", fpt.t, fpt.lambda_min)
            if not unstable:
                break
        points.append(pt)
        x, tau, s = xn, tau_new, pt.s

        if iters <= 3:
            ds = min(2.0 * step, cfg.ds_max)
        elif iters >= 8:
            ds = max(0.5 * step, cfg.ds_min)
        else:
            ds = step
        if fold_index is not None and (pt.sup_v >= cfg.v_cap or pt.t <= floor * (1 + 1e-6)):
            break
    else:
        log.warning("continuation stopped after max_steps=%d", cfg.max_steps)

    meta = {"tstar": compute_tstar(K), "weight": K.name, "genus": K.mesh.genus,
            "n_vertices": n, "t_floor": floor}
    return BranchCurve(points, fold_index, meta)


def _refine_fold(K, cfg, cont, x0, tau0, p0, ds, p1):
    """Regula falsi (Illinois) on lambda_min along the arclength step."""
    a, fa = 0.0, p0.lambda_min
    b, fb = ds, p1.lambda_min
    best = (p1,)
    side = 0
    for _ in range(100):
        sig = b - fb * (b - a) / (fb - fa)
        xs, _ = cont.correct(x0 + sig * tau0, tau0)
        if xs is None:
            sig = 0.5 * (a + b)
            xs, _ = cont.correct(x0 + sig * tau0, tau0)
            if xs is None:
                raise ConvergenceError("fold refinement: corrector failed")
        r = residual_norm(K, residual(xs[-1], K, xs[:-1]))
        pt = make_point(xs[-1], K, xs[:-1], cfg, r, s=p0.s + sig, v0=p0.eigvec)
        f = pt.lambda_min
        best = (pt,)
        if abs(f) <= cfg.fold_tol or abs(b - a) <= 1e-15 * max(1.0, ds):
            break
        if f > 0:
            a, fa = sig, f
            if side == 1:
                fb *= 0.5
            side = 1
        else:
            b, fb = sig, f
            if side == -1:
                fa *= 0.5
            side = -1
    return best[0]


# ---------------------------------------------------------------------------
# mountain pass
# ---------------------------------------------------------------------------

def mountain_pass(t, K: WeightK, stable_point: BranchPoint, cfg: SolveConfig | None = None) -> BranchPoint:
    """Unstable critical point by a climbing-image string method.

    The initial path is the segment from the stable solution to
    ``v1 + A`` with ``A`` doubled until the endpoint energy lies at least
    10 below the stable energy.  Interior nodes follow the H^1 gradient
    flow with equal-arclength reparameterization; the highest node climbs
    along the path tangent.  The climbing node is finally polished by
    Newton's method.
    """
    cfg = cfg or SolveConfig()
    mesh = K.mesh
    lap = mesh.laplacian
    m = lap.mass_diag
    v1 = np.asarray(stable_point.v, dtype=float)
    e1 = energy(t, K, v1)
    A = 1.0
    while energy(t, K, v1 + A) > e1 - 10.0:
        A *= 2.0
        if A > EXP_LIMIT / 2:
            raise SolverError("could not find a path endpoint 10 below the stable energy")

    P = spla.splu((lap.stiffness + sparse.diags(m)).tocsc())

    def h1(a, b):
        return float(a @ (lap.stiffness @ b) + np.sum(m * a * b))

    nodes = cfg.mp_nodes
    s = np.linspace(0.0, 1.0, nodes)
    path = v1[None, :] + A * s[:, None]
    energies = np.array([energy(t, K, p) for p in path])
    climb = int(np.argmax(energies))
    grad_norm = math.inf
    for it in range(cfg.mp_max_iters):
        climb = int(np.clip(np.argmax(energies), 1, nodes - 2))
        for j in range(1, nodes - 1):
            g = P.solve(residual(t, K, path[j]))
            if j == climb:
                tang = path[j + 1] - path[j - 1]
                tang /= math.sqrt(h1(tang, tang))
                g = g - 2.0 * h1(g, tang) * tang
                grad_norm = math.sqrt(h1(g, g))
            step = cfg.mp_step * g
            big = np.max(np.abs(step))
            if big > 0.5:
                step *= 0.5 / big
            path[j] = path[j] - step
        path = _reparameterize(path, climb, h1)
        energies = np.array([energy(t, K, p) for p in path])
        if grad_norm <= cfg.mp_tol:
            break
    v_guess = path[climb]
    try:
        pt = newton_solve(t, K, v_guess, cfg)
    except SolverError as exc:
        raise SolverError(
            "mountain pass: path collapsed without a saddle; try the mean-field route") from exc
    if pt.lambda_min >= 0 or pt.energy <= e1 or np.max(np.abs(pt.v - v1)) < 1e-6:
        raise SolverError(
            "mountain pass: path collapsed onto the stable solution; try the mean-field route")
    return pt


def _reparameterize(path, climb, h1):
    """Equal-arclength redistribution on each side of the climbing node."""
    out = path.copy()
    for lo, hi in ((0, climb), (climb, len(path) - 1)):
        if hi - lo < 2:
            continue
        seg = path[lo:hi + 1]
        d = np.array([math.sqrt(max(h1(b - a, b - a), 0.0)) for a, b in zip(seg[:-1], seg[1:])])
        cum = np.concatenate([[0.0], np.cumsum(d)])
        if cum[-1] == 0:
            continue
        targets = np.linspace(0.0, cum[-1], hi - lo + 1)[1:-1]
        for k, st in enumerate(targets, start=lo + 1):
            i = int(np.clip(np.searchsorted(cum, st) - 1, 0, len(d) - 1))
            lam = (st - cum[i]) / d[i] if d[i] > 0 else 0.0
            out[k] = (1 - lam) * seg[i] + lam * seg[i + 1]
    return out


# ---------------------------------------------------------------------------
# field snapshots
# ---------------------------------------------------------------------------

FIELD_HEADER = "FIELD 1"


def write_field(path, values, **meta):
    lines = [FIELD_HEADER]
    for k in sorted(meta):
        lines.append(f"meta {k} {meta[k]!r}")
    lines.append(f"n {len(values)}")
    lines += [repr(float(x)) for x in values]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != FIELD_HEADER:
        raise ValueError(f"{path}: missing '{FIELD_HEADER}' header")
    meta, i = {}, 1
    while lines[i].startswith("meta "):
        _, k, v = lines[i].split(" ", 2)
        meta[k] = v
        i += 1
    n = int(lines[i].split()[1])
    vals = np.array([float(x) for x in lines[i + 1:i + 1 + n]])
    if len(vals) != n:
        raise ValueError(f"{path}: expected {n} values, found {len(vals)}")
    return vals, meta
