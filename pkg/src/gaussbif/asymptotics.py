"""Green's functions and diagnostics for families blowing up as t -> 0.

Conventions: all fields are per-vertex numpy arrays on a :class:`TriMesh`;
"mass" means ``t^2 int K e^v`` restricted to a set of vertices.
"""
from __future__ import annotations

import json
import math
import weakref
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as spla

from .mesh import TriMesh
from .solver import BranchPoint, ConvergenceError, SolveConfig, SolverError
from .weight import WeightK

__all__ = [
    "DiagnosticError",
    "GreenFunction",
    "greens_function",
    "regular_part_diagonal",
    "mass_profile",
    "mass_partition",
    "ball_radii",
    "concentration_points",
    "BlowupReport",
    "detect_blowup",
    "blowup_family",
    "moser_trudinger_J",
    "MoserTrudingerReport",
    "mt_check",
    "LocationFunctional",
    "location_functional",
    "singular_limit_solve",
]

CONCENTRATION_FRACTION = 0.8
BALL_FRACTION = 0.3
N_RADII = 5
ANNULUS = (2.0, 6.0)
DIAGONAL_CAP = 5000


class DiagnosticError(ValueError):
    """A diagnostic precondition is not met."""


# ---------------------------------------------------------------------------
# Green's function
# ---------------------------------------------------------------------------

_factor_cache: "weakref.WeakKeyDictionary[TriMesh, object]" = weakref.WeakKeyDictionary()


def _poisson_factor(mesh: TriMesh):
    """LU factor of the stiffness matrix bordered by the mass vector.

    The border fixes the zero-mean normalization and keeps the system
    symmetric, so that the computed Green's functions are reciprocal.
    """
    lu = _factor_cache.get(mesh)
    if lu is None:
        lap = mesh.laplacian
        m = sparse.csc_matrix(lap.mass_diag[:, None])
        B = sparse.bmat([[lap.stiffness, m], [m.T, None]], format="csc")
        lu = spla.splu(B)
        _factor_cache[mesh] = lu
    return lu


def _green_columns(mesh: TriMesh, poles):
    """Zero-mean solutions of L G = e_p - m/|S| for each pole (columns)."""
    poles = np.atleast_1d(np.asarray(poles, dtype=np.int64))
    n = mesh.n_vertices
    m = mesh.vertex_area
    rhs = np.zeros((n + 1, len(poles)))
    rhs[:n] = -m[:, None] / mesh.total_area
    rhs[poles, np.arange(len(poles))] += 1.0
    sol = _poisson_factor(mesh).solve(rhs)
    if not np.all(np.isfinite(sol)):
        raise SolverError("Green's function solve failed")
    G = sol[:n]
    # remove round-off drift of the mean
    return G - (m @ G)[None, :] / mesh.total_area


@dataclass
class GreenFunction:
    pole: int
    field: np.ndarray = field(repr=False)
    regular_part_at_pole: float
    fit_residual: float
    poisson_residual: float


def _annulus_fit(G, d, m, h):
    lo, hi = ANNULUS[0] * h, ANNULUS[1] * h
    ring = (d >= lo) & (d <= hi)
    if not np.any(ring):
        raise DiagnosticError("annulus for the regular-part fit contains no vertices")
    reg = G[ring] + np.log(d[ring]) / (2.0 * math.pi)
    wts = m[ring]
    gamma = float(np.sum(wts * reg) / np.sum(wts))
    return gamma, float(np.max(np.abs(reg - gamma)))


def greens_function(mesh: TriMesh, pole: int, cfg: SolveConfig | None = None) -> GreenFunction:
    """Green's function with pole at a vertex and its regular part there.

    The regular part is the area-weighted average of
    ``G + log(d)/(2 pi)`` over the annulus ``2h <= d <= 6h`` (``h`` the
    mean edge length); ``fit_residual`` is the largest deviation from
    that average inside the annulus.
    """
    pole = int(pole)
    if not 0 <= pole < mesh.n_vertices:
        raise DiagnosticError(f"pole {pole} out of range")
    G = _green_columns(mesh, [pole])[:, 0]
    lap = mesh.laplacian
    rhs = -mesh.vertex_area / mesh.total_area
    rhs[pole] += 1.0
    res = float(np.max(np.abs(lap.stiffness @ G - rhs)))
    d = mesh.distances_from(pole)
    gamma, fit = _annulus_fit(G, d, mesh.vertex_area, mesh.mean_edge_length)
    return GreenFunction(pole, G, gamma, fit, res)


def regular_part_diagonal(mesh: TriMesh, cfg: SolveConfig | None = None,
                          max_vertices: int = DIAGONAL_CAP, chunk: int = 256) -> np.ndarray:
    """``gamma(p, p)`` for every vertex (one Poisson solve per vertex)."""
    n = mesh.n_vertices
    if n > max_vertices:
        raise DiagnosticError(f"mesh has {n} vertices, above the cap of {max_vertices} "
                              "for the regular-part diagonal")
    m = mesh.vertex_area
    h = mesh.mean_edge_length
    out = np.empty(n)
    for start in range(0, n, chunk):
        poles = np.arange(start, min(start + chunk, n))
        G = _green_columns(mesh, poles)
        D = csgraph.dijkstra(mesh.distance_graph, directed=False, indices=poles,
                             limit=ANNULUS[1] * h * (1 + 1e-12))
        for col, p in enumerate(poles):
            out[p] = _annulus_fit(G[:, col], D[col], m, h)[0]
    return out


# ---------------------------------------------------------------------------
# mass bookkeeping
# ---------------------------------------------------------------------------

def _density(point: BranchPoint, K: WeightK):
    """Per-vertex mass ``t^2 m K e^v``."""
    return point.t ** 2 * K.mesh.vertex_area * K.values * np.exp(point.v)


def ball_radii(mesh: TriMesh, count: int = N_RADII):
    """Shrinking radius schedule ``0.3 diam 2^-k``."""
    return [BALL_FRACTION * mesh.diameter * 2.0 ** -k for k in range(count)]


def mass_profile(point: BranchPoint, K: WeightK, radii):
    """Mass in geodesic balls about the maximum point of v."""
    center = int(np.argmax(point.v))
    d = K.mesh.distances_from(center)
    dens = _density(point, K)
    return [(float(r), float(np.sum(dens[d <= r]))) for r in radii]


def mass_partition(point: BranchPoint, K: WeightK, centers, radius):
    """Masses of disjoint balls about ``centers`` plus the remainder.

    A vertex within ``radius`` of several centers is counted for the
    closest one, so the parts always add up to the total mass.
    """
    dens = _density(point, K)
    if len(centers) == 0:
        return [], float(dens.sum())
    D = np.vstack([K.mesh.distances_from(c) for c in centers])
    nearest = np.argmin(D, axis=0)
    inside = D[nearest, np.arange(D.shape[1])] <= radius
    balls = [float(np.sum(dens[inside & (nearest == j)])) for j in range(len(centers))]
    return balls, float(np.sum(dens[~inside]))


def concentration_points(point: BranchPoint, K: WeightK, radius=None,
                         threshold=CONCENTRATION_FRACTION * 4 * math.pi):
    """Local maxima of ``t^2 K e^v`` whose balls carry at least ``threshold``.

    Candidates are taken in decreasing order of density; a candidate
    inside the ball of an accepted point is skipped.
    """
    mesh = K.mesh
    radius = ball_radii(mesh, 1)[0] if radius is None else radius
    f = point.t ** 2 * K.values * np.exp(point.v)
    A = mesh.adjacency.tocsr()
    nbr_max = np.full(mesh.n_vertices, -np.inf)
    rows = np.repeat(np.arange(mesh.n_vertices), np.diff(A.indptr))
    np.maximum.at(nbr_max, rows, f[A.indices])
    maxima = np.flatnonzero(f > nbr_max)
    maxima = maxima[np.argsort(-f[maxima], kind="stable")]
    dens = _density(point, K)
    accepted, dists = [], []
    for p in maxima:
        if any(d[p] <= radius for d in dists):
            continue
        d = mesh.distances_from(p)
        if float(np.sum(dens[d <= radius])) >= threshold:
            accepted.append(int(p))
            dists.append(d)
    return accepted


# ---------------------------------------------------------------------------
# blow-up report
# ---------------------------------------------------------------------------

@dataclass
class BlowupReport:
    family_id: str
    genus: int
    rows: list
    estimated_m: int
    mass_ratio: float
    concentration_vertices: list
    K_at_concentration: list
    near_zero_flags: list
    multiplicities: list
    far_field_errors: list
    far_field_constant: float
    location_argmax: int | None = None
    location_residual: float | None = None
    location_hops: int | None = None
    mt_values: list = field(default_factory=list)
    limit_profile_error: float | None = None

    def to_json(self, path=None):
        data = {"schema": "BLOWUP 1", **asdict(self)}
        text = json.dumps(data, indent=2, sort_keys=True, default=float)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def blowup_family(curve, t_min_ratio: float = 0.0):
    """Unstable points of a branch curve ordered by decreasing t."""
    tau0 = curve.tau0
    if tau0 is None:
        raise DiagnosticError("curve has no fold; no unstable family")
    pts = [p for p in curve.unstable_points if p.t >= t_min_ratio * tau0 * (1 - 1e-9)]
    return sorted(pts, key=lambda p: -p.t)


def _hops(mesh, a, b):
    if a == b:
        return 0
    d = csgraph.shortest_path(mesh.adjacency, directed=False, unweighted=True, indices=int(a))
    return int(d[int(b)])


def detect_blowup(family, K: WeightK, cfg: SolveConfig | None = None, gamma_diag=None,
                  family_id: str = "family", radius=None) -> BlowupReport:
    """Mass quantization, concentration and limit-profile diagnostics."""
    mesh = K.mesh
    family = list(family)
    if len(family) < 3:
        raise DiagnosticError("family too short: need at least 3 points")
    ts = np.array([p.t for p in family])
    if np.any(np.diff(ts) > 0):
        raise DiagnosticError("family must be ordered by decreasing t")
    sup = np.array([p.sup_v for p in family])
    if not sup[-1] > sup[0]:
        raise DiagnosticError("no growth of max v detected along the family")
    radius = ball_radii(mesh, 1)[0] if radius is None else radius
    radii = ball_radii(mesh)

    last = family[-1]
    ratio = last.rho / (4.0 * math.pi)
    m_est = int(min(max(round(ratio), 1), mesh.genus - 1))
    centers = concentration_points(last, K, radius)
    kmax = K.max
    zero_mult = dict(K.zeros)
    K_at = [float(K.values[p]) for p in centers]
    flags = [bool(k < 0.1 * kmax) for k in K_at]
    mults = [int(zero_mult.get(p, 0)) for p in centers]

    rows = []
    for p in family:
        peak = int(np.argmax(_density(p, K) / mesh.vertex_area))
        prof = mass_profile(p, K, radii)
        rows.append({"t": p.t, "rho": p.rho, "sup_v": p.sup_v, "c": p.c,
                     "concentration_vertex": peak, "K_at_peak": float(K.values[peak]),
                     "ball_mass": [mval for _, mval in prof], "ball_radius": radii})

    # far field against 8 pi sum (1 + n_j) G(., p_j)
    errors, const = [], math.nan
    if centers:
        G = _green_columns(mesh, centers)
        limit = G @ (8.0 * math.pi * (1.0 + np.array(mults, dtype=float)))
        D = np.vstack([mesh.distances_from(c) for c in centers])
        far = np.min(D, axis=0) > radius
        for p in family:
            errors.append(float(np.max(np.abs(p.w[far] - limit[far]))))
        shape = G @ (1.0 + np.array(mults, dtype=float))
        wts = mesh.vertex_area[far]
        const = float(np.sum(wts * last.w[far] * shape[far]) / np.sum(wts * shape[far] ** 2))

    report = BlowupReport(family_id, mesh.genus, rows, m_est, float(ratio), centers, K_at, flags,
                          mults, errors, const)
    report.mt_values = [moser_trudinger_J(p.w, K) for p in family]
    if gamma_diag is not None and centers:
        loc = location_functional(mesh, K, gamma_diag)
        report.location_argmax = loc.argmax
        report.location_residual = float(loc.values[loc.argmax] - loc.values[centers[0]])
        report.location_hops = _hops(mesh, loc.argmax, centers[0])
    divisor = [(p, 4.0 * math.pi * (1 + n)) for p, n in zip(centers, mults)]
    if divisor and sum(wt for _, wt in divisor) < 4.0 * math.pi * (mesh.genus - 1):
        try:
            v0 = singular_limit_solve(mesh, divisor, cfg)
            D = np.vstack([mesh.distances_from(c) for c in centers])
            far = np.min(D, axis=0) > radius
            report.limit_profile_error = float(np.max(np.abs(np.exp(-last.v[far]) - np.exp(-v0[far]))))
        except SolverError:
            report.limit_profile_error = None
    return report


# ---------------------------------------------------------------------------
# Moser-Trudinger functional and location of blow-up
# ---------------------------------------------------------------------------

def moser_trudinger_J(w, K: WeightK) -> float:
    """``1/2 |grad w|^2 - 8 pi log(mean(K e^w))`` for zero-mean ``w``."""
    mesh = K.mesh
    w = np.asarray(w, dtype=float)
    if abs(mesh.mean(w)) > 1e-8 * (1.0 + float(np.max(np.abs(w)))):
        raise DiagnosticError("moser_trudinger_J needs a zero-mean field")
    avg = mesh.mean(K.values * np.exp(w))
    if not avg > 0:
        raise DiagnosticError("integral of K e^w vanishes")
    return float(0.5 * mesh.laplacian.dirichlet_energy(w) - 8.0 * math.pi * math.log(avg))


@dataclass
class LocationFunctional:
    values: np.ndarray = field(repr=False)
    argmax: int
    max_value: float
    inf_j_bound: float
    inf_j_bound_area: float


def location_functional(mesh: TriMesh, K: WeightK, gamma_diag) -> LocationFunctional:
    """``4 pi gamma(p,p) + log K(p)``, with ``-inf`` at zeros of K.

    ``inf_j_bound`` is ``-8 pi (max + log(2 pi (g-1)) + 1)``; the variant
    with ``log(pi / |S|)`` in place of ``log(2 pi (g-1))`` is returned as
    ``inf_j_bound_area``.
    """
    gamma_diag = np.asarray(gamma_diag, dtype=float)
    with np.errstate(divide="ignore"):
        vals = 4.0 * math.pi * gamma_diag + np.where(K.values > 0, np.log(K.values), -np.inf)
    top = int(np.argmax(vals))
    fmax = float(vals[top])
    bound = -8.0 * math.pi * (fmax + math.log(2.0 * math.pi * (mesh.genus - 1)) + 1.0)
    bound_area = -8.0 * math.pi * (fmax + math.log(math.pi / mesh.total_area) + 1.0)
    return LocationFunctional(vals, top, fmax, bound, bound_area)


@dataclass
class MoserTrudingerReport:
    J_value: float
    w: np.ndarray = field(repr=False)
    rhs_bound: float
    rhs_bound_area: float
    lower_bound: float
    attained_candidate: bool
    samples: int


def mt_check(K: WeightK, w=None, gamma_diag=None, samples: int = 100, grad_bound: float = 10.0,
             seed: int = 0) -> MoserTrudingerReport:
    """Evaluate J at ``w`` and on random fields with ``|grad w| <= grad_bound``.

    ``lower_bound`` is the smallest value seen (the functional is bounded
    below); ``attained_candidate`` is set when that value lies strictly
    below the right-hand side of the infimum bound, which is the
    alternative where the infimum is attained.
    """
    mesh = K.mesh
    rng = np.random.default_rng(seed)
    lap = mesh.laplacian
    w = np.zeros(mesh.n_vertices) if w is None else mesh.zero_mean(w)
    J0 = moser_trudinger_J(w, K)
    values = [J0]
    for _ in range(samples):
        x = mesh.zero_mean(rng.standard_normal(mesh.n_vertices))
        g = math.sqrt(lap.dirichlet_energy(x))
        x = mesh.zero_mean(x * rng.uniform(0.0, grad_bound) / g)
        values.append(moser_trudinger_J(x, K))
    lowest = float(min(values))
    if gamma_diag is None:
        rhs = rhs_area = math.nan
        attained = False
    else:
        loc = location_functional(mesh, K, gamma_diag)
        rhs, rhs_area = loc.inf_j_bound, loc.inf_j_bound_area
        attained = bool(lowest < rhs)
    return MoserTrudingerReport(J0, w, rhs, rhs_area, lowest, attained, samples)


# ---------------------------------------------------------------------------
# singular limit equation
# ---------------------------------------------------------------------------

def singular_limit_solve(mesh: TriMesh, divisor, cfg: SolveConfig | None = None) -> np.ndarray:
    """Solve ``L v = 2 (sum_j a_j e_{p_j} + m e^{-v} - m)``.

    ``divisor`` lists ``(vertex, weight)`` with weights ``4 pi (1 + n_j)``;
    the point masses are lumped at the vertices.  A solution exists only if
    the weights sum to less than ``4 pi (g - 1)``.
    """
    cfg = cfg or SolveConfig()
    total = float(sum(wt for _, wt in divisor))
    limit = 4.0 * math.pi * (mesh.genus - 1)
    if total >= limit * (1 - 1e-12) or total >= mesh.total_area:
        raise DiagnosticError(
            f"divisor weight {total:.6g} >= 4*pi*(g-1) = {limit:.6g}: a conical hyperbolic metric "
            "needs chi(S) + |D| < 0")
    lap = mesh.laplacian
    m = lap.mass_diag
    point = np.zeros(mesh.n_vertices)
    for p, wt in divisor:
        point[int(p)] += float(wt)
    v = np.zeros(mesh.n_vertices)

    def F(v):
        return lap.stiffness @ v - 2.0 * (point + m * np.exp(-v) - m)

    def norm(r):
        return float(np.sqrt(np.sum(r * r / m)))

    r = F(v)
    res = norm(r)
    for _ in range(cfg.max_newton_iters):
        if res <= cfg.newton_tol:
            return v
        J = (lap.stiffness + sparse.diags(2.0 * m * np.exp(-v))).tocsc()
        dv = spla.spsolve(J, -r)
        alpha = 1.0
        while True:
            trial = v + alpha * dv
            with np.errstate(over="ignore"):
                rt = F(trial)
            nt = norm(rt)
            if nt <= (1 - 1e-4 * alpha) * res or alpha < cfg.ls_min_step:
                break
            alpha *= cfg.ls_shrink
        v, r, res = trial, rt, nt
    if res <= cfg.newton_tol:
        return v
    raise ConvergenceError(f"singular limit solve did not converge: residual {res:.3e}")
