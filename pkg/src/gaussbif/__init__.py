"""Bifurcation and blow-up numerics for the Gauss equation of minimal
immersions of closed hyperbolic surfaces.

Submodules: ``mesh`` (surfaces and the discrete Laplacian), ``weight``
(the coefficient K), ``solver`` (direct problem, continuation, mountain
pass), ``mean_field`` (sweeps in the mass rho), ``asymptotics`` (Green's
functions and blow-up diagnostics) and ``cli``.  Public names are loaded
lazily so that ``gaussbif --threads`` can configure BLAS before numpy is
imported.
"""
from importlib import import_module
from importlib.resources import files

__version__ = "0.1.0"

_EXPORTS = {
    "mesh": ["TriMesh", "LaplaceOperator", "MeshError", "generate_genus2_mesh",
             "generate_polygon_surface", "assemble_laplacian", "geodesic_distance",
             "load_mesh", "write_mesh"],
    "weight": ["WeightK", "WeightError", "make_weight", "constant_weight", "compute_tstar",
               "load_weight", "write_weight"],
    "solver": ["SolveConfig", "BranchPoint", "BranchCurve", "SolverError", "ConvergenceError",
               "BlowupError", "residual", "energy", "newton_solve", "stability_min_eig",
               "continue_branch", "mountain_pass", "read_field", "write_field"],
    "mean_field": ["MeanFieldSolution", "solve_mean_field", "sweep_rho",
                   "prescribe_extrinsic_curvature", "PrescribeError"],
    "asymptotics": ["GreenFunction", "greens_function", "regular_part_diagonal", "mass_profile",
                    "detect_blowup", "BlowupReport", "blowup_family", "moser_trudinger_J",
                    "MoserTrudingerReport", "mt_check", "location_functional",
                    "singular_limit_solve", "DiagnosticError"],
}
_WHERE = {name: mod for mod, names in _EXPORTS.items() for name in names}

__all__ = sorted(_WHERE) + ["shipped_mesh_path", "load_shipped_mesh"]


def __getattr__(name):
    mod = _WHERE.get(name)
    if mod is None:
        raise AttributeError(f"module 'gaussbif' has no attribute {name!r}")
    return getattr(import_module(f".{mod}", __name__), name)


def shipped_mesh_path(name="genus3_level1.mesh"):
    """Path of a mesh file bundled with the package."""
    return files(__name__).joinpath("data", name)


def load_shipped_mesh(name="genus3_level1.mesh"):
    from .mesh import load_mesh
    return load_mesh(shipped_mesh_path(name))
