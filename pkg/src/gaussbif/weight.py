"""Weight fields K = |alpha|^2 and the solvability bound t*."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import TriMesh, geodesic_distance

__all__ = ["WeightError", "WeightK", "make_weight", "compute_tstar", "load_weight", "write_weight"]

WEIGHT_HEADER = "WEIGHT 1"


class WeightError(ValueError):
    pass


@dataclass(frozen=True)
class WeightK:
    """Nonnegative vertex weight with a declared zero set.

    ``zeros`` lists ``(vertex, multiplicity)`` pairs.  When
    ``is_quadratic_differential`` is set the multiplicities must add up to
    4(g-1), the zero count of a holomorphic quadratic differential.
    """

    mesh: TriMesh
    values: np.ndarray
    zeros: tuple = ()
    is_quadratic_differential: bool = False
    normalization: float = 1.0
    name: str = field(default="K", compare=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "zeros", tuple((int(v), int(n)) for v, n in self.zeros))
        vals.flags.writeable = False
        self.validate()

    def validate(self):
        vals, mesh = self.values, self.mesh
        if vals.shape != (mesh.n_vertices,):
            raise WeightError(f"weight has {vals.size} values for {mesh.n_vertices} vertices")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise WeightError("weight must be finite and nonnegative")
        if not vals.max() > 0:
            raise WeightError("weight vanishes identically")
        zero_set = {v for v, _ in self.zeros}
        if len(zero_set) != len(self.zeros):
            raise WeightError("zero vertices must be distinct")
        for v, n in self.zeros:
            if not 0 <= v < mesh.n_vertices:
                raise WeightError(f"zero vertex {v} out of range")
            if n < 1:
                raise WeightError(f"multiplicity of zero {v} must be >= 1")
            if vals[v] != 0.0:
                raise WeightError(f"declared zero {v} has weight {vals[v]}")
        actual = set(np.flatnonzero(vals == 0.0).tolist())
        if actual != zero_set:
            extra = sorted(actual - zero_set)[:5]
            raise WeightError(f"weight vanishes at undeclared vertices {extra}")
        if self.is_quadratic_differential:
            total = sum(n for _, n in self.zeros)
            need = 4 * (mesh.genus - 1)
            if total != need:
                raise WeightError(
                    f"quadratic differential must have 4(g-1) = {need} zeros "
                    f"counted with multiplicity, got {total}")

    @property
    def max(self):
        return float(self.values.max())


def compute_tstar(K: WeightK) -> float:
    """Upper bound 1 / mean(2 sqrt(K)) on the parameter t."""
    avg = K.mesh.mean(2.0 * np.sqrt(K.values))
    if avg <= 0:
        raise WeightError("weight vanishes identically")
    return 1.0 / avg


def make_weight(mesh: TriMesh, zeros=(), target_tstar: float = 1.0,
                is_quadratic_differential: bool | None = None, name: str = "K") -> WeightK:
    """Distance-product surrogate ``c * prod_i d(z, q_i)^(2 n_i)``.

    The constant ``c`` is chosen so that ``compute_tstar`` returns
    ``target_tstar``.  With no zeros the weight is constant.  The
    quadratic-differential flag defaults to ``True`` exactly when zeros
    are given.
    """
    if not target_tstar > 0:
        raise WeightError("target_tstar must be positive")
    zeros = [(int(v), int(n)) for v, n in zeros]
    if len({v for v, _ in zeros}) != len(zeros):
        raise WeightError("zero vertices must be distinct")
    if any(n < 1 for _, n in zeros):
        raise WeightError("multiplicities must be >= 1")
    prod = np.ones(mesh.n_vertices)
    for v, n in zeros:
        prod *= geodesic_distance(mesh, v) ** (2 * n)
    for v, _ in zeros:
        prod[v] = 0.0
    if not prod.max() > 0:
        raise WeightError("zeros cover every vertex; weight vanishes identically")
    c = 1.0 / (target_tstar * mesh.mean(2.0 * np.sqrt(prod))) ** 2
    if is_quadratic_differential is None:
        is_quadratic_differential = bool(zeros)
    return WeightK(mesh, c * prod, tuple(zeros), is_quadratic_differential, c, name)


def constant_weight(mesh: TriMesh, k: float) -> WeightK:
    """K identically equal to ``k`` (not a quadratic differential)."""
    return WeightK(mesh, np.full(mesh.n_vertices, float(k)), (), False, float(k), "constant")


def write_weight(K: WeightK, path) -> None:
    lines = [WEIGHT_HEADER]
    for v, n in sorted(K.zeros):
        lines.append(f"zero {v} {n}")
    lines.append(f"qd {int(K.is_quadratic_differential)}")
    lines.append(f"normalization {float(K.normalization)!r}")
    lines.append(f"tstar {compute_tstar(K)!r}")
    for i, k in enumerate(K.values):
        lines.append(f"value {i} {float(k)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_weight(path, mesh: TriMesh) -> WeightK:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != WEIGHT_HEADER:
        raise WeightError(f"{path}: missing '{WEIGHT_HEADER}' header")
    zeros, values, qd, tstar, norm = [], {}, None, None, float("nan")
    for lineno, raw in enumerate(text[1:], start=2):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "zero":
                zeros.append((int(parts[1]), int(parts[2])))
            elif parts[0] == "value":
                values[int(parts[1])] = float(parts[2])
            elif parts[0] == "tstar":
                tstar = float(parts[1])
            elif parts[0] == "normalization":
                norm = float(parts[1])
            elif parts[0] == "qd":
                qd = bool(int(parts[1]))
            else:
                raise WeightError(f"{path}:{lineno}: unknown record '{parts[0]}'")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, WeightError):
                raise
            raise WeightError(f"{path}:{lineno}: cannot parse '{raw.strip()}'") from exc
    if len(values) != mesh.n_vertices or set(values) != set(range(mesh.n_vertices)):
        raise WeightError(f"{path}: expected {mesh.n_vertices} value lines, got {len(values)}")
    vals = np.array([values[i] for i in range(mesh.n_vertices)])
    if qd is None:
        qd = bool(zeros)
    K = WeightK(mesh, vals, tuple(zeros), qd, norm, Path(path).stem)
    if tstar is not None and abs(compute_tstar(K) - tstar) > 1e-10 * tstar:
        raise WeightError(f"{path}: stored tstar {tstar} does not match weight ({compute_tstar(K)})")
    return K
