import math
import time

import numpy as np
import pytest

from gaussbif import load_shipped_mesh
from gaussbif.mesh import generate_genus2_mesh
from gaussbif.solver import SolveConfig, continue_branch
from gaussbif.weight import constant_weight, make_weight

SESSION_START = time.perf_counter()
FAMILY_T_RATIO = 1e-3


def seeded_simple_zeros(mesh, count, seed=0):
    rng = np.random.default_rng(seed)
    return [(int(v), 1) for v in rng.choice(mesh.n_vertices, count, replace=False)]


@pytest.fixture(scope="session")
def mesh1():
    return generate_genus2_mesh(1)


@pytest.fixture(scope="session")
def mesh2():
    return generate_genus2_mesh(2)


@pytest.fixture(scope="session")
def mesh_g3():
    return load_shipped_mesh()


@pytest.fixture(scope="session")
def const_k2(mesh2):
    # 2 sqrt(k) = 1 gives tstar = 1 and tau0 = 1
    return constant_weight(mesh2, 0.25)


@pytest.fixture(scope="session")
def generic_k1(mesh1):
    return make_weight(mesh1, seeded_simple_zeros(mesh1, 4), 1.0, True)


@pytest.fixture(scope="session")
def generic_k2(mesh2):
    return make_weight(mesh2, seeded_simple_zeros(mesh2, 4), 1.0, True)


@pytest.fixture(scope="session")
def generic_k3(mesh_g3):
    return make_weight(mesh_g3, seeded_simple_zeros(mesh_g3, 8), 1.0, True)


@pytest.fixture(scope="session")
def const_curve(const_k2):
    start = time.perf_counter()
    curve = continue_branch(const_k2, SolveConfig())
    curve.metadata["elapsed"] = time.perf_counter() - start
    return curve


@pytest.fixture(scope="session")
def generic_curve1(generic_k1):
    return continue_branch(generic_k1, SolveConfig(t_floor_ratio=FAMILY_T_RATIO))


@pytest.fixture(scope="session")
def generic_curve2(generic_k2):
    return continue_branch(generic_k2, SolveConfig(t_floor_ratio=FAMILY_T_RATIO))


@pytest.fixture(scope="session")
def generic_curve3(generic_k3):
    return continue_branch(generic_k3, SolveConfig(t_floor_ratio=FAMILY_T_RATIO))


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion
# ---------------------------------------------------------------------------

def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            props = dict(getattr(rep, "user_properties", []))
            if rep.when == "call" and "criterion" in props:
                status = "PASS" if rep.passed else "FAIL"
                lines.append((props["criterion"], f"criterion {props['criterion']:>2}: {status}  "
                                                  f"{props.get('summary', '')}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, text in sorted(lines):
            terminalreporter.write_line(text)
