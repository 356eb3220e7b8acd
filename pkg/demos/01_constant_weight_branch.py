"""Constant weight: the whole solution curve is known in closed form.

With K = k the solutions stay constant, e^v solves t^2 k x^2 - x + 1 = 0,
and the two roots merge at t = 1/(2 sqrt k).  Continuation should
reproduce both roots and locate that fold.
"""
import math

import numpy as np

from gaussbif.mesh import generate_genus2_mesh
from gaussbif.solver import continue_branch
from gaussbif.weight import constant_weight

mesh = generate_genus2_mesh(2)
k = 0.25
K = constant_weight(mesh, k)
print(mesh)

curve = continue_branch(K)
print(f"fold at t = {curve.tau0:.12f}  (closed form {1 / (2 * math.sqrt(k)):.12f})")
print(f"{len(curve.points)} points, lambda_min changes sign {curve.lambda_sign_changes()} time(s)")

print(f"\n{'t':>10} {'branch':>8} {'e^v':>14} {'closed form':>14} {'lambda_min':>12}")
for i in np.linspace(0, len(curve.points) - 1, 12).round().astype(int):
    p = curve.points[i]
    upper = i > curve.fold_index
    disc = math.sqrt(max(1 - 4 * p.t ** 2 * k, 0.0))
    exact = (1 + disc) / (2 * p.t ** 2 * k) if upper else 2 / (1 + disc)
    print(f"{p.t:10.6f} {'upper' if upper else 'lower':>8} {math.exp(p.v.mean()):14.8f} "
          f"{exact:14.8f} {p.lambda_min:12.5f}")
