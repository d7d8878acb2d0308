"""Isotropic flow of the unit sphere against R(t) = sqrt(1 - 4t)."""
import math

import numpy as np

from wulff_flow.anisotropy import ConstantOne, Isotropic
from wulff_flow.bdf import run_flow
from wulff_flow.mesh import generate_levelset_mesh, sphere_levelset

mesh = generate_levelset_mesh(sphere_levelset(), 3, 2)
nu = mesh.nodes / np.linalg.norm(mesh.nodes, axis=1)[:, None]


def show(state, rec):
    if state.n % 20 == 0:
        r = np.linalg.norm(state.x, axis=1)
        print(f"t={state.t:.3f}  mean radius={r.mean():.6f}  exact={math.sqrt(1 - 4 * state.t):.6f}  "
              f"spread={r.max() - r.min():.1e}  energy={rec.energy:.6f}")


res = run_flow(mesh, nu, -2.0 * np.ones(mesh.n_nodes), Isotropic(), ConstantOne(),
               q=2, tau=1e-3, T=0.2, callback=show)
print("completed" if res.completed else f"aborted: {res.error}")
