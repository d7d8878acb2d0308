import numpy as np
import pytest

from wulff_flow.mesh import build_reference_element, generate_levelset_mesh, SurfaceMesh, sphere_levelset
from wulff_flow.exact import SelfSimilarEllipsoid


@pytest.fixture(scope="session")
def sphere2():
    """Quadratic unit sphere, refinement 2 (642 nodes)."""
    return generate_levelset_mesh(sphere_levelset(), 2, 2)


@pytest.fixture(scope="session")
def sphere1_linear():
    return generate_levelset_mesh(sphere_levelset(), 1, 1)


@pytest.fixture(scope="session")
def ellipsoid2():
    sol = SelfSimilarEllipsoid(0.5)
    return sol, generate_levelset_mesh(sol.levelset(0.0), 2, 2)


def flat_triangle(k=1, P=((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0))):
    P = np.array(P, float)
    nodes = P if k == 1 else np.vstack([P, (P[0] + P[1]) / 2, (P[1] + P[2]) / 2, (P[2] + P[0]) / 2])
    return SurfaceMesh(nodes, np.arange(len(nodes))[None, :], build_reference_element(k))
