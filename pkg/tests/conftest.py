import numpy as np
import pytest

from skincells import initialize_cells, toys


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def elbow_skeleton():
    return toys.two_bone_skeleton(length=30.0, limit_deg=60.0)


@pytest.fixture(scope="session")
def elbow_cylinder():
    return toys.cylinder_mesh(radius=3.0, length=30.0, axial=48, radial=12)


@pytest.fixture(scope="session")
def prism_rig():
    """12-vertex prism around a short two-bone chain."""
    mesh = toys.hex_prism_mesh(radius=2.0, length=10.0)
    skeleton = toys.two_bone_skeleton(length=10.0, limit_deg=45.0)
    return mesh, skeleton


@pytest.fixture
def prism_cells(prism_rig):
    mesh, skeleton = prism_rig
    return initialize_cells(skeleton, mesh, m=3, l=2, rng=np.random.default_rng(11))


def random_cells(rng, n=6, m=4, l=3, spread=4.0, names=None):
    """Random but well-conditioned cell parameters for property tests."""
    from skincells import SkinCellSet

    return SkinCellSet(
        centers=rng.normal(scale=spread, size=(n, m, 3)),
        log_diag=rng.uniform(-0.5, 0.5, size=(n, m, 3)),
        off_diag=rng.uniform(-0.5, 0.5, size=(n, m, 3)),
        log_t=rng.uniform(-1.0, 1.0, size=(n, m)),
        log_c=rng.uniform(-1.0, 1.0, size=n),
        log_r=rng.uniform(-0.5, 0.5, size=n),
        l=l,
        joint_names=names,
    )
