import numpy as np
import pytest

from fmaps.services.mesh import bumpy_icosphere, icosphere, save_mesh, square_grid
from fmaps.services.parallel import configure_threads
from fmaps.services.spectral import mesh_eigenbasis


def write_off(path, vertices, faces):
    lines = ["OFF", f"{len(vertices)} {len(faces)} 0"]
    lines += [" ".join(f"{x:.17g}" for x in v) for v in vertices]
    lines += ["3 " + " ".join(str(i) for i in f) for f in faces]
    path.write_text("\n".join(lines) + "\n")
    return path


def dense_soft_matrix(F1, F2, sigma):
    from fmaps.services.softmap import kernel_logits

    logits = kernel_logits(F2, F1, sigma)
    weights = np.exp(logits - logits.max(axis=1, keepdims=True))
    return weights / weights.sum(axis=1, keepdims=True)


@pytest.fixture(scope="session")
def sphere():
    return icosphere(3)


@pytest.fixture(scope="session")
def sphere_basis(sphere):
    return mesh_eigenbasis(sphere, 16)


@pytest.fixture(scope="session")
def bumpy():
    return bumpy_icosphere(3, seed=0)


@pytest.fixture(scope="session")
def bumpy_basis(bumpy):
    return mesh_eigenbasis(bumpy, 130)


@pytest.fixture(scope="session")
def small_pair():
    """Two different 162-vertex shapes with the same connectivity, for gradient checks."""
    mesh1, mesh2 = bumpy_icosphere(2, seed=1), bumpy_icosphere(2, seed=2)
    return mesh_eigenbasis(mesh1, 16), mesh_eigenbasis(mesh2, 16)


@pytest.fixture(scope="session")
def grid():
    return square_grid(21, 21)


@pytest.fixture
def bumpy_obj(tmp_path, bumpy):
    path = tmp_path / "bumpy.obj"
    save_mesh(bumpy, path)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def threads():
    """Set the worker count for one test, then go back to the default."""
    yield configure_threads
    configure_threads(0)
