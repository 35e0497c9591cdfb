import pytest

from varflow import backend


def _available_backends():
    names = ["numpy"]
    if backend._numba_available():
        names.append("numba")
    return names


@pytest.fixture(params=_available_backends())
def kernel_backend(request):
    """Run a test once per available kernel backend."""
    backend.use(request.param)
    yield request.param
    backend.use("auto")


@pytest.fixture
def numpy_backend():
    backend.use("numpy")
    yield
    backend.use("auto")
