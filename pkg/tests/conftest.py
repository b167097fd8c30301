import numpy as np
import pytest

from redt.gradcheck import finite_difference_gradient, max_relative_error
from redt.tensor import Tensor


def gradcheck(fn, arrays, tol=1e-5, step=1e-6):
    """Compare reverse-mode grads of a scalar-valued ``fn`` against central
    differences for every input array (float64)."""
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    assert out.data.size == 1
    out.backward()
    for i in range(len(arrays)):

        def f(x, i=i):
            cur = [Tensor(a.copy()) for a in arrays]
            cur[i] = Tensor(x.copy())
            return float(fn(*cur).data)

        fd = finite_difference_gradient(f, arrays[i].copy(), step)
        grad = tensors[i].grad
        assert grad is not None, f"input {i} received no gradient"
        err = max_relative_error(grad, fd)
        assert err < tol, f"input {i}: relative error {err:.3g} >= {tol}"
    return tensors


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
