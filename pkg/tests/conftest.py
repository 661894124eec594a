import numpy as np
import pytest

from riot import autodiff as ad


def numeric_grad(fn, arrays, h=1e-5):
    """Central finite differences of a scalar function of numpy arrays.

    ``fn`` receives the arrays and returns a float; the returned list
    holds one gradient array per input.  Independent of the autodiff
    path it is used to check.
    """
    grads = []
    for idx in range(len(arrays)):
        base = [a.copy() for a in arrays]
        g = np.zeros_like(arrays[idx])
        it = np.nditer(arrays[idx], flags=["multi_index"])
        while not it.finished:
            mi = it.multi_index
            plus = [a.copy() for a in base]
            minus = [a.copy() for a in base]
            plus[idx][mi] += h
            minus[idx][mi] -= h
            g[mi] = (fn(plus) - fn(minus)) / (2 * h)
            it.iternext()
        grads.append(g)
    return grads


def analytic_grad(fn, arrays):
    """Autodiff gradients of the same scalar function, via the tape."""
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    loss = fn(tensors)
    loss.backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def check_gradients(build_loss, arrays, rel_tol=1e-4, h=1e-5):
    """Compare analytic vs central-difference gradients.

    ``build_loss(inputs)`` must handle both Tensor and ndarray inputs
    (returning a Tensor or float respectively); the relative error is
    ||ga - gn|| / max(1, ||gn||) per input.
    """
    def numeric_fn(arrs):
        out = build_loss([np.asarray(a) for a in arrs])
        return float(out)

    def tensor_fn(tensors):
        return build_loss(tensors)

    num = numeric_grad(numeric_fn, arrays, h=h)
    ana = analytic_grad(tensor_fn, arrays)
    for i, (gn, ga) in enumerate(zip(num, ana)):
        err = np.linalg.norm(ga - gn) / max(1.0, np.linalg.norm(gn))
        assert err < rel_tol, f"input {i}: gradient relative error {err:.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
