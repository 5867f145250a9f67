import numpy as np
import pytest

from senan_asr import numerics as nx


def fd_check(build, arrays, eps=1e-5):
    """Compare backward gradients with central differences.

    ``build`` maps a list of leaf Values to a scalar Value.  Returns the worst
    relative error over all leaves.
    """
    leaves = [nx.parameter(a) for a in arrays]
    loss = build(leaves)
    nx.backward(loss)
    worst = 0.0
    for i, leaf in enumerate(leaves):

        def f(x, i=i):
            vals = [nx.constant(a) for a in arrays]
            vals[i] = nx.constant(x)
            return float(build(vals).data)

        num = nx.numeric_grad(f, arrays[i], eps)
        ana = leaf.grad_or_zeros()
        scale = max(np.abs(num).max(), np.abs(ana).max(), 1e-8)
        worst = max(worst, float(np.abs(num - ana).max() / scale))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param_fd_check(params, loss_fn, eps=1e-5, max_entries=40, seed=0):
    """Finite-difference check of ``loss_fn()`` against backward for Parameters.

    Checks at most ``max_entries`` randomly chosen entries per parameter and
    returns the worst relative error (normalised by the larger gradient norm
    of each parameter).
    """
    pick = np.random.default_rng(seed)
    nx.zero_grads(params)
    nx.backward(loss_fn())
    worst = 0.0
    for p in params:
        ana = p.grad.copy()
        flat = np.arange(p.data.size)
        if flat.size > max_entries:
            flat = pick.choice(flat, max_entries, replace=False)
        num = np.zeros(flat.size)
        for j, i in enumerate(flat):
            base = p.data.copy()
            bump = base.copy().reshape(-1)
            bump[i] += eps
            p.data = bump.reshape(base.shape)
            hi = float(loss_fn().data)
            bump[i] -= 2 * eps
            p.data = bump.reshape(base.shape)
            lo = float(loss_fn().data)
            p.data = base
            num[j] = (hi - lo) / (2 * eps)
        a = ana.reshape(-1)[flat]
        scale = max(np.abs(num).max(), np.abs(a).max(), 1e-8)
        worst = max(worst, float(np.abs(num - a).max() / scale))
    return worst
