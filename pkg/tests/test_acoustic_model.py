import numpy as np
import pytest

from senan_asr import numerics as nx
from senan_asr.acoustic_model import AcousticModel, AmConfig, am_forward, build_input
from senan_asr.errors import FrameCountMismatch, InvalidConfig, ShapeMismatch
from senan_asr.numerics import orthogonality_error

from conftest import param_fd_check


def tiny(arch="tdnnf", **kw):
    base = dict(arch=arch, layers=2, hidden=6, bottleneck=3, final_bottleneck=4, n_states=5, conv_filters=(2, 3), conv_height=4)
    base.update(kw)
    return AmConfig(**base)


def test_build_input_dims_and_rows():
    rng = np.random.default_rng(0)
    a, b, c = rng.standard_normal((98, 48)), rng.standard_normal((98, 120)), rng.standard_normal((98, 80))
    x = build_input(a, b, c)
    assert x.shape == (98, 248)
    np.testing.assert_array_equal(x.data[5], np.concatenate([a[5], b[5], c[5]]))
    np.testing.assert_array_equal(build_input(a).data, a)
    with pytest.raises(FrameCountMismatch):
        build_input(a, b[:97])


def test_zero_single_layer_gives_zero_logits():
    m = AcousticModel(7, tiny(layers=1, bypass_scale=0.0))
    for p in m.parameters():
        p.data = np.zeros_like(p.data)
    out = am_forward(m, np.random.default_rng(1).standard_normal((5, 7)))
    np.testing.assert_array_equal(out.data, 0.0)


@pytest.mark.parametrize("arch", ["tdnnf", "cnn_tdnnf"])
@pytest.mark.parametrize("T", [1, 2, 9])
def test_output_shape(arch, T):
    m = AcousticModel(7, tiny(arch))
    assert am_forward(m, np.random.default_rng(T).standard_normal((T, 7))).shape == (T, 5)


def test_input_dim_checked():
    with pytest.raises(ShapeMismatch):
        am_forward(AcousticModel(7, tiny()), np.zeros((3, 8)))


def test_config_validation():
    with pytest.raises(InvalidConfig):
        AmConfig(arch="lstm").validate()
    with pytest.raises(InvalidConfig):
        AmConfig(bottleneck=64, hidden=64).validate()


def test_semi_orthogonal_factors_are_constrained():
    m = AcousticModel(7, tiny())
    names = sorted(p.name for p in m.constrained())
    assert names == ["am.prefinal.linear", "am.tdnnf0.linear", "am.tdnnf1.linear"]


@pytest.mark.parametrize("arch,T,seed", [("tdnnf", 6, 0), ("tdnnf", 4, 1), ("cnn_tdnnf", 6, 2), ("cnn_tdnnf", 3, 3)])
def test_full_stack_gradient(arch, T, seed):
    m = AcousticModel(7, tiny(arch), seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((T, 7))
    w = rng.standard_normal((T, 5))
    loss = lambda: nx.total(nx.mul(nx.log_softmax(am_forward(m, x)), nx.constant(w)))  # noqa: E731
    assert param_fd_check(m.parameters(), loss, max_entries=15) < 1e-4


def test_input_gradient():
    m = AcousticModel(7, tiny(), seed=5)
    rng = np.random.default_rng(5)
    x = nx.parameter(rng.standard_normal((6, 7)))
    w = rng.standard_normal((6, 5))
    nx.backward(nx.total(nx.mul(am_forward(m, x), nx.constant(w))))
    num = nx.numeric_grad(lambda v: float(nx.total(nx.mul(am_forward(m, v), nx.constant(w))).data), x.data)
    assert np.abs(num - x.grad).max() / np.abs(num).max() < 1e-4


@pytest.mark.parametrize("arch", ["tdnnf", "cnn_tdnnf"])
def test_receptive_field_locality(arch):
    # frame-coupling renormalisation off, so locality is exact
    m = AcousticModel(7, tiny(arch, renorm=False), seed=1)
    back, ahead = m.receptive_field()
    T = back + ahead + 8
    rng = np.random.default_rng(2)
    x = rng.standard_normal((T, 7))
    t = back + 2
    base = am_forward(m, x).data[t]
    for s in range(T):
        z = x.copy()
        z[s] += 5.0
        changed = not np.array_equal(am_forward(m, z).data[t], base)
        if s < t - back or s > t + ahead:
            assert not changed


def test_constrained_factors_start_semi_orthogonal():
    m = AcousticModel(30, AmConfig(layers=2, hidden=32, bottleneck=8, final_bottleneck=12, n_states=6), seed=3)
    for p in m.constrained():
        assert orthogonality_error(p.data) < 1e-9


def test_one_projection_repairs_small_drift():
    m = AcousticModel(30, AmConfig(layers=2, hidden=32, bottleneck=8, final_bottleneck=12, n_states=6), seed=3)
    rng = np.random.default_rng(0)
    for p in m.constrained():
        drifted = p.data + 0.01 * rng.standard_normal(p.data.shape)
        assert orthogonality_error(nx.semi_orthogonal_step(drifted)) < 0.05
