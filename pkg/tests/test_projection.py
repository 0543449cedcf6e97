import numpy as np
import pytest

from eiven import autograd as ag
from eiven.autograd import Tensor
from eiven.errors import ShapeError
from eiven.projection import ProjectionNet
from eiven.vision import MGVFEmbedding

from gradcheck import numeric_grad, relative_error

RNG = np.random.default_rng(7)


def test_output_shape_and_param_count():
    net = ProjectionNet(in_width=64, hidden=128, out_width=128, seed=0)
    out = net.project(MGVFEmbedding(rows=RNG.standard_normal((4, 64)).astype(np.float32)))
    assert out.shape == (4, 128)
    # 64*256 + 256 + 128*128 + 128
    assert net.param_count == 33152


def test_zero_down_weights_give_bias_rows():
    net = ProjectionNet(in_width=8, hidden=4, out_width=6, seed=0)
    net.w_down.data[:] = 0.0
    net.b_down.data[:] = 0.0
    net.b_up.data[:] = np.arange(6.0)
    out = net.project(MGVFEmbedding(rows=RNG.standard_normal((3, 8)).astype(np.float32)))
    assert np.allclose(out.data, np.tile(np.arange(6.0), (3, 1)), atol=1e-6)


def test_row_independence():
    net = ProjectionNet(in_width=16, hidden=8, out_width=12, seed=1)
    rows = RNG.standard_normal((5, 16)).astype(np.float32)
    perm = np.array([3, 0, 4, 1, 2])
    out = net.project(MGVFEmbedding(rows=rows)).data
    out_perm = net.project(MGVFEmbedding(rows=rows[perm])).data
    assert np.array_equal(out_perm, out[perm])


def test_width_mismatch():
    net = ProjectionNet(in_width=16, hidden=8, out_width=12, seed=1)
    with pytest.raises(ShapeError):
        net.project(MGVFEmbedding(rows=np.zeros((2, 9), dtype=np.float32)))


def test_all_tensors_trainable():
    net = ProjectionNet(in_width=16, hidden=8, out_width=12, seed=1)
    assert all(t.requires_grad and not t.frozen for _, t in net.named_tensors())


def test_project_gradcheck():
    net = ProjectionNet(in_width=6, hidden=5, out_width=4, seed=2, dtype=np.float64)
    rows = RNG.standard_normal((3, 6))
    weight = RNG.standard_normal((3, 4))

    def forward():
        out = net.project(Tensor(rows, dtype=np.float64))
        return ag.reduce_sum(ag.mul(out, Tensor(weight, dtype=np.float64)))

    loss = forward()
    ag.backward(loss)
    params = [net.w_down, net.b_down, net.w_up, net.b_up]
    bufs = [p.data for p in params]
    numeric = numeric_grad(lambda: forward().item(), bufs)
    for p, num in zip(params, numeric):
        assert relative_error(p.grad, num) < 1e-4
        p.zero_grad()
