import numpy as np
import pytest
import torch

from dynamics.approx import checkpoints
from dynamics.approx.networks import BiRnn, BiRnnSpec, Mlp, MlpSpec, birnn_forward, mlp_forward
from dynamics.approx.params import (
    AdamHyper, AdamMoments, ParamSet, adam_step, dtype_for, finite_diff_check, grad,
)
from dynamics.exceptions import ContainerFormatError, EmptySequenceError, NonFiniteError, ShapeMismatchError


@pytest.fixture
def mlp():
    torch.manual_seed(0)
    return Mlp(MlpSpec(3, 2, hidden=(5, 4))).to(torch.float64)


def test_mlp_functional_matches_module(mlp):
    x = torch.randn(7, 3, dtype=torch.float64)
    params = ParamSet.from_module(mlp)
    torch.testing.assert_close(mlp_forward(mlp.spec, params, x), mlp(x))
    assert mlp(x).shape == (7, 2)


def test_identity_mlp_is_affine():
    torch.manual_seed(1)
    net = Mlp(MlpSpec(2, 2, hidden=(3,), activation="identity")).to(torch.float64)
    x = torch.randn(4, 2, dtype=torch.float64)
    w0, b0 = net.layers[0].weight, net.layers[0].bias
    w1, b1 = net.layers[1].weight, net.layers[1].bias
    torch.testing.assert_close(net(x), (x @ w0.T + b0) @ w1.T + b1)


def test_mlp_rejects_wrong_width(mlp):
    with pytest.raises(ShapeMismatchError):
        mlp(torch.zeros(2, 4, dtype=torch.float64))


def test_birnn_summary_shapes():
    torch.manual_seed(2)
    rnn = BiRnn(BiRnnSpec(input_dim=3, state_dim=6, layers=2)).to(torch.float64)
    batch = torch.randn(4, 9, 3, dtype=torch.float64)
    assert rnn(batch).shape == (4, 12)
    torch.testing.assert_close(rnn(batch[1]), rnn(batch)[1])
    with pytest.raises(EmptySequenceError):
        rnn(torch.zeros(4, 0, 3, dtype=torch.float64))
    with pytest.raises(ShapeMismatchError):
        rnn(torch.zeros(4, 5, 2, dtype=torch.float64))


def test_birnn_forward_uses_given_params():
    torch.manual_seed(3)
    spec = BiRnnSpec(input_dim=2, state_dim=4, layers=1)
    rnn = BiRnn(spec).to(torch.float64)
    seq = torch.randn(3, 5, 2, dtype=torch.float64)
    params = dict(rnn.named_parameters())
    torch.testing.assert_close(birnn_forward(spec, params, seq), rnn(seq))


def test_birnn_reads_both_directions():
    torch.manual_seed(4)
    rnn = BiRnn(BiRnnSpec(input_dim=1, state_dim=3, layers=1)).to(torch.float64)
    seq = torch.randn(1, 6, 1, dtype=torch.float64)
    changed = seq.clone()
    changed[0, 0, 0] += 1.0
    out, out_changed = rnn(seq), rnn(changed)
    # the backward direction's final state has read the first element last
    assert not torch.allclose(out[0, 3:], out_changed[0, 3:])


def test_param_set_shapes_are_fixed(mlp):
    params = ParamSet.from_module(mlp)
    with pytest.raises(ShapeMismatchError):
        params["layers.0.weight"] = torch.zeros(1, 1)
    arrays = params.to_numpy()
    arrays.pop("layers.0.bias")
    with pytest.raises(ShapeMismatchError):
        params.load_numpy(arrays)


def test_load_numpy_updates_module(mlp):
    params = ParamSet.from_module(mlp)
    zeros = {name: np.zeros(shape) for name, shape in params.shapes.items()}
    params.load_numpy(zeros)
    assert torch.count_nonzero(mlp(torch.ones(1, 3, dtype=torch.float64))) == 0


def test_grad_matches_autograd(mlp):
    params = ParamSet.from_module(mlp)
    x = torch.randn(5, 3, dtype=torch.float64)
    gradient = grad(lambda p: mlp_forward(mlp.spec, p, x).pow(2).sum(), params)
    mlp(x).pow(2).sum().backward()
    for name, p in mlp.named_parameters():
        torch.testing.assert_close(gradient[name], p.grad)


def test_grad_rejects_non_finite_loss(mlp):
    params = ParamSet.from_module(mlp)
    with pytest.raises(NonFiniteError):
        grad(lambda p: p["layers.0.weight"].sum() * float("inf"), params)


def test_first_adam_step_moves_by_learning_rate(mlp):
    params = ParamSet.from_module(mlp)
    before = {k: v.detach().clone() for k, v in params.items()}
    gradient = grad(lambda p: sum(t.sum() for t in p.values()), params)
    adam_step(params, gradient, AdamMoments(params, AdamHyper(lr=0.01)))
    for name, p in params.items():
        torch.testing.assert_close(p.detach(), before[name] - 0.01, atol=1e-9, rtol=0)


def test_adam_moments_resume(mlp):
    params = ParamSet.from_module(mlp)
    x = torch.randn(5, 3, dtype=torch.float64)

    def loss(p):
        return mlp_forward(mlp.spec, p, x).pow(2).sum()

    moments = AdamMoments(params)
    adam_step(params, grad(loss, params), moments)
    saved_params, saved_moments = params.to_numpy(), moments.state_arrays()
    adam_step(params, grad(loss, params), moments)
    expected = params.to_numpy()

    params.load_numpy(saved_params)
    resumed = AdamMoments(params)
    resumed.load_state_arrays(saved_moments)
    adam_step(params, grad(loss, params), resumed)
    for name, array in params.to_numpy().items():
        np.testing.assert_array_equal(array, expected[name])


def test_finite_diff_check_on_smooth_loss(mlp):
    params = ParamSet.from_module(mlp)
    x = torch.randn(6, 3, dtype=torch.float64)
    error = finite_diff_check(lambda p: torch.tanh(mlp_forward(mlp.spec, p, x)).sum(), params, fraction=0.5)
    assert error <= 1e-4


def test_dtype_for():
    assert dtype_for("float64") == torch.float64
    with pytest.raises(ValueError):
        dtype_for("float16")


def test_checkpoint_round_trip(tmp_path, mlp):
    params = ParamSet.from_module(mlp)
    moments = AdamMoments(params)
    adam_step(params, grad(lambda p: sum(t.sum() for t in p.values()), params), moments)
    checkpoints.save_checkpoint(tmp_path, params, {"kind": "mlp", "epoch": 3}, moments)
    expected_draw = torch.rand(3)
    loaded = checkpoints.load_checkpoint(tmp_path)
    assert loaded["manifest"] == {"kind": "mlp", "epoch": 3}
    for name, array in params.to_numpy().items():
        np.testing.assert_array_equal(loaded["params"][name], array)
    assert set(loaded["moments"]) == set(moments.state_arrays())
    checkpoints.restore_rng(loaded["torch_rng"])
    torch.testing.assert_close(torch.rand(3), expected_draw)


def test_checkpoint_rejects_missing_tensor(tmp_path, mlp):
    params = ParamSet.from_module(mlp)
    checkpoints.save_checkpoint(tmp_path, params, {})
    (tmp_path / "param.layers.0.bias.vcno").unlink()
    meta = (tmp_path / "meta.json").read_text().replace('"param.layers.0.bias",', "")
    (tmp_path / "meta.json").write_text(meta)
    with pytest.raises(ContainerFormatError):
        checkpoints.load_checkpoint(tmp_path)
