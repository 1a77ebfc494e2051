import numpy as np
import pytest
import torch

from metripart.model import ParamVector, grad_params, init_params, load_checkpoint, save_checkpoint, zero_params


@pytest.mark.parametrize("solid", [False, True])
@pytest.mark.parametrize("dim", [2, 3])
def test_param_vector_round_trip(dim, solid):
    p = init_params(dim, hidden=6, solid=solid, seed=3)
    flat = ParamVector.flatten(p)
    q = init_params(dim, hidden=6, solid=solid, seed=4)
    flat.unflatten_into(q)
    torch.testing.assert_close(ParamVector.flatten(q).flat, flat.flat, rtol=0, atol=0)
    assert len(flat) == sum(t.numel() for t in p.parameters())


@pytest.mark.parametrize("solid", [False, True])
def test_checkpoint_round_trip(tmp_path, solid):
    p = init_params(3, h=0.7, hidden=5, solid=solid, seed=2, kb=0.3, m=2.0)
    p.energy.set_input_normalization(torch.tensor([0.5, 1.0]), torch.tensor([2.0, 3.0]))
    path = tmp_path / "model.json"
    save_checkpoint(p, path)
    q = load_checkpoint(path)
    assert q.h == 0.7 and q.dim == 3 and q.solid == solid
    torch.testing.assert_close(ParamVector.flatten(q).flat, ParamVector.flatten(p).flat, rtol=0, atol=0)
    x = torch.randn(4, 2, dtype=torch.float64)
    torch.testing.assert_close(q.energy(x), p.energy(x), rtol=0, atol=0)
    assert float(q.kb) == pytest.approx(0.3) and float(q.m) == pytest.approx(2.0)


def test_checkpoint_version_checked(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format_version": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_clone_is_independent():
    p = init_params(3, hidden=4, seed=0)
    q = p.clone()
    with torch.no_grad():
        q.coef_a.weights[0].add_(1.0)
    assert not torch.equal(p.coef_a.weights[0], q.coef_a.weights[0])


def test_zero_params_are_zero():
    p = zero_params(3)
    assert all(torch.all(t == 0) for t in p.parameters())


def test_grad_params_names_every_parameter():
    p = init_params(2, hidden=4, seed=0).requires_grad_(True)
    loss = sum((t ** 2).sum() for t in p.parameters())
    g = grad_params(loss, p)
    np.testing.assert_allclose(g.flat.numpy(), 2 * ParamVector.flatten(p).flat.numpy())
    assert "energy.weight0" in g.index
