import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sblds.diffusion import linear_schedule, noise_prediction_loss
from sblds.errors import ConfigurationError, DomainError
from sblds.denoiser import Denoiser, DenoiserConfig, audit_structure, scale_shift, sinusoid

C0 = [0.004, 0.05, 0.7, 0.5, 0.5, 0.5, 0.2, 0.2, 0.3]
MICRO = DenoiserConfig(base_channels=1, channel_mults=(1, 2), d_emb=4, tau_hidden=(4,), norm_groups=1)


def _model(cfg, seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    return Denoiser(cfg).to(dtype).eval()


def test_shape_preservation():
    model = _model(DenoiserConfig(base_channels=8))
    x = torch.randn(1, 1, 16, 8, 8)  # (B, C, D, H', W')
    out = model(x, 500, torch.tensor([C0]))
    assert out.shape == x.shape and torch.all(torch.isfinite(out))
    with pytest.raises(ConfigurationError):
        model(torch.randn(1, 1, 15, 8, 8), 500, torch.tensor([C0]))


@settings(max_examples=15, deadline=None)
@given(
    st.integers(1, 4), st.lists(st.integers(1, 3), min_size=1, max_size=3),
    st.integers(2, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 2),
)
def test_shape_preservation_property(base, mults, d, h, w, batch):
    cfg = DenoiserConfig(base_channels=base, channel_mults=tuple(mults), d_emb=8, tau_hidden=(8,), norm_groups=2)
    f = 2 ** (cfg.levels - 1)
    model = _model(cfg)
    x = torch.randn(batch, 1, d * f, h * f, w * f)
    out = model(x, torch.full((batch,), 10), torch.tensor([C0] * batch))
    assert out.shape == x.shape


def test_timestep_sinusoid():
    raw0 = sinusoid(0, 128)[0]
    assert torch.equal(raw0, torch.tensor([0.0, 1.0] * 64, dtype=torch.float64))
    feats = sinusoid(torch.arange(1, 1001), 128)
    diffs = (feats[:, None, :] - feats[None, :, :]).abs().amax(dim=2)
    diffs.fill_diagonal_(1.0)
    assert diffs.min().item() > 1e-6
    model = _model(DenoiserConfig(base_channels=8))
    assert model.timestep_embedding(7, 1).shape == (1, 128)


def test_condition_embedding():
    model = _model(DenoiserConfig(base_channels=8))
    c = torch.tensor([C0])
    assert torch.equal(model.tau(c), model.tau(c))
    assert model.tau(c).shape == (1, model.cfg.d_emb)
    c2 = c.clone()
    c2[0, 0] = 0.02
    assert (model.tau(c) - model.tau(c2)).abs().max() > 0
    bad = c.clone()
    bad[0, 3] = 1.5
    with pytest.raises(DomainError):
        model.tau(bad)
    with pytest.raises(DomainError):
        model.tau(torch.zeros(1, 8))


def test_scale_shift_examples():
    h = torch.randn(2, 4, 3, 3, 3)
    zero = torch.zeros(2, 4)
    assert torch.equal(scale_shift(h, zero, zero, 2), torch.nn.functional.group_norm(h, 2))
    out = scale_shift(torch.zeros(2, 4, 3, 3, 3), zero, torch.ones(2, 4), 2)
    assert torch.equal(out, torch.ones(2, 4, 3, 3, 3))
    assert scale_shift(h, torch.rand(2, 4), torch.rand(2, 4), 4).shape == h.shape


def test_structure_audit_and_param_count():
    model = _model(DenoiserConfig())
    audit = audit_structure(model)
    assert audit == {"levels": 3, "down_blocks": 3, "up_blocks": 3, "attention_modules": []}
    assert model.num_parameters() == _model(DenoiserConfig(), seed=5).num_parameters()
    assert _model(DenoiserConfig(base_channels=16)).num_parameters() <= 2_000_000
    with pytest.raises(ConfigurationError):
        DenoiserConfig(attention=True)
    with pytest.raises(ConfigurationError):
        DenoiserConfig(res_blocks_per_level=2)


def test_inference_determinism():
    model = _model(DenoiserConfig(base_channels=8))
    x = torch.randn(2, 1, 4, 4, 4)
    c = torch.tensor([C0, C0])
    with torch.no_grad():
        assert torch.equal(model(x, torch.tensor([3, 900]), c), model(x, torch.tensor([3, 900]), c))


def test_condition_changes_output_after_training():
    model = _model(DenoiserConfig(base_channels=8)).train()
    opt = torch.optim.Adam(model.parameters(), lr=1e-3)
    sched = linear_schedule()
    gen = torch.Generator().manual_seed(0)
    x0 = torch.randn(2, 1, 4, 4, 4, generator=gen)
    c = torch.tensor([C0, C0])
    for _ in range(3):
        opt.zero_grad()
        eps = torch.randn(x0.shape, generator=gen)
        noise_prediction_loss(model, x0, torch.tensor([10, 500]), eps, c, sched).backward()
        opt.step()
    model.eval()
    c2 = c.clone()
    c2[:, 0] = 0.05
    with torch.no_grad():
        diff = (model(x0, 200, c) - model(x0, 200, c2)).abs().max().item()
    assert diff > 1e-6


def test_finite_difference_gradients():
    model = _model(MICRO, seed=2, dtype=torch.float64).train()
    assert model.num_parameters() <= 1000
    gen = torch.Generator().manual_seed(1)
    x0 = torch.randn(2, 1, 2, 2, 2, generator=gen, dtype=torch.float64)
    eps = torch.randn(x0.shape, generator=gen, dtype=torch.float64)
    t = torch.tensor([5, 700])
    c = torch.tensor([C0, C0], dtype=torch.float64)
    sched = linear_schedule()

    def loss():
        return noise_prediction_loss(model, x0, t, eps, c, sched)

    model.zero_grad()
    loss().backward()
    h = 1e-6
    for name, p in model.named_parameters():
        analytic = p.grad.detach().clone().ravel()
        numeric = torch.zeros_like(analytic)
        flat = p.data.view(-1)
        with torch.no_grad():
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + h
                up = loss().item()
                flat[k] = orig - h
                down = loss().item()
                flat[k] = orig
                numeric[k] = (up - down) / (2 * h)
        err = (analytic - numeric).norm().item()
        scale = max(analytic.norm().item(), numeric.norm().item())
        # biases feeding a group norm have exactly zero gradient
        assert err < 1e-8 or err / scale < 1e-3, name


def test_set_statistics():
    model = _model(DenoiserConfig(base_channels=8))
    conds = np.array([C0, [0.01, 0.06, 0.65, 0.4, 0.6, 0.5, 0.25, 0.2, 0.4]])
    model.tau.set_statistics(conds)
    np.testing.assert_allclose(model.tau.cond_mean.numpy(), conds.mean(0), rtol=1e-6)
    # constant columns keep a unit scale
    assert model.tau.cond_std[5].item() == 1.0
