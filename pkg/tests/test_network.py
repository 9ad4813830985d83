import numpy as np
import pytest
import torch

from bikadeblur import network
from bikadeblur.kernels import delta_kernel, make_anisotropic_gaussian, make_isotropic_gaussian
from bikadeblur.network import (
    BIKAnet,
    KernelAEBlock,
    MappingNetwork,
    NetConfig,
    adain,
    load_checkpoint,
    mapping_parameter_count,
    parameter_count,
    randomize_,
    reconstruction_loss,
    restore,
    save_checkpoint,
    skip_parameter_count,
    split_adain,
)


def spatial_stats(y):
    return y.mean(dim=(2, 3)), y.var(dim=(2, 3), unbiased=False).sqrt()


def test_adain_normalizes():
    x = torch.randn(2, 5, 16, 16, dtype=torch.float64) * 3 + 7
    m, s = spatial_stats(adain(x, torch.ones(5), torch.zeros(5)))
    assert torch.all(m.abs() < 1e-5)
    assert torch.all((s - 1).abs() < 1e-3)
    m, s = spatial_stats(adain(x, torch.full((5,), 2.0), torch.full((5,), 3.0)))
    assert torch.all((m - 3).abs() < 1e-4)
    assert torch.all((s - 2).abs() < 1e-3)


def test_adain_single_pixel_gives_bias():
    x = torch.randn(3, 4, 1, 1)
    b = torch.tensor([0.5, -1.0, 2.0, 0.0])
    out = adain(x, torch.full((4,), 7.0), b)
    torch.testing.assert_close(out[:, :, 0, 0], b.expand(3, 4))


def test_adain_channel_mismatch():
    with pytest.raises(ValueError):
        adain(torch.randn(1, 4, 8, 8), torch.ones(3), torch.zeros(3))


def test_mapping_output_size_default():
    cfg = NetConfig()
    net = BIKAnet(cfg)
    raw = net.mapping(torch.rand(1, 17, 17))
    assert raw.shape == (1, 8 * 2 * 2 * 256)
    assert mapping_parameter_count(cfg) == parameter_count(net.mapping)


def test_mapping_zero_init_is_identity():
    m = MappingNetwork(17, 4, 32, 2 * 2 * 2 * 16)
    params = split_adain(m(torch.rand(1, 17, 17)), 2, 2, 16)
    for block in params:
        for scale, bias in block:
            assert torch.all(scale == 1) and torch.all(bias == 0)


def test_mapping_distinguishes_kernels():
    m = randomize_(MappingNetwork(17, 4, 32, 64), seed=1, std=0.2)
    a = m(torch.as_tensor(make_isotropic_gaussian(17, 1).values, dtype=torch.float32)[None])
    b = m(torch.as_tensor(make_anisotropic_gaussian(17, 4, 1.5, 1.0).values, dtype=torch.float32)[None])
    assert (a - b).abs().max() > 0


def test_mapping_kernel_size_mismatch():
    with pytest.raises(ValueError):
        MappingNetwork(17, 2, 8, 8)(torch.rand(1, 15, 15))


@pytest.mark.parametrize("size", [64, 96, 256])
def test_block_shape(size):
    block = KernelAEBlock(8)
    x = torch.randn(1, 8, size, size)
    assert block(x, None, x).shape == x.shape


def test_block_zero_weights_is_identity():
    block = KernelAEBlock(8)
    with torch.no_grad():
        for p in block.parameters():
            p.zero_()
    x = torch.randn(2, 8, 32, 32)
    params = [(torch.full((2, 32), 2.0), torch.full((2, 32), 0.3))] * 2
    torch.testing.assert_close(block(x, params, x), x, rtol=0, atol=0)


def test_block_rejects_odd_size():
    with pytest.raises(ValueError):
        KernelAEBlock(4)(torch.randn(1, 4, 30, 30))


def test_long_term_skip_is_live():
    torch.manual_seed(0)
    block = randomize_(KernelAEBlock(4).double(), seed=2, std=0.3)
    x = torch.randn(1, 4, 16, 16, dtype=torch.float64)
    coarse = torch.randn(1, 4, 16, 16, dtype=torch.float64, requires_grad=True)
    block(x, None, coarse).pow(2).sum().backward()
    g = coarse.grad
    assert g.abs().max() > 0
    # central difference on one entry
    idx = tuple(int(i) for i in np.unravel_index(g.abs().argmax().item(), g.shape))
    eps = 1e-6
    with torch.no_grad():
        cp, cm = coarse.clone(), coarse.clone()
        cp[idx] += eps
        cm[idx] -= eps
        fd = (block(x, None, cp).pow(2).sum() - block(x, None, cm).pow(2).sum()) / (2 * eps)
    assert fd.item() == pytest.approx(g[idx].item(), rel=1e-5)


def test_fresh_network_is_identity():
    net = BIKAnet(n_blocks=2, width=8)
    b = torch.rand(2, 3, 40, 48)
    k = torch.as_tensor(make_isotropic_gaussian(17, 2).values, dtype=torch.float32)[None].repeat(2, 1, 1)
    out = net(b, k)
    assert torch.equal(out, b)


@pytest.mark.parametrize("shape", [(123, 77), (33, 64), (17, 19)])
def test_shape_preservation(shape):
    net = randomize_(BIKAnet(n_blocks=2, width=8), seed=0)
    b = torch.rand(1, 3, *shape)
    assert net(b, torch.rand(1, 17, 17)).shape == b.shape


def test_conditioning_liveness():
    net = randomize_(BIKAnet(n_blocks=2, width=8, mapping_width=32), seed=3, std=0.1)
    b = torch.rand(1, 3, 32, 32)
    k1 = torch.as_tensor(make_isotropic_gaussian(17, 1).values, dtype=torch.float32)[None]
    k2 = torch.as_tensor(make_anisotropic_gaussian(17, 4, 1.5, 0.5).values, dtype=torch.float32)[None]
    assert (net(b, k1) - net(b, k2)).abs().max() > 0
    k = k1.clone().requires_grad_(True)
    net(b, k).sum().backward()
    assert k.grad.abs().max() > 0


def test_adain_postconditions_every_layer(monkeypatch):
    seen = []
    real = network.adain

    def spy(x, scale, bias, eps=network.ADAIN_EPS):
        out = real(x, scale, bias, eps)
        var = x.detach().var(dim=(2, 3), unbiased=False)
        seen.append((out.detach(), scale.detach(), bias.detach(), var, eps))
        return out

    monkeypatch.setattr(network, "adain", spy)
    net = randomize_(BIKAnet(n_blocks=2, width=8, mapping_width=32), seed=4, std=0.05).double()
    net(torch.rand(2, 3, 32, 32, dtype=torch.float64), torch.rand(2, 17, 17, dtype=torch.float64))
    assert len(seen) == 2 * 2
    for out, scale, bias, var, eps in seen:
        m, s = spatial_stats(out)
        torch.testing.assert_close(m, bias.expand_as(m), atol=1e-4, rtol=0)
        # eps shrinks the normalized std below 1 for low-variance features
        expected = scale.abs() * torch.sqrt(var / (var + eps))
        torch.testing.assert_close(s, expected, atol=1e-3, rtol=1e-3)


def test_ablation_parameter_counts():
    full = NetConfig(n_blocks=2, width=16)
    n_full = parameter_count(BIKAnet(full))
    no_ae = BIKAnet(NetConfig(n_blocks=2, width=16, ablate=["no_kernel_ae"]))
    no_lts = BIKAnet(NetConfig(n_blocks=2, width=16, ablate=["no_lts"]))
    assert n_full - parameter_count(no_ae) == mapping_parameter_count(full)
    assert no_ae.mapping is None
    assert n_full - parameter_count(no_lts) == skip_parameter_count(full)
    assert not any("skip_proj" in k for k in no_lts.state_dict())


def test_ablated_kernel_network_needs_no_kernel():
    net = BIKAnet(NetConfig(n_blocks=1, width=8, ablate=["no_kernel_ae"]))
    b = torch.rand(1, 3, 16, 16)
    assert torch.equal(net(b), b)


def test_kernel_mode_requires_kernel():
    with pytest.raises(ValueError):
        BIKAnet(n_blocks=1, width=8)(torch.rand(1, 3, 16, 16))
    with pytest.raises(ValueError):
        BIKAnet(n_blocks=1, width=8)(torch.rand(1, 3, 16, 16), torch.rand(1, 15, 15))
    with pytest.raises(ValueError):
        BIKAnet(n_blocks=1, width=8)(torch.rand(1, 1, 16, 16), torch.rand(1, 17, 17))


def test_config_validation():
    with pytest.raises(ValueError):
        NetConfig(mode="motion", ablate=["no_kernel_ae"])
    with pytest.raises(ValueError):
        NetConfig(ablate=["no_everything"])


def test_reconstruction_loss():
    x = torch.rand(1, 3, 8, 8)
    assert reconstruction_loss(x, x) == 0
    assert reconstruction_loss(torch.zeros(1, 3, 4, 4), torch.ones(1, 3, 4, 4)).item() == 1.0
    assert reconstruction_loss(torch.zeros(1, 3, 4, 4), torch.full((1, 3, 4, 4), 2.0), "mse").item() == 4.0
    with pytest.raises(ValueError):
        reconstruction_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 5))


@pytest.mark.parametrize("kind", ["mae", "mse"])
def test_reconstruction_loss_gradient(kind):
    g = torch.Generator().manual_seed(0)
    s_hat = torch.rand(1, 1, 4, 4, generator=g, dtype=torch.float64, requires_grad=True)
    s = torch.rand(1, 1, 4, 4, generator=g, dtype=torch.float64)
    reconstruction_loss(s_hat, s, kind).backward()
    eps = 1e-6
    for idx in np.ndindex(4, 4):
        with torch.no_grad():
            p, m = s_hat.clone(), s_hat.clone()
            p[0, 0][idx] += eps
            m[0, 0][idx] -= eps
            fd = (reconstruction_loss(p, s, kind) - reconstruction_loss(m, s, kind)) / (2 * eps)
        assert fd.item() == pytest.approx(s_hat.grad[0, 0][idx].item(), rel=1e-4)


def test_restore_and_checkpoint_round_trip(tmp_path):
    net = randomize_(BIKAnet(n_blocks=1, width=8, mapping_width=16), seed=5, std=0.05)
    img = np.random.default_rng(0).random((21, 30, 3))
    out = restore(net, img, delta_kernel(17))
    assert out.shape == img.shape
    save_checkpoint(tmp_path / "c.pt", net, iteration=7)
    loaded, state = load_checkpoint(tmp_path / "c.pt")
    assert state["iteration"] == 7 and state["version"] == 1
    assert state["config"]["n_blocks"] == 1
    assert all(v.dtype == torch.float32 for v in state["params"].values())
    np.testing.assert_array_equal(restore(loaded, img, delta_kernel(17)), out)


def test_motion_network():
    net = BIKAnet(NetConfig(n_blocks=2, width=8, mode="motion"))
    assert net.mapping is None
    b = torch.rand(1, 3, 100, 100)
    zero = torch.zeros(1, 2, 100, 100)
    assert torch.equal(net(b, flow=zero), b)
    randomize_(net, seed=6, std=0.1)
    f1 = torch.randn(1, 2, 100, 100)
    assert net(b, flow=f1).shape == b.shape
    assert (net(b, flow=f1) - net(b, flow=zero)).abs().max() > 0
    with pytest.raises(ValueError):
        net(b, flow=torch.zeros(1, 2, 50, 50))
