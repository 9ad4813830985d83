import json
import warnings

import numpy as np
import pytest
import torch

from bikadeblur import degradation as deg
from bikadeblur.estimator import (
    BlurGenerator,
    EstimationConfig,
    EstimationError,
    PatchDiscriminator,
    compose_layers,
    estimate_dataset_kernels,
    estimate_kernel,
    extract_kernel,
    kernel_regularization,
    unroll_cross_scale,
)
from bikadeblur.kernels import (
    default_bank_specs,
    delta_kernel,
    load_kernel,
    make_anisotropic_gaussian,
    make_isotropic_gaussian,
)


def loop_full_conv(a, b):
    ha, wa = a.shape
    hb, wb = b.shape
    out = np.zeros((ha + hb - 1, wa + wb - 1))
    for i in range(ha):
        for j in range(wa):
            for p in range(hb):
                for q in range(wb):
                    out[i + p, j + q] += a[i, j] * b[p, q]
    return out


def symmetric_positive(rng, n):
    k = rng.random((n, n)) + 0.1
    k = k + k[::-1, ::-1]
    return k / k.sum()


def test_identity_generator_extracts_delta():
    gen = BlurGenerator()
    np.testing.assert_allclose(extract_kernel(gen).values, delta_kernel(17).values, atol=1e-6)


def test_two_layer_composition(rng):
    k1, k2 = symmetric_positive(rng, 3), symmetric_positive(rng, 3)
    gen = BlurGenerator(sizes=(7, 5, 5, 3, 3, 1), channels=1).double()
    with torch.no_grad():
        gen.weights[3][0, 0] = torch.as_tensor(k1)
        gen.weights[4][0, 0] = torch.as_tensor(k2)
    oracle = np.zeros((17, 17))
    oracle[6:11, 6:11] = loop_full_conv(k1, k2)
    np.testing.assert_allclose(extract_kernel(gen).values, oracle, atol=1e-6)


def test_compose_layers_matches_loops(rng):
    layers = [rng.standard_normal((s, s)) for s in (7, 5, 3)]
    oracle = loop_full_conv(loop_full_conv(layers[0], layers[1]), layers[2])
    np.testing.assert_allclose(compose_layers(layers), oracle, atol=1e-10)


def test_composed_kernel_matches_layer_convolution(rng):
    torch.manual_seed(0)
    gen = BlurGenerator(sizes=(5, 3, 3), channels=1).double()
    with torch.no_grad():
        for w in gen.weights:
            w.copy_(torch.randn_like(w))
    layers = [w[0, 0].detach().numpy() for w in gen.weights]
    got = gen.composed_kernel().detach().numpy()
    np.testing.assert_allclose(got, compose_layers(layers), atol=1e-6)


def test_generator_is_the_extracted_convolution(rng):
    gen = BlurGenerator(channels=4).double()
    gen.reset_to_identity(noise=0.3, generator=torch.Generator().manual_seed(1))
    k = gen.composed_kernel().detach().numpy()
    x = rng.random((40, 40))
    out = gen(torch.as_tensor(x)[None, None])[0, 0].detach().numpy()
    r = k.shape[0] // 2
    ref = deg.convolve(x, k, "zero")[r:-r, r:-r, 0]
    np.testing.assert_allclose(out, ref, atol=1e-9)


def test_generator_linearity(rng):
    gen = BlurGenerator(channels=8).double()
    gen.reset_to_identity(noise=0.5, generator=torch.Generator().manual_seed(2))
    x = torch.as_tensor(rng.random((1, 1, 30, 30)))
    for alpha in (0.0, -2.5, 3.0):
        torch.testing.assert_close(gen(alpha * x), alpha * gen(x), atol=1e-9, rtol=1e-9)
    assert not any(isinstance(m, (torch.nn.ReLU, torch.nn.LeakyReLU)) for m in gen.modules())


def test_extracted_kernel_post_conditions():
    gen = BlurGenerator(channels=8)
    gen.reset_to_identity(noise=0.8, generator=torch.Generator().manual_seed(3))
    k = extract_kernel(gen).values
    assert k.shape == (17, 17)
    assert abs(k.sum() - 1) < 1e-6 and (k >= 0).all()


def test_extract_rejects_spread_kernel():
    wide = np.ones((41, 41))
    with pytest.raises(EstimationError):
        extract_kernel([wide])


def test_discriminator_output():
    d = PatchDiscriminator(1, 8, 6)
    out = d(torch.rand(2, 1, 32, 32))
    assert out.shape == (2, 1, 26, 26)
    assert ((out > 0) & (out < 1)).all()


def test_regularization_delta_zero():
    loss, terms = kernel_regularization(delta_kernel(17).values)
    assert terms["sum_to_one"] == 0 and terms["boundary"] == 0
    assert terms["centrality"] == pytest.approx(0, abs=1e-12)


def test_regularization_zero_array():
    w = {"sum_to_one": 0.7, "boundary": 0.5, "sparsity": 5.0, "centrality": 0.0}
    loss, terms = kernel_regularization(np.zeros((17, 17)), w)
    assert terms["sum_to_one"] == 1.0
    assert terms["sparsity"] == pytest.approx(0.0, abs=1e-12)
    assert loss == pytest.approx(0.7 + 0.5 * terms["boundary"], abs=1e-9)


def test_regularization_centrality_shift():
    g = make_isotropic_gaussian(17, 2.0).values
    shifted = np.roll(g, 3, axis=1)
    _, a = kernel_regularization(g)
    _, b = kernel_regularization(shifted)
    assert b["centrality"] > a["centrality"]
    assert b["centrality"] == pytest.approx(9.0, rel=0.05)


def test_regularization_torch_matches_numpy():
    g = make_anisotropic_gaussian(17, 3, 1, 0.4).values * 1.2
    lf, _ = kernel_regularization(g)
    lt, _ = kernel_regularization(torch.as_tensor(g))
    assert float(lt) == pytest.approx(lf, rel=1e-12)


def test_cross_scale_unroll_gaussian():
    # Gaussians compose: r with variance s^2 (1 - 1/4) unrolls back to variance s^2 at scale 2
    from bikadeblur.kernels import kernel_covariance

    r = make_isotropic_gaussian(17, 2.0 * np.sqrt(0.75))
    k = unroll_cross_scale(r.values, 2.0)
    assert kernel_covariance(k)[0, 0] == pytest.approx(4.0, rel=0.1)


def test_constant_image_returns_prior_optimum():
    with pytest.warns(RuntimeWarning):
        k = estimate_kernel(np.full((64, 64, 3), 0.5), EstimationConfig(iterations=5))
    np.testing.assert_array_equal(k.values, delta_kernel(17).values)


def test_estimate_deterministic(textured):
    b = deg.convolve(textured[:128, :128], make_isotropic_gaussian(17, 2.0))
    cfg = EstimationConfig(iterations=15, seed=4)
    a = estimate_kernel(b, cfg)
    c = estimate_kernel(b, cfg)
    assert np.array_equal(a.values, c.values)
    assert abs(a.values.sum() - 1) < 1e-6 and (a.values >= 0).all()


def test_estimate_small_image_rejected():
    with pytest.raises(ValueError):
        estimate_kernel(np.random.default_rng(0).random((20, 20, 1)), EstimationConfig(iterations=1))


def test_nonfinite_loss_aborts(textured):
    b = deg.convolve(textured[:128, :128], make_isotropic_gaussian(17, 2.0))
    cfg = EstimationConfig(iterations=20, lr_gen=1e30, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(EstimationError):
            estimate_kernel(b, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        EstimationConfig(iterations=0)
    with pytest.raises(ValueError):
        EstimationConfig(patch_size=7)


def test_dataset_kernels_resumable(sharp_dir, tmp_path):
    out = tmp_path / "ds"
    deg.generate_dataset(sharp_dir, default_bank_specs(), 128, 4, 0.0, 2, out)
    cfg = EstimationConfig(iterations=3, seed=1)
    m = estimate_dataset_kernels(out / "manifest.json", cfg)
    files = sorted((out / "kernels").glob("*.kern"))
    assert len(files) == 4
    assert all(r["estimated_kernel"] for r in m["samples"])
    for f in files:
        assert abs(load_kernel(f).values.sum() - 1) < 1e-6
    stamps = [f.stat().st_mtime_ns for f in files]
    before = (out / "manifest.json").read_bytes()
    estimate_dataset_kernels(out / "manifest.json", cfg)
    assert [f.stat().st_mtime_ns for f in files] == stamps
    assert (out / "manifest.json").read_bytes() == before
    assert json.loads(before)["estimation_failures"] == {}


def test_dataset_kernels_records_failures(sharp_dir, tmp_path):
    out = tmp_path / "ds"
    deg.generate_dataset(sharp_dir, default_bank_specs(), 48, 2, 0.0, 2, out)
    m = estimate_dataset_kernels(out / "manifest.json", EstimationConfig(iterations=2))
    # 48 px crops are too small for the generator input at scale 2
    assert set(m["estimation_failures"]) == {"00000", "00001"}
