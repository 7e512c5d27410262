import numpy as np
import pytest

from fdce import fourier as ff
from fdce import tensor as tt
from fdce.tensor import Tensor, finite_diff_check


def brute_force_dft2(x):
    """O(N^4) direct evaluation of the unnormalized 2D DFT."""
    h, w = x.shape[-2:]
    out = np.zeros(x.shape, dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            acc = 0.0
            for m in range(h):
                for n in range(w):
                    acc += x[..., m, n] * np.exp(
                        -2j * np.pi * (u * m / h + v * n / w))
            out[..., u, v] = acc
    return out


def rand_img(shape, seed):
    return np.random.default_rng(seed).random(shape)


class TestFft2:
    def test_constant_image(self):
        c = 0.7
        img = np.full((1, 8, 8), c)
        s = ff.fft2(Tensor(img))
        spec = s.complex_data()
        assert spec[0, 0, 0] == pytest.approx(c * 64, abs=1e-6 * c * 64)
        spec[0, 0, 0] = 0
        assert np.abs(spec).max() < 1e-6 * c * 64

    def test_unit_impulse(self):
        img = np.zeros((1, 8, 8))
        img[0, 0, 0] = 1.0
        spec = ff.fft2(Tensor(img)).complex_data()
        np.testing.assert_allclose(spec, np.ones_like(spec), atol=1e-10)

    def test_dc_equals_pixel_sum(self):
        img = rand_img((3, 16, 16), 0)
        spec = ff.fft2(Tensor(img)).complex_data()
        np.testing.assert_allclose(spec[:, 0, 0].real,
                                   img.sum(axis=(1, 2)), rtol=1e-9)

    def test_matches_brute_force_oracle(self):
        img = rand_img((1, 8, 8), 1)
        spec = ff.fft2(Tensor(img)).complex_data()
        ref = brute_force_dft2(img)
        assert np.abs(spec - ref).max() < 1e-4

    def test_conjugate_symmetry(self):
        img = rand_img((1, 8, 8), 2)
        s = ff.fft2(Tensor(img)).complex_data()[0]
        for u in range(8):
            for v in range(8):
                assert s[u, v] == pytest.approx(
                    np.conj(s[(-u) % 8, (-v) % 8]), abs=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(Exception):
            ff.fft2(Tensor(np.zeros((0, 4, 4))))

    def test_non_pow2_fallback(self):
        img = rand_img((2, 6, 12), 3)
        np.testing.assert_allclose(ff.fft2(Tensor(img)).complex_data(),
                                   np.fft.fft2(img), atol=1e-8)


class TestIfft2:
    def test_round_trip(self):
        img = rand_img((2, 16, 16), 4)
        out = ff.ifft2(ff.fft2(Tensor(img)))
        assert np.abs(out.data - img).max() < 1e-5

    def test_zero_spectrum(self):
        s = ff.Spectrum(Tensor(np.zeros((1, 8, 8))), Tensor(np.zeros((1, 8, 8))))
        assert np.abs(ff.ifft2(s).data).max() == 0.0

    def test_matches_brute_force_inverse(self):
        img = rand_img((1, 8, 8), 5)
        spec = brute_force_dft2(img)
        s = ff.Spectrum(Tensor(spec.real), Tensor(spec.imag))
        out = ff.ifft2(s, max_imag=1e-4)
        assert np.abs(out.data - img).max() < 1e-4

    def test_residue_check_fires(self):
        s = ff.Spectrum(Tensor(rand_img((1, 8, 8), 6)),
                        Tensor(rand_img((1, 8, 8), 7)))
        with pytest.raises(FloatingPointError):
            ff.ifft2(s, max_imag=1e-12)


class TestPolar:
    def test_dc_only_real_positive(self):
        c = 0.4
        img = np.full((1, 8, 8), c)
        p = ff.decompose(ff.fft2(Tensor(img)))
        assert p.amplitude.data[0, 0, 0] == pytest.approx(c * 64, rel=1e-6)
        assert p.phase.data[0, 0, 0] == pytest.approx(0.0, abs=1e-9)

    def test_amplitude_point_symmetric(self):
        img = rand_img((1, 8, 8), 8)
        amp = ff.decompose(ff.fft2(Tensor(img))).amplitude.data[0]
        for u in range(8):
            for v in range(8):
                assert amp[u, v] == pytest.approx(amp[(-u) % 8, (-v) % 8],
                                                  rel=1e-9)

    def test_recompose_identity(self):
        rng = np.random.default_rng(9)
        re = rng.standard_normal((2, 8, 8))
        im = rng.standard_normal((2, 8, 8))
        s = ff.Spectrum(Tensor(re), Tensor(im))
        s2 = ff.recompose(ff.decompose(s))
        np.testing.assert_allclose(s2.real_part.data, re, rtol=1e-5, atol=1e-5)
        np.testing.assert_allclose(s2.imag_part.data, im, rtol=1e-5, atol=1e-5)

    def test_recompose_zero_amplitude(self):
        p = ff.PolarSpectrum(Tensor(np.zeros((1, 4, 4))),
                             Tensor(rand_img((1, 4, 4), 10)))
        s = ff.recompose(p)
        assert np.abs(s.real_part.data).max() == 0.0
        assert np.abs(s.imag_part.data).max() == 0.0

    def test_recompose_zero_phase(self):
        amp = rand_img((1, 4, 4), 11)
        s = ff.recompose(ff.PolarSpectrum(Tensor(amp), Tensor(np.zeros((1, 4, 4)))))
        np.testing.assert_allclose(s.real_part.data, amp, atol=1e-6)
        np.testing.assert_allclose(s.imag_part.data, 0.0, atol=1e-12)

    def test_recompose_trig_oracle(self):
        amp = rand_img((1, 5, 5), 12)
        pha = (rand_img((1, 5, 5), 13) - 0.5) * 6.0
        s = ff.recompose(ff.PolarSpectrum(Tensor(amp), Tensor(pha)))
        np.testing.assert_allclose(s.real_part.data, amp * np.cos(pha),
                                   atol=1e-6)
        np.testing.assert_allclose(s.imag_part.data, amp * np.sin(pha),
                                   atol=1e-6)

    def test_eps_must_be_positive(self):
        s = ff.fft2(Tensor(rand_img((1, 4, 4), 14)))
        with pytest.raises(Exception):
            ff.decompose(s, eps=0.0)


class TestProperties:
    def test_parseval(self):
        img = rand_img((2, 16, 16), 15)
        spec = ff.fft2(Tensor(img)).complex_data()
        lhs = (img ** 2).sum()
        rhs = (np.abs(spec) ** 2).sum() / (16 * 16)
        assert abs(lhs - rhs) / abs(lhs) < 1e-4

    def test_linearity(self):
        x = rand_img((1, 8, 8), 16)
        y = rand_img((1, 8, 8), 17)
        a, b = 2.3, -0.7
        lhs = ff.fft2(Tensor(a * x + b * y)).complex_data()
        rhs = (a * ff.fft2(Tensor(x)).complex_data()
               + b * ff.fft2(Tensor(y)).complex_data())
        assert np.abs(lhs - rhs).max() / np.abs(lhs).max() < 1e-5

    def test_decompose_gradient_away_from_zero(self):
        rng = np.random.default_rng(18)
        re = Tensor(rng.uniform(0.5, 1.5, (1, 4, 4)), requires_grad=True,
                    dtype=np.float64)
        im = Tensor(rng.uniform(0.5, 1.5, (1, 4, 4)), requires_grad=True,
                    dtype=np.float64)

        def f(re_, im_):
            p = ff.decompose(ff.Spectrum(re_, im_))
            return (p.amplitude * 0.3 + p.phase * 0.7).sum()
        assert finite_diff_check(f, [re, im]) < 1e-5

    def test_fft_ifft_gradients(self):
        x = Tensor(rand_img((1, 1, 8, 8), 19), requires_grad=True,
                   dtype=np.float64)

        def f(t):
            s = ff.fft2(t)
            p = ff.decompose(s)
            return (ff.ifft2(ff.recompose(p)) ** 2).sum()
        assert finite_diff_check(f, x) < 1e-5


class TestSwapExperiment:
    def test_self_swap_identity(self):
        x = rand_img((16, 16, 3), 20)
        a, b = ff.swap_experiment(x, x, clip=False)
        assert np.abs(a - x).max() < 1e-5
        assert np.abs(b - x).max() < 1e-5

    def test_mean_preserved_before_clip(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            a = rng.random((8, 8, 3))
            b = rng.random((8, 8, 3))
            rec_ab, _ = ff.swap_experiment(a, b, clip=False)
            # DC amplitude comes from a; DC phase of b is 0 for positive sums
            assert rec_ab.mean() == pytest.approx(a.mean(), abs=1e-4)

    def test_output_range_and_shape(self):
        a = rand_img((8, 16, 3), 22) * 2 - 0.5
        b = rand_img((8, 16, 3), 23) * 2 - 0.5
        r1, r2 = ff.swap_experiment(a, b)
        assert r1.shape == a.shape and r2.shape == b.shape
        for r in (r1, r2):
            assert r.min() >= 0.0 and r.max() <= 1.0

    def test_shape_mismatch(self):
        with pytest.raises(Exception):
            ff.swap_experiment(rand_img((8, 8, 3), 0), rand_img((8, 4, 3), 0))


def _natural_image(rng, n=32):
    """Piecewise-smooth random image: soft gradients plus sharp rectangles."""
    yy, xx = np.mgrid[0:n, 0:n] / n
    img = 0.4 + 0.2 * np.sin(2 * np.pi * (xx * rng.uniform(0.5, 1.5)))
    img = np.repeat(img[:, :, None], 3, axis=2)
    for _ in range(6):
        y0, x0 = rng.integers(0, n - 8, 2)
        h, w = rng.integers(4, 12, 2)
        img[y0:y0 + h, x0:x0 + w] += rng.uniform(-0.3, 0.3, 3)
    return np.clip(img, 0, 1)


def _edge_map(img):
    gray = img.mean(axis=2)
    gy = np.abs(np.diff(gray, axis=0, prepend=gray[:1]))
    gx = np.abs(np.diff(gray, axis=1, prepend=gray[:, :1]))
    return np.sqrt(gx ** 2 + gy ** 2)


class TestComponentOnly:
    def test_constant_image_amplitude(self):
        img = np.full((8, 8, 3), 0.6)
        out = ff.component_only(img, "amplitude")
        np.testing.assert_allclose(out, img, atol=1e-9)

    def test_range_and_shape(self):
        img = _natural_image(np.random.default_rng(24))
        for keep in ("amplitude", "phase"):
            out = ff.component_only(img, keep)
            assert out.shape == img.shape
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_bad_keep(self):
        with pytest.raises(Exception):
            ff.component_only(np.zeros((4, 4, 3)), "both")

    def test_phase_correlates_with_edges(self):
        rng = np.random.default_rng(25)
        diffs = []
        for _ in range(10):
            img = _natural_image(rng)
            edges = _edge_map(img).reshape(-1)
            pha = _edge_map(ff.component_only(img, "phase")).reshape(-1)
            amp = _edge_map(ff.component_only(img, "amplitude")).reshape(-1)
            r_pha = np.corrcoef(pha, edges)[0, 1]
            r_amp = np.corrcoef(amp, edges)[0, 1]
            diffs.append(r_pha - r_amp)
        assert np.mean(diffs) > 0.1
