import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retinev.raster import (EncodedRaster, LinearRaster, gamma_decode,
                            gamma_encode, load_image, save_image)


def make_linear(values):
    return LinearRaster(np.asarray(values, dtype=np.float32).reshape(1, -1, 1))


class TestValidation:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            make_linear([0.5, np.nan])

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            make_linear([1.5])

    def test_rejects_bad_channel_count(self):
        with pytest.raises(ValueError, match="channels"):
            LinearRaster(np.zeros((4, 4, 2), dtype=np.float32))

    def test_rejects_nonpositive_gamma(self):
        with pytest.raises(ValueError, match="gamma"):
            EncodedRaster(np.zeros((2, 2, 1), dtype=np.float32), gamma=0.0)

    def test_data_is_readonly(self):
        r = make_linear([0.5])
        with pytest.raises(ValueError):
            r.data[0, 0, 0] = 0.1


class TestGamma:
    def test_all_zero_stays_zero(self):
        out = gamma_encode(make_linear([0.0, 0.0]), 2.2)
        assert np.all(out.data == 0.0)

    def test_all_one_stays_one(self):
        for g in (1.0, 2.2, 3.0):
            assert np.all(gamma_encode(make_linear([1.0]), g).data == 1.0)

    def test_quarter_at_2_2(self):
        # independent double-precision evaluation of the power function
        expected = math.pow(0.25, 1.0 / 2.2)
        out = gamma_encode(make_linear([0.25]), 2.2)
        assert out.data[0, 0, 0] == pytest.approx(expected, abs=1e-6)
        assert expected == pytest.approx(0.5325, abs=1e-4)

    def test_decode_inverts_encode_reference_value(self):
        enc = EncodedRaster(np.full((1, 1, 1), 0.53252054, dtype=np.float32), gamma=2.2)
        assert gamma_decode(enc).data[0, 0, 0] == pytest.approx(0.25, abs=1e-6)

    def test_roundtrip_1000_random_pixels(self):
        rng = np.random.default_rng(0)
        data = rng.random((10, 100, 1)).astype(np.float32)
        r = LinearRaster(data)
        back = gamma_decode(gamma_encode(r, 2.2))
        assert np.max(np.abs(back.data - data)) < 1e-6

    @settings(max_examples=50, deadline=None)
    @given(g=st.floats(min_value=1.0, max_value=3.0),
           seed=st.integers(min_value=0, max_value=2**31))
    def test_roundtrip_property(self, g, seed):
        data = np.random.default_rng(seed).random((4, 4, 3)).astype(np.float32)
        r = LinearRaster(data)
        back = gamma_decode(gamma_encode(r, g))
        assert np.max(np.abs(back.data - data)) < 1e-6

    def test_encode_monotone(self):
        vals = np.sort(np.random.default_rng(1).random(256)).astype(np.float32)
        enc = gamma_encode(make_linear(vals), 2.2).data.ravel()
        assert np.all(np.diff(enc) >= 0)

    def test_pure(self):
        r = make_linear([0.1, 0.7])
        a = gamma_encode(r, 2.2).data
        b = gamma_encode(r, 2.2).data
        assert np.array_equal(a, b)


class TestImageIO:
    def test_8bit_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        r = EncodedRaster(rng.random((16, 12, 3)).astype(np.float32))
        save_image(r, tmp_path / "a.png", bit_depth=8)
        back = load_image(tmp_path / "a.png")
        assert back.data.shape == r.data.shape
        assert np.max(np.abs(back.data - r.data)) <= 1.0 / 255

    def test_16bit_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        r = EncodedRaster(rng.random((8, 8, 3)).astype(np.float32))
        save_image(r, tmp_path / "b.png", bit_depth=16)
        back = load_image(tmp_path / "b.png")
        assert np.max(np.abs(back.data - r.data)) <= 1.0 / 65535

    def test_grayscale_has_one_channel(self, tmp_path):
        r = EncodedRaster(np.random.default_rng(4).random((8, 8, 1)).astype(np.float32))
        save_image(r, tmp_path / "g.png")
        assert load_image(tmp_path / "g.png").channels == 1

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(OSError):
            load_image(tmp_path / "missing.png")

    def test_bad_bit_depth(self, tmp_path):
        r = EncodedRaster(np.zeros((4, 4, 1), dtype=np.float32))
        with pytest.raises(ValueError):
            save_image(r, tmp_path / "x.png", bit_depth=12)
