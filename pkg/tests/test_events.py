import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retinev.events import (EventStream, FpeMap, IlluminanceMap, SensorConstants,
                            extract_fpe, fpe_from_illuminance,
                            illuminance_from_fpe, load_events, load_fpe,
                            save_events, save_fpe, simulate_fpe_map)
from retinev.raster import LinearRaster


def stream(width, height, quads):
    xs, ys, ts, ps = zip(*quads) if quads else ((), (), (), ())
    return EventStream(width=width, height=height, x=np.array(xs, dtype=np.int64),
                       y=np.array(ys, dtype=np.int64), t=np.array(ts, dtype=np.float64),
                       p=np.array(ps, dtype=np.int8))


def brute_force_fpe(s):
    """Independent oracle: group by pixel, filter p=+1, take the min."""
    out = np.full((s.height, s.width), np.nan)
    for x, y, t, p in zip(s.x, s.y, s.t, s.p):
        if p == 1 and (np.isnan(out[y, x]) or t < out[y, x]):
            out[y, x] = t
    return out


def random_stream(rng, max_side=32, max_per_pixel=10):
    w = int(rng.integers(1, max_side + 1))
    h = int(rng.integers(1, max_side + 1))
    n = int(rng.integers(0, max_per_pixel * 4 + 1))
    return stream(w, h, [
        (int(rng.integers(w)), int(rng.integers(h)),
         float(rng.uniform(1.0, 1e4)), int(rng.choice([-1, 1])))
        for _ in range(n)
    ])


class TestEventStream:
    def test_out_of_bounds_rejected(self):
        with pytest.raises(ValueError, match="bounds"):
            stream(4, 4, [(4, 0, 1.0, 1)])

    def test_bad_polarity_rejected(self):
        with pytest.raises(ValueError, match="polarity"):
            stream(4, 4, [(0, 0, 1.0, 0)])

    def test_negative_timestamp_rejected(self):
        with pytest.raises(ValueError, match="timestamps"):
            stream(4, 4, [(0, 0, -1.0, 1)])


class TestExtractFpe:
    def test_empty_stream_all_missing(self):
        m = extract_fpe(stream(4, 3, []))
        assert np.all(np.isnan(m.t_fpe))

    def test_min_over_positive_events(self):
        s = stream(5, 5, [(2, 3, 100.0, 1), (2, 3, 50.0, 1), (2, 3, 20.0, -1)])
        m = extract_fpe(s)
        assert m.t_fpe[3, 2] == 50.0
        assert np.isnan(m.t_fpe[0, 0])

    def test_negative_only_all_missing(self):
        s = stream(3, 3, [(0, 0, 5.0, -1), (2, 2, 1.0, -1)])
        assert np.all(np.isnan(extract_fpe(s).t_fpe))

    def test_matches_brute_force_on_random_streams(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            s = random_stream(rng)
            got = extract_fpe(s).t_fpe
            want = brute_force_fpe(s)
            assert np.array_equal(got, want, equal_nan=True)


class TestPhysics:
    def test_k_from_constants(self):
        assert SensorConstants(C=1.0, U_thd=1.0, eta=0.5, A=1.0).k == 1.0

    def test_default_k_is_one(self):
        assert SensorConstants().k == 1.0

    def test_unit_conversion(self):
        m = FpeMap(np.array([[1.0]]))
        assert illuminance_from_fpe(m, k=1.0).E[0, 0] == 1.0

    def test_eq3_arithmetic(self):
        m = FpeMap(np.array([[0.5]]))
        assert illuminance_from_fpe(m, k=2.0).E[0, 0] == 4.0

    def test_floor_clamps_dark_pixels(self):
        E = IlluminanceMap(np.array([[0.0]]))
        assert fpe_from_illuminance(E, k=1.0, eps_E=1e-4).t_fpe[0, 0] == 1e4

    def test_uniform_illuminance(self):
        E = IlluminanceMap(np.full((3, 3), 2.0))
        assert np.all(fpe_from_illuminance(E, k=2.0).t_fpe == 1.0)

    def test_roundtrip_random(self):
        rng = np.random.default_rng(8)
        E = IlluminanceMap(rng.uniform(1e-3, 1e3, size=(25, 40)))
        back = illuminance_from_fpe(fpe_from_illuminance(E, k=3.7, eps_E=1e-4), k=3.7)
        assert np.max(np.abs(back.E - E.E) / E.E) < 1e-9

    def test_missing_propagates(self):
        m = FpeMap(np.array([[1.0, np.nan]]))
        E = illuminance_from_fpe(m, k=1.0)
        assert np.isnan(E.E[0, 1]) and E.E[0, 0] == 1.0


class TestSimulateFpe:
    def test_uniform_inputs_give_uniform_map(self):
        gt = LinearRaster(np.full((4, 4, 1), 0.5, dtype=np.float32))
        m = simulate_fpe_map(gt, SensorConstants(), np.full((4, 4), 0.2))
        assert np.all(m.t_fpe == m.t_fpe[0, 0])

    def test_inverse_proportionality(self):
        gt = LinearRaster(np.array([[[0.8], [0.4]]], dtype=np.float32))
        m = simulate_fpe_map(gt, SensorConstants(), np.full((1, 2), 0.2))
        assert m.t_fpe[0, 0] == pytest.approx(m.t_fpe[0, 1] / 2.0, rel=1e-12)

    def test_elementwise_oracle_on_ramp(self):
        vals = np.linspace(0, 1, 16, dtype=np.float32).reshape(4, 4, 1)
        gt = LinearRaster(vals)
        m = simulate_fpe_map(gt, SensorConstants(), np.full((4, 4), 0.2), eps_E=1e-4)
        want = 0.2 / np.maximum(vals[:, :, 0].astype(np.float64), 1e-4)
        assert np.allclose(m.t_fpe, want, rtol=1e-12)

    def test_rank_reversing_in_luminance(self):
        rng = np.random.default_rng(9)
        gt = LinearRaster(rng.uniform(0.01, 1.0, size=(8, 8, 1)).astype(np.float32))
        m = simulate_fpe_map(gt, SensorConstants(), np.full((8, 8), 0.2))
        L = gt.luminance().ravel()
        t = m.t_fpe.ravel()
        order = np.argsort(L)
        assert np.all(np.diff(t[order]) <= 0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**31))
    def test_missing_closed_under_normalization_ops(self, seed):
        rng = np.random.default_rng(seed)
        t = rng.uniform(1, 100, size=(6, 6))
        t[rng.random((6, 6)) < 0.3] = np.nan
        m = FpeMap(t)
        E = illuminance_from_fpe(m, k=1.0)
        back = fpe_from_illuminance(E, k=1.0)
        assert np.array_equal(np.isnan(back.t_fpe), np.isnan(t))


class TestFileFormats:
    def test_evtm_roundtrip(self, tmp_path):
        s = stream(6, 4, [(1, 2, 100.0, 1), (5, 3, 42.0, -1), (0, 0, 7.0, 1)])
        save_events(s, tmp_path / "e.evtm")
        back = load_events(tmp_path / "e.evtm")
        assert back.width == 6 and back.height == 4
        assert np.array_equal(back.x, s.x)
        assert np.array_equal(back.y, s.y)
        assert np.array_equal(back.t, s.t)
        assert np.array_equal(back.p, s.p)

    def test_evtm_truncated_payload(self, tmp_path):
        s = stream(4, 4, [(0, 0, 1.0, 1), (1, 1, 2.0, 1)])
        save_events(s, tmp_path / "e.evtm")
        raw = (tmp_path / "e.evtm").read_bytes()
        (tmp_path / "bad.evtm").write_bytes(raw[:-3])
        with pytest.raises(ValueError, match="size mismatch"):
            load_events(tmp_path / "bad.evtm")

    def test_csv_fallback(self, tmp_path):
        (tmp_path / "e.csv").write_text("x,y,t,p\n1,2,100.5,1\n0,0,3,-1\n")
        s = load_events(tmp_path / "e.csv")
        assert len(s) == 2
        assert s.t[0] == 100.5 and s.p[1] == -1

    def test_csv_bad_header(self, tmp_path):
        (tmp_path / "e.csv").write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError, match="header"):
            load_events(tmp_path / "e.csv")

    def test_fpe1_roundtrip_preserves_missing(self, tmp_path):
        t = np.array([[1.5, np.nan], [3.0, 4.0]])
        save_fpe(FpeMap(t), tmp_path / "m.fpe")
        back = load_fpe(tmp_path / "m.fpe")
        assert back.width == 2 and back.height == 2
        assert np.array_equal(np.isnan(back.t_fpe), np.isnan(t))
        assert np.allclose(back.t_fpe[~np.isnan(t)], t[~np.isnan(t)], rtol=1e-6)

    def test_fpe1_rejects_wrong_magic(self, tmp_path):
        (tmp_path / "m.fpe").write_bytes(b"XXXX\x02\x00\x02\x00" + b"\x00" * 16)
        with pytest.raises(ValueError, match="FPE1"):
            load_fpe(tmp_path / "m.fpe")
