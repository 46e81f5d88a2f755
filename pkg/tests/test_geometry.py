import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conesep.dsp import Waveform
from conesep.geometry import (
    FarFieldPoint,
    MicArray,
    angular_distance,
    load_array,
    paper6,
    pre_shift,
    residual_lags,
    respeaker4,
    shift_uniqueness_check,
    shift_vector,
    tdoa_samples,
    unshift,
    wrap_angle,
)


def test_tdoa_reference_value():
    # 3.43 m at 343 m/s and 44.1 kHz is exactly 441 samples
    arr = MicArray(np.array([[0.0, 0.0], [0.1, 0.0]]))
    p = FarFieldPoint(0.0, range=3.43)
    assert tdoa_samples(p, 0, arr, 44100) == 441


def test_tdoa_far_near_spread_paper6():
    arr = paper6()
    p = FarFieldPoint(0.0)
    t = [tdoa_samples(p, i, arr, 44100) for i in range(arr.size)]
    assert t == [12847, 12852, 12861, 12866, 12861, 12852]
    # plane-wave approximation 2r/c*sr = 18.64; flooring both ends gives 18 or 19
    assert t[3] - t[0] == 19
    assert abs((t[3] - t[0]) - 2 * 0.0725 / 343 * 44100) < 1


def test_tdoa_bad_index():
    with pytest.raises(IndexError):
        tdoa_samples(FarFieldPoint(0.0), 6, paper6(), 44100)


def test_shift_vector_zero_on_reference_channel():
    arr = paper6()
    for theta in (-170, -30, 0, 45, 179):
        assert shift_vector(theta, arr, 44100)[0] == 0


def test_shift_vector_symmetry():
    # mics 1 and 5 are mirror images across the x axis
    k = shift_vector(0.0, paper6(), 44100)
    assert k[1] == k[5] and k[2] == k[4]


def test_wrap_angle():
    assert wrap_angle(180.0) == 180.0
    assert wrap_angle(-180.0) == 180.0
    assert wrap_angle(190.0) == pytest.approx(-170.0)
    np.testing.assert_allclose(wrap_angle(np.array([0.0, 360.0, -365.0])), [0.0, 0.0, -5.0])


@given(st.floats(-1000, 1000), st.floats(-1000, 1000))
def test_angular_distance_properties(a, b):
    d = angular_distance(a, b)
    assert 0 <= d <= 180
    assert d == pytest.approx(angular_distance(b, a), abs=1e-9)
    assert angular_distance(a, a + 360.0) == pytest.approx(0.0, abs=1e-9)


def test_array_validation():
    with pytest.raises(ValueError):
        MicArray(np.array([[0.0, 0.0]]))
    with pytest.raises(ValueError):
        MicArray(np.array([[0.0, 0.0], [0.0, 0.0]]))
    assert paper6().is_circular and respeaker4().size == 4
    assert paper6().radius == pytest.approx(0.0725)


def test_load_array(tmp_path):
    assert load_array("paper6").size == 6
    path = tmp_path / "arr.json"
    path.write_text(json.dumps({"positions": [[0, 0], [0.05, 0], [0, 0.05]]}))
    assert load_array(f"file:{path}").size == 3
    assert load_array(str(path)).size == 3
    with pytest.raises(ValueError):
        load_array("nonexistent-preset")


def test_pre_shift_aligns_impulses():
    arr = paper6()
    sr = 44100
    theta = 37.0
    T = 400
    p = FarFieldPoint(theta)
    data = np.zeros((arr.size, T))
    base = min(tdoa_samples(p, i, arr, sr) for i in range(arr.size))
    for i in range(arr.size):
        data[i, 100 + tdoa_samples(p, i, arr, sr) - base] = 1.0
    y = pre_shift(Waveform(data, sr), theta, arr)
    peaks = {int(np.argmax(y.data[i])) for i in range(arr.size)}
    assert len(peaks) == 1


def test_pre_shift_channel_mismatch():
    with pytest.raises(ValueError):
        pre_shift(Waveform(np.zeros((4, 10)), 44100), 0.0, paper6())


@settings(max_examples=30, deadline=None)
@given(st.floats(-180, 180))
def test_unshift_inverts_pre_shift_in_interior(theta):
    arr = paper6()
    rng = np.random.default_rng(0)
    x = Waveform(rng.standard_normal((arr.size, 200)), 44100)
    back = unshift(pre_shift(x, theta, arr), theta, arr)
    np.testing.assert_array_equal(back.data[:, 30:-30], x.data[:, 30:-30])


def test_residual_lags_small_at_steering_angle():
    arr = paper6()
    lag = residual_lags(60.0, [60.0], arr, 44100)
    assert np.all(np.abs(lag) < 1.0)
    assert lag[0, 0] == 0.0


def test_shift_uniqueness_two_mic_mirror_collisions():
    arr = MicArray(np.array([[-0.05, 0.0], [0.05, 0.0]]))
    pairs = shift_uniqueness_check(arr, 2.0)
    # a linear pair cannot tell front from back
    assert (-60.0, 60.0) in pairs
    assert len(pairs) == 729


def test_shift_uniqueness_paper6():
    pairs = shift_uniqueness_check(paper6(), 2.0, 44100)
    assert len(pairs) == 24
    assert all(angular_distance(a, b) <= 2.0 + 1e-9 for a, b in pairs)
    pairs16 = shift_uniqueness_check(paper6(), 1.0, 16000)
    assert len(pairs16) == 828
