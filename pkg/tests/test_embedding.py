import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from delaycast.embedding import (DelayDataset, EmbeddingSpec, Normalization, ObservationSpec,
                                 build_embedding, false_nearest_neighbors, first_minimum,
                                 mutual_information, normalize_apply, normalize_fit,
                                 normalize_invert, project)
from delaycast.errors import (DegenerateSeriesError, EmbeddingError, NoMinimumError,
                              ShapeError)
from delaycast.timeseries import TimeSeries


def ramp(n=6, dt=1.0):
    return TimeSeries(np.arange(float(n)), dt)


# ---------------------------------------------------------------- observation

def test_project_lorenz_x(lorenz_short):
    x = project(lorenz_short, ObservationSpec((0,)))
    assert x.n_channels == 1 and x.channel_names == ["x"] and x.dt == lorenz_short.dt
    assert np.array_equal(x.values[:, 0], lorenz_short.values[:, 0])


def test_project_all_channels_is_identity(lorenz_short):
    assert project(lorenz_short, ObservationSpec((0, 1, 2))).equals(lorenz_short)


def test_project_evenly_spaced_grid():
    ts = TimeSeries(np.tile(np.arange(64.0), (5, 1)), 0.25)
    obs = ObservationSpec.evenly_spaced(64, 8)
    assert obs.channel_indices == (0, 8, 16, 24, 32, 40, 48, 56)
    assert project(ts, obs).n_channels == 8


def test_observation_errors():
    with pytest.raises(ShapeError):
        project(ramp(), ObservationSpec((1,)))
    with pytest.raises(ValueError):
        ObservationSpec((0, 0))
    with pytest.raises(ValueError):
        ObservationSpec(())


# ---------------------------------------------------------------- embedding

def test_ramp_first_pair_newest_first():
    ds = build_embedding(ramp(), EmbeddingSpec(3, 1, 1.0))
    assert ds.inputs[0].tolist() == [2.0, 1.0, 0.0]
    assert ds.targets[0].tolist() == [3.0]
    assert ds.n_pairs == 6 - 2 - 1


def test_lorenz_width(lorenz_short):
    x = project(lorenz_short, ObservationSpec((0,)))
    ds = build_embedding(x, EmbeddingSpec.from_tau(3, 0.1, 0.1))
    assert ds.inputs.shape[1] == 3


def test_m1_is_current_observation(lorenz_short):
    ds = build_embedding(lorenz_short, EmbeddingSpec(1, 1, 0.1))
    assert np.array_equal(ds.inputs, lorenz_short.values[ds.anchors])


@given(n=st.integers(5, 60), m=st.integers(1, 5), stride=st.integers(1, 4),
       d=st.integers(1, 3), data=st.data())
def test_index_arithmetic(n, m, stride, d, data):
    values = np.arange(n * d, dtype=float).reshape(n, d)
    spec = EmbeddingSpec(m, stride, 1.0)
    if n - spec.window - stride < 1:
        with pytest.raises(EmbeddingError):
            build_embedding(TimeSeries(values, 1.0), spec)
        return
    ds = build_embedding(TimeSeries(values, 1.0), spec)
    assert ds.n_pairs == n - (m - 1) * stride - stride
    i = data.draw(st.integers(0, ds.n_pairs - 1))
    t = (m - 1) * stride + i
    for j in range(m):
        assert ds.inputs[i, j * d:(j + 1) * d].tolist() == values[t - j * stride].tolist()
    assert ds.targets[i].tolist() == values[t + stride].tolist()


def test_horizon_stride_override():
    ds = build_embedding(ramp(10), EmbeddingSpec(2, 2, 1.0), horizon_stride=1)
    assert ds.inputs[0].tolist() == [2.0, 0.0] and ds.targets[0].tolist() == [3.0]


def test_full_state_targets(lorenz_short):
    x = project(lorenz_short, ObservationSpec((0,)))
    ds = build_embedding(x, EmbeddingSpec(3, 1, 0.1), target_mode="full_state", aux=lorenz_short)
    assert np.array_equal(ds.targets, lorenz_short.values[ds.anchors])
    assert np.array_equal(ds.inputs[:, 0], ds.targets[:, 0])


def test_misaligned_aux_rejected(lorenz_short):
    x = project(lorenz_short, ObservationSpec((0,)))
    shifted = lorenz_short.slice(1)
    with pytest.raises(EmbeddingError):
        build_embedding(x.slice(0, shifted.n_samples), EmbeddingSpec(3, 1, 0.1),
                        target_mode="full_state", aux=shifted)
    other_dt = TimeSeries(lorenz_short.values, 0.2)
    with pytest.raises(EmbeddingError):
        build_embedding(x, EmbeddingSpec(3, 1, 0.1), target_mode="full_state", aux=other_dt)


def test_embedded_sequence_targets():
    ds = build_embedding(ramp(10), EmbeddingSpec(2, 2, 1.0), target_mode="embedded_sequence",
                         n_sequence=3)
    assert ds.inputs[0].tolist() == [2.0, 0.0]
    assert ds.targets[0].tolist() == [3.0, 1.0, 4.0, 2.0, 5.0, 3.0]
    assert ds.n_pairs == 10 - 2 - 3


def test_too_short_series():
    with pytest.raises(EmbeddingError):
        build_embedding(ramp(3), EmbeddingSpec(3, 1, 1.0))


def test_spec_tau_exactness():
    spec = EmbeddingSpec.from_tau(3, 1.5, 0.25)
    assert spec.n_stride == 6 and spec.tau == 1.5
    with pytest.raises(ValueError):
        EmbeddingSpec.from_tau(3, 0.15, 0.1)
    with pytest.raises(ValueError):
        EmbeddingSpec(0, 1, 1.0)


def test_dataset_round_trip(tmp_path, lorenz_short):
    ds = build_embedding(lorenz_short, EmbeddingSpec(2, 3, 0.1))
    ds.input_norm = normalize_fit(ds.inputs)
    ds.target_norm = normalize_fit(ds.targets)
    ds.save(tmp_path / "ds_tau0.3")
    back = DelayDataset.load(tmp_path / "ds_tau0.3")
    assert back.inputs.tobytes() == ds.inputs.tobytes()
    assert back.targets.tobytes() == ds.targets.tobytes()
    assert back.spec == ds.spec and np.array_equal(back.anchors, ds.anchors)
    assert np.array_equal(back.input_norm.scale, ds.input_norm.scale)


# ---------------------------------------------------------------- mutual information

def test_mi_independent_uniform():
    rng = np.random.default_rng(0)
    a = rng.uniform(size=100_000)
    b = rng.uniform(size=100_000)
    # interleaving two streams: lag 1 pairs an a-sample with a b-sample
    series = np.empty(200_000)
    series[0::2], series[1::2] = a, b
    mi = mutual_information(series, max_lag=1, n_bins=16)
    assert 0 <= mi[1] < 0.05


def test_mi_lag_zero_is_entropy():
    x = np.random.default_rng(1).standard_normal(16_000)
    mi = mutual_information(x, max_lag=2, n_bins=16)
    # equiprobable bins with 1000 samples each
    assert mi[0] == pytest.approx(math.log(16), rel=1e-12)


def test_mi_non_negative_and_decreasing_start(lorenz_long):
    mi = mutual_information(lorenz_long, channel=0, max_lag=20)
    assert np.all(mi >= 0)
    assert mi[1] < mi[0]


def test_mi_lorenz_first_minimum(lorenz_long):
    mi = mutual_information(lorenz_long, channel=0, max_lag=20)
    assert 1 <= first_minimum(mi) <= 3


def test_mi_constant_rejected():
    with pytest.raises(DegenerateSeriesError):
        mutual_information(np.ones(100))


@pytest.mark.parametrize("curve,expected", [([3, 2, 1, 2, 3], 2), ([5, 4, 4, 6], 2),
                                            ([4, 3, 3, 3, 5], 3), ([2, 1, 1], None)])
def test_first_minimum_examples(curve, expected):
    if expected is None:
        with pytest.raises(NoMinimumError):
            first_minimum(curve)
    else:
        assert first_minimum(curve) == expected


@pytest.mark.parametrize("curve", [[1, 2, 3], [3, 3, 3], [1, 1, 2]])
def test_first_minimum_monotone(curve):
    with pytest.raises(NoMinimumError):
        first_minimum(curve)


def _first_minimum_oracle(c):
    # first rise whose preceding non-increasing run started higher
    for i in range(1, len(c) - 1):
        if c[i + 1] > c[i]:
            k = i
            while k > 0 and c[k - 1] >= c[k]:
                k -= 1
            if c[k] > c[i]:
                return i
    return None


@given(st.lists(st.integers(-5, 5).map(float), min_size=3, max_size=30))
def test_first_minimum_matches_oracle(curve):
    expected = _first_minimum_oracle(curve)
    if expected is None:
        with pytest.raises(NoMinimumError):
            first_minimum(curve)
        return
    i = first_minimum(curve)
    assert i == expected
    assert curve[i - 1] >= curve[i] < curve[i + 1]


# ---------------------------------------------------------------- FNN

def _fnn_brute(x, m_max, stride, rtol, atol):
    """Loop-based reference on small series."""
    n = x.size
    anchors = list(range(m_max * stride, n))
    sd = x.std()
    out = []
    for m in range(1, m_max + 1):
        vec = {t: [x[t - j * stride] for j in range(m)] for t in anchors}
        false = 0
        for t in anchors:
            best, best_d = None, math.inf
            for s in anchors:
                if s == t:
                    continue
                d = math.sqrt(sum((a - b) ** 2 for a, b in zip(vec[t], vec[s])))
                if d < best_d:
                    best, best_d = s, d
            extra = abs(x[t - m * stride] - x[best - m * stride])
            grow = extra / best_d if best_d > 0 else (math.inf if extra > 0 else 0.0)
            if grow > rtol or math.sqrt(best_d**2 + extra**2) / sd > atol:
                false += 1
        out.append(false / len(anchors))
    return np.array(out)


def test_fnn_matches_brute_force():
    x = np.random.default_rng(2).standard_normal(300).cumsum()
    ours = false_nearest_neighbors(TimeSeries(x, 1.0), n_stride=2, m_max=4, rtol_fnn=3.0,
                                   atol_fnn=2.0)
    ref = _fnn_brute(x, 4, 2, 3.0, 2.0)
    np.testing.assert_allclose(ours, ref, atol=1e-12)


def test_fnn_sine_saturates_at_two():
    # an irrational period keeps exact repeats (zero distances) off the grid
    period = 28 * math.sqrt(2)
    x = np.sin(2 * np.pi * np.arange(8000) / period)
    f = false_nearest_neighbors(TimeSeries(x, 1.0), n_stride=round(period / 4), m_max=4)
    assert f[0] > 0.1
    assert f[1] < 0.01


def test_fnn_white_noise_stays_high():
    x = np.random.default_rng(3).standard_normal(20_000)
    f = false_nearest_neighbors(TimeSeries(x, 1.0), m_max=6, max_points=4000)
    assert np.all(f > 0.10)


def test_fnn_lorenz_x(lorenz_long):
    f = false_nearest_neighbors(lorenz_long, ObservationSpec((0,)), n_stride=1, m_max=6)
    first = int(np.argmax(f < 0.01)) + 1
    assert f.min() < 0.01 and first == 3


@given(st.floats(1e-3, 1e3))
def test_fnn_scale_invariant(scale):
    x = np.random.default_rng(4).standard_normal(600).cumsum()
    a = false_nearest_neighbors(TimeSeries(x, 1.0), m_max=4)
    b = false_nearest_neighbors(TimeSeries(x * scale, 1.0), m_max=4)
    np.testing.assert_array_equal(a, b)


def test_fnn_constant_rejected():
    with pytest.raises(DegenerateSeriesError):
        false_nearest_neighbors(TimeSeries(np.ones(100), 1.0), m_max=3)


# ---------------------------------------------------------------- normalization

def test_normalize_shifted_data_is_centered(rng):
    x = rng.standard_normal((500, 3)) + np.array([10.0, -4.0, 1e3])
    z = normalize_apply(x, normalize_fit(x))
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=0), 1.0, rtol=1e-12)


def test_normalize_round_trip(rng):
    x = rng.standard_normal((200, 4)) * 30 + 5
    norm = normalize_fit(x)
    np.testing.assert_allclose(normalize_invert(normalize_apply(x, norm), norm), x, atol=1e-12)


def test_normalize_lorenz_scale(lorenz_long):
    norm = normalize_fit(lorenz_long)
    assert norm.scale[0] == pytest.approx(7.9, abs=0.4)


def test_normalize_zero_variance():
    with pytest.raises(DegenerateSeriesError):
        normalize_fit(np.ones((10, 2)))


def test_normalization_tiles_per_block():
    n = Normalization(np.array([1.0, 2.0]), np.array([3.0, 4.0])).tile(3)
    assert n.mean.tolist() == [1.0, 2.0] * 3 and n.scale.tolist() == [3.0, 4.0] * 3
