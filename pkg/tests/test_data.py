import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndif.data import (
    GRID_LENGTH,
    GRID_TAU,
    ConjunctionEvent,
    DataError,
    Dataset,
    Normalizer,
    SyntheticConfig,
    fit_normalizer,
    generate_synthetic_events,
    grid_event,
    read_events,
    snap_index,
    split_dataset,
    stack_grids,
    uncertainty_curve,
    write_dataset,
    write_events,
)


class LinearStub:
    """Identity normalizer: gridding then interpolates in raw metres."""

    def normalize(self, v):
        return np.asarray(v, dtype=float)


def event(eid, *obs):
    return ConjunctionEvent(eid, tuple(obs))


@st.composite
def events(draw, min_obs=2, max_obs=25):
    n = draw(st.integers(min_obs, max_obs))
    taus = draw(st.lists(st.floats(0.0, 7.0), min_size=n, max_size=n, unique=True))
    sig = draw(st.lists(st.floats(1.0, 1e6), min_size=n, max_size=n))
    taus = sorted(taus, reverse=True)
    return ConjunctionEvent("e", tuple(zip(taus, sig)))


# --- event type ---------------------------------------------------------------


@pytest.mark.parametrize(
    "obs",
    [
        [(3.0, 10.0)],
        [(3.0, 10.0), (2.0, 0.0)],
        [(3.0, 10.0), (3.0, 5.0)],
        [(2.0, 10.0), (3.0, 5.0)],
        [(7.5, 10.0), (3.0, 5.0)],
    ],
)
def test_event_invariants(obs):
    with pytest.raises(DataError):
        ConjunctionEvent("bad", tuple(obs))


# --- grid ----------------------------------------------------------------------


def test_grid_constants():
    assert GRID_LENGTH == 168 == GRID_TAU.size
    assert GRID_TAU[0] == 7.0
    assert abs(GRID_TAU[-1] - 1 / 24) < 1e-12


def test_snap_rules():
    assert snap_index(7.0) == 0
    assert snap_index(7.0 - 1 / 24) == 1
    assert snap_index(7.0 - 0.5 / 24) == 0  # exact tie goes to the smaller index
    assert snap_index(7.0 - 0.51 / 24) == 1


@settings(max_examples=200, deadline=None)
@given(st.floats(1 / 48 + 1e-9, 7.0))
def test_snap_displacement_at_most_half_step(tau):
    i = snap_index(tau)
    assert 0 <= i < GRID_LENGTH
    assert abs(GRID_TAU[i] - tau) <= 0.5 / 24 + 1e-12


def test_linear_interpolation_example():
    g = grid_event(event("e", (7.0, 10.0), (0.0417, 2.0)), LinearStub())
    assert g.obs_mask[0] and g.obs_mask[167] and g.obs_mask.sum() == 2
    i = np.arange(GRID_LENGTH)
    np.testing.assert_allclose(g.values, 10 - 8 * i / 167, atol=1e-12)
    assert (g.values[83] + g.values[84]) / 2 == pytest.approx(6.0)
    assert not g.pad_mask.any()


@pytest.mark.parametrize("mode", ["edge", "zero"])
def test_padding_regions(mode):
    g = grid_event(event("e", (5.0, 1000.0), (4.0, 500.0), (3.0, 200.0)), Normalizer(2.0, 4.0), pad_mode=mode)
    np.testing.assert_array_equal(g.pad_mask, (GRID_TAU > 5.0 + 1e-9) | (GRID_TAU < 3.0 - 1e-9))
    assert not (g.pad_mask & g.obs_mask).any()
    first, last = np.flatnonzero(g.obs_mask)[[0, -1]]
    if mode == "zero":
        np.testing.assert_array_equal(g.values[g.pad_mask], 0.0)
    else:
        np.testing.assert_array_equal(g.values[:first], g.values[first])
        np.testing.assert_array_equal(g.values[last + 1 :], g.values[last])


def test_collision_keeps_later_observation():
    g = grid_event(event("e", (5.0, 1000.0), (4.999, 100.0), (3.0, 100.0)), Normalizer(2.0, 4.0))
    i = snap_index(5.0)
    assert g.values[i] == pytest.approx(-1.0)
    assert g.obs_mask.sum() == 2


def test_degenerate_event_rejected():
    with pytest.raises(DataError):
        grid_event(event("e", (5.0, 10.0), (4.999, 20.0)), Normalizer(0.0, 2.0))


def test_bad_pad_mode():
    with pytest.raises(ValueError):
        grid_event(event("e", (5.0, 10.0), (4.0, 20.0)), Normalizer(0.0, 2.0), pad_mode="reflect")


@settings(max_examples=80, deadline=None)
@given(events())
def test_grid_invariants(ev):
    norm = Normalizer(0.0, 6.0)
    try:
        g = grid_event(ev, norm)
    except DataError:
        return
    assert g.values.shape == (GRID_LENGTH,)
    assert not (g.pad_mask & g.obs_mask).any()
    assert g.obs_mask.sum() <= len(ev.observations)
    observed = g.values[g.obs_mask]
    inner = g.values[~g.pad_mask]
    assert inner.min() >= observed.min() - 1e-12 and inner.max() <= observed.max() + 1e-12
    # padding is one contiguous run at each end
    idx = np.flatnonzero(~g.pad_mask)
    assert np.all(np.diff(idx) == 1)


def test_stack_grids_shape():
    norm = Normalizer(0.0, 4.0)
    gs = [grid_event(event(f"e{k}", (6.0, 100.0), (2.0, 10.0)), norm) for k in range(3)]
    assert stack_grids(gs).shape == (3, 1, GRID_LENGTH)


# --- normalizer ------------------------------------------------------------------


def test_normalizer_examples():
    n = Normalizer(2.0, 4.0)
    assert n.normalize(100.0) == -1.0
    assert n.normalize(10_000.0) == 1.0
    assert n.normalize(1000.0) == pytest.approx(0.0, abs=1e-15)
    assert n.normalize(1e6) == pytest.approx(3.0)  # extrapolates, no clipping
    assert n.normalize(0.01) == n.normalize(1.0)  # 1 m floor
    assert n.denormalize(n.normalize(5432.1)) == pytest.approx(5432.1, rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0, 1e9))
def test_normalizer_roundtrip(v):
    n = Normalizer(1.3, 4.9)
    assert n.denormalize(n.normalize(v)) == pytest.approx(v, rel=1e-9)


def test_fit_normalizer():
    evs = [event("a", (5.0, 100.0), (1.0, 1000.0)), event("b", (4.0, 10_000.0), (2.0, 500.0))]
    n = fit_normalizer(evs)
    assert (n.lo, n.hi) == (2.0, 4.0)
    with pytest.raises(ValueError):
        fit_normalizer([event("c", (5.0, 7.0), (1.0, 7.0))])
    with pytest.raises(ValueError):
        fit_normalizer([])
    with pytest.raises(ValueError):
        Normalizer(3.0, 3.0)


# --- synthetic ---------------------------------------------------------------------


def test_noise_free_curve():
    assert uncertainty_curve(3.5, 10_000.0, 100.0) == pytest.approx(1000.0)
    cfg = SyntheticConfig(
        n_events=5, jitter_std=0.0, jump_prob=0.0, sigma7_range=(10_000, 10_000), sigma0_range=(100, 100)
    )
    for ev in generate_synthetic_events(cfg):
        np.testing.assert_allclose(ev.sigma, 100.0 * 100.0 ** (ev.tau / 7.0), rtol=1e-12)
        assert np.all(np.diff(ev.sigma) < 0)  # decreasing toward TCA


def test_synthetic_events_valid_and_deterministic():
    cfg = SyntheticConfig(n_events=30, seed=3)
    a = generate_synthetic_events(cfg)
    b = generate_synthetic_events(cfg)
    assert a == b
    assert len({e.event_id for e in a}) == 30
    for e in a:
        assert len(e.observations) >= 3
        assert np.count_nonzero(e.tau >= 2.0) >= 2
    assert generate_synthetic_events(SyntheticConfig(n_events=30, seed=4)) != a


def test_synthetic_config_validation():
    with pytest.raises(ValueError):
        SyntheticConfig(cdm_rate=0.0)
    with pytest.raises(ValueError):
        SyntheticConfig(sigma0_range=(10.0, 1.0))


def test_synthetic_redraw_limit():
    with pytest.raises(RuntimeError):
        generate_synthetic_events(SyntheticConfig(n_events=1, cdm_rate=1e-6, max_redraws=5))


# --- split ----------------------------------------------------------------------------


def test_split_examples():
    evs = [event(f"e{k}", (5.0, 10.0), (4.0, 20.0)) for k in range(10)]
    tr, va, te = split_dataset(evs, (0.8, 0.1, 0.1), seed=1)
    assert (len(tr), len(va), len(te)) == (8, 1, 1)
    ids = [e.event_id for part in (tr, va, te) for e in part]
    assert sorted(ids) == sorted(e.event_id for e in evs)
    warnings = []
    tr, va, te = split_dataset(evs, (1, 0, 0), warn=warnings.append)
    assert len(tr) == 10 and not va and not te
    assert len(warnings) == 2
    assert split_dataset(evs, seed=5) == split_dataset(evs, seed=5)
    with pytest.raises(ValueError):
        split_dataset(evs, (0.5, 0.6, -0.1))


def test_default_split_sizes():
    evs = list(range(1250))
    tr, va, te = split_dataset(evs, (0.8, 0.04, 0.16))
    assert (len(tr), len(va), len(te)) == (1000, 50, 200)


# --- files --------------------------------------------------------------------------------


def test_csv_roundtrip(tmp_path):
    evs = generate_synthetic_events(SyntheticConfig(n_events=4, seed=9))
    path = tmp_path / "ev.csv"
    write_events(path, evs)
    assert read_events(path) == evs


def test_header_only(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("event_id,tau_days,sigma_t_m\n")
    assert read_events(p) == []


@pytest.mark.parametrize(
    "body,line",
    [
        ("a,5,10\na,4,-3\n", 3),
        ("a,5,10\na,4,0\n", 3),
        ("a,5,10\na,6,3\n", 3),
        ("a,5,10\nb,4,3\na,3,1\n", 4),
        ("a,5,10\na,x,3\n", 3),
        ("a,5\n", 2),
    ],
)
def test_malformed_rows_name_the_line(tmp_path, body, line):
    p = tmp_path / "bad.csv"
    p.write_text("event_id,tau_days,sigma_t_m\n" + body)
    with pytest.raises(DataError, match=f"bad.csv:{line}:"):
        read_events(p)


def test_dataset_directory(tmp_path):
    evs = generate_synthetic_events(SyntheticConfig(n_events=10, seed=2))
    tr, va, te = split_dataset(evs, (0.6, 0.2, 0.2))
    norm = fit_normalizer(tr)
    write_dataset(tmp_path, tr, va, te, norm, synthetic={"seed": 2})
    ds = Dataset(tmp_path)
    assert ds.partition("test") == te
    assert ds.normalizer == norm
    assert ds.find(va[0].event_id) == va[0]
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["counts"] == {"train": 6, "validation": 2, "test": 2}
    with pytest.raises(DataError):
        ds.find("nope")
    with pytest.raises(DataError):
        Dataset(tmp_path / "missing")
