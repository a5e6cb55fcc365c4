import numpy as np
import pytest

from fsognn.channel import (
    FadingConfig,
    Topology,
    capacity,
    default_node_state,
    distances,
    load_topology,
    per_an_load,
    permute_topology,
    sample_csi,
    sample_topology,
    save_topology,
    topology_from_text,
    topology_to_text,
    weighted_objective,
)
from fsognn.graph_core import random_class_preserving, split_permutation
from fsognn.policy import Allocation


@pytest.mark.parametrize("n,m", [(5, 2), (10, 4)])
def test_topology_bounds(n, m):
    t = sample_topology(n, m, 3)
    assert t.rrh_positions.shape == (n, 2) and t.an_positions.shape == (m, 2)
    assert np.all(np.abs(t.rrh_positions) <= 5) and np.all(np.abs(t.an_positions) <= 1)
    assert np.all((t.weights > 0) & (t.weights <= 1))


def test_topology_deterministic():
    a, b = sample_topology(5, 2, 11), sample_topology(5, 2, 11)
    np.testing.assert_array_equal(a.rrh_positions, b.rrh_positions)
    np.testing.assert_array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, sample_topology(5, 2, 12).weights)


def test_topology_validation():
    with pytest.raises(ValueError):
        sample_topology(0, 2, 0)
    with pytest.raises(ValueError):
        Topology(np.zeros((2, 2)), np.zeros((1, 2)), [1.0, 0.0])


def test_fading_config_validation():
    with pytest.raises(ValueError):
        FadingConfig(attenuation_rate=0)
    with pytest.raises(ValueError):
        FadingConfig(lognormal_sigma=-0.1)


def test_deterministic_path_loss():
    t = sample_topology(5, 2, 0)
    f = FadingConfig(lognormal_sigma=0.0)
    h = sample_csi(t, f, np.random.default_rng(0))
    np.testing.assert_array_equal(h, np.exp(-0.2 * distances(t)))
    t0 = Topology([[0.3, -0.2]], [[0.3, -0.2]], [1.0])
    assert sample_csi(t0, f, np.random.default_rng(0))[0, 0] == 1.0


def test_fading_has_unit_mean():
    t = Topology([[0.0, 0.0]], [[0.0, 0.0]], [1.0])
    f = FadingConfig()
    h = sample_csi(t, f, np.random.default_rng(1), size=1_000_000)[:, 0, 0]
    se = h.std(ddof=1) / np.sqrt(h.size)
    assert abs(h.mean() - 1.0) < 3 * se
    assert np.std(np.log(h)) == pytest.approx(0.5, rel=1e-2)


def test_csi_batch_shape():
    t = sample_topology(5, 2, 0)
    assert sample_csi(t, FadingConfig(), np.random.default_rng(0), size=8).shape == (8, 5, 2)


def test_capacity_examples():
    f = FadingConfig()
    assert capacity(0.7, 0.0, True, f) == 0.0
    assert capacity(0.7, 0.4, False, f) == 0.0
    assert capacity(0.5, 0.2, True, f) == 1.0  # gamma*h*p = 1
    assert capacity(1.0, 0.3, True, FadingConfig(snr_gain=1, bandwidth_scale=2)) == pytest.approx(
        2 * np.log2(1.3)
    )
    with pytest.raises(ValueError):
        capacity(-0.1, 0.2, True, f)
    with pytest.raises(ValueError):
        capacity(0.1, -0.2, True, f)


def test_capacity_monotone():
    f = FadingConfig()
    p = np.linspace(0, 1, 50)
    assert np.all(np.diff(capacity(0.3, p, True, f)) >= 0)
    assert np.all(np.diff(capacity(p, 0.3, True, f)) >= 0)


def test_objective_and_loads():
    t = sample_topology(5, 2, 2)
    f = FadingConfig()
    h = sample_csi(t, f, np.random.default_rng(2))
    zero = Allocation(np.zeros(5), [0, 1, 0, 1, 0])
    assert weighted_objective(t, h, zero, f) == 0.0
    np.testing.assert_array_equal(per_an_load(t, h, zero, f), 0.0)

    a = Allocation([0.1, 0.2, 0.3, 0.4, 0.5], [0, 1, 1, 0, 1])
    caps = np.log2(1 + 10 * h[np.arange(5), a.selections] * a.powers)
    assert weighted_objective(t, h, a, f) == pytest.approx(np.dot(t.weights, caps))
    loads = per_an_load(t, h, a, f)
    assert loads[0] == pytest.approx(caps[[0, 3]].sum())
    assert loads[1] == pytest.approx(caps[[1, 2, 4]].sum())

    unit = Topology(t.rrh_positions, t.an_positions, np.ones(5))
    assert per_an_load(unit, h, a, f).sum() == pytest.approx(weighted_objective(unit, h, a, f))


def test_single_rrh_objective_is_its_capacity():
    t = Topology([[1.0, 0.0]], [[0.0, 0.0], [0.5, 0.5]], [1.0])
    f = FadingConfig()
    h = np.array([[0.4, 0.9]])
    a = Allocation([0.3], [1])
    assert weighted_objective(t, h, a, f) == pytest.approx(np.log2(1 + 10 * 0.9 * 0.3))


def test_permutation_covariance():
    rng = np.random.default_rng(3)
    f = FadingConfig()
    for _ in range(20):
        t = sample_topology(5, 2, int(rng.integers(1000)))
        h = sample_csi(t, f, rng, size=4)
        a = Allocation(rng.uniform(0, 0.5, (4, 5)), rng.integers(0, 2, (4, 5)))
        rmap, amap = split_permutation(random_class_preserving(5, 2, rng), 5)
        inv_a = np.argsort(amap)
        tp = permute_topology(t, rmap, amap)
        hp = h[:, rmap][:, :, amap]
        ap = Allocation(a.powers[:, rmap], inv_a[a.selections[:, rmap]])
        np.testing.assert_allclose(
            weighted_objective(tp, hp, ap, f), weighted_objective(t, h, a, f), rtol=1e-14
        )
        # summation order changes with the relabeling, so compare to rounding
        np.testing.assert_allclose(
            np.sort(per_an_load(tp, hp, ap, f), -1), np.sort(per_an_load(t, h, a, f), -1),
            rtol=1e-14,
        )


def test_idle_selection_carries_nothing():
    t = sample_topology(2, 2, 0)
    f = FadingConfig()
    h = np.ones((2, 2))
    a = Allocation([0.5, 0.5], [2, 0])
    np.testing.assert_allclose(per_an_load(t, h, a, f), [np.log2(6), 0.0])


def test_node_state():
    t = sample_topology(5, 2, 0)
    np.testing.assert_array_equal(default_node_state(t), np.ones(7))
    np.testing.assert_array_equal(default_node_state(t, "weights")[:5], t.weights)
    with pytest.raises(ValueError):
        default_node_state(t, "bogus")


def test_topology_text_round_trip(tmp_path):
    t = sample_topology(10, 4, 5)
    path = tmp_path / "topo.txt"
    save_topology(path, t)
    u = load_topology(path)
    np.testing.assert_array_equal(u.rrh_positions, t.rrh_positions)
    np.testing.assert_array_equal(u.an_positions, t.an_positions)
    np.testing.assert_array_equal(u.weights, t.weights)
    assert topology_to_text(u) == topology_to_text(t)


@pytest.mark.parametrize(
    "text",
    [
        "n_rrh 2\nn_an 1\nrrh 0 0 1\nan 0 0\n",
        "rrh 0 0\nan 0 0\n",
        "rrh 0 0 1\nbogus 1\nan 0 0\n",
        "rrh 0 0 0\nan 0 0\n",
    ],
)
def test_topology_text_errors(text):
    with pytest.raises(ValueError):
        topology_from_text(text)
