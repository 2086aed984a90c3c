# Tests for the spatial placement priors

import numpy as np
import pytest

from .. import priors
from ..imagery import SaliencyMask
from ..priors import PlacementSet, PriorSpec


def _exception_message_starts_with(excinfo, message_body):
    return excinfo.value.args[0].startswith(message_body)


def _toy_mask(height=32, width=32):
    data = np.zeros((height, width))
    data[10:20, 12:22] = 1.0
    return SaliencyMask(data)


@pytest.mark.parametrize('kind', priors.PRIOR_KINDS)
def test_priors_in_bounds_and_reproducible(kind):
    """ Every prior stays inside the placement domain and repeats itself for a fixed seed """
    height, width = 32, 48
    mask = SaliencyMask(np.pad(np.ones((16, 16)), ((8, 8), (16, 16))))
    for seed in [0, 1, 12345, 2**63 + 7]:
        spec = PriorSpec(kind, 16, seed)
        first = spec.sample(height, width, mask, index=3)
        second = spec.sample(height, width, mask, index=3)
        assert first == second
        assert first.m == 16
        pts = first.points
        assert pts[:, 0].min() >= 0 and pts[:, 0].max() <= width - 1
        assert pts[:, 1].min() >= 0 and pts[:, 1].max() <= height - 1


def test_stochastic_priors_depend_on_seed_and_index():
    spec = PriorSpec('uniform', 8, seed=5)
    assert spec.sample(32, 32, index=0) != spec.sample(32, 32, index=1)
    assert spec.sample(32, 32) != spec.with_seed(6).sample(32, 32)
    assert spec.stochastic
    assert not PriorSpec('sobol', 8).stochastic


def test_sobol_reference_points():
    """ The unscrambled sequence starts at the origin, then the dyadic points """
    expected = [(0, 0), (0.5, 0.5), (0.75, 0.25), (0.25, 0.75),
                (0.375, 0.375), (0.875, 0.875), (0.625, 0.125), (0.125, 0.625)]
    unit = priors.sample_sobol(8, 2, 2).points
    assert np.array_equal(unit, np.array(expected))
    # a prefix of a longer draw
    np.testing.assert_array_equal(priors.sample_sobol(5, 2, 2).points, unit[:5])
    scaled = priors.sample_sobol(8, 65, 129).points
    np.testing.assert_array_equal(scaled, np.array(expected) * [128, 64])


def test_isotropic_is_patch_grid():
    placements = priors.sample_isotropic(196, 224, 224)
    pts = placements.points
    assert tuple(pts[0]) == (7.5, 7.5)
    # row-major: x varies fastest
    assert tuple(pts[1]) == (23.5, 7.5)
    assert tuple(pts[14]) == (7.5, 23.5)
    np.testing.assert_array_equal(np.unique(pts[:, 0]), 7.5 + 16 * np.arange(14))

    small = priors.sample_isotropic(4, 4, 4).points
    assert set(map(tuple, small)) == {(0.5, 0.5), (2.5, 0.5), (0.5, 2.5), (2.5, 2.5)}


def test_lattice_priors_reject_non_square_budgets():
    with pytest.raises(ValueError) as excinfo:
        priors.sample_isotropic(8, 64, 64)
    assert _exception_message_starts_with(excinfo, "Token count m must be a perfect square")
    with pytest.raises(ValueError) as excinfo:
        PriorSpec('center', 32)
    assert _exception_message_starts_with(excinfo, "Token count m must be a perfect square")
    with pytest.raises(ValueError) as excinfo:
        PriorSpec('uniform', 0)
    assert _exception_message_starts_with(excinfo, "Token count m must be a positive integer")


def test_center_prior():
    g = 4
    iso = priors.sample_isotropic(g * g, 64, 64).points
    even = priors.sample_center(g * g, 64, 64, 1.0).points
    assert np.abs(iso - even).max() <= 0.5 - 0.5 / g + 1e-12

    pulled = priors.sample_center(g * g, 64, 64, 2.0).points
    center = np.array([31.5, 31.5])
    assert np.linalg.norm(pulled - center, axis=1).mean() < np.linalg.norm(even - center, axis=1).mean()
    # symmetric about the center
    np.testing.assert_allclose(np.sort(pulled[:, 0]) + np.sort(pulled[:, 0])[::-1], 63.0)


def test_gaussian_prior_concentration():
    """ About 91% of draws fall inside the per-axis two-sigma box """
    height = width = 224
    sigma = 0.2 * 224
    pts = priors.sample_gaussian(4000, height, width, 0.2, seed=2).points
    inside = np.all(np.abs(pts - 111.5) <= 2 * sigma, axis=1).mean()
    assert 0.88 < inside < 0.94
    np.testing.assert_allclose(pts.mean(axis=0), [111.5, 111.5], atol=3.0)


def test_weighted_sampling_without_replacement():
    weights = np.zeros((6, 6))
    weights[1, 2] = 1.0
    weights[4, 4] = 2.0
    weights[5, 0] = 0.5
    pts = priors.sample_weighted(3, weights, seed=9).points
    pixels = {(int(np.floor(y + 0.5)), int(np.floor(x + 0.5))) for x, y in pts}
    assert pixels == {(1, 2), (4, 4), (5, 0)}
    assert np.all(np.abs(pts - np.round(pts)) <= 0.5)

    with pytest.raises(ValueError) as excinfo:
        priors.sample_weighted(4, weights, seed=9)
    assert _exception_message_starts_with(excinfo, "Cannot draw 4 distinct pixels")
    with pytest.raises(ValueError) as excinfo:
        priors.sample_weighted(1, np.zeros((3, 3)), seed=0)
    assert _exception_message_starts_with(excinfo, "Weights are all zero")


def test_weighted_sampling_frequencies():
    """ A single draw picks each pixel with probability proportional to its weight """
    weights = np.array([[1.0, 1.0], [1.0, 5.0]])
    hits = 0
    n = 4000
    for seed in range(n):
        x, y = priors.sample_weighted(1, weights, seed).points[0]
        hits += int(x >= 0.5 and y >= 0.5)
    assert abs(hits / n - 5 / 8) < 0.04


def test_salient_prior_stays_on_mask():
    mask = _toy_mask()
    pts = PriorSpec('salient', 20, seed=4).sample(32, 32, mask).points
    cols = np.floor(pts[:, 0] + 0.5).astype(int)
    rows = np.floor(pts[:, 1] + 0.5).astype(int)
    assert np.all(mask.data[rows, cols] > 0)

    back = PriorSpec('background', 20, seed=4).sample(32, 32, mask).points
    cols = np.floor(back[:, 0] + 0.5).astype(int)
    rows = np.floor(back[:, 1] + 0.5).astype(int)
    assert np.all(mask.data[rows, cols] < 1)

    with pytest.raises(ValueError) as excinfo:
        PriorSpec('salient', 4).sample(32, 32)
    assert _exception_message_starts_with(excinfo, "The salient prior requires a saliency mask")


def test_boundary_weights():
    weights = priors.derive_boundary_weights(224, 224, 0.05)
    assert weights[0, 0] == 1.0
    assert weights[0, 100] == 1.0
    np.testing.assert_allclose(weights[111, 111], np.exp(-111 / 11.2))
    np.testing.assert_allclose(np.exp(-priors._border_distance(111.5, 111.5, 224, 224) / 11.2),
                               np.exp(-111.5 / 11.2))
    # symmetric under flips
    np.testing.assert_allclose(weights, weights[::-1, ::-1])

    pts = PriorSpec('boundary', 64, seed=1).sample(224, 224).points
    d = priors._border_distance(pts[:, 0], pts[:, 1], 224, 224)
    assert np.median(d) < 20


def test_background_weights():
    mask = _toy_mask()
    np.testing.assert_array_equal(priors.derive_background_weights(mask), 1 - mask.data)


def test_patchdropout_prior():
    spec = PriorSpec('patchdropout', 20, seed=3)
    pts = spec.sample(64, 64).points
    centers = priors.lattice_centers(8, 64)
    assert np.all(np.isin(pts, centers))
    assert len(set(map(tuple, pts))) == 20
    with pytest.raises(ValueError) as excinfo:
        priors.sample_patchdropout(65, 64, 64, 8, 0)
    assert _exception_message_starts_with(excinfo, "Cannot keep 65 patches")


def test_placement_set_bounds():
    PlacementSet([[0, 0], [9, 4]], 5, 10)
    with pytest.raises(ValueError) as excinfo:
        PlacementSet([[0, 0], [9.5, 4]], 5, 10)
    assert _exception_message_starts_with(excinfo, "Placements must lie within [0, 9] x [0, 4]")
    with pytest.raises(ValueError):
        PlacementSet([[np.nan, 1]], 5, 10)


def test_placement_csv(tmpdir):
    rows = [priors.sample_uniform(5, 32, 32, seed) for seed in range(3)]
    path = str(tmpdir.join('placements.csv'))
    priors.write_placement_csv(rows, path)
    with open(path) as f:
        assert f.readline().strip() == "x0,y0,x1,y1,x2,y2,x3,y3,x4,y4"
    table = priors.read_placement_csv(path)
    assert table.shape == (3, 5, 2)
    for row, placements in zip(table, rows):
        np.testing.assert_array_equal(row, placements.points)

    with open(path, 'w') as f:
        f.write("x0,y0,x1\n1,2,3\n")
    from ..imagery import DataFormatError
    with pytest.raises(DataFormatError):
        priors.read_placement_csv(path)
