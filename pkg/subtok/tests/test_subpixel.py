# Tests for subpixel token extraction and the positional embedding

import numpy as np
import pytest

from .. import priors
from .. import subpixel
from ..imagery import Image
from ..subpixel import TokenizerConfig


def _exception_message_starts_with(excinfo, message_body):
    return excinfo.value.args[0].startswith(message_body)


def _random_image(height=20, width=24, channels=3, seed=0):
    return Image(np.random.default_rng(seed).uniform(size=(height, width, channels)))


def _off_grid_points(rng, n, height, width, k, eps=1e-3):
    """ Placements whose window samples all sit at least 2 eps from integers and inside the image """
    pts = []
    half = (k - 1) / 2.0
    while len(pts) < n:
        x = rng.uniform(half + 0.1, width - 1 - half - 0.1)
        y = rng.uniform(half + 0.1, height - 1 - half - 0.1)
        fx = (x - half) % 1
        fy = (y - half) % 1
        if min(fx, 1 - fx, fy, 1 - fy) > 2 * eps:
            pts.append((x, y))
    return np.array(pts)


def test_bilinear_at():
    image = Image(np.array([[0.0, 1.0], [2.0, 3.0]]) / 3)
    assert np.isclose(subpixel.bilinear_at(image, 0.5, 0.5) * 3, 1.5)
    assert subpixel.bilinear_at(image, 0, 0) == 0
    assert np.isclose(subpixel.bilinear_at(image, 1, 1) * 3, 3)
    assert np.isclose(subpixel.bilinear_at(image, 1, 0) * 3, 1)
    # clamped outside the domain
    assert np.isclose(subpixel.bilinear_at(image, -4, 5) * 3, 2)


def test_grid_equivalence():
    """ Isotropic placements with k = 8 on 64 x 64 reproduce the 8 x 8 patch partition exactly """
    image = _random_image(64, 64, 3, seed=4)
    config = TokenizerConfig(window=8, embed_dim=16, num_freqs=3)
    placements = priors.sample_isotropic(64, 64, 64)
    tokens = subpixel.tokenize(image, placements, config)
    assert len(tokens) == 64
    for j, token in enumerate(tokens):
        row, col = divmod(j, 8)
        patch = image.data[8 * row:8 * row + 8, 8 * col:8 * col + 8, :].ravel()
        assert np.max(np.abs(token.features - patch)) == 0


def test_feature_order_is_row_major():
    data = np.arange(5 * 5 * 3, dtype=float).reshape(5, 5, 3) / 100
    patch = subpixel.extract_patch(data, (2, 2), 3)
    np.testing.assert_array_equal(patch, data[1:4, 1:4, :].ravel())


def test_patch_jacobian_matches_finite_differences():
    image = _random_image(seed=1)
    k = 4
    eps = 1e-3
    rng = np.random.default_rng(2)
    for s in _off_grid_points(rng, 10, image.height, image.width, k):
        jac = subpixel.patch_position_jacobian(image, s, k)
        for axis in range(2):
            step = np.zeros(2)
            step[axis] = eps
            numeric = (subpixel.extract_patch(image, s + step, k) -
                       subpixel.extract_patch(image, s - step, k)) / (2 * eps)
            np.testing.assert_allclose(jac[:, axis], numeric, rtol=1e-6, atol=1e-9)


def test_patch_jacobian_at_integers_and_edges():
    data = np.array([[0.0, 0.2, 0.6], [0.1, 0.5, 0.9], [0.3, 0.4, 1.0]])
    # at integer coordinates the right-hand cell is used
    jac = subpixel.patch_position_jacobian(data, (1.0, 1.0), 1)
    np.testing.assert_allclose(jac[0], [0.9 - 0.5, 0.4 - 0.5])
    # the last column uses its left cell
    jac = subpixel.patch_position_jacobian(data, (2.0, 0.5), 1)
    np.testing.assert_allclose(jac[0, 0], 0.5 * (0.6 - 0.2) + 0.5 * (0.9 - 0.5))
    # window samples clamped along x carry no x derivative
    jac = subpixel.patch_position_jacobian(data, (0.25, 1.25), 3).reshape(3, 3, 2)
    assert np.all(jac[:, 0, 0] == 0)
    assert np.all(jac[:, 1, 0] != 0)


def test_positional_embedding_properties():
    config = TokenizerConfig(window=4, embed_dim=32, num_freqs=4, freq_seed=7)
    a = subpixel.positional_embedding((3.25, 10.5), 32, 32, config)
    b = subpixel.positional_embedding((3.25, 10.5), 32, 32, config)
    assert a.shape == (32,)
    np.testing.assert_array_equal(a, b)
    other = TokenizerConfig(window=4, embed_dim=32, num_freqs=4, freq_seed=8)
    assert not np.allclose(a, subpixel.positional_embedding((3.25, 10.5), 32, 32, other))

    with pytest.raises(ValueError) as excinfo:
        TokenizerConfig(embed_dim=30)
    assert _exception_message_starts_with(excinfo, "Tokenizer embed_dim must be a positive multiple of 4")


def test_positional_embedding_jacobian():
    config = TokenizerConfig(window=4, embed_dim=24, num_freqs=5)
    eps = 1e-5
    rng = np.random.default_rng(3)
    for _ in range(10):
        s = rng.uniform(1, 30, size=2)
        jac = subpixel.positional_embedding_jacobian(s, 32, 40, config)
        for axis in range(2):
            step = np.zeros(2)
            step[axis] = eps
            numeric = (subpixel.positional_embedding(s + step, 32, 40, config) -
                       subpixel.positional_embedding(s - step, 32, 40, config)) / (2 * eps)
            np.testing.assert_allclose(jac[:, axis], numeric, rtol=1e-5, atol=1e-8)


def test_positional_embedding_lipschitz():
    """ Nearby placements have nearby embeddings """
    config = TokenizerConfig(window=4, embed_dim=32, num_freqs=6)
    size = 64
    proj = subpixel._projection(config.embed_dim, config.num_freqs, config.freq_seed)
    bound = 2 * np.pi * np.sqrt((4.0 ** config.num_freqs - 1) / 3) * np.linalg.norm(proj, 2) / (size - 1)
    rng = np.random.default_rng(5)
    for _ in range(50):
        s = rng.uniform(0, size - 1, size=2)
        t = np.clip(s + rng.normal(scale=0.5, size=2), 0, size - 1)
        gap = np.linalg.norm(subpixel.positional_embedding(s, size, size, config) -
                             subpixel.positional_embedding(t, size, size, config))
        assert gap <= bound * np.linalg.norm(s - t) + 1e-12


def test_tokenize_arrays():
    image = _random_image(16, 16, 1, seed=6)
    config = TokenizerConfig(window=3, embed_dim=8, num_freqs=2)
    placements = [(1.5, 2.25), (7.0, 7.0), (1.5, 2.25)]
    features, pos, fjac, pjac = subpixel.tokenize_arrays(image, placements, config, with_jacobians=True)
    assert features.shape == (3, 9)
    assert pos.shape == (3, 8)
    assert fjac.shape == (3, 9, 2)
    assert pjac.shape == (3, 8, 2)
    # overlapping placements are allowed and give identical tokens
    np.testing.assert_array_equal(features[0], features[2])
    tokens = subpixel.tokenize(image, placements, config)
    assert tokens[1].position == (7.0, 7.0)
    np.testing.assert_array_equal(tokens[1].pos_embedding, pos[1])

    features, pos = subpixel.tokenize_arrays(image, np.zeros((0, 2)), config)
    assert features.shape == (0, 9) and pos.shape == (0, 8)


def test_placements_outside_image():
    image = _random_image(8, 8)
    with pytest.raises(ValueError) as excinfo:
        subpixel.extract_patches(image, [(8.0, 1.0)], 2)
    assert _exception_message_starts_with(excinfo, "Placements must lie within [0, 7] x [0, 7]")
    with pytest.raises(ValueError) as excinfo:
        subpixel.extract_patches(image, priors.sample_isotropic(4, 16, 16), 2)
    assert _exception_message_starts_with(excinfo, "Placements refer to a 16x16 image")
