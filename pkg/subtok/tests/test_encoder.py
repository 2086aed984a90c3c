# Tests for the toy transformer: forward pass, loss, hand-written gradients and weight files

import numpy as np
import pytest

from .. import encoder
from ..encoder import EncoderConfig, EncoderParams, NumericalError, StaleTraceError
from ..imagery import DataFormatError, Image
from ..subpixel import TokenizerConfig, tokenize_arrays


def _exception_message_starts_with(excinfo, message_body):
    return excinfo.value.args[0].startswith(message_body)


def _small_model(seed=0, depth=2, width=8, heads=2, window=2, channels=3, num_classes=3, num_freqs=3,
                 spread=0.3):
    """ A small encoder with weights large enough to make every path matter """
    tokcfg = TokenizerConfig(window=window, embed_dim=width, num_freqs=num_freqs)
    config = EncoderConfig(depth=depth, width=width, heads=heads, mlp_ratio=2, num_classes=num_classes,
                           token_feature_dim=tokcfg.feature_dim(channels))
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in config.param_shapes().items():
        if name.endswith('_g'):
            arrays[name] = 1 + 0.1 * rng.normal(size=shape)
        else:
            arrays[name] = spread * rng.normal(size=shape)
    return EncoderParams(config, tokcfg, arrays)


def _loss_of(params, features, pos, label):
    logits, _ = encoder.forward(params, (features, pos))
    return encoder.loss(logits, label, params.config.label_smoothing)


def _relative_error(analytic, numeric):
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-30)


def test_config_validation():
    with pytest.raises(ValueError) as excinfo:
        EncoderConfig(width=10, heads=4)
    assert _exception_message_starts_with(excinfo, "EncoderConfig.width (10) must be divisible by heads (4)")
    with pytest.raises(ValueError) as excinfo:
        EncoderParams.zeros(EncoderConfig(width=8, heads=2), TokenizerConfig(embed_dim=16))
    assert _exception_message_starts_with(excinfo, "Tokenizer embed_dim (16) must equal encoder width (8)")


def test_init_params_is_seeded():
    tokcfg = TokenizerConfig(window=2, embed_dim=8, num_freqs=2)
    config = EncoderConfig(depth=2, width=8, heads=2, mlp_ratio=2, num_classes=4, token_feature_dim=12)
    a = encoder.init_params(config, tokcfg, seed=1)
    b = encoder.init_params(config, tokcfg, seed=1)
    c = encoder.init_params(config, tokcfg, seed=2)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()
    assert a.names() == list(config.param_shapes())
    assert np.all(a['blocks.1.ln2_g'] == 1)
    assert np.all(a['head_b'] == 0)
    assert np.abs(a['blocks.0.qkv_w']).max() <= 0.04
    with pytest.raises(ValueError):
        a['cls'][0] = 1.0


def test_forward_shapes_and_token_order():
    params = _small_model()
    rng = np.random.default_rng(1)
    features = rng.uniform(size=(5, 12))
    pos = rng.normal(size=(5, 8))
    logits, cls_feature = encoder.forward(params, (features, pos))
    assert logits.shape == (3,)
    assert cls_feature.shape == (8,)
    # tokens carry their own positions, so the order of the set does not matter
    order = rng.permutation(5)
    shuffled, _ = encoder.forward(params, (features[order], pos[order]))
    np.testing.assert_allclose(shuffled, logits, rtol=1e-10, atol=1e-12)

    batch = encoder.forward_batch(params, np.stack([features, features[order]]), np.stack([pos, pos[order]]))
    np.testing.assert_allclose(batch.logits[0], logits, rtol=1e-12)
    np.testing.assert_allclose(batch.logits[1], logits, rtol=1e-10, atol=1e-12)

    with pytest.raises(ValueError) as excinfo:
        encoder.forward(params, (features[:, :10], pos))
    assert _exception_message_starts_with(excinfo, "Token feature length 10 does not match")


def test_loss():
    assert np.isclose(encoder.loss(np.zeros(10), 3), np.log(10))
    assert abs(encoder.loss(np.zeros(10), 3) - 2.302585) < 1e-6
    assert np.isclose(encoder.loss(np.zeros(10), 3, smoothing=0.1), np.log(10))
    assert encoder.loss(np.array([10.0, 0.0]), 0) < encoder.loss(np.array([10.0, 0.0]), 1)
    with pytest.raises(ValueError) as excinfo:
        encoder.loss(np.zeros(4), 4)
    assert _exception_message_starts_with(excinfo, "Invalid label")


def test_parameter_gradients_match_finite_differences():
    params = _small_model(seed=3, width=16, heads=4)
    rng = np.random.default_rng(4)
    features = rng.uniform(size=(4, 12))
    pos = rng.normal(size=(4, 16))
    label = 2
    _, _, trace = encoder.forward(params, (features, pos), return_trace=True)
    grads = encoder.backward_params(trace, label)
    assert list(grads) == params.names()

    eps = 1e-6
    base = params.as_dict()
    for name in params.names():
        analytic = grads[name].ravel()
        picks = rng.choice(analytic.size, size=min(6, analytic.size), replace=False)
        numeric = np.zeros(picks.size)
        for i, flat_index in enumerate(picks):
            values = []
            for sign in (1, -1):
                arrays = dict(base)
                changed = np.array(base[name])
                changed.flat[flat_index] += sign * eps
                arrays[name] = changed
                values.append(_loss_of(EncoderParams(params.config, params.tokenizer, arrays), features, pos,
                                       label))
            numeric[i] = (values[0] - values[1]) / (2 * eps)
        assert _relative_error(analytic[picks], numeric) <= 1e-5, name


def test_token_gradients_match_finite_differences():
    params = _small_model(seed=5)
    rng = np.random.default_rng(6)
    features = rng.uniform(size=(4, 12))
    pos = rng.normal(size=(4, 8))
    label = 1
    _, _, trace = encoder.forward(params, (features, pos), return_trace=True)
    dfeatures, dpos = encoder.backward_tokens(trace, label)
    assert dfeatures.shape == features.shape
    assert dpos.shape == pos.shape

    eps = 1e-6
    for array, analytic in ((features, dfeatures), (pos, dpos)):
        numeric = np.zeros_like(array)
        for index in np.ndindex(*array.shape):
            up = np.array(array)
            down = np.array(array)
            up[index] += eps
            down[index] -= eps
            if array is features:
                numeric[index] = (_loss_of(params, up, pos, label) - _loss_of(params, down, pos, label)) / (2 * eps)
            else:
                numeric[index] = (_loss_of(params, features, up, label) -
                                  _loss_of(params, features, down, label)) / (2 * eps)
        assert _relative_error(analytic, numeric) <= 1e-5


def _position_loss(params, image, placements, label):
    features, pos = tokenize_arrays(image, placements, params.tokenizer)
    return _loss_of(params, features, pos, label)


def _off_grid_placements(rng, m, size, k, eps):
    half = (k - 1) / 2.0
    pts = []
    while len(pts) < m:
        s = rng.uniform(half + 0.1, size - 1 - half - 0.1, size=2)
        fractions = (s - half) % 1
        if np.all(np.minimum(fractions, 1 - fractions) > 2 * eps):
            pts.append(s)
    return np.array(pts)


def test_position_gradient_matches_finite_differences():
    """ Full pipeline: bilinear windows, positional embedding, encoder, loss """
    params = _small_model(seed=7, depth=2, width=16, heads=4, window=4, num_freqs=6, spread=0.2)
    rng = np.random.default_rng(8)
    eps = 1e-3
    size = 32
    for trial in range(100):
        image = Image(rng.uniform(size=(size, size, 3)))
        placements = _off_grid_placements(rng, 4, size, 4, eps)
        label = int(rng.integers(3))
        value, grad = encoder.position_gradient(params, image, placements, label)
        assert np.isclose(value, _position_loss(params, image, placements, label))
        numeric = np.zeros_like(grad)
        for j in range(placements.shape[0]):
            for axis in range(2):
                up = np.array(placements)
                down = np.array(placements)
                up[j, axis] += eps
                down[j, axis] -= eps
                numeric[j, axis] = (_position_loss(params, image, up, label) -
                                    _position_loss(params, image, down, label)) / (2 * eps)
        assert _relative_error(grad, numeric) <= 1e-4, trial


def test_position_gradient_embedding_path():
    params = _small_model(seed=9, width=16, heads=4, window=4, num_freqs=4)
    rng = np.random.default_rng(10)
    image = Image(rng.uniform(size=(16, 16, 3)))
    placements = _off_grid_placements(rng, 3, 16, 4, 1e-3)
    _, full = encoder.position_gradient(params, image, placements, 0)
    _, features_only = encoder.position_gradient(params, image, placements, 0, embedding_path=False)
    assert not np.allclose(full, features_only)


def test_stale_trace():
    params = _small_model()
    rng = np.random.default_rng(11)
    features = rng.uniform(size=(3, 12))
    pos = rng.normal(size=(3, 8))
    _, _, trace = encoder.forward(params, (features, pos), return_trace=True)
    encoder.backward_params(trace, 0)
    params.assign(params.as_dict())
    with pytest.raises(StaleTraceError) as excinfo:
        encoder.backward_params(trace, 0)
    assert _exception_message_starts_with(excinfo, "Stale trace")


def test_non_finite_parameters():
    params = _small_model()
    arrays = params.as_dict()
    bad = np.array(arrays['head_w'])
    bad[0, 0] = np.nan
    arrays['head_w'] = bad
    with pytest.raises(NumericalError):
        EncoderParams(params.config, params.tokenizer, arrays)


def test_weight_file_round_trip(tmpdir):
    params = _small_model(seed=12)
    path = str(tmpdir.join('model.sptc'))
    encoder.save_params(params, path)
    loaded = encoder.load_params(path)
    assert loaded.digest() == params.digest()
    assert loaded.config == params.config
    assert loaded.tokenizer == params.tokenizer
    with open(path, 'rb') as f:
        assert f.read(4) == b'SPTC'

    encoder.load_params(path, config=params.config, tokenizer=params.tokenizer)
    other = EncoderConfig(depth=1, width=8, heads=2, mlp_ratio=2, num_classes=3, token_feature_dim=12)
    with pytest.raises(ValueError) as excinfo:
        encoder.load_params(path, config=other)
    assert _exception_message_starts_with(excinfo, "Config mismatch")

    with open(path, 'rb') as f:
        raw = f.read()
    bad = str(tmpdir.join('bad.sptc'))
    with open(bad, 'wb') as f:
        f.write(b'XXXX' + raw[4:])
    with pytest.raises(DataFormatError) as excinfo:
        encoder.load_params(bad)
    assert _exception_message_starts_with(excinfo, "Bad magic in")
