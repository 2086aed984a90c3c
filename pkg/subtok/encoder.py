#
# Toy transformer classifier with explicit forward and reverse passes
#
# Pre-norm blocks (attention + GELU MLP), a learned class token prepended to
# the token sequence, a final norm on the class token and a linear head.
# The reverse pass is written out by hand and yields gradients with respect
# to the parameters (training) and to the token inputs (placement search).
#
# Arrays are batched internally as (B, N, d); single-image entry points wrap
# the batched code with B = 1.
#

import collections
import hashlib
import json
import logging

import numpy as np
import scipy.special

from . import conf
from .accel_math import _float, _exp, _softmax
from .imagery import DataFormatError, read_tensor_record, tensor_record_bytes
from .subpixel import Token, TokenizerConfig, tokenize_arrays
from .utils import make_rng

_log = logging.getLogger('subtok')

__all__ = ['NumericalError', 'StaleTraceError', 'EncoderConfig', 'EncoderParams', 'ForwardTrace',
           'init_params', 'forward', 'forward_batch', 'loss', 'backward_params', 'backward_tokens',
           'backward_batch', 'position_gradient', 'save_params', 'load_params']

LAYERNORM_EPS = 1e-6
PARAMS_MAGIC = b'SPTC'
PARAMS_VERSION = 1


class NumericalError(RuntimeError):
    """ A loss or gradient became non-finite """
    pass


class StaleTraceError(RuntimeError):
    """ A reverse pass was requested on a trace whose parameters have since been updated """
    pass


class EncoderConfig(object):
    """ Shape of the toy transformer classifier

    Parameters
    ----------
    depth : int
        Number of transformer blocks L.
    width : int
        Token width d; must be divisible by heads.
    heads : int
    mlp_ratio : int
        MLP hidden width as a multiple of d.
    num_classes : int
    token_feature_dim : int
        Length k*k*C of the token feature vectors.
    label_smoothing : float
        Cross-entropy label smoothing in [0, 1).
    """

    def __init__(self, depth=None, width=None, heads=None, mlp_ratio=None, num_classes=None,
                 token_feature_dim=None, label_smoothing=0.0):
        self.depth = int(conf.depth if depth is None else depth)
        self.width = int(conf.embed_dim if width is None else width)
        self.heads = int(conf.heads if heads is None else heads)
        self.mlp_ratio = int(conf.mlp_ratio if mlp_ratio is None else mlp_ratio)
        self.num_classes = int(conf.num_classes if num_classes is None else num_classes)
        self.token_feature_dim = int(conf.window ** 2 * 3 if token_feature_dim is None else token_feature_dim)
        self.label_smoothing = float(label_smoothing)
        for name in ('depth', 'width', 'heads', 'mlp_ratio', 'num_classes', 'token_feature_dim'):
            if getattr(self, name) < 1:
                raise ValueError("EncoderConfig.{} must be at least 1, got {}".format(name, getattr(self, name)))
        if self.width % self.heads != 0:
            raise ValueError("EncoderConfig.width ({}) must be divisible by heads ({})".format(
                self.width, self.heads))
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("EncoderConfig.label_smoothing must lie in [0, 1)")

    @property
    def head_dim(self):
        return self.width // self.heads

    @property
    def hidden(self):
        return self.width * self.mlp_ratio

    def param_shapes(self):
        """ Ordered mapping of parameter name to shape """
        d, hid = self.width, self.hidden
        shapes = collections.OrderedDict()
        shapes['patch_w'] = (self.token_feature_dim, d)
        shapes['patch_b'] = (d,)
        shapes['cls'] = (d,)
        for layer in range(self.depth):
            pre = 'blocks.{}.'.format(layer)
            shapes[pre + 'ln1_g'] = (d,)
            shapes[pre + 'ln1_b'] = (d,)
            shapes[pre + 'qkv_w'] = (d, 3 * d)
            shapes[pre + 'qkv_b'] = (3 * d,)
            shapes[pre + 'proj_w'] = (d, d)
            shapes[pre + 'proj_b'] = (d,)
            shapes[pre + 'ln2_g'] = (d,)
            shapes[pre + 'ln2_b'] = (d,)
            shapes[pre + 'fc1_w'] = (d, hid)
            shapes[pre + 'fc1_b'] = (hid,)
            shapes[pre + 'fc2_w'] = (hid, d)
            shapes[pre + 'fc2_b'] = (d,)
        shapes['norm_g'] = (d,)
        shapes['norm_b'] = (d,)
        shapes['head_w'] = (d, self.num_classes)
        shapes['head_b'] = (self.num_classes,)
        return shapes

    def as_dict(self):
        return dict(depth=self.depth, width=self.width, heads=self.heads, mlp_ratio=self.mlp_ratio,
                    num_classes=self.num_classes, token_feature_dim=self.token_feature_dim,
                    label_smoothing=self.label_smoothing)

    def __eq__(self, other):
        return isinstance(other, EncoderConfig) and self.as_dict() == other.as_dict()

    def __repr__(self):
        return "EncoderConfig({})".format(", ".join("{}={}".format(k, v) for k, v in self.as_dict().items()))


def _frozen(array):
    array = np.array(array, dtype=_float())
    array.setflags(write=False)
    return array


class EncoderParams(object):
    """ All weights of the classifier, together with the configs they were built for

    Individual arrays are read-only. An optimizer step goes through `assign`,
    which swaps in new arrays and increments `generation`; traces recorded
    under an older generation can then no longer be back-propagated.
    """

    def __init__(self, config, tokenizer, arrays):
        if tokenizer.embed_dim != config.width:
            raise ValueError("Tokenizer embed_dim ({}) must equal encoder width ({})".format(
                tokenizer.embed_dim, config.width))
        self.config = config
        self.tokenizer = tokenizer
        self.generation = 0
        self._arrays = collections.OrderedDict()
        self._set(arrays)

    def _set(self, arrays):
        shapes = self.config.param_shapes()
        missing = set(shapes) - set(arrays)
        extra = set(arrays) - set(shapes)
        if missing or extra:
            raise ValueError("Parameter names do not match config: missing {}, unexpected {}".format(
                sorted(missing), sorted(extra)))
        new = collections.OrderedDict()
        for name, shape in shapes.items():
            value = np.asarray(arrays[name])
            if value.shape != shape:
                raise ValueError("Parameter {} has shape {}, config requires {}".format(name, value.shape, shape))
            if not np.all(np.isfinite(value)):
                raise NumericalError("Parameter {} contains non-finite values".format(name))
            new[name] = value if (value.dtype == _float() and not value.flags.writeable) else _frozen(value)
        self._arrays = new

    @classmethod
    def zeros(cls, config, tokenizer):
        """ All-zero weights with unit norm scales """
        arrays = {name: (np.ones(shape) if name.endswith('_g') else np.zeros(shape))
                  for name, shape in config.param_shapes().items()}
        return cls(config, tokenizer, arrays)

    def __getitem__(self, name):
        return self._arrays[name]

    def __contains__(self, name):
        return name in self._arrays

    def names(self):
        return list(self._arrays.keys())

    def items(self):
        return self._arrays.items()

    def as_dict(self):
        return collections.OrderedDict(self._arrays)

    @property
    def size(self):
        return int(sum(a.size for a in self._arrays.values()))

    def assign(self, arrays):
        """ Replace the weights (optimizer update); invalidates earlier traces """
        self._set(arrays)
        self.generation += 1

    def copy(self):
        return EncoderParams(self.config, self.tokenizer, self._arrays)

    def digest(self):
        """ sha256 over parameter names, shapes and bytes """
        sha = hashlib.sha256()
        for name, value in self._arrays.items():
            sha.update(name.encode('utf-8'))
            sha.update(np.asarray(value.shape, dtype='<u4').tobytes())
            sha.update(value.astype('<f8').tobytes())
        return sha.hexdigest()

    def __repr__(self):
        return "EncoderParams({} values, generation {})".format(self.size, self.generation)


def init_params(config, tokenizer, seed=0):
    """ Seeded initial weights

    Matrices are drawn from a normal with std 0.02 truncated at two standard
    deviations (the patch projection uses a Glorot-uniform range instead),
    biases start at zero and norm scales at one.
    """
    rng = make_rng(seed, stream=2)
    arrays = {}
    for name, shape in config.param_shapes().items():
        short = name.split('.')[-1]
        if short.endswith('_g'):
            arrays[name] = np.ones(shape)
        elif short.endswith('_b'):
            arrays[name] = np.zeros(shape)
        elif name == 'patch_w':
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            arrays[name] = rng.uniform(-limit, limit, size=shape)
        else:
            arrays[name] = np.clip(rng.normal(0.0, 0.02, size=shape), -0.04, 0.04)
    return EncoderParams(config, tokenizer, arrays)


###########################################################################
#
#    Building blocks
#

def _layernorm(x, gain, shift):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    inv = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + LAYERNORM_EPS)
    xhat = centered * inv
    return xhat * gain + shift, (xhat, inv)


def _layernorm_backward(dy, cache, gain):
    xhat, inv = cache
    axes = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=axes)
    dshift = dy.sum(axis=axes)
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dshift


def _gelu(z):
    return 0.5 * z * (1.0 + scipy.special.erf(z / np.sqrt(2.0)))


def _gelu_grad(z):
    return 0.5 * (1.0 + scipy.special.erf(z / np.sqrt(2.0))) + z * _exp(-0.5 * z * z) / np.sqrt(2 * np.pi)


def _split_heads(t, heads):
    batch, n, d = t.shape
    return t.reshape(batch, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(t):
    batch, heads, n, dh = t.shape
    return t.transpose(0, 2, 1, 3).reshape(batch, n, heads * dh)


def _flat(t):
    return t.reshape(-1, t.shape[-1])


###########################################################################
#
#    Forward
#

class ForwardTrace(object):
    """ Activations of one (batched) forward call, kept for the reverse pass """

    def __init__(self, params, features, pos, blocks, final, logits, cls_feature):
        self.params = params
        self.generation = params.generation
        self.features = features
        self.pos = pos
        self.blocks = blocks
        self.final = final
        self.logits = logits
        self.cls_feature = cls_feature

    @property
    def batch_size(self):
        return self.features.shape[0]

    @property
    def num_tokens(self):
        return self.features.shape[1]

    def check_current(self):
        if self.params.generation != self.generation:
            raise StaleTraceError("Stale trace: parameters were updated (generation {} -> {}) after the "
                                  "forward pass".format(self.generation, self.params.generation))


def _token_arrays(params, tokens):
    """ Accept a list of Tokens or a (features, pos) pair; returns (1, m, D), (1, m, d) arrays """
    if isinstance(tokens, tuple) and len(tokens) == 2 and not isinstance(tokens[0], Token):
        features, pos = (np.asarray(t, dtype=_float()) for t in tokens)
    else:
        tokens = list(tokens)
        if len(tokens) == 0:
            raise ValueError("forward requires at least one token")
        features = np.stack([t.features for t in tokens])
        pos = np.stack([t.pos_embedding for t in tokens])
    return features[np.newaxis], pos[np.newaxis]


def forward_batch(params, features, pos):
    """ Forward pass over a batch of images with equal token counts

    Parameters
    ----------
    params : EncoderParams
    features : ndarray, shape (B, m, D)
    pos : ndarray, shape (B, m, d)

    Returns
    -------
    trace : ForwardTrace
        trace.logits has shape (B, C) and trace.cls_feature (B, d).
    """
    cfg = params.config
    features = np.asarray(features, dtype=_float())
    pos = np.asarray(pos, dtype=_float())
    if features.ndim != 3 or pos.ndim != 3:
        raise ValueError("forward_batch expects (B, m, D) features and (B, m, d) embeddings")
    batch, m, dim = features.shape
    if m < 1:
        raise ValueError("forward requires at least one token")
    if dim != cfg.token_feature_dim:
        raise ValueError("Token feature length {} does not match config token_feature_dim {}".format(
            dim, cfg.token_feature_dim))
    if pos.shape != (batch, m, cfg.width):
        raise ValueError("Positional embeddings have shape {}, expected {}".format(pos.shape, (batch, m, cfg.width)))

    scale = 1.0 / np.sqrt(cfg.head_dim)
    emb = features @ params['patch_w'] + params['patch_b'] + pos
    cls = np.broadcast_to(params['cls'], (batch, 1, cfg.width))
    x = np.concatenate([cls, emb], axis=1)

    blocks = []
    for layer in range(cfg.depth):
        pre = 'blocks.{}.'.format(layer)
        h1, ln1 = _layernorm(x, params[pre + 'ln1_g'], params[pre + 'ln1_b'])
        qkv = h1 @ params[pre + 'qkv_w'] + params[pre + 'qkv_b']
        q, k, v = (_split_heads(t, cfg.heads) for t in np.split(qkv, 3, axis=-1))
        attn = _softmax((q @ k.swapaxes(-1, -2)) * scale, axis=-1)
        o = _merge_heads(attn @ v)
        x = x + o @ params[pre + 'proj_w'] + params[pre + 'proj_b']

        h2, ln2 = _layernorm(x, params[pre + 'ln2_g'], params[pre + 'ln2_b'])
        z = h2 @ params[pre + 'fc1_w'] + params[pre + 'fc1_b']
        a = _gelu(z)
        x = x + a @ params[pre + 'fc2_w'] + params[pre + 'fc2_b']
        blocks.append(dict(h1=h1, ln1=ln1, q=q, k=k, v=v, attn=attn, o=o, h2=h2, ln2=ln2, z=z, a=a))

    y, lnf = _layernorm(x[:, 0], params['norm_g'], params['norm_b'])
    logits = y @ params['head_w'] + params['head_b']
    return ForwardTrace(params, features, pos, blocks, dict(y=y, ln=lnf, n_tokens=x.shape[1]), logits, y)


def forward(params, tokens, return_trace=False):
    """ Classify one image from its tokens

    Parameters
    ----------
    params : EncoderParams
    tokens : list of Token, or (features (m, D), pos (m, d)) arrays
    return_trace : bool
        Also return the ForwardTrace needed by the reverse passes.

    Returns
    -------
    logits : ndarray, shape (C,)
    cls_feature : ndarray, shape (d,)
        Normalized final class-token state.
    trace : ForwardTrace, optional
    """
    features, pos = _token_arrays(params, tokens)
    trace = forward_batch(params, features, pos)
    if return_trace:
        return trace.logits[0], trace.cls_feature[0], trace
    return trace.logits[0], trace.cls_feature[0]


###########################################################################
#
#    Loss
#

def _targets(labels, num_classes, smoothing):
    labels = np.atleast_1d(np.asarray(labels))
    if labels.dtype.kind not in 'iu' or np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValueError("Invalid label: labels must be integers in [0, {})".format(num_classes))
    targets = np.full((labels.size, num_classes), smoothing / num_classes, dtype=_float())
    targets[np.arange(labels.size), labels] += 1.0 - smoothing
    return targets


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(_exp(shifted).sum(axis=-1, keepdims=True))


def loss(logits, label, smoothing=0.0):
    """ Cross-entropy of one logit vector against an integer label, with optional label smoothing """
    logits = np.asarray(logits, dtype=_float())
    targets = _targets(label, logits.shape[-1], smoothing)[0]
    return float(-(targets * _log_softmax(logits)).sum())


def _batch_loss(logits, labels, smoothing):
    """ Mean cross-entropy over the batch and its gradient with respect to the logits """
    targets = _targets(labels, logits.shape[-1], smoothing)
    if targets.shape[0] != logits.shape[0]:
        raise ValueError("Got {} labels for a batch of {}".format(targets.shape[0], logits.shape[0]))
    logp = _log_softmax(logits)
    value = float(-(targets * logp).sum(axis=-1).mean())
    dlogits = (np.exp(logp) - targets) / logits.shape[0]
    return value, dlogits


###########################################################################
#
#    Reverse pass
#

def backward_batch(trace, labels, need_params=True):
    """ Reverse pass of a batched forward call

    Returns
    -------
    loss_value : float
        Mean cross-entropy over the batch.
    grads : OrderedDict or None
        Gradient for every parameter (None if need_params is False).
    dfeatures : ndarray, shape (B, m, D)
    dpos : ndarray, shape (B, m, d)
    """
    trace.check_current()
    params = trace.params
    cfg = params.config
    scale = 1.0 / np.sqrt(cfg.head_dim)
    value, dlogits = _batch_loss(trace.logits, labels, cfg.label_smoothing)
    if not np.isfinite(value):
        raise NumericalError("Non-finite loss {} in reverse pass".format(value))

    grads = collections.OrderedDict() if need_params else None

    def acc(name, g):
        if need_params:
            grads[name] = g

    y = trace.final['y']
    acc('head_w', y.T @ dlogits)
    acc('head_b', dlogits.sum(axis=0))
    dy = dlogits @ params['head_w'].T
    dcls, dg, db = _layernorm_backward(dy, trace.final['ln'], params['norm_g'])
    acc('norm_g', dg)
    acc('norm_b', db)

    batch = trace.batch_size
    dx = np.zeros((batch, trace.final['n_tokens'], cfg.width), dtype=_float())
    dx[:, 0] = dcls

    block_grads = []
    for layer in reversed(range(cfg.depth)):
        pre = 'blocks.{}.'.format(layer)
        c = trace.blocks[layer]
        g = {}

        # MLP branch
        g['fc2_w'] = _flat(c['a']).T @ _flat(dx)
        g['fc2_b'] = dx.sum(axis=(0, 1))
        dz = (dx @ params[pre + 'fc2_w'].T) * _gelu_grad(c['z'])
        g['fc1_w'] = _flat(c['h2']).T @ _flat(dz)
        g['fc1_b'] = dz.sum(axis=(0, 1))
        dh2 = dz @ params[pre + 'fc1_w'].T
        dln, g['ln2_g'], g['ln2_b'] = _layernorm_backward(dh2, c['ln2'], params[pre + 'ln2_g'])
        dx = dx + dln

        # attention branch
        g['proj_w'] = _flat(c['o']).T @ _flat(dx)
        g['proj_b'] = dx.sum(axis=(0, 1))
        do = _split_heads(dx @ params[pre + 'proj_w'].T, cfg.heads)
        attn = c['attn']
        dattn = do @ c['v'].swapaxes(-1, -2)
        dv = attn.swapaxes(-1, -2) @ do
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dq = (dscores @ c['k']) * scale
        dk = (dscores.swapaxes(-1, -2) @ c['q']) * scale
        dqkv = np.concatenate([_merge_heads(dq), _merge_heads(dk), _merge_heads(dv)], axis=-1)
        g['qkv_w'] = _flat(c['h1']).T @ _flat(dqkv)
        g['qkv_b'] = dqkv.sum(axis=(0, 1))
        dh1 = dqkv @ params[pre + 'qkv_w'].T
        dln, g['ln1_g'], g['ln1_b'] = _layernorm_backward(dh1, c['ln1'], params[pre + 'ln1_g'])
        dx = dx + dln
        block_grads.append((pre, g))

    acc('cls', dx[:, 0].sum(axis=0))
    dpos = dx[:, 1:]
    acc('patch_w', _flat(trace.features).T @ _flat(dpos))
    acc('patch_b', dpos.sum(axis=(0, 1)))
    dfeatures = dpos @ params['patch_w'].T

    if need_params:
        for pre, g in block_grads:
            for short, value_ in g.items():
                grads[pre + short] = value_
        grads = collections.OrderedDict((name, grads[name]) for name in params.names())
    return value, grads, dfeatures, np.array(dpos)


def backward_params(trace, label):
    """ Exact gradient of the loss with respect to every parameter

    Returns an OrderedDict keyed like the parameters. Raises StaleTraceError
    if the parameters were updated after the forward pass.
    """
    return backward_batch(trace, np.atleast_1d(label))[1]


def backward_tokens(trace, label):
    """ Gradient of the loss with respect to each token's features and positional embedding

    Returns
    -------
    dfeatures : ndarray, shape (m, D)
    dpos : ndarray, shape (m, d)
    """
    _, _, dfeatures, dpos = backward_batch(trace, np.atleast_1d(label), need_params=False)
    return dfeatures[0], dpos[0]


def position_gradient(params, image, placements, label, tokcfg=None, embedding_path=True):
    """ Loss at the given placements and its gradient with respect to them

    The gradient flows through both token inputs: the window features (via the
    bilinear patch Jacobian) and the positional embedding (via its analytic
    Jacobian). The parameters are only read.

    Parameters
    ----------
    params : EncoderParams
    image : Image
    placements : PlacementSet or array_like, shape (m, 2)
    label : int
    tokcfg : TokenizerConfig, optional
        Defaults to the tokenizer stored with params.
    embedding_path : bool
        Include the positional embedding path (False is a test hook).

    Returns
    -------
    loss_value : float
    grad : ndarray, shape (m, 2)
        dL/dx and dL/dy per placement, in pixel units.
    """
    tokcfg = params.tokenizer if tokcfg is None else tokcfg
    features, pos, jf, jp = tokenize_arrays(image, placements, tokcfg, with_jacobians=True)
    if features.shape[0] == 0:
        raise ValueError("position_gradient requires at least one placement")
    trace = forward_batch(params, features[np.newaxis], pos[np.newaxis])
    value, _, dfeatures, dpos = backward_batch(trace, np.atleast_1d(label), need_params=False)
    grad = np.einsum('md,mdk->mk', dfeatures[0], jf)
    if embedding_path:
        grad = grad + np.einsum('md,mdk->mk', dpos[0], jp)
    if not np.all(np.isfinite(grad)):
        raise NumericalError("Non-finite position gradient (loss {})".format(value))
    return value, grad


###########################################################################
#
#    Weight files
#

def save_params(params, path):
    """ Write parameters and both configs to a weight file

    Layout: "SPTC" magic, u32 version, u32 manifest length, UTF-8 JSON
    manifest (configs plus name/dims/offset of every tensor), then one
    float64 TensorFile record with all parameters concatenated.
    """
    tensors = []
    offset = 0
    for name, value in params.items():
        tensors.append(dict(name=name, dims=list(value.shape), offset=offset))
        offset += value.size
    manifest = dict(encoder=params.config.as_dict(), tokenizer=params.tokenizer.as_dict(), tensors=tensors)
    blob = json.dumps(manifest, sort_keys=True).encode('utf-8')
    payload = np.concatenate([value.ravel() for _, value in params.items()])
    with open(path, 'wb') as f:
        f.write(PARAMS_MAGIC)
        f.write(np.array([PARAMS_VERSION, len(blob)], dtype='<u4').tobytes())
        f.write(blob)
        f.write(tensor_record_bytes([payload.size], payload, dtype=1))


def load_params(path, config=None, tokenizer=None):
    """ Read a weight file written by save_params

    If config or tokenizer is given, it must equal the stored one.
    """
    with open(path, 'rb') as f:
        raw = f.read()
    if raw[:4] != PARAMS_MAGIC:
        raise DataFormatError("Bad magic in {}: not a weight file".format(path))
    if len(raw) < 12:
        raise DataFormatError("Truncated weight file {}".format(path))
    version, length = np.frombuffer(raw, dtype='<u4', count=2, offset=4)
    if version != PARAMS_VERSION:
        raise DataFormatError("Unsupported weight file version {} in {}".format(version, path))
    try:
        manifest = json.loads(raw[12:12 + int(length)].decode('utf-8'))
    except ValueError as err:
        raise DataFormatError("Corrupt manifest in weight file {}: {}".format(path, err))
    stored_config = EncoderConfig(**manifest['encoder'])
    stored_tokenizer = TokenizerConfig(**manifest['tokenizer'])
    if config is not None and config != stored_config:
        raise ValueError("Config mismatch: {} stores {}, expected {}".format(path, stored_config, config))
    if tokenizer is not None and tokenizer != stored_tokenizer:
        raise ValueError("Config mismatch: {} stores {}, expected {}".format(path, stored_tokenizer, tokenizer))
    _, payload, _, end = read_tensor_record(raw, 12 + int(length), source=path)
    if end != len(raw):
        raise DataFormatError("Trailing bytes after weight payload in {}".format(path))
    arrays = {}
    for entry in manifest['tensors']:
        size = int(np.prod(entry['dims']))
        start = entry['offset']
        if start + size > payload.size:
            raise DataFormatError("Tensor {} runs past the end of the payload in {}".format(entry['name'], path))
        arrays[entry['name']] = payload[start:start + size].reshape(entry['dims'])
    return EncoderParams(stored_config, stored_tokenizer, arrays)
