#
# Image, mask and tensor containers with bit-exact file I/O
#
# Supported formats:
#   - binary PPM (P6) and PGM (P5) with maxval 255
#   - TensorFile: "SPTF" magic, u32 version, u32 dtype code (0 = float32,
#     1 = float64), u32 ndim, u32 dims, little-endian row-major payload
#

import logging

import numpy as np

from .accel_math import _float

_log = logging.getLogger('subtok')

__all__ = ['DataFormatError', 'Image', 'SaliencyMask', 'load_image', 'load_mask', 'save_ppm', 'save_pgm',
           'save_tensor', 'load_tensor', 'read_tensor_record', 'tensor_record_bytes']

TENSOR_MAGIC = b'SPTF'
TENSOR_VERSION = 1
_DTYPES = {0: np.dtype('<f4'), 1: np.dtype('<f8')}
_HEADER = np.dtype('<u4')


class DataFormatError(ValueError):
    """ Malformed, truncated or mismatched input data """
    pass


def _readonly(array):
    array = np.ascontiguousarray(array, dtype=_float())
    array.setflags(write=False)
    return array


def _from_levels(array):
    array = np.asarray(array)
    if array.dtype == np.uint8:
        return array.astype(_float()) / 255
    if array.dtype.kind not in 'biuf':
        raise ValueError("Array of dtype {} is not a real-valued raster".format(array.dtype))
    return array


class Image(object):
    """ An H x W x C grid of intensities in [0, 1]

    Parameters
    ----------
    data : ndarray
        Array of shape (H, W, C) with C in {1, 3}, or (H, W) for a single channel.
        Values must be finite and within [0, 1]; H and W at least 2.
    """

    def __init__(self, data):
        data = np.asarray(data, dtype=_float())
        if data.ndim == 2:
            data = data[:, :, np.newaxis]
        if data.ndim != 3:
            raise ValueError("Image data must have shape (H, W, C), got {}".format(data.shape))
        if data.shape[2] not in (1, 3):
            raise ValueError("Image must have 1 or 3 channels, got {}".format(data.shape[2]))
        if data.shape[0] < 2 or data.shape[1] < 2:
            raise ValueError("Image dimensions must be at least 2x2, got {}x{}".format(*data.shape[:2]))
        if not np.all(np.isfinite(data)):
            raise ValueError("Image values must be finite")
        if data.min() < 0 or data.max() > 1:
            raise ValueError("Image values must lie within [0, 1]")
        self._data = _readonly(data)

    @classmethod
    def from_array(cls, array):
        """ Build an Image from a float array in [0, 1] or an 8-bit array (scaled by 1/255) """
        return cls(_from_levels(array))

    @property
    def data(self):
        return self._data

    @property
    def height(self):
        return self._data.shape[0]

    @property
    def width(self):
        return self._data.shape[1]

    @property
    def channels(self):
        return self._data.shape[2]

    @property
    def shape(self):
        return self._data.shape

    def __repr__(self):
        return "Image({0}x{1}x{2})".format(self.height, self.width, self.channels)


class SaliencyMask(object):
    """ An H x W grid of saliency values in [0, 1] """

    def __init__(self, data):
        data = np.asarray(data, dtype=_float())
        if data.ndim == 3 and data.shape[2] == 1:
            data = data[:, :, 0]
        if data.ndim != 2:
            raise ValueError("Saliency mask must be 2-dimensional, got shape {}".format(data.shape))
        if not np.all(np.isfinite(data)):
            raise ValueError("Saliency mask values must be finite")
        if data.size and (data.min() < 0 or data.max() > 1):
            raise ValueError("Saliency mask values must lie within [0, 1]")
        self._data = _readonly(data)

    @classmethod
    def from_array(cls, array):
        """ Build a SaliencyMask from a float array in [0, 1] or an 8-bit array (scaled by 1/255) """
        return cls(_from_levels(array))

    @property
    def data(self):
        return self._data

    @property
    def height(self):
        return self._data.shape[0]

    @property
    def width(self):
        return self._data.shape[1]

    @property
    def shape(self):
        return self._data.shape

    def check_matches(self, image):
        """ Raise DataFormatError unless this mask has the same H, W as image """
        if (self.height, self.width) != (image.height, image.width):
            raise DataFormatError("Saliency mask dimensions {}x{} do not match image dimensions {}x{}".format(
                self.height, self.width, image.height, image.width))

    def __repr__(self):
        return "SaliencyMask({0}x{1})".format(self.height, self.width)


###########################################################################
#
#    Netpbm (P5 / P6)
#

def _parse_netpbm(raw, magic, path):
    """ Parse a binary netpbm header; returns (width, height, payload bytes) """
    if raw[:2] != magic:
        raise DataFormatError("Malformed header in {}: expected magic {!r}".format(path, magic.decode()))
    fields = []
    pos = 2
    n = len(raw)
    while len(fields) < 3:
        # whitespace and comments between header fields
        while pos < n and (raw[pos:pos + 1].isspace() or raw[pos:pos + 1] == b'#'):
            if raw[pos:pos + 1] == b'#':
                while pos < n and raw[pos:pos + 1] not in (b'\n', b'\r'):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and raw[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise DataFormatError("Malformed header in {}: expected an integer field".format(path))
        fields.append(int(raw[start:pos]))
    if pos >= n or not raw[pos:pos + 1].isspace():
        raise DataFormatError("Malformed header in {}: missing whitespace after maxval".format(path))
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise DataFormatError("Unsupported maxval {} in {}: only 255 is supported".format(maxval, path))
    if width < 2 or height < 2:
        raise DataFormatError("Image dimensions must be at least 2x2, got {}x{} in {}".format(width, height, path))
    return width, height, raw[pos:]


def _read_netpbm(path, magic, channels):
    with open(path, 'rb') as f:
        raw = f.read()
    width, height, payload = _parse_netpbm(raw, magic, path)
    expected = width * height * channels
    if len(payload) < expected:
        raise DataFormatError("Truncated payload in {}: expected {} bytes, found {}".format(
            path, expected, len(payload)))
    values = np.frombuffer(payload[:expected], dtype=np.uint8).astype(_float()) / 255.0
    return values.reshape(height, width, channels)


def _quantize(values):
    return np.round(np.asarray(values) * 255.0).astype(np.uint8)


def save_ppm(image, path):
    """ Write an Image as binary PPM (P6), quantizing each value to round(v*255).

    Single-channel images are replicated to RGB.
    """
    data = image.data
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    header = "P6\n{} {}\n255\n".format(image.width, image.height).encode('ascii')
    with open(path, 'wb') as f:
        f.write(header)
        f.write(_quantize(data).tobytes())


def save_pgm(mask, path):
    """ Write a SaliencyMask (or a single-channel Image) as binary PGM (P5) """
    data = mask.data
    if data.ndim == 3:
        if data.shape[2] != 1:
            raise ValueError("save_pgm requires a single-channel grid")
        data = data[:, :, 0]
    header = "P5\n{} {}\n255\n".format(data.shape[1], data.shape[0]).encode('ascii')
    with open(path, 'wb') as f:
        f.write(header)
        f.write(_quantize(data).tobytes())


###########################################################################
#
#    TensorFile
#

def tensor_record_bytes(dims, values, dtype=1):
    """ Serialize one TensorFile record to bytes.

    Parameters
    ----------
    dims : sequence of int
        Nonempty list of dimensions.
    values : array_like
        Values in row-major order; reshaped to dims.
    dtype : int
        0 for 32-bit float payload, 1 for 64-bit float payload.
    """
    dims = [int(d) for d in dims]
    if len(dims) == 0:
        raise ValueError("Tensor dims must be nonempty")
    if any(d < 0 for d in dims):
        raise ValueError("Tensor dims must be nonnegative, got {}".format(dims))
    if dtype not in _DTYPES:
        raise ValueError("Tensor dtype code must be 0 (float32) or 1 (float64), got {}".format(dtype))
    values = np.asarray(values, dtype=_float()).ravel()
    if values.size != int(np.prod(dims)):
        raise ValueError("Tensor has {} values but dims {} require {}".format(
            values.size, dims, int(np.prod(dims))))
    if not np.all(np.isfinite(values)):
        raise ValueError("Tensor values must be finite")
    header = np.array([TENSOR_VERSION, dtype, len(dims)] + dims, dtype=_HEADER)
    return TENSOR_MAGIC + header.tobytes() + values.astype(_DTYPES[dtype]).tobytes()


def read_tensor_record(buffer, offset=0, source='<buffer>'):
    """ Parse one TensorFile record starting at offset.

    Returns
    -------
    dims : list of int
    values : ndarray
        Row-major values, shaped to dims, as float64.
    dtype : int
        The stored dtype code.
    end : int
        Offset of the first byte after the record.
    """
    if buffer[offset:offset + 4] != TENSOR_MAGIC:
        raise DataFormatError("Bad magic in {}: not a TensorFile".format(source))
    pos = offset + 4
    if len(buffer) < pos + 12:
        raise DataFormatError("Truncated TensorFile header in {}".format(source))
    version, dtype, ndim = np.frombuffer(buffer, dtype=_HEADER, count=3, offset=pos)
    pos += 12
    if version != TENSOR_VERSION:
        raise DataFormatError("Unsupported TensorFile version {} in {}".format(version, source))
    if dtype not in _DTYPES:
        raise DataFormatError("Unknown TensorFile dtype code {} in {}".format(dtype, source))
    if ndim < 1:
        raise DataFormatError("TensorFile in {} has no dimensions".format(source))
    if len(buffer) < pos + 4 * ndim:
        raise DataFormatError("Truncated TensorFile header in {}".format(source))
    dims = [int(d) for d in np.frombuffer(buffer, dtype=_HEADER, count=int(ndim), offset=pos)]
    pos += 4 * int(ndim)
    count = int(np.prod(dims))
    width = _DTYPES[int(dtype)].itemsize
    if len(buffer) < pos + count * width:
        raise DataFormatError("Truncated TensorFile payload in {}: expected {} bytes, found {}".format(
            source, count * width, len(buffer) - pos))
    values = np.frombuffer(buffer, dtype=_DTYPES[int(dtype)], count=count, offset=pos)
    values = values.astype(_float()).reshape(dims)
    return dims, values, int(dtype), pos + count * width


def save_tensor(dims, values, dtype, path):
    """ Write a single tensor to path in TensorFile format. """
    with open(path, 'wb') as f:
        f.write(tensor_record_bytes(dims, values, dtype))


def load_tensor(path):
    """ Read a TensorFile; returns (dims, values) with values shaped to dims. """
    with open(path, 'rb') as f:
        raw = f.read()
    dims, values, _, end = read_tensor_record(raw, 0, source=path)
    if end != len(raw):
        raise DataFormatError("Trailing bytes after TensorFile payload in {}".format(path))
    return dims, values


###########################################################################
#
#    Loaders
#

def load_image(path):
    """ Load an Image from a binary PPM (P6) or a 3-dimensional TensorFile.

    PPM bytes b map to b/255.
    """
    with open(path, 'rb') as f:
        magic = f.read(4)
    if magic[:2] == b'P6':
        return Image(_read_netpbm(path, b'P6', 3))
    elif magic == TENSOR_MAGIC:
        dims, values = load_tensor(path)
        if len(dims) != 3:
            raise DataFormatError("TensorFile {} is not an image: expected 3 dims, got {}".format(path, len(dims)))
        try:
            return Image(values)
        except ValueError as err:
            raise DataFormatError("Invalid image in {}: {}".format(path, err))
    else:
        raise DataFormatError("Malformed header in {}: neither PPM (P6) nor TensorFile".format(path))


def load_mask(path):
    """ Load a SaliencyMask from a binary PGM (P5) or a 2-dimensional TensorFile.

    PGM bytes b map to b/255. Dimension agreement with an image is checked by
    the caller, see `SaliencyMask.check_matches`.
    """
    with open(path, 'rb') as f:
        magic = f.read(4)
    if magic[:2] == b'P5':
        return SaliencyMask(_read_netpbm(path, b'P5', 1)[:, :, 0])
    elif magic == TENSOR_MAGIC:
        dims, values = load_tensor(path)
        if len(dims) != 2:
            raise DataFormatError("TensorFile {} is not a mask: expected 2 dims, got {}".format(path, len(dims)))
        try:
            return SaliencyMask(values)
        except ValueError as err:
            raise DataFormatError("Invalid mask in {}: {}".format(path, err))
    else:
        raise DataFormatError("Malformed header in {}: neither PGM (P5) nor TensorFile".format(path))
