#
# Trajectory rendering
#
# Static SVG of oracle trajectories over the image raster, and a matplotlib
# counterpart for notebooks. Steps are colored along conf.cmap_trajectory,
# dark at the initial placement and bright at the final one.
#

import base64
import io
import logging

import matplotlib
import matplotlib.patches
import matplotlib.pyplot as plt
import numpy as np

from . import conf
from .imagery import Image

_log = logging.getLogger('subtok')

__all__ = ['render_trajectory_svg', 'trajectory_svg', 'display_trajectories', 'step_colors']

SVG_NAMESPACE = 'http://www.w3.org/2000/svg'
XLINK_NAMESPACE = 'http://www.w3.org/1999/xlink'


def _fmt(value):
    return "{:.4f}".format(value)


def _element(tag, **attrs):
    """ A self-closing SVG element; '__' in attribute names becomes ':' and '_' becomes '-' """
    text = " ".join('{}="{}"'.format(name.replace('__', ':').replace('_', '-'), value)
                    for name, value in attrs.items())
    return "<{} {}/>".format(tag, text)


def step_colors(n_steps, cmap=None):
    """ Hex colors for steps 0..n_steps along the trajectory colormap """
    cmap = matplotlib.colormaps[conf.cmap_trajectory if cmap is None else cmap]
    fractions = np.linspace(0, 1, n_steps + 1) if n_steps > 0 else np.zeros(1)
    return [matplotlib.colors.to_hex(cmap(f)) for f in fractions]


def _positions_array(positions):
    positions = positions.positions if hasattr(positions, 'positions') else positions
    positions = np.asarray(positions, dtype=float)
    if positions.ndim == 2:
        if positions.shape[1] % 2:
            raise ValueError("Trajectory rows must hold 2m columns, got {}".format(positions.shape[1]))
        positions = positions.reshape(positions.shape[0], -1, 2)
    if positions.ndim != 3 or positions.shape[2] != 2:
        raise ValueError("Trajectory positions must have shape (steps+1, m, 2)")
    return positions


def _png_data(image):
    data = image.data if isinstance(image, Image) else np.asarray(image, dtype=float)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    buffer = io.BytesIO()
    plt.imsave(buffer, np.clip(data, 0, 1), format='png', cmap='gray', vmin=0, vmax=1)
    return base64.b64encode(buffer.getvalue()).decode('ascii')


def trajectory_svg(positions, image, k):
    """ SVG text for trajectories over an image

    Parameters
    ----------
    positions : Trajectory or ndarray, shape (steps+1, m, 2) or (steps+1, 2m)
        Placements per step in pixel coordinates.
    image : Image or ndarray
    k : int
        Window side of the final token rectangles.

    Returns
    -------
    str
        A standalone SVG document in pixel coordinates: the embedded raster,
        one polyline per token, step-colored segments, start dots and the
        final k x k windows.
    """
    positions = _positions_array(positions)
    data = image.data if isinstance(image, Image) else np.asarray(image)
    height, width = data.shape[:2]
    if positions.size and (positions[..., 0].max() > width - 1 or positions[..., 1].max() > height - 1
                           or positions.min() < 0):
        raise ValueError("Trajectory leaves the {}x{} image".format(height, width))
    steps, m = positions.shape[0] - 1, positions.shape[1]
    colors = step_colors(steps)
    half = (k - 1) / 2.0

    lines = ['<?xml version="1.0" encoding="UTF-8"?>',
             '<svg xmlns="{}" xmlns:xlink="{}" width="{}" height="{}" viewBox="-0.5 -0.5 {} {}">'.format(
                 SVG_NAMESPACE, XLINK_NAMESPACE, width, height, width, height),
             _element('image', x='-0.5', y='-0.5', width=width, height=height,
                      preserveAspectRatio='none', style='image-rendering:pixelated',
                      xlink__href='data:image/png;base64,' + _png_data(image))]
    for j in range(m):
        track = positions[:, j, :]
        points = " ".join("{},{}".format(_fmt(x), _fmt(y)) for x, y in track)
        lines.append(_element('polyline', points=points, fill='none', stroke=colors[0], stroke_width='0.3',
                              stroke_opacity='0.5', id='token{}'.format(j)))
        for t in range(steps):
            lines.append(_element('line', x1=_fmt(track[t, 0]), y1=_fmt(track[t, 1]), x2=_fmt(track[t + 1, 0]),
                                  y2=_fmt(track[t + 1, 1]), stroke=colors[t + 1], stroke_width='0.6'))
        lines.append(_element('circle', cx=_fmt(track[0, 0]), cy=_fmt(track[0, 1]), r='0.8', fill=colors[0]))
        lines.append(_element('rect', x=_fmt(track[-1, 0] - half - 0.5), y=_fmt(track[-1, 1] - half - 0.5),
                              width=_fmt(k), height=_fmt(k), fill='none', stroke=colors[-1],
                              stroke_width='0.4'))
    lines.append('</svg>')
    return "\n".join(lines) + "\n"


def render_trajectory_svg(positions, image, k, path):
    """ Write trajectory_svg(positions, image, k) to path """
    text = trajectory_svg(positions, image, k)
    with open(path, 'w') as f:
        f.write(text)
    _log.info("Wrote trajectory rendering to {}".format(path))
    return path


def display_trajectories(positions, image, k=None, ax=None, title=None):
    """ Plot trajectories over an image with matplotlib

    Parameters
    ----------
    positions : Trajectory or ndarray, shape (steps+1, m, 2)
    image : Image or ndarray
    k : int, optional
        Window size for the final rectangles; conf.window by default.
    ax : matplotlib.Axes, optional
    title : str, optional

    Returns
    -------
    ax : matplotlib.Axes
    """
    positions = _positions_array(positions)
    k = conf.window if k is None else k
    data = image.data if isinstance(image, Image) else np.asarray(image)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    if ax is None:
        ax = plt.gca()
    ax.imshow(data, cmap='gray', vmin=0, vmax=1, interpolation='nearest')
    colors = step_colors(positions.shape[0] - 1)
    half = (k - 1) / 2.0
    for j in range(positions.shape[1]):
        track = positions[:, j, :]
        for t in range(track.shape[0] - 1):
            ax.plot(track[t:t + 2, 0], track[t:t + 2, 1], color=colors[t + 1], linewidth=1)
        ax.scatter(track[0, 0], track[0, 1], color=colors[0], s=6)
        ax.add_patch(matplotlib.patches.Rectangle((track[-1, 0] - half - 0.5, track[-1, 1] - half - 0.5), k, k,
                                                  fill=False, edgecolor=colors[-1], linewidth=0.8))
    if title is not None:
        ax.set_title(title)
    return ax
