#
# Evaluation metrics
#
# Top-1 accuracy, a weighted kNN vote on class-token features, the saliency
# score of a token window, relative saliency gain along oracle trajectories,
# and the transfer delta between placements found by different models.
#

import logging

import numpy as np
from astropy.table import Table

from . import conf
from .accel_math import _float, _exp
from .imagery import DataFormatError, SaliencyMask
from .subpixel import extract_patches

_log = logging.getLogger('subtok')

__all__ = ['EvalReport', 'accuracy', 'knn_classify', 'knn_predict', 'saliency_score', 'saliency_scores',
           'rsg', 'aggregate_rsg', 'transfer_delta', 'summarize_reports', 'write_reports_csv']


def accuracy(predictions, labels):
    """ Fraction of exact matches between predictions and labels """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0:
        raise ValueError("accuracy requires at least one prediction")
    if predictions.shape != labels.shape:
        raise ValueError("accuracy requires equal-length predictions and labels, got {} and {}".format(
            predictions.size, labels.size))
    return float(np.mean(predictions == labels))


def per_class_accuracy(predictions, labels, num_classes):
    """ Accuracy restricted to each true class; NaN for classes that never occur """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    result = np.full(num_classes, np.nan)
    for c in range(num_classes):
        members = labels == c
        if members.any():
            result[c] = np.mean(predictions[members] == c)
    return result


###########################################################################
#
#    kNN
#

def _unit_rows(features, what):
    features = np.atleast_2d(np.asarray(features, dtype=_float()))
    norms = np.linalg.norm(features, axis=1)
    if np.any(norms == 0):
        raise ValueError("Zero-norm feature in {}: cosine similarity is undefined".format(what))
    return features / norms[:, np.newaxis]


def _top_k(similarity, k):
    """ Indices of the k largest similarities; equal values resolve to the lower index.

    This matches a full stable sort by descending similarity.
    """
    n = similarity.size
    if k >= n:
        return np.argsort(-similarity, kind='stable')[:k]
    threshold = np.partition(similarity, n - k)[n - k]
    above = np.flatnonzero(similarity > threshold)
    at = np.flatnonzero(similarity == threshold)[:k - above.size]
    chosen = np.sort(np.concatenate([above, at]))
    return chosen[np.argsort(-similarity[chosen], kind='stable')]


def _vote(similarity, train_labels, k, temperature, num_classes):
    nearest = _top_k(similarity, k)
    weights = _exp(similarity[nearest] / temperature)
    scores = np.bincount(train_labels[nearest], weights=weights, minlength=num_classes)
    # argmax returns the lowest class on ties
    return int(np.argmax(scores))


def knn_classify(train_features, train_labels, query_feature, k=None, temperature=None):
    """ Weighted kNN vote by cosine similarity

    The k training points most similar to the query each vote for their class
    with weight exp(similarity / temperature); the class with the largest total
    wins, ties going to the lowest class index.
    """
    k = conf.knn_k if k is None else int(k)
    temperature = conf.knn_temperature if temperature is None else float(temperature)
    train = _unit_rows(train_features, 'training set')
    train_labels = np.asarray(train_labels, dtype=np.intp)
    if train_labels.size != train.shape[0]:
        raise ValueError("Got {} labels for {} training features".format(train_labels.size, train.shape[0]))
    if not 1 <= k <= train.shape[0]:
        raise ValueError("kNN requires 1 <= k <= training size ({}), got k={}".format(train.shape[0], k))
    query = _unit_rows(query_feature, 'query')[0]
    return _vote(train @ query, train_labels, k, temperature, int(train_labels.max()) + 1)


def knn_predict(train_features, train_labels, query_features, k=None, temperature=None):
    """ knn_classify for every row of query_features; k is capped at the training size """
    train = _unit_rows(train_features, 'training set')
    train_labels = np.asarray(train_labels, dtype=np.intp)
    queries = _unit_rows(query_features, 'queries')
    k = min(conf.knn_k if k is None else int(k), train.shape[0])
    temperature = conf.knn_temperature if temperature is None else float(temperature)
    num_classes = int(train_labels.max()) + 1
    similarity = queries @ train.T
    return np.array([_vote(row, train_labels, k, temperature, num_classes) for row in similarity])


###########################################################################
#
#    Saliency
#

def _mask_array(mask):
    return mask.data if isinstance(mask, SaliencyMask) else np.asarray(mask, dtype=_float())


def saliency_scores(mask, placements, k):
    """ Mean of the k x k bilinear window of the mask at each placement """
    data = _mask_array(mask)
    return extract_patches(data, placements, k).mean(axis=1)


def saliency_score(mask, s, k):
    """ Mean mask value over the k x k token window centered at s

    Uses the same sampling as token extraction, so the score is bounded by the
    minimum and maximum of the mask.
    """
    return float(saliency_scores(mask, [s], k)[0])


def rsg(trajectory, mask, k, strict=True):
    """ Relative saliency gain of each token between the first and last row

    (score(final) - score(initial)) / score(initial), per token.

    Parameters
    ----------
    trajectory : Trajectory or ndarray, shape (steps+1, m, 2)
    mask : SaliencyMask
    k : int
        Window size.
    strict : bool
        If True, a token with zero initial score is an error. Otherwise its
        entry is NaN, to be excluded and tallied by aggregate_rsg.
    """
    positions = trajectory.positions if hasattr(trajectory, 'positions') else np.asarray(trajectory)
    data = _mask_array(mask)
    if positions.ndim != 3 or positions.shape[2] != 2:
        raise ValueError("rsg expects trajectory positions of shape (steps+1, m, 2)")
    start = saliency_scores(data, positions[0], k)
    end = saliency_scores(data, positions[-1], k)
    zero = start <= 0
    if zero.any() and strict:
        raise ValueError("Zero initial saliency score for {} token(s): relative gain undefined".format(
            int(zero.sum())))
    gains = np.full(start.shape, np.nan)
    gains[~zero] = (end[~zero] - start[~zero]) / start[~zero]
    return gains


def aggregate_rsg(per_image_gains):
    """ Token -> image -> dataset means of per-token gains

    Parameters
    ----------
    per_image_gains : sequence of ndarray
        Output of rsg(..., strict=False) for each image; NaN entries are
        excluded tokens.

    Returns
    -------
    dict with keys 'mean' (dataset mean of per-image means), 'image_means',
    'n_tokens', 'n_excluded', 'n_images' (images with at least one valid token).
    """
    image_means = []
    n_tokens = 0
    n_excluded = 0
    for gains in per_image_gains:
        gains = np.asarray(gains, dtype=_float())
        valid = np.isfinite(gains)
        n_tokens += gains.size
        n_excluded += int((~valid).sum())
        if valid.any():
            image_means.append(float(gains[valid].mean()))
    if n_excluded:
        _log.info("RSG: excluded {} of {} tokens with zero initial saliency".format(n_excluded, n_tokens))
    mean = float(np.mean(image_means)) if image_means else float('nan')
    return dict(mean=mean, image_means=np.array(image_means), n_tokens=n_tokens, n_excluded=n_excluded,
                n_images=len(image_means))


def transfer_delta(acc_original, acc_transfer):
    """ Accuracy change from transferring placements: acc_transfer - acc_original """
    return acc_transfer - acc_original


###########################################################################
#
#    Reports
#

class EvalReport(object):
    """ Result of evaluating one model with one placement recipe

    Parameters
    ----------
    top1, knn_top1 : float
        Fractions in [0, 1]. knn_top1 may be NaN when not computed.
    per_class : sequence of float
    n_images : int
    m : int
        Token budget.
    label : str
        Free-form description of the recipe (prior, oracle settings).
    extra : dict, optional
        Additional scalar fields (seed, transfer delta, ...).
    """

    _fields = ('label', 'm', 'n_images', 'top1', 'knn_top1')

    def __init__(self, top1, knn_top1, per_class, n_images, m, label='', extra=None):
        if int(n_images) < 1:
            raise ValueError("EvalReport requires n_images >= 1")
        for name, value in (('top1', top1), ('knn_top1', knn_top1)):
            if np.isfinite(value) and not 0 <= value <= 1:
                raise ValueError("EvalReport.{} must be a fraction in [0, 1], got {}".format(name, value))
        self.top1 = float(top1)
        self.knn_top1 = float(knn_top1)
        self.per_class = np.asarray(per_class, dtype=_float())
        self.n_images = int(n_images)
        self.m = int(m)
        self.label = str(label)
        self.extra = dict(extra or {})

    def row(self):
        """ Flat ordered mapping of every field to a scalar """
        values = dict(label=self.label, m=self.m, n_images=self.n_images, top1=self.top1, knn_top1=self.knn_top1)
        for c, acc in enumerate(self.per_class):
            values['class{}'.format(c)] = float(acc)
        for key in sorted(self.extra):
            values[key] = self.extra[key]
        return values

    def write_text(self, path):
        """ key=value lines """
        with open(path, 'w') as f:
            for key, value in self.row().items():
                f.write("{}={}\n".format(key, _format(value)))

    @classmethod
    def read_text(cls, path):
        values = {}
        with open(path) as f:
            for line in f:
                line = line.rstrip('\n')
                if not line:
                    continue
                if '=' not in line:
                    raise DataFormatError("Malformed report line in {}: {!r}".format(path, line))
                key, value = line.split('=', 1)
                values[key] = value
        classes = sorted((int(k[5:]), float(v)) for k, v in values.items()
                         if k.startswith('class') and k[5:].isdigit())
        extra = {k: _parse(v) for k, v in values.items()
                 if k not in cls._fields and not (k.startswith('class') and k[5:].isdigit())}
        return cls(float(values['top1']), float(values['knn_top1']), [v for _, v in classes],
                   int(values['n_images']), int(values['m']), values.get('label', ''), extra)

    def __repr__(self):
        return "EvalReport({0!r}, m={1}, top1={2:.4f}, knn={3:.4f}, n={4})".format(
            self.label, self.m, self.top1, self.knn_top1, self.n_images)


def _format(value):
    if isinstance(value, (float, np.floating)):
        return "{:.6f}".format(value)
    return str(value)


def _parse(text):
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def write_reports_csv(reports, path):
    """ One CSV row per report, columns in a fixed order """
    rows = [r.row() if isinstance(r, EvalReport) else dict(r) for r in reports]
    if not rows:
        raise ValueError("No reports to write")
    names = []
    for row in rows:
        for key in row:
            if key not in names:
                names.append(key)
    table = Table(rows=[[_format(row.get(n, '')) for n in names] for row in rows], names=names)
    table.write(path, format='ascii.csv', overwrite=True)
    return table


def summarize_reports(reports, label=None):
    """ Mean and spread (standard deviation) of top-1 and kNN accuracy over seeds """
    reports = list(reports)
    if not reports:
        raise ValueError("No reports to summarize")
    top1 = np.array([r.top1 for r in reports])
    knn = np.array([r.knn_top1 for r in reports])
    return dict(label=label if label is not None else reports[0].label, m=reports[0].m,
                n_seeds=len(reports), top1_mean=float(top1.mean()), top1_spread=float(top1.std()),
                knn_top1_mean=float(knn.mean()), knn_top1_spread=float(knn.std()))
