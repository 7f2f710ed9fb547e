"""Pixel metrics for predicted frames and probes for disentanglement checks."""
import numpy as np

BCE_EPS = 1e-7


def frame_mse(pred, target):
    """Sum of squared pixel differences per frame, averaged over all frames.

    ``pred`` and ``target`` are shaped (..., C, H, W).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    per_frame = np.sum((pred - target) ** 2, axis=(-3, -2, -1))
    return float(np.mean(per_frame))


def frame_bce(pred, target, eps=BCE_EPS):
    """Binary cross-entropy per frame after mapping [-1, 1] to [0, 1], averaged over frames."""
    p = np.clip((np.asarray(pred, dtype=np.float64) + 1) / 2, eps, 1 - eps)
    y = (np.asarray(target, dtype=np.float64) + 1) / 2
    per_pixel = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    return float(np.mean(np.sum(per_pixel, axis=(-3, -2, -1))))


def centroids(frames):
    """Intensity-weighted centroid ``(x, y)`` of each frame, shape (..., 2).

    Intensities are shifted from [-1, 1] to [0, 1]; an empty frame maps to
    the frame centre.
    """
    f = (np.asarray(frames, dtype=np.float64) + 1) / 2
    f = f.sum(axis=-3)
    h, w = f.shape[-2:]
    mass = f.sum(axis=(-2, -1))
    ys, xs = np.mgrid[0:h, 0:w]
    safe = np.where(mass > 0, mass, 1.0)
    cx = np.where(mass > 0, (f * xs).sum(axis=(-2, -1)) / safe, (w - 1) / 2)
    cy = np.where(mass > 0, (f * ys).sum(axis=(-2, -1)) / safe, (h - 1) / 2)
    return np.stack([cx, cy], axis=-1)


def template_scores(frames, templates):
    """Best normalised cross-correlation of each frame with each template.

    ``frames`` is (..., 1, H, W) in [-1, 1]; ``templates`` is (K, s, s) of 0/1.
    Returns (..., K) scores in [-1, 1], maximised over all placements, so the
    score reflects shape and not position.
    """
    f = np.asarray(frames, dtype=np.float64)[..., 0, :, :]
    lead = f.shape[:-2]
    f = f.reshape((-1,) + f.shape[-2:])
    t = np.asarray(templates, dtype=np.float64)
    s = t.shape[-1]
    windows = np.lib.stride_tricks.sliding_window_view(f, (s, s), axis=(-2, -1))
    windows = windows.reshape(f.shape[0], -1, s * s)
    windows = windows - windows.mean(axis=-1, keepdims=True)
    wn = np.linalg.norm(windows, axis=-1)
    tc = t.reshape(t.shape[0], -1)
    tc = tc - tc.mean(axis=-1, keepdims=True)
    tc = tc / np.linalg.norm(tc, axis=-1, keepdims=True)
    corr = np.einsum("fpk,tk->fpt", windows, tc) / np.where(wn > 1e-12, wn, np.inf)[..., None]
    return corr.max(axis=1).reshape(lead + (t.shape[0],))


def linear_probe_accuracy(train_x, train_y, test_x, test_y, seed=0):
    """Held-out accuracy of a multinomial logistic-regression probe."""
    from sklearn.linear_model import LogisticRegression
    from sklearn.preprocessing import StandardScaler

    scaler = StandardScaler().fit(train_x)
    clf = LogisticRegression(max_iter=2000, random_state=seed)
    clf.fit(scaler.transform(train_x), train_y)
    return float(np.mean(clf.predict(scaler.transform(test_x)) == np.asarray(test_y)))


def swap_effects(recon_a, recon_b, swapped_a, templates):
    """How much a channel swap moved ``a`` towards ``b`` in trajectory and in shape.

    All inputs are decoded videos (N, n, 1, H, W). ``trajectory`` is the mean
    squared per-frame centroid change caused by the swap, divided by the mean
    squared centroid difference between the two reconstructions; ``shape``
    does the same with the per-sequence template-correlation signature (the
    frame-averaged :func:`template_scores`). Both ratios are unit-free: 0
    means untouched, 1 means as different as the other video.
    """

    def ratio(f):
        moved = np.mean(np.sum((f(swapped_a) - f(recon_a)) ** 2, axis=-1))
        apart = np.mean(np.sum((f(recon_b) - f(recon_a)) ** 2, axis=-1))
        return float(moved / apart) if apart > 0 else 0.0

    def signature(v):
        return template_scores(v, templates).mean(axis=-2)

    return {"trajectory": ratio(centroids), "shape": ratio(signature)}
