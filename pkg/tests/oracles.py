"""Independent reference implementations.

Written as plain scalar loops from the textual definitions, without importing
the package, so they can check the vectorized code.
"""
import math

import numpy as np


def camera_ce(probs, true_class, eps=1e-12):
    return -math.log(max(float(probs[true_class]), eps))


def detection_ce(p, w, eps=1e-12):
    total = 0.0
    for n in range(2):
        total -= w[n] * math.log(max(float(p[n]), eps))
    return total


def localization_bce(q, z, eps=1e-12):
    total = 0.0
    for qk, zk in zip(q, z):
        total -= zk * math.log(max(qk, eps)) + (1 - zk) * math.log(max(1 - qk, eps))
    return total


def joint(ld, ll, alpha=0.4):
    return alpha * ld + (1 - alpha) * ll


def block_fractions(mask, block):
    """Tampered fraction per block over a grid padded with pristine pixels."""
    h, w = mask.shape
    rows, cols = -(-h // block), -(-w // block)
    out = []
    for r in range(rows):
        for c in range(cols):
            count = 0
            for y in range(r * block, min((r + 1) * block, h)):
                for x in range(c * block, min((c + 1) * block, w)):
                    count += mask[y, x] == 1
            out.append(count / (block * block))
    return out


def scan_threshold(q, bins=256, fallback=0.5):
    """Exhaustive bin scan for the first valley right of the first peak.

    A bin is a peak (valley) when the nearest differing bin on each side is
    lower (higher); a side with no differing bin counts as lower for peaks and
    disqualifies valleys. Plateaus are represented by their lowest bin.
    """
    hist = [0] * bins
    for v in q:
        hist[min(int(v * bins), bins - 1)] += 1

    def neighbours(i):
        left = i - 1
        while left >= 0 and hist[left] == hist[i]:
            left -= 1
        right = i + 1
        while right < bins and hist[right] == hist[i]:
            right += 1
        return (hist[left] if left >= 0 else None), (hist[right] if right < bins else None)

    def lowest_of_plateau(i):
        return i == 0 or hist[i - 1] != hist[i]

    peak = None
    for i in range(bins):
        if not lowest_of_plateau(i):
            continue
        lo, hi = neighbours(i)
        if lo is None and hi is None:
            continue
        if (lo is None or lo < hist[i]) and (hi is None or hi < hist[i]):
            peak = i
            break
    if peak is None:
        return fallback, True
    for i in range(peak + 1, bins):
        if not lowest_of_plateau(i):
            continue
        lo, hi = neighbours(i)
        if lo is not None and hi is not None and lo > hist[i] and hi > hist[i]:
            return (i + 0.5) / bins, False
    return fallback, True


def fill_holes_cc(grid):
    """Hole filling via labelled 4-connected zero components touching no border."""
    from scipy import ndimage

    a = np.asarray(grid)
    labels, n = ndimage.label(a == 0, structure=[[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    out = a.copy()
    for lab in range(1, n + 1):
        ys, xs = np.nonzero(labels == lab)
        touches = ys.min() == 0 or xs.min() == 0 or ys.max() == a.shape[0] - 1 or xs.max() == a.shape[1] - 1
        if not touches:
            out[labels == lab] = 1
    return out


def bilinear_at(values, block, y, x):
    """Closed-form value at pixel ``(y, x)`` with samples at block centers, clamped."""
    rows, cols = len(values), len(values[0])
    fy = min(max((y + 0.5) / block - 0.5, 0.0), rows - 1)
    fx = min(max((x + 0.5) / block - 0.5, 0.0), cols - 1)
    r0, c0 = int(math.floor(fy)), int(math.floor(fx))
    r1, c1 = min(r0 + 1, rows - 1), min(c0 + 1, cols - 1)
    ty, tx = fy - r0, fx - c0
    return ((1 - ty) * (1 - tx) * values[r0][c0] + (1 - ty) * tx * values[r0][c1]
            + ty * (1 - tx) * values[r1][c0] + ty * tx * values[r1][c1])


def pr_area(scores, labels):
    """AP by enumerating every distinct cut point, highest first."""
    npos = sum(labels)
    area, prev_recall = 0.0, 0.0
    for cut in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= cut and y == 1)
        fp = sum(1 for s, y in zip(scores, labels) if s >= cut and y == 0)
        recall = tp / npos
        area += (recall - prev_recall) * tp / (tp + fp)
        prev_recall = recall
    return area


def confusion(pred, gt):
    tp = fp = fn = tn = 0
    for p, g in zip(np.ravel(pred), np.ravel(gt)):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def f1_mcc(pred, gt):
    tp, fp, fn, tn = confusion(pred, gt)
    f1 = 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
    d = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = 0.0 if d == 0 else (tp * tn - fp * fn) / math.sqrt(d)
    return f1, mcc
