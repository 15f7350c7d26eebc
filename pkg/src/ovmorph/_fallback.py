"""Pure Python/numpy kernels with the same results as the compiled ``_core``.

Every floating-point value that leaves these functions is produced by the
same sequence of IEEE operations as in ``_core.pyx`` so the two backends are
interchangeable without changing any trained model or feature table.
"""
from __future__ import annotations

import numpy as np

_DR = (0, 1, 1, 1, 0, -1, -1, -1)
_DC = (1, 1, 0, -1, -1, -1, 0, 1)
_DIR_INDEX = {(dr, dc): k for k, (dr, dc) in enumerate(zip(_DR, _DC))}


def best_split(X, y, idx, features, n_classes, min_leaf):
    m = len(idx)
    best = (-1, 0.0, -np.inf)
    if m < 2 or len(features) == 0:
        return best
    labels = y[idx]
    total = np.bincount(labels, minlength=n_classes).astype(np.int64)
    nl = np.arange(1, m, dtype=np.int64)
    nr = m - nl
    size_ok = (nl >= min_leaf) & (nr >= min_leaf)
    if not size_ok.any():
        return best
    rows = np.arange(m)
    for f in features:
        values = X[idx, f]
        order = np.argsort(values, kind="stable")
        sv = values[order]
        onehot = np.zeros((m, n_classes), dtype=np.int64)
        onehot[rows, labels[order]] = 1
        left = np.cumsum(onehot, axis=0)[:-1]
        right = total - left
        lsq = (left * left).sum(axis=1)
        rsq = (right * right).sum(axis=1)
        valid = size_ok & (sv[:-1] < sv[1:])
        if not valid.any():
            continue
        score = lsq / nl + rsq / nr
        score[~valid] = -np.inf
        i = int(np.argmax(score))
        if score[i] > best[2]:
            a = float(sv[i])
            b = float(sv[i + 1])
            thr = a + (b - a) * 0.5
            if thr >= b:
                thr = a
            best = (int(f), thr, float(score[i]))
    return best


def apply_tree(X, feature, threshold, left, right):
    n = X.shape[0]
    node = np.zeros(n, dtype=np.intp)
    rows = np.arange(n)
    active = feature[node] >= 0
    while active.any():
        r = rows[active]
        nd = node[active]
        go_left = X[r, feature[nd]] <= threshold[nd]
        node[active] = np.where(go_left, left[nd], right[nd])
        active = feature[node] >= 0
    return node


def contour_steps(img):
    img = np.asarray(img)
    nz = np.argwhere(img)
    if len(nz) == 0:
        return 0, 0
    sr, sc = (int(v) for v in nz[0])
    cap = 4 * len(nz) + 16
    pr, pc = sr, sc
    k = 4
    first_move = -1
    axial = diagonal = moves = 0
    while moves < cap:
        for i in range(1, 9):
            j = (k + i) % 8
            qr, qc = pr + _DR[j], pc + _DC[j]
            if img[qr, qc]:
                break
        else:
            break
        if pr == sr and pc == sc:
            if first_move < 0:
                first_move = j
            elif j == first_move:
                break
        jb = (j + 7) % 8
        k = _DIR_INDEX[(pr + _DR[jb] - qr, pc + _DC[jb] - qc)]
        if j % 2:
            diagonal += 1
        else:
            axial += 1
        pr, pc = qr, qc
        moves += 1
    return axial, diagonal
