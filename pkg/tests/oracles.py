"""Slow, obviously-correct reference implementations used only by tests."""
from collections import deque

import numpy as np


def bfs_components(mask):
    """4-connected components of the truthy pixels as lists of (y, x), raster-ordered."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    seen = np.zeros((h, w), dtype=bool)
    comps = []
    for i in range(h):
        for j in range(w):
            if not mask[i, j] or seen[i, j]:
                continue
            comp = []
            q = deque([(i, j)])
            seen[i, j] = True
            while q:
                y, x = q.popleft()
                comp.append((y, x))
                for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and not seen[yy, xx]:
                        seen[yy, xx] = True
                        q.append((yy, xx))
            comps.append(comp)
    return comps


def labels_from_components(shape, comps):
    lab = np.zeros(shape, dtype=np.int32)
    for k, comp in enumerate(comps, start=1):
        for y, x in comp:
            lab[y, x] = k
    return lab


def postprocess_oracle(mask, max_hole_area=None):
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    comps = bfs_components(mask)
    out = np.zeros((h, w), dtype=bool)
    if not comps:
        return out.astype(np.uint8)
    best = max(comps, key=len)  # first in raster order wins ties
    for y, x in best:
        out[y, x] = True
    for comp in bfs_components(~out):
        touches = any(y in (0, h - 1) or x in (0, w - 1) for y, x in comp)
        if not touches and (max_hole_area is None or len(comp) <= max_hole_area):
            for y, x in comp:
                out[y, x] = True
    return out.astype(np.uint8)


def xor_error_oracle(pred, truth):
    total = 0
    cells = 0
    for p, t in zip(pred, truth):
        for a, b in zip(np.asarray(p).ravel().tolist(), np.asarray(t).ravel().tolist()):
            total += int(a != b)
        cells += np.asarray(p).size
    return total / cells


def gar_far_sweep(genuine, impostor, far_target):
    """Try every threshold 'just above' / 'at' each score; keep the best valid GAR."""
    cands = sorted(set(genuine) | set(impostor))
    cands = [c for c in cands] + [np.nextafter(c, np.inf) for c in cands] + [np.inf]
    best = 0.0
    for t in cands:
        far = sum(s >= t for s in impostor) / len(impostor)
        if far <= far_target:
            best = max(best, sum(s >= t for s in genuine) / len(genuine))
    return best
