"""Pixel-level kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``SEGDENSE_DISABLE_NUMBA`` is unset (or ``0``). Both paths are always
importable as ``<name>_numpy`` / ``<name>_numba`` so they can be compared
directly; the unsuffixed names are the dispatch targets used by the package.

All labelings number components in raster order of their first pixel, so the
two paths return identical arrays.
"""
from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("SEGDENSE_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None

HAS_NUMBA = numba is not None
USE_NUMBA = HAS_NUMBA and not _DISABLED


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------

def _bilinear_coords(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize_numpy(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resampling of a 2-D float array."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    y0, y1, fy = _bilinear_coords(h, out_h)
    x0, x1, fx = _bilinear_coords(w, out_w)
    fy = fy[:, None]
    fx = fx[None, :]
    a = img[y0][:, x0]
    b = img[y0][:, x1]
    c = img[y1][:, x0]
    d = img[y1][:, x1]
    top = (1.0 - fx) * a + fx * b
    bot = (1.0 - fx) * c + fx * d
    return (1.0 - fy) * top + fy * bot


def nearest_resize_numpy(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = mask.shape
    ys = np.minimum(((np.arange(out_h) + 0.5) * (h / out_h)).astype(np.int64), h - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * (w / out_w)).astype(np.int64), w - 1)
    return mask[ys][:, xs]


def label4_numpy(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected labelling by min-index propagation with pointer jumping."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    if not mask.any():
        return np.zeros((h, w), dtype=np.int32), 0
    big = np.int64(h * w)
    lab = np.where(mask, np.arange(h * w, dtype=np.int64).reshape(h, w), big)
    fg = mask.ravel()
    while True:
        new = lab.copy()
        np.minimum(new[1:, :], lab[:-1, :], out=new[1:, :])
        np.minimum(new[:-1, :], lab[1:, :], out=new[:-1, :])
        np.minimum(new[:, 1:], lab[:, :-1], out=new[:, 1:])
        np.minimum(new[:, :-1], lab[:, 1:], out=new[:, :-1])
        new[~mask] = big
        flat = new.ravel()
        # labels are pixel indices inside the same component, never larger than their holder
        while True:
            jumped = flat.copy()
            jumped[fg] = flat[flat[fg]]
            if np.array_equal(jumped, flat):
                break
            flat = jumped
        new = flat.reshape(h, w)
        if np.array_equal(new, lab):
            break
        lab = new
    roots, inverse = np.unique(lab[mask], return_inverse=True)
    out = np.zeros((h, w), dtype=np.int32)
    out[mask] = inverse.astype(np.int32) + 1
    return out, int(roots.size)


def fill_border_holes_numpy(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    lab, n = label4_numpy(~mask)
    if n == 0:
        return mask.astype(np.uint8)
    border = np.concatenate([lab[0, :], lab[-1, :], lab[:, 0], lab[:, -1]])
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(border)] = True
    keep[0] = False
    holes = ~mask & ~keep[lab]
    return (mask | holes).astype(np.uint8)


def xor_count_numpy(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.count_nonzero(np.asarray(a) != np.asarray(b)))


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if HAS_NUMBA:
    njit = numba.njit(cache=False, nogil=True)

    @njit
    def _bilinear_resize_jit(img, out_h, out_w):
        h, w = img.shape
        out = np.empty((out_h, out_w), dtype=np.float64)
        sy = h / out_h
        sx = w / out_w
        for i in range(out_h):
            y = (i + 0.5) * sy - 0.5
            if y < 0.0:
                y = 0.0
            if y > h - 1:
                y = h - 1.0
            y0 = int(np.floor(y))
            y1 = min(y0 + 1, h - 1)
            fy = y - y0
            for j in range(out_w):
                x = (j + 0.5) * sx - 0.5
                if x < 0.0:
                    x = 0.0
                if x > w - 1:
                    x = w - 1.0
                x0 = int(np.floor(x))
                x1 = min(x0 + 1, w - 1)
                fx = x - x0
                top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
                bot = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
                out[i, j] = (1.0 - fy) * top + fy * bot
        return out

    @njit
    def _nearest_resize_jit(mask, out_h, out_w):
        h, w = mask.shape
        out = np.empty((out_h, out_w), dtype=mask.dtype)
        for i in range(out_h):
            y = min(int((i + 0.5) * (h / out_h)), h - 1)
            for j in range(out_w):
                x = min(int((j + 0.5) * (w / out_w)), w - 1)
                out[i, j] = mask[y, x]
        return out

    @njit
    def _label4_jit(mask):
        h, w = mask.shape
        lab = np.zeros((h, w), dtype=np.int32)
        stack = np.empty(h * w, dtype=np.int64)
        n = 0
        for i in range(h):
            for j in range(w):
                if not mask[i, j] or lab[i, j] != 0:
                    continue
                n += 1
                lab[i, j] = n
                top = 0
                stack[top] = i * w + j
                top += 1
                while top > 0:
                    top -= 1
                    p = stack[top]
                    y = p // w
                    x = p - y * w
                    if y > 0 and mask[y - 1, x] and lab[y - 1, x] == 0:
                        lab[y - 1, x] = n
                        stack[top] = p - w
                        top += 1
                    if y < h - 1 and mask[y + 1, x] and lab[y + 1, x] == 0:
                        lab[y + 1, x] = n
                        stack[top] = p + w
                        top += 1
                    if x > 0 and mask[y, x - 1] and lab[y, x - 1] == 0:
                        lab[y, x - 1] = n
                        stack[top] = p - 1
                        top += 1
                    if x < w - 1 and mask[y, x + 1] and lab[y, x + 1] == 0:
                        lab[y, x + 1] = n
                        stack[top] = p + 1
                        top += 1
        return lab, n

    @njit
    def _fill_border_holes_jit(mask):
        h, w = mask.shape
        reach = np.zeros((h, w), dtype=np.bool_)
        stack = np.empty(h * w, dtype=np.int64)
        top = 0
        for i in range(h):
            for j in range(w):
                if (i == 0 or j == 0 or i == h - 1 or j == w - 1) and not mask[i, j] and not reach[i, j]:
                    reach[i, j] = True
                    stack[top] = i * w + j
                    top += 1
        while top > 0:
            top -= 1
            p = stack[top]
            y = p // w
            x = p - y * w
            if y > 0 and not mask[y - 1, x] and not reach[y - 1, x]:
                reach[y - 1, x] = True
                stack[top] = p - w
                top += 1
            if y < h - 1 and not mask[y + 1, x] and not reach[y + 1, x]:
                reach[y + 1, x] = True
                stack[top] = p + w
                top += 1
            if x > 0 and not mask[y, x - 1] and not reach[y, x - 1]:
                reach[y, x - 1] = True
                stack[top] = p - 1
                top += 1
            if x < w - 1 and not mask[y, x + 1] and not reach[y, x + 1]:
                reach[y, x + 1] = True
                stack[top] = p + 1
                top += 1
        out = np.empty((h, w), dtype=np.uint8)
        for i in range(h):
            for j in range(w):
                out[i, j] = 0 if reach[i, j] else 1
        return out

    @njit
    def _xor_count_jit(a, b):
        n = 0
        fa = a.ravel()
        fb = b.ravel()
        for k in range(fa.size):
            if fa[k] != fb[k]:
                n += 1
        return n

    def bilinear_resize_numba(img, out_h, out_w):
        return _bilinear_resize_jit(np.ascontiguousarray(img, dtype=np.float64), int(out_h), int(out_w))

    def nearest_resize_numba(mask, out_h, out_w):
        return _nearest_resize_jit(np.ascontiguousarray(mask), int(out_h), int(out_w))

    def label4_numba(mask):
        lab, n = _label4_jit(np.ascontiguousarray(mask, dtype=np.bool_))
        return lab, int(n)

    def fill_border_holes_numba(mask):
        return _fill_border_holes_jit(np.ascontiguousarray(mask, dtype=np.bool_))

    def xor_count_numba(a, b):
        a = np.ascontiguousarray(a, dtype=np.uint8)
        b = np.ascontiguousarray(b, dtype=np.uint8)
        return int(_xor_count_jit(a, b))


if USE_NUMBA:
    bilinear_resize = bilinear_resize_numba
    nearest_resize = nearest_resize_numba
    label4 = label4_numba
    fill_border_holes = fill_border_holes_numba
    xor_count = xor_count_numba
else:
    bilinear_resize = bilinear_resize_numpy
    nearest_resize = nearest_resize_numpy
    label4 = label4_numpy
    fill_border_holes = fill_border_holes_numpy
    xor_count = xor_count_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
