"""Compiled inner loops for the inference and training hot paths.

The projection works on raw 8-bit pixel values so the hidden activations are
exact integers; winner-take-all ties are therefore decided on exact values and
never on floating point summation noise.
"""

from __future__ import annotations

import numpy as np
from numba import njit, types
from numba.extending import intrinsic


@intrinsic
def _popcount(typingctx, x):
    sig = types.uint64(types.uint64)

    def codegen(context, builder, signature, args):
        return builder.ctpop(args[0])

    return sig, codegen


@njit(cache=True, nogil=True)
def bit_planes(pixels, planes):
    """Split a uint8 vector into 8 packed bit planes of shape (8, words)."""
    planes[:, :] = 0
    for i in range(pixels.shape[0]):
        v = pixels[i]
        w = i >> 6
        bit = np.uint64(1) << np.uint64(i & 63)
        for b in range(8):
            planes[b, w] |= bit * np.uint64((v >> b) & 1)


@njit(cache=True, nogil=True)
def project_planes(planes, h_bits, out):
    """out[j] = sum_i pixel[i] * H[i, j] using AND + popcount per bit plane."""
    d_hidden, n_words = h_bits.shape
    for j in range(d_hidden):
        h = h_bits[j]
        c0 = 0
        c1 = 0
        c2 = 0
        c3 = 0
        c4 = 0
        c5 = 0
        c6 = 0
        c7 = 0
        for w in range(n_words):
            hw = h[w]
            c0 += _popcount(hw & planes[0, w])
            c1 += _popcount(hw & planes[1, w])
            c2 += _popcount(hw & planes[2, w])
            c3 += _popcount(hw & planes[3, w])
            c4 += _popcount(hw & planes[4, w])
            c5 += _popcount(hw & planes[5, w])
            c6 += _popcount(hw & planes[6, w])
            c7 += _popcount(hw & planes[7, w])
        out[j] = (
            c0 + (c1 << 1) + (c2 << 2) + (c3 << 3)
            + (c4 << 4) + (c5 << 5) + (c6 << 6) + (c7 << 7)
        )


@njit(cache=True, nogil=True)
def winner_take_all(f, mask):
    """Set mask to the top half of f; ties at the cutoff go to the lowest indices."""
    n = f.shape[0]
    half = n // 2
    cut = np.partition(f.copy(), n - half)[n - half]
    above = 0
    for j in range(n):
        if f[j] > cut:
            above += 1
    need = half - above
    for j in range(n):
        v = f[j]
        if v > cut:
            mask[j] = 1
        elif v == cut and need > 0:
            mask[j] = 1
            need -= 1
        else:
            mask[j] = 0


@njit(cache=True, nogil=True)
def build_row_table(weights, group):
    """Subset sums of consecutive row groups: table[q, pattern - 1] = sum of selected rows.

    With this table a masked row sum touches at most one stored row per
    group, trading (2**group - 1) / group times the memory of ``weights``
    for fewer bytes streamed per query.
    """
    n_rows, n = weights.shape
    n_groups = (n_rows + group - 1) // group
    n_sub = (1 << group) - 1
    table = np.zeros((n_groups * n_sub, n), np.float32)
    for q in range(n_groups):
        for pattern in range(1, n_sub + 1):
            dst = table[q * n_sub + pattern - 1]
            for r in range(group):
                j = q * group + r
                if (pattern >> r) & 1 and j < n_rows:
                    src = weights[j]
                    for i in range(n):
                        dst[i] += src[i]
    return table


@njit(cache=True, nogil=True)
def table_row_sum(table, group, mask, bias, out):
    """out = mask @ weights + bias using a table from build_row_table.

    Table rows are consumed eight at a time in ascending order; the fixed
    grouping keeps results reproducible while overlapping memory streams.
    """
    n_rows = mask.shape[0]
    n = out.shape[0]
    n_sub = (1 << group) - 1
    n_groups = (n_rows + group - 1) // group
    picks = np.empty(n_groups, np.int64)
    m = 0
    for q in range(n_groups):
        pattern = 0
        for r in range(group):
            j = q * group + r
            if j < n_rows and mask[j]:
                pattern |= 1 << r
        if pattern:
            picks[m] = q * n_sub + pattern - 1
            m += 1
    acc = np.zeros(n, np.float32)
    k = 0
    while k + 8 <= m:
        a = table[picks[k]]
        b = table[picks[k + 1]]
        c = table[picks[k + 2]]
        d = table[picks[k + 3]]
        e = table[picks[k + 4]]
        f = table[picks[k + 5]]
        g = table[picks[k + 6]]
        h = table[picks[k + 7]]
        for i in range(n):
            acc[i] += ((a[i] + b[i]) + (c[i] + d[i])) + ((e[i] + f[i]) + (g[i] + h[i]))
        k += 8
    while k < m:
        a = table[picks[k]]
        for i in range(n):
            acc[i] += a[i]
        k += 1
    for i in range(n):
        out[i] = acc[i] + bias[i]


@njit(cache=True, nogil=True)
def pixel_planes(pixels, n_words):
    padded = np.zeros(n_words * 64, np.uint8)
    padded[: pixels.shape[0]] = pixels
    planes = np.empty((8, n_words), np.uint64)
    bit_planes(padded, planes)
    return planes


@njit(cache=True, nogil=True)
def hidden_from_planes(planes, h_bits, mask):
    f = np.empty(h_bits.shape[0], np.int64)
    project_planes(planes, h_bits, f)
    winner_take_all(f, mask)


@njit(cache=True, nogil=True)
def hidden_from_pixels(pixels, h_bits, mask):
    hidden_from_planes(pixel_planes(pixels, h_bits.shape[1]), h_bits, mask)


@njit(cache=True, nogil=True)
def hidden_batch_from_pixels(pixel_rows, h_bits, out):
    """Binary hidden code for every row of a (n, d_in) uint8 matrix."""
    mask = np.empty(h_bits.shape[0], np.uint8)
    for r in range(pixel_rows.shape[0]):
        hidden_from_pixels(pixel_rows[r], h_bits, mask)
        for j in range(mask.shape[0]):
            out[r, j] = mask[j]


@njit(cache=True, nogil=True)
def logits_from_planes(planes, h_bits, table, group, bias, out):
    mask = np.empty(h_bits.shape[0], np.uint8)
    hidden_from_planes(planes, h_bits, mask)
    table_row_sum(table, group, mask, bias, out)


@njit(cache=True, nogil=True)
def ensemble_logits(regions, z_per_region, h_all, tables, group, biases, out):
    """Logits of every member; member t reads region t // z_per_region."""
    n_words = h_all.shape[2]
    mask = np.empty(h_all.shape[1], np.uint8)
    for p in range(regions.shape[0]):
        planes = pixel_planes(regions[p], n_words)
        for z in range(z_per_region):
            t = p * z_per_region + z
            hidden_from_planes(planes, h_all[t], mask)
            table_row_sum(tables[t], group, mask, biases[t], out[t])


@njit(cache=True, nogil=True)
def rgb_to_gray(rgb, out):
    """Integer BT.601 luma with halves rounded up."""
    h, w = out.shape
    for y in range(h):
        for x in range(w):
            v = (299 * np.int32(rgb[y, x, 0]) + 587 * np.int32(rgb[y, x, 1])
                 + 114 * np.int32(rgb[y, x, 2]) + 500) // 1000
            out[y, x] = np.uint8(v)


@njit(cache=True, nogil=True, fastmath=True)
def adam_step(param, grad, m, v, lr, beta1, beta2, eps, step):
    """One in-place Adam update with bias correction, in float32."""
    step_size = np.float32(lr / (1.0 - beta1 ** step))
    inv_c2 = np.float32(1.0 / (1.0 - beta2 ** step))
    b1 = np.float32(beta1)
    b2 = np.float32(beta2)
    e = np.float32(eps)
    one = np.float32(1.0)
    flat_p = param.ravel()
    flat_g = grad.ravel()
    flat_m = m.ravel()
    flat_v = v.ravel()
    for i in range(flat_p.shape[0]):
        g = flat_g[i]
        mi = b1 * flat_m[i] + (one - b1) * g
        vi = b2 * flat_v[i] + (one - b2) * g * g
        flat_m[i] = mi
        flat_v[i] = vi
        flat_p[i] -= step_size * mi / (np.sqrt(vi * inv_c2) + e)


@njit(cache=True, nogil=True)
def bilinear_crop_resize(src, x0, y0, x1, y1, out):
    """Resize src[y0:y1, x0:x1] into out with half-pixel-center bilinear sampling."""
    in_h = y1 - y0
    in_w = x1 - x0
    out_h, out_w = out.shape
    sy = in_h / out_h
    sx = in_w / out_w
    ix0 = np.empty(out_w, np.int64)
    ix1 = np.empty(out_w, np.int64)
    wx = np.empty(out_w, np.float64)
    for ox in range(out_w):
        fx = (ox + 0.5) * sx - 0.5
        fx = min(max(fx, 0.0), in_w - 1.0)
        i = int(np.floor(fx))
        ix0[ox] = x0 + i
        ix1[ox] = x0 + min(i + 1, in_w - 1)
        wx[ox] = fx - i
    for oy in range(out_h):
        fy = (oy + 0.5) * sy - 0.5
        fy = min(max(fy, 0.0), in_h - 1.0)
        i = int(np.floor(fy))
        r0 = y0 + i
        r1 = y0 + min(i + 1, in_h - 1)
        wy = fy - i
        for ox in range(out_w):
            a = ix0[ox]
            b = ix1[ox]
            w = wx[ox]
            top = (1.0 - w) * src[r0, a] + w * src[r0, b]
            bot = (1.0 - w) * src[r1, a] + w * src[r1, b]
            val = np.floor((1.0 - wy) * top + wy * bot + 0.5)
            if val > 255.0:
                val = 255.0
            out[oy, ox] = np.uint8(val)


@njit(cache=True, nogil=True)
def regions_to_rows(src, rects, out_h, out_w, out):
    """Crop-and-resize every rect (x0, y0, x1, y1) into one flattened row of out."""
    tile = np.empty((out_h, out_w), np.uint8)
    for p in range(rects.shape[0]):
        bilinear_crop_resize(src, rects[p, 0], rects[p, 1], rects[p, 2], rects[p, 3], tile)
        k = 0
        for y in range(out_h):
            for x in range(out_w):
                out[p, k] = tile[y, x]
                k += 1
