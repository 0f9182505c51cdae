"""Pure-numpy implementations of the hot kernels.

Semantics contract shared with the compiled lane (kernels/_core.pyx):

raster_select
    Top-K face selection per pixel. NDC convention: pixel center (i, j)
    sits at px = (j + 0.5) * (2/W) - 1, py = 1 - (i + 0.5) * (2/H)
    (x right, y up, row 0 at the top). A face covers a pixel when the
    pixel is inside its projection or within `blur` (NDC distance) of its
    boundary; per pixel the K nearest faces by perspective-interpolated
    depth are kept, ties broken by face order. Zero-area projections are
    skipped.

splat_forward / splat_backward
    Bilinear scatter of (M, C) values to a (H, W, C) grid at texel
    coordinates (u = column, v = row); corners are floor/floor+1 so
    integral coordinates deposit their full mass on one texel.
    Out-of-bounds corners are dropped and counted (clip-and-count).

sample_forward / sample_backward
    Bilinear gather with clamp-to-edge; the coordinate gradient is gated
    to zero where the coordinate is clamped.

Accumulation order is fixed (corner-major, source-index ascending) so
results are deterministic and bit-identical to the compiled lane.
"""

import numpy as np

# cap on candidate-array size when expanding per-face bounding boxes
_CHUNK_CELLS = 4_000_000


def raster_select(xn, yn, z, faces, face_ids, width, height, k, blur, row0, row1, out_face):
    """Fill out_face[row0:row1] with per-pixel top-K face ids (-1 = empty)."""
    n_faces = faces.shape[0]
    if n_faces == 0 or row1 <= row0:
        return
    sx = 2.0 / width
    sy = 2.0 / height

    v0, v1, v2 = faces[:, 0], faces[:, 1], faces[:, 2]
    fx = np.stack([xn[v0], xn[v1], xn[v2]], axis=1)
    fy = np.stack([yn[v0], yn[v1], yn[v2]], axis=1)
    fz = np.stack([z[v0], z[v1], z[v2]], axis=1)

    xmin = fx.min(axis=1) - blur
    xmax = fx.max(axis=1) + blur
    ymin = fy.min(axis=1) - blur
    ymax = fy.max(axis=1) + blur

    j_lo = np.maximum(np.ceil((xmin + 1.0) / sx - 0.5), 0).astype(np.int64)
    j_hi = np.minimum(np.floor((xmax + 1.0) / sx - 0.5), width - 1).astype(np.int64)
    i_lo = np.maximum(np.ceil((1.0 - ymax) / sy - 0.5), row0).astype(np.int64)
    i_hi = np.minimum(np.floor((1.0 - ymin) / sy - 0.5), row1 - 1).astype(np.int64)

    live = (j_lo <= j_hi) & (i_lo <= i_hi)
    if not live.any():
        return

    cand_f = []
    cand_i = []
    cand_j = []
    order = np.flatnonzero(live)
    pos = 0
    while pos < order.size:
        # grow the chunk until the padded window volume hits the cap
        take = 0
        cells = 0
        while pos + take < order.size:
            f = order[pos + take]
            cells = max(cells, 1) if take == 0 else cells
            take += 1
            sub = order[pos:pos + take]
            mh = int((i_hi[sub] - i_lo[sub] + 1).max())
            mw = int((j_hi[sub] - j_lo[sub] + 1).max())
            if take * mh * mw > _CHUNK_CELLS and take > 1:
                take -= 1
                break
        sub = order[pos:pos + take]
        pos += take
        mh = int((i_hi[sub] - i_lo[sub] + 1).max())
        mw = int((j_hi[sub] - j_lo[sub] + 1).max())
        ii = i_lo[sub, None, None] + np.arange(mh)[None, :, None]
        jj = j_lo[sub, None, None] + np.arange(mw)[None, None, :]
        ok = (ii <= i_hi[sub, None, None]) & (jj <= j_hi[sub, None, None])
        sel_f, sel_a, sel_b = np.nonzero(ok)
        cand_f.append(sub[sel_f])
        cand_i.append(ii[sel_f, sel_a, np.zeros_like(sel_b)])
        cand_j.append(jj[sel_f, np.zeros_like(sel_a), sel_b])

    cf = np.concatenate(cand_f)
    ci = np.concatenate(cand_i)
    cj = np.concatenate(cand_j)
    if cf.size == 0:
        return

    px = (cj + 0.5) * sx - 1.0
    py = 1.0 - (ci + 0.5) * sy
    x0, x1, x2 = fx[cf, 0], fx[cf, 1], fx[cf, 2]
    y0, y1, y2 = fy[cf, 0], fy[cf, 1], fy[cf, 2]

    a2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    nondeg = a2 != 0.0
    cf, ci, cj, px, py = cf[nondeg], ci[nondeg], cj[nondeg], px[nondeg], py[nondeg]
    x0, x1, x2, y0, y1, y2 = (a[nondeg] for a in (x0, x1, x2, y0, y1, y2))
    a2 = a2[nondeg]
    if cf.size == 0:
        return

    w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / a2
    w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / a2
    w2 = ((x0 - px) * (y1 - py) - (x1 - px) * (y0 - py)) / a2
    inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)

    d2 = np.full(cf.shape, np.inf)
    for ax, ay, bx, by in ((x0, y0, x1, y1), (x1, y1, x2, y2), (x2, y2, x0, y0)):
        ex = bx - ax
        ey = by - ay
        len2 = ex * ex + ey * ey
        t = ((px - ax) * ex + (py - ay) * ey) / len2
        t = np.clip(t, 0.0, 1.0)
        dx = px - (ax + t * ex)
        dy = py - (ay + t * ey)
        d2 = np.minimum(d2, dx * dx + dy * dy)

    iz0 = 1.0 / fz[cf, 0]
    iz1 = 1.0 / fz[cf, 1]
    iz2 = 1.0 / fz[cf, 2]
    denom = w0 * iz0 + w1 * iz1 + w2 * iz2
    keep = (inside | (d2 <= blur * blur)) & (denom > 0.0)
    if not keep.any():
        return
    cf, ci, cj, denom = cf[keep], ci[keep], cj[keep], denom[keep]
    zp = 1.0 / denom

    pix = ci * np.int64(width) + cj
    srt = np.lexsort((cf, zp, pix))
    pix_s, cf_s = pix[srt], cf[srt]
    first = np.ones(pix_s.size, dtype=bool)
    first[1:] = pix_s[1:] != pix_s[:-1]
    starts = np.flatnonzero(first)
    counts = np.diff(np.append(starts, pix_s.size))
    rank = np.arange(pix_s.size) - np.repeat(starts, counts)
    top = rank < k
    rows = (pix_s[top] // width).astype(np.int64)
    cols = (pix_s[top] % width).astype(np.int64)
    out_face[rows, cols, rank[top]] = face_ids[cf_s[top]]


def _corners(u, v, height, width):
    lo_u = np.floor(u)
    lo_v = np.floor(v)
    fu = u - lo_u
    fv = v - lo_v
    lo_ui = lo_u.astype(np.int64)
    lo_vi = lo_v.astype(np.int64)
    # (row index, col index, weight, dw/du, dw/dv)
    return [
        (lo_vi, lo_ui, (1.0 - fu) * (1.0 - fv), -(1.0 - fv), -(1.0 - fu)),
        (lo_vi, lo_ui + 1, fu * (1.0 - fv), (1.0 - fv), -fu),
        (lo_vi + 1, lo_ui, (1.0 - fu) * fv, -fv, (1.0 - fu)),
        (lo_vi + 1, lo_ui + 1, fu * fv, fv, fu),
    ]


def splat_forward(values, u, v, height, width):
    values = np.asarray(values)
    out = np.zeros((height, width, values.shape[1]))
    clipped_mass = 0.0
    clipped_count = 0
    for rows, cols, w, _, _ in _corners(u, v, height, width):
        inb = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
        np.add.at(out, (rows[inb], cols[inb]), values[inb] * w[inb, None])
        drop = ~inb & (w != 0.0)
        if drop.any():
            clipped_count += int(drop.sum())
            clipped_mass += float((w[drop] * np.abs(values[drop]).sum(axis=1)).sum())
    return out, clipped_mass, clipped_count


def splat_backward(values, u, v, grad_out):
    height, width = grad_out.shape[:2]
    grad_values = np.zeros_like(values)
    grad_u = np.zeros_like(u)
    grad_v = np.zeros_like(v)
    for rows, cols, w, dwdu, dwdv in _corners(u, v, height, width):
        inb = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
        g = np.zeros_like(values)
        g[inb] = grad_out[rows[inb], cols[inb]]
        grad_values += g * w[:, None]
        gdotv = (g * values).sum(axis=1)
        grad_u += gdotv * dwdu
        grad_v += gdotv * dwdv
    return grad_values, grad_u, grad_v


def _sample_setup(u, v, height, width):
    uc = np.clip(u, 0.0, width - 1.0)
    vc = np.clip(v, 0.0, height - 1.0)
    lo_u = np.minimum(np.floor(uc), width - 2.0) if width > 1 else np.zeros_like(uc)
    lo_v = np.minimum(np.floor(vc), height - 2.0) if height > 1 else np.zeros_like(vc)
    fu = uc - lo_u
    fv = vc - lo_v
    return lo_u.astype(np.int64), lo_v.astype(np.int64), fu, fv


def sample_forward(tex, u, v):
    height, width = tex.shape[:2]
    lo_u, lo_v, fu, fv = _sample_setup(u, v, height, width)
    hi_u = np.minimum(lo_u + 1, width - 1)
    hi_v = np.minimum(lo_v + 1, height - 1)
    fu = fu[:, None]
    fv = fv[:, None]
    return (
        tex[lo_v, lo_u] * ((1.0 - fu) * (1.0 - fv))
        + tex[lo_v, hi_u] * (fu * (1.0 - fv))
        + tex[hi_v, lo_u] * ((1.0 - fu) * fv)
        + tex[hi_v, hi_u] * (fu * fv)
    )


def sample_backward(tex, u, v, grad_out):
    height, width = tex.shape[:2]
    lo_u, lo_v, fu, fv = _sample_setup(u, v, height, width)
    hi_u = np.minimum(lo_u + 1, width - 1)
    hi_v = np.minimum(lo_v + 1, height - 1)

    grad_tex = np.zeros_like(tex)
    fu2 = fu[:, None]
    fv2 = fv[:, None]
    np.add.at(grad_tex, (lo_v, lo_u), grad_out * ((1.0 - fu2) * (1.0 - fv2)))
    np.add.at(grad_tex, (lo_v, hi_u), grad_out * (fu2 * (1.0 - fv2)))
    np.add.at(grad_tex, (hi_v, lo_u), grad_out * ((1.0 - fu2) * fv2))
    np.add.at(grad_tex, (hi_v, hi_u), grad_out * (fu2 * fv2))

    t00 = (grad_out * tex[lo_v, lo_u]).sum(axis=1)
    t01 = (grad_out * tex[lo_v, hi_u]).sum(axis=1)
    t10 = (grad_out * tex[hi_v, lo_u]).sum(axis=1)
    t11 = (grad_out * tex[hi_v, hi_u]).sum(axis=1)
    gate_u = (u >= 0.0) & (u <= width - 1.0)
    gate_v = (v >= 0.0) & (v <= height - 1.0)
    grad_u = ((1.0 - fv) * (t01 - t00) + fv * (t11 - t10)) * gate_u
    grad_v = ((1.0 - fu) * (t10 - t00) + fu * (t11 - t01)) * gate_v
    return grad_tex, grad_u, grad_v
