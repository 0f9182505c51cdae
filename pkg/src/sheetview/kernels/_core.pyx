# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; semantics documented in kernels/pure.py.

Float expressions and accumulation orders mirror the pure lane exactly
(corner-major scatter, face-order tie-breaking) so both lanes produce
bit-identical results when compiled without FP contraction.
"""

import numpy as np

cimport numpy as cnp
from libc.float cimport DBL_MAX
from libc.math cimport ceil, fabs, floor


def raster_select(double[::1] xn, double[::1] yn, double[::1] z,
                  int[:, ::1] faces, int[::1] face_ids,
                  int width, int height, int k, double blur,
                  int row0, int row1, int[:, :, ::1] out_face):
    cdef Py_ssize_t n_faces = faces.shape[0]
    if n_faces == 0 or row1 <= row0:
        return
    cdef double sx = 2.0 / width
    cdef double sy = 2.0 / height
    cdef double blur2 = blur * blur

    zbuf_arr = np.full((row1 - row0, width, k), DBL_MAX)
    cdef double[:, :, ::1] zbuf = zbuf_arr

    cdef Py_ssize_t f, i, j
    cdef long jl, jh, il, ih
    cdef int a, b, c, slot, pos, q
    cdef double x0, x1, x2, y0, y1, y2, z0, z1, z2
    cdef double xmin, xmax, ymin, ymax
    cdef double px, py, a2, w0, w1, w2
    cdef double ax, ay, bx, by, ex, ey, len2, t, dx, dy, d2, d2min
    cdef double iz0, iz1, iz2, denom, zp
    cdef bint inside

    with nogil:
        for f in range(n_faces):
            a = faces[f, 0]
            b = faces[f, 1]
            c = faces[f, 2]
            x0 = xn[a]; x1 = xn[b]; x2 = xn[c]
            y0 = yn[a]; y1 = yn[b]; y2 = yn[c]
            z0 = z[a]; z1 = z[b]; z2 = z[c]

            xmin = x0
            if x1 < xmin: xmin = x1
            if x2 < xmin: xmin = x2
            xmax = x0
            if x1 > xmax: xmax = x1
            if x2 > xmax: xmax = x2
            ymin = y0
            if y1 < ymin: ymin = y1
            if y2 < ymin: ymin = y2
            ymax = y0
            if y1 > ymax: ymax = y1
            if y2 > ymax: ymax = y2
            xmin = xmin - blur
            xmax = xmax + blur
            ymin = ymin - blur
            ymax = ymax + blur

            jl = <long>ceil((xmin + 1.0) / sx - 0.5)
            jh = <long>floor((xmax + 1.0) / sx - 0.5)
            il = <long>ceil((1.0 - ymax) / sy - 0.5)
            ih = <long>floor((1.0 - ymin) / sy - 0.5)
            if jl < 0: jl = 0
            if jh > width - 1: jh = width - 1
            if il < row0: il = row0
            if ih > row1 - 1: ih = row1 - 1
            if jl > jh or il > ih:
                continue

            a2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
            if a2 == 0.0:
                continue
            iz0 = 1.0 / z0
            iz1 = 1.0 / z1
            iz2 = 1.0 / z2

            for i in range(il, ih + 1):
                py = 1.0 - (i + 0.5) * sy
                for j in range(jl, jh + 1):
                    px = (j + 0.5) * sx - 1.0
                    w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / a2
                    w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / a2
                    w2 = ((x0 - px) * (y1 - py) - (x1 - px) * (y0 - py)) / a2
                    inside = w0 >= 0.0 and w1 >= 0.0 and w2 >= 0.0

                    d2min = DBL_MAX
                    # edge 0-1
                    ax = x0; ay = y0; bx = x1; by = y1
                    ex = bx - ax; ey = by - ay
                    len2 = ex * ex + ey * ey
                    t = ((px - ax) * ex + (py - ay) * ey) / len2
                    if t < 0.0: t = 0.0
                    if t > 1.0: t = 1.0
                    dx = px - (ax + t * ex); dy = py - (ay + t * ey)
                    d2 = dx * dx + dy * dy
                    if d2 < d2min: d2min = d2
                    # edge 1-2
                    ax = x1; ay = y1; bx = x2; by = y2
                    ex = bx - ax; ey = by - ay
                    len2 = ex * ex + ey * ey
                    t = ((px - ax) * ex + (py - ay) * ey) / len2
                    if t < 0.0: t = 0.0
                    if t > 1.0: t = 1.0
                    dx = px - (ax + t * ex); dy = py - (ay + t * ey)
                    d2 = dx * dx + dy * dy
                    if d2 < d2min: d2min = d2
                    # edge 2-0
                    ax = x2; ay = y2; bx = x0; by = y0
                    ex = bx - ax; ey = by - ay
                    len2 = ex * ex + ey * ey
                    t = ((px - ax) * ex + (py - ay) * ey) / len2
                    if t < 0.0: t = 0.0
                    if t > 1.0: t = 1.0
                    dx = px - (ax + t * ex); dy = py - (ay + t * ey)
                    d2 = dx * dx + dy * dy
                    if d2 < d2min: d2min = d2

                    if not inside and d2min > blur2:
                        continue
                    denom = w0 * iz0 + w1 * iz1 + w2 * iz2
                    if denom <= 0.0:
                        continue
                    zp = 1.0 / denom

                    # insertion keeping ascending z; equal z keeps earlier face
                    pos = k
                    for slot in range(k):
                        if zp < zbuf[i - row0, j, slot]:
                            pos = slot
                            break
                    if pos >= k:
                        continue
                    for q in range(k - 1, pos, -1):
                        zbuf[i - row0, j, q] = zbuf[i - row0, j, q - 1]
                        out_face[i, j, q] = out_face[i, j, q - 1]
                    zbuf[i - row0, j, pos] = zp
                    out_face[i, j, pos] = face_ids[f]


def splat_forward(double[:, ::1] values, double[::1] u, double[::1] v,
                  int height, int width):
    cdef Py_ssize_t m_total = values.shape[0]
    cdef Py_ssize_t n_chan = values.shape[1]
    out_arr = np.zeros((height, width, n_chan))
    cdef double[:, :, ::1] out = out_arr
    cdef double clipped_mass = 0.0
    cdef long clipped_count = 0

    cdef Py_ssize_t m, ch
    cdef int corner, row, col
    cdef double lo_u, lo_v, fu, fv, w, vsum, row_d, col_d

    with nogil:
        for corner in range(4):
            for m in range(m_total):
                lo_u = floor(u[m])
                lo_v = floor(v[m])
                fu = u[m] - lo_u
                fv = v[m] - lo_v
                col_d = lo_u + (corner & 1)
                row_d = lo_v + (corner >> 1)
                if corner == 0:
                    w = (1.0 - fu) * (1.0 - fv)
                elif corner == 1:
                    w = fu * (1.0 - fv)
                elif corner == 2:
                    w = (1.0 - fu) * fv
                else:
                    w = fu * fv
                # bounds tested in double to avoid overflow on wild coords
                if 0.0 <= row_d < height and 0.0 <= col_d < width:
                    row = <int>row_d
                    col = <int>col_d
                    for ch in range(n_chan):
                        out[row, col, ch] += values[m, ch] * w
                elif w != 0.0:
                    clipped_count += 1
                    vsum = 0.0
                    for ch in range(n_chan):
                        vsum += fabs(values[m, ch])
                    clipped_mass += w * vsum
    return out_arr, clipped_mass, clipped_count


def splat_backward(double[:, ::1] values, double[::1] u, double[::1] v,
                   double[:, :, ::1] grad_out):
    cdef int height = grad_out.shape[0]
    cdef int width = grad_out.shape[1]
    cdef Py_ssize_t m_total = values.shape[0]
    cdef Py_ssize_t n_chan = values.shape[1]
    gv_arr = np.zeros((m_total, n_chan))
    gu_arr = np.zeros(m_total)
    gvv_arr = np.zeros(m_total)
    cdef double[:, ::1] gv = gv_arr
    cdef double[::1] gu = gu_arr
    cdef double[::1] gvv = gvv_arr

    cdef Py_ssize_t m, ch
    cdef int corner, row, col
    cdef double lo_u, lo_v, fu, fv, w, dwdu, dwdv, gdotv, g, row_d, col_d

    with nogil:
        for corner in range(4):
            for m in range(m_total):
                lo_u = floor(u[m])
                lo_v = floor(v[m])
                fu = u[m] - lo_u
                fv = v[m] - lo_v
                col_d = lo_u + (corner & 1)
                row_d = lo_v + (corner >> 1)
                if corner == 0:
                    w = (1.0 - fu) * (1.0 - fv); dwdu = -(1.0 - fv); dwdv = -(1.0 - fu)
                elif corner == 1:
                    w = fu * (1.0 - fv); dwdu = (1.0 - fv); dwdv = -fu
                elif corner == 2:
                    w = (1.0 - fu) * fv; dwdu = -fv; dwdv = (1.0 - fu)
                else:
                    w = fu * fv; dwdu = fv; dwdv = fu
                if not (0.0 <= row_d < height and 0.0 <= col_d < width):
                    continue
                row = <int>row_d
                col = <int>col_d
                gdotv = 0.0
                for ch in range(n_chan):
                    g = grad_out[row, col, ch]
                    gv[m, ch] += g * w
                    gdotv += g * values[m, ch]
                gu[m] += gdotv * dwdu
                gvv[m] += gdotv * dwdv
    return gv_arr, gu_arr, gvv_arr


cdef inline void _sample_corner(double u_m, double v_m, int height, int width,
                                int* lo_u, int* lo_v, double* fu, double* fv) noexcept nogil:
    cdef double uc = u_m
    cdef double vc = v_m
    if uc < 0.0: uc = 0.0
    if uc > width - 1.0: uc = width - 1.0
    if vc < 0.0: vc = 0.0
    if vc > height - 1.0: vc = height - 1.0
    cdef double lu = floor(uc)
    cdef double lv = floor(vc)
    if width > 1:
        if lu > width - 2.0: lu = width - 2.0
    else:
        lu = 0.0
    if height > 1:
        if lv > height - 2.0: lv = height - 2.0
    else:
        lv = 0.0
    fu[0] = uc - lu
    fv[0] = vc - lv
    lo_u[0] = <int>lu
    lo_v[0] = <int>lv


def sample_forward(double[:, :, ::1] tex, double[::1] u, double[::1] v):
    cdef int height = tex.shape[0]
    cdef int width = tex.shape[1]
    cdef Py_ssize_t n_chan = tex.shape[2]
    cdef Py_ssize_t m_total = u.shape[0]
    out_arr = np.zeros((m_total, n_chan))
    cdef double[:, ::1] out = out_arr

    cdef Py_ssize_t m, ch
    cdef int lo_u, lo_v, hi_u, hi_v
    cdef double fu, fv

    with nogil:
        for m in range(m_total):
            _sample_corner(u[m], v[m], height, width, &lo_u, &lo_v, &fu, &fv)
            hi_u = lo_u + 1
            if hi_u > width - 1: hi_u = width - 1
            hi_v = lo_v + 1
            if hi_v > height - 1: hi_v = height - 1
            for ch in range(n_chan):
                out[m, ch] = (
                    tex[lo_v, lo_u, ch] * ((1.0 - fu) * (1.0 - fv))
                    + tex[lo_v, hi_u, ch] * (fu * (1.0 - fv))
                    + tex[hi_v, lo_u, ch] * ((1.0 - fu) * fv)
                    + tex[hi_v, hi_u, ch] * (fu * fv)
                )
    return out_arr


def sample_backward(double[:, :, ::1] tex, double[::1] u, double[::1] v,
                    double[:, ::1] grad_out):
    cdef int height = tex.shape[0]
    cdef int width = tex.shape[1]
    cdef Py_ssize_t n_chan = tex.shape[2]
    cdef Py_ssize_t m_total = u.shape[0]
    gt_arr = np.zeros((height, width, n_chan))
    gu_arr = np.zeros(m_total)
    gv_arr = np.zeros(m_total)
    cdef double[:, :, ::1] gt = gt_arr
    cdef double[::1] gu = gu_arr
    cdef double[::1] gv = gv_arr

    cdef Py_ssize_t m, ch
    cdef int corner, lo_u, lo_v, hi_u, hi_v, row, col
    cdef double fu, fv, w, g
    cdef double t00, t01, t10, t11, gate_u, gate_v

    with nogil:
        # grad_tex scatter: corner-major to match the fallback's np.add.at order
        for corner in range(4):
            for m in range(m_total):
                _sample_corner(u[m], v[m], height, width, &lo_u, &lo_v, &fu, &fv)
                hi_u = lo_u + 1
                if hi_u > width - 1: hi_u = width - 1
                hi_v = lo_v + 1
                if hi_v > height - 1: hi_v = height - 1
                if corner == 0:
                    row = lo_v; col = lo_u; w = (1.0 - fu) * (1.0 - fv)
                elif corner == 1:
                    row = lo_v; col = hi_u; w = fu * (1.0 - fv)
                elif corner == 2:
                    row = hi_v; col = lo_u; w = (1.0 - fu) * fv
                else:
                    row = hi_v; col = hi_u; w = fu * fv
                for ch in range(n_chan):
                    gt[row, col, ch] += grad_out[m, ch] * w

        for m in range(m_total):
            _sample_corner(u[m], v[m], height, width, &lo_u, &lo_v, &fu, &fv)
            hi_u = lo_u + 1
            if hi_u > width - 1: hi_u = width - 1
            hi_v = lo_v + 1
            if hi_v > height - 1: hi_v = height - 1
            t00 = 0.0; t01 = 0.0; t10 = 0.0; t11 = 0.0
            for ch in range(n_chan):
                g = grad_out[m, ch]
                t00 += g * tex[lo_v, lo_u, ch]
                t01 += g * tex[lo_v, hi_u, ch]
                t10 += g * tex[hi_v, lo_u, ch]
                t11 += g * tex[hi_v, hi_u, ch]
            gate_u = 1.0 if (u[m] >= 0.0 and u[m] <= width - 1.0) else 0.0
            gate_v = 1.0 if (v[m] >= 0.0 and v[m] <= height - 1.0) else 0.0
            gu[m] = ((1.0 - fv) * (t01 - t00) + fv * (t11 - t10)) * gate_u
            gv[m] = ((1.0 - fu) * (t10 - t00) + fu * (t11 - t01)) * gate_v
    return gt_arr, gu_arr, gv_arr
