"""Soft rasterization and textured rendering.

Rasterization is split into two stages:

  1. Discrete selection (kernel-backed, not differentiated): per pixel,
     find the K nearest covering faces by perspective-interpolated depth.
     A face covers a pixel when the pixel is inside its NDC projection or
     within `blur_radius` of its boundary.

  2. Differentiable recomputation: for the selected (pixel, face) pairs,
     rebuild screen barycentrics, perspective-correct barycentrics,
     interpolated depth Z and coverage D = sigmoid(sign * dist^2 / sigma)
     on the autodiff tape, so gradients flow to the mesh vertices. The
     inside/outside sign, the face selection and the depth sort order are
     constants of the forward pass.

Blending follows the softmax-over-normalized-inverse-depth form: with
zhat = clamp((z_far - Z)/(z_far - z_near), 0, 1), fragment weights are
D * exp(zhat / gamma) against a background weight exp(0) = 1, normalized
per pixel (computed with a max-shift so gamma = 1e-4 cannot overflow).

Selection runs over horizontal pixel tiles; tiles write disjoint output
rows, so serial and threaded runs are bit-identical.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import DiffBuffer
from .errors import ConfigError, ValidationError
from .geometry import CameraIntrinsics, SheetMesh


@dataclass(frozen=True)
class RenderSettings:
    faces_per_pixel: int = 10
    sigma: float = 1e-4
    gamma: float = 1e-4
    blur_radius: float = 1e-8
    background_color: tuple | None = None  # None -> caller supplies (mean RGB)
    z_near: float = 0.1
    z_far: float = 100.0

    def __post_init__(self):
        if self.faces_per_pixel < 1:
            raise ValidationError("faces_per_pixel must be >= 1")
        if self.sigma <= 0 or self.gamma <= 0:
            raise ValidationError("sigma and gamma must be positive")
        if not 0.0 < self.z_near < self.z_far:
            raise ValidationError("need 0 < z_near < z_far")

    def resolve_background(self, image=None):
        if self.background_color is not None:
            return np.asarray(self.background_color, dtype=np.float64)
        if image is not None:
            vals = image.values if isinstance(image, DiffBuffer) else np.asarray(image)
            return vals.reshape(-1, vals.shape[-1]).mean(axis=0)
        return np.zeros(3)


@dataclass
class FragmentBuffer:
    """Per-pixel K-deep fragment lists, flat over the M valid fragments."""

    width: int
    height: int
    faces_per_pixel: int
    face_grid: np.ndarray          # (H, W, K) int32, -1 = empty, ascending z
    pix_i: np.ndarray              # (M,)
    pix_j: np.ndarray              # (M,)
    slot: np.ndarray               # (M,)
    frag_face: np.ndarray          # (M,)
    bary: DiffBuffer               # (M, 3) perspective-correct, sums to 1
    depth: DiffBuffer              # (M,) meters
    coverage: DiffBuffer           # (M,) in [0, 1]
    inside_sign: np.ndarray = field(repr=False, default=None)

    @property
    def n_fragments(self):
        return self.frag_face.shape[0]

    @property
    def n_pixels(self):
        return self.width * self.height

    @property
    def pix_flat(self):
        return self.pix_i * np.int64(self.width) + self.pix_j

    def _dense(self, flat_values, fill=0.0):
        out = np.full(
            (self.height, self.width, self.faces_per_pixel) + flat_values.shape[1:],
            fill,
        )
        out[self.pix_i, self.pix_j, self.slot] = flat_values
        return out

    def depth_grid(self):
        return self._dense(self.depth.values, fill=np.nan)

    def coverage_grid(self):
        return self._dense(self.coverage.values)

    def bary_grid(self):
        return self._dense(self.bary.values, fill=np.nan)


@dataclass
class BlendWeights:
    """Per-fragment blend probabilities plus per-pixel background weight."""

    frags: FragmentBuffer
    p: DiffBuffer        # (M,) aligned with frags
    p_bg: DiffBuffer     # (n_pixels,)

    def p_grid(self):
        return self.frags._dense(self.p.values)

    def p_bg_grid(self):
        return self.p_bg.values.reshape(self.frags.height, self.frags.width)


@dataclass
class RenderedView:
    image: DiffBuffer            # (H, W, 3) in [0, 1]-ish (convex hull of inputs)
    mask: DiffBuffer             # (H, W) soft foreground coverage
    depth: DiffBuffer | None     # (H, W) blend-expected depth, 0 where empty

    @property
    def binary_mask(self):
        return self.mask.values > 0.5


def pixel_centers_ndc(width, height):
    px = (np.arange(width) + 0.5) * (2.0 / width) - 1.0
    py = 1.0 - (np.arange(height) + 0.5) * (2.0 / height)
    return px, py


def _select_faces(mesh, intrinsics, settings, threads=1):
    """Discrete top-K selection; returns (H, W, K) int32 face grid."""
    vals = mesh.vertices.values
    z = vals[:, 2]
    keep = (z[mesh.faces] >= settings.z_near).all(axis=1)
    face_ids = np.flatnonzero(keep).astype(np.int32)
    faces_kept = np.ascontiguousarray(mesh.faces[keep], dtype=np.int32)

    width, height = intrinsics.width, intrinsics.height
    face_grid = np.full((height, width, settings.faces_per_pixel), -1, dtype=np.int32)
    if faces_kept.shape[0] == 0:
        return face_grid

    zsafe = np.where(z > 0, z, 1.0)  # culled-face vertices; never read
    t = intrinsics.tan_half
    xn = vals[:, 0] / (zsafe * t)
    yn = vals[:, 1] / (zsafe * t)

    def run(row0, row1):
        kernels.raster_select(
            xn, yn, z, faces_kept, face_ids,
            width, height, settings.faces_per_pixel, settings.blur_radius,
            row0, row1, face_grid,
        )

    if threads <= 1:
        run(0, height)
    else:
        step = -(-height // threads)
        spans = [(r, min(r + step, height)) for r in range(0, height, step)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda s: run(*s), spans))
    return face_grid


def rasterize(mesh: SheetMesh, intrinsics: CameraIntrinsics, settings: RenderSettings,
              threads=1) -> FragmentBuffer:
    """Soft-rasterize a camera-frame mesh into a K-deep fragment buffer."""
    face_grid = _select_faces(mesh, intrinsics, settings, threads=threads)
    width, height = intrinsics.width, intrinsics.height

    pix_i, pix_j, slot = np.nonzero(face_grid >= 0)
    frag_face = face_grid[pix_i, pix_j, slot].astype(np.int64)
    m = frag_face.shape[0]
    if m == 0:
        empty = DiffBuffer(np.zeros((0,)))
        return FragmentBuffer(
            width, height, settings.faces_per_pixel, face_grid,
            pix_i, pix_j, slot, frag_face,
            bary=DiffBuffer(np.zeros((0, 3))), depth=empty,
            coverage=DiffBuffer(np.zeros((0,))), inside_sign=np.zeros((0,)),
        )

    corners = mesh.faces[frag_face].astype(np.int64)  # (M, 3)
    vtx = ad.reshape(ad.take0(mesh.vertices, corners.reshape(-1)), (m, 3, 3))
    t = intrinsics.tan_half
    vz = vtx[:, :, 2]
    xn = vtx[:, :, 0] / (vz * t)
    yn = vtx[:, :, 1] / (vz * t)

    px_all, py_all = pixel_centers_ndc(width, height)
    px, py = px_all[pix_j], py_all[pix_i]

    x0, x1, x2 = xn[:, 0], xn[:, 1], xn[:, 2]
    y0, y1, y2 = yn[:, 0], yn[:, 1], yn[:, 2]

    a2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    w0 = ((x1 - px) * (y2 - py) - ((x2 - px) * (y1 - py))) / a2
    w1 = ((x2 - px) * (y0 - py) - ((x0 - px) * (y2 - py))) / a2
    w2 = ((x0 - px) * (y1 - py) - ((x1 - px) * (y0 - py))) / a2
    lam = ad.stack([w0, w1, w2], axis=1)  # screen-space barycentrics

    sign = np.where(np.min(lam.values, axis=1) >= 0.0, 1.0, -1.0)

    d2min = None
    for ax, ay, bx, by in ((x0, y0, x1, y1), (x1, y1, x2, y2), (x2, y2, x0, y0)):
        ex = bx - ax
        ey = by - ay
        len2 = ex * ex + ey * ey
        tt = ad.clip(((px - ax) * ex + (py - ay) * ey) / len2, 0.0, 1.0)
        dx = px - (ax + tt * ex)
        dy = py - (ay + tt * ey)
        d2 = dx * dx + dy * dy
        d2min = d2 if d2min is None else ad.minimum(d2min, d2)

    coverage = ad.sigmoid(d2min * (sign / settings.sigma))

    iz = 1.0 / vz
    denom = ad.sum_(lam * iz, axis=1)
    depth = 1.0 / denom
    bary = lam * iz * ad.reshape(depth, (m, 1))  # perspective-correct

    return FragmentBuffer(
        width, height, settings.faces_per_pixel, face_grid,
        pix_i, pix_j, slot, frag_face,
        bary=bary, depth=depth, coverage=coverage, inside_sign=sign,
    )


def blend_weights(frags: FragmentBuffer, settings: RenderSettings) -> BlendWeights:
    """Softmax blend probabilities over fragments plus the background."""
    n_pix = frags.n_pixels
    if frags.n_fragments == 0:
        return BlendWeights(
            frags,
            p=DiffBuffer(np.zeros((0,))),
            p_bg=DiffBuffer(np.ones(n_pix)),
        )
    pix = frags.pix_flat
    zhat = ad.clip(
        (settings.z_far - frags.depth) * (1.0 / (settings.z_far - settings.z_near)),
        0.0, 1.0,
    )
    e = zhat * (1.0 / settings.gamma)

    # max-shift per pixel (background exponent 0 included); constant wrt grads
    shift = np.zeros(n_pix)
    np.maximum.at(shift, pix, e.values)

    w = frags.coverage * ad.exp(e - shift[pix])
    bg_w = np.exp(-shift)
    denom = ad.scatter_add0(w, pix, n_pix) + bg_w
    # an all-underflow pixel degenerates to pure background
    dead = denom.values <= 0.0
    safe = ad.where(dead, DiffBuffer(np.ones(n_pix)), denom)
    p = w / ad.take0(safe, pix)
    p_bg = ad.where(dead, DiffBuffer(np.ones(n_pix)), DiffBuffer(bg_w) / safe)
    return BlendWeights(frags, p=p, p_bg=p_bg)


def interpolate_uv_texels(frags: FragmentBuffer, mesh: SheetMesh, tex_width, tex_height):
    """Barycentric-interpolated UVs scaled to texel coordinates (u=col, v=row).

    Texel t has UV center (t + 0.5) / size, so u_tex = u * W - 0.5.
    """
    corner_uv = mesh.uvs[mesh.faces[frags.frag_face]]  # (M, 3, 2) constants
    u = ad.sum_(frags.bary * corner_uv[:, :, 0], axis=1)
    v = ad.sum_(frags.bary * corner_uv[:, :, 1], axis=1)
    return u * float(tex_width) - 0.5, v * float(tex_height) - 0.5


def render_textured(mesh: SheetMesh, texture, intrinsics: CameraIntrinsics,
                    settings: RenderSettings, frags=None, blend=None,
                    with_depth=True, threads=1) -> RenderedView:
    """Render the textured mesh from the camera of `intrinsics`' frame.

    `texture` is a TextureMap (its colors are used) or an (H, W, 3) array /
    DiffBuffer. Pass precomputed frags/blend to reuse a rasterization.
    """
    colors = getattr(texture, "colors", texture)
    colors = ad.as_buffer(colors)
    if colors.values.ndim != 3 or colors.shape[2] != 3:
        raise ConfigError(f"texture must be (H, W, 3), got {colors.shape}")
    if frags is None:
        frags = rasterize(mesh, intrinsics, settings, threads=threads)
    if blend is None:
        blend = blend_weights(frags, settings)

    width, height = intrinsics.width, intrinsics.height
    n_pix = frags.n_pixels
    bg = settings.resolve_background()
    m = frags.n_fragments

    if m == 0:
        image = np.tile(bg, (height, width, 1))
        return RenderedView(
            image=DiffBuffer(image),
            mask=DiffBuffer(np.zeros((height, width))),
            depth=DiffBuffer(np.zeros((height, width))) if with_depth else None,
        )

    u, v = interpolate_uv_texels(frags, mesh, colors.shape[1], colors.shape[0])
    texel = ad.sample2d(colors, u, v)  # (M, 3)
    p_col = ad.reshape(blend.p, (m, 1))
    fg = ad.scatter_add0(texel * p_col, frags.pix_flat, n_pix)  # (P, 3)
    image = fg + ad.reshape(blend.p_bg, (n_pix, 1)) * bg
    image = ad.reshape(image, (height, width, 3))
    mask = ad.reshape(1.0 - blend.p_bg, (height, width))

    depth = None
    if with_depth:
        fg_w = ad.scatter_add0(blend.p, frags.pix_flat, n_pix)
        num = ad.scatter_add0(blend.p * frags.depth, frags.pix_flat, n_pix)
        covered = fg_w.values > 1e-12
        depth = ad.where(
            covered, num / ad.clip(fg_w, 1e-12, np.inf), DiffBuffer(np.zeros(n_pix))
        )
        depth = ad.reshape(depth, (height, width))

    return RenderedView(image=image, mask=mask, depth=depth)
