"""Differentiable texture reconstruction by forward splatting.

The sheet's UV texture is rebuilt from the input view: rasterize the mesh
from the input camera, split the image into per-fragment contributions
weighted by the blend probabilities, scatter each contribution to its UV
texel coordinates with bilinear weights (forward mapping), normalize by the
identically-splatted weight mass, and fill any remaining holes with a
normalized Gaussian blur.

The texture map has the same size as the image; with the lattice UV layout
this makes the pixel -> texel map close to the identity for an undeformed
sheet, so holes are rare. Everything is differentiable with respect to both
the input image and the mesh vertices; the hole mask is a constant of the
forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffBuffer, SplatDiagnostics
from .errors import ConfigError
from .geometry import CameraIntrinsics, SheetMesh
from .raster import (
    BlendWeights,
    FragmentBuffer,
    RenderSettings,
    blend_weights,
    interpolate_uv_texels,
    rasterize,
)

SPLAT_WEIGHT_FLOOR = 1e-4   # normalization floor for the splatted weight mass
HOLE_FILL_FLOOR = 1e-8      # floor for the blurred-mask denominator
GAUSS_KERNEL_SIZE = 7
GAUSS_SIGMA = 2.0


@dataclass
class TextureMap:
    colors: DiffBuffer            # (H_uv, W_uv, 3)
    weight: DiffBuffer            # (H_uv, W_uv) splat weight mass
    hole_mask: np.ndarray         # (H_uv, W_uv) bool, True = received splat
    diagnostics: SplatDiagnostics

    @property
    def width(self):
        return self.colors.shape[1]

    @property
    def height(self):
        return self.colors.shape[0]


@dataclass
class FlowField:
    """Per-fragment UV targets in texel coordinates, plus dense views."""

    frags: FragmentBuffer
    u: DiffBuffer  # (M,) texel column coordinate
    v: DiffBuffer  # (M,) texel row coordinate

    def dense(self):
        f = self.frags
        flow = np.full((f.height, f.width, f.faces_per_pixel, 2), np.nan)
        flow[f.pix_i, f.pix_j, f.slot, 0] = self.u.values
        flow[f.pix_i, f.pix_j, f.slot, 1] = self.v.values
        valid = f.face_grid >= 0
        return flow, valid


def gaussian_kernel(size=GAUSS_KERNEL_SIZE, sigma=GAUSS_SIGMA):
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def face_flow(frags: FragmentBuffer, mesh: SheetMesh,
              tex_width=None, tex_height=None) -> FlowField:
    """Map each covered (pixel, slot) to texel coordinates on its face."""
    u, v = interpolate_uv_texels(
        frags, mesh,
        tex_width if tex_width is not None else frags.width,
        tex_height if tex_height is not None else frags.height,
    )
    return FlowField(frags, u, v)


def decompose_image(image, blend: BlendWeights):
    """Split the image into K per-slot layers I^k = I * p^k."""
    image = ad.as_buffer(image)
    f = blend.frags
    height, width = image.shape[:2]
    layers = []
    for k in range(f.faces_per_pixel):
        in_slot = f.slot == k
        pk = ad.scatter_add0(
            blend.p[np.flatnonzero(in_slot)], f.pix_flat[in_slot], f.n_pixels
        )
        layers.append(image * ad.reshape(pk, (height, width, 1)))
    return layers


def forward_map(values, u, v, height, width, diagnostics=None):
    """Bilinear scatter of per-source values to a (height, width, C) grid.

    `values` is (M,) or (M, C); each source deposits its value on the four
    texels around (u, v) with weights summing to 1. Out-of-bounds corners
    are clipped and counted in `diagnostics`.
    """
    values = ad.as_buffer(values)
    squeeze = values.values.ndim == 1
    if squeeze:
        values = ad.reshape(values, (values.shape[0], 1))
    out = ad.splat2d(values, u, v, height, width, diagnostics=diagnostics)
    if squeeze:
        out = ad.reshape(out, (height, width))
    return out


def normalize_splat(t_sum, w_sum):
    """t_sum / max(w_sum, floor); hole mask marks texels with any mass."""
    t_sum = ad.as_buffer(t_sum)
    w_sum = ad.as_buffer(w_sum)
    height, width = w_sum.shape
    denom = ad.reshape(ad.clip(w_sum, SPLAT_WEIGHT_FLOOR, np.inf), (height, width, 1))
    hole_mask = w_sum.values > 0.0
    return t_sum / denom, hole_mask


def fill_holes(t_norm, hole_mask):
    """Fill mask-0 texels with a normalized Gaussian blur of the valid ones.

    Valid texels pass through unchanged; holes farther than the kernel
    support from any valid texel keep value 0 (floored denominator).
    """
    t_norm = ad.as_buffer(t_norm)
    kernel = gaussian_kernel()
    blurred = ad.conv2d_same(t_norm, kernel)
    from scipy.ndimage import convolve

    mass = convolve(hole_mask.astype(np.float64), kernel, mode="constant", cval=0.0)
    inv_mass = (1.0 / np.maximum(mass, HOLE_FILL_FLOOR))[:, :, None]
    filled = blurred * inv_mass
    return ad.where(hole_mask[:, :, None], t_norm, filled)


def sample_texture(image, mesh: SheetMesh, intrinsics: CameraIntrinsics,
                   settings: RenderSettings, frags=None, blend=None,
                   threads=1) -> TextureMap:
    """Reconstruct the sheet's UV texture from the input view.

    Composes rasterize -> blend -> decompose -> forward-map (colors and
    weights accumulated over all K slots) -> normalize -> hole fill.
    """
    image = ad.as_buffer(image)
    height, width = intrinsics.height, intrinsics.width
    if image.shape != (height, width, 3):
        raise ConfigError(
            f"image shape {image.shape} does not match intrinsics {(height, width, 3)}"
        )
    if frags is None:
        frags = rasterize(mesh, intrinsics, settings, threads=threads)
    if blend is None:
        blend = blend_weights(frags, settings)

    diag = SplatDiagnostics()
    m = frags.n_fragments
    if m == 0:
        return TextureMap(
            colors=DiffBuffer(np.zeros((height, width, 3))),
            weight=DiffBuffer(np.zeros((height, width))),
            hole_mask=np.zeros((height, width), dtype=bool),
            diagnostics=diag,
        )

    flow = face_flow(frags, mesh, width, height)
    pixel_colors = ad.take0(ad.reshape(image, (height * width, 3)), frags.pix_flat)
    weighted = pixel_colors * ad.reshape(blend.p, (m, 1))

    t_sum = ad.splat2d(weighted, flow.u, flow.v, height, width, diagnostics=diag)
    w_sum = forward_map(blend.p, flow.u, flow.v, height, width, diagnostics=diag)

    t_norm, hole_mask = normalize_splat(t_sum, w_sum)
    colors = fill_holes(t_norm, hole_mask)
    return TextureMap(colors=colors, weight=w_sum, hole_mask=hole_mask, diagnostics=diag)
