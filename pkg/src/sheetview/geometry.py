"""Sheet geometry: cameras, parameter decoding, mesh construction, regularizers.

Coordinate conventions used throughout the package:

  Camera frame (right-handed):
    x right, y up, z forward along the optical axis (depth, meters).
    Poses are world-to-camera maps V_cam = R @ V_world + T.

  NDC:
    x in [-1, 1] left to right, y in [-1, 1] with +1 at the TOP of the
    image (y up). A vertex (x, y, z) projects to
    (x / (z * tan_half), y / (z * tan_half)) where tan_half = tan(fov/2).
    The same field of view applies to both axes.

  Image / pixel frame:
    row i = 0 at the top, column j = 0 at the left; pixel centers sit at
    NDC ((j + 0.5) * 2/W - 1, 1 - (i + 0.5) * 2/H).

  Sheet lattice:
    grid_w columns by grid_h rows of vertices; vertex (w, h) has anchor
    NDC (-1 + 2w/(grid_w-1), 1 - 2h/(grid_h-1)), flat index h*grid_w + w,
    and UV (w/(grid_w-1), h/(grid_h-1)). Each grid cell splits into two
    triangles along its (w, h) -> (w+1, h+1) diagonal.

The per-vertex offsets are bounded by construction: the decoded offset is
tanh(logit) / (grid_w - 1) (resp. grid_h), so a vertex can never move past
its lattice neighbors' anchors. Depth decodes through
z = a / (b * sigmoid(psi) + c) + d, a strictly decreasing map from logit to
a bounded positive depth range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DiffBuffer
from .errors import GeometryError, ValidationError


@dataclass(frozen=True)
class CameraIntrinsics:
    fov_degrees: float
    width: int
    height: int

    def __post_init__(self):
        if not 0.0 < self.fov_degrees < 180.0:
            raise ValidationError(f"fov_degrees must be in (0, 180), got {self.fov_degrees}")
        if self.width < 2 or self.height < 2:
            raise ValidationError("image must be at least 2x2 pixels")

    @property
    def tan_half(self):
        return math.tan(math.radians(self.fov_degrees) / 2.0)


class CameraPose:
    """World-to-camera rigid transform: V_cam = R @ V_world + T."""

    def __init__(self, rotation, translation):
        R = np.asarray(rotation, dtype=np.float64)
        T = np.asarray(translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValidationError(f"rotation must be 3x3, got {R.shape}")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise ValidationError("rotation is not orthonormal within 1e-6")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValidationError("rotation determinant is not +1 within 1e-6")
        self.rotation = R
        self.translation = T

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def inverse(self):
        return CameraPose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other):
        """self o other: apply `other` first, then `self`."""
        return CameraPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points):
        return np.asarray(points) @ self.rotation.T + self.translation

    def __eq__(self, other):
        return (
            isinstance(other, CameraPose)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )


def relative_pose(input_pose: CameraPose, target_pose: CameraPose) -> CameraPose:
    """Map input-camera coordinates to target-camera coordinates."""
    return target_pose.compose(input_pose.inverse())


@dataclass(frozen=True)
class DepthScaleConfig:
    """z = a / (b * sigmoid(psi) + c) + d."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0 or self.c <= 0:
            raise ValidationError("depth scale requires a, b, c > 0")
        if self.z_min <= 0:
            raise ValidationError(
                f"implied depth range ({self.z_min}, {self.z_max}) must be positive"
            )

    @property
    def z_min(self):
        return self.a / (self.b + self.c) + self.d

    @property
    def z_max(self):
        return self.a / self.c + self.d

    def invert(self, z):
        """Logit psi such that decode(psi) = z, clamped to the open range."""
        z = np.clip(np.asarray(z, dtype=np.float64), self.z_min * (1 + 1e-9), self.z_max * (1 - 1e-9))
        s = (self.a / (z - self.d) - self.c) / self.b
        s = np.clip(s, 1e-7, 1.0 - 1e-7)
        return np.log(s / (1.0 - s))


# Appendix-style presets: indoor scenes vs. a doubled wide range.
DEPTH_PRESETS = {
    "indoor": DepthScaleConfig(1.0, 0.75, 0.01, -1.0),
    "wide": DepthScaleConfig(2.0, 0.75, 0.01, -2.0),
}


class SheetParams:
    """Optimizable scene representation: per-vertex offset and depth logits."""

    def __init__(self, grid_w, grid_h, offset_logits_x=None, offset_logits_y=None,
                 depth_logits=None, depth_scale=None, requires_grad=False):
        if grid_w < 2 or grid_h < 2:
            raise ValidationError("grid must be at least 2x2")
        self.grid_w = int(grid_w)
        self.grid_h = int(grid_h)
        self.depth_scale = depth_scale or DEPTH_PRESETS["indoor"]

        def prep(arr, name):
            if arr is None:
                arr = np.zeros((self.grid_h, self.grid_w))
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != (self.grid_h, self.grid_w):
                raise ValidationError(
                    f"{name} must have shape (grid_h, grid_w)={self.grid_h, self.grid_w}, got {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
            return DiffBuffer(arr.copy(), requires_grad=requires_grad)

        self.offset_logits_x = prep(offset_logits_x, "offset_logits_x")
        self.offset_logits_y = prep(offset_logits_y, "offset_logits_y")
        self.depth_logits = prep(depth_logits, "depth_logits")

    @property
    def n_vertices(self):
        return self.grid_w * self.grid_h

    def leaf_buffers(self):
        return {
            "offset_logits_x": self.offset_logits_x,
            "offset_logits_y": self.offset_logits_y,
            "depth_logits": self.depth_logits,
        }

    def copy(self, requires_grad=False):
        return SheetParams(
            self.grid_w, self.grid_h,
            self.offset_logits_x.values, self.offset_logits_y.values,
            self.depth_logits.values, self.depth_scale,
            requires_grad=requires_grad,
        )


@dataclass
class SheetMesh:
    """Camera-space grid mesh: vertices (N,3) buffer, faces (F,3), uvs (N,2)."""

    grid_w: int
    grid_h: int
    vertices: DiffBuffer
    faces: np.ndarray
    uvs: np.ndarray

    @property
    def n_vertices(self):
        return self.vertices.shape[0]


def _check_logits(buf, name):
    if not np.all(np.isfinite(buf.values)):
        raise ValidationError(f"{name} contains non-finite values")


def grid_anchors(grid_w, grid_h):
    """Anchor NDC positions (ax, ay) of the undeformed lattice, flattened."""
    ax = -1.0 + 2.0 * np.arange(grid_w) / (grid_w - 1)
    ay = 1.0 - 2.0 * np.arange(grid_h) / (grid_h - 1)
    AX, AY = np.meshgrid(ax, ay)  # (grid_h, grid_w)
    return AX, AY


def lattice_uvs(grid_w, grid_h):
    u = np.arange(grid_w) / (grid_w - 1)
    v = np.arange(grid_h) / (grid_h - 1)
    U, V = np.meshgrid(u, v)
    return np.stack([U.reshape(-1), V.reshape(-1)], axis=1)


def grid_faces(grid_w, grid_h):
    """Two triangles per cell, split along the (w,h)->(w+1,h+1) diagonal."""
    idx = np.arange(grid_w * grid_h).reshape(grid_h, grid_w)
    a = idx[:-1, :-1].reshape(-1)  # (w, h)
    b = idx[:-1, 1:].reshape(-1)   # (w+1, h)
    c = idx[1:, :-1].reshape(-1)   # (w, h+1)
    d = idx[1:, 1:].reshape(-1)    # (w+1, h+1)
    tris = np.concatenate(
        [np.stack([a, b, d], axis=1), np.stack([a, d, c], axis=1)], axis=0
    )
    return np.ascontiguousarray(tris, dtype=np.int32)


def decode_offsets(params: SheetParams):
    """Per-vertex NDC offsets (dx, dy): tanh(logit) / (grid - 1)."""
    _check_logits(params.offset_logits_x, "offset_logits_x")
    _check_logits(params.offset_logits_y, "offset_logits_y")
    dx = ad.tanh(params.offset_logits_x) * (1.0 / (params.grid_w - 1))
    dy = ad.tanh(params.offset_logits_y) * (1.0 / (params.grid_h - 1))
    return dx, dy


def decode_depth(params: SheetParams):
    """Per-vertex depth z = a / (b * sigmoid(psi) + c) + d."""
    _check_logits(params.depth_logits, "depth_logits")
    s = params.depth_scale
    return s.a / (ad.sigmoid(params.depth_logits) * s.b + s.c) + s.d


def build_mesh(params: SheetParams, intrinsics: CameraIntrinsics, connectivity=4) -> SheetMesh:
    """Assemble the camera-space sheet mesh from decoded offsets and depths."""
    if connectivity not in (4, 8):
        raise ValidationError("connectivity must be 4 or 8")
    dx, dy = decode_offsets(params)
    z = decode_depth(params)
    if np.any(z.values <= 0.0):
        raise GeometryError("decoded depth must be strictly positive")

    AX, AY = grid_anchors(params.grid_w, params.grid_h)
    t = intrinsics.tan_half
    x = z * (dx + AX) * t
    y = z * (dy + AY) * t
    n = params.n_vertices
    vertices = ad.stack(
        [ad.reshape(x, (n,)), ad.reshape(y, (n,)), ad.reshape(z, (n,))], axis=1
    )
    return SheetMesh(
        grid_w=params.grid_w,
        grid_h=params.grid_h,
        vertices=vertices,
        faces=grid_faces(params.grid_w, params.grid_h),
        uvs=lattice_uvs(params.grid_w, params.grid_h),
    )


def transform_vertices(mesh: SheetMesh, pose: CameraPose) -> SheetMesh:
    """Apply a rigid transform to the mesh vertices; faces and UVs unchanged."""
    moved = ad.affine_rows(mesh.vertices, pose.rotation, pose.translation)
    return SheetMesh(mesh.grid_w, mesh.grid_h, moved, mesh.faces, mesh.uvs)


def grid_offset_reg(params: SheetParams) -> DiffBuffer:
    """Sum of squared decoded offsets over all vertices."""
    dx, dy = decode_offsets(params)
    return ad.sum_(dx * dx) + ad.sum_(dy * dy)


def grid_neighbors(grid_w, grid_h, connectivity=4):
    """Directed neighbor edge list (src, dst) plus per-vertex degree."""
    if connectivity not in (4, 8):
        raise ValidationError("connectivity must be 4 or 8")
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    idx = np.arange(grid_w * grid_h).reshape(grid_h, grid_w)
    src, dst = [], []
    for dh, dw in steps:
        hs = slice(max(0, -dh), grid_h - max(0, dh))
        ws = slice(max(0, -dw), grid_w - max(0, dw))
        hn = slice(max(0, dh), grid_h - max(0, -dh))
        wn = slice(max(0, dw), grid_w - max(0, -dw))
        dst.append(idx[hs, ws].reshape(-1))
        src.append(idx[hn, wn].reshape(-1))
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    degree = np.bincount(dst, minlength=grid_w * grid_h).astype(np.float64)
    return src, dst, degree


def laplacian_reg(mesh: SheetMesh, connectivity=4) -> DiffBuffer:
    """L1 norm of each vertex's summed neighbor-difference vector, totalled.

    Boundary vertices use their existing (truncated) neighborhoods.
    """
    src, dst, degree = grid_neighbors(mesh.grid_w, mesh.grid_h, connectivity)
    nbr_sum = ad.scatter_add0(ad.take0(mesh.vertices, src), dst, mesh.n_vertices)
    diff = nbr_sum - mesh.vertices * degree[:, None]
    return ad.sum_(ad.absolute(diff))


def export_obj(mesh: SheetMesh, path):
    """Write the mesh as Wavefront OBJ (v/vt/f); vt flips v for viewers."""
    lines = []
    for x, y, z in mesh.vertices.values:
        lines.append(f"v {x:.8g} {y:.8g} {z:.8g}")
    for u, v in mesh.uvs:
        lines.append(f"vt {u:.8g} {1.0 - v:.8g}")
    for a, b, c in mesh.faces:
        lines.append(f"f {a + 1}/{a + 1} {b + 1}/{b + 1} {c + 1}/{c + 1}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
