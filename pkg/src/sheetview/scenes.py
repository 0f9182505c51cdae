"""Synthetic scenes with analytic ground truth, plus trajectory rendering.

Scenes are collections of (optionally bounded) textured planes in world
coordinates, rendered by exact ray-plane intersection — an independent code
path from the soft rasterizer, usable as an oracle. Ground truth includes
per-view depth maps and the target-view visibility mask (a target pixel is
visible iff its 3D point lies inside the input frustum and is not occluded
in the input view).

Textures are procedural functions of the world-space hit point, so the two
views are photometrically consistent by construction. The `noise` pattern
is a band-limited random Fourier series — smooth, seeded, and evaluable at
any point.

`warp_oracle` is the second independent path: an exact homography warp of
the input image for a single fronto-parallel plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .errors import GeometryError, ValidationError
from .fitting import SceneSample, predict_view
from .geometry import CameraIntrinsics, CameraPose
from .raster import pixel_centers_ndc


@dataclass
class TexturePattern:
    kind: str  # checker | gradient | noise
    scale: float = 1.0
    seed: int = 0
    colors: tuple = ((0.9, 0.85, 0.2), (0.15, 0.25, 0.8))

    def evaluate(self, points):
        """RGB in [0,1] at world points (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        x, y = pts[..., 0], pts[..., 1]
        if self.kind == "checker":
            parity = (np.floor(x * self.scale) + np.floor(y * self.scale)) % 2
            c0 = np.asarray(self.colors[0])
            c1 = np.asarray(self.colors[1])
            return np.where(parity[..., None] > 0.5, c1, c0)
        if self.kind == "gradient":
            r = np.clip(0.5 + 0.25 * self.scale * x, 0.0, 1.0)
            g = np.clip(0.5 + 0.25 * self.scale * y, 0.0, 1.0)
            b = np.clip(0.5 + 0.125 * self.scale * (x - y), 0.0, 1.0)
            return np.stack([r, g, b], axis=-1)
        if self.kind == "noise":
            rng = np.random.default_rng(self.seed)
            n_waves = 10
            freq = rng.normal(0.0, 1.2 * self.scale, (3, n_waves, 2))
            phase = rng.uniform(0, 2 * np.pi, (3, n_waves))
            amp = rng.uniform(0.4, 1.0, (3, n_waves))
            amp /= amp.sum(axis=1, keepdims=True)
            out = np.empty(x.shape + (3,))
            for c in range(3):
                waves = np.cos(
                    x[..., None] * freq[c, :, 0] + y[..., None] * freq[c, :, 1] + phase[c]
                )
                out[..., c] = 0.5 + 0.42 * (waves * amp[c]).sum(axis=-1)
            return np.clip(out, 0.0, 1.0)
        raise ValidationError(f"unknown texture pattern '{self.kind}'")


@dataclass
class PlanePrimitive:
    """Infinite plane n.(X - p) = 0, optionally bounded along a world axis."""

    point: tuple
    normal: tuple
    texture: TexturePattern
    bound_axis: int | None = None
    bound_lo: float = -np.inf
    bound_hi: float = np.inf

    def intersect(self, origins, dirs):
        """Ray hits: returns (t, valid); t is inf where the ray misses."""
        p = np.asarray(self.point, dtype=np.float64)
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        denom = dirs @ n
        offset = (p - origins) @ n if origins.ndim == 1 else ((p - origins) * n).sum(-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-12, offset / denom, np.inf)
        valid = t > 1e-9
        if self.bound_axis is not None:
            coord = origins[..., self.bound_axis] if origins.ndim > 1 else origins[self.bound_axis]
            hit_coord = coord + t * dirs[..., self.bound_axis]
            valid &= (hit_coord >= self.bound_lo) & (hit_coord <= self.bound_hi)
        return np.where(valid, t, np.inf), valid


@dataclass
class SceneSpec:
    seed: int
    intrinsics: CameraIntrinsics
    input_pose: CameraPose
    target_pose: CameraPose
    primitives: list


@dataclass
class SceneGroundTruth:
    input_depth: np.ndarray   # (H, W) meters, camera z of first hit
    target_depth: np.ndarray
    vis_mask: np.ndarray      # (H, W) bool on the target view


def _camera_rays(intrinsics, pose):
    """World-space ray origins (3,) and unit-z directions (H, W, 3).

    Directions have camera z-component 1, so the ray parameter t equals
    camera-frame depth.
    """
    px, py = pixel_centers_ndc(intrinsics.width, intrinsics.height)
    t = intrinsics.tan_half
    dx, dy = np.meshgrid(px * t, py * t)
    d_cam = np.stack([dx, dy, np.ones_like(dx)], axis=-1)
    R, T = pose.rotation, pose.translation
    origin = -R.T @ T
    dirs = d_cam @ R  # == d_cam @ (R^T)^T: rotate camera dirs into world
    return origin, dirs


def _trace(primitives, origin, dirs):
    """First-hit parameter t (camera depth) and primitive index per ray."""
    best_t = np.full(dirs.shape[:-1], np.inf)
    best_idx = np.full(dirs.shape[:-1], -1, dtype=np.int64)
    for i, prim in enumerate(primitives):
        t, _ = prim.intersect(origin, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_idx = np.where(closer, i, best_idx)
    return best_t, best_idx


def _render_view(spec, pose):
    origin, dirs = _camera_rays(spec.intrinsics, pose)
    t, idx = _trace(spec.primitives, origin, dirs)
    if np.any(~np.isfinite(t)):
        raise GeometryError("scene does not cover every pixel of the view")
    points = origin + t[..., None] * dirs
    image = np.zeros(dirs.shape[:-1] + (3,))
    for i, prim in enumerate(spec.primitives):
        sel = idx == i
        if sel.any():
            image[sel] = prim.texture.evaluate(points[sel])
    return image, t, points


def gen_scene(spec: SceneSpec):
    """Render both views analytically; returns (SceneSample, SceneGroundTruth)."""
    input_image, input_depth, _ = _render_view(spec, spec.input_pose)
    target_image, target_depth, target_points = _render_view(spec, spec.target_pose)

    # visibility: the target pixel's 3D point must fall in the input frustum
    # and be the first thing the input camera sees along its ray
    in_cam = target_points @ spec.input_pose.rotation.T + spec.input_pose.translation
    z_in = in_cam[..., 2]
    tan = spec.intrinsics.tan_half
    with np.errstate(divide="ignore", invalid="ignore"):
        xn = in_cam[..., 0] / (z_in * tan)
        yn = in_cam[..., 1] / (z_in * tan)
    in_frustum = (z_in > 0) & (np.abs(xn) <= 1.0) & (np.abs(yn) <= 1.0)

    origin_in = -spec.input_pose.rotation.T @ spec.input_pose.translation
    to_point = target_points - origin_in
    first_t, _ = _trace(spec.primitives, origin_in, to_point)  # t=1 at the point
    unoccluded = first_t >= 1.0 - 1e-6

    sample = SceneSample(
        input_image=input_image,
        target_image=target_image,
        input_pose=spec.input_pose,
        target_pose=spec.target_pose,
        intrinsics=spec.intrinsics,
        target_depth=target_depth,
        init_depth=input_depth,
    )
    gt = SceneGroundTruth(
        input_depth=input_depth,
        target_depth=target_depth,
        vis_mask=in_frustum & unoccluded,
    )
    return sample, gt


def warp_oracle(input_image, plane_depth, rel_pose: CameraPose,
                intrinsics: CameraIntrinsics):
    """Exact homography warp of the input image to the target view, for a
    fronto-parallel plane at z=plane_depth in the input frame.

    Returns (target_image, valid_mask); invalid pixels (behind the camera or
    sampling outside the input image) are 0.
    """
    if plane_depth <= 0:
        raise GeometryError("plane must be in front of the input camera")
    px, py = pixel_centers_ndc(intrinsics.width, intrinsics.height)
    t = intrinsics.tan_half
    dx, dy = np.meshgrid(px * t, py * t)
    dirs = np.stack([dx, dy, np.ones_like(dx)], axis=-1)  # target-frame rays

    # plane z_in = d expressed in the target frame: R[:,2].(X - T_rel) = d
    R, T = rel_pose.rotation, rel_pose.translation
    n_t = R[:, 2]
    denom = dirs @ n_t
    num = plane_depth + n_t @ T
    with np.errstate(divide="ignore", invalid="ignore"):
        tt = np.where(np.abs(denom) > 1e-12, num / denom, np.inf)
    valid = np.isfinite(tt) & (tt > 0)

    hit_tgt = tt[..., None] * dirs
    hit_in = (hit_tgt - T) @ R  # R^T applied row-wise
    z = hit_in[..., 2]
    valid &= z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = hit_in[..., 0] / (z * t)
        v = hit_in[..., 1] / (z * t)
    col = (u + 1.0) * 0.5 * intrinsics.width - 0.5
    row = (1.0 - v) * 0.5 * intrinsics.height - 0.5
    valid &= (col >= 0) & (col <= intrinsics.width - 1) & \
             (row >= 0) & (row <= intrinsics.height - 1)

    from . import kernels

    image = np.asarray(input_image, dtype=np.float64)
    flat = kernels.sample_forward(
        image, np.clip(col, 0, intrinsics.width - 1).reshape(-1),
        np.clip(row, 0, intrinsics.height - 1).reshape(-1),
    ).reshape(image.shape)
    return np.where(valid[..., None], flat, 0.0), valid


# ---------------------------------------------------------------------------
# bundled scenes (fixed sizes/seeds used by the acceptance suite)
# ---------------------------------------------------------------------------

def _pose_translated(tx=0.0, ty=0.0, tz=0.0, yaw_deg=0.0):
    """World-to-camera pose of a camera moved by (tx,ty,tz) and yawed."""
    yaw = math.radians(yaw_deg)
    Rc = Rotation.from_euler("y", yaw).as_matrix()  # camera orientation in world
    R = Rc.T
    center = np.array([tx, ty, tz])
    return CameraPose(R, -R @ center)


def bundled_scene(name) -> SceneSpec:
    """Deterministic desk-scale scenes used by tests and the CLI presets."""
    intr64 = CameraIntrinsics(90.0, 64, 64)
    if name == "plane":
        return SceneSpec(
            seed=7,
            intrinsics=intr64,
            input_pose=CameraPose.identity(),
            target_pose=_pose_translated(tx=0.18),
            primitives=[
                PlanePrimitive((0, 0, 2.2), (0, 0, -1), TexturePattern("noise", 1.1, seed=7)),
            ],
        )
    if name == "slant":
        return SceneSpec(
            seed=11,
            intrinsics=intr64,
            input_pose=CameraPose.identity(),
            target_pose=_pose_translated(tx=-0.15, yaw_deg=-2.0),
            primitives=[
                PlanePrimitive((0, 0, 2.6), (0.35, 0.0, -1.0),
                               TexturePattern("noise", 0.9, seed=11)),
            ],
        )
    if name == "step":
        return SceneSpec(
            seed=13,
            intrinsics=intr64,
            input_pose=CameraPose.identity(),
            target_pose=_pose_translated(tx=0.2),
            primitives=_step_primitives(seed=13),
        )
    if name == "two_plane":
        return SceneSpec(
            seed=21,
            intrinsics=CameraIntrinsics(90.0, 128, 128),
            input_pose=CameraPose.identity(),
            target_pose=_pose_translated(tx=0.22),
            primitives=_step_primitives(seed=21),
        )
    raise ValidationError(f"unknown bundled scene '{name}' "
                          "(expected plane | slant | step | two_plane)")


def _step_primitives(seed):
    near = PlanePrimitive((0, 0, 1.9), (0, 0, -1), TexturePattern("noise", 1.4, seed=seed),
                          bound_axis=0, bound_lo=-np.inf, bound_hi=0.0)
    far = PlanePrimitive((0, 0, 3.1), (0, 0, -1), TexturePattern("noise", 0.8, seed=seed + 1),
                         bound_axis=0, bound_lo=0.0, bound_hi=np.inf)
    # a backstop so rays that miss both bounded planes still hit something
    back = PlanePrimitive((0, 0, 3.1000001), (0, 0, -1),
                          TexturePattern("noise", 0.8, seed=seed + 1))
    return [near, far, back]


BUNDLED_SCENE_NAMES = ("plane", "slant", "step", "two_plane")


# ---------------------------------------------------------------------------
# camera trajectories
# ---------------------------------------------------------------------------

@dataclass
class TrajectorySpec:
    keyframes: list                      # CameraPose, >= 2
    frames_per_segment: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.keyframes) < 2:
            raise ValidationError("trajectory needs at least 2 keyframes")
        if not self.frames_per_segment:
            self.frames_per_segment = [1] * (len(self.keyframes) - 1)
        if len(self.frames_per_segment) != len(self.keyframes) - 1:
            raise ValidationError("need one frame count per keyframe segment")
        if any(n < 1 for n in self.frames_per_segment):
            raise ValidationError("frame counts must be >= 1")


def interpolate_trajectory(traj: TrajectorySpec):
    """Pose sequence: keyframe 0, then n_s poses per segment (linear camera
    center, spherical-linear rotation), ending exactly on each keyframe."""
    poses = [traj.keyframes[0]]
    for seg, n in enumerate(traj.frames_per_segment):
        a, b = traj.keyframes[seg], traj.keyframes[seg + 1]
        rots = Rotation.from_matrix(np.stack([a.rotation, b.rotation]))
        slerp = Slerp([0.0, 1.0], rots)
        ca = -a.rotation.T @ a.translation
        cb = -b.rotation.T @ b.translation
        for i in range(1, n + 1):
            f = i / n
            R = slerp(f).as_matrix()
            center = (1 - f) * ca + f * cb
            poses.append(CameraPose(R, -R @ center))
    return poses


def render_trajectory(params, sample, traj: TrajectorySpec, out_dir,
                      settings=None, connectivity=4):
    """Render one PNG per interpolated pose; returns the written paths."""
    import os

    from .imgio import write_png

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, pose in enumerate(interpolate_trajectory(traj)):
        view = predict_view(params, sample, pose, settings=settings,
                            connectivity=connectivity, with_depth=False)
        path = os.path.join(out_dir, f"{i:05d}.png")
        write_png(path, view.image.values)
        paths.append(path)
    return paths
