"""JSON schemas for scenes, configs and fit results, plus the CSV loss trace.

Stable file layouts:

scene.json
    {"intrinsics": {"fov_degrees", "width", "height"},
     "input":  {"image": <path>, "pose": {"R": 3x3 row-major, "T": [3]},
                "depth": <path, optional>},
     "target": {"image": <path>, "pose": {...}, "depth": <path, optional>},
     "vis_mask": <path, optional>, "depth_scale_m_per_unit": float,
     "preset": <bundled name, optional>, "seed": int}
    Poses are world-to-camera. Image paths are relative to the JSON file.

fit.json
    {"params": {"grid_w", "grid_h", "offset_logits_x", "offset_logits_y",
                "depth_logits", "depth_scale": {"a","b","c","d"}},
     "intrinsics": {...}, "input_pose": {...}, "input_image": <path>,
     "render": {...}, "connectivity": int,
     "best_iteration": int, "best_loss": float}

config.json (all keys optional)
    {"grid_w", "grid_h", "connectivity", "iterations", "lr", "betas",
     "loss_weights": {"rgb", "grid_offset", "laplacian", "depth"},
     "depth_preset", "seed", "init_from_depth", "render": {...}}

traj.json
    {"keyframes": [{"R": ..., "T": ...}, ...], "frames_per_segment": [int]}
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .errors import ValidationError
from .fitting import FitConfig, FitResult, LossWeights, SceneSample
from .geometry import CameraIntrinsics, CameraPose, DepthScaleConfig, SheetParams
from .imgio import (
    DEPTH_SCALE_M,
    read_depth,
    read_mask_png,
    read_png,
    write_depth,
    write_mask_png,
    write_png,
)
from .raster import RenderSettings
from .scenes import SceneGroundTruth, TrajectorySpec


def pose_to_dict(pose: CameraPose):
    return {"R": pose.rotation.tolist(), "T": pose.translation.tolist()}


def pose_from_dict(d):
    try:
        return CameraPose(d["R"], d["T"])
    except KeyError as exc:
        raise ValidationError(f"pose is missing key {exc}")


def intrinsics_to_dict(intr: CameraIntrinsics):
    return {"fov_degrees": intr.fov_degrees, "width": intr.width, "height": intr.height}


def intrinsics_from_dict(d):
    try:
        return CameraIntrinsics(d["fov_degrees"], d["width"], d["height"])
    except KeyError as exc:
        raise ValidationError(f"intrinsics missing key {exc}")


def render_settings_from_dict(d):
    known = {f: d[f] for f in (
        "faces_per_pixel", "sigma", "gamma", "blur_radius",
        "background_color", "z_near", "z_far") if f in d}
    if known.get("background_color") is not None:
        known["background_color"] = tuple(known["background_color"])
    return RenderSettings(**known)


def render_settings_to_dict(s: RenderSettings):
    return {
        "faces_per_pixel": s.faces_per_pixel, "sigma": s.sigma, "gamma": s.gamma,
        "blur_radius": s.blur_radius,
        "background_color": list(s.background_color) if s.background_color is not None else None,
        "z_near": s.z_near, "z_far": s.z_far,
    }


def loss_weights_from_dict(d):
    known = {f: d[f] for f in ("rgb", "grid_offset", "laplacian", "depth") if f in d}
    return LossWeights(**known)


def fit_config_from_dict(d):
    cfg = FitConfig()
    simple = ("grid_w", "grid_h", "connectivity", "iterations", "lr",
              "beta1", "beta2", "eps", "depth_preset", "seed",
              "init_from_depth", "threads")
    kwargs = {k: d[k] for k in simple if k in d}
    if "betas" in d:
        kwargs["beta1"], kwargs["beta2"] = d["betas"]
    if "loss_weights" in d:
        kwargs["loss_weights"] = loss_weights_from_dict(d["loss_weights"])
    if "render" in d:
        kwargs["render"] = render_settings_from_dict(d["render"])
    for k, v in kwargs.items():
        setattr(cfg, k, v)
    return cfg


def load_fit_config(path):
    with open(path) as fh:
        return fit_config_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# scenes
# ---------------------------------------------------------------------------

def save_scene(out_dir, sample: SceneSample, gt: SceneGroundTruth | None = None,
               preset=None, seed=None):
    """Write scene images + JSON into out_dir; returns the JSON path."""
    os.makedirs(out_dir, exist_ok=True)
    doc = {
        "intrinsics": intrinsics_to_dict(sample.intrinsics),
        "depth_scale_m_per_unit": DEPTH_SCALE_M,
        "input": {"image": "input.png", "pose": pose_to_dict(sample.input_pose)},
        "target": {"image": "target.png", "pose": pose_to_dict(sample.target_pose)},
    }
    if preset is not None:
        doc["preset"] = preset
    if seed is not None:
        doc["seed"] = seed
    write_png(os.path.join(out_dir, "input.png"), sample.input_image)
    write_png(os.path.join(out_dir, "target.png"), sample.target_image)
    if sample.init_depth is not None:
        write_depth(os.path.join(out_dir, "depth_input.png"), sample.init_depth)
        doc["input"]["depth"] = "depth_input.png"
    if sample.target_depth is not None:
        write_depth(os.path.join(out_dir, "depth_target.png"), sample.target_depth)
        doc["target"]["depth"] = "depth_target.png"
    if gt is not None:
        write_mask_png(os.path.join(out_dir, "vis_mask.png"), gt.vis_mask)
        doc["vis_mask"] = "vis_mask.png"
    path = os.path.join(out_dir, "scene.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
    return path


def load_scene(path):
    """Load scene.json; returns (SceneSample, vis_mask | None)."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        doc = json.load(fh)
    try:
        intr = intrinsics_from_dict(doc["intrinsics"])
        scale = doc.get("depth_scale_m_per_unit", DEPTH_SCALE_M)

        def view(key):
            entry = doc[key]
            img = read_png(os.path.join(base, entry["image"]))
            pose = pose_from_dict(entry["pose"])
            depth = None
            if entry.get("depth"):
                depth = read_depth(os.path.join(base, entry["depth"]), scale)
            return img, pose, depth

        in_img, in_pose, in_depth = view("input")
        tgt_img, tgt_pose, tgt_depth = view("target")
    except KeyError as exc:
        raise ValidationError(f"scene file missing key {exc}")
    sample = SceneSample(
        input_image=in_img, target_image=tgt_img,
        input_pose=in_pose, target_pose=tgt_pose, intrinsics=intr,
        target_depth=tgt_depth, init_depth=in_depth,
    )
    vis = None
    if doc.get("vis_mask"):
        vis = read_mask_png(os.path.join(base, doc["vis_mask"]))
    return sample, vis


# ---------------------------------------------------------------------------
# sheet params / fit results
# ---------------------------------------------------------------------------

def params_to_dict(params: SheetParams):
    s = params.depth_scale
    return {
        "grid_w": params.grid_w,
        "grid_h": params.grid_h,
        "offset_logits_x": params.offset_logits_x.values.tolist(),
        "offset_logits_y": params.offset_logits_y.values.tolist(),
        "depth_logits": params.depth_logits.values.tolist(),
        "depth_scale": {"a": s.a, "b": s.b, "c": s.c, "d": s.d},
    }


def params_from_dict(d):
    try:
        scale = DepthScaleConfig(**d["depth_scale"])
        return SheetParams(
            d["grid_w"], d["grid_h"],
            offset_logits_x=d["offset_logits_x"],
            offset_logits_y=d["offset_logits_y"],
            depth_logits=d["depth_logits"],
            depth_scale=scale,
        )
    except KeyError as exc:
        raise ValidationError(f"params missing key {exc}")


def save_fit(path, result: FitResult, sample: SceneSample, settings: RenderSettings,
             connectivity=4, input_image_path=None):
    """Write fit.json; stores the input image beside it if no path is given."""
    base = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(base, exist_ok=True)
    if input_image_path is None:
        input_image_path = os.path.splitext(os.path.basename(path))[0] + "_input.png"
        write_png(os.path.join(base, input_image_path), sample.input_image)
    doc = {
        "params": params_to_dict(result.params),
        "intrinsics": intrinsics_to_dict(sample.intrinsics),
        "input_pose": pose_to_dict(sample.input_pose),
        "input_image": input_image_path,
        "render": render_settings_to_dict(settings),
        "connectivity": connectivity,
        "best_iteration": result.best_iteration,
        "best_loss": result.best_loss,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
    return path


def load_fit(path):
    """Load fit.json; returns (params, view_inputs, settings, connectivity)
    where view_inputs has input_image / input_pose / intrinsics."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        doc = json.load(fh)
    try:
        params = params_from_dict(doc["params"])
        intr = intrinsics_from_dict(doc["intrinsics"])
        pose = pose_from_dict(doc["input_pose"])
        image = read_png(os.path.join(base, doc["input_image"]))
        settings = render_settings_from_dict(doc.get("render", {}))
        connectivity = doc.get("connectivity", 4)
    except KeyError as exc:
        raise ValidationError(f"fit file missing key {exc}")

    class ViewInputs:
        pass

    inputs = ViewInputs()
    inputs.input_image = image
    inputs.input_pose = pose
    inputs.intrinsics = intr
    return params, inputs, settings, connectivity


def write_trace_csv(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "total", "rgb", "grid_offset", "laplacian", "depth"])
        for row in trace:
            writer.writerow([
                row["iteration"], row["total"], row["rgb"],
                row["grid_offset"], row["laplacian"], row["depth"],
            ])


def load_trajectory(path):
    with open(path) as fh:
        doc = json.load(fh)
    try:
        keyframes = [pose_from_dict(p) for p in doc["keyframes"]]
    except KeyError as exc:
        raise ValidationError(f"trajectory missing key {exc}")
    return TrajectorySpec(keyframes, doc.get("frames_per_segment") or [])
