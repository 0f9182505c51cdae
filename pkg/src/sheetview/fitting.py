"""Losses, Adam, and per-scene fitting of the sheet parameters.

One fitting session owns a SheetParams block and repeats: build the mesh in
the input camera frame, reconstruct its texture from the input image,
transform to the target frame, render, and descend on

    L = w_rgb * L1(render, target) + w_grid * L_g + w_lap * L_m
        (+ w_depth * L1(rendered depth, target depth) when supervised)

with Adam on the raw logits. The best-loss iterate is returned, not the
last, to tolerate late oscillation. Depth logits can be initialized from a
depth map for the input view by inverting the depth decoding at each grid
anchor pixel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import DiffBuffer, GradientReport, finite_difference_check
from .errors import NumericFault, ValidationError
from .geometry import (
    DEPTH_PRESETS,
    CameraIntrinsics,
    CameraPose,
    SheetParams,
    build_mesh,
    grid_anchors,
    grid_offset_reg,
    laplacian_reg,
    relative_pose,
    transform_vertices,
)
from .raster import RenderedView, RenderSettings, blend_weights, rasterize, render_textured
from .texture import sample_texture


@dataclass(frozen=True)
class LossWeights:
    """Weights for the total loss; perceptual/refinement terms are out of
    scope here and must stay zero (kept so the reference values remain
    representable)."""

    rgb: float = 8.0
    perceptual: float = 0.0
    rgb_refined: float = 0.0
    perceptual_refined: float = 0.0
    grid_offset: float = 0.2
    laplacian: float = 1e-4
    depth: float = 0.0

    def __post_init__(self):
        for name in ("rgb", "perceptual", "rgb_refined", "perceptual_refined",
                     "grid_offset", "laplacian", "depth"):
            if getattr(self, name) < 0:
                raise ValidationError(f"loss weight {name} must be >= 0")
        if self.perceptual != 0 or self.perceptual_refined != 0 or self.rgb_refined != 0:
            raise ValidationError(
                "perceptual and refinement losses are not available in this package"
            )


@dataclass
class SceneSample:
    input_image: np.ndarray
    target_image: np.ndarray
    input_pose: CameraPose
    target_pose: CameraPose
    intrinsics: CameraIntrinsics
    target_depth: np.ndarray | None = None
    init_depth: np.ndarray | None = None

    def __post_init__(self):
        shape = (self.intrinsics.height, self.intrinsics.width, 3)
        for name in ("input_image", "target_image"):
            img = np.asarray(getattr(self, name), dtype=np.float64)
            if img.shape != shape:
                raise ValidationError(f"{name} shape {img.shape} != intrinsics {shape}")
            setattr(self, name, img)
        for name in ("target_depth", "init_depth"):
            d = getattr(self, name)
            if d is None:
                continue
            d = np.asarray(d, dtype=np.float64)
            if d.shape != shape[:2]:
                raise ValidationError(f"{name} shape {d.shape} != {shape[:2]}")
            if np.any(d <= 0):
                raise ValidationError(f"{name} must be strictly positive")
            setattr(self, name, d)


def l1_image_loss(pred, target):
    """Channel-summed per-pixel L1, averaged over the W*H pixels."""
    pred = ad.as_buffer(pred)
    target = ad.as_buffer(target)
    if pred.shape != target.shape:
        raise ValidationError(f"shape mismatch {pred.shape} vs {target.shape}")
    n_pix = pred.shape[0] * pred.shape[1]
    return ad.sum_(ad.absolute(pred - target)) * (1.0 / n_pix)


def depth_l1_loss(rendered_depth, gt_depth, mask):
    """Mean absolute depth error over masked pixels; empty mask -> 0."""
    rendered_depth = ad.as_buffer(rendered_depth)
    gt = np.asarray(gt_depth, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        warnings.warn("depth loss mask is empty; loss defined as 0")
        return DiffBuffer(0.0)
    diff = ad.absolute(rendered_depth - gt) * mask.astype(np.float64)
    return ad.sum_(diff) * (1.0 / n)


def total_loss(sample: SceneSample, params: SheetParams, weights: LossWeights,
               settings: RenderSettings, connectivity=4, threads=1):
    """Weighted fitting loss plus a dict of unweighted diagnostic terms."""
    settings = _with_background(settings, sample.input_image)
    mesh = build_mesh(params, sample.intrinsics, connectivity)
    texture = sample_texture(sample.input_image, mesh, sample.intrinsics, settings,
                             threads=threads)
    rel = relative_pose(sample.input_pose, sample.target_pose)
    tgt_mesh = transform_vertices(mesh, rel)
    need_depth = weights.depth > 0 and sample.target_depth is not None
    view = render_textured(tgt_mesh, texture, sample.intrinsics, settings,
                           with_depth=need_depth, threads=threads)

    rgb = l1_image_loss(view.image, sample.target_image)
    grid = grid_offset_reg(params)
    lap = laplacian_reg(mesh, connectivity)
    loss = rgb * weights.rgb + grid * weights.grid_offset + lap * weights.laplacian
    diag = {
        "rgb": rgb.item(),
        "grid_offset": grid.item(),
        "laplacian": lap.item(),
        "depth": 0.0,
    }
    if need_depth:
        dmask = view.mask.values > 0.5
        dl = depth_l1_loss(view.depth, sample.target_depth, dmask)
        loss = loss + dl * weights.depth
        diag["depth"] = dl.item()
    return loss, diag


class AdamState:
    """Adam with bias correction over named parameter blocks."""

    def __init__(self, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}
        self.skipped = 0

    def step(self, params: dict, grads: dict | None = None):
        """Update each block from grads (default: the buffers' .grad)."""
        if grads is None:
            grads = {k: p.grad for k, p in params.items()}
        for k, g in grads.items():
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                self.skipped += 1
                warnings.warn(f"non-finite gradient for '{k}'; step skipped")
                return
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                continue
            if k not in self.m:
                self.m[k] = np.zeros_like(p.values)
                self.v[k] = np.zeros_like(p.values)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            p.values -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def adam_step(state: AdamState, params: dict, grads: dict):
    state.step(params, grads)
    return params, state


@dataclass
class FitConfig:
    grid_w: int = 17
    grid_h: int = 17
    connectivity: int = 4
    iterations: int = 1000
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss_weights: LossWeights = field(default_factory=LossWeights)
    depth_preset: str = "indoor"
    seed: int = 0
    render: RenderSettings = field(default_factory=RenderSettings)
    init_from_depth: bool = True
    threads: int = 1


@dataclass
class FitResult:
    params: SheetParams
    trace: list
    best_iteration: int
    best_loss: float


def _with_background(settings: RenderSettings, image):
    if settings.background_color is not None:
        return settings
    bg = tuple(float(c) for c in settings.resolve_background(image))
    return replace(settings, background_color=bg)


def init_depth_logits(sample: SceneSample, grid_w, grid_h, depth_scale):
    """Invert the depth decoding at each grid anchor's pixel position."""
    intr = sample.intrinsics
    ax, ay = grid_anchors(grid_w, grid_h)
    cols = (ax.reshape(-1) + 1.0) * 0.5 * intr.width - 0.5
    rows = (1.0 - ay.reshape(-1)) * 0.5 * intr.height - 0.5
    depth = kernels.sample_forward(
        sample.init_depth[:, :, None].astype(np.float64), cols, rows
    )[:, 0]
    return depth_scale.invert(depth).reshape(grid_h, grid_w)


def fit_scene(sample: SceneSample, config: FitConfig) -> FitResult:
    """Optimize sheet parameters so the rendered target view matches.

    Evaluates the loss at iterations 0..iterations (so the final step
    counts) and returns the best-loss iterate. Raises NumericFault with the
    partial trace attached if the loss diverges to NaN.
    """
    preset = DEPTH_PRESETS[config.depth_preset] if isinstance(config.depth_preset, str) \
        else config.depth_preset
    depth_logits = None
    if sample.init_depth is not None and config.init_from_depth:
        depth_logits = init_depth_logits(sample, config.grid_w, config.grid_h, preset)
    params = SheetParams(
        config.grid_w, config.grid_h,
        depth_logits=depth_logits, depth_scale=preset, requires_grad=True,
    )
    return fit_params(sample, params, config)


def fit_params(sample: SceneSample, params: SheetParams, config: FitConfig) -> FitResult:
    """Run the fitting loop from explicit initial parameters."""
    settings = _with_background(config.render, sample.input_image)
    opt = AdamState(config.lr, config.beta1, config.beta2, config.eps)
    leaves = params.leaf_buffers()

    trace = []
    best_loss = np.inf
    best_it = 0
    best = params.copy()
    for it in range(config.iterations + 1):
        for buf in leaves.values():
            buf.zero_grad()
        loss, diag = total_loss(
            sample, params, config.loss_weights, settings,
            connectivity=config.connectivity, threads=config.threads,
        )
        total = loss.item()
        trace.append({"iteration": it, "total": total, **diag})
        if not np.isfinite(total):
            raise NumericFault("fitting loss diverged to a non-finite value", trace=trace)
        if total < best_loss:
            best_loss = total
            best_it = it
            best = params.copy()
        if it == config.iterations:
            break
        try:
            ad.backward(loss)
        except NumericFault as fault:
            raise NumericFault(str(fault), trace=trace) from fault
        opt.step(leaves)
    return FitResult(params=best, trace=trace, best_iteration=best_it, best_loss=best_loss)


def predict_view(params: SheetParams, sample, novel_pose: CameraPose,
                 settings: RenderSettings | None = None, connectivity=4,
                 with_depth=True, threads=1) -> RenderedView:
    """Render a novel view: build, texture from the input view, transform,
    render. `sample` needs input_image, input_pose and intrinsics."""
    settings = _with_background(settings or RenderSettings(), sample.input_image)
    mesh = build_mesh(params, sample.intrinsics, connectivity)
    texture = sample_texture(sample.input_image, mesh, sample.intrinsics, settings,
                             threads=threads)
    rel = relative_pose(sample.input_pose, novel_pose)
    moved = transform_vertices(mesh, rel)
    return render_textured(moved, texture, sample.intrinsics, settings,
                           with_depth=with_depth, threads=threads)


# ---------------------------------------------------------------------------
# gradient oracle over the full pipeline
# ---------------------------------------------------------------------------

def _selection_signature(sample, params, settings, connectivity):
    """Discrete rasterization state at both poses (for stability screening)."""
    from .raster import _select_faces

    mesh = build_mesh(params, sample.intrinsics, connectivity)
    sig_in = _select_faces(mesh, sample.intrinsics, settings)
    rel = relative_pose(sample.input_pose, sample.target_pose)
    moved = transform_vertices(mesh, rel)
    sig_tgt = _select_faces(moved, sample.intrinsics, settings)
    return sig_in, sig_tgt


def pipeline_gradient_check(sample: SceneSample, grid_w=5, grid_h=5,
                            weights: LossWeights | None = None,
                            settings: RenderSettings | None = None,
                            connectivity=4, step=1e-3, n_coords=200,
                            tolerance=1e-2, seed=0) -> GradientReport:
    """Finite-difference check of the full fitting loss.

    Samples coordinates from the three logit blocks and the input image;
    logit coordinates whose per-pixel K-face sets change under +/-step are
    screened out (the discrete selection is a forward-pass constant, so
    finite differences are only meaningful where it is stable).
    """
    rng = np.random.default_rng(seed)
    weights = weights or LossWeights(depth=0.0)
    settings = _with_background(settings or RenderSettings(), sample.input_image)

    params = SheetParams(
        grid_w, grid_h,
        offset_logits_x=rng.normal(0, 0.3, (grid_h, grid_w)),
        offset_logits_y=rng.normal(0, 0.3, (grid_h, grid_w)),
        depth_logits=rng.normal(0, 0.3, (grid_h, grid_w)),
        requires_grad=True,
    )
    image = DiffBuffer(sample.input_image.copy(), requires_grad=True)
    probe = SceneSample(
        input_image=sample.input_image, target_image=sample.target_image,
        input_pose=sample.input_pose, target_pose=sample.target_pose,
        intrinsics=sample.intrinsics, target_depth=sample.target_depth,
    )

    def fn():
        # the image leaf participates via the sample's input image
        probe.input_image = image
        loss, _ = total_loss(probe, params, weights, settings, connectivity)
        return loss

    baseline = _selection_signature(probe, params, settings, connectivity)

    def screen(name, flat_index, h):
        if name == "input_image":
            return True  # image perturbations never move the geometry
        buf = params.leaf_buffers()[name]
        flat = buf.values.reshape(-1)
        orig = flat[flat_index]
        stable = True
        for delta in (h, -h):
            flat[flat_index] = orig + delta
            sig = _selection_signature(probe, params, settings, connectivity)
            if not (np.array_equal(sig[0], baseline[0]) and np.array_equal(sig[1], baseline[1])):
                stable = False
                break
        flat[flat_index] = orig
        return stable

    n_logits = grid_w * grid_h
    per_block = min(n_logits, max(1, n_coords // 8))
    blocks = dict(params.leaf_buffers())
    blocks["input_image"] = image
    n_samples = {
        "offset_logits_x": per_block,
        "offset_logits_y": per_block,
        "depth_logits": per_block,
        "input_image": n_coords - 3 * per_block,
    }
    return finite_difference_check(
        fn, blocks, step=step, n_samples=n_samples,
        tolerance=tolerance, rng=rng, screen=screen,
    )
