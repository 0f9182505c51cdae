"""sheetview: differentiable grid-sheet view synthesis.

Wrap a deformable grid mesh onto a single image, reconstruct its texture by
differentiable splatting, render novel camera views, and fit the sheet's
geometry per scene by gradient descent on image losses from a second view.

Hot kernels run through a compiled Cython core when built, with a pure
numpy fallback (see `sheetview.kernels.LANE`).
"""

from .autodiff import DiffBuffer, GradientReport, backward, finite_difference_check
from .errors import ConfigError, GeometryError, NumericFault, ValidationError
from .fitting import (
    AdamState,
    FitConfig,
    FitResult,
    LossWeights,
    SceneSample,
    adam_step,
    depth_l1_loss,
    fit_params,
    fit_scene,
    l1_image_loss,
    pipeline_gradient_check,
    predict_view,
    total_loss,
)
from .geometry import (
    DEPTH_PRESETS,
    CameraIntrinsics,
    CameraPose,
    DepthScaleConfig,
    SheetMesh,
    SheetParams,
    build_mesh,
    decode_depth,
    decode_offsets,
    export_obj,
    grid_offset_reg,
    laplacian_reg,
    relative_pose,
    transform_vertices,
)
from .kernels import LANE as KERNEL_LANE
from .metrics import MetricsReport, evaluate_views, psnr, ssim
from .raster import (
    BlendWeights,
    FragmentBuffer,
    RenderedView,
    RenderSettings,
    blend_weights,
    rasterize,
    render_textured,
)
from .scenes import (
    BUNDLED_SCENE_NAMES,
    PlanePrimitive,
    SceneSpec,
    TexturePattern,
    TrajectorySpec,
    bundled_scene,
    gen_scene,
    interpolate_trajectory,
    render_trajectory,
    warp_oracle,
)
from .texture import (
    FlowField,
    TextureMap,
    decompose_image,
    face_flow,
    fill_holes,
    forward_map,
    normalize_splat,
    sample_texture,
)

__version__ = "0.1.0"
