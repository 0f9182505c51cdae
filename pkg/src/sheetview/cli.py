"""Command-line interface.

Subcommands:
    fit          optimize sheet parameters for a scene
    render       render a camera trajectory from a fit
    eval         PSNR/SSIM between two images (optional visibility split)
    gradcheck    run the finite-difference gradient oracle suite
    gen-scene    generate a bundled synthetic scene to disk
    export-mesh  write the fitted sheet as a Wavefront OBJ

Exit codes: 0 success, 1 validation/usage error, 2 numeric fault.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import NumericFault, ValidationError


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; the contract is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _build_parser():
    parser = _Parser(prog="sheetview", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit sheet parameters to a scene")
    p_fit.add_argument("--scene", required=True)
    p_fit.add_argument("--config", default=None)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--trace", default=None, help="loss trace CSV path")

    p_render = sub.add_parser("render", help="render a trajectory from a fit")
    p_render.add_argument("--fit", required=True)
    p_render.add_argument("--traj", required=True)
    p_render.add_argument("--out", required=True)

    p_eval = sub.add_parser("eval", help="PSNR/SSIM between two images")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--target", required=True)
    p_eval.add_argument("--vis-mask", default=None)

    p_grad = sub.add_parser("gradcheck", help="finite-difference oracle suite")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--coords", type=int, default=200)
    p_grad.add_argument("--json", action="store_true", help="print the full report as JSON")

    p_gen = sub.add_parser("gen-scene", help="write a bundled synthetic scene")
    p_gen.add_argument("--preset", required=True)
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.add_argument("--out", required=True)

    p_mesh = sub.add_parser("export-mesh", help="export the fitted sheet as OBJ")
    p_mesh.add_argument("--fit", required=True)
    p_mesh.add_argument("--out", required=True)
    return parser


def _cmd_fit(args):
    from .fitting import FitConfig, fit_scene
    from .serialize import load_fit_config, load_scene, save_fit, write_trace_csv

    sample, _ = load_scene(args.scene)
    config = load_fit_config(args.config) if args.config else FitConfig()
    result = fit_scene(sample, config)
    save_fit(args.out, result, sample, config.render, config.connectivity)
    if args.trace:
        write_trace_csv(args.trace, result.trace)
    print(json.dumps({
        "best_iteration": result.best_iteration,
        "best_loss": result.best_loss,
        "iterations": len(result.trace) - 1,
        "out": args.out,
    }, indent=2))
    return 0


def _cmd_render(args):
    from .scenes import render_trajectory
    from .serialize import load_fit, load_trajectory

    params, inputs, settings, connectivity = load_fit(args.fit)
    traj = load_trajectory(args.traj)
    paths = render_trajectory(params, inputs, traj, args.out,
                              settings=settings, connectivity=connectivity)
    print(json.dumps({"frames": len(paths), "out": args.out}, indent=2))
    return 0


def _cmd_eval(args):
    from .imgio import read_mask_png, read_png
    from .metrics import evaluate_views

    pred = read_png(args.pred)
    target = read_png(args.target)
    vis = read_mask_png(args.vis_mask) if args.vis_mask else None
    report = evaluate_views(pred, target, vis)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def _cmd_gradcheck(args):
    from .fitting import pipeline_gradient_check
    from .scenes import bundled_scene, gen_scene

    spec = bundled_scene("plane")
    small = type(spec.intrinsics)(spec.intrinsics.fov_degrees, 32, 32)
    spec.intrinsics = small
    sample, _ = gen_scene(spec)
    report = pipeline_gradient_check(sample, grid_w=5, grid_h=5,
                                     n_coords=args.coords, seed=args.seed)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        for line in report.summary_lines():
            print(line)
        print("PASS" if report.passed() else "FAIL")
    if not report.passed():
        raise NumericFault("gradient check failed (analytic vs finite differences)")
    return 0


def _cmd_gen_scene(args):
    from .scenes import BUNDLED_SCENE_NAMES, bundled_scene, gen_scene
    from .serialize import save_scene

    if args.preset not in BUNDLED_SCENE_NAMES:
        raise ValidationError(
            f"unknown preset '{args.preset}'; choose from {BUNDLED_SCENE_NAMES}"
        )
    spec = bundled_scene(args.preset)
    if args.seed is not None:
        spec.seed = args.seed
        for prim in spec.primitives:
            prim.texture.seed += args.seed
    sample, gt = gen_scene(spec)
    path = save_scene(args.out, sample, gt, preset=args.preset, seed=spec.seed)
    print(json.dumps({"scene": path}, indent=2))
    return 0


def _cmd_export_mesh(args):
    from .geometry import build_mesh, export_obj
    from .serialize import load_fit

    params, inputs, _, connectivity = load_fit(args.fit)
    mesh = build_mesh(params, inputs.intrinsics, connectivity)
    export_obj(mesh, args.out)
    print(json.dumps({"vertices": mesh.n_vertices, "faces": int(mesh.faces.shape[0]),
                      "out": args.out}, indent=2))
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "render": _cmd_render,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "gen-scene": _cmd_gen_scene,
    "export-mesh": _cmd_export_mesh,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericFault as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
