"""Command-line interface: run, match, eval, synth subcommands.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
inconsistent inputs), 3 internal error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Mapping

import numpy as np

from .evaluate import load_reference, map_to_surface_error, write_report_json
from .fileio import (
    load_grayscale,
    read_config,
    read_ply,
    write_pfm,
    write_pgm_mask,
)
from .geometry import StereoRig
from .matcher import MatcherConfig, RectifiedStereoPair, match
from .pipeline import DataError, KeyframePolicy, SessionConfig, run_session
from .synth import GEOMETRIES, TRAJECTORIES, SceneSpec, write_sequence

_RIG_KEYS = {
    "focal_length_px",
    "focal_length_y_px",
    "baseline_mm",
    "cx",
    "cy",
    "width",
    "height",
}
_MATCHER_KEYS = {
    "patch_size",
    "stride",
    "pyramid_levels",
    "max_iterations",
    "convergence_tol",
    "max_disparity",
    "candidate_offsets",
    "sigma_s",
    "probability_threshold",
    "min_valid_patch_ratio",
}
_POLICY_KEYS = {
    "translation_threshold_mm",
    "rotation_threshold_deg",
    "max_frame_gap",
}
_PIPELINE_KEYS = {
    "queue_capacity",
    "subsample_stride",
    "min_disparity",
    "depth_gate_mm",
}


def _rig_from_config(mapping: Mapping[str, str]) -> StereoRig:
    missing = sorted(
        key
        for key in ("focal_length_px", "baseline_mm", "width", "height")
        if key not in mapping
    )
    if missing:
        raise ValueError(f"config is missing rig keys: {', '.join(missing)}")
    width = int(mapping["width"])
    height = int(mapping["height"])
    cx = float(mapping.get("cx", (width - 1) / 2.0))
    cy = float(mapping.get("cy", (height - 1) / 2.0))
    fy = mapping.get("focal_length_y_px")
    return StereoRig.from_params(
        fx=float(mapping["focal_length_px"]),
        baseline_mm=float(mapping["baseline_mm"]),
        cx=cx,
        cy=cy,
        width=width,
        height=height,
        fy=float(fy) if fy is not None else None,
    )


def _session_from_args(args: argparse.Namespace) -> SessionConfig:
    mapping = read_config(args.config)
    known = _RIG_KEYS | _MATCHER_KEYS | _POLICY_KEYS | _PIPELINE_KEYS
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    rig = _rig_from_config(mapping)
    matcher = MatcherConfig.from_mapping(mapping)
    policy_kwargs = {}
    if "translation_threshold_mm" in mapping:
        policy_kwargs["translation_threshold_mm"] = float(
            mapping["translation_threshold_mm"]
        )
    if "rotation_threshold_deg" in mapping:
        policy_kwargs["rotation_threshold_deg"] = float(
            mapping["rotation_threshold_deg"]
        )
    if "max_frame_gap" in mapping:
        policy_kwargs["max_frame_gap"] = int(mapping["max_frame_gap"])
    session_kwargs = {}
    if "queue_capacity" in mapping:
        session_kwargs["queue_capacity"] = int(mapping["queue_capacity"])
    if "subsample_stride" in mapping:
        session_kwargs["subsample_stride"] = int(mapping["subsample_stride"])
    if "min_disparity" in mapping:
        session_kwargs["min_disparity"] = float(mapping["min_disparity"])
    if "depth_gate_mm" in mapping:
        session_kwargs["depth_gate_mm"] = float(mapping["depth_gate_mm"])
    return SessionConfig(
        rig=rig,
        left_glob=args.left,
        right_glob=args.right,
        trajectory_path=args.traj,
        output_dir=args.out,
        matcher=matcher,
        policy=KeyframePolicy(**policy_kwargs),
        drop_when_busy=args.drop_when_busy,
        depth_gated_culling=args.depth_gated_culling,
        **session_kwargs,
    )


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _session_from_args(args)
    global_map, report = run_session(cfg)
    print(
        f"keyframes {report.keyframes_processed}/{report.frames_processed} "
        f"frames, {len(global_map)} map points, "
        f"{report.hz:.2f} Hz end-to-end; outputs in {cfg.output_dir}"
    )
    return 0


def _cmd_match(args: argparse.Namespace) -> int:
    config = MatcherConfig()
    if args.config:
        config = MatcherConfig.from_mapping(read_config(args.config))
    pair = RectifiedStereoPair(
        left=load_grayscale(args.left), right=load_grayscale(args.right)
    )
    field = match(pair, config)
    out = Path(args.out)
    disparity = field.disparity.astype(np.float32).copy()
    disparity[~field.valid_mask] = np.nan
    write_pfm(out, disparity)
    write_pfm(out.with_name(out.stem + "_confidence.pfm"), field.confidence)
    write_pgm_mask(out.with_name(out.stem + "_mask.pgm"), field.valid_mask)
    print(
        f"coverage {field.coverage:.3f} "
        f"({int(field.valid_mask.sum())} valid pixels) -> {out}"
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    positions, _ = read_ply(args.map)
    if positions.shape[0] == 0:
        raise ValueError(f"map {args.map!r} contains no points")
    reference = load_reference(args.reference)
    report = map_to_surface_error(
        positions, reference, cutoff_mm=args.cutoff, method=args.method
    )
    if args.out:
        write_report_json(report, args.out)
    mean = "nan" if report.inlier_count == 0 else f"{report.mean_mm:.4f}"
    median = "nan" if report.inlier_count == 0 else f"{report.median_mm:.4f}"
    print(
        f"mean {mean} mm, median {median} mm over {report.inlier_count} "
        f"inliers ({report.outlier_count} outliers >= {report.cutoff_mm} mm, "
        f"{report.invalid_count} invalid)"
    )
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    width, height = args.width, args.height
    rig = StereoRig.from_params(
        fx=args.focal,
        baseline_mm=args.baseline,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        width=width,
        height=height,
    )
    spec = SceneSpec(
        rig=rig,
        geometry=args.scene,
        frames=args.frames,
        seed=args.seed,
        trajectory=args.trajectory,
        plane_depth_mm=args.plane_depth,
        ramp_disparity=tuple(args.ramp),
        sphere_radius_mm=args.sphere_radius,
        tube_radius_mm=args.tube_radius,
        tube_cap_depth_mm=args.cap_depth,
        texture_octaves=args.texture_octaves,
        texture_contrast=args.contrast,
        dolly_step_mm=args.dolly_step,
        arc_step_deg=args.arc_step,
    )
    write_sequence(spec, args.out)
    print(f"wrote {args.frames} frame(s) of {args.scene!r} scene to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="densemap",
        description="CPU dense stereo mapping: match, lift, mosaic, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="map a full stereo sequence")
    run_p.add_argument("--left", required=True, help="left image glob")
    run_p.add_argument("--right", required=True, help="right image glob")
    run_p.add_argument("--traj", required=True, help="trajectory file")
    run_p.add_argument(
        "--config", required=True, help="key=value config with rig parameters"
    )
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument(
        "--drop-when-busy",
        action="store_true",
        help="drop keyframes while the mapping queue is full",
    )
    run_p.add_argument(
        "--depth-gated-culling",
        action="store_true",
        help="cull only points whose depth matches the new observation",
    )
    run_p.set_defaults(func=_cmd_run)

    match_p = sub.add_parser("match", help="match a single stereo pair")
    match_p.add_argument("--left", required=True, help="left image")
    match_p.add_argument("--right", required=True, help="right image")
    match_p.add_argument("--out", required=True, help="output disparity PFM")
    match_p.add_argument("--config", help="key=value matcher config")
    match_p.set_defaults(func=_cmd_match)

    eval_p = sub.add_parser("eval", help="evaluate a map against a reference")
    eval_p.add_argument("--map", required=True, help="map PLY file")
    eval_p.add_argument(
        "--reference",
        required=True,
        help="reference PLY cloud or analytic surface spec file",
    )
    eval_p.add_argument(
        "--cutoff", type=float, default=5.0, help="outlier cutoff in mm"
    )
    eval_p.add_argument("--out", help="JSON report path")
    eval_p.add_argument(
        "--method",
        choices=("auto", "brute", "kdtree"),
        default="auto",
        help="nearest-neighbor backend for cloud references",
    )
    eval_p.set_defaults(func=_cmd_eval)

    synth_p = sub.add_parser("synth", help="generate a synthetic sequence")
    synth_p.add_argument("--scene", required=True, choices=GEOMETRIES)
    synth_p.add_argument("--frames", type=int, default=1)
    synth_p.add_argument("--seed", type=int, default=0)
    synth_p.add_argument("--out", required=True, help="output directory")
    synth_p.add_argument("--trajectory", choices=TRAJECTORIES, default="static")
    synth_p.add_argument("--width", type=int, default=640)
    synth_p.add_argument("--height", type=int, default=480)
    synth_p.add_argument("--focal", type=float, default=450.0)
    synth_p.add_argument("--baseline", type=float, default=5.0)
    synth_p.add_argument("--plane-depth", type=float, default=180.0)
    synth_p.add_argument(
        "--ramp", type=float, nargs=2, default=(5.0, 20.0),
        metavar=("D0", "D1"),
        help="slant scene: disparity at the left/right image edges",
    )
    synth_p.add_argument("--sphere-radius", type=float, default=70.0)
    synth_p.add_argument("--tube-radius", type=float, default=36.0)
    synth_p.add_argument("--cap-depth", type=float, default=80.0)
    synth_p.add_argument("--texture-octaves", type=int, default=7)
    synth_p.add_argument("--contrast", type=float, default=0.9)
    synth_p.add_argument("--dolly-step", type=float, default=1.0)
    synth_p.add_argument("--arc-step", type=float, default=0.5)
    synth_p.set_defaults(func=_cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
