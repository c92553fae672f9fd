"""Command line entry point: ``dexfit <command> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every command
writes a JSON manifest next to its output once it finishes.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _load_config(path) -> dict:
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return cfg


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


# --- commands ----------------------------------------------------------------

def cmd_gen_scene(args, cfg):
    from .synth import SceneSpec, generate_scene, save_scene

    raw = json.loads(Path(args.spec).read_text()) if args.spec else {}
    raw.update(cfg)
    if args.seed is not None:
        raw["seed"] = args.seed
    spec = SceneSpec.from_dict(raw)
    scene = generate_scene(spec)
    written = save_scene(scene, args.out)
    print(f"wrote {len(written)} files to {args.out}")
    return {"config": spec.raw, "seed": spec["seed"], "inputs": [args.spec] if args.spec else [],
            "outputs": sorted(str(p) for p in written)}


def _parse_init(text: str):
    if text == "gt":
        return None
    if text.startswith("perturbed:"):
        value = text.split(":", 1)[1].strip()
        value = value[:-2] if value.endswith("mm") else value
        try:
            mm = float(value)
        except ValueError:
            raise UsageError(f"bad --init value {text!r}") from None
        if mm < 0:
            raise UsageError("perturbation must be non-negative")
        return mm
    raise UsageError(f"--init must be 'gt' or 'perturbed:<mm>', got {text!r}")


def cmd_solve(args, cfg):
    from .solver import SolveConfig, solve_sequence
    from .synth import Perturbation, load_scene, perturb

    mm = _parse_init(args.init)
    d = dict(cfg)
    d.update({k: v for k, v in (("iterations", args.iterations), ("learning_rate", args.lr))
              if v is not None})
    try:
        config = SolveConfig.from_dict(d)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    scene = load_scene(args.scene)
    n = scene.n_frames if args.frames is None else min(args.frames, scene.n_frames)
    if n < 1:
        raise UsageError("--frames must be positive")
    seed = 0 if args.seed is None else args.seed
    init = scene.gt[0].copy()
    if mm:
        init = perturb(init, Perturbation(translation_mm=mm, hand_translation_mm=mm),
                       np.random.default_rng(seed))
    frames = [scene.observation(t) for t in range(n)]
    poses, traces = solve_sequence(frames, init, scene.models, config)
    out = {
        "config": config.to_dict(),
        "init": args.init,
        "seed": seed,
        "frames": [{"frame": t, "pose": P.to_json(), "init": tr.init.to_json(),
                    "energy": [r.to_json() for r in tr.reports]}
                   for t, (P, tr) in enumerate(zip(poses, traces))],
    }
    _write_atomic(Path(args.out), json.dumps(out, indent=1) + "\n")
    final = traces[-1].final
    print(f"solved {n} frame(s); last frame e_total={final.e_total:.6g}")
    return {"config": config.to_dict(), "seed": seed, "inputs": [args.scene], "outputs": [args.out]}


def _load_poses(path):
    from .energy import ScenePose

    d = json.loads(Path(path).read_text())
    return [ScenePose.from_json(f["pose"]) for f in d["frames"]]


def cmd_eval_grasps(args, cfg):
    from .geometry import merge_meshes
    from .grasp_eval import (GripperTemplate, HandoverScene, MatchConfig, curve_to_csv,
                             CurvePoint, default_eps_grid, precision_coverage_curve)
    from .synth import load_scene

    unknown = set(cfg) - {"sigma_t", "sigma_q_deg"}
    if unknown:
        raise UsageError(f"unknown eval-grasps config keys: {sorted(unknown)}")
    match = MatchConfig(float(cfg.get("sigma_t", 0.05)), np.deg2rad(float(cfg.get("sigma_q_deg", 15.0))))
    if args.eps_grid is not None and args.eps_grid < 1:
        raise UsageError("--eps-grid must be at least 1")
    grid = default_eps_grid() if args.eps_grid is None else default_eps_grid(args.eps_grid)
    scene = load_scene(args.scene)
    poses = _load_poses(args.poses)
    if len(poses) > scene.n_frames:
        raise UsageError("pose file has more frames than the scene")
    template = GripperTemplate.parallel_jaw()
    curves = []
    for t, P in enumerate(poses):
        hands = [m.forward(p).mesh for m, p in zip(scene.models.hands, scene.gt[t].hands)]
        hand_mesh = merge_meshes(hands) if hands else None
        cloud = scene.hand_cloud(t)
        for o, rest in enumerate(scene.models.objects):
            if len(scene.grasps[o]) == 0:
                continue
            hs = HandoverScene.build(scene.grasps[o], scene.gt[t].objects[o], rest, hand_mesh,
                                     template, match)
            curves.append(precision_coverage_curve(hs, P.objects[o], cloud, template, grid))
    if not curves:
        raise RuntimeError("no object with grasps to evaluate")
    merged = []
    for k, eps in enumerate(grid):
        precs = [c[k].precision for c in curves if c[k].precision is not None]
        cov = float(np.mean([c[k].coverage for c in curves]))
        merged.append(CurvePoint(float(eps), float(np.mean(precs)) if precs else None, cov))
    _write_atomic(Path(args.out), curve_to_csv(merged))
    print(f"scored {len(curves)} instance(s) over {len(grid)} thresholds")
    return {"config": {"sigma_t": match.sigma_t, "sigma_q": match.sigma_q, "eps": grid.tolist()},
            "seed": None, "inputs": [args.scene, args.poses], "outputs": [args.out]}


def cmd_metrics(args, cfg):
    from .metrics import MODES, joint_errors, pck_auc, report_csv, reprojection_error
    from .models import TIPS
    from .synth import load_scene

    scene = load_scene(args.scene)
    poses = _load_poses(args.poses)
    if len(poses) > scene.n_frames:
        raise UsageError("pose file has more frames than the scene")
    rows, errs = [], {m: [] for m in MODES}
    for t, P in enumerate(poses):
        for h, model in enumerate(scene.models.hands):
            pred = model.forward(P.hands[h]).joints * 1e3
            gt = model.forward(scene.gt[t].hands[h]).joints * 1e3
            for mode in MODES:
                e = joint_errors(pred, gt, mode)
                errs[mode].append(e)
                rows.append((f"frame_{t:04d}_hand_{h}", f"mpjpe_{mode}", e.mean()))
            rep = reprojection_error(pred * 1e-3, scene.annotations[t], scene.models.views, h)
            for j in TIPS:
                if rep[j].mean is not None:
                    rows.append((f"frame_{t:04d}_hand_{h}_joint_{j:02d}", "reprojection_mean", rep[j].mean))
                    rows.append((f"frame_{t:04d}_hand_{h}_joint_{j:02d}", "reprojection_std", rep[j].std))
    for mode in MODES:
        if errs[mode]:
            allerr = np.concatenate(errs[mode])
            rows.append(("all", f"mpjpe_{mode}", allerr.mean()))
            rows.append(("all", f"pck_auc_{mode}", pck_auc(allerr)))
    _write_atomic(Path(args.out), report_csv(rows))
    print(f"wrote {len(rows)} metric rows")
    return {"config": {}, "seed": None, "inputs": [args.scene, args.poses], "outputs": [args.out]}


def cmd_check_grad(args, cfg):
    from .gradcheck import TOLERANCE, run

    seed = 0 if args.seed is None else args.seed
    report = run(args.scenes, seed)
    for name, err in report.errors.items():
        print(f"{name:16s} max rel err {err:.3e}")
    ok = report.passed(TOLERANCE)
    print(f"max relative error {report.max_error:.3e} over {report.scenes} scenes "
          f"({'pass' if ok else 'FAIL'}, tolerance {TOLERANCE:g})")
    outputs = []
    if args.out:
        body = {"scenes": report.scenes, "seed": seed, "tolerance": TOLERANCE,
                "errors": report.errors, "max_error": report.max_error, "passed": ok}
        _write_atomic(Path(args.out), json.dumps(body, indent=1) + "\n")
        outputs.append(args.out)
    if not ok:
        raise RuntimeError("gradient check failed")
    return {"config": {"scenes": args.scenes}, "seed": seed, "inputs": [], "outputs": outputs}


# --- dispatch ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dexfit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON file with command settings")
        sp.add_argument("--seed", type=int, help="random seed")
        sp.add_argument("--out", required=out_required, help="output path")

    g = sub.add_parser("gen-scene", help="generate a synthetic scene directory")
    common(g)
    g.add_argument("--spec", help="scene spec JSON (defaults are used for missing keys)")
    g.set_defaults(func=cmd_gen_scene)

    s = sub.add_parser("solve", help="fit poses to every frame of a scene")
    common(s)
    s.add_argument("--scene", required=True)
    s.add_argument("--init", default="gt", help="'gt' or 'perturbed:<mm>'")
    s.add_argument("--frames", type=int, help="solve only the first N frames")
    s.add_argument("--iterations", type=int, help="override the iteration count")
    s.add_argument("--lr", type=float, help="override the learning rate")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("eval-grasps", help="precision-coverage curve for solved poses")
    common(e)
    e.add_argument("--scene", required=True)
    e.add_argument("--poses", required=True)
    e.add_argument("--eps-grid", type=int, help="number of thresholds over [0, 0.07] m")
    e.set_defaults(func=cmd_eval_grasps)

    m = sub.add_parser("metrics", help="MPJPE / PCK / reprojection report for solved poses")
    common(m)
    m.add_argument("--scene", required=True)
    m.add_argument("--poses", required=True)
    m.set_defaults(func=cmd_metrics)

    c = sub.add_parser("check-grad", help="finite-difference gate for every gradient")
    common(c, out_required=False)
    c.add_argument("--scenes", type=int, default=50)
    c.set_defaults(func=cmd_check_grad)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        cfg = _load_config(args.config)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"dexfit: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    start = time.time()
    try:
        info = args.func(args, cfg)
    except UsageError as exc:
        print(f"dexfit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failures map to exit code 2
        print(f"dexfit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if args.out:
        manifest = {"command": args.command, "argv": list(sys.argv[1:] if argv is None else argv),
                    "config": info["config"], "seed": info["seed"],
                    "inputs": info["inputs"], "outputs": info["outputs"],
                    "wall_time_s": time.time() - start}
        _write_atomic(_manifest_path(Path(args.out)), json.dumps(manifest, indent=1) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
