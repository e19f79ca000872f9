"""Command line front end: Monte Carlo, trajectory, CRLB and config validation."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import SingularInformation, check_availability, crlb
from .edm import CompletionConfig
from .geometry import AnchorSet, Pose, TagLayout
from .pose_estimation import PipelineConfig, PoseRefineConfig
from .scene import Box, Scene, Trajectory, compute_visibility
from .scenes import BUILTIN, aisle_trajectory, builtin_scene
from .simulation import METHODS, SIGMA_GRID, NoiseModel, run_monte_carlo, run_trajectory
from .tag_localization import TagLocalizationConfig

CONFIG_KEYS = ("scene", "anchors", "tags", "obstacles", "cargo", "trajectory", "noise", "solver")

SCHEMA = """\
rmse.csv      sigma [m], method, rmse_attitude [rad in 2D, Frobenius norm of R error in 3D],
              rmse_position [m], crlb_attitude [same unit as rmse_attitude], crlb_position [m],
              feasible_runs [count]
epochs.csv    epoch [index], time [s], m_tag<i> [visible anchors of tag i], available [0/1],
              <method>_feasible [0/1], <method>_pos_error [m], <method>_att_error [rad],
              <method>_iterations [Gauss-Newton iterations], <method>_converged [0/1],
              edm_error_triangle [m], edm_error_shortestpath [m]
summary.csv   method, availability_pct [%], min/max/mean of att_error [rad] and pos_error [m],
              mean_iterations; statistics over feasible epochs only
timing.csv    epoch [index], <method>_wallclock_us [microseconds]; not reproducible by design
crlb.csv      sigma [m] or epoch [index], available [0/1], crlb_attitude [rad], crlb_position [m]
All files: UTF-8, comma separated, '.' decimal, LF line endings, NaN written as 'nan'.
"""


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every field-level message."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ExperimentConfig:
    scene: Scene
    methods: tuple = ("erbl", "dac")
    noise_grid: tuple = SIGMA_GRID
    sigma: float = 0.1
    runs: int = 1000
    seed: int = 0
    out: Path = Path("out")
    threads: int = 1
    solver: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        problems = []
        if not self.methods:
            problems.append("solver.methods: must be nonempty")
        for m in self.methods:
            if m not in METHODS:
                problems.append(f"solver.methods: unknown method {m!r}; choose from {list(METHODS)}")
        if any(s < 0 for s in self.noise_grid) or self.sigma < 0:
            problems.append("noise: sigma values must be >= 0")
        if self.runs < 1:
            problems.append("solver.runs: must be >= 1")
        if self.threads < 1:
            problems.append("threads: must be >= 1")
        if problems:
            raise ConfigError(problems)


def _box(entry, where):
    try:
        return Box(entry["center"], entry["size"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError([f"{where}: expected {{'center': [...], 'size': [...]}} ({exc})"]) from None


def _pose(entry, where):
    try:
        return Pose(entry["position"], entry["attitude"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError([f"{where}: expected {{'position': [...], 'attitude': [...]}} ({exc})"]) from None


def _trajectory(entry):
    if "waypoints" in entry:
        return aisle_trajectory(entry["waypoints"], entry.get("duration", 300), entry.get("rate", 1.0))
    if "poses" in entry:
        items = entry["poses"]
        return Trajectory([p["time"] for p in items], [_pose(p, f"trajectory.poses[{i}]") for i, p in enumerate(items)])
    raise ConfigError(["trajectory: expected 'waypoints', 'poses' or 'pose'"])


def scene_from_config(cfg):
    """Build a scene from a config mapping, starting from a builtin if one is named."""
    problems = [f"{k}: unknown key" for k in cfg if k not in CONFIG_KEYS]
    if problems:
        raise ConfigError(problems)
    ref = cfg.get("scene", "paper-2d")
    if isinstance(ref, str):
        if ref not in BUILTIN:
            raise ConfigError([f"scene: unknown builtin {ref!r}; choose from {sorted(BUILTIN)}"])
        base = builtin_scene(ref)
        scene_opts = {}
    elif isinstance(ref, dict):
        base = builtin_scene(ref["builtin"]) if "builtin" in ref else None
        scene_opts = ref
    else:
        raise ConfigError(["scene: expected a builtin name or an object"])
    kw = {} if base is None else {f.name: getattr(base, f.name) for f in dataclasses.fields(base)}
    try:
        if "anchors" in cfg:
            a = cfg["anchors"]
            kw["anchors"] = AnchorSet(a["positions"], a.get("heights"))
        if "tags" in cfg:
            t = cfg["tags"]
            kw["layout"] = TagLayout(t["positions"], t.get("heights"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError([f"anchors/tags: {exc}"]) from None
    if "obstacles" in cfg:
        kw["obstacles"] = tuple(_box(b, f"obstacles[{i}]") for i, b in enumerate(cfg["obstacles"]))
    if "cargo" in cfg:
        kw["cargo"] = None if cfg["cargo"] is None else _box(cfg["cargo"], "cargo")
    if "trajectory" in cfg:
        tr = cfg["trajectory"]
        if "pose" in tr:
            kw["pose"] = _pose(tr["pose"], "trajectory.pose")
            kw["trajectory"] = None
        else:
            kw["trajectory"] = _trajectory(tr)
            kw["pose"] = kw["trajectory"].poses[0]
    kw["name"] = scene_opts.get("name", kw.get("name", "custom"))
    for key in ("range_limit", "vehicle_height"):
        if key in scene_opts:
            kw[key] = scene_opts[key]
    if "extent" in scene_opts:
        kw["extent"] = tuple(tuple(e) for e in scene_opts["extent"])
    missing = [k for k in ("anchors", "layout") if k not in kw]
    if missing:
        raise ConfigError([f"{'tags' if k == 'layout' else k}: required for a custom scene" for k in missing])
    kw.setdefault("obstacles", ())
    try:
        return Scene(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError([f"scene: {exc}"]) from None


def _solver(entry):
    try:
        completion = CompletionConfig(**entry.get("completion", {}))
        tags = TagLocalizationConfig(**entry.get("tags", {}))
        pose = PoseRefineConfig(**entry.get("pose", {}))
        return PipelineConfig(completion, tags, pose, entry.get("bounds", "triangle"))
    except (TypeError, ValueError) as exc:
        raise ConfigError([f"solver: {exc}"]) from None


def load_config(path):
    """Parse a JSON config file; syntax errors report line and column."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"]) from None
    if not isinstance(cfg, dict):
        raise ConfigError([f"{path}: top level must be an object"])
    return cfg


def build_experiment(args):
    cfg = load_config(args.config) if args.config else {}
    if args.scene:
        cfg = dict(cfg, scene=args.scene)
    scene = scene_from_config(cfg)
    noise = cfg.get("noise", {})
    solver = cfg.get("solver", {})
    methods = tuple(args.methods.split(",")) if args.methods else tuple(solver.get("methods", ("erbl", "dac")))
    return ExperimentConfig(
        scene=scene,
        methods=methods,
        noise_grid=tuple(float(s) for s in noise.get("grid", SIGMA_GRID)),
        sigma=float(noise.get("sigma", 0.1)),
        runs=int(args.runs if args.runs is not None else solver.get("runs", 1000)),
        seed=int(args.seed if args.seed is not None else noise.get("seed", 0)),
        out=Path(args.out),
        threads=int(args.threads),
        solver=_solver({k: v for k, v in solver.items() if k not in ("methods", "runs")}),
    )


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else f"{float(x):.10g}"
    return str(x)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_rows(path):
    """Rows of a CSV written by this module, as dicts of strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _write_schema(out):
    out.mkdir(parents=True, exist_ok=True)
    (out / "schema.txt").write_bytes(SCHEMA.encode("utf-8"))


def cmd_montecarlo(exp):
    if exp.scene.pose is None:
        raise ConfigError(["trajectory.pose: Monte Carlo needs a static pose"])
    rows = run_monte_carlo(exp.scene, exp.noise_grid, exp.runs, exp.methods, exp.seed, exp.solver, exp.threads)
    header = ["sigma", "method", "rmse_attitude", "rmse_position", "crlb_attitude", "crlb_position", "feasible_runs"]
    write_csv(exp.out / "rmse.csv", header, [[r[h] for h in header] for r in rows])
    _write_schema(exp.out)
    return rows


def _stats(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return [float("nan")] * 3
    return [float(v.min()), float(v.max()), float(v.mean())]


def cmd_trajectory(exp):
    results = run_trajectory(exp.scene, noise=NoiseModel(exp.sigma, exp.seed), methods=exp.methods,
                             config=exp.solver, threads=exp.threads)
    T = exp.scene.layout.count
    header = ["epoch", "time"] + [f"m_tag{i + 1}" for i in range(T)] + ["available"]
    for m in exp.methods:
        header += [f"{m}_feasible", f"{m}_pos_error", f"{m}_att_error", f"{m}_iterations", f"{m}_converged"]
    header += ["edm_error_triangle", "edm_error_shortestpath"]
    rows = []
    for r in results:
        row = [r.epoch, r.time, *r.counts, r.available]
        for m in exp.methods:
            err = r.errors[m]
            row += [err is not None, err[0] if err else float("nan"), err[1] if err else float("nan"),
                    r.iterations[m], r.converged[m]]
        row += [r.edm_error_triangle, r.edm_error_shortestpath]
        rows.append(row)
    write_csv(exp.out / "epochs.csv", header, rows)

    summary = []
    for m in exp.methods:
        ok = [r for r in results if r.errors[m] is not None]
        att = [r.errors[m][1] for r in ok]
        pos = [r.errors[m][0] for r in ok]
        its = [r.iterations[m] for r in ok]
        summary.append([m, 100.0 * len(ok) / len(results), *_stats(att), *_stats(pos),
                        float(np.mean(its)) if its else float("nan")])
    write_csv(exp.out / "summary.csv",
              ["method", "availability_pct", "att_min", "att_max", "att_mean", "pos_min", "pos_max", "pos_mean",
               "mean_iterations"], summary)
    write_csv(exp.out / "timing.csv", ["epoch"] + [f"{m}_wallclock_us" for m in exp.methods],
              [[r.epoch] + [round(r.wallclock[m] * 1e6) for m in exp.methods] for r in results])
    _write_schema(exp.out)
    return results


def cmd_crlb(exp):
    scene = exp.scene
    rows = []
    if scene.trajectory is None:
        vis = compute_visibility(scene, scene.pose)
        for s in exp.noise_grid:
            rows.append([s, *_crlb_row(scene, scene.pose, vis, s)])
        header = ["sigma", "available", "crlb_attitude", "crlb_position"]
    else:
        for k, pose in enumerate(scene.trajectory.poses):
            rows.append([k, *_crlb_row(scene, pose, compute_visibility(scene, pose), exp.sigma)])
        header = ["epoch", "available", "crlb_attitude", "crlb_position"]
    write_csv(exp.out / "crlb.csv", header, rows)
    _write_schema(exp.out)
    return rows


def _crlb_row(scene, pose, vis, sigma):
    if sigma <= 0:
        return [True, 0.0, 0.0]
    ok, _ = check_availability(vis, scene.dim, scene.layout)
    if not ok:
        return [False, float("nan"), float("nan")]
    try:
        b = crlb(pose, scene.layout, scene.anchors, vis, sigma)
    except SingularInformation:
        return [False, float("nan"), float("nan")]
    return [True, b.attitude_bound, b.position_bound]


def validate_scene(scene):
    """``(errors, warnings)`` for scene invariants and a trajectory availability preview."""
    errors, warnings = [], []
    if scene.cargo is not None:
        for i, p in enumerate(scene.local_tags_3d()):
            if scene.cargo.contains(p):
                errors.append(f"tags[{i}]: inside the cargo box")
    if scene.layout.dim != scene.anchors.dim:
        errors.append("tags: dimension differs from anchors")
    poses = scene.trajectory.poses if scene.trajectory is not None else ([scene.pose] if scene.pose else [])
    if not poses:
        warnings.append("trajectory: no pose or trajectory given")
    unavailable = []
    for k, pose in enumerate(poses):
        if scene.extent is not None:
            inside = all(lo <= x <= hi for x, (lo, hi) in zip(pose.position, scene.extent))
            if not inside:
                warnings.append(f"trajectory: epoch {k} leaves the scene bounds")
        ok, _ = check_availability(compute_visibility(scene, pose), scene.dim, scene.layout)
        if not ok:
            unavailable.append(k)
    if unavailable:
        warnings.append(f"availability: {len(unavailable)} of {len(poses)} epochs unavailable (first {unavailable[0]})")
    return errors, warnings


def cmd_validate(path=None, scene_name=None):
    """Return ``(ok, lines)`` describing the config at ``path`` (or a builtin scene)."""
    try:
        cfg = load_config(path) if path else {}
        if scene_name:
            cfg = dict(cfg, scene=scene_name)
        scene = scene_from_config(cfg)
    except ConfigError as exc:
        return False, [f"error: {p}" for p in exc.problems]
    except OSError as exc:
        return False, [f"error: {exc}"]
    errors, warnings = validate_scene(scene)
    lines = [f"error: {e}" for e in errors] + [f"warning: {w}" for w in warnings]
    if not errors:
        lines.append("valid")
    return not errors, lines


def make_parser():
    parser = argparse.ArgumentParser(prog="rigidloc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("montecarlo", "trajectory", "crlb", "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--scene", help=f"builtin scene: {', '.join(sorted(BUILTIN))}")
        if name != "validate":
            p.add_argument("--seed", type=int)
            p.add_argument("--runs", type=int)
            p.add_argument("--out", default="out")
            p.add_argument("--methods", help="comma separated: " + ",".join(METHODS))
            p.add_argument("--threads", type=int, default=1)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    if args.command == "validate":
        ok, lines = cmd_validate(args.config, args.scene)
        print("\n".join(lines))
        return 0 if ok else 1
    try:
        exp = build_experiment(args)
        if args.command == "montecarlo":
            cmd_montecarlo(exp)
        elif args.command == "trajectory":
            cmd_trajectory(exp)
        else:
            cmd_crlb(exp)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"error: {p}", file=sys.stderr)
        return 2
    print(f"wrote results to {exp.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
