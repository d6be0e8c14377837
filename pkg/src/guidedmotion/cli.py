"""Command line entry point: ``guidedmotion <subcommand> ...``.

Every JSON artifact carries the effective ``run_config`` and ``version``;
CSV artifacts carry them as leading ``#`` comment lines.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigSchemaError, RunConfig, version_string
from .estimator import MotionPredictor, TargetPrediction, prepare
from .experiments import TABLE_COLUMNS, ablation_grid, guidance_sweep, toy_datasets
from .intentions import generate_intention_points
from .kinematics import ControlSequence, KinematicState, rollout
from .metrics import evaluate
from .plot import render_svg
from .scenario import ScenarioError, load_scenario, save_scenario
from .training import CURVE_COLUMNS
from .worlds import TEMPLATES, WorldSpec, generate

log = logging.getLogger("guidedmotion")


class CliError(Exception):
    """Bad input detected by the command layer itself."""


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, default=_json_default) + "\n"


def write_json(path, payload: dict, cfg: RunConfig | None) -> None:
    payload = dict(payload)
    payload["version"] = version_string()
    payload["run_config"] = cfg.to_dict() if cfg is not None else None
    Path(path).write_text(dumps(payload))


def write_csv(path, columns, rows, cfg: RunConfig) -> None:
    buf = io.StringIO()
    buf.write(f"# version: {version_string()}\n")
    buf.write(f"# run_config: {json.dumps(cfg.to_dict(), sort_keys=True)}\n")
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    Path(path).write_text(buf.getvalue())


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def scenario_paths(specs) -> list[Path]:
    """Expand each argument: directories give their ``*.json`` files in name order."""
    paths = []
    for spec in specs:
        p = Path(spec)
        if p.is_dir():
            found = sorted(p.glob("*.json"))
            if not found:
                raise CliError(f"{p}: no .json scenarios found")
            paths += found
        elif p.exists():
            paths.append(p)
        else:
            raise CliError(f"{p}: no such file or directory")
    return paths


def load_all(specs):
    return [load_scenario(p) for p in scenario_paths(specs)]


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_world(args):
    kw = dict(template=args.template, lane_count=args.lanes, agent_count=args.agents,
              target_count=args.targets)
    if args.count is None:
        save_scenario(generate(WorldSpec(seed=args.seed, **kw)), args.out)
        return
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        s = generate(WorldSpec(seed=args.seed + i, **kw))
        save_scenario(s, out / f"{s.id}.json")


def cmd_intents(args):
    cfg = load_config(args)
    changes = {}
    if args.k is not None:
        changes["k"] = args.k
    if args.dmax is not None:
        changes["d_max"] = args.dmax
    cfg = cfg.replace(**changes)
    s = load_scenario(args.scenario)
    res = generate_intention_points(s, args.agent, cfg.k, cfg.d_max, cfg.max_lanes)
    payload = {
        "agent_id": args.agent,
        "scenario_id": s.id,
        "points": res.points.tolist(),
        "world_points": res.world_points.tolist(),
        "lane_ids": list(res.source_lane_ids),
    }
    write_json(args.out, payload, cfg)


def _read_controls(path):
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        try:
            return np.asarray(data["accel"], dtype=float), np.asarray(data["yaw_rate"], dtype=float)
        except KeyError as exc:
            raise CliError(f"{path}: missing {exc.args[0]!r}") from None
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise CliError(f"{path}: expected {{accel, yaw_rate}} or a list of [accel, yaw_rate] pairs")
    return arr[:, 0], arr[:, 1]


def cmd_rollout(args):
    cfg = load_config(args)
    if args.dt is not None:
        cfg = cfg.replace(dt=args.dt)
    try:
        x, y, heading, speed = (float(v) for v in args.init.split(","))
    except ValueError:
        raise CliError(f"--init expects x,y,heading,speed, got {args.init!r}") from None
    accel, yaw = _read_controls(args.controls)
    waypoints = rollout(KinematicState(x, y, heading, speed), ControlSequence(accel, yaw), cfg.limits)
    payload = {"init": [x, y, heading, speed], "waypoints": waypoints.tolist()}
    if args.out:
        write_json(args.out, payload, cfg)
    else:
        payload["version"] = version_string()
        payload["run_config"] = cfg.to_dict()
        sys.stdout.write(dumps(payload))


def cmd_train(args):
    cfg = load_config(args)
    scenarios = load_all(args.data)
    est = MotionPredictor(cfg).fit(scenarios)
    save_checkpoint(args.out, est.model_, cfg, {"curve": est.curve_})
    if args.curve:
        write_csv(args.curve, CURVE_COLUMNS, est.curve_, cfg)


def _predictor_from(args):
    model, cfg = load_checkpoint(args.ckpt)
    return MotionPredictor.from_model(model, cfg), cfg


def cmd_eval(args):
    scenarios = load_all(args.scenario)
    if args.preds_in:
        data = json.loads(Path(args.preds_in).read_text())
        preds = [TargetPrediction.from_dict(d) for d in data["predictions"]]
        cfg = RunConfig.from_dict(data["run_config"]) if data.get("run_config") else load_config(args)
    elif args.ckpt:
        est, cfg = _predictor_from(args)
        preds = est.predict(scenarios)
    else:
        raise CliError("eval needs --ckpt or --preds")
    report = evaluate(preds, scenarios, cfg.top_n, cfg.nms_radius, cfg.miss_threshold)
    write_json(args.out, {"report": report.to_dict()}, cfg)
    if args.dump_preds:
        write_json(args.dump_preds, {"predictions": [p.as_dict() for p in preds]}, cfg)
    if args.dump_inputs:
        inputs, _ = prepare(scenarios, cfg)
        write_json(args.dump_inputs, {"inputs": [x.as_dict() for x in inputs]}, cfg)
    if args.plot:
        first = scenarios[0]
        Path(args.plot).write_text(render_svg(first, [p for p in preds if p.scenario_id == first.id]))


def cmd_ablate(args):
    cfg = load_config(args)
    if args.data:
        train = load_all(args.data)
        test = load_all(args.test) if args.test else train
    else:
        train, test = toy_datasets(args.count, args.test_count, args.template, args.data_seed)
    if args.guidance_weights:
        weights = [float(w) for w in args.guidance_weights.split(",")]
        rows = guidance_sweep(cfg, weights, train, test)
        columns = ("variant", "lambda_guidance", *TABLE_COLUMNS)
    else:
        rows = ablation_grid(cfg, train, test)
        columns = ("variant", "scene_compliant_points", "control_guidance", *TABLE_COLUMNS)
    write_json(args.out, {"columns": list(columns), "rows": rows}, cfg)
    if args.csv:
        write_csv(args.csv, columns, rows, cfg)
    for row in rows:
        log.info("%s", "  ".join(f"{c}={row[c]}" for c in columns))


def cmd_plot(args):
    s = load_scenario(args.scenario)
    preds = []
    if args.preds:
        data = json.loads(Path(args.preds).read_text())
        preds = [TargetPrediction.from_dict(d) for d in data["predictions"] if d["scenario_id"] == s.id]
    elif args.ckpt:
        est, _ = _predictor_from(args)
        preds = est.predict([s])
    Path(args.out).write_text(render_svg(s, preds))


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="guidedmotion", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=version_string())
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="write a synthetic scenario (or a directory of them)")
    p.add_argument("--template", choices=TEMPLATES, default="fourway")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, help="write COUNT scenes seeded SEED, SEED+1, ... into the --out directory")
    p.add_argument("--lanes", type=int, default=1)
    p.add_argument("--agents", type=int, default=3)
    p.add_argument("--targets", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("intents", help="scene-compliant intention points for one agent")
    p.add_argument("--scenario", required=True)
    p.add_argument("--agent", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--dmax", type=float)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_intents)

    p = sub.add_parser("rollout", help="integrate a control sequence")
    p.add_argument("--init", required=True, help="x,y,heading,speed")
    p.add_argument("--controls", required=True, help="JSON {accel, yaw_rate} or [[accel, yaw_rate], ...]")
    p.add_argument("--dt", type=float)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", nargs="+", required=True, help="scenario files or directories")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--curve")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (or stored predictions)")
    p.add_argument("--scenario", nargs="+", required=True, help="scenario files or directories")
    p.add_argument("--ckpt")
    p.add_argument("--preds", dest="preds_in", help="evaluate predictions saved by --dump-preds")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--plot")
    p.add_argument("--dump-preds")
    p.add_argument("--dump-inputs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train the points x guidance grid (or a guidance-weight sweep)")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--data", nargs="+", help="training scenarios; default: generated fourway scenes")
    p.add_argument("--test", nargs="+", help="held-out scenarios (default: the training set)")
    p.add_argument("--template", choices=TEMPLATES, default="fourway")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--test-count", type=int, default=50)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--guidance-weights", help="comma separated; sweeps the guidance weight instead")
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="render a scenario (and predictions) to SVG")
    p.add_argument("--scenario", required=True)
    p.add_argument("--preds")
    p.add_argument("--ckpt")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigSchemaError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CliError, ScenarioError, CheckpointError, ValueError, KeyError, OSError, RuntimeError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
