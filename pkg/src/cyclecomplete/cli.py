"""Command-line surface: dataset generation, training, completion, evaluation.

Commands: ``gen-data | train | complete | eval | export-latent``.  Every
command writes a run manifest next to its outputs; identical manifests
reproduce identical output bytes.  Exit codes: 0 success, 1 validation
error, 2 runtime divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import zlib
from dataclasses import asdict, fields

import numpy as np

from . import losses as L
from .chamfer import eval_metric
from .pointcloud_io import (
    PointCloudIOError, load_dataset, read_xyz, training_pools, write_dataset, write_ply,
)
from .shapes import CATEGORIES, DatasetSpec, build_dataset, resample_to
from .training import (
    CheckpointError, MetricsWriter, TrainConfig, Trainer, TrainingDiverged,
    load_bundle, save_checkpoint,
)


def _config_hash(payload):
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _write_manifest(path, command, config_payload, dataset_root, output_dir):
    manifest = {
        "command": command,
        "config": config_payload,
        "dataset_root": dataset_root,
        "output_dir": output_dir,
        "config_hash": _config_hash(config_payload),
    }
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _csv_list(text, cast=str):
    return tuple(cast(v) for v in text.split(",") if v)


# ---------------------------------------------------------------------------
# config file / flag resolution


_TUPLE_FIELDS = {"encoder_widths", "decoder_widths"}


def _parse_config_file(path):
    """Flat ``key = value`` lines with keys matching TrainConfig field names."""
    by_name = {f.name: f for f in fields(TrainConfig)}
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in by_name:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce(key, value)
    return out


def _coerce(key, value):
    if key in _TUPLE_FIELDS:
        return _csv_list(value, int)
    default = getattr(TrainConfig(), key)
    if isinstance(default, bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def _resolve_train_config(args, n_points):
    """Built-in defaults, then config-file keys, then explicit flags."""
    values = {}
    if args.config:
        values.update(_parse_config_file(args.config))
    flag_map = {
        "lambda_g": args.lambda_g, "lambda_c": args.lambda_c, "lambda_p": args.lambda_p,
        "lambda_gp": args.lambda_gp, "lambda_code": args.lambda_code,
        "lr": args.lr, "n_critic": args.n_critic, "batch_size": args.batch_size,
        "steps": args.steps, "pretrain_steps": args.pretrain, "seed": args.seed,
        "reduction": args.reduction, "gp_mode": args.gp_mode,
        "d_r": args.d_r, "d_z": args.d_z,
        "strategy": args.strategy, "optimizer": args.optimizer,
    }
    values.update({k: v for k, v in flag_map.items() if v is not None})
    for name in _csv_list(args.ablate or ""):
        if name not in ("partial", "gan", "cycle", "coding"):
            raise ValueError(f"--ablate: unknown switch {name!r}")
        values[f"ablate_{name}"] = True
    values.setdefault("n_points", n_points)
    if values["n_points"] != n_points:
        raise ValueError(
            f"configured n_points {values['n_points']} does not match dataset ({n_points})")
    return TrainConfig(**values)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    if args.points < 1:
        raise ValueError("--points must be positive")
    if args.count < 1:
        raise ValueError("--count must be positive")
    categories = _csv_list(args.categories)
    split = tuple(_csv_list(args.split, float))
    if len(split) != 3:
        raise ValueError("--split needs three fractions")
    spec = DatasetSpec.from_total(
        categories, args.count, n_points=args.points, tau=args.tau,
        seed=args.seed, split=split)
    dataset = build_dataset(spec)
    if os.path.isdir(args.root) and os.listdir(args.root) and not args.force:
        raise ValueError(f"{args.root} exists and is not empty (pass --force)")
    write_dataset(dataset, args.root, force=args.force)
    payload = asdict(spec)
    payload["categories"] = list(payload["categories"])
    payload["counts"] = list(payload["counts"])
    payload["split"] = list(payload["split"])
    _write_manifest(os.path.join(args.root, "run_manifest.json"),
                    "gen-data", payload, args.root, args.root)
    print(f"wrote {len(dataset.samples)} objects "
          f"(1 complete + 8 partials each) to {args.root}")
    return 0


def cmd_train(args):
    samples = load_dataset(args.data)
    inc_pool, comp_pool = training_pools(samples)
    config = _resolve_train_config(args, n_points=inc_pool.shape[1])
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(os.path.join(args.out, "run_manifest.json"),
                    "train", json.loads(config.to_json()), args.data, args.out)
    trainer = Trainer(config, inc_pool, comp_pool)
    total = config.pretrain_steps + config.steps
    with MetricsWriter(os.path.join(args.out, "metrics.csv")) as writer:
        for i in range(total):
            report = trainer.train_step()
            writer.write(report)
            if args.log_every and (i + 1) % args.log_every == 0:
                phase = "pretrain" if report.step <= config.pretrain_steps else "joint"
                print(f"[{phase}] step {report.step}/{total} "
                      f"L_AE={report.l_ae:.5f}"
                      + (f" L_cycle={report.l_cycle:.5f}" if report.l_cycle is not None else "")
                      + (f" L_D={report.l_d:.5f}" if report.l_d is not None else ""))
            if args.ckpt_every and (i + 1) % args.ckpt_every == 0:
                save_checkpoint(os.path.join(args.out, f"step_{i + 1:06d}.ckpt"), trainer)
    save_checkpoint(os.path.join(args.out, "final.ckpt"), trainer)
    print(f"finished {total} steps; final checkpoint at {args.out}/final.ckpt")
    return 0


def _load_input_cloud(path, n_points, resample, rng):
    points = read_xyz(path)
    if len(points) != n_points:
        if not resample:
            raise ValueError(
                f"{path} has {len(points)} points but the model expects {n_points}; "
                f"pass --resample to adapt")
        points = resample_to(points, n_points, rng)
    return points


def cmd_complete(args):
    bundle, config = load_bundle(args.ckpt)
    rng = np.random.default_rng(args.seed)
    points = _load_input_cloud(args.input, config.n_points, args.resample, rng)
    completed = L.predict_complete(bundle, points)
    write_ply(args.output, completed)
    outputs = {"completion": args.output}
    if args.emit_incomplete:
        code = None
        if args.code:
            code = np.array(_csv_list(args.code, float))
        incomplete = L.predict_incomplete(bundle, points, code=code, rng=rng)
        write_ply(args.emit_incomplete, incomplete)
        outputs["incomplete"] = args.emit_incomplete
    payload = {
        "checkpoint": args.ckpt, "input": args.input, "seed": args.seed,
        "resample": bool(args.resample), "code": args.code, "outputs": outputs,
    }
    _write_manifest(args.output + ".manifest.json", "complete", payload,
                    None, os.path.dirname(os.path.abspath(args.output)))
    print(f"wrote completion ({len(completed)} vertices) to {args.output}")
    return 0


def _eval_samples(samples):
    ev = [s for s in samples if s.split == "eval"]
    if not ev:
        raise ValueError("dataset has no eval split with paired complete/partial shapes")
    return ev


def cmd_eval(args):
    bundle, config = load_bundle(args.ckpt)
    samples = _eval_samples(load_dataset(args.data))
    categories = sorted({s.category for s in samples})
    resolutions = _csv_list(args.resolutions, int) if args.resolutions else None

    def metrics_at(subsample_to=None):
        per_cat = {c: [] for c in categories}
        for s in samples:
            for k, part in enumerate(s.partials):
                cloud = part
                if subsample_to is not None:
                    rng = np.random.default_rng(
                        np.random.SeedSequence(
                            (args.seed, zlib.crc32(s.id.encode()), k, subsample_to)))
                    cloud = resample_to(resample_to(part, subsample_to, rng),
                                        config.n_points, rng)
                completed = L.predict_complete(bundle, cloud)
                per_cat[s.category].append(eval_metric(completed, s.complete))
        cat_means = {c: float(np.mean(v)) for c, v in per_cat.items()}
        return cat_means, float(np.mean(list(cat_means.values())))

    with open(args.out, "w") as f:
        if resolutions is None:
            cat_means, avg = metrics_at()
            f.write("category,metric\n")
            for c in categories:
                f.write(f"{c},{cat_means[c]:.1f}\n")
            f.write(f"average,{avg:.1f}\n")
        else:
            f.write("points,average," + ",".join(categories) + "\n")
            for r in resolutions:
                cat_means, avg = metrics_at(subsample_to=r)
                f.write(f"{r},{avg:.1f}," + ",".join(f"{cat_means[c]:.1f}" for c in categories) + "\n")
    payload = {"checkpoint": args.ckpt, "data": args.data, "seed": args.seed,
               "resolutions": list(resolutions) if resolutions else None}
    _write_manifest(args.out + ".manifest.json", "eval", payload, args.data,
                    os.path.dirname(os.path.abspath(args.out)))
    print(f"wrote evaluation table to {args.out}")
    return 0


def cmd_export_latent(args):
    bundle, config = load_bundle(args.ckpt)
    samples = _eval_samples(load_dataset(args.data))
    d_r = config.d_r
    with open(args.out, "w") as f:
        f.write("id,domain," + ",".join(f"f{i}" for i in range(d_r)) + "\n")

        def row(sid, domain, vec):
            f.write(f"{sid},{domain}," + ",".join(repr(float(v)) for v in vec) + "\n")

        for s in samples:
            row(s.id, "complete", L.complete_representation(bundle, s.complete))
            for part in s.partials:
                row(s.id, "transferred", L.transferred_representation(bundle, part))
    payload = {"checkpoint": args.ckpt, "data": args.data}
    _write_manifest(args.out + ".manifest.json", "export-latent", payload, args.data,
                    os.path.dirname(os.path.abspath(args.out)))
    print(f"wrote latent table to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cyclecomplete",
        description="Unpaired point cloud completion via latent cycle transformations.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--root", required=True)
    g.add_argument("--categories", default=",".join(CATEGORIES))
    g.add_argument("--count", type=int, default=64, help="total object count")
    g.add_argument("--points", type=int, default=2048)
    g.add_argument("--tau", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--split", default="0.4,0.4,0.2")
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train on a generated dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="flat key = value config file")
    t.add_argument("--steps", type=int)
    t.add_argument("--pretrain", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--n-critic", type=int, dest="n_critic")
    t.add_argument("--lambda-g", type=float, dest="lambda_g")
    t.add_argument("--lambda-c", type=float, dest="lambda_c")
    t.add_argument("--lambda-p", type=float, dest="lambda_p")
    t.add_argument("--lambda-gp", type=float, dest="lambda_gp")
    t.add_argument("--lambda-code", type=float, dest="lambda_code")
    t.add_argument("--gp-mode", choices=("real", "interpolate"), dest="gp_mode")
    t.add_argument("--reduction", choices=("mean", "sum"))
    t.add_argument("--strategy",
                   choices=("original", "g-updates-ae", "partial-updates-ae", "cycle-updates-ae"))
    t.add_argument("--ablate", help="comma list of partial|gan|cycle|coding")
    t.add_argument("--d-r", type=int, dest="d_r")
    t.add_argument("--d-z", type=int, dest="d_z")
    t.add_argument("--optimizer", choices=("adam", "sgd"))
    t.add_argument("--ckpt-every", type=int, default=0)
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("complete", help="complete a partial cloud from a checkpoint")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--input", required=True, help="partial cloud (.xyz)")
    c.add_argument("--output", required=True, help="completed cloud (.ply)")
    c.add_argument("--resample", action="store_true",
                   help="resample the input to the model resolution")
    c.add_argument("--emit-incomplete",
                   help="also run the reverse direction and write this .ply")
    c.add_argument("--code", help="comma list fixing the missing-region code")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_complete)

    e = sub.add_parser("eval", help="evaluation table over the paired eval split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--resolutions", help="comma list of input point counts")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-latent", help="CSV of complete and transferred latents")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_latent)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, PointCloudIOError, CheckpointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
