"""Command-line entry point.

Subcommands: ``gen`` (render a synthetic dataset), ``train``, ``eval``,
``predict`` (one image to a pose), ``augment`` (stereo-extend a manifest),
``export-traj`` (per-sample prediction CSV).

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing/malformed files, out-of-bounds poses), 3 numerical divergence.

Option values resolve as: explicit flag > ``--config`` JSON file > built-in
default. Every run that writes an output also writes a run manifest JSON
next to it (``run_manifest.json`` in a dataset directory, ``<out>.run.json``
otherwise) capturing the resolved configuration; rerunning from that
snapshot reproduces the outputs byte for byte, timestamps aside.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__, dataset, geometry, imgio, losses, synthgen, trainer
from .errors import (
    DataError,
    DegenerateQuaternionError,
    DivergenceError,
    InvalidConfigError,
    ManifestError,
    OutOfBoundsError,
)
from .model import ModelConfig
from .synthgen import CameraConfig, SceneConfig, TrajectorySpec
from .trainer import Checkpoint, TrainConfig

DEFAULT_TRAIN_FRACTION = 6.0 / 7.0
_EVAL_BATCH = 32


def _load_json_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise InvalidConfigError(f"config file {path} must hold a JSON object")
    return cfg


def _write_run_manifest(path, subcommand, config, inputs, outputs, seed, started, t0) -> None:
    payload = {
        "subcommand": subcommand,
        "config": config,
        "inputs": [str(p) for p in inputs if p],
        "outputs": [str(p) for p in outputs if p],
        "seed": seed,
        "tool_version": __version__,
        "started_utc": started,
        "duration_s": round(time.time() - t0, 3),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _now():
    return time.time(), datetime.now(timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    t0, started = _now()
    scene, spec, cam = synthgen.preset(args.preset)
    file_cfg = _load_json_config(args.config)
    if "scene" in file_cfg:
        scene = SceneConfig.from_dict({**scene.to_dict(), **file_cfg["scene"]})
    if "trajectory" in file_cfg:
        spec = TrajectorySpec.from_dict({**spec.to_dict(), **file_cfg["trajectory"]})
    if "camera" in file_cfg:
        cam = CameraConfig.from_dict({**cam.to_dict(), **file_cfg["camera"]})
    if args.seed is not None:
        scene.seed = args.seed
    if args.samples is not None:
        spec.sample_count = args.samples
        spec.validate()
    if args.size is not None:
        cam = CameraConfig(width=args.size, height=args.size)
    t_lr = None if args.baseline is None else [args.baseline, 0.0, 0.0]
    manifest = synthgen.generate_dataset(
        scene, spec, cam, args.out, stereo=args.stereo, t_lr=t_lr
    )
    snapshot = {
        "preset": args.preset,
        "scene": scene.to_dict(),
        "trajectory": spec.to_dict(),
        "camera": cam.to_dict(),
        "stereo": bool(args.stereo),
        "baseline": args.baseline,
    }
    _write_run_manifest(
        os.path.join(args.out, "run_manifest.json"),
        "gen", snapshot, [args.config], [manifest], scene.seed, started, t0,
    )
    print(manifest)
    return 0


def _resolve_model_config(args, file_cfg) -> ModelConfig:
    kwargs = dict(file_cfg.get("model", {}))
    if getattr(args, "arch", None) is not None:
        kwargs["backbone"] = {"baseline": "plain", "residual": "residual"}[args.arch]
    if getattr(args, "lstm", None):
        kwargs["use_lstm_reducer"] = True
    if getattr(args, "lstm_hidden", None) is not None:
        kwargs["lstm_hidden"] = args.lstm_hidden
    if getattr(args, "regressor_hidden", None) is not None:
        kwargs["regressor_hidden"] = args.regressor_hidden
    if getattr(args, "input_size", None) is not None:
        kwargs["input_size"] = args.input_size
    if args.seed is not None:
        kwargs["seed"] = args.seed
    try:
        return ModelConfig(**kwargs)
    except TypeError as exc:
        raise InvalidConfigError(f"bad model config: {exc}") from None


def _resolve_train_config(args, file_cfg) -> TrainConfig:
    kwargs = dict(file_cfg.get("train", {}))
    for flag, key in (
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("lr", "learning_rate"),
        ("optimizer", "optimizer"),
        ("beta", "beta"),
        ("checkpoint_every", "checkpoint_every"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            kwargs[key] = v
    if args.seed is not None:
        kwargs["seed"] = args.seed
    try:
        return TrainConfig(**kwargs)
    except TypeError as exc:
        raise InvalidConfigError(f"bad train config: {exc}") from None


def cmd_train(args) -> int:
    t0, started = _now()
    file_cfg = _load_json_config(args.config)
    model_cfg = _resolve_model_config(args, file_cfg)
    train_cfg = _resolve_train_config(args, file_cfg)
    fraction = args.train_frac
    if fraction is None:
        fraction = file_cfg.get("train_fraction", DEFAULT_TRAIN_FRACTION)
    records = dataset.load_manifest(args.manifest)
    train_recs, eval_recs = dataset.split(records, fraction, train_cfg.seed)
    history_path = args.history
    if history_path is None:
        history_path = os.path.splitext(args.out)[0] + ".history.csv"
    _, history = trainer.train(
        model_cfg,
        train_recs,
        eval_recs,
        train_cfg,
        checkpoint_path=args.out,
        history_path=history_path,
        log=lambda msg: print(msg, file=sys.stderr),
    )
    snapshot = {
        "model": model_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "train_fraction": fraction,
    }
    _write_run_manifest(
        args.out + ".run.json",
        "train", snapshot, [args.manifest, args.config],
        [args.out, history_path], train_cfg.seed, started, t0,
    )
    final = history[-1]
    print(
        f"trained {train_cfg.epochs} epochs: loss {final[1]:.6f}, "
        f"pos {final[2]:.4f} m, ori {final[3]:.3f} deg"
    )
    return 0


def _load_eval_inputs(checkpoint_path, manifest_path):
    ckpt = Checkpoint.load(checkpoint_path)
    net = ckpt.build_net()
    records = dataset.load_manifest(manifest_path)
    if not records:
        raise ManifestError(f"{manifest_path}: no samples to evaluate")
    images, _ = dataset.prepare_arrays(records, ckpt.normalization, ckpt.model_config.input_size)
    pos = np.stack([r.position for r in records])
    quat = np.stack([r.quaternion for r in records])
    return ckpt, net, records, images, pos, quat


def cmd_eval(args) -> int:
    t0, started = _now()
    ckpt, net, _, images, pos, quat = _load_eval_inputs(args.checkpoint, args.manifest)
    report = losses.evaluate(net, images, pos, quat, ckpt.normalization, batch_size=_EVAL_BATCH)
    text = json.dumps(report.to_dict(), indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        _write_run_manifest(
            args.out + ".run.json",
            "eval", {"checkpoint": args.checkpoint}, [args.checkpoint, args.manifest],
            [args.out], ckpt.train_config.seed, started, t0,
        )
    else:
        print(text)
    return 0


def cmd_predict(args) -> int:
    t0, started = _now()
    ckpt = Checkpoint.load(args.checkpoint)
    net = ckpt.build_net()
    img = imgio.load_image(args.image)
    x = dataset.preprocess_image(img, ckpt.normalization, ckpt.model_config.input_size)[None]
    out = net.forward(x)
    if not (np.all(np.isfinite(out.p_hat.data)) and np.all(np.isfinite(out.q_hat.data))):
        raise DivergenceError("model produced a non-finite pose")
    position = ckpt.normalization.denormalize_positions(out.p_hat.data[0])
    quaternion = geometry.canonicalize(geometry.normalize(out.q_hat.data[0]))
    text = json.dumps(
        {"position": position.tolist(), "quaternion": quaternion.tolist()}, indent=2
    )
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        _write_run_manifest(
            args.out + ".run.json",
            "predict", {"checkpoint": args.checkpoint}, [args.checkpoint, args.image],
            [args.out], ckpt.train_config.seed, started, t0,
        )
    else:
        print(text)
    return 0


def cmd_augment(args) -> int:
    t0, started = _now()
    records = dataset.load_manifest(args.manifest)
    if any(r.camera_id == dataset.CAMERA_RIGHT for r in records):
        raise ManifestError(
            f"{args.manifest}: already contains right-camera rows; augment takes left-only manifests"
        )
    ext = _load_json_config(args.extrinsic)
    t_lr = ext.get("t_lr")
    q_lr = ext.get("q_lr")
    if args.baseline is not None:
        t_lr = [args.baseline, 0.0, 0.0]
    augmented = dataset.augment_stereo(records, t_lr=t_lr, q_lr=q_lr)
    dataset.write_manifest(args.out, augmented)
    _write_run_manifest(
        args.out + ".run.json",
        "augment", {"t_lr": t_lr, "q_lr": q_lr}, [args.manifest, args.extrinsic],
        [args.out], None, started, t0,
    )
    print(f"{args.out}: {len(augmented)} rows")
    return 0


def cmd_export_traj(args) -> int:
    t0, started = _now()
    ckpt, net, records, images, pos, quat = _load_eval_inputs(args.checkpoint, args.manifest)
    n = images.shape[0]
    header = (
        "idx,true_x,true_y,true_z,true_qw,true_qx,true_qy,true_qz,"
        "pred_x,pred_y,pred_z,pred_qw,pred_qx,pred_qy,pred_qz,pos_err_m,ori_err_deg"
    )
    lines = [header]
    for lo in range(0, n, _EVAL_BATCH):
        hi = min(lo + _EVAL_BATCH, n)
        out = net.forward(images[lo:hi])
        if not (np.all(np.isfinite(out.p_hat.data)) and np.all(np.isfinite(out.q_hat.data))):
            raise DivergenceError("model produced a non-finite pose")
        pred_pos = ckpt.normalization.denormalize_positions(out.p_hat.data)
        pred_quat = geometry.normalize(out.q_hat.data)
        pos_err = np.linalg.norm(pred_pos - pos[lo:hi], axis=1)
        ori_err = geometry.angle_between_deg(pred_quat, quat[lo:hi])
        for i in range(hi - lo):
            row = (
                [lo + i]
                + [repr(float(v)) for v in pos[lo + i]]
                + [repr(float(v)) for v in quat[lo + i]]
                + [repr(float(v)) for v in pred_pos[i]]
                + [repr(float(v)) for v in pred_quat[i]]
                + [repr(float(pos_err[i])), repr(float(ori_err[i]))]
            )
            lines.append(",".join(str(v) for v in row))
    with open(args.out, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_run_manifest(
        args.out + ".run.json",
        "export-traj", {"checkpoint": args.checkpoint}, [args.checkpoint, args.manifest],
        [args.out], ckpt.train_config.seed, started, t0,
    )
    print(f"{args.out}: {n} rows")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="uwpose",
        description="Synthetic underwater 6-DOF pose regression toolkit",
    )
    p.add_argument("--version", action="version", version=f"uwpose {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="render a synthetic dataset along a trajectory")
    g.add_argument("--preset", default="sim-spiral",
                   choices=["sim-spiral", "tank-lawnmower", "tank-rotation"])
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--config", help="JSON with scene/trajectory/camera overrides")
    g.add_argument("--samples", type=int, help="trajectory sample count")
    g.add_argument("--size", type=int, help="square image size in pixels")
    g.add_argument("--stereo", action="store_true", help="also render right-camera images")
    g.add_argument("--baseline", type=float, help="stereo baseline along camera x, meters")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on a manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True, help="output checkpoint path")
    t.add_argument("--history", help="loss history CSV (default: <out>.history.csv)")
    t.add_argument("--config", help="JSON with model/train overrides")
    t.add_argument("--arch", choices=["baseline", "residual"])
    t.add_argument("--lstm", action="store_true", default=None,
                   help="insert the four-direction LSTM reducer")
    t.add_argument("--lstm-hidden", type=int, dest="lstm_hidden")
    t.add_argument("--regressor-hidden", type=int, dest="regressor_hidden")
    t.add_argument("--input-size", type=int, dest="input_size")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--lr", type=float)
    t.add_argument("--optimizer", choices=["adam", "sgd_momentum"])
    t.add_argument("--beta", type=float)
    t.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    t.add_argument("--train-frac", type=float, dest="train_frac",
                   help="training split fraction (default 6/7)")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", help="report JSON path (default: stdout)")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="predict the pose of one image")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--image", required=True)
    pr.add_argument("--out", help="pose JSON path (default: stdout)")
    pr.set_defaults(func=cmd_predict)

    a = sub.add_parser("augment", help="append right-camera rows to a left manifest")
    a.add_argument("--manifest", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--extrinsic", help="JSON with t_lr (3-vector) and optional q_lr")
    a.add_argument("--baseline", type=float, help="shortcut for t_lr = [b, 0, 0]")
    a.set_defaults(func=cmd_augment)

    x = sub.add_parser("export-traj", help="per-sample prediction CSV")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--manifest", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_traj)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except InvalidConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OutOfBoundsError, DegenerateQuaternionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())
