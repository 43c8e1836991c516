"""Train the three backbone variants on the spiral dataset and compare errors.

Regenerates the dataset only when the output directory has no manifest, so
repeated runs with different training settings reuse the same frames.

    python3 scripts/arch_comparison.py --workdir runs/archcmp --epochs 50
"""

import argparse
import json
import time
from pathlib import Path

from uwpose import dataset, synthgen
from uwpose.model import ModelConfig
from uwpose.trainer import TrainConfig, train

ARCHS = [
    ("plain", dict(backbone="plain")),
    ("residual", dict(backbone="residual")),
    ("lstm", dict(backbone="plain", use_lstm_reducer=True)),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default="runs/archcmp", help="dataset + outputs live here")
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--batch-size", type=int, default=8)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    workdir = Path(args.workdir)
    ds_dir = workdir / "dataset"
    manifest = ds_dir / "manifest.csv"
    if not manifest.exists():
        scene, spec, cam = synthgen.preset("sim-spiral")
        print(f"generating {spec.sample_count} frames into {ds_dir} ...", flush=True)
        synthgen.generate_dataset(scene, spec, cam, ds_dir)

    records = dataset.load_manifest(manifest)
    train_recs, test_recs = dataset.split(records, 6 / 7, seed=0)
    print(f"{len(train_recs)} train / {len(test_recs)} test frames", flush=True)

    results = {}
    for name, arch_kw in ARCHS:
        cfg = ModelConfig(input_size=64, seed=args.seed, **arch_kw)
        tc = TrainConfig(
            epochs=args.epochs,
            batch_size=args.batch_size,
            learning_rate=args.lr,
            seed=args.seed,
        )
        t0 = time.time()
        ckpt, hist = train(
            cfg,
            train_recs,
            test_recs,
            tc,
            checkpoint_path=workdir / f"{name}.uwpc",
            history_path=workdir / f"{name}_history.csv",
            log=lambda msg: print(f"[{name}] {msg}", flush=True),
        )
        wall = time.time() - t0
        _, loss, pos, ori = hist[-1]
        results[name] = {
            "params": ckpt.build_net().param_count,
            "wall_s": round(wall, 1),
            "final_loss": loss,
            "pos_err_m": pos,
            "ori_err_deg": ori,
            "best_pos_err_m": min(h[2] for h in hist),
            "best_ori_err_deg": min(h[3] for h in hist),
        }

    print(f"\n{'arch':<10} {'params':>8} {'wall':>7} {'pos err':>9} {'ori err':>9}")
    for name, r in results.items():
        print(
            f"{name:<10} {r['params']:>8} {r['wall_s']:>6.0f}s "
            f"{r['pos_err_m']:>7.3f} m {r['ori_err_deg']:>5.2f} deg"
        )
    out = workdir / "arch_comparison.json"
    out.write_text(json.dumps(results, indent=2) + "\n")
    print(f"\nwrote {out}")


if __name__ == "__main__":
    main()
