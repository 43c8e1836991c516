"""Measure what folding right-camera frames into training does to accuracy.

Generates a stereo lawnmower survey, trains once on left frames only and
once on left + right (poses corrected by the stereo extrinsics), and
reports held-out position error for both. The test split is identical in
the two runs.

    python3 scripts/stereo_ablation.py --workdir runs/stereo --epochs 12
"""

import argparse
import json
import time
from pathlib import Path

from uwpose import dataset, synthgen
from uwpose.model import ModelConfig
from uwpose.trainer import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default="runs/stereo")
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--batch-size", type=int, default=8)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    workdir = Path(args.workdir)
    ds_dir = workdir / "dataset"
    manifest = ds_dir / "manifest.csv"
    if not manifest.exists():
        scene, spec, cam = synthgen.preset("tank-lawnmower")
        print(f"generating {spec.sample_count} stereo pairs into {ds_dir} ...", flush=True)
        synthgen.generate_dataset(scene, spec, cam, ds_dir, stereo=True)

    records = dataset.load_manifest(manifest)
    left = [r for r in records if r.camera_id == dataset.CAMERA_LEFT]
    train_recs, test_recs = dataset.split(left, 5 / 6, seed=0)
    print(f"{len(left)} left frames: {len(train_recs)} train / {len(test_recs)} test", flush=True)

    cfg = ModelConfig(input_size=64, seed=args.seed)
    tc = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=args.seed,
    )

    results = {}
    for name, recs in (("baseline", train_recs), ("augmented", dataset.augment_stereo(train_recs))):
        t0 = time.time()
        _, hist = train(
            cfg,
            recs,
            test_recs,
            tc,
            log=lambda msg: print(f"[{name}] {msg}", flush=True),
        )
        results[name] = {
            "n_train": len(recs),
            "wall_s": round(time.time() - t0, 1),
            "final_loss": hist[-1][1],
            "pos_err_m": hist[-1][2],
            "ori_err_deg": hist[-1][3],
        }

    ratio = results["augmented"]["pos_err_m"] / results["baseline"]["pos_err_m"]
    results["pos_ratio_augmented_over_baseline"] = ratio
    for name in ("baseline", "augmented"):
        r = results[name]
        print(
            f"{name:<10} n={r['n_train']:<5} {r['wall_s']:>6.1f}s "
            f"pos {r['pos_err_m']:.4f} m  ori {r['ori_err_deg']:.3f} deg"
        )
    print(f"position-error ratio augmented/baseline: {ratio:.3f}")
    out = workdir / "stereo_ablation.json"
    out.write_text(json.dumps(results, indent=2) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
