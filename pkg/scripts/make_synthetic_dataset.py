"""Write a few moving-texture clips as PNG frames plus a dataset manifest.

    python scripts/make_synthetic_dataset.py --out data/synthetic --clips 2 --frames 8 --size 64
"""
import argparse
from pathlib import Path

import yaml

from lanhdr.datapipe import moving_scene, write_frame


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/synthetic")
    ap.add_argument("--clips", type=int, default=2)
    ap.add_argument("--frames", type=int, default=8)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--exposures", type=int, choices=(2, 3), default=2)
    ap.add_argument("--stops", type=float, default=2.0)
    args = ap.parse_args()

    root = Path(args.out)
    records = []
    for c in range(args.clips):
        clip = f"clip{c:02d}"
        for i, frame in enumerate(moving_scene(args.frames, (args.size, args.size), velocity=(1, 2), seed=c)):
            write_frame(frame, root / clip / f"{i:04d}.png")
        records.append({"id": clip, "frames": f"{clip}/*.png", "exposures": args.exposures,
                        "stops": args.stops, "source": "clean"})
    (root / "manifest.yaml").write_text(yaml.safe_dump({"sequences": records}, sort_keys=False))
    print(root / "manifest.yaml")


if __name__ == "__main__":
    main()
