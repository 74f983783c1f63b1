#!/usr/bin/env python3
"""Convert the DRIVE / STARE archives into the binary Netpbm layout rcnet reads.

DRIVE (as unpacked from the official zip):
    <src>/training/images/21_training.tif
    <src>/training/1st_manual/21_manual1.gif
    <src>/training/mask/21_training_mask.gif
    <src>/test/...             same, with 01_test.tif, 01_manual1.gif, 01_test_mask.gif
  ->
    <dst>/{train,test}/images/<id>.ppm   RGB, P6
    <dst>/{train,test}/labels/<id>.pgm   0/255, P5
    <dst>/{train,test}/masks/<id>.pgm    0/255, P5

STARE (the 20 labelled images plus the "ah" annotations, .gz is fine):
    <src>/images/im0001.ppm[.gz]
    <src>/labels-ah/im0001.ah.ppm[.gz]
  ->
    <dst>/images/im0001.ppm
    <dst>/labels/im0001.ah.pgm

Requires Pillow.
"""

import argparse
import gzip
import io
import re
import sys
from pathlib import Path

from PIL import Image


def open_any(path: Path) -> Image.Image:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return Image.open(io.BytesIO(f.read())).copy()
    return Image.open(path)


def binary(img: Image.Image) -> Image.Image:
    return img.convert("L").point(lambda v: 255 if v >= 128 else 0)


def save(img: Image.Image, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path)  # Pillow writes binary P6/P5 for .ppm/.pgm


def find_one(directory: Path, pattern: str) -> Path:
    hits = sorted(directory.glob(pattern))
    if len(hits) != 1:
        sys.exit(f"expected exactly one match for {directory / pattern}, found {len(hits)}")
    return hits[0]


def convert_drive(src: Path, dst: Path) -> int:
    count = 0
    for split_in, split_out in (("training", "train"), ("test", "test")):
        images = sorted((src / split_in / "images").glob("*.tif"))
        if not images:
            sys.exit(f"no .tif images under {src / split_in / 'images'}")
        for tif in images:
            ident = tif.stem.split("_")[0]
            label = find_one(src / split_in / "1st_manual", f"{ident}_manual1.gif")
            mask = find_one(src / split_in / "mask", f"{ident}_*mask.gif")
            out = dst / split_out
            save(Image.open(tif).convert("RGB"), out / "images" / f"{ident}.ppm")
            save(binary(Image.open(label)), out / "labels" / f"{ident}.pgm")
            save(binary(Image.open(mask)), out / "masks" / f"{ident}.pgm")
            count += 1
    return count


def convert_stare(src: Path, dst: Path) -> int:
    count = 0
    for path in sorted((src / "images").iterdir()):
        m = re.match(r"(im\d{4})\.ppm(\.gz)?$", path.name)
        if not m:
            continue
        ident = m.group(1)
        label = find_one(src / "labels-ah", f"{ident}.ah.ppm*")
        save(open_any(path).convert("RGB"), dst / "images" / f"{ident}.ppm")
        save(binary(open_any(label)), dst / "labels" / f"{ident}.ah.pgm")
        count += 1
    return count


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("dataset", choices=["drive", "stare"])
    ap.add_argument("src", type=Path, help="unpacked original dataset")
    ap.add_argument("dst", type=Path, help="output root for rcnet")
    args = ap.parse_args()
    n = convert_drive(args.src, args.dst) if args.dataset == "drive" else convert_stare(args.src, args.dst)
    print(f"converted {n} images into {args.dst}")


if __name__ == "__main__":
    main()
