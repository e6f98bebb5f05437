"""Convert the digit JSON files shipped in the `mnist` npm package (1.1.0)
into gzipped IDX files.

usage: python3 scripts/mnist_to_idx.py <package>/src/digits data/mnist

Pixel values in the JSON are v/255 rounded to three decimals; round(v*255)
recovers the original byte. Examples are shuffled with a fixed seed and
split 8000 train / remainder test.
"""

import gzip
import json
import random
import struct
import sys
from pathlib import Path

TRAIN = 8000


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(bytes(payload))


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    examples = []
    for label in range(10):
        data = json.loads((src / f"{label}.json").read_text())["data"]
        for i in range(len(data) // 784):
            px = [round(v * 255) for v in data[i * 784 : (i + 1) * 784]]
            examples.append((label, px))
    random.Random(20160610).shuffle(examples)
    for name, part in (("train", examples[:TRAIN]), ("t10k", examples[TRAIN:])):
        images = [b for _, px in part for b in px]
        labels = [y for y, _ in part]
        write_idx(dst / f"{name}-images-idx3-ubyte.gz", 0x803, (len(part), 28, 28), images)
        write_idx(dst / f"{name}-labels-idx1-ubyte.gz", 0x801, (len(part),), labels)
        print(name, len(part))


if __name__ == "__main__":
    main(*sys.argv[1:3])
