# Copyright (c) 2026 The wdlab Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.


"""Rebuild data/mnist10k-*-idx*-ubyte.gz from the `mnist` npm package.

The package ships 10,000 MNIST digits as JSON arrays of pixel/255 values
rounded to three decimals. This script re-quantizes them to bytes, shuffles
with a fixed seed and writes gzip'd IDX files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_from_npm.py package/src/digits data
"""

import argparse
import gzip
import json
import os
import random
import struct


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=20181020)
    args = ap.parse_args()

    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(args.digits_dir, f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        for i in range(len(flat) // 784):
            images.append(bytes(int(round(v * 255)) for v in flat[i * 784:(i + 1) * 784]))
            labels.append(digit)

    order = list(range(len(images)))
    random.Random(args.seed).shuffle(order)

    os.makedirs(args.out_dir, exist_ok=True)
    with gzip.GzipFile(os.path.join(args.out_dir, "mnist10k-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for i in order:
            f.write(images[i])
    with gzip.GzipFile(os.path.join(args.out_dir, "mnist10k-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, len(images)))
        f.write(bytes(labels[i] for i in order))


if __name__ == "__main__":
    main()
