#!/usr/bin/env python3
"""Build the committed test fixtures.

Produces, in the output directory:
  mnist_train.idcd / mnist_test.idcd   4000 / 1000 MNIST digits, pixels in [0, 1]
  mlp.json + mlp.bin (+ mlp.sidecar.json)        Flatten-Dense(32)-ReLU-Dense(10)-Softmax
  convnet.json + convnet.bin (+ sidecar)         two Conv2D/ReLU/MaxPool2D stages + Dense(10)
  probes.idcd                          the 32 probe inputs used for reference predictions

The digits come from the 5000-sample MNIST subset bundled with mlxtend
(mlxtend/data/data/mnist_5k.csv.gz); pass its path with --mnist-csv.

Usage:
  python3 fixtures/build_fixtures.py --mnist-csv mnist_5k.csv.gz --out fixtures --seed 7
"""

import argparse
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

ACCURACY_FLOOR = 0.95
PROBE_COUNT = 32


def write_dataset(path, samples, labels=None):
    samples = np.ascontiguousarray(samples, dtype="<f4")
    if samples.min() < 0.0 or samples.max() > 1.0:
        raise SystemExit(f"{path}: pixel values outside [0, 1]")
    count = samples.shape[0]
    dims = samples.shape[1:]
    with open(path, "wb") as f:
        f.write(b"IDCD")
        f.write(struct.pack("<III", 1, count, len(dims)))
        f.write(struct.pack("<" + "I" * len(dims), *dims))
        if labels is not None:
            if len(labels) != count:
                raise SystemExit(f"{path}: {len(labels)} labels for {count} samples")
            f.write(np.asarray(labels, dtype="<u4").tobytes())
        f.write(samples.tobytes())


def load_mnist(csv_path, seed):
    raw = np.loadtxt(gzip.open(csv_path), delimiter=",")
    pixels = raw[:, :-1].astype(np.float32) / 255.0
    labels = raw[:, -1].astype(np.int64)
    order = np.random.default_rng(seed).permutation(len(labels))
    pixels, labels = pixels[order], labels[order]
    images = pixels.reshape(-1, 28, 28, 1)
    return images[:4000], labels[:4000], images[4000:], labels[4000:]


class Mlp(nn.Module):
    def __init__(self):
        super().__init__()
        self.hidden = nn.Linear(784, 32)
        self.out = nn.Linear(32, 10)

    def forward(self, x):  # x: N,H,W,C
        x = x.reshape(x.shape[0], -1)
        return self.out(F.relu(self.hidden(x)))


class ConvNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 4, 3, padding=1)   # same
        self.conv2 = nn.Conv2d(4, 8, 3, padding=0)   # valid
        self.out = nn.Linear(6 * 6 * 8, 10)

    def forward(self, x):  # x: N,H,W,C
        x = x.permute(0, 3, 1, 2)
        x = F.max_pool2d(F.relu(self.conv1(x)), 2)
        x = F.max_pool2d(F.relu(self.conv2(x)), 2)
        x = x.permute(0, 2, 3, 1).reshape(x.shape[0], -1)  # HWC flatten order
        return self.out(x)


def train(model, x, y, epochs, seed):
    torch.manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=2e-3)
    xt = torch.from_numpy(x)
    yt = torch.from_numpy(y)
    gen = torch.Generator().manual_seed(seed)
    for _ in range(epochs):
        perm = torch.randperm(len(yt), generator=gen)
        for i in range(0, len(yt), 64):
            idx = perm[i:i + 64]
            batch = xt[idx]
            # one-pixel random shifts; the subset is small
            dx, dy = torch.randint(-1, 2, (2,), generator=gen).tolist()
            batch = torch.roll(batch, shifts=(dy, dx), dims=(1, 2))
            opt.zero_grad()
            loss = F.cross_entropy(model(batch), yt[idx])
            loss.backward()
            opt.step()
    return model


def accuracy(model, x, y):
    with torch.no_grad():
        pred = model(torch.from_numpy(x)).argmax(1).numpy()
    return float((pred == y).mean())


class BlobWriter:
    def __init__(self):
        self.parts = []
        self.offset = 0

    def add(self, array):
        flat = np.ascontiguousarray(array, dtype="<f4").ravel()
        ref = {"offset": self.offset, "length": int(flat.size)}
        self.parts.append(flat)
        self.offset += flat.size
        return ref

    def bytes(self):
        return np.concatenate(self.parts).astype("<f4").tobytes()


def dense_entry(blobs, linear):
    w = linear.weight.detach().numpy().T  # [in, out]
    b = linear.bias.detach().numpy()
    return {"kind": "Dense", "units": int(w.shape[1]),
            "weights": {**blobs.add(w), "shape": list(w.shape)},
            "bias": {**blobs.add(b), "shape": [int(b.size)]}}


def conv_entry(blobs, conv, padding):
    w = conv.weight.detach().numpy().transpose(2, 3, 1, 0)  # [kh, kw, in, out]
    b = conv.bias.detach().numpy()
    return {"kind": "Conv2D", "filters": int(w.shape[3]),
            "kernel": [int(w.shape[0]), int(w.shape[1])], "stride": [1, 1],
            "padding": padding,
            "weights": {**blobs.add(w), "shape": list(w.shape)},
            "bias": {**blobs.add(b), "shape": [int(b.size)]}}


def export(out_dir, name, model, layers, blobs, probes, acc, seed):
    manifest = {"format_version": 1, "input_shape": [28, 28, 1], "layers": layers}
    weights = blobs.bytes()
    (out_dir / f"{name}.bin").write_bytes(weights)
    (out_dir / f"{name}.json").write_text(json.dumps(manifest, indent=1) + "\n")
    with torch.no_grad():
        logits = model(torch.from_numpy(probes)).numpy()
    params = []
    for layer in layers:
        n = 0
        for key in ("weights", "bias"):
            if key in layer:
                n += layer[key]["length"]
        params.append(n)
    framework_params = sum(p.numel() for p in model.parameters() if p.requires_grad)
    if framework_params != sum(params):
        raise SystemExit(f"{name}: parameter count mismatch")
    sidecar = {
        "model": name,
        "layer_count": len(layers),
        "parameter_counts": params,
        "total_parameters": int(framework_params),
        "probe_inputs": "probes.idcd",
        "reference_logits": [[float(v) for v in row] for row in logits],
        "reference_predictions": [int(v) for v in logits.argmax(1)],
        "held_out_accuracy": acc,
        "seed": seed,
        "normalization": "pixels divided by 255",
    }
    (out_dir / f"{name}.sidecar.json").write_text(json.dumps(sidecar, indent=1) + "\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mnist-csv", required=True)
    ap.add_argument("--out", default=str(Path(__file__).parent))
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)

    xtr, ytr, xte, yte = load_mnist(args.mnist_csv, args.seed)
    write_dataset(out_dir / "mnist_train.idcd", xtr, ytr)
    write_dataset(out_dir / "mnist_test.idcd", xte, yte)
    probes = np.ascontiguousarray(xte[:PROBE_COUNT])
    write_dataset(out_dir / "probes.idcd", probes, yte[:PROBE_COUNT])

    torch.manual_seed(args.seed)
    mlp = train(Mlp(), xtr, ytr, epochs=40, seed=args.seed)
    mlp_acc = accuracy(mlp, xte, yte)
    blobs = BlobWriter()
    layers = [{"kind": "Flatten"}, dense_entry(blobs, mlp.hidden), {"kind": "ReLU"},
              dense_entry(blobs, mlp.out), {"kind": "Softmax"}]
    export(out_dir, "mlp", mlp, layers, blobs, probes, mlp_acc, args.seed)

    torch.manual_seed(args.seed)
    cnn = train(ConvNet(), xtr, ytr, epochs=30, seed=args.seed)
    cnn_acc = accuracy(cnn, xte, yte)
    blobs = BlobWriter()
    pool = {"kind": "MaxPool2D", "pool": [2, 2], "stride": [2, 2], "padding": "valid"}
    layers = [conv_entry(blobs, cnn.conv1, "same"), {"kind": "ReLU"}, dict(pool),
              conv_entry(blobs, cnn.conv2, "valid"), {"kind": "ReLU"}, dict(pool),
              {"kind": "Flatten"}, dense_entry(blobs, cnn.out), {"kind": "Softmax"}]
    export(out_dir, "convnet", cnn, layers, blobs, probes, cnn_acc, args.seed)

    print(f"mlp accuracy {mlp_acc:.4f}, convnet accuracy {cnn_acc:.4f}")
    if min(mlp_acc, cnn_acc) < ACCURACY_FLOOR:
        sys.exit(f"accuracy floor {ACCURACY_FLOOR} not met")


if __name__ == "__main__":
    main()
