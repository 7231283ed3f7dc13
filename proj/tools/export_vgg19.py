"""Export torchvision VGG19 convolution weights to a PMFTENS1 tensor file.

Usage: python tools/export_vgg19.py OUT.pmft [--random]
"""

import argparse
import json
import struct

import numpy as np
import torch
import torchvision

STAGE_DEPTH = [2, 2, 4, 4, 4]


def conv_names():
    for stage, depth in enumerate(STAGE_DEPTH, start=1):
        for i in range(1, depth + 1):
            yield f"conv{stage}_{i}"


def collect(model):
    convs = [m for m in model.features if isinstance(m, torch.nn.Conv2d)]
    names = list(conv_names())
    assert len(convs) == len(names)
    tensors = []
    for name, conv in zip(names, convs):
        w = conv.weight.detach().float().numpy()
        b = conv.bias.detach().float().numpy().reshape(1, -1, 1, 1)
        tensors.append((f"{name}.weight", w))
        tensors.append((f"{name}.bias", b))
    return tensors


def write(path, tensors, metadata):
    entries = []
    offset = 0
    for name, t in tensors:
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += t.size * 4
    header = json.dumps({"format_version": 1, "metadata": metadata, "tensors": entries}).encode()
    with open(path, "wb") as f:
        f.write(b"PMFTENS1")
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for _, t in tensors:
            f.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out")
    parser.add_argument("--random", action="store_true", help="skip the download and export random weights")
    args = parser.parse_args()
    weights = None if args.random else torchvision.models.VGG19_Weights.IMAGENET1K_V1
    model = torchvision.models.vgg19(weights=weights)
    source = "random" if args.random else "torchvision IMAGENET1K_V1"
    write(args.out, collect(model), {"source": source, "arch": "vgg19"})


if __name__ == "__main__":
    main()
