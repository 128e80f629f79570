"""Checkpoint container: one JSON header line, then the raw little-endian
float64 parameter payloads concatenated in header order. Round-trips are
bit-exact."""

import json
from dataclasses import asdict

import numpy as np

from .model import ModelConfig
from .tensor import Parameters, Tensor

FORMAT_VERSION = 1


def save_checkpoint(path, config, weights, seed, extra=None):
    header = {
        "format_version": FORMAT_VERSION,
        "config": asdict(config),
        "params": [[name, list(t.data.shape)] for name, t in weights.items()],
        "seed": seed,
        "extra": extra or {},
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for _name, t in weights.items():
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError("unsupported checkpoint format version")
        config = ModelConfig(**header["config"])
        tensors = {}
        for name, shape in header["params"]:
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * n)
            if len(buf) != 8 * n:
                raise ValueError("truncated checkpoint payload")
            tensors[name] = Tensor(np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
    return config, Parameters(tensors), header["seed"], header.get("extra", {})
