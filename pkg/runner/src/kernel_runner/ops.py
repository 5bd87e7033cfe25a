"""Tensor op library available to kernel sources, plus seeded input generation.

Sources are statement bodies over named inputs ``in0..inN-1`` calling these
ops; everything is numpy-backed on the CPU path. Input generation is fully
determined by each input's (shape, dtype, seed) record: identical specs give
bit-identical arrays across process launches.
"""

from __future__ import annotations

import hashlib
from typing import Any

import numpy as np


def _softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


NUMPY_OPS: dict[str, Any] = {
    "matmul": lambda a, b: a @ b,
    "linear": lambda x, w: x @ w,
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "scale": lambda x, c: x * c,
    "relu": lambda x: np.maximum(x, 0),
    "sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x)),
    "tanh": np.tanh,
    "exp": np.exp,
    "log": np.log,
    "softmax": _softmax,
    "reduce_max": lambda x: np.max(x),
    "reduce_min": lambda x: np.min(x),
    "reduce_sum": lambda x: np.sum(x),
    "reduce_mean": lambda x: np.mean(x),
    "transpose": lambda x: np.transpose(x),
    "zeros_like": np.zeros_like,
    "ones_like": np.ones_like,
    "clip": lambda x, lo=0.0, hi=1.0: np.clip(x, lo, hi),
}


def torch_ops(device: str) -> dict[str, Any]:
    """Torch-backed op set for GPU execution; import deferred to call time."""
    import torch

    def softmax_t(x, axis=-1):
        return torch.softmax(x, dim=axis)

    return {
        "matmul": lambda a, b: a @ b,
        "linear": lambda x, w: x @ w,
        "add": lambda a, b: a + b,
        "sub": lambda a, b: a - b,
        "mul": lambda a, b: a * b,
        "div": lambda a, b: a / b,
        "scale": lambda x, c: x * c,
        "relu": torch.relu,
        "sigmoid": torch.sigmoid,
        "tanh": torch.tanh,
        "exp": torch.exp,
        "log": torch.log,
        "softmax": softmax_t,
        "reduce_max": lambda x: torch.max(x),
        "reduce_min": lambda x: torch.min(x),
        "reduce_sum": lambda x: torch.sum(x),
        "reduce_mean": lambda x: torch.mean(x),
        "transpose": lambda x: x.T,
        "zeros_like": torch.zeros_like,
        "ones_like": torch.ones_like,
        "clip": lambda x, lo=0.0, hi=1.0: torch.clamp(x, lo, hi),
    }


def generate_input(shape: tuple[int, ...], dtype: str, seed: int) -> np.ndarray:
    """One seeded input tensor; bit-identical for identical specs."""
    rng = np.random.default_rng(seed)
    np_dtype = np.dtype(dtype)
    if np_dtype.kind in "iu":
        return rng.integers(-8, 9, size=shape).astype(np_dtype)
    if np_dtype.kind == "b":
        return rng.integers(0, 2, size=shape).astype(np_dtype)
    return rng.standard_normal(shape, dtype=np.float64).astype(np_dtype)


def generate_inputs(input_spec: list[dict]) -> list[np.ndarray]:
    return [generate_input(tuple(int(d) for d in spec["shape"]),
                           str(spec["dtype"]), int(spec["seed"]))
            for spec in input_spec]


def inputs_digest(input_spec: list[dict]) -> str:
    """sha256 over the raw bytes of every generated input, in order."""
    digest = hashlib.sha256()
    for array in generate_inputs(input_spec):
        digest.update(str(array.dtype).encode())
        digest.update(str(array.shape).encode())
        digest.update(np.ascontiguousarray(array).tobytes())
    return digest.hexdigest()
