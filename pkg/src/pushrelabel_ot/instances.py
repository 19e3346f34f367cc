"""Instance generation, MNIST ingestion and the on-disk instance cache."""

from __future__ import annotations

import gzip
import json
import math
import struct
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .core import AssignmentInstance, InputFormatError, OTInstance, ParameterError

IDX3_MAGIC = 0x00000803
SQUARE_SCALE = math.sqrt(2.0)
MNIST_SCALE = 2.0

CACHE_MAGIC = b"PROTINST1\n"


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    # PCG64, one child stream for A and one for B
    sa, sb = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(sa)), np.random.Generator(np.random.PCG64(sb))


def gen_uniform_square(n: int, seed: int, n_b: int | None = None) -> AssignmentInstance:
    """n points for A and ``n_b`` (default n) for B, uniform in the unit square.

    Cost is Euclidean distance / sqrt(2).
    """
    n_b = n if n_b is None else n_b
    if n < 1 or n_b < 1:
        raise ParameterError(f"sizes must be >= 1, got {n}, {n_b}")
    ra, rb = _streams(seed)
    pa = ra.random((n, 2))
    pb = rb.random((n_b, 2))
    cost = np.clip(cdist(pa, pb) / SQUARE_SCALE, 0.0, 1.0)
    meta = {"kind": "square", "n": n, "seed": seed}
    if n_b != n:
        meta["n_b"] = n_b
    return AssignmentInstance(cost, scale=SQUARE_SCALE, meta=meta)


def read_idx_images(path) -> np.ndarray:
    """Parse an IDX3 image file (optionally gzipped) into a ``(count, 28, 28)`` uint8 array."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InputFormatError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 16:
        raise InputFormatError(f"{path}: truncated header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX3_MAGIC:
        raise InputFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX3_MAGIC:08x}")
    if rows != 28 or cols != 28:
        raise InputFormatError(f"{path}: images are {rows}x{cols}, expected 28x28")
    body = raw[16:]
    if len(body) != count * rows * cols:
        raise InputFormatError(
            f"{path}: {len(body)} pixel bytes, header promises {count * rows * cols}")
    return np.frombuffer(body, dtype=np.uint8).reshape(count, rows, cols)


def load_mnist_pair(images_path, n: int, seed: int) -> AssignmentInstance:
    """Sample 2n distinct images, first n form A and the rest B."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    images = read_idx_images(images_path)
    if len(images) < 2 * n:
        raise InputFormatError(f"need {2 * n} images, file holds {len(images)}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    idx = rng.choice(len(images), size=2 * n, replace=False)
    flat = images[idx].reshape(2 * n, -1).astype(np.float64)
    sums = flat.sum(axis=1)
    zero = np.flatnonzero(sums == 0)
    if zero.size:
        raise InputFormatError(f"image {int(idx[zero[0]])} is all zero and cannot be normalized")
    flat /= sums[:, None]
    cost = np.clip(cdist(flat[:n], flat[n:], "cityblock") / MNIST_SCALE, 0.0, 1.0)
    return AssignmentInstance(cost, scale=MNIST_SCALE,
                              meta={"kind": "mnist", "n": n, "seed": seed,
                                    "images": [int(i) for i in idx]})


def assignment_to_ot(inst: AssignmentInstance) -> OTInstance:
    if inst.n_a != inst.n_b:
        raise ParameterError(f"uniform masses need a balanced instance, got {inst.cost.shape}")
    w = Fraction(1, inst.n_a)
    return OTInstance(inst.cost, [w] * inst.n_a, [w] * inst.n_b)


def save_instance(inst: AssignmentInstance, path) -> None:
    """Header line of JSON (sorted keys) after a magic line, then little-endian float64 costs."""
    header = {"n_a": inst.n_a, "n_b": inst.n_b, "scale": inst.scale,
              "seed": inst.meta.get("seed"), "kind": inst.meta.get("kind")}
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(inst.cost, dtype="<f8").tobytes())


def load_instance(path) -> AssignmentInstance:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InputFormatError(f"cannot read {path}: {exc}") from exc
    if not raw.startswith(CACHE_MAGIC):
        raise InputFormatError(f"{path}: not an instance file")
    rest = raw[len(CACHE_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise InputFormatError(f"{path}: missing header")
    try:
        header = json.loads(rest[:nl])
        n_a, n_b = int(header["n_a"]), int(header["n_b"])
    except (ValueError, KeyError, TypeError) as exc:
        raise InputFormatError(f"{path}: bad header: {exc}") from exc
    body = rest[nl + 1:]
    if len(body) != 8 * n_a * n_b:
        raise InputFormatError(f"{path}: expected {8 * n_a * n_b} cost bytes, found {len(body)}")
    cost = np.frombuffer(body, dtype="<f8").reshape(n_a, n_b)
    meta = {k: header[k] for k in ("kind", "seed") if header.get(k) is not None}
    return AssignmentInstance(cost, scale=float(header.get("scale", 1.0)), meta=meta)
