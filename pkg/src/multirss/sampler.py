"""Random inputs: Gaussian matrices, containment mixtures and binary truncation."""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import MASK64, derive_seed, rng_from_seed

_MAGIC = b"RSSM"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQQI")  # magic, version, n, d, seed, tag length


@dataclass(frozen=True)
class DistributionTag:
    """How a sample matrix was produced.

    ``kind`` is one of ``standard_normal``, ``affine_normal``,
    ``containment``, ``quantized`` or ``external``; ``params`` holds the
    JSON-serializable parameters needed to regenerate it.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params}

    @classmethod
    def from_dict(cls, data: dict) -> "DistributionTag":
        return cls(data["kind"], dict(data.get("params", {})))


@dataclass(frozen=True, eq=False)
class SampleMatrix:
    values: np.ndarray
    seed: int
    tag: DistributionTag
    inner_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 2:
            raise ValueError(f"sample matrix must be 2-D, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.inner_mask is not None:
            mask = np.array(self.inner_mask, dtype=bool, copy=True)
            if mask.shape != (v.shape[0],):
                raise ValueError("inner_mask must have one entry per row")
            mask.setflags(write=False)
            object.__setattr__(self, "inner_mask", mask)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SampleMatrix):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.tag == other.tag
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )


def from_array(values, seed: int = 0) -> SampleMatrix:
    """Wrap user-supplied rows (e.g. read from a file) as a sample matrix."""
    return SampleMatrix(np.atleast_2d(np.asarray(values, dtype=float)), seed, DistributionTag("external"))


def sample_standard_normal(n: int, d: int, seed: int) -> SampleMatrix:
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    z = rng_from_seed(seed).standard_normal((n, d))
    return SampleMatrix(z, seed & MASK64, DistributionTag("standard_normal"))


def sample_affine_normal(n: int, d: int, v, sigma: float, seed: int) -> SampleMatrix:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    v = _as_vector(v, d)
    z = rng_from_seed(seed).standard_normal((n, d))
    tag = DistributionTag("affine_normal", {"v": v.tolist(), "sigma": float(sigma)})
    return SampleMatrix(v + sigma * z, seed & MASK64, tag)


@dataclass(frozen=True)
class ContainmentSpec:
    """Mixture that draws N(inner_mean, inner_sigma^2 I) with probability p.

    ``outlier`` is ``("uniform_box", halfwidth)``, ``("point_mass", vector)``
    or ``("heavy_tail", scale)``; heavy tails are Cauchy per coordinate.
    """

    p: float
    inner_mean: tuple
    inner_sigma: float = 1.0
    outlier: tuple = ("uniform_box", 1.0)

    def __post_init__(self):
        if not (0.0 < self.p <= 1.0):
            raise ValueError(f"p must lie in (0, 1], got {self.p!r}")
        if not self.inner_sigma > 0:
            raise ValueError("inner_sigma must be positive")
        object.__setattr__(self, "inner_mean", tuple(float(x) for x in self.inner_mean))
        kind, arg = self.outlier
        if kind == "point_mass":
            arg = tuple(float(x) for x in np.ravel(arg))
            if not all(math.isfinite(x) for x in arg):
                raise ValueError("outlier point must be finite")
        elif kind in ("uniform_box", "heavy_tail"):
            arg = float(arg)
            if not (math.isfinite(arg) and arg > 0):
                raise ValueError(f"{kind} parameter must be finite and positive")
        else:
            raise ValueError(f"unknown outlier family {kind!r}")
        object.__setattr__(self, "outlier", (kind, arg))

    def as_dict(self) -> dict:
        kind, arg = self.outlier
        return {
            "p": self.p,
            "inner_mean": list(self.inner_mean),
            "inner_sigma": self.inner_sigma,
            "outlier": [kind, list(arg) if isinstance(arg, tuple) else arg],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ContainmentSpec":
        kind, arg = data["outlier"]
        return cls(data["p"], tuple(data["inner_mean"]), data["inner_sigma"], (kind, arg))


def sample_containment(n: int, d: int, spec: ContainmentSpec, seed: int) -> SampleMatrix:
    # The Gaussian block uses the same stream as sample_affine_normal so that
    # p = 1 reproduces it exactly; mask and outliers use derived streams.
    v = _as_vector(spec.inner_mean, d)
    inner = v + spec.inner_sigma * rng_from_seed(seed).standard_normal((n, d))
    mask = rng_from_seed(derive_seed(seed, 1)).random(n) < spec.p
    out_rng = rng_from_seed(derive_seed(seed, 2))
    kind, arg = spec.outlier
    if kind == "uniform_box":
        outliers = out_rng.uniform(-arg, arg, size=(n, d))
    elif kind == "point_mass":
        outliers = np.broadcast_to(_as_vector(arg, d), (n, d))
    else:
        outliers = arg * out_rng.standard_cauchy((n, d))
    values = np.where(mask[:, None], inner, outliers)
    if spec.p == 1.0:
        tag = DistributionTag("affine_normal", {"v": v.tolist(), "sigma": float(spec.inner_sigma)})
    else:
        tag = DistributionTag("containment", spec.as_dict())
    return SampleMatrix(values, seed & MASK64, tag, inner_mask=mask)


def truncation_bits(delta: float) -> int:
    """Number of binary places kept so that truncation error stays below ``delta``."""
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta!r}")
    b = math.ceil(math.log2(1.0 / delta))
    # guard against log2 rounding just above an integer
    if 2.0 ** -(b - 1) <= delta:
        b -= 1
    return b


def quantize(m: SampleMatrix, delta: float) -> SampleMatrix:
    """Truncate every entry toward zero at ``truncation_bits(delta)`` binary places."""
    b = truncation_bits(delta)
    scale = 2.0**b
    q = np.trunc(m.values * scale) / scale
    tag = DistributionTag("quantized", {"source": m.tag.as_dict(), "delta": float(delta), "bits": b})
    return SampleMatrix(q, m.seed, tag, inner_mask=m.inner_mask)


def regenerate(tag: DistributionTag, n: int, d: int, seed: int) -> SampleMatrix:
    """Rebuild a matrix from its tag and seed."""
    kind, p = tag.kind, tag.params
    if kind == "standard_normal":
        return sample_standard_normal(n, d, seed)
    if kind == "affine_normal":
        return sample_affine_normal(n, d, p["v"], p["sigma"], seed)
    if kind == "containment":
        return sample_containment(n, d, ContainmentSpec.from_dict(p), seed)
    if kind == "quantized":
        src = regenerate(DistributionTag.from_dict(p["source"]), n, d, seed)
        return quantize(src, p["delta"])
    raise ValueError(f"cannot regenerate a matrix of kind {kind!r}")


def _as_vector(v, d: int) -> np.ndarray:
    v = np.zeros(d) if v is None else np.asarray(v, dtype=float).ravel()
    if v.size == 1 and d > 1:
        v = np.full(d, float(v[0]))
    if v.shape != (d,):
        raise ValueError(f"expected a vector of length {d}, got shape {v.shape}")
    return v


# -- serialization ---------------------------------------------------------


def to_bytes(m: SampleMatrix) -> bytes:
    tag = json.dumps(m.tag.as_dict(), sort_keys=True).encode("utf-8")
    head = _HEADER.pack(_MAGIC, _VERSION, m.n, m.d, m.seed & MASK64, len(tag))
    return head + tag + m.values.astype("<f8").tobytes(order="C")


def from_bytes(data: bytes) -> SampleMatrix:
    if len(data) < _HEADER.size:
        raise ValueError("truncated sample matrix header")
    magic, version, n, d, seed, tag_len = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError("not a sample matrix file (bad magic)")
    if version != _VERSION:
        raise ValueError(f"unsupported sample matrix version {version}")
    off = _HEADER.size
    tag = DistributionTag.from_dict(json.loads(data[off : off + tag_len].decode("utf-8")))
    off += tag_len
    body = data[off:]
    if len(body) != 8 * n * d:
        raise ValueError(f"expected {8 * n * d} body bytes, found {len(body)}")
    values = np.frombuffer(body, dtype="<f8").reshape(n, d)
    return SampleMatrix(values, seed, tag)


def save(m: SampleMatrix, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(m))


def load(path) -> SampleMatrix:
    """Load a matrix in the binary format or, for ``.csv`` paths, CSV."""
    path = str(path)
    if path.endswith(".csv"):
        with open(path, newline="") as fh:
            return from_csv(fh.read())
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def to_csv(m: SampleMatrix) -> str:
    buf = io.StringIO()
    buf.write(f"# seed={m.seed} tag={json.dumps(m.tag.as_dict(), sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"x{j}" for j in range(m.d)])
    for row in m.values:
        writer.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def from_csv(text: str) -> SampleMatrix:
    seed, tag = 0, DistributionTag("external")
    rows = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            meta = line[1:].strip()
            if meta.startswith("seed="):
                seed_part, _, tag_part = meta.partition(" tag=")
                seed = int(seed_part[len("seed="):])
                if tag_part:
                    tag = DistributionTag.from_dict(json.loads(tag_part))
            continue
        cells = next(csv.reader([line]))
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            if rows:
                raise
            # header row
            continue
    if not rows:
        raise ValueError("CSV contains no numeric rows")
    return SampleMatrix(np.array(rows, dtype=float), seed, tag)
