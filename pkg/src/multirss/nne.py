"""Gene-tensor networks: genotype sums of random gene tensors and their
reduction to a flattened subset-sum instance.

A bank holds n tensors of shape (l, d, d).  A genotype x in {0,1}^n selects
genes whose tensors are summed; slice m of the sum is the weight matrix of
layer m of a ReLU network that is linear at the output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .bounds import DEFAULT_C, required_n_main
from .core import derive_seed, linf_distance, rng_from_seed
from .search import SearchResult, exact_sum, search


@dataclass(frozen=True, eq=False)
class GeneBank:
    n: int
    l: int
    d: int
    genes: np.ndarray  # (n, l, d, d)
    seed: int = 0

    def __post_init__(self):
        g = np.array(self.genes, dtype=float, copy=True)
        if g.shape != (self.n, self.l, self.d, self.d):
            raise ValueError(f"genes must have shape {(self.n, self.l, self.d, self.d)}, got {g.shape}")
        g.setflags(write=False)
        object.__setattr__(self, "genes", g)

    @property
    def dimension(self) -> int:
        return self.l * self.d * self.d

    def flat(self) -> np.ndarray:
        """n x (l d d) matrix, row-major over (layer, row, column)."""
        return self.genes.reshape(self.n, self.dimension)

    def __eq__(self, other):
        if not isinstance(other, GeneBank):
            return NotImplemented
        return self.seed == other.seed and np.array_equal(self.genes, other.genes)

    def to_json(self) -> str:
        return json.dumps({"shape": [self.n, self.l, self.d, self.d], "seed": self.seed, "entries": self.genes.ravel().tolist()})

    @classmethod
    def from_json(cls, text: str) -> "GeneBank":
        data = json.loads(text)
        n, l, d, _ = data["shape"]
        return cls(n, l, d, np.array(data["entries"], dtype=float).reshape(n, l, d, d), int(data.get("seed", 0)))


@dataclass(frozen=True)
class Genotype:
    bits: tuple

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise ValueError("genotype entries must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_subset(cls, n: int, subset) -> "Genotype":
        bits = [0] * n
        for i in subset:
            bits[i] = 1
        return cls(tuple(bits))

    @property
    def active(self) -> tuple:
        return tuple(i for i, b in enumerate(self.bits) if b)


@dataclass(frozen=True, eq=False)
class NetTensor:
    l: int
    d: int
    entries: np.ndarray  # (l, d, d)

    def __post_init__(self):
        e = np.array(self.entries, dtype=float, copy=True)
        if e.shape != (self.l, self.d, self.d):
            raise ValueError(f"entries must have shape {(self.l, self.d, self.d)}, got {e.shape}")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @classmethod
    def from_flat(cls, l: int, d: int, flat) -> "NetTensor":
        return cls(l, d, np.asarray(flat, dtype=float).reshape(l, d, d))

    def flat(self) -> np.ndarray:
        return self.entries.ravel()

    def max_entry(self) -> float:
        return float(np.abs(self.entries).max())

    def __eq__(self, other):
        if not isinstance(other, NetTensor):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    def to_json(self) -> str:
        return json.dumps({"shape": [self.l, self.d, self.d], "entries": self.entries.ravel().tolist()})

    @classmethod
    def from_json(cls, text: str) -> "NetTensor":
        data = json.loads(text)
        l, d, _ = data["shape"]
        return cls.from_flat(l, d, data["entries"])


@dataclass(frozen=True)
class GenotypeResult:
    found: bool
    genotype: Genotype
    max_entry_error: float
    search: SearchResult


def sample_genes(n: int, l: int, d: int, seed: int) -> GeneBank:
    if min(n, l, d) < 1:
        raise ValueError("n, l and d must be at least 1")
    return GeneBank(n, l, d, rng_from_seed(seed).standard_normal((n, l, d, d)), seed)


def genotype_tensor(bank: GeneBank, x: Genotype) -> NetTensor:
    """Entrywise sum of the active genes (correctly rounded, matching the search engines)."""
    if len(x.bits) != bank.n:
        raise ValueError(f"genotype has length {len(x.bits)}, bank has {bank.n} genes")
    return NetTensor.from_flat(bank.l, bank.d, exact_sum(bank.flat(), x.active))


def find_genotype(bank: GeneBank, target: NetTensor, epsilon: float, engine: str = "mim") -> GenotypeResult:
    """Search for a genotype whose tensor is within 2 epsilon of ``target`` entrywise."""
    if (target.l, target.d) != (bank.l, bank.d):
        raise ValueError("target shape does not match the bank")
    if not target.max_entry() < 1:
        raise ValueError("target entries must be smaller than 1 in absolute value")
    res = search(bank.flat(), target.flat(), 2 * epsilon, engine=engine)
    return GenotypeResult(res.found, Genotype.from_subset(bank.n, res.subset), res.error, res)


def required_genes(l: int, d: int, epsilon: float, C_const: float = DEFAULT_C) -> int:
    """Gene count sufficient for universality: the main sample size at dimension l d^2."""
    return required_n_main(l * d * d, epsilon, C_const)


def relu(u: np.ndarray) -> np.ndarray:
    return np.maximum(u, 0.0)


def forward(net: NetTensor, y) -> np.ndarray:
    """W_l relu(... relu(W_1 y)); no activation after the last layer."""
    h = np.asarray(y, dtype=float)
    if h.shape != (net.d,):
        raise ValueError(f"input must have length {net.d}")
    for m in range(net.l):
        h = net.entries[m] @ h
        if m < net.l - 1:
            h = relu(h)
    return h


def forward_error_bound(target: NetTensor, approx: NetTensor, y) -> float:
    """Bound on |forward(target, y) - forward(approx, y)|_inf from the entry error.

    Propagates b <- |W|_inf b + d * delta * |h|_inf layer by layer, where
    delta is the realized max entry error, |W|_inf the max absolute row sum
    of the target layer and h the approximating network's activation.
    """
    delta = linf_distance(target.flat(), approx.flat())
    h = np.asarray(y, dtype=float)
    b = 0.0
    for m in range(target.l):
        W = target.entries[m]
        b = float(np.abs(W).sum(axis=1).max()) * b + target.d * delta * float(np.abs(h).max(initial=0.0))
        h = approx.entries[m] @ h
        if m < target.l - 1:
            h = relu(h)
    return b


def random_target(l: int, d: int, seed: int) -> NetTensor:
    """Target tensor with entries uniform in (-1, 1)."""
    return NetTensor(l, d, rng_from_seed(seed).uniform(-1, 1, (l, d, d)))


def measure_success(l: int, d: int, n: int, epsilon: float, trials: int, seed: int, engine: str = "mim") -> dict:
    """Fraction of fresh (bank, target) pairs for which a genotype is found."""
    found = 0
    verified = True
    for t in range(trials):
        bank = sample_genes(n, l, d, derive_seed(seed, 2 * t))
        target = random_target(l, d, derive_seed(seed, 2 * t + 1))
        res = find_genotype(bank, target, epsilon, engine)
        if res.found:
            found += 1
            err = linf_distance(target.flat(), genotype_tensor(bank, res.genotype).flat())
            verified = verified and err < 2 * epsilon
    return {"trials": trials, "successes": found, "rate": found / trials, "verified": verified}
