"""Priors over the model parameters and quadrature rules for expectations over them."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

from .errors import DomainError

DEFAULT_NODES = 16


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product rule: ``nodes`` has shape (Q, P), ``weights`` shape (Q,) and sums to 1."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        weights = np.asarray(self.weights, dtype=float).ravel()
        if nodes.shape[0] != weights.size:
            raise DomainError("quadrature nodes and weights differ in length")
        if np.any(weights <= 0.0):
            raise DomainError("quadrature weights must be positive")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def expect(self, f):
        """Weighted sum of ``f(node)`` over the rule."""
        total = None
        for w, x in zip(self.weights, self.nodes):
            term = w * np.asarray(f(x), dtype=float)
            total = term if total is None else total + term
        return total

    @staticmethod
    def tensor(rules_1d):
        """Combine per-dimension (nodes, weights) pairs into one tensor-product rule."""
        nodes = np.array(list(itertools.product(*[r[0] for r in rules_1d])), dtype=float)
        weights = np.array([np.prod(w) for w in itertools.product(*[r[1] for r in rules_1d])])
        return QuadratureRule(nodes.reshape(len(weights), len(rules_1d)), weights)


@dataclass(frozen=True)
class PriorSpec:
    """Independent prior over each model parameter.

    ``kind`` is ``"uniform"`` (params ``lo``, ``hi``), ``"gaussian"`` (``mean``,
    ``stddev``) or ``"point"`` (``value``, a point mass).
    """

    kind: str
    a: np.ndarray = field(default_factory=lambda: np.zeros(1))
    b: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if a.shape != b.shape or a.ndim != 1:
            raise DomainError("prior parameters must be 1D arrays of equal length")
        if self.kind == "uniform":
            if np.any(a >= b):
                raise DomainError("uniform prior needs lo < hi")
        elif self.kind == "gaussian":
            if np.any(b <= 0.0):
                raise DomainError("gaussian prior needs stddev > 0")
        elif self.kind != "point":
            raise DomainError(f"unknown prior kind {self.kind!r}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise DomainError("prior parameters must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def uniform(cls, lo, hi):
        return cls("uniform", lo, hi)

    @classmethod
    def gaussian(cls, mean, stddev):
        return cls("gaussian", mean, stddev)

    @classmethod
    def point(cls, value):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls("point", value, value)

    @property
    def dim(self) -> int:
        return self.a.size

    def mean(self) -> np.ndarray:
        if self.kind == "uniform":
            return 0.5 * (self.a + self.b)
        return self.a.copy()

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Box containing the prior's support (infinite for a Gaussian)."""
        if self.kind == "uniform":
            return self.a.copy(), self.b.copy()
        if self.kind == "gaussian":
            return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)
        return self.a.copy(), self.a.copy()

    def quadrature(self, n: int = DEFAULT_NODES) -> QuadratureRule:
        """Gauss-Legendre for uniform priors, Gauss-Hermite for Gaussian, one node for a point mass."""
        if self.kind == "point":
            return QuadratureRule(self.a[None, :], np.ones(1))
        if n < 1:
            raise DomainError("need at least one quadrature node")
        rules = []
        for a, b in zip(self.a, self.b):
            if self.kind == "uniform":
                x, w = leggauss(n)
                rules.append((0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * w))
            else:
                x, w = hermegauss(n)
                rules.append((a + b * x, w / np.sqrt(2.0 * np.pi)))
        return QuadratureRule.tensor(rules)

    def to_dict(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform", "lo": self.a.tolist(), "hi": self.b.tolist()}
        if self.kind == "gaussian":
            return {"kind": "gaussian", "mean": self.a.tolist(), "stddev": self.b.tolist()}
        return {"kind": "point", "value": self.a.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        kind = d.get("kind")
        if kind == "uniform":
            return cls.uniform(d["lo"], d["hi"])
        if kind == "gaussian":
            return cls.gaussian(d["mean"], d["stddev"])
        if kind == "point":
            return cls.point(d["value"])
        raise DomainError(f"unknown prior kind {kind!r}")
