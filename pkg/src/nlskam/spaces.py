"""Weighted sequence spaces on a finite set of Fourier modes.

A sequence ``u = (u_j)`` with ``|j| <= J`` is stored as a sparse, immutable
mapping.  The weighted norm is ``|u|_p = sup_j |u_j| <<j>>^p`` with
``<<j>> = max(2, |j|)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

ZERO_CUTOFF = 1e-300


def jjap(j):
    """Return ``max(2, |j|)``; works on scalars and integer arrays."""
    if np.ndim(j) == 0:
        return max(2, abs(int(j)))
    return np.maximum(2, np.abs(np.asarray(j)))


def check_weight(p):
    p = float(p)
    if not p > 1.0:
        raise ValueError(f"weight p must exceed 1, got {p}")
    return p


@dataclass(frozen=True)
class ModeSeq:
    """Truncated complex sequence in canonical sparse form.

    Parameters
    ----------
    entries : mapping
        Mode ``j`` to complex value.  Values with modulus below
        ``1e-300`` are dropped.
    J : int
        Cutoff; every stored mode satisfies ``|j| <= J``.
    """

    entries: Mapping[int, complex] = field(default_factory=dict)
    J: int = 1

    def __post_init__(self):
        if int(self.J) < 0:
            raise ValueError("cutoff J must be non-negative")
        clean = {}
        for j, v in self.entries.items():
            j = int(j)
            if abs(j) > self.J:
                raise ValueError(f"mode {j} outside cutoff J={self.J}")
            v = complex(v)
            if abs(v) >= ZERO_CUTOFF:
                clean[j] = v
        object.__setattr__(self, "entries", MappingProxyType(dict(sorted(clean.items()))))
        object.__setattr__(self, "J", int(self.J))

    def __getitem__(self, j):
        return self.entries.get(int(j), 0j)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def modes(self):
        return np.arange(-self.J, self.J + 1)

    def to_dense(self):
        """Dense vector indexed by ``j + J``."""
        out = np.zeros(2 * self.J + 1, dtype=complex)
        for j, v in self.entries.items():
            out[j + self.J] = v
        return out

    @classmethod
    def from_dense(cls, vec, J=None):
        vec = np.asarray(vec, dtype=complex)
        if J is None:
            J = (vec.size - 1) // 2
        return cls({j - J: v for j, v in enumerate(vec)}, J)

    def prune(self, threshold):
        """Drop entries with modulus below ``threshold`` (explicit, never implicit)."""
        return ModeSeq({j: v for j, v in self.entries.items() if abs(v) >= threshold}, self.J)

    def dumps(self):
        lines = [f"modeseq J={self.J}"]
        for j, v in self.entries.items():
            lines.append(f"{j} {v.real!r} {v.imag!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = lines[0].split()
        if head[0] != "modeseq" or not head[1].startswith("J="):
            raise ValueError("missing 'modeseq J=<J>' header")
        J = int(head[1][2:])
        entries = {}
        for ln in lines[1:]:
            j, re, im = ln.split()
            entries[int(j)] = complex(float(re), float(im))
        return cls(entries, J)


def wp_norm(u: ModeSeq, p) -> float:
    """``sup_j |u_j| <<j>>^p`` over stored modes; 0 for the empty sequence."""
    if not len(u):
        return 0.0
    j = np.fromiter(u.entries.keys(), dtype=np.int64)
    v = np.abs(np.fromiter(u.entries.values(), dtype=complex))
    return float(np.max(v * jjap(j).astype(float) ** float(p)))


def l1_norm(u: ModeSeq) -> float:
    return float(sum(abs(v) for v in u.entries.values()))


def reference_point(r, p, J) -> ModeSeq:
    """The point ``u_j = r <<j>>^{-p}`` for ``|j| <= J``."""
    if not r > 0:
        raise ValueError("radius r must be positive")
    return ModeSeq({j: r * jjap(j) ** (-float(p)) for j in range(-J, J + 1)}, J)


def reference_vector(r, p, J) -> np.ndarray:
    """Dense real version of :func:`reference_point`."""
    j = np.arange(-J, J + 1)
    return r * jjap(j).astype(float) ** (-float(p))


def embedding_constants(p, k, J):
    """Truncated immersion constants ``(c, 2)`` with ``1/c = sum <<j>>^{k-p}``.

    Raises
    ------
    ValueError
        If ``k >= p - 1``; the weight sum diverges as ``J`` grows.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    if k >= p - 1:
        raise ValueError(f"need k < p - 1, got k={k}, p={p}")
    j = np.arange(-J, J + 1)
    inv = float(np.sum(jjap(j).astype(float) ** (k - float(p))))
    return 1.0 / inv, 2.0


def evaluate_field(u: ModeSeq, x: Iterable[float]) -> np.ndarray:
    """``sum_j u_j e^{ijx}`` on a grid."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x, dtype=complex)
    for j, v in u.entries.items():
        out += v * np.exp(1j * j * x)
    return out
