"""Sparse polynomial Hamiltonians in ``(u, conj(u))`` with majorant norms.

A Hamiltonian is stored as a dense exponent table: one ``int8`` row per
monomial, holding ``alpha`` (columns ``0..M-1``) followed by ``beta``
(columns ``M..2M-1``) with ``M = 2J+1`` and column ``k`` standing for the
mode ``j = k - J``.  Rows are unique and sorted by their byte string, which
doubles as the canonical monomial key.

Conventions
-----------
The vector field is ``X_H = i d H / d conj(u)`` and the bracket is

    {F, G} = i sum_j (dF/d conj(u_j) dG/du_j - dF/du_j dG/d conj(u_j)),

so that ``{|u_j|^2, u^a conj(u)^b} = i (a_j - b_j) u^a conj(u)^b`` and
``e^{ad_S} G = G o Phi_S`` where ``Phi_S`` is the time-one flow of ``X_S``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .spaces import ZERO_CUTOFF, jjap, reference_vector

EXP_DTYPE = np.int8
MAX_D = 60


# ---------------------------------------------------------------------------
# multi-indices


def as_multiindex(m) -> Tuple[Tuple[int, int], ...]:
    """Canonical sorted ``((j, e), ...)`` form with positive exponents."""
    if m is None:
        return ()
    items = m.items() if isinstance(m, Mapping) else m
    acc: Dict[int, int] = {}
    for j, e in items:
        e = int(e)
        if e < 0:
            raise ValueError("exponents must be non-negative")
        if e:
            acc[int(j)] = acc.get(int(j), 0) + e
    return tuple(sorted(acc.items()))


def mass(alpha, beta) -> int:
    """``sum_j (alpha_j - beta_j)``."""
    return sum(e for _, e in as_multiindex(alpha)) - sum(e for _, e in as_multiindex(beta))


def momentum(alpha, beta) -> int:
    """``sum_j j (alpha_j - beta_j)``."""
    return sum(j * e for j, e in as_multiindex(alpha)) - sum(j * e for j, e in as_multiindex(beta))


@dataclass(frozen=True)
class Monomial:
    alpha: Tuple[Tuple[int, int], ...]
    beta: Tuple[Tuple[int, int], ...]
    coeff: complex

    def __post_init__(self):
        object.__setattr__(self, "alpha", as_multiindex(self.alpha))
        object.__setattr__(self, "beta", as_multiindex(self.beta))
        object.__setattr__(self, "coeff", complex(self.coeff))
        if mass(self.alpha, self.beta) != 0:
            raise ValueError(f"monomial {self.alpha}|{self.beta} violates mass conservation")
        if momentum(self.alpha, self.beta) != 0:
            raise ValueError(f"monomial {self.alpha}|{self.beta} violates momentum conservation")


@dataclass(frozen=True)
class ActionVector:
    """Tangential actions ``I_s >= 0`` on a finite site list."""

    values: Mapping[int, float]

    def __post_init__(self):
        clean = {}
        for s, v in dict(self.values).items():
            v = float(v)
            if v < 0:
                raise ValueError(f"action I_{s} must be non-negative")
            clean[int(s)] = v
        object.__setattr__(self, "values", dict(sorted(clean.items())))

    def __getitem__(self, s):
        return self.values.get(int(s), 0.0)

    def radius(self, p) -> float:
        """``sqrt(sup_s I_s <<s>>^{2p})``: the smallest admissible ``r``."""
        if not self.values:
            return 0.0
        return math.sqrt(max(v * jjap(s) ** (2 * p) for s, v in self.values.items()))

    def check(self, sites, p, r):
        if not set(self.values) <= set(sites):
            raise ValueError("action support must lie inside the tangential sites")
        if self.values and not self.radius(p) < r:
            raise ValueError("actions outside the ball sup I_s <<s>>^{2p} < r^2")


# ---------------------------------------------------------------------------
# the Hamiltonian container


def _canonical(exps: np.ndarray, coeffs: np.ndarray):
    """Sum duplicate rows, drop exact zeros, sort by byte key."""
    if exps.shape[0] == 0:
        return exps.reshape(0, exps.shape[1]).astype(EXP_DTYPE), np.zeros(0, dtype=complex)
    exps = np.ascontiguousarray(exps, dtype=EXP_DTYPE)
    width = exps.shape[1]
    keys = exps.view(np.dtype((np.void, width))).ravel()
    uniq, inv = np.unique(keys, return_inverse=True)
    inv = inv.ravel()
    re = np.bincount(inv, weights=coeffs.real, minlength=uniq.size)
    im = np.bincount(inv, weights=coeffs.imag, minlength=uniq.size)
    c = re + 1j * im
    rows = np.frombuffer(uniq.tobytes(), dtype=EXP_DTYPE).reshape(-1, width)
    keep = np.abs(c) >= ZERO_CUTOFF
    return np.array(rows[keep]), c[keep]


class Hamiltonian:
    """Finite sum of monomials ``c u^alpha conj(u)^beta`` on modes ``|j| <= J``.

    Parameters
    ----------
    exps : ndarray of shape (n, 2(2J+1))
        Exponent table ``[alpha | beta]``.
    coeffs : ndarray of shape (n,)
    J : int
        Mode cutoff.
    r, p : float
        Default radius and weight for norms.
    D : int
        Degree cutoff: every monomial has ``|alpha| + |beta| <= 2D + 2``.
    sites : sequence of int, optional
        Tangential sites; needed for the normal-degree cap.
    nz_max : int, optional
        Cap on ``sum_{j not in S} (alpha_j + beta_j)``; brackets drop
        monomials above it.
    """

    __slots__ = ("exps", "coeffs", "J", "r", "p", "D", "sites", "nz_max", "info")

    def __init__(self, exps, coeffs, J, r=1.0, p=2.0, D=3, sites=None, nz_max=None,
                 canonical=False, info=None, check=True):
        M = 2 * int(J) + 1
        exps = np.asarray(exps, dtype=EXP_DTYPE).reshape(-1, 2 * M)
        coeffs = np.asarray(coeffs, dtype=complex).reshape(-1)
        if exps.shape[0] != coeffs.shape[0]:
            raise ValueError("exponent table and coefficients differ in length")
        if not 0 <= int(D) <= MAX_D:
            raise ValueError(f"degree cutoff D must lie in [0, {MAX_D}]")
        if not canonical:
            exps, coeffs = _canonical(exps, coeffs)
        exps.setflags(write=False)
        coeffs.setflags(write=False)
        self.exps, self.coeffs = exps, coeffs
        self.J, self.r, self.p, self.D = int(J), float(r), float(p), int(D)
        self.sites = None if sites is None else tuple(sorted(int(s) for s in sites))
        self.nz_max = None if nz_max is None else int(nz_max)
        self.info = dict(info or {})
        if check and exps.shape[0]:
            if np.any(self.degrees() > self.cap):
                raise ValueError("monomial above the degree cutoff 2D+2")
            a, b = self.alpha, self.beta
            if np.any(a.sum(1, dtype=np.int64) != b.sum(1, dtype=np.int64)):
                raise ValueError("mass conservation violated")
            modes = self.modes
            if np.any((a.astype(np.int64) - b) @ modes != 0):
                raise ValueError("momentum conservation violated")

    # -- construction helpers -------------------------------------------------

    @property
    def M(self):
        return 2 * self.J + 1

    @property
    def cap(self):
        return 2 * self.D + 2

    @property
    def modes(self):
        return np.arange(-self.J, self.J + 1)

    @property
    def alpha(self):
        return self.exps[:, : self.M]

    @property
    def beta(self):
        return self.exps[:, self.M:]

    def meta(self, **over):
        kw = dict(J=self.J, r=self.r, p=self.p, D=self.D, sites=self.sites, nz_max=self.nz_max)
        kw.update(over)
        return kw

    def like(self, exps, coeffs, canonical=False, info=None, check=False):
        return Hamiltonian(exps, coeffs, canonical=canonical, info=info, check=check, **self.meta())

    def zero(self):
        return self.like(np.zeros((0, 2 * self.M)), np.zeros(0), canonical=True)

    @classmethod
    def empty(cls, J, **kw):
        M = 2 * J + 1
        return cls(np.zeros((0, 2 * M)), np.zeros(0), J, canonical=True, **kw)

    @classmethod
    def from_terms(cls, terms: Iterable, J, **kw):
        """Build from ``(alpha, beta, coeff)`` triples with dict-like indices."""
        M = 2 * J + 1
        rows, cs = [], []
        for t in terms:
            mono = t if isinstance(t, Monomial) else Monomial(*t)
            row = np.zeros(2 * M, dtype=np.int64)
            for j, e in mono.alpha:
                if abs(j) > J:
                    raise ValueError(f"mode {j} outside cutoff J={J}")
                row[j + J] += e
            for j, e in mono.beta:
                if abs(j) > J:
                    raise ValueError(f"mode {j} outside cutoff J={J}")
                row[M + j + J] += e
            rows.append(row)
            cs.append(mono.coeff)
        return cls(np.array(rows, dtype=np.int64).reshape(-1, 2 * M), np.array(cs, dtype=complex), J, **kw)

    def terms(self):
        """Iterate over :class:`Monomial` objects in canonical order."""
        J = self.J
        for row, c in zip(self.exps, self.coeffs):
            a = {int(k) - J: int(e) for k, e in enumerate(row[: self.M]) if e}
            b = {int(k) - J: int(e) for k, e in enumerate(row[self.M:]) if e}
            yield Monomial(a, b, c)

    def coeff(self, alpha, beta) -> complex:
        row = np.zeros(2 * self.M, dtype=EXP_DTYPE)
        for j, e in as_multiindex(alpha):
            row[j + self.J] = e
        for j, e in as_multiindex(beta):
            row[self.M + j + self.J] = e
        hit = np.nonzero(np.all(self.exps == row, axis=1))[0]
        return complex(self.coeffs[hit[0]]) if hit.size else 0j

    def __len__(self):
        return self.exps.shape[0]

    def __repr__(self):
        return f"Hamiltonian(n={len(self)}, J={self.J}, D={self.D}, r={self.r}, p={self.p})"

    # -- algebra ---------------------------------------------------------------

    def degrees(self):
        return self.exps.sum(axis=1, dtype=np.int64)

    def normal_mask(self):
        """Boolean mask over mode columns marking normal (non-tangential) modes."""
        mask = np.ones(self.M, dtype=bool)
        if self.sites:
            mask[np.array(self.sites) + self.J] = False
        return mask

    def normal_degrees(self):
        if self.sites is None:
            return np.zeros(len(self), dtype=np.int64)
        nm = self.normal_mask()
        return (self.alpha[:, nm].sum(1, dtype=np.int64) + self.beta[:, nm].sum(1, dtype=np.int64))

    def _compatible(self, other):
        if self.J != other.J:
            raise ValueError("Hamiltonians live on different mode cutoffs")

    def __add__(self, other):
        if not isinstance(other, Hamiltonian):
            return NotImplemented
        self._compatible(other)
        return self.like(np.vstack([self.exps, other.exps]), np.concatenate([self.coeffs, other.coeffs]))

    def __neg__(self):
        return self.like(self.exps, -self.coeffs, canonical=True)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, a):
        if isinstance(a, Hamiltonian):
            return NotImplemented
        a = complex(a)
        if a == 0:
            return self.zero()
        return self.like(self.exps, self.coeffs * a, canonical=True)

    __rmul__ = __mul__

    def __truediv__(self, a):
        return self * (1.0 / complex(a))

    def conj(self):
        """The conjugate polynomial ``conj(H(u))`` (swaps alpha and beta)."""
        sw = np.hstack([self.beta, self.alpha])
        return self.like(sw, np.conj(self.coeffs))

    def is_real(self, tol=1e-12) -> bool:
        diff = self - self.conj()
        return majorant_norm(diff) <= tol * max(1.0, majorant_norm(self))

    def real_part(self):
        return (self + self.conj()) * 0.5

    def prune(self, threshold):
        keep = np.abs(self.coeffs) >= threshold
        return self.like(self.exps[keep], self.coeffs[keep], canonical=True)

    def truncate(self, D=None, nz_max=None, sites=None):
        """Drop monomials beyond new cutoffs and return the result."""
        D = self.D if D is None else D
        sites = self.sites if sites is None else sites
        nz_max = self.nz_max if nz_max is None else nz_max
        out = Hamiltonian(self.exps, self.coeffs, self.J, self.r, self.p, D=self.D,
                          sites=sites, nz_max=nz_max, canonical=True, check=False)
        keep = out.degrees() <= 2 * D + 2
        if nz_max is not None and sites is not None:
            keep &= out.normal_degrees() <= nz_max
        return Hamiltonian(out.exps[keep], out.coeffs[keep], self.J, self.r, self.p, D=D,
                           sites=sites, nz_max=nz_max, canonical=True, check=False)

    def with_meta(self, **kw):
        meta = self.meta(**kw)
        return Hamiltonian(self.exps, self.coeffs, canonical=True, check=False, info=self.info, **meta)

    def allclose(self, other, atol=1e-12):
        return float(np.max(np.abs((self - other).coeffs), initial=0.0)) <= atol

    # -- evaluation ------------------------------------------------------------

    def __call__(self, u):
        """Evaluate at a dense point (or a batch of points of shape (B, M))."""
        u = np.asarray(u, dtype=complex)
        single = u.ndim == 1
        U = np.atleast_2d(u)
        vals = _monomial_values(U, self.alpha, self.beta) @ self.coeffs
        return vals[0] if single else vals

    def vector_field(self, u):
        """``X_H(u) = i dH/d conj(u)`` at a dense point or batch."""
        u = np.asarray(u, dtype=complex)
        single = u.ndim == 1
        U = np.atleast_2d(u)
        out = np.zeros(U.shape, dtype=complex)
        b = self.beta
        for k in range(self.M):
            rows = np.nonzero(b[:, k] > 0)[0]
            if rows.size == 0:
                continue
            bb = b[rows].astype(np.int64)
            w = self.coeffs[rows] * bb[:, k]
            bb[:, k] -= 1
            out[:, k] = 1j * (_monomial_values(U, self.alpha[rows], bb) @ w)
        return out[0] if single else out


def _monomial_values(U, A, B):
    """``u^A conj(u)^B`` for a batch ``U`` (B, M) and exponent tables (n, M)."""
    A = np.asarray(A, dtype=np.int64)
    B = np.asarray(B, dtype=np.int64)
    n = A.shape[0]
    out = np.ones((U.shape[0], n), dtype=complex)
    if n == 0:
        return out
    Uc = np.conj(U)
    for k in range(U.shape[1]):
        ea, eb = A[:, k], B[:, k]
        if ea.any():
            out *= U[:, k: k + 1] ** ea[None, :]
        if eb.any():
            out *= Uc[:, k: k + 1] ** eb[None, :]
    return out


# ---------------------------------------------------------------------------
# norms


def majorant_norm(H: Hamiltonian, r=None, p=None) -> float:
    """``1/2 sup_j sum |H_ab| (a_j + b_j) u_p(r)^{a + b - 2 e_j}``."""
    if len(H) == 0:
        return 0.0
    r = H.r if r is None else float(r)
    p = H.p if p is None else float(p)
    return 0.5 * float(np.max(_norm_profile(H.exps, H.coeffs, H.J, r, p)))


def _norm_profile(exps, coeffs, J, r, p):
    M = 2 * J + 1
    u = reference_vector(r, p, J)
    A = exps[:, :M].astype(np.float64) + exps[:, M:]
    base = np.abs(coeffs) * np.exp(A @ np.log(u))
    return (base @ A) / u ** 2


# ---------------------------------------------------------------------------
# Poisson bracket


def _pair_indices(fi, gi_all, degF, degG, nzF, nzG, cap, nzcap, knormal):
    """Kept and dropped pair blocks between row sets ``fi`` (of F) and ``gi_all`` (of G)."""
    kept_f, kept_g, dropped = [], [], []
    if fi.size == 0 or gi_all.size == 0:
        return kept_f, kept_g, dropped
    df, zf = degF[fi], nzF[fi]
    dg, zg = degG[gi_all], nzG[gi_all]
    groups = np.unique(np.stack([df, zf], axis=1), axis=0)
    for d, z in groups:
        frows = fi[(df == d) & (zf == z)]
        ok = dg + d - 2 <= cap
        if nzcap is not None:
            ok &= zg + z - 2 * knormal <= nzcap
        grows = gi_all[ok]
        if grows.size:
            kept_f.append(np.repeat(frows, grows.size))
            kept_g.append(np.tile(grows, frows.size))
        bad = gi_all[~ok]
        if bad.size:
            dropped.append((frows, bad))
    return kept_f, kept_g, dropped


def poisson(F: Hamiltonian, G: Hamiltonian) -> Hamiltonian:
    """The bracket ``{F, G}`` truncated at the cutoffs of ``F``.

    Monomials above ``2D+2`` (or above ``nz_max`` normal degree) are
    dropped; ``result.info["dropped_mass"]`` holds an upper bound for the
    majorant norm of the dropped part, computed without cancellations.
    """
    F._compatible(G)
    M, J = F.M, F.J
    cap = F.cap
    nzcap = F.nz_max if F.sites is not None else None
    degF, degG = F.degrees(), G.degrees()
    nzF = F.normal_degrees()
    nzG = Hamiltonian(G.exps, G.coeffs, **F.meta(), canonical=True, check=False).normal_degrees()
    normal = F.normal_mask() if F.sites is not None else np.zeros(M, dtype=bool)
    u = reference_vector(F.r, F.p, J)
    logu = np.log(u)

    Fa, Fb = F.alpha, F.beta
    Ga, Gb = G.alpha, G.beta
    blocks_e, blocks_c = [], []
    drop_profile = np.zeros(M)
    AF = Fa.astype(np.float64) + Fb
    AG = Ga.astype(np.float64) + Gb
    uF = np.exp(AF @ logu) * np.abs(F.coeffs)
    uG = np.exp(AG @ logu) * np.abs(G.coeffs)

    for k in range(M):
        kn = int(normal[k])
        # i * F_b * G_a * beta'_k alpha''_k   and   -i * F_a * G_b * alpha'_k beta''_k
        for fmask, gmask, fsel, gsel, sign in (
            (Fb[:, k] > 0, Ga[:, k] > 0, Fb, Ga, 1j),
            (Fa[:, k] > 0, Gb[:, k] > 0, Fa, Gb, -1j),
        ):
            fi = np.nonzero(fmask)[0]
            gi = np.nonzero(gmask)[0]
            kf, kg, dropped = _pair_indices(fi, gi, degF, degG, nzF, nzG, cap, nzcap, kn)
            if kf:
                pf = np.concatenate(kf)
                pg = np.concatenate(kg)
                e = F.exps[pf].astype(np.int16) + G.exps[pg]
                e[:, k] -= 1
                e[:, M + k] -= 1
                c = sign * F.coeffs[pf] * G.coeffs[pg] * fsel[pf, k] * gsel[pg, k]
                blocks_e.append(e.astype(EXP_DTYPE))
                blocks_c.append(c)
            for frows, grows in dropped:
                wf = uF[frows] * fsel[frows, k]
                wg = uG[grows] * gsel[grows, k]
                WF, WG = wf.sum(), wg.sum()
                WAF, WAG = wf @ AF[frows], wg @ AG[grows]
                vec = WAF * WG + WF * WAG
                vec[k] -= 2.0 * WF * WG
                drop_profile += vec / (u[k] ** 2 * u ** 2)

    if blocks_e:
        exps = np.vstack(blocks_e)
        coeffs = np.concatenate(blocks_c)
    else:
        exps = np.zeros((0, 2 * M), dtype=EXP_DTYPE)
        coeffs = np.zeros(0, dtype=complex)
    return F.like(exps, coeffs, info={"dropped_mass": 0.5 * float(drop_profile.max(initial=0.0))})


def lie_transform(H: Hamiltonian, S: Hamiltonian, terms=None, tol=1e-14, rho=None, increment=False):
    """Lie series ``sum_k ad_S^k H / k!`` with ``ad_S = {S, .}``.

    The series stops at ``terms`` (default ``2D+2``) or as soon as a term
    has majorant norm below ``tol``.  With ``increment=True`` the ``k = 0``
    term is left out, which avoids cancellation in ``e^{ad_S} H - H``.
    Diagnostics in ``result.info``: ``last_term_norm``, ``n_terms``,
    ``dropped_mass`` and, when ``rho`` is given, ``admissible`` (the
    generator smallness test at ``r + rho``).
    """
    cap = H.cap if terms is None else int(terms)
    out = H.zero() if increment else H
    term = H
    dropped = 0.0
    last = majorant_norm(H)
    k = 0
    if len(S):
        for k in range(1, cap + 1):
            br = poisson(S, term)
            dropped += br.info.get("dropped_mass", 0.0) / k
            term = br / k
            out = out + term
            last = majorant_norm(term)
            if last < tol:
                break
    else:
        last = 0.0
    info = {"last_term_norm": last, "n_terms": k, "dropped_mass": dropped}
    if rho is not None:
        info["admissible"] = generator_admissible(S, H.r, rho)
    return out.like(out.exps, out.coeffs, canonical=True, info=info)


def generator_admissible(S: Hamiltonian, r, rho) -> bool:
    """``|S|_{r+rho,p} <= rho / (16 e (r + rho))``."""
    return majorant_norm(S, r + rho) <= rho / (16.0 * math.e * (r + rho))


# ---------------------------------------------------------------------------
# kernel / range and counter-terms


def project_kernel(H: Hamiltonian):
    """Split into ``(H^K, H^R)`` where ``H^K`` keeps the ``alpha = beta`` monomials."""
    k = np.all(H.alpha == H.beta, axis=1)
    HK = H.like(H.exps[k], H.coeffs[k], canonical=True)
    HR = H.like(H.exps[~k], H.coeffs[~k], canonical=True)
    return HK, HR


def lambda_embed(lam: Mapping[int, complex], I, sites, J, **meta) -> Hamiltonian:
    """``sum_{s in S} lam_s (|u_s|^2 - I_s) + sum_{j not in S} lam_j |u_j|^2``."""
    I = I if isinstance(I, ActionVector) else ActionVector(I or {})
    sites = set(int(s) for s in sites)
    terms = []
    for j, v in lam.items():
        j = int(j)
        if v == 0:
            continue
        terms.append(({j: 1}, {j: 1}, v))
        if j in sites and I[j]:
            terms.append(({}, {}, -v * I[j]))
    meta.setdefault("sites", sorted(sites))
    return Hamiltonian.from_terms(terms, J, **meta)


def extract_lambda(H: Hamiltonian) -> Dict[int, complex]:
    """Coefficients of the ``|u_j|^2`` monomials (the inverse of :func:`lambda_embed`)."""
    out = {}
    deg = H.degrees()
    rows = np.nonzero((deg == 2) & np.all(H.alpha == H.beta, axis=1))[0]
    for i in rows:
        k = int(np.argmax(H.alpha[i]))
        out[k - H.J] = complex(H.coeffs[i])
    return out


def diagonal(omega: Mapping[int, float], J, **meta) -> Hamiltonian:
    """``D(omega) = sum_j omega_j |u_j|^2``."""
    return Hamiltonian.from_terms([({j: 1}, {j: 1}, w) for j, w in omega.items() if w != 0], J, **meta)


# ---------------------------------------------------------------------------
# degree decomposition


class DegreeProjector:
    """Degree projections ``Pi^d`` for fixed tangential sites and actions.

    Each monomial is split as ``v^{a-m} conj(v)^{b-m} |v|^{2m} z^a conj(z)^b``
    with ``m = min(alpha, beta)`` on the sites.  The factor ``|v|^{2m}`` is
    Taylor expanded around ``I`` and the pieces of order
    ``2|delta| + |a| + |b| - 2 = d`` are re-expanded into plain monomials.
    """

    def __init__(self, sites, I, J):
        self.sites = tuple(sorted(int(s) for s in sites))
        self.J = int(J)
        self.I = I if isinstance(I, ActionVector) else ActionVector(I or {})
        self._cols = np.array([s + self.J for s in self.sites], dtype=np.int64)
        self._Ivec = np.array([self.I[s] for s in self.sites], dtype=float)
        self._cache: Dict[Tuple[Tuple[int, ...], int], list] = {}

    def _expansion(self, m: Tuple[int, ...], k: int):
        """Pairs ``(kappa, factor)`` of the order-``k`` piece of ``prod (w_s)^{m_s}``."""
        key = (m, k)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        idx = [i for i, e in enumerate(m) if e]
        acc: Dict[Tuple[int, ...], float] = {}
        ranges = [range(m[i] + 1) for i in idx]
        for delta in itertools.product(*ranges):
            if sum(delta) != k:
                continue
            base = 1.0
            for i, dl in zip(idx, delta):
                base *= math.comb(m[i], dl) * self._Ivec[i] ** (m[i] - dl)
            if base == 0.0:
                continue
            for kap in itertools.product(*[range(dl + 1) for dl in delta]):
                f = base
                for i, dl, kp in zip(idx, delta, kap):
                    f *= math.comb(dl, kp) * (-self._Ivec[i]) ** (dl - kp)
                if f == 0.0:
                    continue
                full = [0] * len(m)
                for i, kp in zip(idx, kap):
                    full[i] = kp
                full = tuple(full)
                acc[full] = acc.get(full, 0.0) + f
        out = [(np.array(kv, dtype=np.int64), f) for kv, f in acc.items() if f != 0.0]
        self._cache[key] = out
        return out

    def _split(self, H: Hamiltonian):
        if H.J != self.J:
            raise ValueError("projector and Hamiltonian use different cutoffs")
        M = H.M
        cols = self._cols
        a = H.alpha.astype(np.int64)
        b = H.beta.astype(np.int64)
        m = np.minimum(a[:, cols], b[:, cols])
        nm = np.ones(M, dtype=bool)
        nm[cols] = False
        nz = a[:, nm].sum(1) + b[:, nm].sum(1)
        resid = H.exps.astype(np.int64).copy()
        resid[:, cols] -= m
        resid[:, M + cols] -= m
        return m, nz, resid

    def project(self, H: Hamiltonian, degrees) -> Hamiltonian:
        """Sum of ``Pi^d H`` over ``d`` in ``degrees`` (an iterable of ints or a predicate)."""
        if callable(degrees):
            want = degrees
        else:
            dset = set(int(d) for d in degrees)
            want = dset.__contains__
        if len(H) == 0:
            return H.zero()
        M = H.M
        cols = self._cols
        m, nz, resid = self._split(H)
        keys = np.concatenate([m, nz[:, None]], axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.ravel()
        out_e, out_c = [], []
        for g, key in enumerate(uniq):
            rows = np.nonzero(inv == g)[0]
            mm = tuple(int(x) for x in key[:-1])
            z = int(key[-1])
            for k in range(sum(mm) + 1):
                d = 2 * k + z - 2
                if not want(d):
                    continue
                for kap, f in self._expansion(mm, k):
                    e = resid[rows].copy()
                    e[:, cols] += kap
                    e[:, M + cols] += kap
                    out_e.append(e)
                    out_c.append(H.coeffs[rows] * f)
        if not out_e:
            return H.zero()
        return H.like(np.vstack(out_e), np.concatenate(out_c))

    def degree(self, H, d):
        return self.project(H, [d])

    def at_least(self, H, d):
        return self.project(H, lambda x: x >= d)

    def at_most(self, H, d):
        return self.project(H, lambda x: x <= d)

    def decompose(self, H: Hamiltonian) -> Dict[int, Hamiltonian]:
        """All non-zero ``Pi^d H``, keyed by ``d``."""
        if len(H) == 0:
            return {}
        m, nz, _ = self._split(H)
        dmax = int((2 * m.sum(1) + nz - 2).max())
        out = {}
        for d in range(-2, dmax + 1):
            P = self.project(H, [d])
            if len(P):
                out[d] = P
        return out

    def min_degree(self, H: Hamiltonian) -> np.ndarray:
        """Lowest degree present in each monomial: ``|a| + |b| - 2``."""
        _, nz, _ = self._split(H)
        return nz - 2


def project_degree(H: Hamiltonian, d: int, I, sites) -> Hamiltonian:
    """``Pi^d H`` for ``d >= -2``."""
    if d < -2:
        raise ValueError("degree must be >= -2")
    return DegreeProjector(sites, I, H.J).degree(H, d)


# ---------------------------------------------------------------------------
# the NLS Hamiltonian


def _multisets(J, size):
    """Exponent vectors of all multisets of ``size`` modes from ``[-J, J]``."""
    M = 2 * J + 1
    combos = list(itertools.combinations_with_replacement(range(M), size))
    out = np.zeros((len(combos), M), dtype=np.int64)
    for i, c in enumerate(combos):
        for k in c:
            out[i, k] += 1
    return out


def _multinomial(counts):
    n = int(counts.sum())
    v = math.factorial(n)
    for e in counts:
        v //= math.factorial(int(e))
    return v


def build_nls(fcoeffs, V: Mapping[int, float], J, D, r=1.0, p=2.0, sites=None, nz_max=None,
              max_monomials=500_000) -> Hamiltonian:
    """``sum_j (j^2 + V_j)|u_j|^2 + P`` with ``P = -(1/2pi) int F(|u|^2) dx``.

    ``fcoeffs`` is a list of ``(d, f_d)`` pairs for ``f(y) = sum f_d y^d``;
    the average over the circle is normalised so that ``X_P`` matches
    ``-i f(|u|^2) u`` mode by mode.  Monomial coefficients are
    ``-f_d/(d+1)`` times the product of the two multinomial counts.
    """
    for j, v in V.items():
        if abs(v) > 0.25:
            raise ValueError(f"|V_{j}| must not exceed 1/4")
    terms = [({j: 1}, {j: 1}, j * j + V.get(j, 0.0)) for j in range(-J, J + 1) if j * j + V.get(j, 0.0) != 0]
    H = Hamiltonian.from_terms(terms, J, r=r, p=p, D=D, sites=sites, nz_max=nz_max)
    M = 2 * J + 1
    modes = np.arange(-J, J + 1)
    nmask = np.ones(M, dtype=bool)
    if sites is not None:
        nmask[np.array(sites, dtype=np.int64) + J] = False
    blocks_e, blocks_c = [], []
    for d, fd in fcoeffs:
        d = int(d)
        if d < 1 or fd == 0 or 2 * (d + 1) > 2 * D + 2:
            continue
        ms = _multisets(J, d + 1)
        mom = ms @ modes
        nzv = ms[:, nmask].sum(1)
        mult = np.array([_multinomial(row) for row in ms], dtype=float)
        estimate = sum(int(np.sum(mom == q)) ** 2 for q in np.unique(mom))
        if estimate > max_monomials:
            raise ValueError(f"degree {2 * d + 2} part needs ~{estimate} monomials, above the ceiling {max_monomials}")
        for q in np.unique(mom):
            idx = np.nonzero(mom == q)[0]
            ia = np.repeat(idx, idx.size)
            ib = np.tile(idx, idx.size)
            if nz_max is not None and sites is not None:
                ok = nzv[ia] + nzv[ib] <= nz_max
                ia, ib = ia[ok], ib[ok]
            blocks_e.append(np.hstack([ms[ia], ms[ib]]))
            blocks_c.append(-fd / (d + 1) * mult[ia] * mult[ib])
    if blocks_e:
        P = H.like(np.vstack(blocks_e), np.concatenate(blocks_c).astype(complex), check=True)
        H = H + P
    return H


def nls_density(u_x, fcoeffs):
    """``F(|u|^2) = sum f_d |u|^{2(d+1)}/(d+1)`` on grid values."""
    y = np.abs(u_x) ** 2
    return sum(fd * y ** (d + 1) / (d + 1) for d, fd in fcoeffs)


def nls_f(y, fcoeffs):
    return sum(fd * y ** d for d, fd in fcoeffs)


def f_radius_norm(fcoeffs, R):
    """``|f|_R = sum |f_d| R^d``."""
    return float(sum(abs(fd) * R ** d for d, fd in fcoeffs))


# ---------------------------------------------------------------------------
# text dumps


def dumps(H: Hamiltonian) -> str:
    """``ham r= p= D=`` header then ``alpha| beta| re im`` lines with ``j^e`` tokens."""
    lines = [f"ham r={H.r!r} p={H.p!r} D={H.D} J={H.J}"]
    for mono in H.terms():
        a = " ".join(f"{j}^{e}" for j, e in mono.alpha)
        b = " ".join(f"{j}^{e}" for j, e in mono.beta)
        lines.append(f"{a}| {b}| {mono.coeff.real!r} {mono.coeff.imag!r}")
    return "\n".join(lines) + "\n"


def loads(text: str, **meta) -> Hamiltonian:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if head[0] != "ham":
        raise ValueError("missing 'ham' header")
    fields = dict(tok.split("=", 1) for tok in head[1:])
    J = int(fields["J"]) if "J" in fields else None
    terms = []
    for ln in lines[1:]:
        a, b, rest = ln.split("|")
        re, im = rest.split()

        def parse(s):
            return {int(t.split("^")[0]): int(t.split("^")[1]) for t in s.split()}

        terms.append((parse(a), parse(b), complex(float(re), float(im))))
    if J is None:
        J = max([abs(j) for t in terms for part in t[:2] for j in part] or [1])
    meta.setdefault("r", float(fields["r"]))
    meta.setdefault("p", float(fields["p"]))
    meta.setdefault("D", int(fields["D"]))
    return Hamiltonian.from_terms(terms, J, **meta)


def random_hamiltonian(rng, J, D, n_terms, sites=None, nz_max=None, min_degree=2, real=True,
                       range_only=False, **meta) -> Hamiltonian:
    """Random mass and momentum preserving polynomial for property tests.

    Monomials have total degree in ``[min_degree, 2D+2]``.  With
    ``nz_max`` and ``sites`` the normal degree is capped.  ``real`` adds the
    conjugate partner of each monomial; ``range_only`` drops ``alpha = beta``.
    """
    M = 2 * J + 1
    normal = None
    if sites is not None and nz_max is not None:
        normal = np.ones(M, dtype=bool)
        normal[[s + J for s in sites]] = False
    rows, cs = [], []
    tries = 0
    while len(rows) < n_terms and tries < 200 * n_terms:
        tries += 1
        n = int(rng.integers(max(1, min_degree // 2), D + 2))
        a = rng.integers(-J, J + 1, size=n)
        b = rng.integers(-J, J + 1, size=n)
        b[-1] = a.sum() - b[:-1].sum()
        if abs(b[-1]) > J:
            continue
        row = np.zeros(2 * M, dtype=np.int64)
        np.add.at(row, a + J, 1)
        np.add.at(row, M + b + J, 1)
        if range_only and np.array_equal(row[:M], row[M:]):
            continue
        if normal is not None and (row[:M][normal].sum() + row[M:][normal].sum()) > nz_max:
            continue
        rows.append(row)
        cs.append(complex(rng.normal(), rng.normal()))
    exps = np.array(rows, dtype=np.int64).reshape(-1, 2 * M)
    coeffs = np.array(cs, dtype=complex)
    if real:
        sw = np.concatenate([exps[:, M:], exps[:, :M]], axis=1)
        exps = np.vstack([exps, sw])
        coeffs = np.concatenate([coeffs, coeffs.conj()])
    meta.setdefault("sites", sites)
    return Hamiltonian(exps, coeffs, J, D=D, nz_max=nz_max, **meta)
