"""Inversion of the Lie derivative ``L_omega = {D(omega), .}`` on the range.

With the bracket convention of :mod:`nlskam.hamops`,
``L_omega (u^a conj(u)^b) = i omega.(a - b) u^a conj(u)^b`` so the inverse
divides coefficients by ``i omega.(a - b)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .hamops import Hamiltonian, diagonal, majorant_norm
from .sites import SiteSchedule, gen_sites
from .smalldiv import RESONANCE_FLOOR, enumerate_A, sample_frequencies, td_weights_dense
from .spaces import jjap

# Frozen constant of the loss bound: ``fit_loss_constant()`` on power2 sites
# returns about 0.297; frozen with a factor 2 margin.
LOSS_CONSTANT = 0.6


class HomologicalError(ValueError):
    """Raised on kernel monomials, small divisors or normal-degree violations."""


@dataclass
class FrequencyVector:
    """Frequencies ``omega_j`` for ``|j| <= J`` with ``|omega_j - j^2| < 1/2``.

    Parameters
    ----------
    values : array of shape (2J+1,)
        Dense frequencies indexed by ``j + J``.
    J : int
    schedule : SiteSchedule
        Generator of the tangential sites.
    """

    values: np.ndarray
    J: int
    schedule: SiteSchedule = field(default_factory=SiteSchedule)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size != 2 * self.J + 1:
            raise ValueError("need one frequency per mode |j| <= J")
        j = np.arange(-self.J, self.J + 1)
        if np.any(np.abs(self.values - j ** 2) >= 0.5):
            bad = int(j[np.argmax(np.abs(self.values - j ** 2))])
            raise ValueError(f"|omega_j - j^2| must stay below 1/2 (mode {bad})")

    @classmethod
    def from_shifts(cls, J, schedule=None, nu_shift=None, V=None):
        """``j^2`` plus ``nu_shift`` on sites and ``V`` on normal modes."""
        schedule = schedule or SiteSchedule()
        w = np.arange(-J, J + 1, dtype=float) ** 2
        for src in (nu_shift or {}, V or {}):
            for j, v in dict(src).items():
                w[int(j) + J] += float(v)
        return cls(w, J, schedule)

    @property
    def sites(self):
        return gen_sites(self.schedule, self.J)

    @property
    def nu(self):
        return {s: float(self.values[s + self.J]) for s in self.sites}

    @property
    def Omega(self):
        S = set(self.sites)
        return {j: float(self.values[j + self.J]) for j in range(-self.J, self.J + 1) if j not in S}

    def dense(self):
        return self.values.copy()

    def as_dict(self):
        return {j: float(self.values[j + self.J]) for j in range(-self.J, self.J + 1)}

    def D(self, **meta) -> Hamiltonian:
        """The quadratic Hamiltonian ``sum omega_j |u_j|^2``."""
        meta.setdefault("sites", self.sites)
        return diagonal(self.as_dict(), self.J, **meta)

    def divisors(self, H: Hamiltonian) -> np.ndarray:
        """``omega.(alpha - beta)`` for every monomial of ``H``."""
        if H.J != self.J:
            raise ValueError("frequency and Hamiltonian cutoffs differ")
        ell = H.alpha.astype(np.int64) - H.beta
        return ell @ self.values


def _normal_degree(H: Hamiltonian, sites):
    mask = np.ones(H.M, dtype=bool)
    for s in sites:
        mask[s + H.J] = False
    both = H.alpha.astype(np.int64) + H.beta
    return both[:, mask].sum(1)


def solve_homological(F: Hamiltonian, omega: FrequencyVector, floor: Optional[float] = None, *,
                      gamma: Optional[float] = None, tau: float = 1.5, kam_mode: bool = True) -> Hamiltonian:
    """Solve ``{D(omega), S} = F`` coefficientwise.

    Parameters
    ----------
    F : Hamiltonian
        Must have no kernel (``alpha = beta``) monomials.
    omega : FrequencyVector
    floor : float, optional
        Smallest admissible ``|omega.(alpha - beta)|``.  When omitted and
        ``gamma`` is given, the per-monomial floor ``gamma td(alpha-beta)/2``
        is used; otherwise the resonance floor ``1e-14``.
    kam_mode : bool
        Require at most two normal units per monomial.

    Raises
    ------
    HomologicalError
        On kernel monomials, small divisors, or (in KAM mode) monomials of
        normal degree above two.
    """
    if len(F) == 0:
        return F.zero()
    kern = np.all(F.alpha == F.beta, axis=1)
    if kern.any():
        m = next(iter(F.like(F.exps[kern][:1], F.coeffs[kern][:1], canonical=True).terms()))
        raise HomologicalError(f"kernel monomial alpha={dict(m.alpha)} beta={dict(m.beta)} is not in the range")
    sites = gen_sites(omega.schedule, F.J)
    if kam_mode:
        nz = _normal_degree(F, sites)
        if np.any(nz > 2):
            raise HomologicalError("monomial with more than two normal units in KAM mode")
    div = omega.divisors(F)
    if floor is not None:
        thr = np.full(len(F), float(floor))
    elif gamma is not None:
        ell = F.alpha.astype(np.int64) - F.beta
        thr = 0.5 * gamma * td_weights_dense(ell, omega.schedule, F.J, tau)
    else:
        thr = np.full(len(F), RESONANCE_FLOOR)
    thr = np.maximum(thr, RESONANCE_FLOOR)
    small = np.abs(div) < thr
    if small.any():
        k = int(np.argmax(small))
        m = next(iter(F.like(F.exps[k:k + 1], F.coeffs[k:k + 1], canonical=True).terms()))
        raise HomologicalError(
            f"small divisor {div[k]:.3e} at alpha={dict(m.alpha)} beta={dict(m.beta)} (floor {thr[k]:.3e})")
    return F.like(F.exps, F.coeffs / (1j * div), canonical=True)


def lie_derivative(S: Hamiltonian, omega: FrequencyVector) -> Hamiltonian:
    """``L_omega S = i omega.(alpha - beta) S``, the bracket ``{D(omega), S}``."""
    return S.like(S.exps, S.coeffs * (1j * omega.divisors(S)), canonical=True).prune(0.0)


@dataclass
class LossReport:
    lhs: float
    rhs_log: float
    norm_F: float
    K: float
    c: float
    holds: bool

    @property
    def ratio(self):
        """``lhs / rhs`` (0 when the solution vanishes)."""
        if self.lhs == 0:
            return 0.0
        return math.exp(math.log(self.lhs) - self.rhs_log)


def k_factor(F: Hamiltonian, omega: FrequencyVector, delta: float, gamma: float) -> float:
    """``gamma sup (<<j>>^2 / prod <<s>>^{alpha+beta})^delta / |omega.ell|`` over monomials and their modes."""
    if len(F) == 0:
        return 0.0
    w = np.log(jjap(F.modes).astype(float))
    both = F.alpha.astype(np.float64) + F.beta
    logprod = both @ w
    # best mode j in the support: the largest <<j>> present
    present = both > 0
    jmax = np.where(present, w[None, :], -np.inf).max(axis=1)
    fac = np.exp(delta * (2.0 * jmax - logprod))
    return float(gamma * np.max(fac / np.abs(omega.divisors(F))))


def loss_bound_report(F: Hamiltonian, omega: FrequencyVector, delta: float, gamma: float,
                      r=None, p=None, c: float = LOSS_CONSTANT, **solve_kw) -> LossReport:
    """Compare ``|S|_{r,p+delta}`` with ``gamma^{-1} exp(exp(c delta^{-1/eta})) |F|_{r,p}``.

    The right-hand side is kept in log form since it overflows for small
    ``delta``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    r = F.r if r is None else r
    p = F.p if p is None else p
    S = solve_homological(F, omega, **solve_kw)
    lhs = majorant_norm(S, r, p + delta)
    nF = majorant_norm(F, r, p)
    eta = omega.schedule.eta
    rhs_log = (-math.log(gamma) + math.exp(c * delta ** (-1.0 / eta)) + math.log(nF)) if nF > 0 else -math.inf
    holds = lhs == 0 or math.log(lhs) <= rhs_log
    return LossReport(lhs, rhs_log, nF, k_factor(F, omega, delta, gamma), c, holds)


def required_loss_constant(F, omega, delta, gamma, r=None, p=None, **solve_kw) -> float:
    """Smallest ``c >= 0`` making the loss bound hold for this instance."""
    r = F.r if r is None else r
    p = F.p if p is None else p
    S = solve_homological(F, omega, **solve_kw)
    lhs = majorant_norm(S, r, p + delta)
    nF = majorant_norm(F, r, p)
    if lhs == 0 or nF == 0:
        return 0.0
    need = math.log(gamma * lhs / nF)  # must be <= exp(c delta^{-1/eta})
    if need <= 1.0:
        return 0.0
    return math.log(need) * delta ** (1.0 / omega.schedule.eta)


def fit_loss_constant(schedule=None, J=8, lmax=6, gammas=(0.2, 0.1, 0.05), deltas=(0.1, 0.3, 0.5, 0.9),
                      weights=(2.0, 3.0), samples=20000, n_edge=20, seed=7) -> float:
    """Largest required ``c`` over a near-resonant sweep.

    ``F`` carries one monomial per resonant vector of ``enumerate_A`` and
    ``omega`` ranges over the Diophantine samples closest to the edge of
    the condition, which is where the bound is tightest.
    """
    schedule = schedule or SiteSchedule()
    A = enumerate_A(J, lmax, schedule)
    if A.shape[0] == 0:
        return 0.0
    td = td_weights_dense(A, schedule, J)
    rows = np.concatenate([np.maximum(A, 0), np.maximum(-A, 0)], axis=1)
    F = Hamiltonian(rows, np.ones(len(rows)), J, D=max(1, lmax // 2), sites=gen_sites(schedule, J))
    W = sample_frequencies(schedule, J, samples, seed)
    worst = 0.0
    for g in gammas:
        ratio = np.abs(W @ A.T) / (g * td)
        ok = (ratio >= 1).all(1)
        edge = np.argsort(ratio[ok].min(1))[:n_edge]
        for w in W[ok][edge]:
            om = FrequencyVector(w, J, schedule)
            for d in deltas:
                for p in weights:
                    worst = max(worst, required_loss_constant(F, om, d, g, r=1.0, p=p))
    return worst
