"""Torus immersion, flows, synthesized fields and their diagnostics.

Time convention: the Hamiltonian flow of ``X_H = i dH/d conj(u)`` turns the
flat torus with ``phi -> phi + nu t``, so the linear flow is ``e^{+i nu t}``.
The weak form of the equation is solved by the time-reversed field; see
:func:`pde_field`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.integrate import simpson, solve_ivp

from .hamops import ActionVector, Hamiltonian, nls_f
from .kamflow import pullback
from .spaces import ModeSeq, jjap

ODE_RTOL = 1e-12
ODE_ATOL = 1e-14
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TorusPoint:
    phases: Mapping[int, float]
    I: ActionVector

    def __post_init__(self):
        if not set(self.phases) <= set(self.I.values):
            raise ValueError("phases must be supported on the actions")
        object.__setattr__(self, "phases", {int(s): float(v) % TWO_PI for s, v in self.phases.items()})


def torus_point(I: ActionVector, phi: Mapping[int, float], J: int) -> ModeSeq:
    """``u_j = sqrt(I_j) e^{i phi_j}`` on the support of ``I``, zero elsewhere."""
    I = I if isinstance(I, ActionVector) else ActionVector(I)
    if not set(int(k) for k in phi) <= set(I.values):
        raise ValueError("phases must be supported on the actions")
    return ModeSeq({s: math.sqrt(v) * np.exp(1j * float(phi.get(s, 0.0))) for s, v in I.values.items()}, J)


def torus_points(I: ActionVector, phases: np.ndarray, J: int) -> np.ndarray:
    """Dense batch for a ``(B, |S_I|)`` phase table (columns in sorted site order)."""
    sites = sorted(I.values)
    phases = np.atleast_2d(phases)
    U = np.zeros((phases.shape[0], 2 * J + 1), dtype=complex)
    for c, s in enumerate(sites):
        U[:, s + J] = math.sqrt(I[s]) * np.exp(1j * phases[:, c])
    return U


def wrap_phases(nu: Sequence[float], t: np.ndarray, phi0=None) -> np.ndarray:
    """``phi0 + nu t mod 2 pi`` with the integer part of ``nu`` handled exactly.

    ``nu t`` is split as ``floor(nu) t + frac(nu) t`` and each piece is
    reduced separately, which keeps the phase accurate for large ``t``.
    """
    nu = np.asarray(nu, dtype=float)
    t = np.asarray(t, dtype=float)
    whole = np.floor(nu)
    frac = nu - whole
    tw = np.fmod(t, TWO_PI)
    out = np.fmod(whole[None, :] * tw[:, None], TWO_PI) + np.fmod(frac[None, :] * t[:, None], TWO_PI)
    if phi0 is not None:
        out = out + np.asarray(phi0, dtype=float)[None, :]
    return np.mod(out, TWO_PI)


# ---------------------------------------------------------------------------
# flows


def flow(S: Hamiltonian, U: np.ndarray, time: float = 1.0) -> np.ndarray:
    """Time-``time`` flow of ``X_S`` applied to a batch ``U`` of shape (B, M)."""
    U = np.atleast_2d(np.asarray(U, dtype=complex))
    if len(S) == 0:
        return U.copy()
    shape = U.shape

    def rhs(_, y):
        return S.vector_field(y.reshape(shape)).ravel()

    sol = solve_ivp(rhs, (0.0, time), U.ravel(), method="DOP853", rtol=ODE_RTOL, atol=ODE_ATOL)
    if not sol.success:
        raise RuntimeError(f"flow integration failed: {sol.message}")
    return sol.y[:, -1].reshape(shape)


def apply_psi(gens: Sequence[Hamiltonian], U: np.ndarray) -> np.ndarray:
    """``Psi = Phi_{S_0} o ... o Phi_{S_{N-1}}``: the last generator acts first."""
    U = np.asarray(U, dtype=complex)
    single = U.ndim == 1
    V = np.atleast_2d(U)
    for S in reversed(list(gens)):
        V = flow(S, V)
    return V[0] if single else V


def synth_modes(gens, I: ActionVector, nu: Mapping[int, float], t, J: int, phi0=None) -> np.ndarray:
    """Mode vectors ``Psi(v(t))`` of shape (nt, 2J+1), ``v(t)`` on the torus with phases ``phi0 + nu t``."""
    sites = sorted(I.values)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    phi0 = None if phi0 is None else [float(dict(phi0).get(s, 0.0)) for s in sites]
    ph = wrap_phases([nu[s] for s in sites], t, phi0)
    V = torus_points(I, ph, J)
    return apply_psi(gens, V) if gens else V


def synth_solution(gens, I: ActionVector, nu: Mapping[int, float], t, xgrid, J: int, phi0=None) -> np.ndarray:
    """``u(t, x) = sum_j Psi(v(t))_j e^{ijx}`` on a ``(nt, nx)`` grid (Hamiltonian time)."""
    U = synth_modes(gens, I, nu, t, J, phi0)
    return modes_to_grid(U, xgrid, J)


def pde_field(gens, I, nu, t, xgrid, J, phi0=None) -> np.ndarray:
    """The field solving the weak form: the synthesized field at time ``-t``."""
    return synth_solution(gens, I, nu, -np.asarray(t, dtype=float), xgrid, J, phi0)


def modes_to_grid(U: np.ndarray, xgrid, J: int) -> np.ndarray:
    x = np.asarray(xgrid, dtype=float)
    E = np.exp(1j * np.outer(np.arange(-J, J + 1), x))
    return np.atleast_2d(U) @ E


# ---------------------------------------------------------------------------
# weak residual


@dataclass(frozen=True)
class TestFunction:
    """``chi(t, x) = b(t) sum_k c_k e^{ikx}`` with a smooth bump ``b`` on ``[t0, t1]``."""

    t0: float
    t1: float
    xcoeffs: Mapping[int, complex]

    def bump(self, t):
        t = np.asarray(t, dtype=float)
        s = (2 * t - self.t0 - self.t1) / (self.t1 - self.t0)
        out = np.zeros_like(s)
        m = np.abs(s) < 1
        out[m] = np.exp(-1.0 / (1.0 - s[m] ** 2))
        return out

    def bump_dt(self, t):
        t = np.asarray(t, dtype=float)
        s = (2 * t - self.t0 - self.t1) / (self.t1 - self.t0)
        out = np.zeros_like(s)
        m = np.abs(s) < 1
        sm = s[m]
        out[m] = np.exp(-1.0 / (1.0 - sm ** 2)) * (-2.0 * sm / (1.0 - sm ** 2) ** 2) * 2.0 / (self.t1 - self.t0)
        return out

    def xpart(self, x, order=0):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x, dtype=complex)
        for k, c in self.xcoeffs.items():
            out += c * (1j * k) ** order * np.exp(1j * k * x)
        return out


def apply_V(u_grid: np.ndarray, V: Mapping[int, float]) -> np.ndarray:
    """``V * u`` along the last axis: multiply mode ``j`` by ``V_j`` in Fourier space."""
    nx = u_grid.shape[-1]
    uh = np.fft.fft(u_grid, axis=-1)
    k = np.fft.fftfreq(nx, d=1.0 / nx).round().astype(int)
    mult = np.array([float(V.get(int(j), 0.0)) for j in k])
    return np.fft.ifft(uh * mult, axis=-1)


def weak_residual(u_fn: Callable, V: Mapping[int, float], fcoeffs, chi: TestFunction, nt: int = 257,
                  nx: int = 256) -> complex:
    """Quadrature of ``int (-i chi_t + chi_xx) u - (V * u - f(|u|^2) u) chi dx dt``.

    Composite Simpson in ``t`` over the support of the bump and the
    trapezoid rule in ``x`` (exact for trigonometric polynomials).
    ``u_fn(t, x)`` returns the field on the ``(nt, nx)`` grid.
    """
    t = np.linspace(chi.t0, chi.t1, nt)
    x = np.arange(nx) * TWO_PI / nx
    u = np.asarray(u_fn(t, x), dtype=complex)
    b, bt = chi.bump(t), chi.bump_dt(t)
    X0, X2 = chi.xpart(x), chi.xpart(x, 2)
    chi_v = b[:, None] * X0[None, :]
    lin = (-1j * bt[:, None] * X0[None, :] + b[:, None] * X2[None, :]) * u
    nonlin = (apply_V(u, V) - nls_f(np.abs(u) ** 2, fcoeffs) * u) * chi_v
    integrand = lin - nonlin
    inner = integrand.sum(axis=1) * (TWO_PI / nx)
    return complex(simpson(inner, x=t))


# ---------------------------------------------------------------------------
# regularity and density


@dataclass
class RegularityReport:
    tail_stat: float
    cls: str
    tail: dict


def regularity_probe(I: ActionVector, p_star: float) -> RegularityReport:
    """Tail statistic ``max j^2 sqrt(I_j)`` over the largest third of ``S_I``.

    Classes: ``"classical-capable"`` for ``p_star > 3``;
    ``"non-classical-witness"`` for ``p_star <= 2`` when every tail value is
    at least half the value at the smallest tail mode; otherwise
    ``"indeterminate"``.
    """
    sup = sorted(I.values, key=lambda j: (abs(j), j))
    if len(sup) < 2:
        return RegularityReport(0.0 if not sup else sup[0] ** 2 * math.sqrt(I[sup[0]]), "indeterminate", {})
    k = max(1, len(sup) // 3)
    tail = {j: j * j * math.sqrt(I[j]) for j in sup[-k:]}
    stat = max(tail.values())
    if p_star > 3:
        cls = "classical-capable"
    elif p_star <= 2 and min(tail.values()) >= 0.5 * tail[sup[-k]] and min(tail.values()) > 0:
        cls = "non-classical-witness"
    else:
        cls = "indeterminate"
    return RegularityReport(stat, cls, tail)


@dataclass
class DensityReport:
    criterion_value: float
    n0: Optional[int]
    hit_time: Optional[float]
    max_distance: Optional[float]


def _circle_dist(a):
    a = np.mod(a, TWO_PI)
    return np.minimum(a, TWO_PI - a)


def density_criterion(nu: Mapping[int, float]):
    """``|nu_n| sum_{|j| > |n|} 1/|nu_j|`` for each ``n`` (ordered by ``|n|``)."""
    order = sorted(nu, key=lambda j: (abs(j), j))
    vals = {}
    for i, n in enumerate(order):
        tail = [j for j in order[i + 1:] if abs(j) > abs(n)]
        vals[n] = abs(nu[n]) * sum(1.0 / abs(nu[j]) for j in tail)
    return order, vals


def density_check(nu: Mapping[int, float], target: Mapping[int, float], deltatol: float, horizon: float,
                  chunk: int = 1 << 20) -> DensityReport:
    """Search a time with every phase ``nu_n t`` within ``deltatol`` of ``target_n``.

    A coarse scan on ``[0, horizon]`` handles the head of the site list;
    the tail (where the density criterion is below ``deltatol / 2 pi``) is
    then matched by successive corrections ``|t_j| <= pi/|nu_j|``, in order
    of increasing ``|j|``.
    """
    if any(v == 0 for v in nu.values()):
        raise ValueError("frequencies must be non-zero")
    order, crit = density_criterion(nu)
    crit_value = max((crit[n] for n in order[:-1]), default=0.0)
    # first index from which the criterion stays small
    n0_idx = len(order) - 1
    for i in range(len(order) - 1, -1, -1):
        if crit[order[i]] <= deltatol / TWO_PI:
            n0_idx = i
        else:
            break
    head = order[: n0_idx + 1]
    tail = order[n0_idx + 1:]
    tol_head = deltatol / 2.0 if tail else deltatol
    nh = np.array([nu[j] for j in head])
    th = np.array([float(target.get(j, 0.0)) for j in head])
    h = tol_head / (4.0 * np.max(np.abs(nh)))
    T0 = None
    start = 0
    total = int(math.ceil(horizon / h)) + 1
    while start < total and T0 is None:
        idx = np.arange(start, min(total, start + chunk))
        t = idx * h
        d = _circle_dist(np.outer(t, nh) - th[None, :]).max(axis=1)
        hit = np.nonzero(d < tol_head)[0]
        if hit.size:
            k = int(hit[0])
            T0 = float(t[k])
            if k > 0 or start > 0:
                # refine the entry time by bisection between the last miss and the hit
                lo, hi = T0 - h, T0
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    if _circle_dist(mid * nh - th).max() < tol_head:
                        hi = mid
                    else:
                        lo = mid
                T0 = hi
        start += chunk
    if T0 is None:
        return DensityReport(crit_value, order[n0_idx], None, None)
    T = T0
    for j in tail:
        err = (float(target.get(j, 0.0)) - nu[j] * T) % TWO_PI
        if err > math.pi:
            err -= TWO_PI
        T += err / nu[j]
    allnu = np.array([nu[j] for j in order])
    allt = np.array([float(target.get(j, 0.0)) for j in order])
    dist = float(_circle_dist(T * allnu - allt).max())
    return DensityReport(crit_value, order[n0_idx], T if dist < deltatol else None, dist)


# ---------------------------------------------------------------------------
# invariance


def invariance_residual(gens, nu: Mapping[int, float], I: ActionVector, H_total: Hamiltonian, phases: np.ndarray,
                        N: Optional[Hamiltonian] = None) -> float:
    """``sup_j |X_N(u)_j - i nu_j u_j|`` over torus points, ``N = H_total o Psi``.

    ``phases`` has shape ``(B, |S_I|)``.  ``N`` may be passed to skip the
    pullback.
    """
    if N is None:
        N = pullback(H_total, gens)
    J = N.J
    U = torus_points(I, phases, J)
    X = N.vector_field(U)
    w = np.zeros(2 * J + 1)
    for s, v in nu.items():
        w[int(s) + J] = float(v)
    return float(np.max(np.abs(X - 1j * w[None, :] * U)))
