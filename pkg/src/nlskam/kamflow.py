"""The counter-term KAM iteration, parameter elimination and Lipschitz extension.

One step conjugates ``H_n = D + G_n + (Id + L_n) Lambda_n`` by the time-1
flow of a generator ``S_n`` chosen so that the degree ``<= 0`` part of the
transformed perturbation vanishes up to constants, while a counter-term
``Lambda_bar_n`` absorbs the kernel part of degree zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import zeta as hurwitz_zeta
from sklearn.base import BaseEstimator, TransformerMixin

from .hamops import (
    ActionVector,
    DegreeProjector,
    Hamiltonian,
    extract_lambda,
    lambda_embed,
    lie_transform,
    majorant_norm,
    poisson,
    project_kernel,
)
from .homological import FrequencyVector, solve_homological

log = logging.getLogger(__name__)

CHI = 1.5
NEUMANN_TOL = 1e-13
# eps below FLOOR_REL * max(1, Theta) that stops decreasing is round-off
FLOOR_REL = 1e-12
# Lie series stopping threshold: far below every quantity tracked here, so the
# series runs to its cap unless terms underflow.
LIE_TOL = 1e-300
# Existential constant in the definition of zeta; frozen at 1.
FRAK_C = 1.0


class KamAbort(RuntimeError):
    """Numerical abort of the iteration (divergence, resonance, non-contraction)."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


# ---------------------------------------------------------------------------
# schedules and the constant K


@dataclass(frozen=True)
class Schedules:
    """Radii ``r_n``, weights ``p_n`` and their decrements.

    ``rho_n = (rho/6) 2^{-n}``, ``delta_0 = delta/8`` and
    ``delta_n = c_eta delta n^{-(1+eta)/2}`` with
    ``1/c_eta = (24/5) zeta((1+eta)/2)``; ``r_{n+1} = r_n - 3 rho_n`` and
    ``p_{n+1} = p_n + 3 delta_n``.
    """

    r0: float
    p0: float
    rho: float
    delta: float
    eta: float = 1.2

    def __post_init__(self):
        if not (self.r0 > 0 and self.rho > 0 and self.delta > 0):
            raise ValueError("r0, rho and delta must be positive")
        if not self.p0 > 1:
            raise ValueError("p0 must exceed 1")
        if not 1 < self.eta <= 2:
            raise ValueError("eta must lie in (1,2]")

    @property
    def c_eta(self):
        return 1.0 / (4.8 * float(hurwitz_zeta((1.0 + self.eta) / 2.0)))

    def rho_n(self, n):
        return self.rho / 6.0 * 2.0 ** (-n)

    def delta_n(self, n):
        if n == 0:
            return self.delta / 8.0
        return self.c_eta * self.delta * n ** (-(1.0 + self.eta) / 2.0)

    def r_n(self, n):
        return self.r0 - 3.0 * sum(self.rho_n(k) for k in range(n))

    def p_n(self, n):
        return self.p0 + 3.0 * sum(self.delta_n(k) for k in range(n))

    @property
    def xi(self):
        return (1.0 + self.eta) / (2.0 * self.eta)

    @property
    def log_zeta(self):
        return FRAK_C / self.delta ** (1.0 / self.eta)


@dataclass
class KConstant:
    """The constant ``K`` in log form: ``log_K`` may be ``inf``; ``loglog_K`` is finite."""

    log_K: float
    loglog_K: float
    n_star: float


def k_constant(sch: Schedules) -> KConstant:
    """``K = (r0/rho)^6 sup_n 2^{6n} exp(zeta^{n^xi} - chi^n (1 - chi/2))``.

    The exponent ``zeta^{n^xi} - chi^n/4`` is evaluated in log form and
    maximised over ``log n``; the maximiser is usually astronomically large.
    """
    a, xi = sch.log_zeta, sch.xi
    lchi = math.log(CHI)
    c4 = math.log(1.0 - CHI / 2.0)

    def log_expo(t):
        # log(e^A - e^B) with A = a n^xi, B = n log chi + log(1 - chi/2), n = e^t
        A = a * math.exp(xi * t)
        B = math.exp(t) * lchi + c4 if t < 700 else math.inf
        if B >= A:
            return -1e300
        return A + math.log1p(-math.exp(B - A))

    ts = np.linspace(0.0, 200.0, 4001)
    vals = np.array([log_expo(t) for t in ts])
    k = int(np.argmax(vals))
    lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, len(ts) - 1)]
    res = minimize_scalar(lambda t: -log_expo(t), bounds=(lo, hi), method="bounded")
    t_best = res.x if -res.fun >= vals[k] else ts[k]
    ll = max(-res.fun, vals[k])
    n_star = math.exp(t_best)
    base = 6.0 * math.log(sch.r0 / sch.rho) + 6.0 * n_star * math.log(2.0)
    log_K = base + math.exp(ll) if ll < 700 else math.inf
    return KConstant(log_K, ll, n_star)


# ---------------------------------------------------------------------------
# state


@dataclass
class KamState:
    """Iteration state ``H_n = D + G_n + (Id + L_n) Lambda_n``."""

    n: int
    G: Hamiltonian
    D: Hamiltonian
    lam: Dict[int, float]
    gen_history: List[Hamiltonian]
    eps: float
    theta: float
    gamma: float
    dropped_mass: float = 0.0
    lam_bar_history: List[Dict[int, float]] = field(default_factory=list)


def _projector(H: Hamiltonian, I: ActionVector):
    sites = H.sites if H.sites is not None else sorted(I.values)
    return DegreeProjector(sites, I, H.J)


def lambda_sup(lam: Mapping[int, complex]) -> float:
    return max((abs(v) for v in lam.values()), default=0.0)


def split_parts(G: Hamiltonian, P: DegreeProjector) -> Dict[str, Hamiltonian]:
    """The pieces of ``G`` entering the smallness measures."""
    low = P.at_most(G, 0)
    K, R = project_kernel(low)
    return {
        "m2": P.degree(R, -2),
        "m1": P.degree(R, -1),
        "0K": P.degree(K, 0),
        "0R": P.degree(R, 0),
        "ge1": P.at_least(G, 1),
    }


def eps_theta(G: Hamiltonian, P: DegreeProjector, gamma, r, p):
    """``(eps, Theta)`` of ``G`` at ``(r, p)``."""
    parts = split_parts(G, P)
    lam0 = extract_lambda(parts["0K"])
    low = (lambda_sup(lam0) + majorant_norm(parts["0R"], r, p) + majorant_norm(parts["m2"], r, p)
           + majorant_norm(parts["m1"], r, p))
    eps = low / gamma
    theta = majorant_norm(parts["ge1"], r, p) / gamma + eps
    return eps, theta


def init_state(H: Hamiltonian, N0: Hamiltonian, gamma: float, sch: Schedules, I: ActionVector) -> KamState:
    """``G_0 = H - N_0`` with ``eps_0`` and ``Theta_0`` at ``(r0, p0)``."""
    if H.J != N0.J:
        raise ValueError("H and N0 use different cutoffs")
    G = (H - N0).prune(0.0)
    P = _projector(H, I)
    eps, theta = eps_theta(G, P, gamma, sch.r0, sch.p0)
    return KamState(0, G, N0, {}, [], eps, theta, gamma)


def apply_Ln(state: KamState, h: Mapping[int, complex], I: ActionVector) -> Hamiltonian:
    """``L_n h``: push the embedded ``h`` through ``e^{S_0}``, then ``e^{S_1}``, ... minus ``h``."""
    G = state.G
    Lh = _embed(h, I, G)
    if not state.gen_history:
        return G.zero()
    acc = G.zero()
    cur = Lh
    for S in state.gen_history:
        inc = lie_transform(cur, S, tol=LIE_TOL, increment=True)
        acc = acc + inc
        cur = cur + inc
    return acc.prune(0.0)


def _meta(H):
    m = H.meta()
    m.pop("J")
    return m


def _embed(lam, I, H):
    m = _meta(H)
    sites = m.pop("sites") or []
    return lambda_embed(lam, I, sites, H.J, **m)


@dataclass
class StepReport:
    n: int
    eps: float
    theta: float
    lambda_sup: float
    dropped_mass: float
    contraction: float
    counter_residual: float
    neumann_iters: int


def _vec_to_map(vec, J):
    return {j: complex(vec[j + J]) for j in range(-J, J + 1) if vec[j + J] != 0}


def _apply_M(state, P, I, Gge1, solve, hvec):
    """``M_n h`` for a dense ``h`` over the modes."""
    J = state.G.J
    out = np.zeros(2 * J + 1, dtype=complex)
    if not state.gen_history or not np.any(hvec):
        return out
    Lh = apply_Ln(state, _vec_to_map(hvec, J), I)
    if len(Lh) == 0:
        return out
    s2 = solve(P.degree(project_kernel(Lh)[1], -2))
    s1 = solve(P.degree(Lh, -1) + P.degree(poisson(s2, Gge1), -1))
    br = poisson(s2 + s1, Gge1)
    for k, v in extract_lambda(project_kernel(P.degree(br + Lh, 0))[0]).items():
        out[k + J] = v
    return out


def counter_matrix(state, omega, I, gamma=None, tau=1.5):
    """Dense matrix of ``M_n`` on the unit vectors ``e_j`` (diagnostics and tests)."""
    gamma = state.gamma if gamma is None else gamma
    P = _projector(state.G, I)
    Gge1 = P.at_least(state.G, 1)
    solve = _solver(omega, gamma, tau)
    J = state.G.J
    cols = [_apply_M(state, P, I, Gge1, solve, np.eye(2 * J + 1)[k]) for k in range(2 * J + 1)]
    return np.stack(cols, axis=1)


def _solver(omega, gamma, tau):
    def solve(F):
        F = project_kernel(F.prune(0.0))[1]
        return solve_homological(F, omega, gamma=gamma, tau=tau)
    return solve


def kam_step(state: KamState, omega: FrequencyVector, I: ActionVector, sch: Schedules,
             gamma: Optional[float] = None, tau: float = 1.5) -> tuple:
    """One step of the iteration.

    Returns
    -------
    (KamState, StepReport)

    Raises
    ------
    KamAbort
        If the counter-term operator fails to contract.
    HomologicalError
        On a divisor below the coupled floor ``gamma td / 2``.
    """
    gamma = state.gamma if gamma is None else gamma
    G = state.G
    J = G.J
    P = _projector(G, I)
    parts = split_parts(G, P)
    Gge1 = parts["ge1"]

    solve = _solver(omega, gamma, tau)

    # the degree -1 kernel part vanishes identically
    K1 = project_kernel(P.degree(G, -1))[0]
    if len(K1) and np.max(np.abs(K1.coeffs)) > 1e-12 * max(1.0, np.max(np.abs(G.coeffs))):
        raise KamAbort("non-zero kernel part in degree -1")

    # Lambda-independent parts of the triangular system
    s2_0 = solve(parts["m2"])
    s1_0 = solve(parts["m1"] + P.degree(poisson(s2_0, Gge1), -1))
    br_0 = poisson(s2_0 + s1_0, Gge1)
    rhs_h = project_kernel(P.degree(br_0, 0))[0] + parts["0K"]
    rhs = np.zeros(2 * J + 1, dtype=complex)
    for k, v in extract_lambda(rhs_h).items():
        rhs[k + J] = -v

    # (Id + M_n) lam_bar = rhs by Neumann iteration; contraction measured on
    # the iterates and on two random probes
    def M(h):
        return _apply_M(state, P, I, Gge1, solve, h)

    rng = np.random.default_rng(state.n)
    ratios = []
    for h in rng.uniform(-1, 1, size=(2, 2 * J + 1)) if state.gen_history else []:
        ratios.append(np.max(np.abs(M(h))) / np.max(np.abs(h)))
    lam_bar = rhs.copy()
    term = rhs.copy()
    iters = 0
    while np.max(np.abs(term), initial=0.0) > NEUMANN_TOL * max(1e-300, np.max(np.abs(lam_bar))) and iters < 200:
        nxt = -M(term)
        ratios.append(np.max(np.abs(nxt)) / np.max(np.abs(term)))
        if ratios[-1] >= 1.0:
            break
        term = nxt
        lam_bar = lam_bar + term
        iters += 1
    contraction = float(max(ratios, default=0.0))
    if contraction >= 1.0:
        raise KamAbort(f"counter-term operator does not contract (ratio {contraction:.3g})")
    if contraction > 0.5:
        log.warning("step %d: counter-term contraction %.3g above 1/2", state.n, contraction)
    residual = float(np.max(np.abs(lam_bar + M(lam_bar) - rhs), initial=0.0)) if state.gen_history else 0.0
    lam_bar_map = {j: complex(lam_bar[j + J]) for j in range(-J, J + 1) if lam_bar[j + J] != 0}

    # generator with the counter-term in place
    Lam_bar = _embed(lam_bar_map, I, G)
    L_lam = apply_Ln(state, lam_bar_map, I)
    s2 = solve(P.degree(project_kernel(L_lam)[1] + parts["m2"], -2))
    s1 = solve(P.degree(L_lam, -1) + parts["m1"] + P.degree(poisson(s2, Gge1), -1))
    br = poisson(s2 + s1, Gge1)
    s0R = solve(project_kernel(P.degree(br + L_lam, 0))[1] + parts["0R"])
    S = (s2 + s1 + s0R).prune(0.0)

    # G_{n+1} = e^S (D + G_n + (Id + L_n) Lam_bar) - D
    body = (G + Lam_bar + L_lam).prune(0.0)
    dD = lie_transform(state.D.with_meta(**_meta(G)), S, tol=LIE_TOL, increment=True)
    Gt = lie_transform(body, S, tol=LIE_TOL)
    G_next = (Gt + dD).prune(0.0)
    dropped = dD.info.get("dropped_mass", 0.0) + Gt.info.get("dropped_mass", 0.0)

    n1 = state.n + 1
    eps, theta = eps_theta(G_next, P, gamma, sch.r_n(n1), sch.p_n(n1))
    lam = dict(state.lam)
    for j, v in lam_bar_map.items():
        lam[j] = lam.get(j, 0) + v
    new = KamState(n1, G_next, state.D, lam, state.gen_history + [S], eps, theta, gamma,
                   state.dropped_mass + dropped, state.lam_bar_history + [lam_bar_map])
    rep = StepReport(n1, eps, theta, lambda_sup(lam_bar_map), dropped, contraction, residual, iters)
    return new, rep


@dataclass
class KamResult:
    Psi: List[Hamiltonian]
    lam: Dict[int, complex]
    N: Hamiltonian
    trace: List[dict]
    state: KamState
    K: KConstant
    converged: bool
    floor_hit: bool = False

    @property
    def eps(self):
        return np.array([row["eps"] for row in self.trace])

    def eps_above_floor(self, rel=1e-3):
        """``eps_n`` before the round-off floor: drops floor rows and values within ``1/rel`` of the floor."""
        e = [row["eps"] for row in self.trace if not row.get("floor")]
        if self.floor_hit and len(e) > 1:
            fl = self.trace[-1]["eps"]
            e = [x for x in e if x > fl / rel]
        return np.array(e)


def run_kam(H: Hamiltonian, N0: Hamiltonian, omega: FrequencyVector, I: ActionVector, sch: Schedules,
            gamma: float, max_steps: int = 8, tol: float = 1e-12, tau: float = 1.5,
            smallness: Optional[float] = None) -> KamResult:
    """Iterate :func:`kam_step` until ``eps_n < tol`` or ``max_steps``.

    A step that fails to halve ``eps`` once it is below
    ``1e-12 max(1, Theta)`` is taken as the round-off floor and ends the
    run as converged (``floor_hit``).

    ``smallness`` optionally gates the start on ``(1 + Theta_0)^5 eps_0``.
    The constant ``K`` is reported, never used as a gate.

    Raises
    ------
    KamAbort
        On divergence (``eps`` growing) or failed contraction.
    """
    state = init_state(H, N0, gamma, sch, I)
    K = k_constant(sch)
    trace = [dict(n=0, eps=state.eps, theta=state.theta, lambda_sup=0.0, dropped_mass=0.0,
                  contraction=0.0, counter_residual=0.0)]
    if smallness is not None and (1 + state.theta) ** 5 * state.eps > smallness:
        raise KamAbort(f"(1+Theta0)^5 eps0 = {(1 + state.theta) ** 5 * state.eps:.3g} above {smallness}", trace)
    converged = state.eps < tol
    floor_hit = False
    while not converged and state.n < max_steps:
        prev = state.eps
        state, rep = kam_step(state, omega, I, sch, gamma, tau)
        trace.append(dict(n=rep.n, eps=rep.eps, theta=rep.theta, lambda_sup=rep.lambda_sup,
                          dropped_mass=rep.dropped_mass, contraction=rep.contraction,
                          counter_residual=rep.counter_residual))
        log.info("step %d eps=%.3e theta=%.3e", rep.n, rep.eps, rep.theta)
        if rep.eps >= 0.5 * prev and prev < FLOOR_REL * max(1.0, state.theta):
            # stagnation at the round-off floor: keep the last step, stop
            trace[-1]["floor"] = True
            floor_hit = True
            break
        if rep.eps > prev:
            raise KamAbort(f"divergence at step {rep.n}: eps {prev:.3e} -> {rep.eps:.3e}", trace)
        converged = rep.eps < tol
    N = (state.D + state.G).prune(0.0)
    return KamResult(state.gen_history, state.lam, N, trace, state, K, converged or floor_hit, floor_hit)


def pullback(H: Hamiltonian, gens: Sequence[Hamiltonian]) -> Hamiltonian:
    """``e^{S_{N-1}} ... e^{S_0} H``, i.e. ``H o Psi``."""
    out = H
    for S in gens:
        out = lie_transform(out, S, tol=LIE_TOL)
    return out


def conjugacy_residual(H: Hamiltonian, res: KamResult, I: ActionVector, gamma: float, r, p) -> float:
    """Size of the degree ``<= 0`` part of ``(Lambda + H) o Psi`` beyond ``D``, in ``eps`` units."""
    Lam = _embed(res.lam, I, H)
    N = pullback((H + Lam).prune(0.0), res.Psi)
    P = _projector(H, I)
    eps, _ = eps_theta((N - res.state.D).prune(0.0), P, gamma, r, p)
    return eps


def counter_term_bound_holds(res: KamResult, K: KConstant, gamma: float, theta0: float) -> list:
    """Per step: ``log |lam_bar_n| <= log(gamma K eps_n (1+Theta0)^2)`` and the empirical ``K``."""
    rows = []
    for n, lb in enumerate(res.state.lam_bar_history):
        eps_n = res.trace[n]["eps"]
        sup = lambda_sup(lb)
        if eps_n == 0:
            rows.append((n, sup == 0, 0.0))
            continue
        k_eff = sup / (gamma * eps_n * (1 + theta0) ** 2)
        ok = sup == 0 or math.log(k_eff) <= K.log_K
        rows.append((n, ok, k_eff))
    return rows


def fit_chi(eps: Sequence[float]) -> float:
    """``exp`` of the least-squares slope of ``log log(1/eps_n)`` against ``n``."""
    e = np.asarray(eps, dtype=float)
    keep = (e > 0) & (e < 1)
    n = np.nonzero(keep)[0]
    if n.size < 2:
        raise ValueError("need two values of eps in (0, 1)")
    y = np.log(np.log(1.0 / e[keep]))
    slope = np.polyfit(n, y, 1)[0]
    return float(math.exp(slope))


# ---------------------------------------------------------------------------
# parameter elimination


@dataclass
class Elimination:
    Omega: Dict[int, float]
    VS: Dict[int, float]
    iterations: int
    lam_sup: float
    bound_ok: bool


def eliminate_params(lambda_fn: Callable, nu0: Mapping[int, float], VSc: Mapping[int, float], I,
                     tol: float = 1e-13, max_iter: int = 200) -> Elimination:
    """Solve ``Omega_j + lambda_j(nu, Omega, I) = j^2 + V_j`` on normal modes.

    ``lambda_fn(nu, Omega, I)`` returns a map ``j -> lambda_j``.  The normal
    frequencies come from fixed-point iteration; then
    ``V_S,j = nu_j + lambda_j - j^2`` on the sites.

    Raises
    ------
    KamAbort
        If the iteration stops contracting.
    """
    nu0 = {int(j): float(v) for j, v in nu0.items()}
    VSc = {int(j): float(v) for j, v in VSc.items()}
    Om = {j: j * j + v for j, v in VSc.items()}
    prev_step = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        lam = lambda_fn(nu0, Om, I)
        new = {j: j * j + VSc[j] - float(np.real(lam.get(j, 0.0))) for j in VSc}
        step = max((abs(new[j] - Om[j]) for j in VSc), default=0.0)
        Om = new
        if step <= tol:
            break
        if it > 2 and step > 0.5 * prev_step + tol:
            raise KamAbort(f"elimination does not contract (step {step:.3e} after {prev_step:.3e})")
        prev_step = step
    lam = lambda_fn(nu0, Om, I)
    VS = {j: nu0[j] + float(np.real(lam.get(j, 0.0))) - j * j for j in nu0}
    lsup = max((abs(v) for v in lam.values()), default=0.0)
    ok = all(abs(Om[j] - j * j - VSc[j]) <= 2 * lsup + tol for j in VSc)
    return Elimination(Om, VS, it, lsup, ok)


def mcshane_extend(samples, L: float, query, clamp: Optional[float] = None, check: bool = True) -> float:
    """``inf_u f(u) + L |x - u|_inf`` over samples, optionally clamped to ``[-M, M]``.

    Raises
    ------
    ValueError
        If two samples violate the Lipschitz bound.
    """
    pts = np.array([np.atleast_1d(np.asarray(u, dtype=float)) for u, _ in samples])
    vals = np.array([float(v) for _, v in samples])
    if check and len(vals) > 1:
        d = np.abs(pts[:, None, :] - pts[None, :, :]).max(axis=2)
        dv = np.abs(vals[:, None] - vals[None, :])
        if np.any(dv > L * d * (1 + 1e-12) + 1e-14):
            raise ValueError("samples are not L-Lipschitz compatible")
    q = np.atleast_1d(np.asarray(query, dtype=float))
    out = float(np.min(vals + L * np.abs(pts - q[None, :]).max(axis=1)))
    if clamp is not None:
        out = min(max(out, -clamp), clamp)
    return out


# ---------------------------------------------------------------------------
# problem assembly


def nls_problem(omega: FrequencyVector, fcoeffs, D: int, r: float, p: float, nz_max: Optional[int] = None):
    """``(H, N0)`` for the NLS with linear part ``D(omega)``.

    ``H = D(omega) + P`` where ``P`` is the nonlinear part of
    :func:`build_nls`; the multiplier is absorbed so that the quadratic
    part is exactly ``sum omega_j |u_j|^2``.
    """
    from .hamops import build_nls, diagonal

    J = omega.J
    sites = omega.sites
    full = build_nls(fcoeffs, {}, J, D, r=r, p=p, sites=sites, nz_max=nz_max)
    meta = _meta(full)
    P = full - diagonal({j: float(j * j) for j in range(-J, J + 1)}, J, **meta)
    N0 = omega.D(**{k: v for k, v in meta.items() if k != "sites"})
    return (N0 + P).prune(0.0), N0


def effective_V(omega: FrequencyVector, lam: Mapping[int, complex]) -> Dict[int, float]:
    """Multiplier of ``H + Lambda``: ``V_j = omega_j + lambda_j - j^2``."""
    return {j: float(omega.values[j + omega.J] + np.real(lam.get(j, 0.0)) - j * j)
            for j in range(-omega.J, omega.J + 1)}


# ---------------------------------------------------------------------------
# estimator


class KAMNormalForm(BaseEstimator, TransformerMixin):
    """Counter-term KAM normal form of ``D(omega) + P`` around a flat torus.

    Parameters mirror :func:`run_kam`.  ``fit(H)`` takes the full
    Hamiltonian (``D(omega)`` included) and stores ``generators_``,
    ``lambda_``, ``normal_form_`` and ``trace_``; ``transform(U)`` applies
    the conjugacy ``Psi`` to dense mode vectors.
    """

    def __init__(self, omega=None, actions=None, gamma=0.1, r0=1.0, p0=2.0, rho=0.25, delta=0.1,
                 eta=1.2, tau=1.5, max_steps=8, tol=1e-12):
        self.omega = omega
        self.actions = actions
        self.gamma = gamma
        self.r0 = r0
        self.p0 = p0
        self.rho = rho
        self.delta = delta
        self.eta = eta
        self.tau = tau
        self.max_steps = max_steps
        self.tol = tol

    def fit(self, H, y=None):
        I = self.actions if isinstance(self.actions, ActionVector) else ActionVector(self.actions or {})
        sch = Schedules(self.r0, self.p0, self.rho, self.delta, self.eta)
        N0 = self.omega.D(**_meta(H))
        res = run_kam(H, N0, self.omega, I, sch, self.gamma, self.max_steps, self.tol, self.tau)
        self.result_ = res
        self.generators_ = res.Psi
        self.lambda_ = res.lam
        self.normal_form_ = res.N
        self.trace_ = res.trace
        self.converged_ = res.converged
        return self

    def transform(self, X):
        from .synth import apply_psi
        return apply_psi(self.generators_, np.atleast_2d(np.asarray(X, dtype=complex)))
