"""Small divisors: Diophantine weights, the resonant set and its combinatorics.

Integer vectors ``l`` on modes ``|j| <= J`` are handled as dense rows indexed
by ``j + J``.  Their mass is ``sum l_j``, their momentum ``sum j l_j`` and
``q(l) = sum j^2 l_j``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import binomtest

from .sites import SiteSchedule, gen_sites, s_of, site_index
from .spaces import jjap

RESONANCE_FLOOR = 1e-14


@dataclass(frozen=True)
class DiophParams:
    gamma: float
    tau: float = 1.5
    schedule: SiteSchedule = SiteSchedule()

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.tau > 1:
            raise ValueError("tau must exceed 1")


def japanese(i):
    """``<i> = max(1, |i|)``."""
    return max(1, abs(int(i)))


# ---------------------------------------------------------------------------
# weights and the set A


def site_weights(sched: SiteSchedule, J: int) -> np.ndarray:
    """Dense ``<i(s)>^2`` on tangential columns and 0 on normal ones."""
    w = np.zeros(2 * J + 1)
    for s in gen_sites(sched, J):
        w[s + J] = japanese(site_index(sched, s)) ** 2
    return w


def td_weight(l: Mapping[int, int], sched: SiteSchedule, tau=1.5, J=None) -> float:
    """``prod_{s in S} (1 + l_s^2 <i(s)>^2)^{-tau}``; 1 without tangential support."""
    l = {int(j): int(v) for j, v in dict(l).items() if v}
    if J is None:
        J = max([abs(j) for j in l] or [1])
    sites = set(gen_sites(sched, max(J, 1)))
    out = 1.0
    for s, v in l.items():
        if s in sites:
            out *= (1.0 + v * v * japanese(site_index(sched, s)) ** 2) ** (-tau)
    return out


def td_weights_dense(L: np.ndarray, sched: SiteSchedule, J: int, tau=1.5) -> np.ndarray:
    """Vectorised :func:`td_weight` for rows of a dense ``(n, 2J+1)`` table."""
    w = site_weights(sched, J)
    L = np.asarray(L, dtype=np.float64)
    return np.exp(-tau * np.log1p(L ** 2 * w[None, :]).sum(axis=1))


def _signed_vectors(k, total):
    """All integer vectors of length ``k`` with l1 norm ``<= total``."""
    if k == 0:
        return np.zeros((1, 0), dtype=np.int64)
    rng = range(-total, total + 1)
    out = [v for v in itertools.product(rng, repeat=k) if sum(abs(x) for x in v) <= total]
    return np.array(out, dtype=np.int64)


def _normal_parts(normal_cols, M):
    """Dense normal parts with at most two units of support."""
    rows = [np.zeros(M, dtype=np.int64)]
    for c in normal_cols:
        for s in (1, -1):
            r = np.zeros(M, dtype=np.int64)
            r[c] = s
            rows.append(r)
    for a, b in itertools.combinations_with_replacement(normal_cols, 2):
        for sa in (1, -1):
            for sb in (1, -1):
                if a == b and sa != sb:
                    continue
                r = np.zeros(M, dtype=np.int64)
                r[a] += sa
                r[b] += sb
                rows.append(r)
    return np.unique(np.array(rows), axis=0)


def enumerate_A(J: int, lmax: int, sched: SiteSchedule) -> np.ndarray:
    """The truncated resonant set as a dense ``(n, 2J+1)`` integer table.

    Rows satisfy ``0 < |l| <= lmax``, at most two normal units, zero mass,
    zero momentum and ``|q(l)| < |l|``.
    """
    if lmax < 2:
        raise ValueError("lmax must be >= 2")
    M = 2 * J + 1
    modes = np.arange(-J, J + 1)
    sites = gen_sites(sched, J)
    tcols = np.array([s + J for s in sites], dtype=np.int64)
    ncols = np.array([c for c in range(M) if c not in set(tcols)], dtype=np.int64)
    normal = _normal_parts(ncols, M)
    tang = _signed_vectors(len(tcols), lmax)
    T = np.zeros((tang.shape[0], M), dtype=np.int64)
    T[:, tcols] = tang
    out = []
    for nrow in normal:
        L = T + nrow[None, :]
        size = np.abs(L).sum(1)
        ok = (size > 0) & (size <= lmax)
        ok &= L.sum(1) == 0
        ok &= L @ modes == 0
        ok &= np.abs(L @ modes ** 2) < size
        if ok.any():
            out.append(L[ok])
    if not out:
        return np.zeros((0, M), dtype=np.int64)
    A = np.unique(np.vstack(out), axis=0)
    return A


def enumerate_A_naive(J: int, lmax: int, sched: SiteSchedule) -> set:
    """Oracle for :func:`enumerate_A` via positive/negative multiset pairs."""
    modes = list(range(-J, J + 1))
    normal = set(modes) - set(gen_sites(sched, J))
    found = set()
    for n in range(1, lmax // 2 + 1):
        for plus in itertools.combinations_with_replacement(modes, n):
            for minus in itertools.combinations_with_replacement(modes, n):
                if set(plus) & set(minus):
                    continue
                if sum(plus) != sum(minus):
                    continue
                l = dict.fromkeys(modes, 0)
                for j in plus:
                    l[j] += 1
                for j in minus:
                    l[j] -= 1
                if sum(abs(l[j]) for j in normal) > 2:
                    continue
                size = 2 * n
                q = sum(j * j * v for j, v in l.items())
                if abs(q) < size:
                    found.add(tuple(l[j] for j in modes))
    return found


@dataclass
class DiophReport:
    passed: bool
    worst_ratio: float
    worst_l: Optional[Dict[int, int]]
    n_checked: int


def _omega_dense(omega, J):
    if hasattr(omega, "dense"):
        return np.asarray(omega.dense(), dtype=float)
    if isinstance(omega, Mapping):
        return np.array([float(omega.get(j, j * j)) for j in range(-J, J + 1)])
    return np.asarray(omega, dtype=float)


def check_diophantine(omega, params: DiophParams, A: np.ndarray, J: int) -> DiophReport:
    """Check ``|omega . l| >= gamma td(l)`` over the rows of ``A``."""
    w = _omega_dense(omega, J)
    if A.shape[0] == 0:
        return DiophReport(True, math.inf, None, 0)
    td = td_weights_dense(A, params.schedule, J, params.tau)
    div = np.abs(A @ w)
    ratio = np.where(div < RESONANCE_FLOOR, 0.0, div / (params.gamma * td))
    k = int(np.argmin(ratio))
    worst = {int(j) - J: int(v) for j, v in enumerate(A[k]) if v}
    return DiophReport(bool(ratio[k] >= 1.0), float(ratio[k]), worst, A.shape[0])


def coperta_sum(J: int, lmax: int, sched: SiteSchedule, tau=1.5, A=None) -> float:
    """``sum_{l in A} td(l)`` over the truncated set."""
    A = enumerate_A(J, lmax, sched) if A is None else A
    if A.shape[0] == 0:
        return 0.0
    return float(td_weights_dense(A, sched, J, tau).sum())


def coperta_majorant(J: int, sched: SiteSchedule) -> float:
    """``72 sum_{k != 0} prod (1 + k_s^2 <i(s)>^2)^{-1}`` over the sites in ``[-J, J]``.

    Each factor is summed over all of ``Z`` in closed form
    (``sum_k 1/(1 + a^2 k^2) = (pi/a) coth(pi/a)``), which dominates every
    finite truncation.
    """
    prod = 1.0
    for s in gen_sites(sched, J):
        a = float(japanese(site_index(sched, s)))
        prod *= (math.pi / a) / math.tanh(math.pi / a)
    return 72.0 * (prod - 1.0)


# ---------------------------------------------------------------------------
# Monte Carlo measure of the resonant complement


@dataclass
class MeasureResult:
    gamma: float
    fraction: float
    ci_lo: float
    ci_hi: float
    coperta_sum: float
    samples: int
    failures: int


def sample_frequencies(sched: SiteSchedule, J: int, samples: int, seed: int, V_normal=None):
    """``nu_s = s^2 + U(-1/2, 1/2)`` on sites and ``Omega_j = j^2 + V_j`` elsewhere.

    Uses a counter-based generator so draws depend only on ``seed``.
    """
    rng = np.random.Generator(np.random.Philox(int(seed)))
    modes = np.arange(-J, J + 1)
    base = (modes ** 2).astype(float)
    if V_normal is not None:
        for j, v in dict(V_normal).items():
            base[int(j) + J] += float(v)
    tcols = np.array([s + J for s in gen_sites(sched, J)], dtype=np.int64)
    W = np.tile(base, (samples, 1))
    W[:, tcols] = (modes[tcols] ** 2)[None, :] + rng.uniform(-0.5, 0.5, size=(samples, tcols.size))
    return W


def measure_complement_mc(params: DiophParams, J: int, lmax: int, samples: int, seed: int,
                          V_normal=None, A=None, chunk=512) -> MeasureResult:
    """Fraction of sampled frequencies failing the Diophantine check.

    The interval is the exact (Clopper-Pearson) 95% binomial interval.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    sched = params.schedule
    A = enumerate_A(J, lmax, sched) if A is None else A
    W = sample_frequencies(sched, J, samples, seed, V_normal)
    if A.shape[0]:
        thr = params.gamma * td_weights_dense(A, sched, J, params.tau)
        Af = A.astype(float).T
        fails = 0
        for lo in range(0, samples, chunk):
            div = np.abs(W[lo: lo + chunk] @ Af)
            bad = (div < thr[None, :]) | (div < RESONANCE_FLOOR)
            fails += int(bad.any(axis=1).sum())
    else:
        fails = 0
    ci = binomtest(fails, samples).proportion_ci(confidence_level=0.95, method="exact")
    return MeasureResult(params.gamma, fails / samples, float(ci.low), float(ci.high),
                         coperta_sum(J, lmax, sched, params.tau, A=A), samples, fails)


def measure_complement_grid(params: DiophParams, J: int, lmax: int, grid: int, V_normal=None, A=None):
    """Exact-grid failing fraction for at most two tangential sites (midpoint rule)."""
    sched = params.schedule
    sites = gen_sites(sched, J)
    if len(sites) > 2:
        raise ValueError("grid oracle supports at most two tangential sites")
    A = enumerate_A(J, lmax, sched) if A is None else A
    modes = np.arange(-J, J + 1)
    base = (modes ** 2).astype(float)
    if V_normal is not None:
        for j, v in dict(V_normal).items():
            base[int(j) + J] += float(v)
    t = (np.arange(grid) + 0.5) / grid - 0.5
    axes = np.meshgrid(*([t] * len(sites)), indexing="ij")
    W = np.tile(base, (axes[0].size, 1))
    for s, ax in zip(sites, axes):
        W[:, s + J] = s * s + ax.ravel()
    if A.shape[0] == 0:
        return 0.0
    thr = params.gamma * td_weights_dense(A, sched, J, params.tau)
    div = np.abs(W @ A.T.astype(float))
    return float(((div < thr[None, :]) | (div < RESONANCE_FLOOR)).any(axis=1).mean())


# ---------------------------------------------------------------------------
# combinatorics of monomials


def _as_counts(v) -> Dict[int, int]:
    if isinstance(v, Mapping):
        return {int(j): int(e) for j, e in v.items() if e}
    return {int(j): int(e) for j, e in v if e}


def nhat(v) -> list:
    """Decreasing list of ``max(1, |j|)`` repeated by the exponents of ``v``."""
    v = _as_counts(v)
    if sum(v.values()) < 1:
        raise ValueError("nhat needs a non-empty multi-index")
    out = []
    for j, e in v.items():
        out.extend([max(1, abs(j))] * e)
    return sorted(out, reverse=True)


def _add(a, b):
    out = dict(a)
    for j, e in b.items():
        out[j] = out.get(j, 0) + e
    return {j: e for j, e in out.items() if e}


def sigma_assign(alpha, beta):
    """Signs ``sigma_l`` with ``sum sigma_l nhat_l = 0`` for ``nhat(alpha + beta)``.

    Copies of ``h > 1`` get ``+1`` for ``alpha_h + beta_{-h}`` of them and
    ``-1`` otherwise; copies of ``1`` get ``+1`` for ``alpha_1 + beta_{-1}``,
    ``-1`` for ``alpha_{-1} + beta_1`` and ``0`` for the rest (mode 0).

    Returns
    -------
    (nhat, sigma) : tuple of lists
    """
    a, b = _as_counts(alpha), _as_counts(beta)
    if sum(a.values()) != sum(b.values()) or sum(a.values()) < 1:
        raise ValueError("need |alpha| = |beta| >= 1")
    if sum(j * e for j, e in a.items()) != sum(j * e for j, e in b.items()):
        raise ValueError("momentum must vanish")
    ms = _add(a, b)
    pairs = []
    hs = sorted({max(1, abs(j)) for j in ms}, reverse=True)
    for h in hs:
        if h > 1:
            tot = ms.get(h, 0) + ms.get(-h, 0)
            plus = a.get(h, 0) + b.get(-h, 0)
            pairs += [(h, 1)] * plus + [(h, -1)] * (tot - plus)
        else:
            tot = ms.get(1, 0) + ms.get(-1, 0) + ms.get(0, 0)
            plus = a.get(1, 0) + b.get(-1, 0)
            minus = a.get(-1, 0) + b.get(1, 0)
            pairs += [(1, 1)] * plus + [(1, -1)] * minus + [(1, 0)] * (tot - plus - minus)
    return [p[0] for p in pairs], [p[1] for p in pairs]


def mlist(u) -> list:
    """Signed modes ``j != 0`` repeated ``|u_j|`` times, by decreasing ``|j|``.

    Ties are broken by the mode value, so the output is deterministic.
    """
    u = _as_counts(u) if not isinstance(u, Mapping) else {int(j): int(e) for j, e in u.items() if e}
    out = []
    for j, e in u.items():
        if j != 0:
            out.extend([j] * abs(e))
    if not out and not u:
        raise ValueError("mlist needs a non-empty vector")
    return sorted(out, key=lambda j: (-abs(j), -j))


def luchino_lhs_rhs(x: Sequence[float]):
    """``(sum x / prod sqrt x, sqrt x_1 + 4 / sqrt x_1)`` for ``x`` decreasing, ``>= 2``."""
    x = [float(t) for t in x]
    if not x or any(a < b for a, b in zip(x, x[1:])) or min(x) < 2:
        raise ValueError("x must be a non-empty decreasing list with entries >= 2")
    lhs = sum(x) / math.prod(math.sqrt(t) for t in x)
    rhs = math.sqrt(x[0]) + 4.0 / math.sqrt(x[0])
    return lhs, rhs


def in_M_j(alpha, beta, j, sites) -> bool:
    """Membership in ``M_j``: ``alpha != beta``, two normal units at most, mode ``j`` present."""
    a, b = _as_counts(alpha), _as_counts(beta)
    if a == b:
        return False
    sites = set(sites)
    nz = sum(e for m, e in a.items() if m not in sites) + sum(e for m, e in b.items() if m not in sites)
    return nz <= 2 and a.get(j, 0) + b.get(j, 0) != 0


def divisor_condition(alpha, beta) -> bool:
    """``|sum (alpha - beta)_s s^2| < 2 sum |alpha - beta|``."""
    a, b = _as_counts(alpha), _as_counts(beta)
    keys = set(a) | set(b)
    q = sum((a.get(s, 0) - b.get(s, 0)) * s * s for s in keys)
    n = sum(abs(a.get(s, 0) - b.get(s, 0)) for s in keys)
    return abs(q) < 2 * n


def cacioricotta_sides(alpha, beta, j):
    """``(<<j>>^2 / prod <<s>>^{alpha_s + beta_s}, 3 / prod_{l>=3} <<nhat_l>>^{1/2})``."""
    a, b = _as_counts(alpha), _as_counts(beta)
    ms = _add(a, b)
    lhs = jjap(j) ** 2 / math.prod(float(jjap(s)) ** e for s, e in ms.items())
    n = nhat(ms)
    rhs = 3.0 / math.prod(math.sqrt(jjap(x)) for x in n[2:])
    return lhs, rhs


def chiappechiare_sides(alpha, beta):
    """``(|m_1|, 31 sum_{l>=3} nhat_l^2)`` with ``m = m(alpha - beta)``."""
    a, b = _as_counts(alpha), _as_counts(beta)
    diff = {s: a.get(s, 0) - b.get(s, 0) for s in set(a) | set(b)}
    m = mlist(diff)
    n = nhat(_add(a, b))
    return (abs(m[0]) if m else 0), 31 * sum(x * x for x in n[2:])


def monomial_pairs(J: int, max_size: int):
    """All ``(alpha, beta)`` with ``1 <= |alpha| = |beta| <= max_size``, zero momentum."""
    modes = list(range(-J, J + 1))
    for n in range(1, max_size + 1):
        by_mom: Dict[int, list] = {}
        for c in itertools.combinations_with_replacement(modes, n):
            by_mom.setdefault(sum(c), []).append(c)
        for group in by_mom.values():
            for ca in group:
                a = {}
                for j in ca:
                    a[j] = a.get(j, 0) + 1
                for cb in group:
                    b = {}
                    for j in cb:
                        b[j] = b.get(j, 0) + 1
                    yield a, b


# ---------------------------------------------------------------------------
# the A_k quantity


def a_k_value(k: Mapping[int, int], delta: float, sched: SiteSchedule) -> float:
    """``sum_{k_i >= 1} -(delta/9) k_i log <<s(i)>> + log(1 + <i>^2 k_i^2)``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    tot = 0.0
    for i, ki in dict(k).items():
        if ki >= 1:
            tot += -(delta / 9.0) * ki * math.log(jjap(s_of(sched, int(i)))) + math.log1p(japanese(i) ** 2 * ki ** 2)
    return tot


def a_k_sup(delta: float, sched: SiteSchedule, i_max: int = 400) -> float:
    """``sup_k A_k(delta)``: each index contributes its best ``k_i >= 0`` independently."""
    tot = 0.0
    for i in range(i_max + 1):
        try:
            b = (delta / 9.0) * math.log(jjap(s_of(sched, i)))
        except OverflowError:
            break
        a2 = japanese(i) ** 2
        kmax = int(min(10 ** 7, max(10, math.ceil(40.0 / b) if b > 0 else 10 ** 7)))
        ks = np.arange(1, kmax + 1, dtype=float)
        best = float(np.max(-b * ks + np.log1p(a2 * ks ** 2)))
        if best > 0:
            tot += best
        elif i > 2 and b * 1 > math.log1p(a2):
            # once the first step is negative it stays so for larger i
            break
    return tot


def granita_rhs(delta: float, eta: float, c: float) -> float:
    """``c exp(45 delta^{-1/eta})`` in log form to avoid overflow: returns its logarithm."""
    return math.log(c) + 45.0 * delta ** (-1.0 / eta)


# ---------------------------------------------------------------------------
# slab measure


@dataclass
class SlabReport:
    measure: float
    line_sup: float
    bound: float
    holds: bool
    grid_error: float


def _line_measure(boxes, y, xi):
    """Measure in ``t`` of ``{t : x + t xi in E}`` for the line through ``(y, 0)``."""
    n = len(xi)
    last = xi[-1]
    ivs = []
    for lo, hi in boxes:
        tlo, thi = lo[-1] / last, hi[-1] / last
        if tlo > thi:
            tlo, thi = thi, tlo
        ok = True
        for d in range(n - 1):
            # coordinate y_d + t xi_d in [lo_d, hi_d]
            if xi[d] == 0:
                if not lo[d] <= y[d] <= hi[d]:
                    ok = False
                    break
                continue
            a, b = (lo[d] - y[d]) / xi[d], (hi[d] - y[d]) / xi[d]
            if a > b:
                a, b = b, a
            tlo, thi = max(tlo, a), min(thi, b)
        if ok and thi > tlo:
            ivs.append((tlo, thi))
    ivs.sort()
    tot, cur_lo, cur_hi = 0.0, None, None
    for a, b in ivs:
        if cur_hi is None or a > cur_hi:
            if cur_hi is not None:
                tot += cur_hi - cur_lo
            cur_lo, cur_hi = a, b
        else:
            cur_hi = max(cur_hi, b)
    if cur_hi is not None:
        tot += cur_hi - cur_lo
    return tot


def random_boxes(n, count, rng, max_side=0.2):
    boxes = []
    for _ in range(count):
        lo = rng.uniform(-0.25, 0.25 - 0.01, size=n)
        side = rng.uniform(0.005, max_side, size=n)
        hi = np.minimum(lo + side, 0.25)
        boxes.append((lo, hi))
    return boxes


def slab_measure_check(n: int, xi, boxes, grid: int = 512) -> SlabReport:
    """Test ``meas(E) <= 2^{1-n} delta |xi|^2`` for a union of boxes ``E``.

    ``delta`` is the largest line measure along ``xi`` over a grid of base
    points; ``meas(E)`` is a midpoint-grid quadrature.  Both carry an error
    of order ``1/grid``, reported as ``grid_error``.
    """
    xi = np.asarray(xi, dtype=float)
    if n > 3 or xi.size != n or abs(abs(xi[-1]) - 1.0) > 1e-12:
        raise ValueError("need n <= 3 and xi = (xi_hat, +-1)")
    if not boxes:
        return SlabReport(0.0, 0.0, 0.0, True, 0.0)
    g1 = min(grid, {1: grid, 2: grid, 3: 96}[n])
    t = (np.arange(g1) + 0.5) / g1 * 0.5 - 0.25
    pts = np.stack(np.meshgrid(*([t] * n), indexing="ij"), axis=-1).reshape(-1, n)
    inside = np.zeros(pts.shape[0], dtype=bool)
    for lo, hi in boxes:
        inside |= np.all((pts >= lo) & (pts <= hi), axis=1)
    meas = inside.mean() * 0.5 ** n
    # base points on the hyperplane x_n = 0 covering every line that meets the cube
    reach = 0.25 * (1 + np.abs(xi[:-1]))
    gb = {1: 1, 2: 2048, 3: 160}[n]
    if n == 1:
        bases = [np.zeros(0)]
    else:
        axes = [np.linspace(-r, r, gb) for r in reach]
        bases = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n - 1)
    line_sup = max(_line_measure(boxes, y, xi) for y in bases)
    bound = 2.0 ** (1 - n) * line_sup * float(xi @ xi)
    err = 4.0 * n / g1
    return SlabReport(meas, line_sup, bound, meas <= bound + err * 0.5 ** n, err)
