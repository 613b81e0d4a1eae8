import math
from collections import defaultdict

import numpy as np
import pytest

from nlskam.hamops import (
    ActionVector,
    DegreeProjector,
    Hamiltonian,
    build_nls,
    diagonal,
    dumps,
    extract_lambda,
    lambda_embed,
    lie_transform,
    loads,
    majorant_norm,
    mass,
    momentum,
    nls_density,
    poisson,
    project_degree,
    project_kernel,
    random_hamiltonian,
)
from nlskam.spaces import jjap


def ham(terms, J=4, **kw):
    return Hamiltonian.from_terms(terms, J, **kw)


def naive_poisson(F, G):
    """Dict-based bracket: i sum_j (dF/dconj(u_j) dG/du_j - dF/du_j dG/dconj(u_j))."""
    out = defaultdict(complex)
    for f in F.terms():
        fa, fb = dict(f.alpha), dict(f.beta)
        for g in G.terms():
            ga, gb = dict(g.alpha), dict(g.beta)
            for j in set(fb) | set(fa):
                for sign, df, dg in ((1j, fb.get(j, 0), ga.get(j, 0)), (-1j, fa.get(j, 0), gb.get(j, 0))):
                    if df == 0 or dg == 0:
                        continue
                    a = defaultdict(int)
                    b = defaultdict(int)
                    for src in (fa, ga):
                        for k, e in src.items():
                            a[k] += e
                    for src in (fb, gb):
                        for k, e in src.items():
                            b[k] += e
                    a[j] -= 1
                    b[j] -= 1
                    key = (tuple(sorted((k, e) for k, e in a.items() if e)),
                           tuple(sorted((k, e) for k, e in b.items() if e)))
                    out[key] += sign * df * dg * f.coeff * g.coeff
    return {k: v for k, v in out.items() if abs(v) > 1e-15}


def as_dict(H):
    return {(tuple(sorted(t.alpha)), tuple(sorted(t.beta))): t.coeff for t in H.terms()}


# ---------------------------------------------------------------------------
# monomial bookkeeping


def test_mass_and_momentum_examples():
    assert mass({1: 1}, {1: 1}) == 0
    assert mass({1: 2}, {}) == 2
    assert mass({-3: 1, 2: 1}, {0: 2}) == 0
    assert momentum({1: 1, 3: 1}, {2: 2}) == 0
    assert momentum({2: 1}, {1: 1}) == 1
    assert momentum({4: 2, -1: 1}, {4: 2, -1: 1}) == 0


def test_constructor_rejects_non_conserving_monomials():
    with pytest.raises(ValueError, match="mass"):
        ham([({1: 2}, {}, 1.0)])
    with pytest.raises(ValueError, match="momentum"):
        ham([({2: 1}, {1: 1}, 1.0)])
    with pytest.raises(ValueError, match="cutoff"):
        ham([({1: 3}, {1: 3}, 1.0)], D=1)


def test_dump_roundtrip_is_bit_exact():
    rng = np.random.default_rng(3)
    H = random_hamiltonian(rng, 4, 2, 30) * (1 / 3)
    H2 = loads(dumps(H))
    assert np.array_equal(H.exps, H2.exps)
    assert np.array_equal(H.coeffs, H2.coeffs)
    assert dumps(H).splitlines()[0].startswith("ham r=")


# ---------------------------------------------------------------------------
# norms


def test_majorant_norm_examples():
    H = ham([({4: 1}, {4: 1}, 1.0)])
    for r, p in [(0.5, 1.5), (2.0, 3.0)]:
        assert majorant_norm(H, r, p) == pytest.approx(1.0)
    assert majorant_norm(H * (3 - 4j), 1.0, 2.0) == pytest.approx(5.0)
    # u_1 u_3 conj(u_2)^2 at r = 1, p = 1: u = (1/2, 1/2, 1/3) on modes 1, 2, 3
    G = ham([({1: 1, 3: 1}, {2: 2}, 1.0)])
    u = {j: 1.0 / jjap(j) for j in (1, 2, 3)}
    per_mode = {
        1: 0.5 * 1 * u[3] * u[2] ** 2 / u[1],
        2: 0.5 * 2 * u[1] * u[3],
        3: 0.5 * 1 * u[1] * u[2] ** 2 / u[3],
    }
    assert majorant_norm(G, 1.0, 1.0) == pytest.approx(max(per_mode.values()), rel=1e-12)


def test_majorant_norm_dominates_vector_field_at_reference_ball():
    rng = np.random.default_rng(5)
    J, r, p = 4, 0.7, 2.0
    H = random_hamiltonian(rng, J, 2, 20)
    uref = r * jjap(np.arange(-J, J + 1)).astype(float) ** -p
    for _ in range(20):
        u = uref * np.exp(1j * rng.uniform(0, 2 * np.pi, 2 * J + 1)) * rng.uniform(0, 1, 2 * J + 1)
        X = H.vector_field(u)
        assert np.max(np.abs(X) / uref) <= 2 * majorant_norm(H, r, p) / r + 1e-12


# ---------------------------------------------------------------------------
# brackets


def test_poisson_matches_naive_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        F = random_hamiltonian(rng, 3, 3, 6)
        G = random_hamiltonian(rng, 3, 3, 6)
        F, G = F.with_meta(D=6), G.with_meta(D=6)
        got = as_dict(poisson(F, G).prune(1e-15))
        want = naive_poisson(F, G)
        assert got.keys() == want.keys()
        for k in want:
            assert got[k] == pytest.approx(want[k], abs=1e-12)


def test_bracket_with_action_is_phase_rotation():
    rng = np.random.default_rng(1)
    Mh = random_hamiltonian(rng, 4, 2, 10, real=False)
    for j in (-2, 0, 3):
        A = ham([({j: 1}, {j: 1}, 1.0)], D=2)
        lhs = poisson(A, Mh)
        expected = Mh.like(Mh.exps, Mh.coeffs * 1j * (Mh.alpha[:, j + 4].astype(int) - Mh.beta[:, j + 4]))
        assert lhs.allclose(expected.prune(0.0), atol=1e-14)


def test_bracket_algebraic_identities():
    rng = np.random.default_rng(2)
    for _ in range(5):
        F, G, K = (random_hamiltonian(rng, 2, 4, 5).with_meta(D=8) for _ in range(3))
        assert len(poisson(F, F).prune(1e-13)) == 0
        assert poisson(F, G).allclose(-poisson(G, F), atol=1e-12)
        jac = poisson(F, poisson(G, K)) + poisson(G, poisson(K, F)) + poisson(K, poisson(F, G))
        assert np.max(np.abs(jac.coeffs), initial=0.0) <= 1e-9
        B = poisson(F, G)
        assert B.coeff({}, {}) == 0
        # reality is preserved
        assert B.is_real(1e-12)


def test_bracket_drops_above_cutoff_and_reports_mass():
    F = ham([({1: 1, 2: 1}, {1: 1, 2: 1}, 1.0)], D=1)
    G = ham([({1: 1, -1: 1}, {0: 2}, 1.0), ({0: 2}, {1: 1, -1: 1}, 1.0)], D=1)
    B = poisson(F, G)
    assert len(B) == 0
    assert B.info["dropped_mass"] > 0


def test_vector_field_matches_wirtinger_finite_differences():
    rng = np.random.default_rng(4)
    H = random_hamiltonian(rng, 3, 2, 12)
    u = 0.3 * (rng.normal(size=7) + 1j * rng.normal(size=7))
    X = H.vector_field(u)
    h = 1e-6
    for k in range(7):
        e = np.zeros(7)
        e[k] = 1
        dx = (H(u + h * e) - H(u - h * e)) / (2 * h)
        dy = (H(u + 1j * h * e) - H(u - 1j * h * e)) / (2 * h)
        dbar = 0.5 * (dx + 1j * dy)
        assert X[k] == pytest.approx(1j * dbar, abs=1e-8)


# ---------------------------------------------------------------------------
# Lie series


def test_lie_transform_identities():
    rng = np.random.default_rng(6)
    H = random_hamiltonian(rng, 3, 3, 10)
    S = random_hamiltonian(rng, 3, 3, 6) * 0.01
    assert lie_transform(H, H.zero()).allclose(H)
    one = lie_transform(H, S, terms=1)
    assert one.allclose((H + poisson(S, H)).prune(0.0), atol=1e-14)
    inc = lie_transform(H, S, increment=True)
    assert (H + inc).allclose(lie_transform(H, S), atol=1e-14)


def test_lie_transform_matches_flow_composition():
    from nlskam.synth import flow

    rng = np.random.default_rng(7)
    J = 2
    H = random_hamiltonian(rng, J, 1, 6).with_meta(D=12)
    S = (random_hamiltonian(rng, J, 1, 4) * 0.02).with_meta(D=12)
    T = lie_transform(H, S, tol=1e-18)
    U = 0.2 * (rng.normal(size=(5, 2 * J + 1)) + 1j * rng.normal(size=(5, 2 * J + 1)))
    assert np.max(np.abs(T(U) - H(flow(S, U)))) < 1e-10


def test_lie_transform_norm_bound_on_admissible_generators():
    rng = np.random.default_rng(8)
    r, rho, p = 1.0, 0.5, 2.0
    for _ in range(20):
        H = random_hamiltonian(rng, 3, 2, 8, r=r, p=p)
        S = random_hamiltonian(rng, 3, 2, 6, r=r, p=p)
        S = S * (0.9 * rho / (16 * math.e * (r + rho)) / majorant_norm(S, r + rho, p))
        T = lie_transform(H, S, rho=rho, tol=1e-16)
        assert T.info["admissible"]
        assert majorant_norm(T, r, p) <= 2 * majorant_norm(H, r + rho, p)


# ---------------------------------------------------------------------------
# projections


def test_project_degree_examples():
    sites = [1, 2]
    I = ActionVector({1: 0.3, 2: 0.1})
    H = ham([({1: 1}, {1: 1}, 1.0)])
    m2 = project_degree(H, -2, I, sites)
    assert m2.coeff({}, {}) == pytest.approx(0.3)
    assert len(m2) == 1
    p0 = project_degree(H, 0, I, sites)
    assert p0.allclose(ham([({1: 1}, {1: 1}, 1.0), ({}, {}, -0.3)]))
    assert len(project_degree(H, -1, I, sites)) == 0
    Z = ham([({3: 1, -1: 1}, {0: 1, 2: 1}, 1.0)])
    Q = ham([({3: 1, 0: 1}, {0: 1, 3: 1}, 2.0)])
    assert project_degree(Q, 2, I, sites).allclose(Q)
    W = ham([({0: 1}, {0: 1}, 1.0)])
    assert project_degree(W, 0, I, sites).allclose(W)
    assert len(project_degree(Z, -2, I, sites)) == 0


def _random_setup(rng):
    J = int(rng.integers(3, 6))
    sites = [1, 2, 4] if J >= 4 else [1, 2]
    r = float(rng.uniform(0.3, 1.5))
    p = 2.0
    I = ActionVector({s: float(rng.uniform(0, 1)) ** 2 * (r * jjap(s) ** -p) ** 2 for s in sites})
    H = random_hamiltonian(rng, J, 3, 12, sites=sites, r=r, p=p)
    return J, sites, r, p, I, H


def test_projections_telescope_and_are_idempotent():
    rng = np.random.default_rng(9)
    for _ in range(20):
        J, sites, r, p, I, H = _random_setup(rng)
        P = DegreeProjector(sites, I, J)
        parts = P.decompose(H)
        total = H.zero()
        for d, Hd in parts.items():
            total = total + Hd
            assert P.degree(Hd, d).allclose(Hd, atol=1e-12)
            for d2 in parts:
                if d2 != d:
                    assert np.max(np.abs(P.degree(Hd, d2).coeffs), initial=0.0) < 1e-12
        assert total.allclose(H, atol=1e-12)


def test_projection_norm_bounds():
    rng = np.random.default_rng(10)
    for _ in range(40):
        J, sites, r, p, I, H = _random_setup(rng)
        P = DegreeProjector(sites, I, J)
        rp = math.sqrt(2) * I.radius(p) * float(rng.uniform(1, 2))
        rp = max(rp, 1e-3)
        nH = majorant_norm(H, rp, p)
        for d, Hd in P.decompose(H).items():
            assert majorant_norm(Hd, rp, p) <= 3 ** (d / 2 + 1) * nH * (1 + 1e-12)
        assert majorant_norm(P.degree(H, 0), rp, p) <= 3 * nH * (1 + 1e-12)
        K, _ = project_kernel(P.degree(H, 0))
        lam = extract_lambda(K)
        assert max((abs(v) for v in lam.values()), default=0.0) <= 3 * nH * (1 + 1e-12)
        assert majorant_norm(P.degree(H, -1), rp, p) <= nH * (1 + 1e-12)
        assert majorant_norm(P.degree(H, -2), rp, p) <= nH * (1 + 1e-12)
        assert majorant_norm(P.at_least(H, 1), rp, p) <= 6 * nH * (1 + 1e-12)


def test_bracket_degree_compatibility():
    rng = np.random.default_rng(11)
    sites = [1, 2]
    I = ActionVector({1: 0.02, 2: 0.01})
    J = 3
    P = DegreeProjector(sites, I, J)
    for _ in range(10):
        F = P.at_least(random_hamiltonian(rng, J, 3, 8, sites=sites).with_meta(D=6), 1)
        G = P.at_least(random_hamiltonian(rng, J, 3, 8, sites=sites).with_meta(D=6), 0)
        B = poisson(F, G)
        low = P.at_most(B, 0)
        assert np.max(np.abs(low.coeffs), initial=0.0) < 1e-12


def test_project_kernel_examples():
    H = ham([({1: 1}, {1: 1}, 1.0), ({1: 1, 3: 1}, {2: 2}, 1.0)])
    K, R = project_kernel(H)
    assert K.allclose(ham([({1: 1}, {1: 1}, 1.0)]))
    assert R.allclose(ham([({1: 1, 3: 1}, {2: 2}, 1.0)]))
    assert (K + R).allclose(H, atol=0)
    _, R2 = project_kernel(K)
    assert len(R2) == 0
    rng = np.random.default_rng(12)
    G = random_hamiltonian(rng, 4, 2, 20)
    K, R = project_kernel(G)
    assert len(project_kernel(R)[0]) == 0


def test_lambda_embed_examples_and_isometry():
    L = lambda_embed({1: 2.0}, ActionVector({1: 0.1}), [1, 2], 3)
    assert L.allclose(ham([({1: 1}, {1: 1}, 2.0), ({}, {}, -0.2)], J=3))
    assert len(lambda_embed({}, ActionVector({}), [1], 3)) == 0
    rng = np.random.default_rng(13)
    for _ in range(10):
        lam = {j: float(rng.normal()) for j in range(-3, 4)}
        L = lambda_embed(lam, ActionVector({1: 0.01, 2: 0.02}), [1, 2], 3)
        for r, p in [(0.5, 2.0), (1.5, 3.0)]:
            assert majorant_norm(L, r, p) == pytest.approx(max(abs(v) for v in lam.values()))
        got = extract_lambda(L)
        assert all(got.get(j, 0) == pytest.approx(v) for j, v in lam.items())


# ---------------------------------------------------------------------------
# the NLS Hamiltonian


def test_build_nls_linear_is_diagonal():
    V = {0: 0.1, 2: -0.2}
    H = build_nls([], V, 3, 2)
    D = diagonal({j: j * j + V.get(j, 0.0) for j in range(-3, 4)}, 3, D=2)
    assert H.allclose(D, atol=0)


@pytest.mark.parametrize("fcoeffs", [[(1, 1.0)], [(1, 0.3), (2, -0.7)]])
def test_build_nls_matches_quadrature(fcoeffs):
    J = 2 if len(fcoeffs) == 2 else 1
    H = build_nls(fcoeffs, {}, J, 2)
    rng = np.random.default_rng(14)
    x = np.arange(64) * 2 * np.pi / 64
    E = np.exp(1j * np.outer(np.arange(-J, J + 1), x))
    for _ in range(5):
        u = 0.4 * (rng.normal(size=2 * J + 1) + 1j * rng.normal(size=2 * J + 1))
        lin = sum(j * j * abs(u[j + J]) ** 2 for j in range(-J, J + 1))
        P = -np.mean(nls_density(u @ E, fcoeffs))
        assert H(u) == pytest.approx(lin + P, rel=1e-12, abs=1e-14)


def test_build_nls_quartic_coefficient_convention():
    # f = y at J = 1: the u_1 u_{-1} conj(u_0)^2 coefficient is -(1/2) * 2 * 1
    H = build_nls([(1, 1.0)], {}, 1, 1)
    assert H.coeff({1: 1, -1: 1}, {0: 2}) == pytest.approx(-1.0)
    assert H.coeff({1: 2}, {1: 2}) == pytest.approx(-0.5)
    assert H.coeff({0: 1, 1: 1}, {0: 1, 1: 1}) == pytest.approx(-2.0)


# Fitted once (8.05 over r in [0.05, 0.3], J in {4, 8}, p = 2, R = 1) and frozen.
NLS_C2 = 10.0


def test_nls_perturbation_norm_bound():
    worst = 0.0
    for J in (4, 8):
        H = build_nls([(1, 1.0)], {}, J, 1)
        P = H - diagonal({j: j * j for j in range(-J, J + 1)}, J, D=1)
        for r in np.linspace(0.05, 0.3, 6):
            worst = max(worst, majorant_norm(P, r, 2.0) / r ** 2)
    assert worst <= NLS_C2
