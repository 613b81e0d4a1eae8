import math

import numpy as np
import pytest

from nlskam.hamops import ActionVector, diagonal, lambda_embed
from nlskam.kamflow import pullback
from nlskam.spaces import ModeSeq, jjap, wp_norm
from nlskam.synth import (
    TestFunction,
    apply_psi,
    density_check,
    density_criterion,
    invariance_residual,
    modes_to_grid,
    pde_field,
    regularity_probe,
    synth_modes,
    torus_point,
    torus_points,
    weak_residual,
    wrap_phases,
)

TestFunction.__test__ = False  # not a pytest class


def test_torus_point_values():
    I = ActionVector({1: 0.04, 2: 0.01})
    u = torus_point(I, {1: 0.0, 2: math.pi / 2}, 3)
    assert u[1] == pytest.approx(0.2)
    assert u[2] == pytest.approx(0.1j)
    assert u[0] == 0
    assert wp_norm(u, 2.0) == pytest.approx(max(0.2 * 4, 0.1 * 4))
    with pytest.raises(ValueError):
        torus_point(I, {3: 0.1}, 3)


def test_torus_points_match_single_points():
    I = ActionVector({1: 0.04, 2: 0.01, 4: 1e-4})
    ph = np.random.default_rng(0).uniform(0, 2 * np.pi, (5, 3))
    U = torus_points(I, ph, 4)
    for row, p in zip(U, ph):
        assert np.allclose(row, torus_point(I, dict(zip([1, 2, 4], p)), 4).to_dense())


def test_wrap_phases_accurate_for_long_times():
    nu = [1.0, 4.25, 16.1]
    t = np.array([0.0, 1.0, 1e6])
    out = wrap_phases(nu, t)
    assert np.all((out >= 0) & (out < 2 * np.pi))
    ref = np.mod(np.outer([0.0, 1.0], nu), 2 * np.pi)
    assert np.allclose(out[:2], ref)
    # integer frequency at integer multiples of 2 pi is exact
    assert wrap_phases([3.0], np.array([2 * np.pi * 1e5]))[0, 0] == pytest.approx(0.0, abs=1e-8) or \
        wrap_phases([3.0], np.array([2 * np.pi * 1e5]))[0, 0] == pytest.approx(2 * np.pi, abs=1e-8)


# weak residual


J4 = 4
I4 = ActionVector({1: 0.01, 2: 0.0025, 4: 1e-4})
V4 = {j: 0.1 * j / 4 for j in range(-J4, J4 + 1)}
NU4 = {s: s * s + V4[s] for s in I4.values}
CHI = TestFunction(0.0, 2.0, {1: 1.0, 2: 1.0, 4: 1.0, -1: 0.5, 0: 0.3})


def linear_field(t, x, scale=1.0):
    return scale * pde_field([], I4, NU4, t, x, J4, {1: 0.3, 2: 0.6, 4: 1.2})


def test_linear_weak_residual_is_tiny():
    res = weak_residual(linear_field, V4, [], CHI, nt=257, nx=32)
    assert abs(res) <= 1e-6


def test_wrong_sign_time_is_not_a_solution():
    fn = lambda t, x: linear_field(-t, x)
    assert abs(weak_residual(fn, V4, [], CHI, nt=257, nx=32)) > 1e-3


def test_constant_field_residual_zero():
    fn = lambda t, x: np.full((len(t), len(x)), 0.7 + 0.2j)
    assert abs(weak_residual(fn, {0: 0.0}, [], CHI, nt=257, nx=32)) < 1e-13


def test_weak_residual_linear_in_field_without_nonlinearity():
    fa = lambda t, x: linear_field(t, x)
    fb = lambda t, x: np.exp(1j * 3 * x)[None, :] * np.cos(t)[:, None]
    a = 0.4 - 1.1j
    lhs = weak_residual(lambda t, x: a * fa(t, x) + fb(t, x), V4, [], CHI)
    rhs = a * weak_residual(fa, V4, [], CHI) + weak_residual(fb, V4, [], CHI)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_modes_to_grid_single_mode():
    U = np.zeros((1, 7), dtype=complex)
    U[0, 3 + 2] = 1.0
    x = np.linspace(0, 1, 5)
    assert np.allclose(modes_to_grid(U, x, 3)[0], np.exp(2j * x))


def test_linear_synthesis_keeps_moduli():
    t = np.linspace(0, 5, 11)
    U = synth_modes([], I4, NU4, t, J4)
    for s, v in I4.values.items():
        assert np.allclose(np.abs(U[:, s + J4]) ** 2, v)


# regularity


def power_actions(p, n=9, a=0.5):
    return ActionVector({2 ** i: (a * jjap(2 ** i) ** -p) ** 2 for i in range(n)})


def test_regularity_classes():
    assert regularity_probe(power_actions(2.0), 2.0).cls == "non-classical-witness"
    assert regularity_probe(power_actions(4.0), 4.0).cls == "classical-capable"
    assert regularity_probe(power_actions(2.0), 2.5).cls == "indeterminate"
    assert regularity_probe(power_actions(3.0), 2.0).cls == "indeterminate"
    assert regularity_probe(ActionVector({1: 0.1}), 2.0).cls == "indeterminate"


def test_regularity_tail_statistic():
    rep = regularity_probe(power_actions(2.0), 2.0)
    assert set(rep.tail) == {64, 128, 256}
    assert rep.tail_stat == pytest.approx(0.5)


# density


def test_density_single_site():
    rep = density_check({1: 1.0}, {1: 2.0}, 1e-3, 10.0)
    assert rep.hit_time is not None
    assert abs(rep.hit_time - 2.0) < 1e-3


def test_density_squares_on_powers_of_two():
    sites = [2 ** i for i in range(6)]
    nu = {s: float(s * s) + 0.1 * math.sqrt(s) for s in sites}
    order, crit = density_criterion(nu)
    assert order == sites
    assert crit[sites[-2]] == pytest.approx(nu[sites[-2]] / nu[sites[-1]])
    target = dict(zip(sites, np.random.default_rng(1).uniform(0, 2 * np.pi, len(sites))))
    rep = density_check(nu, target, 0.3, 2e4)
    assert rep.hit_time is not None and rep.max_distance < 0.3


def test_density_resonant_pair_never_hits():
    rep = density_check({1: 1.0, 2: 2.0}, {1: 0.0, 2: math.pi}, 0.1, 200.0)
    assert rep.hit_time is None


# invariance and the conjugacy


def test_invariance_linear_exact():
    H = diagonal(NU4, J4)
    ph = np.random.default_rng(0).uniform(0, 2 * np.pi, (8, 3))
    assert invariance_residual([], NU4, I4, H, ph) < 1e-16


def toy_total(toy):
    res, H = toy["res"], toy["H"]
    meta = {k: v for k, v in H.meta().items() if k not in ("J", "sites")}
    Lam = lambda_embed(res.lam, toy["I"], toy["sites"], toy["J"], **meta)
    return (H + Lam).prune(0.0)


def test_invariance_toy_run(toy):
    nu = {s: toy["om"].values[s + toy["J"]] for s in toy["sites"]}
    ph = np.random.default_rng(2).uniform(0, 2 * np.pi, (16, len(toy["sites"])))
    r = invariance_residual(toy["res"].Psi, nu, toy["I"], toy_total(toy), ph)
    assert r <= 10 * 1e-14
    # without the conjugacy the torus is not invariant
    assert invariance_residual([], nu, toy["I"], toy_total(toy), ph) > 1e-6


def test_dual_path_actions(toy):
    J, I, Psi = toy["J"], toy["I"], toy["res"].Psi
    meta = {k: v for k, v in toy["H"].meta().items() if k != "J"}
    ph = np.random.default_rng(3).uniform(0, 2 * np.pi, (4, len(toy["sites"])))
    V = torus_points(I, ph, J)
    U = apply_psi(Psi, V)
    for j in (-2, 0, 1, 4):
        pulled = pullback(diagonal({j: 1.0}, J, **meta), Psi)
        assert np.allclose(np.abs(U[:, j + J]) ** 2, pulled(V).real, atol=1e-8)


def test_conjugacy_is_near_identity(toy):
    J, I = toy["J"], toy["I"]
    ph = np.random.default_rng(4).uniform(0, 2 * np.pi, (4, len(toy["sites"])))
    V = torus_points(I, ph, J)
    U = apply_psi(toy["res"].Psi, V)
    rho, p0 = toy["sch"].rho, toy["sch"].p0
    for u, v in zip(U, V):
        assert wp_norm(ModeSeq.from_dense(u - v, J), p0) <= rho / 4
