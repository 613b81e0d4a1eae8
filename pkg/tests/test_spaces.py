import math

import numpy as np
import pytest

from nlskam.spaces import (
    ModeSeq,
    embedding_constants,
    evaluate_field,
    jjap,
    l1_norm,
    reference_point,
    wp_norm,
)


def test_jjap_values():
    assert jjap(0) == 2
    assert jjap(1) == 2
    assert jjap(3) == 3
    assert jjap(-5) == 5
    np.testing.assert_array_equal(jjap(np.arange(-3, 4)), [3, 2, 2, 2, 2, 2, 3])


def test_modeseq_canonical_and_cutoff():
    u = ModeSeq({0: 0.0, 1: 1.0 + 0j}, 2)
    assert list(u) == [1]
    with pytest.raises(ValueError):
        ModeSeq({3: 1.0}, 2)


def test_modeseq_roundtrip_text_and_dense():
    u = ModeSeq({-2: 0.25 - 1j, 1: 3.0}, 3)
    assert ModeSeq.loads(u.dumps()).entries == u.entries
    assert u.dumps().splitlines()[0] == "modeseq J=3"
    v = ModeSeq.from_dense(u.to_dense(), 3)
    assert v.entries == u.entries


def test_wp_norm_examples():
    assert wp_norm(ModeSeq({1: 1.0}, 1), 2) == 4.0
    assert wp_norm(ModeSeq({}, 1), 2) == 0.0
    assert wp_norm(ModeSeq({0: 0.5, 4: 0.1}, 4), 1) == pytest.approx(1.0, rel=1e-12)


def test_wp_norm_is_a_norm_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(50):
        J = int(rng.integers(1, 8))
        a = ModeSeq.from_dense(rng.normal(size=2 * J + 1) + 1j * rng.normal(size=2 * J + 1), J)
        b = ModeSeq.from_dense(rng.normal(size=2 * J + 1), J)
        p = float(rng.uniform(1.1, 4))
        s = ModeSeq.from_dense(a.to_dense() + b.to_dense(), J)
        assert wp_norm(s, p) <= wp_norm(a, p) + wp_norm(b, p) + 1e-12
        c = complex(rng.normal(), rng.normal())
        ca = ModeSeq.from_dense(c * a.to_dense(), J)
        assert wp_norm(ca, p) == pytest.approx(abs(c) * wp_norm(a, p), rel=1e-12)
        # larger weight dominates entrywise since jjap >= 2
        assert wp_norm(a, p + 0.5) >= wp_norm(a, p)


def test_reference_point_examples():
    u = reference_point(1.0, 1, 1)
    assert u.entries == {-1: 0.5, 0: 0.5, 1: 0.5}
    assert reference_point(2.0, 2, 0).entries == {0: 0.5}
    for r, p, J in [(0.3, 1.5, 4), (2.0, 3.0, 7)]:
        assert wp_norm(reference_point(r, p, J), p) == pytest.approx(r, rel=1e-12)


def test_embedding_constants():
    c, up = embedding_constants(2, 0, 1)
    assert c == pytest.approx(4.0 / 3.0)
    assert up == 2
    inv = [1.0 / embedding_constants(2, 0, J)[0] for J in range(1, 30)]
    assert all(b > a for a, b in zip(inv, inv[1:]))
    assert inv[-1] < sum(float(jjap(j)) ** -2 for j in range(-10000, 10001))
    with pytest.raises(ValueError):
        embedding_constants(1.5, 1, 3)


def test_sup_of_field_bounded_by_weighted_norm():
    rng = np.random.default_rng(1)
    J, p = 6, 2.0
    x = np.linspace(0, 2 * math.pi, 512, endpoint=False)
    for _ in range(20):
        u = ModeSeq.from_dense(rng.normal(size=2 * J + 1) + 1j * rng.normal(size=2 * J + 1), J)
        bound = sum(float(jjap(j)) ** -p for j in range(-J, J + 1)) * wp_norm(u, p)
        assert np.max(np.abs(evaluate_field(u, x))) <= bound + 1e-12
        assert l1_norm(u) <= bound + 1e-12
