import numpy as np
import pytest

from oracles import (prox_card_oracle_1d, prox_indicator_oracle,
                     truncated_svd_best)
from rankenv.envelopes import (FixedRank, Nuclear, RankPenalty,
                               _prox_indicator_sorted, card_envelope,
                               card_envelope_scalar, envelope_bruteforce,
                               hard_threshold, indicator_envelope,
                               prox_card_envelope, prox_indicator_envelope,
                               reg_prox_matrix, reg_prox_vec,
                               reg_value_matrix, soft_threshold)
from rankenv.spectral import svd


def test_scalar_envelope_values():
    assert card_envelope_scalar(0.0, 1.0) == 0.0
    assert card_envelope_scalar(1.0, 1.0) == 1.0   # saturation at sqrt(mu)
    assert card_envelope_scalar(2.0, 1.0) == 1.0
    assert card_envelope_scalar(0.5, 1.0) == pytest.approx(0.75, abs=0)
    mu = 2.5
    assert card_envelope_scalar(np.sqrt(mu), mu) == pytest.approx(mu)


def test_card_envelope_values():
    assert card_envelope(np.zeros(4), 1.0) == 0.0
    assert card_envelope(np.array([5.0, 0.5]), 1.0) == pytest.approx(1.75)
    # sign and permutation invariance
    rng = np.random.default_rng(0)
    x = rng.normal(size=5)
    v = card_envelope(x, 0.7)
    assert card_envelope(-x[::-1], 0.7) == pytest.approx(v, abs=1e-14)


def test_card_envelope_matches_bruteforce():
    rng = np.random.default_rng(1)
    for n in (1, 2, 3):
        for _ in range(2):
            x = rng.normal(scale=1.2, size=n)
            mu = float(rng.uniform(0.4, 1.6))
            want = envelope_bruteforce(
                lambda u: mu * np.count_nonzero(np.atleast_2d(u), axis=1),
                x, scale=np.sqrt(mu))
            assert card_envelope(x, mu) == pytest.approx(want, abs=1e-6)


def test_indicator_envelope_domain_and_closed_form():
    # zero exactly on card(x) <= k
    assert indicator_envelope(np.array([3.0, 0.0, 0.0]), 1) == 0.0
    assert indicator_envelope(np.array([1.0, 2.0]), 2) == 0.0
    # closed form for n=2, k=1 is 2 * x1~ * x2~
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.normal(scale=2.0, size=2)
        a = np.sort(np.abs(x))[::-1]
        assert indicator_envelope(x, 1) == pytest.approx(2 * a[0] * a[1], rel=1e-12)


def test_indicator_envelope_matches_bruteforce():
    rng = np.random.default_rng(3)
    def iota(u, k):
        u2 = np.atleast_2d(u)
        return np.where(np.count_nonzero(np.abs(u2) > 1e-9, axis=1) <= k,
                        0.0, np.inf)
    # n=2, k=1: the double transform lands on the 2*x1~*x2~ closed form
    x2 = rng.normal(scale=1.3, size=2)
    want2 = envelope_bruteforce(lambda u: iota(u, 1), x2,
                                scale=float(np.max(np.abs(x2))))
    a = np.sort(np.abs(x2))[::-1]
    assert want2 == pytest.approx(2 * a[0] * a[1], abs=1e-6)
    assert indicator_envelope(x2, 1) == pytest.approx(want2, abs=1e-6)
    for _ in range(3):
        x = rng.normal(scale=1.0, size=3)
        k = int(rng.integers(1, 3))
        want = envelope_bruteforce(lambda u: iota(u, k), x,
                                   scale=float(np.max(np.abs(x))))
        assert indicator_envelope(x, k) == pytest.approx(want, abs=1e-6)


def test_bruteforce_oracle_self_checks():
    # f = 0 -> envelope 0; f = mu*card in 1-D -> the scalar envelope value
    x = np.array([0.7])
    zero = envelope_bruteforce(lambda u: np.zeros(np.atleast_2d(u).shape[0]), x)
    assert abs(zero) < 1e-6
    mu = 1.3
    v = envelope_bruteforce(
        lambda u: mu * np.count_nonzero(np.atleast_2d(u), axis=1), x,
        scale=np.sqrt(mu))
    assert v == pytest.approx(card_envelope_scalar(0.7, mu), abs=1e-6)
    with pytest.raises(ValueError):
        envelope_bruteforce(lambda u: 0.0, np.zeros(4))


def test_prox_card_envelope_printed_cases():
    assert prox_card_envelope(np.array([2.0]), 1.0, 4.0)[0] == 2.0
    assert prox_card_envelope(np.array([0.75]), 1.0, 4.0)[0] == pytest.approx(0.5)
    assert prox_card_envelope(np.array([0.4]), 1.0, 4.0)[0] == 0.0
    out = prox_card_envelope(np.array([-0.75]), 1.0, 4.0)
    assert out[0] == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        prox_card_envelope(np.array([1.0]), 1.0, 2.0)


def test_prox_card_envelope_against_1d_oracle():
    rng = np.random.default_rng(4)
    for _ in range(60):
        y = float(rng.normal(scale=1.5))
        mu = float(rng.uniform(0.2, 2.5))
        rho = float(rng.uniform(2.05, 10.0))
        got = prox_card_envelope(np.array([y]), mu, rho)[0]
        want = prox_card_oracle_1d(y, mu, rho)
        assert got == pytest.approx(want, abs=1e-6)


def test_prox_indicator_envelope_fixed_points():
    y = np.array([3.0, 0.0, 0.0])
    np.testing.assert_array_equal(prox_indicator_envelope(y, 1, 3.0), y)
    y = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(prox_indicator_envelope(y, 3, 2.5), y)


def test_prox_indicator_envelope_hand_case():
    out = prox_indicator_envelope(np.array([1.0, 1.0]), 1, 4.0)
    np.testing.assert_allclose(out, [2.0 / 3.0, 2.0 / 3.0], atol=1e-9)
    x, t_star = _prox_indicator_sorted(np.array([1.0, 1.0]), 1, 4.0)
    assert t_star == pytest.approx(4.0 / 3.0, abs=1e-12)


def test_prox_indicator_envelope_against_oracle():
    rng = np.random.default_rng(5)
    for _ in range(30):
        n = int(rng.integers(2, 5))
        k = int(rng.integers(1, n))
        rho = float(rng.uniform(2.05, 9.0))
        y = rng.normal(scale=1.5, size=n)
        got = prox_indicator_envelope(y, k, rho)
        want = prox_indicator_oracle(y, k, rho)
        obj = lambda x: indicator_envelope(x, k) + 0.5 * rho * np.sum((x - y) ** 2)
        assert obj(got) <= obj(want) + 1e-6
        np.testing.assert_allclose(got, want, atol=2e-6)


def test_prox_indicator_first_order_residual():
    # stationarity of the strongly convex objective at the returned point:
    # the threshold t of the three-case map is a valid envelope subgradient
    # scale, so rho*(y - x) must match the envelope subgradient exactly
    rng = np.random.default_rng(6)
    for _ in range(40):
        n = int(rng.integers(2, 7))
        k = int(rng.integers(1, n))
        rho = float(rng.uniform(2.05, 9.0))
        y = np.sort(np.abs(rng.normal(scale=1.5, size=n)))[::-1]
        x, t = _prox_indicator_sorted(y, k, rho)
        grad_fit = rho * (x - y)
        for i in range(n):
            if i < k:
                g = 2.0 * max(t - x[i], 0.0)
            else:
                g = 2.0 * (t - x[i])
            if x[i] > 0:
                assert abs(g + grad_fit[i]) < 1e-8
            else:
                assert abs(grad_fit[i]) <= g + 1e-8


def test_prox_card_first_order_residual():
    # the unique minimizer zeroes a subgradient of the convex objective
    rng = np.random.default_rng(16)
    for _ in range(40):
        n = int(rng.integers(1, 7))
        y = rng.normal(scale=1.5, size=n)
        mu = float(rng.uniform(0.2, 2.5))
        rho = float(rng.uniform(2.05, 9.0))
        smu = np.sqrt(mu)
        x = prox_card_envelope(y, mu, rho)
        for xi, yi in zip(x, y):
            if xi == 0.0:
                assert abs(rho * yi) <= 2.0 * smu + 1e-8
            else:
                slope = 2.0 * max(smu - abs(xi), 0.0) * np.sign(xi)
                assert abs(slope + rho * (xi - yi)) < 1e-8


def test_prox_indicator_lipschitz():
    # prox of a convex-plus-norm envelope at weight rho contracts pairs by
    # at most rho/(rho-2)
    rng = np.random.default_rng(7)
    for _ in range(40):
        n = int(rng.integers(2, 6))
        k = int(rng.integers(1, n))
        rho = float(rng.uniform(2.1, 6.0))
        y1 = rng.normal(scale=2.0, size=n)
        y2 = y1 + rng.normal(scale=0.3, size=n)
        p1 = prox_indicator_envelope(y1, k, rho)
        p2 = prox_indicator_envelope(y2, k, rho)
        lip = rho / (rho - 2.0)
        assert np.linalg.norm(p1 - p2) <= lip * np.linalg.norm(y1 - y2) + 1e-10


def test_prox_equivariance_under_signs_and_permutations():
    rng = np.random.default_rng(8)
    y = rng.normal(size=4)
    perm = rng.permutation(4)
    signs = rng.choice([-1.0, 1.0], size=4)
    for reg, rho in ((RankPenalty(mu=0.8), 3.1), (FixedRank(k=2), 3.1),
                     (Nuclear(lam=0.5), 3.1)):
        base = reg_prox_vec(y, reg, rho)
        twisted = reg_prox_vec(signs * y[perm], reg, rho)
        np.testing.assert_allclose(twisted, signs * base[perm], atol=1e-12)


def test_soft_threshold():
    np.testing.assert_allclose(soft_threshold(np.array([3.0, 1.0, 0.2]), 0.5),
                               [2.5, 0.5, 0.0])
    np.testing.assert_array_equal(soft_threshold(np.zeros(3), 1.0), np.zeros(3))
    # subgradient optimality of tau*|x| + 0.5 (x-y)^2 at the output
    rng = np.random.default_rng(9)
    y = rng.normal(size=6)
    tau = 0.37
    x = soft_threshold(y, tau)
    for xi, yi in zip(x, y):
        if xi != 0.0:
            assert abs(tau * np.sign(xi) + (xi - yi)) < 1e-12
        else:
            assert abs(yi) <= tau + 1e-12


def test_hard_threshold():
    out, amb = hard_threshold(np.array([2.0, 0.5]), 1.0)
    np.testing.assert_array_equal(out, [2.0, 0.0])
    assert not amb
    out, amb = hard_threshold(np.array([0.3, -0.9]), 1.0)
    np.testing.assert_array_equal(out, np.zeros(2))
    out, amb = hard_threshold(np.array([1.0, 2.0]), 1.0)
    assert amb  # boundary value flagged


def test_hard_threshold_is_global_minimizer_of_rank_problem():
    # mu*rank(X) + ||X - M||_F^2 is minimized by hard thresholding sigma(M)
    # at sqrt(mu); verify against exhaustive truncated-SVD enumeration
    rng = np.random.default_rng(10)
    for _ in range(10):
        M = rng.normal(size=(3, 3)) * rng.uniform(0.4, 2.0)
        mu = float(rng.uniform(0.3, 2.0))
        dec = svd(M)
        thr, amb = hard_threshold(dec.sigma, np.sqrt(mu))
        assert not amb
        X = dec.reconstruct(thr)
        val = mu * np.count_nonzero(thr) + np.linalg.norm(X - M) ** 2
        for r in range(4):
            Xr = truncated_svd_best(M, r)
            val_r = mu * r + np.linalg.norm(Xr - M) ** 2
            assert val <= val_r + 1e-9


def test_reg_prox_matrix_diagonal_and_spectra():
    rho = 3.0
    D = np.diag([2.0, 0.75, 0.4])
    out = reg_prox_matrix(D, RankPenalty(mu=1.0), rho)
    want = np.diag(prox_card_envelope(np.array([2.0, 0.75, 0.4]), 1.0, rho))
    np.testing.assert_allclose(out, want, atol=1e-12)

    rng = np.random.default_rng(11)
    for reg in (RankPenalty(mu=0.6), FixedRank(k=2), Nuclear(lam=0.8)):
        X = rng.normal(size=(5, 5))
        out = reg_prox_matrix(X, reg, rho)
        np.testing.assert_allclose(svd(out).sigma,
                                   reg_prox_vec(svd(X).sigma, reg, rho),
                                   atol=1e-8)


def test_reg_prox_matrix_identity_region():
    rng = np.random.default_rng(12)
    dec = svd(rng.normal(size=(4, 4)))
    X = dec.reconstruct(np.array([5.0, 4.0, 3.0, 2.0]))
    out = reg_prox_matrix(X, RankPenalty(mu=1.0), 4.0)
    np.testing.assert_allclose(out, X, atol=1e-10)


def test_reg_value_matrix_cases():
    rng = np.random.default_rng(13)
    dec = svd(rng.normal(size=(4, 4)))
    X = dec.reconstruct(np.array([3.0, 2.0, 0.0, 0.0]))
    assert reg_value_matrix(X, FixedRank(k=2)) == pytest.approx(0.0, abs=1e-12)
    # all sigma above sqrt(mu): value saturates at mu * rank
    assert reg_value_matrix(X, RankPenalty(mu=1.0)) == pytest.approx(2.0, abs=1e-10)
    s = svd(X).sigma
    assert reg_value_matrix(X, Nuclear(lam=0.7)) == pytest.approx(0.7 * s.sum())


def test_envelope_sandwich():
    # 0 <= envelope <= penalty, equality on the saturation region
    rng = np.random.default_rng(14)
    for _ in range(50):
        n = int(rng.integers(1, 6))
        x = rng.normal(scale=1.5, size=n)
        mu = float(rng.uniform(0.3, 2.0))
        k = int(rng.integers(1, n + 1))
        card = np.count_nonzero(np.abs(x) > 1e-12)
        v_card = card_envelope(x, mu)
        assert -1e-12 <= v_card <= mu * card + 1e-12
        if np.all(np.abs(x[np.abs(x) > 1e-12]) >= np.sqrt(mu)):
            assert v_card == pytest.approx(mu * card, abs=1e-10)
        v_ind = indicator_envelope(x, k)
        assert v_ind >= -1e-12
        if card <= k:
            assert v_ind == 0.0


def test_prox_optimality_random_perturbations():
    # objective at the prox output beats random perturbed points
    rng = np.random.default_rng(15)
    for _ in range(100):
        n = int(rng.integers(1, 7))
        y = rng.normal(scale=1.5, size=n)
        rho = float(rng.uniform(2.05, 8.0))
        mu = float(rng.uniform(0.3, 2.0))
        k = int(rng.integers(1, n + 1))
        for reg, value in ((RankPenalty(mu=mu), lambda v: card_envelope(v, mu)),
                           (FixedRank(k=k), lambda v: indicator_envelope(v, k))):
            x = reg_prox_vec(y, reg, rho)
            fx = value(x) + 0.5 * rho * np.sum((x - y) ** 2)
            pert = x[None, :] + 0.1 * rng.normal(size=(40, n))
            for p in pert:
                fp = value(p) + 0.5 * rho * np.sum((p - y) ** 2)
                assert fx <= fp + 1e-10


def test_regularizer_validation():
    with pytest.raises(ValueError):
        RankPenalty(mu=0.0)
    with pytest.raises(ValueError):
        FixedRank(k=0)
    with pytest.raises(ValueError):
        Nuclear(lam=-1.0)
    with pytest.raises(ValueError):
        prox_indicator_envelope(np.ones(3), 4, 3.0)
