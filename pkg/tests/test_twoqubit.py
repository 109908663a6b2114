"""Tests for the two-qubit entanglement primitives.

Expected values are computed from independent closed-form expressions or
brute-force searches inside the tests, never from the functions under test.
"""

import numpy as np
import pytest

from kondo_eof import twoqubit as tq
from kondo_eof.errors import InvalidStateError

BELL = np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2.0)
SINGLET_LIKE = np.array([0.0, 1.0, -1.0, 0.0]) / np.sqrt(2.0)


def random_density(rng, rank, dim=4):
    psi = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    w = rng.random(rank)
    rho = (psi * w) @ psi.conj().T
    return rho / np.real(np.trace(rho))


def entropy_direct(x):
    # independent inline evaluation of the binary entropy
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * np.log2(x) - (1.0 - x) * np.log2(1.0 - x)


class TestConcurrence:
    def test_bell_projector(self):
        assert tq.concurrence(np.outer(BELL, BELL)) == pytest.approx(1.0, abs=1e-12)

    def test_product_projector(self):
        rho = np.zeros((4, 4))
        rho[0, 0] = 1.0
        assert tq.concurrence(rho) == 0.0

    def test_werner_state_against_brute_force(self):
        # p|Psi><Psi| + (1-p) I/4 at p = 0.8
        rho = 0.8 * np.outer(BELL, BELL) + 0.2 * np.eye(4) / 4.0
        c = tq.concurrence(rho)

        # brute-force convex-roof minimization over random decompositions
        rng = np.random.default_rng(11)
        evals, evecs = np.linalg.eigh(rho)
        sq = evecs * np.sqrt(np.clip(evals, 0.0, None))
        best = np.inf
        for _ in range(200):
            z = rng.normal(size=(40, 6, 4)) + 1j * rng.normal(size=(40, 6, 4))
            q, _ = np.linalg.qr(z)
            psi = np.einsum("bmr,ir->bmi", q, sq)
            pre = np.einsum("bmi,ij,bmj->bm", psi, tq._SPIN_FLIP.astype(complex), psi)
            tot = np.abs(pre).sum(axis=1)
            best = min(best, float(tot.min()))
        assert best >= c - 1e-9  # any decomposition upper-bounds the roof
        assert best - c < 0.05  # and the sampled roof approaches it
        assert c == pytest.approx(0.7, abs=1e-10)  # 2 * 0.85 - 1 for this mixture

    def test_homogeneity(self):
        rng = np.random.default_rng(1)
        for k in range(20):
            rho = random_density(rng, 1 + k % 4)
            for scale in (0.3, 2.5):
                assert tq.concurrence(scale * rho) == pytest.approx(
                    scale * tq.concurrence(rho), abs=1e-10
                )

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidStateError):
            tq.concurrence(np.diag([1.0, -0.5, 0.2, 0.1]))
        bad = np.zeros((4, 4), dtype=complex)
        bad[0, 1] = 1.0
        with pytest.raises(InvalidStateError):
            tq.concurrence(bad)


class TestEofFromConcurrence:
    def test_endpoints(self):
        assert tq.eof_from_concurrence(1.0) == pytest.approx(1.0, abs=1e-14)
        assert tq.eof_from_concurrence(0.0) == 0.0

    def test_half(self):
        # f(0.5) = h((1 + sqrt(0.75)) / 2), evaluated independently
        expected = entropy_direct((1.0 + np.sqrt(0.75)) / 2.0)
        assert tq.eof_from_concurrence(0.5) == pytest.approx(expected, abs=1e-14)

    def test_domain_error(self):
        with pytest.raises(InvalidStateError):
            tq.eof_from_concurrence(1.2)
        with pytest.raises(InvalidStateError):
            tq.eof_from_concurrence(-0.2)

    def test_monotone_and_convex(self):
        xs = np.linspace(0.0, 1.0, 2001)
        fs = np.array([tq.eof_from_concurrence(x) for x in xs])
        d1 = np.diff(fs)
        assert np.all(d1 >= -1e-12)
        d2 = np.diff(fs, 2)
        assert np.all(d2 >= -1e-8)

    def test_derivative_matches_finite_differences(self):
        for x in (0.01, 0.2, 0.5, 0.9, 0.999):
            h = 1e-6
            fd = (tq.eof_from_concurrence(x + h) - tq.eof_from_concurrence(x - h)) / (2 * h)
            assert tq.eof_derivative(x) == pytest.approx(fd, rel=1e-5)

    def test_derivative_endpoint(self):
        # finite limit 1/ln 2 at maximal concurrence
        assert tq.eof_derivative(1.0) == pytest.approx(1.0 / np.log(2.0), abs=1e-12)
        assert tq.eof_derivative(1.0 - 1e-9) == pytest.approx(1.0 / np.log(2.0), rel=1e-6)
        assert tq.eof_derivative(0.0) == 0.0


class TestPureStateEof:
    def test_product_state(self):
        psi = np.zeros(4)
        psi[0] = 1.0
        assert tq.pure_state_eof(psi) == 0.0

    def test_bell_type(self):
        assert tq.pure_state_eof(SINGLET_LIKE) == pytest.approx(1.0, abs=1e-12)

    def test_asymmetric_superposition(self):
        # 0.6 |up>|a> + 0.8 |down>|b> with <a|b> = 0 in a 2x3 bath
        psi = np.zeros(6)
        psi[0] = 0.6
        psi[4] = 0.8
        assert tq.pure_state_eof(psi, dims=(2, 3)) == pytest.approx(
            entropy_direct(0.36), abs=1e-12
        )

    def test_norm_check(self):
        with pytest.raises(InvalidStateError):
            tq.pure_state_eof(np.array([1.0, 0.0, 0.0, 1.0]))

    def test_matches_concurrence_route_on_random_pure_states(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            psi = rng.normal(size=4) + 1j * rng.normal(size=4)
            psi /= np.linalg.norm(psi)
            via_c = tq.eof_from_concurrence(min(tq.concurrence(np.outer(psi, psi.conj())), 1.0))
            assert tq.pure_state_eof(psi) == pytest.approx(via_c, abs=1e-9)


class TestConcurrenceWitness:
    def test_bell_projector(self):
        xc, op = tq.optimal_concurrence_witness(np.outer(BELL, BELL))
        op.validate()
        assert xc.kind == "concurrence_witness"
        assert xc.expectation(np.outer(BELL, BELL)) == pytest.approx(1.0, abs=1e-8)

    def test_product_state_gives_null(self):
        rho = np.zeros((4, 4))
        rho[0, 0] = 1.0
        xc, op = tq.optimal_concurrence_witness(rho)
        assert xc.kind == "null"
        assert np.all(xc.matrix == 0.0)

    def test_random_densities_match_wootters(self):
        rng = np.random.default_rng(5)
        for k in range(50):
            rho = random_density(rng, 4)
            c = tq.concurrence(rho)
            xc, op = tq.optimal_concurrence_witness(rho)
            op.validate()
            val = xc.expectation(rho) if xc.kind != "null" else 0.0
            assert val == pytest.approx(c, abs=1e-6)

    def test_slocc_factors_roundtrip(self):
        rng = np.random.default_rng(6)
        rho = random_density(rng, 4)
        _, op = tq.optimal_concurrence_witness(rho)
        for u1, f, u2 in op.factors():
            assert f > 0
            recon = u1 @ np.diag([f, 1.0 / f]) @ u2
            target = op.o1 if u1 is op.factors()[0][0] else None
        o1_u1, o1_f, o1_u2 = op.factors()[0]
        assert np.allclose(o1_u1 @ np.diag([o1_f, 1 / o1_f]) @ o1_u2, op.o1, atol=1e-8)


class TestEofWitness:
    def test_bell_projector_matrix(self):
        rho = np.outer(BELL, BELL)
        xw = tq.optimal_eof_witness(rho)
        assert xw.expectation(rho) == pytest.approx(1.0, abs=1e-8)
        ln2 = np.log(2.0)
        expected = (2.0 / ln2) * np.outer(BELL, BELL) - (2.0 / ln2 - 1.0) * np.eye(4)
        assert np.allclose(xw.matrix, expected, atol=1e-6)

    def test_separable_mixture(self):
        rho = np.diag([0.5, 0.0, 0.0, 0.5])
        xw = tq.optimal_eof_witness(rho)
        assert xw.expectation(rho) == pytest.approx(0.0, abs=1e-12)

    def test_random_densities_match_formula(self):
        rng = np.random.default_rng(7)
        for k in range(50):
            rank = 1 + k % 4
            rho = random_density(rng, rank)
            tr = np.real(np.trace(rho))
            expected = tr * tq.eof_from_concurrence(tq.concurrence(rho) / tr)
            xw = tq.optimal_eof_witness(rho)
            assert xw.expectation(rho) == pytest.approx(expected, abs=1e-6)

    def test_validity_on_sampled_pure_states(self):
        rng = np.random.default_rng(8)
        for k in range(5):
            rho = random_density(rng, 1 + k % 4)
            xw = tq.optimal_eof_witness(rho)
            excess = tq.witness_validity_check(xw, n_samples=10000, seed=k)
            assert excess <= 1e-9

    def test_eof_homogeneity(self):
        rng = np.random.default_rng(9)
        rho = random_density(rng, 3)
        for k in (0.25, 3.0):
            assert tq.eof(k * rho) == pytest.approx(k * tq.eof(rho), abs=1e-10)


class TestWoottersDecomposition:
    def test_reconstruction_and_equal_concurrence(self):
        rng = np.random.default_rng(10)
        for k in range(40):
            rank = 1 + k % 4
            rho = random_density(rng, rank)
            c = tq.concurrence(rho)
            dec = tq.wootters_decomposition(rho)
            rec = sum(w * np.outer(v, v.conj()) for w, v in dec)
            assert np.linalg.norm(rec - rho) < 1e-10
            for w, v in dec:
                cv = abs(np.conj(v) @ tq._SPIN_FLIP @ np.conj(v))
                assert cv == pytest.approx(c, abs=1e-9)

    def test_zero_concurrence_gives_product_states(self):
        rng = np.random.default_rng(12)
        found = 0
        while found < 10:
            rho = random_density(rng, 4)
            rho = 0.2 * rho + 0.8 * np.eye(4) / 4.0
            if tq.concurrence(rho) > 0.0:
                continue
            found += 1
            for w, v in tq.wootters_decomposition(rho):
                assert abs(np.conj(v) @ tq._SPIN_FLIP @ np.conj(v)) < 1e-9

    def test_average_entanglement_equals_eof(self):
        rng = np.random.default_rng(13)
        for k in range(20):
            rho = random_density(rng, 1 + k % 4)
            dec = tq.wootters_decomposition(rho)
            avg = sum(w * tq.pure_state_eof(v) for w, v in dec)
            assert avg == pytest.approx(tq.eof(rho), abs=1e-8)


class TestTwoQubitDensity:
    def test_clamps_small_negative_eigenvalues(self):
        rho = np.diag([0.7, 0.3, 0.0, -1e-12])
        d = tq.TwoQubitDensity.from_matrix(rho)
        assert np.linalg.eigvalsh(d.matrix)[0] >= 0.0
        assert d.trace_weight == pytest.approx(1.0, abs=1e-10)

    def test_rejects_large_negative(self):
        with pytest.raises(InvalidStateError):
            tq.TwoQubitDensity.from_matrix(np.diag([1.0, 0.0, 0.0, -1e-3]))
