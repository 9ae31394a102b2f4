import numpy as np
import pytest

from kerrlab.fock import (
    BandedOperator,
    ModelParams,
    ZeroNormError,
    build_annihilation,
    build_effective_hamiltonian,
    build_hamiltonian,
    build_number,
    expectation,
    expectation_raw,
    fock_state,
)


def test_params_validation():
    ModelParams(chi=0.0, gamma=0.01, A=0.0, T=1.0, N=1)
    with pytest.raises(ValueError):
        ModelParams(gamma=0.0)
    with pytest.raises(ValueError):
        ModelParams(gamma=-0.1)
    with pytest.raises(ValueError):
        ModelParams(chi=-1e-9)
    with pytest.raises(ValueError):
        ModelParams(A=-0.5)
    with pytest.raises(ValueError):
        ModelParams(T=0.0)
    with pytest.raises(ValueError):
        ModelParams(N=0)


def test_annihilation_elements():
    a = build_annihilation(2)
    assert np.allclose(a.upper, [1.0, np.sqrt(2.0)])
    assert np.all(a.diag == 0) and np.all(a.lower == 0)
    with pytest.raises(ValueError):
        build_annihilation(0)


def test_annihilation_on_vacuum_and_number_identity():
    a = build_annihilation(5)
    assert np.all(a.apply(fock_state(5, 0)) == 0)
    # (a^dag a)|n> = n|n> via <n| a^dag a |n> = |a|n>|^2
    for n in range(6):
        apsi = a.apply(fock_state(5, n))
        assert np.vdot(apsi, apsi).real == pytest.approx(n, abs=1e-12)
    num = build_number(5)
    for n in range(6):
        assert expectation(fock_state(5, n), num) == pytest.approx(n)


def test_hamiltonian_diagonal_and_drive_elements():
    p = ModelParams(chi=0.008, N=3)
    h = build_hamiltonian(p, 0.0)
    assert np.allclose(h.diag, [0.0, 0.0, 0.008, 0.024])
    assert np.all(h.upper == 0) and np.all(h.lower == 0)

    A = 1.7
    h = build_hamiltonian(ModelParams(A=A, N=3), A)
    dense = h.to_dense()
    assert dense[1, 0] == pytest.approx(1j * A)
    assert dense[0, 1] == pytest.approx(-1j * A)


@pytest.mark.parametrize("chi,F,N", [(0.008, 0.0, 7), (0.02, 3.3, 12), (0.0, 1.0, 4)])
def test_hamiltonian_exactly_hermitian(chi, F, N):
    h = build_hamiltonian(ModelParams(chi=chi, A=max(F, 0.0), N=N), F)
    assert h.is_hermitian()
    dense = h.to_dense()
    assert np.array_equal(dense, dense.conj().T)


def test_effective_hamiltonian_shift():
    p = ModelParams(gamma=0.05, N=4)
    h = build_hamiltonian(p, 0.7)
    heff = build_effective_hamiltonian(p, 0.7)
    assert heff.diag[1] - h.diag[1] == pytest.approx(-0.025j)
    # gamma -> 0 limit: identical to the Hermitian Hamiltonian
    p0 = ModelParams(gamma=1e-30, N=4)
    h0 = build_effective_hamiltonian(p0, 0.7)
    assert np.allclose(h0.diag, build_hamiltonian(p0, 0.7).diag, atol=1e-28)
    # anti-Hermitian part: diagonal -(i/2) gamma n, zero off-diagonal
    dense = heff.to_dense()
    anti = 0.5 * (dense - dense.conj().T)
    assert np.allclose(np.diag(anti), -0.5j * p.gamma * np.arange(5))
    assert np.allclose(anti - np.diag(np.diag(anti)), 0.0)


def test_expectation_vacuum_and_two_level():
    a = build_annihilation(4)
    assert expectation(fock_state(4, 0), a) == 0
    alpha = 0.37 - 0.21j
    psi = fock_state(4, 0) + alpha * fock_state(4, 1)
    psi /= np.linalg.norm(psi)
    want = alpha / (1.0 + abs(alpha) ** 2)
    assert expectation(psi, a) == pytest.approx(want)


def test_expectation_scale_invariance_and_raw():
    rng = np.random.default_rng(3)
    psi = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    num = build_number(5)
    assert expectation(0.5 * psi, num) == pytest.approx(expectation(psi, num))
    assert expectation_raw(0.5 * psi, num) == pytest.approx(
        0.25 * expectation_raw(psi, num)
    )


def test_expectation_zero_norm_raises():
    with pytest.raises(ZeroNormError):
        expectation(np.zeros(5, dtype=complex), build_number(4))


def test_hermitian_expectation_real():
    rng = np.random.default_rng(11)
    p = ModelParams(A=2.2, N=20)
    h = build_hamiltonian(p, p.A)
    for _ in range(20):
        psi = rng.standard_normal(21) + 1j * rng.standard_normal(21)
        val = expectation(psi, h)
        assert abs(val.imag) < 1e-14 * max(1.0, abs(val.real))


def test_truncation_nesting():
    p5 = ModelParams(chi=0.011, gamma=0.03, A=1.3, N=5)
    p9 = ModelParams(chi=0.011, gamma=0.03, A=1.3, N=9)
    for build in (build_annihilation, build_number):
        small = build(5).to_dense()
        big = build(9).to_dense()
        assert np.array_equal(big[:6, :6] - np.diag(np.diag(big[:6, :6])),
                              small - np.diag(np.diag(small)))
        assert np.array_equal(np.diag(big)[:6], np.diag(small))
    for build in (build_hamiltonian, build_effective_hamiltonian):
        small = build(p5, 1.3).to_dense()
        big = build(p9, 1.3).to_dense()
        # off-diagonals agree on the overlapping band; diagonals agree exactly
        assert np.array_equal(np.diag(big)[:6], np.diag(small))
        assert np.array_equal(np.diag(big, 1)[:5], np.diag(small, 1))
        assert np.array_equal(np.diag(big, -1)[:5], np.diag(small, -1))


def test_banded_operator_validation():
    with pytest.raises(ValueError):
        BandedOperator(diag=np.zeros(3, complex), upper=np.zeros(3, complex),
                       lower=np.zeros(2, complex))
