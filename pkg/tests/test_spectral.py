import math

import numpy as np
import pytest

from potlatch import (
    CompleteSpec,
    TorusSpec,
    build_kernel,
    decompose,
    heat_kernel,
    laplacian_of,
    random_reversible_kernel,
    torus_gaps,
    two_step_kernel,
)
from potlatch.backend import get_core
from potlatch.errors import EvenTorusSide
from potlatch.spectral import (
    EIGENVALUE_ENVELOPE_C1,
    EIGENVALUE_ENVELOPE_C2,
    heat_evolve,
    torus_eigenbasis,
)


def test_complete_spectrum():
    sd = decompose(build_kernel(CompleteSpec(6)))
    assert abs(sd.eigenvalues[0] - 1.0) < 1e-12
    assert np.abs(sd.eigenvalues[1:]).max() < 1e-12
    assert abs(sd.gap_abs - 1.0) < 1e-12
    assert abs(sd.gap_two_step - 1.0) < 1e-12


def test_torus_1_3_eigenvalues():
    # cos(2 pi k / 3): 1, -1/2, -1/2
    sd = decompose(build_kernel(TorusSpec(1, 3)))
    assert np.allclose(sd.eigenvalues, [1.0, -0.5, -0.5], atol=1e-12)
    assert abs(sd.gap_abs - 0.5) < 1e-12
    assert abs(sd.gap_two_step - 0.75) < 1e-12


def test_torus_1_5_two_step_gap_vs_bruteforce():
    # independent oracle: dense eigensolve of the explicit 5x5 two-step matrix
    k = build_kernel(TorusSpec(1, 5))
    w2 = np.linalg.eigvalsh(np.asarray(k.P) @ np.asarray(k.P))
    gamma2_oracle = 1.0 - w2[-2]
    sd = decompose(k)
    assert abs(sd.gap_two_step - gamma2_oracle) < 1e-12
    assert abs(sd.gap_two_step - (1 - math.cos(math.pi / 5) ** 2)) < 1e-12
    assert abs(sd.gap_two_step - 0.3454915028125263) < 1e-10


def test_gap_identity_two_step():
    rng = np.random.default_rng(5)
    for _ in range(25):
        sd = decompose(random_reversible_kernel(int(rng.integers(2, 11)), rng))
        g = sd.gap_abs
        assert abs(sd.gap_two_step - (2 * g - g * g)) < 1e-12


def test_eigenvalues_match_library_solver():
    # brute-force oracle on the symmetrized kernel
    rng = np.random.default_rng(11)
    for _ in range(100):
        k = random_reversible_kernel(int(rng.integers(2, 13)), rng)
        sd = decompose(k)
        s = np.sqrt(k.pi)
        S = (s[:, None] * np.asarray(k.P)) / s[None, :]
        ref = np.linalg.eigvalsh(0.5 * (S + S.T))[::-1]
        assert np.abs(sd.eigenvalues - ref).max() < 1e-8


def test_eigenvector_orthonormality():
    rng = np.random.default_rng(13)
    for _ in range(10):
        sd = decompose(random_reversible_kernel(int(rng.integers(3, 11)), rng))
        V = sd.eigenvectors
        gram = V.T @ V
        assert np.abs(gram - np.eye(V.shape[0])).max() < 1e-8


def test_jacobi_backend_parity():
    compiled = get_core(False)
    if compiled.BACKEND_NAME != "compiled":
        pytest.skip("compiled core not available")
    fallback = get_core(True)
    rng = np.random.default_rng(3)
    for n in (2, 5, 9, 16):
        A = rng.normal(size=(n, n))
        A = A + A.T
        w1, v1, c1 = compiled.jacobi_eigh(A)
        w2, v2, c2 = fallback.jacobi_eigh(A)
        assert c1 and c2
        assert np.array_equal(w1, w2)
        assert np.array_equal(v1, v2)


def test_torus_gaps_1_3():
    spec = torus_gaps(1, 3)
    assert abs(spec.gamma11 - 1.5) < 1e-15
    assert abs(spec.gamma2d - 0.75) < 1e-15


def test_torus_gaps_d4_n5():
    spec = torus_gaps(4, 5)
    g = 1 - math.cos(2 * math.pi / 5)
    assert abs(spec.gamma11 - 0.6909830056250525) < 1e-12
    assert abs(spec.gamma2d - (2 * g / 4 - g * g / 16)) < 1e-15
    assert abs(spec.gamma2d - 0.3156504) < 1e-7


def test_torus_gaps_match_decompose():
    # d <= 3 branch vs the eigensolve route through the two-step kernel
    for d, n in [(1, 5), (2, 5), (3, 3)]:
        spec = torus_gaps(d, n)
        sd = decompose(two_step_kernel(build_kernel(TorusSpec(d, n))))
        assert abs(spec.gamma2d - sd.gap_abs) < 1e-10


def test_torus_gaps_even_rejected():
    with pytest.raises(EvenTorusSide):
        torus_gaps(1, 4)


def test_lambda_hat_envelope():
    # C1 j^2/n^2 <= lam_j <= C2 j^2/n^2 for 1 <= j <= n/2
    assert EIGENVALUE_ENVELOPE_C1 > 0
    for n in (3, 5, 9, 25, 101):
        for j in range(1, n // 2 + 1):
            lam = 1 - math.cos(2 * math.pi * j / n)
            x = j * j / (n * n)
            assert EIGENVALUE_ENVELOPE_C1 * x <= lam + 1e-15
            assert lam <= EIGENVALUE_ENVELOPE_C2 * x + 1e-15


def test_lambda_hat_structure():
    spec = torus_gaps(2, 5)
    assert spec.lambda_hat[0] == 0.0
    assert np.all(np.sort(spec.lambda_hat)[1:] > 0)
    assert spec.lambda_hat.shape == (25,)


def test_heat_kernel_initial_condition():
    p = heat_kernel(1, 5, 0.0)
    ref = np.zeros(5)
    ref[0] = 1.0
    assert np.abs(p - ref).max() < 1e-12


def test_heat_kernel_mass_and_positivity():
    for d, n, t in [(1, 5, 0.3), (2, 3, 1.0), (2, 5, 4.0), (3, 3, 0.7)]:
        p = heat_kernel(d, n, t)
        assert abs(p.sum() - 1.0) < 1e-10
        assert p.min() > -1e-12


def test_heat_kernel_symmetry():
    p = heat_kernel(1, 5, 1.0)
    for i in range(5):
        assert abs(p[i] - p[(-i) % 5]) < 1e-14


def test_heat_kernel_semigroup():
    # p(s+t, .) = sum_j p(s, j) p(t, . - j) on T_5^1
    n = 5
    for s, t in [(0.3, 0.7), (1.0, 1.0)]:
        ps = heat_kernel(1, n, s)
        pt = heat_kernel(1, n, t)
        conv = np.array([
            sum(ps[j] * pt[(i - j) % n] for j in range(n)) for i in range(n)
        ])
        assert np.abs(conv - heat_kernel(1, n, s + t)).max() < 1e-8


def test_heat_equation_finite_difference():
    # d/dt p = Laplacian p, 2nd-order central difference h = 1e-4
    h = 1e-4
    for d, n, t in [(1, 5, 0.8), (2, 3, 0.5)]:
        dp = (heat_kernel(d, n, t + h) - heat_kernel(d, n, t - h)) / (2 * h)
        lap = laplacian_of(heat_kernel(d, n, t), d, n)
        assert np.abs(dp - lap).max() < 1e-6


def test_laplacian_examples():
    assert np.abs(laplacian_of(np.ones(9), 2, 3)).max() == 0.0
    f = np.array([1.0, 0.0, 0.0])
    assert np.allclose(laplacian_of(f, 1, 3), [-1.0, 0.5, 0.5], atol=1e-15)
    rng = np.random.default_rng(0)
    g = rng.standard_normal(27)
    assert abs(laplacian_of(g, 3, 3).sum()) < 1e-12


def test_laplacian_matches_kernel_action():
    k = build_kernel(TorusSpec(2, 5))
    rng = np.random.default_rng(1)
    f = rng.standard_normal(25)
    assert np.abs(laplacian_of(f, 2, 5) - (np.asarray(k.P) @ f - f)).max() < 1e-12


def test_torus_eigenbasis_diagonalizes():
    for d, n in [(1, 5), (2, 3)]:
        psi, lam = torus_eigenbasis(d, n)
        P = np.asarray(build_kernel(TorusSpec(d, n)).P)
        assert np.abs(psi.T @ psi - np.eye(psi.shape[0])).max() < 1e-10
        assert np.abs((np.eye(psi.shape[0]) - P) @ psi - psi * lam).max() < 1e-10


def test_heat_evolve_matches_heat_kernel():
    n = 5
    f0 = np.zeros(n)
    f0[0] = 1.0
    assert np.abs(heat_evolve(f0, 1.3, 1, n) - heat_kernel(1, n, 1.3)).max() < 1e-12
