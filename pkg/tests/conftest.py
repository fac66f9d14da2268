import sys
import mpmath
import numpy as np
import pytest
from scipy.stats import unitary_group

from cohwork import fcs


def random_hermitian(rng, d, scale=1.0):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (A + A.conj().T) / 2


def random_state(rng, d, rank=None):
    rank = d if rank is None else rank
    G = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = G @ G.conj().T
    rho /= np.trace(rho).real
    return fcs.StateMatrix(0.5 * (rho + rho.conj().T))


def random_unitary(rng, d):
    return fcs.Protocol(unitary_group.rvs(d, random_state=rng))


def random_system(rng, d):
    """(rho0, H0, Htau, U) with a full-rank generic initial state."""
    return (random_state(rng, d), fcs.spectral_decompose(random_hermitian(rng, d)),
            fcs.spectral_decompose(random_hermitian(rng, d)), random_unitary(rng, d))


def chi_highprec(system, u, dps=30):
    """Characteristic function summed term by term in mpmath.

    Uses the same eigendata as the double-precision engine but keeps 30
    digits, so finite differences with small steps are free of roundoff.
    """
    rho, H0, Ht, U = system
    R = H0.to_eigenbasis(rho.matrix)
    Ulm = Ht.eigenvectors.conj().T @ U.unitary @ H0.eigenvectors
    d = R.shape[0]
    with mpmath.workdps(dps):
        u = mpmath.mpf(u)
        ph0 = [mpmath.expj(-u * float(e) / 2) for e in H0.eigenvalues]
        pht = [mpmath.expj(u * float(e)) for e in Ht.eigenvalues]
        total = mpmath.mpc(0)
        for l in range(d):
            row = mpmath.mpc(0)
            for m in range(d):
                a = mpmath.mpc(Ulm[l, m]) * ph0[m]
                for n in range(d):
                    row += a * mpmath.mpc(R[m, n]) * ph0[n] * mpmath.mpc(np.conj(Ulm[l, n]))
            total += pht[l] * row
        return total


def fd_moment(system, n, h=1e-4):
    """(-i)^n d^n chi/du^n at u=0: central differences at h and h/2, Richardson once."""
    cache = {}

    def chi(u):
        if u not in cache:
            cache[u] = chi_highprec(system, u)
        return cache[u]

    def D(h):
        if n == 1:
            return (chi(h) - chi(-h)) / (2 * h)
        if n == 2:
            return (chi(h) - 2 * chi(0.0) + chi(-h)) / h ** 2
        if n == 3:
            return (chi(2 * h) - 2 * chi(h) + 2 * chi(-h) - chi(-2 * h)) / (2 * h ** 3)
        raise ValueError(n)

    with mpmath.workdps(30):
        est = (4 * D(h / 2) - D(h)) / 3
        return float(mpmath.re((-1j) ** n * est))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
