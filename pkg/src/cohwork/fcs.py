"""
Generic full-counting-statistics (FCS) work engine for finite-dimensional
systems.

Everything is evaluated in the energy eigenbases of the initial and final
Hamiltonians. With ``rho_mn`` the initial state in the eigenbasis of ``H0``
and ``U_lm = <psi_tau^l|U|psi_0^m>`` the protocol matrix, the work
quasidistribution has atoms at

    W_lmn = eps_tau^l - (eps_0^m + eps_0^n) / 2

carrying the weight ``U_lm rho_mn conj(U_ln)``. Units are hbar = k_B = 1 and
``beta = 1 / T``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from math import comb
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import (DimensionMismatchError, InvalidStateError,
                     NonHermitianError, NumericalBreakdownError)

__all__ = [
    "SpectralOperator", "StateMatrix", "Protocol", "WorkQuasiDistribution",
    "WorkDecomposition", "FreeEnergyReport",
    "spectral_decompose", "thermal_state", "split_state",
    "characteristic_function", "work_moment", "quasidistribution",
    "work_decomposition", "work_decomposition_entropic", "atomwise_deviation", "work_fluctuation",
    "fluctuation_relation", "log_fluctuation_relation", "free_energy",
    "relative_entropy", "thermodynamic_report", "log_partition_function",
    "matrix_to_json", "matrix_from_json",
]

HERMITIAN_TOL = 1e-10
UNITARY_TOL = 1e-10
TRACE_TOL = 1e-12
POSITIVITY_TOL = 1e-10
EIGEN_FLOOR = 1e-14
SUPPORT_TOL = 1e-12
IMAG_REPORT_TOL = 1e-10
IMAG_BREAKDOWN_TOL = 1e-8
DEFAULT_MERGE_TOLERANCE = 1e-9
DEFAULT_PRUNE_TOLERANCE = 1e-15
# exp() overflows a float64 just above 709
_EXP_SAFE = 700.0


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _check_temperature(T):
    if not T > 0:
        raise ValueError(f"temperature must be positive, got T={T!r}")
    return 1.0 / T


def _check_real(value, what, scale=1.0):
    """Return the real part of ``value`` after checking its imaginary residue."""
    residue = abs(np.imag(value))
    if residue > IMAG_BREAKDOWN_TOL * max(1.0, scale):
        raise NumericalBreakdownError(
            f"{what} has imaginary part {residue:.3e}; expected a real number")
    return float(np.real(value))


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralOperator:
    """Hermitian operator held through its eigendecomposition.

    Attributes
    ----------
    eigenvalues : ndarray, shape (d,)
        Real eigenvalues, ascending.
    eigenvectors : ndarray, shape (d, d)
        Unitary matrix whose columns are the eigenvectors.
    """
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.eigenvalues, dtype=float)
        vecs = np.asarray(self.eigenvectors, dtype=complex)
        if vals.ndim != 1 or vecs.shape != (vals.size, vals.size):
            raise DimensionMismatchError(
                f"eigenvectors of shape {vecs.shape} do not match "
                f"{vals.size} eigenvalues")
        err = np.max(np.abs(vecs.conj().T @ vecs - np.eye(vals.size)))
        if err > UNITARY_TOL:
            raise ValueError(f"eigenvector matrix is not unitary ({err:.3e})")
        object.__setattr__(self, "eigenvalues", _frozen(vals))
        object.__setattr__(self, "eigenvectors", _frozen(vecs))

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    @property
    def matrix(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.conj().T

    def to_eigenbasis(self, A) -> np.ndarray:
        """Matrix elements ``<psi^m|A|psi^n>``."""
        V = self.eigenvectors
        return V.conj().T @ np.asarray(A) @ V


@dataclass(frozen=True)
class StateMatrix:
    """Density matrix: Hermitian, unit trace, positive semidefinite."""
    matrix: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.matrix, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise InvalidStateError(f"density matrix must be square, got {rho.shape}")
        herm = np.max(np.abs(rho - rho.conj().T)) if rho.size else 0.0
        if herm > TRACE_TOL:
            raise InvalidStateError(f"density matrix not Hermitian ({herm:.3e})")
        tr = np.trace(rho)
        if abs(tr - 1.0) > TRACE_TOL:
            raise InvalidStateError(f"density matrix trace is {tr.real:.15g}, not 1")
        lo = np.linalg.eigvalsh(rho)[0]
        if lo < -POSITIVITY_TOL:
            raise InvalidStateError(
                f"density matrix has negative eigenvalue {lo:.3e}")
        object.__setattr__(self, "matrix", _frozen(rho))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class Protocol:
    """Unitary time-evolution operator of the driving protocol."""
    unitary: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.unitary, dtype=complex)
        if U.ndim != 2 or U.shape[0] != U.shape[1]:
            raise ValueError(f"protocol must be a square matrix, got {U.shape}")
        err = np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0])))
        if err > UNITARY_TOL:
            raise ValueError(f"protocol is not unitary (|U^dagger U - 1| = {err:.3e})")
        object.__setattr__(self, "unitary", _frozen(U))

    @property
    def dim(self) -> int:
        return self.unitary.shape[0]

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim, dtype=complex))


def _merge_sorted(w, weights, tol):
    order = np.argsort(w, kind="mergesort")
    w = w[order]
    weights = weights[order]
    if w.size == 0:
        return w, weights
    starts = np.concatenate(([0], np.flatnonzero(np.diff(w) > tol) + 1))
    return w[starts], np.add.reduceat(weights, starts)


@dataclass(frozen=True)
class WorkQuasiDistribution:
    """Finite atomic work (quasi)distribution.

    Weights may be negative but sum to one. Atoms are sorted by work value
    and no two lie within ``merge_tolerance`` of each other. Build instances
    with :meth:`from_atoms`, which sorts and merges raw atoms.
    """
    w: np.ndarray
    weights: np.ndarray
    merge_tolerance: float = DEFAULT_MERGE_TOLERANCE

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        p = np.asarray(self.weights, dtype=float)
        if w.shape != p.shape or w.ndim != 1:
            raise ValueError("work values and weights must be 1-d of equal length")
        if w.size > 1 and np.min(np.diff(w)) <= self.merge_tolerance:
            raise ValueError("atoms must be sorted and separated by more than "
                             "merge_tolerance; use WorkQuasiDistribution.from_atoms")
        total = p.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total:.15g}, not 1")
        object.__setattr__(self, "w", _frozen(w))
        object.__setattr__(self, "weights", _frozen(p))

    @classmethod
    def from_atoms(cls, w, weights, merge_tolerance=DEFAULT_MERGE_TOLERANCE,
                   prune_tolerance=DEFAULT_PRUNE_TOLERANCE):
        """Sort, merge atoms closer than ``merge_tolerance`` and drop atoms
        with ``|weight| < prune_tolerance``.

        Merged atoms sit at the smallest work value of their cluster. Pruning
        is by magnitude only, so negative weights survive.
        """
        if not merge_tolerance > 0:
            raise ValueError("merge_tolerance must be positive")
        w = np.ravel(np.asarray(w, dtype=float))
        weights = np.ravel(np.asarray(weights, dtype=float))
        w, weights = _merge_sorted(w, weights, merge_tolerance)
        keep = np.abs(weights) >= prune_tolerance
        return cls(w[keep], weights[keep], merge_tolerance)

    def __len__(self):
        return self.w.size

    @property
    def atoms(self):
        return list(zip(self.w.tolist(), self.weights.tolist()))

    def moment(self, n: int) -> float:
        return float(np.sum(self.weights * self.w ** n))

    @property
    def mean(self) -> float:
        return self.moment(1)

    @property
    def variance(self) -> float:
        return self.moment(2) - self.mean ** 2

    @property
    def min_weight(self) -> float:
        return float(self.weights.min())

    def log_exp_average(self, beta):
        """``(log|<e^{-beta W}>|, sign)`` evaluated with sign-tracked log-sum-exp."""
        val, sign = logsumexp(-beta * self.w, b=self.weights, return_sign=True)
        return float(val), float(sign)

    def exp_average(self, beta) -> float:
        val, sign = self.log_exp_average(beta)
        return sign * math.exp(val)

    def weight_at(self, w, tol=None) -> float:
        """Total weight of atoms within ``tol`` of ``w`` (0 if none)."""
        tol = self.merge_tolerance if tol is None else tol
        return float(self.weights[np.abs(self.w - w) <= tol].sum())

    def convolve(self, other: "WorkQuasiDistribution", merge_tolerance=None,
                 prune_tolerance=DEFAULT_PRUNE_TOLERANCE):
        """Distribution of the sum of two independent work variables."""
        tol = self.merge_tolerance if merge_tolerance is None else merge_tolerance
        w = (self.w[:, None] + other.w[None, :]).ravel()
        p = (self.weights[:, None] * other.weights[None, :]).ravel()
        return WorkQuasiDistribution.from_atoms(w, p, tol, prune_tolerance)


@dataclass(frozen=True)
class WorkDecomposition:
    """Incoherent/coherent split of the first two work moments."""
    w_in_indep: float
    w_in_dep: float
    w_coherent: float
    m2_in: float
    m2_coherent: float

    @property
    def w_in(self):
        return self.w_in_indep + self.w_in_dep

    @property
    def mean(self):
        return self.w_in_indep + self.w_in_dep + self.w_coherent

    @property
    def second_moment(self):
        return self.m2_in + self.m2_coherent


@dataclass(frozen=True)
class FreeEnergyReport:
    f_in: float
    f_c: float
    delta_f: float
    w_irr: float
    sigma: float


# ---------------------------------------------------------------------------
# spectral plumbing
# ---------------------------------------------------------------------------

def _degenerate_blocks(vals, tol):
    starts = [0]
    for i in range(1, vals.size):
        if vals[i] - vals[i - 1] > tol * max(1.0, abs(vals[i])):
            starts.append(i)
    starts.append(vals.size)
    return [(a, b) for a, b in zip(starts[:-1], starts[1:])]


def spectral_decompose(H, tol=HERMITIAN_TOL) -> SpectralOperator:
    """Eigendecomposition of a Hermitian matrix.

    Eigenvalues come out ascending. Each eigenvector is rephased so that its
    first non-negligible component is real and positive, and columns inside a
    degenerate eigenspace are ordered lexicographically (descending) by their
    rounded components, so identical input always yields identical columns.

    Raises
    ------
    NonHermitianError
        If ``max|H - H^dagger| > tol``.
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionMismatchError(f"operator must be square, got {H.shape}")
    violation = np.max(np.abs(H - H.conj().T)) if H.size else 0.0
    if violation > tol:
        raise NonHermitianError(violation, tol)
    vals, vecs = np.linalg.eigh(0.5 * (H + H.conj().T))

    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        lead = np.flatnonzero(np.abs(col) > 1e-6)[0]
        vecs[:, j] = col * (abs(col[lead]) / col[lead])

    for a, b in _degenerate_blocks(vals, tol):
        if b - a < 2:
            continue
        block = vecs[:, a:b]
        keys = [tuple(x for z in np.round(block[:, j], 8) for x in (-z.real, -z.imag))
                for j in range(b - a)]
        order = sorted(range(b - a), key=lambda j: keys[j])
        vecs[:, a:b] = block[:, order]
        vals[a:b] = vals[a:b][order]
    return SpectralOperator(vals, vecs)


def _as_spectral(H):
    return H if isinstance(H, SpectralOperator) else spectral_decompose(H)


def _as_state(rho):
    return rho if isinstance(rho, StateMatrix) else StateMatrix(rho)


def _as_protocol(U):
    return U if isinstance(U, Protocol) else Protocol(U)


def _system(rho0, H0, Ht, U):
    """Validate a system and return it in the energy eigenbases."""
    rho0, H0, Ht, U = _as_state(rho0), _as_spectral(H0), _as_spectral(Ht), _as_protocol(U)
    dims = {rho0.dim, H0.dim, Ht.dim, U.dim}
    if len(dims) != 1:
        raise DimensionMismatchError(
            f"dimension mismatch: rho0 {rho0.dim}, H0 {H0.dim}, "
            f"Htau {Ht.dim}, U {U.dim}")
    R = H0.to_eigenbasis(rho0.matrix)
    Ulm = Ht.eigenvectors.conj().T @ U.unitary @ H0.eigenvectors
    return R, Ulm, H0.eigenvalues, Ht.eigenvalues


def log_partition_function(H, T) -> float:
    beta = _check_temperature(T)
    return float(logsumexp(-beta * _as_spectral(H).eigenvalues))


def thermal_state(H, T) -> StateMatrix:
    """Gibbs state ``exp(-H/T) / Z``."""
    beta = _check_temperature(T)
    H = _as_spectral(H)
    x = -beta * H.eigenvalues
    p = np.exp(x - logsumexp(x))
    p /= p.sum()
    V = H.eigenvectors
    rho = (V * p) @ V.conj().T
    return StateMatrix(0.5 * (rho + rho.conj().T))


def split_state(rho, H0):
    """Split ``rho`` into incoherent and coherent parts in the eigenbasis of ``H0``.

    Returns
    -------
    rho_in : StateMatrix
        Dephased state (diagonal of ``rho`` in the eigenvector columns of
        ``H0``).
    rho_c : ndarray
        Traceless Hermitian remainder ``rho - rho_in``.
    """
    rho, H0 = _as_state(rho), _as_spectral(H0)
    if rho.dim != H0.dim:
        raise DimensionMismatchError(f"state has dim {rho.dim}, Hamiltonian {H0.dim}")
    V = H0.eigenvectors
    pops = np.real(np.diag(H0.to_eigenbasis(rho.matrix)))
    rho_in = (V * pops) @ V.conj().T
    rho_in = 0.5 * (rho_in + rho_in.conj().T)
    rho_in = rho_in / np.trace(rho_in).real
    return StateMatrix(rho_in), rho.matrix - rho_in


# ---------------------------------------------------------------------------
# work statistics
# ---------------------------------------------------------------------------

def characteristic_function(rho0, H0, Ht, U, u) -> complex:
    """Characteristic function ``Tr[e^{iuHt} U e^{-iuH0/2} rho0 e^{-iuH0/2} U^dagger]``.

    Evaluated in the eigenbases, so complex ``u`` (e.g. ``u = 1j*beta``) only
    exponentiates eigenvalues, never non-Hermitian matrices.
    """
    R, Ulm, e0, et = _system(rho0, H0, Ht, U)
    u = complex(u)
    half = np.exp(-0.5j * u * e0)
    evolved = Ulm @ (half[:, None] * R * half[None, :]) @ Ulm.conj().T
    return complex(np.sum(np.exp(1j * u * et) * np.diag(evolved)))


def work_moment(rho0, H0, Ht, U, n: int) -> float:
    """``n``-th work moment.

    Sums ``(eps_tau^l - (eps_0^m + eps_0^m')/2)^n U_lm rho_mm' conj(U_lm')``,
    expanded binomially so the cost is ``O(n d^3)`` rather than a rank-3
    tensor.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"moment order must be a positive integer, got {n!r}")
    n = int(n)
    R, Ulm, e0, et = _system(rho0, H0, Ht, U)
    C = 0.5 * (e0[:, None] + e0[None, :])
    total = 0j
    scale = 0.0
    for j in range(n + 1):
        # M[m, m'] = sum_l et_l^(n-j) U_lm conj(U_lm')
        M = Ulm.T @ ((et ** (n - j))[:, None] * Ulm.conj())
        term = comb(n, j) * (-1) ** j * np.sum(M * C ** j * R)
        total += term
        scale = max(scale, abs(term))
    return _check_real(total, f"work moment n={n}", scale)


def _raw_atoms(rho0, H0, Ht, U):
    R, Ulm, e0, et = _system(rho0, H0, Ht, U)
    weights = Ulm[:, :, None] * R[None, :, :] * Ulm.conj()[:, None, :]
    w = et[:, None, None] - 0.5 * (e0[None, :, None] + e0[None, None, :])
    return w.ravel(), weights.ravel()


def quasidistribution(rho0, H0, Ht, U,
                      merge_tolerance=DEFAULT_MERGE_TOLERANCE) -> WorkQuasiDistribution:
    """Work quasidistribution of a protocol acting on ``rho0``.

    Complex weights are merged per atom before taking real parts; the
    pairwise conjugate terms cancel exactly, so any remaining imaginary part
    is reported (warning above 1e-10, error above 1e-8).
    """
    if not merge_tolerance > 0:
        raise ValueError("merge_tolerance must be positive")
    w, weights = _raw_atoms(rho0, H0, Ht, U)
    w, weights = _merge_sorted(w, weights, merge_tolerance)
    residue = np.max(np.abs(weights.imag)) if weights.size else 0.0
    if residue > IMAG_BREAKDOWN_TOL:
        raise NumericalBreakdownError(
            f"quasidistribution weights keep imaginary parts up to {residue:.3e}")
    if residue > IMAG_REPORT_TOL:
        warnings.warn(f"quasidistribution imaginary residue {residue:.3e} "
                      "exceeds cancellation tolerance", RuntimeWarning, stacklevel=2)
    return WorkQuasiDistribution.from_atoms(w, weights.real, merge_tolerance)


def work_fluctuation(rho0, H0, Ht, U) -> float:
    """``<W^2> - <W>^2``; warns if it is negative beyond 1e-9."""
    var = work_moment(rho0, H0, Ht, U, 2) - work_moment(rho0, H0, Ht, U, 1) ** 2
    if var < -1e-9:
        warnings.warn(f"negative work fluctuation {var:.3e}: the "
                      "quasidistribution is far from a probability distribution",
                      RuntimeWarning, stacklevel=2)
    return var


def log_fluctuation_relation(rho0, H0, Ht, U, T):
    """``(log|<e^{-beta W}>|, sign)`` from sign-tracked log-sum-exp over raw atoms."""
    beta = _check_temperature(T)
    w, weights = _raw_atoms(rho0, H0, Ht, U)
    # conjugate pairs share a work value, so the real parts carry the sum
    val, sign = logsumexp(-beta * w, b=weights.real, return_sign=True)
    return float(val), float(sign)


def fluctuation_relation(rho0, H0, Ht, U, T) -> float:
    """``<e^{-beta W}>``, i.e. the characteristic function at ``u = i beta``.

    Switches to sign-tracked log-sum-exp when some ``|beta W|`` exceeds 700;
    the result may then legitimately overflow to ``inf``.
    """
    beta = _check_temperature(T)
    R, Ulm, e0, et = _system(rho0, H0, Ht, U)
    span = beta * max(np.max(np.abs(et)) + np.max(np.abs(e0)), 0.0)
    if span < _EXP_SAFE:
        chi = characteristic_function(rho0, H0, Ht, U, 1j * beta)
        return _check_real(chi, "characteristic function at u = i*beta", abs(chi))
    val, sign = log_fluctuation_relation(rho0, H0, Ht, U, T)
    with np.errstate(over="ignore"):
        return sign * float(np.exp(val))


def atomwise_deviation(a, b, tol=None) -> float:
    """Largest difference in total weight between two distributions, probed at
    every atom position of either one."""
    tol = max(a.merge_tolerance, b.merge_tolerance) if tol is None else tol
    points = np.concatenate([a.w, b.w])
    return float(max((abs(a.weight_at(x, tol) - b.weight_at(x, tol)) for x in points),
                     default=0.0))


def _tpm_parts(R, Ulm, e0, et):
    P0 = np.clip(np.real(np.diag(R)), 0.0, None)
    cond = np.abs(Ulm) ** 2  # cond[l, m] = P_tau^{l|m}
    return P0, cond


def _coherent_weights(R, Ulm):
    """Re[U_lm rho_mn conj(U_ln)] summed over m != n, as a (l, m, n) tensor."""
    Rc = R - np.diag(np.diag(R))
    return np.real(Ulm[:, :, None] * Rc[None, :, :] * Ulm.conj()[:, None, :])


def work_decomposition(rho0, H0, Ht, U, T) -> WorkDecomposition:
    """Incoherent/coherent decomposition of ``<W>`` and ``<W^2>`` (summation forms).

    ``w_in_indep = -sum P_m e0_m - T sum P_m ln P_m - T ln Z_tau``,
    ``w_in_dep = sum P_m P^{l|m} et_l + T sum P_m ln P_m + T ln Z_tau``,
    ``w_coherent`` and ``m2_coherent`` sum the coherence-induced weights.
    See :func:`work_decomposition_entropic` for the relative-entropy route.
    """
    _check_temperature(T)
    R, Ulm, e0, et = _system(rho0, H0, Ht, U)
    P0, cond = _tpm_parts(R, Ulm, e0, et)
    lnZt = log_partition_function(Ht, T)
    nz = P0 > EIGEN_FLOOR
    plogp = float(np.sum(P0[nz] * np.log(P0[nz])))

    w_in_indep = -float(P0 @ e0) - T * plogp - T * lnZt
    w_in_dep = float(np.sum(P0[None, :] * cond * et[:, None])) + T * plogp + T * lnZt

    G = _coherent_weights(R, Ulm)
    w_coherent = float(np.sum(et[:, None, None] * G))

    dw = et[:, None] - e0[None, :]
    m2_in = float(np.sum(P0[None, :] * cond * dw ** 2))
    pair = e0[None, :, None] + e0[None, None, :]
    m2_coherent = float(np.sum((et[:, None, None] ** 2 - et[:, None, None] * pair) * G))
    return WorkDecomposition(w_in_indep, w_in_dep, w_coherent, m2_in, m2_coherent)


def work_decomposition_entropic(rho0, H0, Ht, U, T) -> WorkDecomposition:
    """Same first-moment split computed from relative entropies.

    The second-moment entries are taken from :func:`work_decomposition`,
    which has no relative-entropy counterpart.
    """
    _check_temperature(T)
    rho0, H0, Ht, U = _as_state(rho0), _as_spectral(H0), _as_spectral(Ht), _as_protocol(U)
    rho_in, _ = split_state(rho0, H0)
    G0, Gt = thermal_state(H0, T), thermal_state(Ht, T)
    lnZ0, lnZt = log_partition_function(H0, T), log_partition_function(Ht, T)
    Um = U.unitary
    rho_tau = StateMatrix(_hermitize(Um @ rho0.matrix @ Um.conj().T))
    rho_in_tau = StateMatrix(_hermitize(Um @ rho_in.matrix @ Um.conj().T))

    w_in_indep = -T * (lnZt - lnZ0) - T * relative_entropy(rho_in, G0)
    w_in_dep = T * relative_entropy(rho_in_tau, Gt)
    w_coherent = T * (relative_entropy(rho_tau, Gt) - relative_entropy(rho_in_tau, Gt)
                      - relative_entropy(rho_tau, rho_in_tau))
    plain = work_decomposition(rho0, H0, Ht, U, T)
    return WorkDecomposition(w_in_indep, w_in_dep, w_coherent,
                             plain.m2_in, plain.m2_coherent)


def _hermitize(A):
    A = 0.5 * (A + A.conj().T)
    return A / np.trace(A).real


# ---------------------------------------------------------------------------
# entropies and free energy
# ---------------------------------------------------------------------------

def relative_entropy(rho1, rho2) -> float:
    """Quantum relative entropy ``Tr[rho1 ln rho1 - rho1 ln rho2]`` (natural log).

    Eigenvalues below 1e-14 count as zero with ``0 ln 0 = 0``. Returns
    ``inf`` when ``rho1`` puts more than 1e-12 weight outside the support of
    ``rho2``.
    """
    rho1, rho2 = _as_state(rho1), _as_state(rho2)
    if rho1.dim != rho2.dim:
        raise DimensionMismatchError(f"states of dim {rho1.dim} and {rho2.dim}")
    p, A = np.linalg.eigh(rho1.matrix)
    q, B = np.linalg.eigh(rho2.matrix)
    p = np.where(p < EIGEN_FLOOR, 0.0, p)
    q = np.where(q < EIGEN_FLOOR, 0.0, q)
    overlap = np.abs(A.conj().T @ B) ** 2  # overlap[i, j] = |<a_i|b_j>|^2
    flow = p @ overlap  # weight of rho1 on each eigenvector of rho2
    if np.sum(flow[q == 0.0]) > SUPPORT_TOL:
        return math.inf
    nzp, nzq = p > 0, q > 0
    s = float(np.sum(p[nzp] * np.log(p[nzp])) - np.sum(flow[nzq] * np.log(q[nzq])))
    return s


def free_energy(rho, H, T):
    """Incoherent and coherent parts of the nonequilibrium free energy.

    Returns
    -------
    f_in : float
        ``-T ln Z + T S(rho_in || rho_G)``, evaluated as
        ``Tr[H rho_in] + T Tr[rho_in ln rho_in]``.
    f_c : float
        ``T S(rho || rho_in)``, the share carried by coherence.
    """
    _check_temperature(T)
    rho, H = _as_state(rho), _as_spectral(H)
    rho_in, _ = split_state(rho, H)
    # ln rho_G = -beta H - ln Z is exact, so Tr[H rho_in] - T S_vN(rho_in)
    # avoids diagonalising a Gibbs state with eigenvalues near underflow
    p = np.linalg.eigvalsh(rho_in.matrix)
    p = p[p >= EIGEN_FLOOR]
    f_in = float(np.trace(H.matrix @ rho_in.matrix).real) + T * float(np.sum(p * np.log(p)))
    f_c = T * relative_entropy(rho, rho_in)
    return f_in, f_c


def thermodynamic_report(rho0, H0, Ht, U, T) -> FreeEnergyReport:
    """Free-energy change, irreversible work and entropy production.

    ``delta_f = F_tau - F_0`` with ``F_tau = -T ln Z_tau`` (the system ends in
    the Gibbs state of ``Ht``) and ``F_0 = f_in + f_c`` of the initial state.
    """
    beta = _check_temperature(T)
    rho0, H0, Ht, U = _as_state(rho0), _as_spectral(H0), _as_spectral(Ht), _as_protocol(U)
    f_in, f_c = free_energy(rho0, H0, T)
    delta_f = -T * log_partition_function(Ht, T) - (f_in + f_c)
    w_irr = work_moment(rho0, H0, Ht, U, 1) - delta_f
    return FreeEnergyReport(f_in, f_c, delta_f, w_irr, beta * w_irr)


# ---------------------------------------------------------------------------
# JSON debug format: row-major [re, im] pairs
# ---------------------------------------------------------------------------

def matrix_to_json(M) -> list:
    M = np.asarray(M, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in M]


def matrix_from_json(data: Sequence) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError("expected rows of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]
