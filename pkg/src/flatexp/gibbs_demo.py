"""Small local Hamiltonians, their Gibbs states, and the flat polynomial on their spectra."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Sequence

import mpmath
import numpy as np
from flint import ctx

from .poly_core import BigPoly, arb_bounds, mpf_to_arb

MAX_QUBITS = 10
HERMITIAN_TOL = 2.0 ** -40
EIG_PRECISION = 106          # double-double
MPMATH_EIG_MAX_DIM = 64      # above this numpy's LAPACK eigensolver is used

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class SpectrumError(ValueError):
    pass


def _mpf(x) -> mpmath.mpf:
    if isinstance(x, Fraction):
        return mpmath.mpf(x.numerator) / x.denominator
    return mpmath.mpf(x)


@dataclass(frozen=True)
class LocalTerm:
    """Hermitian operator of norm at most 1 acting on the qubits in ``support`` (in increasing order)."""

    support: tuple
    matrix: np.ndarray = field(compare=False)
    max_locality: int = 4

    def __post_init__(self):
        support = tuple(sorted(set(int(q) for q in self.support)))
        object.__setattr__(self, "support", support)
        m = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", m)
        dim = 2 ** len(support)
        if m.shape != (dim, dim):
            raise ValueError(f"matrix shape {m.shape} does not match support of size {len(support)}")
        if len(support) > self.max_locality:
            raise ValueError(f"support of size {len(support)} exceeds locality {self.max_locality}")
        scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
        if np.max(np.abs(m - m.conj().T), initial=0.0) > HERMITIAN_TOL * scale:
            raise ValueError("local term is not Hermitian")
        if np.linalg.norm(m, 2) > 1 + HERMITIAN_TOL:
            raise ValueError("local term has operator norm above 1")


@dataclass
class ToyHamiltonian:
    n_qubits: int
    terms: list

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ValueError(f"n_qubits must lie in [1, {MAX_QUBITS}]")
        for term, lam in self.terms:
            if not -1 <= lam <= 1:
                raise ValueError("coefficients must lie in [-1, 1]")
            if term.support and max(term.support) >= self.n_qubits:
                raise ValueError("support outside the register")

    @property
    def dual_graph_degree(self) -> int:
        return dual_graph([t for t, _ in self.terms])[1]

    def matrix(self) -> np.ndarray:
        return assemble_hamiltonian(self.terms, self.n_qubits)


def embed(term: LocalTerm, n: int) -> np.ndarray:
    """E tensored with the identity on the qubits outside its support; qubit 0 is the leading factor."""
    k = len(term.support)
    rest = [q for q in range(n) if q not in term.support]
    full = np.kron(term.matrix, np.eye(2 ** (n - k), dtype=complex))
    # axes of full are (support..., rest...) for rows then columns; move them to qubit order
    order = list(term.support) + rest
    perm = np.argsort(order)
    t = full.reshape([2] * (2 * n))
    t = t.transpose(list(perm) + [n + p for p in perm])
    return t.reshape(2 ** n, 2 ** n)


def assemble_hamiltonian(terms: Sequence, n: int) -> np.ndarray:
    if n > MAX_QUBITS:
        raise ValueError(f"n={n} exceeds the dense limit of {MAX_QUBITS} qubits")
    H = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for term, lam in terms:
        if term.support and max(term.support) >= n:
            raise ValueError("support outside the register")
        H += lam * embed(term, n)
    return H


def dual_graph(terms: Sequence[LocalTerm]) -> tuple[list, int]:
    """Adjacency sets over term indices (edge iff supports overlap) and the maximum degree."""
    m = len(terms)
    adj = [set() for _ in range(m)]
    for a in range(m):
        for b in range(a + 1, m):
            if set(terms[a].support) & set(terms[b].support):
                adj[a].add(b)
                adj[b].add(a)
    return adj, max((len(s) for s in adj), default=0)


def eigh(H: np.ndarray, prec: int = EIG_PRECISION) -> tuple[list, np.ndarray]:
    """Eigenvalues (as mpf) and eigenvectors of a Hermitian matrix.

    Small matrices use mpmath's Hermitian solver at ``prec`` bits; larger ones
    fall back to LAPACK in double precision.
    """
    dim = H.shape[0]
    if dim <= MPMATH_EIG_MAX_DIM:
        with mpmath.workprec(prec):
            A = mpmath.matrix([[mpmath.mpc(complex(v)) for v in row] for row in H])
            A = (A + A.transpose_conj()) / 2
            w, V = mpmath.eighe(A)
            vals = [mpmath.mpf(mpmath.re(x)) for x in w]
            vecs = np.array([[complex(V[i, j]) for j in range(dim)] for i in range(dim)])
        return vals, vecs
    w, V = np.linalg.eigh((H + H.conj().T) / 2)
    return [mpmath.mpf(float(x)) for x in w], V


def gibbs_state(H: np.ndarray, beta) -> np.ndarray:
    """exp(-beta H) / tr exp(-beta H) from an eigendecomposition (shifted by the ground energy)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    vals, V = eigh(H)
    with mpmath.workprec(EIG_PRECISION):
        b = _mpf(beta)
        e0 = min(vals)
        weights = [mpmath.exp(-b * (v - e0)) for v in vals]
        z = mpmath.fsum(weights)
        p = np.array([float(w / z) for w in weights])
    rho = (V * p) @ V.conj().T
    return (rho + rho.conj().T) / 2


def rescale_factor(H: np.ndarray, beta, kappa) -> float:
    """Factor f with the spectrum of beta f H inside [-kappa, kappa] (and touching it up to 2^-40)."""
    vals, _ = eigh(H)
    norm = max(abs(v) for v in vals)
    if norm == 0:
        return 1.0
    return float(_mpf(kappa) / (_mpf(beta) * norm) * (1 - mpmath.mpf(2) ** -40))


@dataclass
class SpectralReport:
    max_error: float
    errors: list
    eigenvalues: list
    passed: bool | None = None

    def to_json(self) -> dict:
        return {"max_error": self.max_error, "passed": self.passed,
                "eigenvalues": [mpmath.nstr(v, 20) for v in self.eigenvalues],
                "errors": self.errors}


def spectral_approx_error(P: BigPoly, H: np.ndarray, beta, kappa, eps=None,
                          prec: int = 512) -> SpectralReport:
    """Largest |P(x) - e^-x| over the eigenvalues x of beta H, each bounded with ball arithmetic."""
    vals, _ = eigh(H)
    kappa = _mpf(kappa)
    with mpmath.workprec(EIG_PRECISION):
        xs = [_mpf(beta) * v for v in vals]
    for x in xs:
        if abs(x) > kappa:
            raise SpectrumError(f"eigenvalue {mpmath.nstr(x, 15)} of beta H lies outside [-kappa, kappa]")
    errors = []
    with ctx.workprec(prec):
        for x in xs:
            xa = mpf_to_arb(x)
            err = abs(P.enclose(xa, prec) - (-xa).exp())
            errors.append(float(arb_bounds(err)[1]))
    worst = max(errors, default=0.0)
    passed = None if eps is None else worst <= float(eps)
    return SpectralReport(worst, errors, xs, passed)


def random_local_matrix(rng: np.random.Generator, k: int) -> np.ndarray:
    """Random Hermitian combination of k-qubit Pauli strings scaled to operator norm 1."""
    M = np.zeros((2 ** k, 2 ** k), dtype=complex)
    for labels in product("IXYZ", repeat=k):
        P = PAULI[labels[0]]
        for lab in labels[1:]:
            P = np.kron(P, PAULI[lab])
        M += rng.normal() * P
    return M / np.linalg.norm(M, 2)


def random_ring_hamiltonian(n: int, seed: int) -> ToyHamiltonian:
    """2-local terms on the edges of a ring of n qubits, coefficients uniform in [-1, 1]."""
    if n < 2:
        raise ValueError("a ring needs at least 2 qubits")
    rng = np.random.default_rng(seed)
    edges = [(i, (i + 1) % n) for i in range(n)] if n > 2 else [(0, 1)]
    terms = []
    for a, b in edges:
        terms.append((LocalTerm((a, b), random_local_matrix(rng, 2)), float(rng.uniform(-1, 1))))
    return ToyHamiltonian(n, terms)


def run_demo(P: BigPoly, kappa, eps, n: int, seed: int, beta) -> dict:
    """Build a random ring instance, rescale it into the window, and measure the spectral error."""
    ham = random_ring_hamiltonian(n, seed)
    H = ham.matrix()
    f = rescale_factor(H, beta, kappa)
    Hs = f * H
    rep = spectral_approx_error(P, Hs, beta, kappa, eps)
    rho = gibbs_state(Hs, beta)
    tr = np.trace(rho)
    return {
        "n": n, "seed": seed, "beta": str(beta), "eps": str(eps), "kappa": mpmath.nstr(mpmath.mpf(kappa), 30),
        "rescale_factor": f, "dual_graph_degree": ham.dual_graph_degree,
        "spectrum": [mpmath.nstr(x, 20) for x in rep.eigenvalues],
        "errors": rep.errors, "max_error": rep.max_error,
        "trace_error": float(abs(tr - 1)),
        "passed": bool(rep.passed and abs(tr - 1) <= 2.0 ** -40),
    }
