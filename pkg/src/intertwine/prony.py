"""Hankel-Prony reconstruction of exponential sums from samples or moments.

Pipeline: ``build_hankel -> prony_polynomial -> solve_nodes ->
nodes_to_rates -> solve_amplitudes``.  All linear algebra runs in mpmath
at the working precision; the Hankel and Vandermonde solves go through
an SVD so rank loss is detected rather than divided through.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import mpmath

from .core import (
    NEAR_UNIT,
    TOL_IMAG,
    TOL_RANK,
    VANDERMONDE_WARN,
    ExponentialModel,
    IllConditionedVandermonde,
    InsufficientSamples,
    IntertwineError,
    NodeOutOfRange,
    RankDeficientHankel,
    SampleWindow,
    Term,
    ValidationError,
    mpc,
    mpf,
    precise,
)

POLISH_STEPS = 3


@dataclass(frozen=True)
class PronyParameters:
    nodes: tuple
    amplitudes: tuple
    step: mpmath.mpf

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(mpc(z) for z in self.nodes))
        object.__setattr__(self, "amplitudes", tuple(mpc(a) for a in self.amplitudes))
        object.__setattr__(self, "step", mpf(self.step))
        if len(self.nodes) != len(self.amplitudes):
            raise ValidationError("nodes and amplitudes differ in length")

    @classmethod
    @precise
    def from_model(cls, model: ExponentialModel, h) -> "PronyParameters":
        h = mpf(h)
        return cls(tuple(mpmath.exp(-t.rate * h) for t in model.terms), tuple(model.amplitudes), h)

    def __len__(self):
        return len(self.nodes)

    @precise
    def samples(self, count: int | None = None) -> list:
        count = 2 * len(self) if count is None else count
        return [mpmath.fsum(a * z**n for z, a in zip(self.nodes, self.amplitudes)) for n in range(count)]


@dataclass(frozen=True)
class PronyPolynomial:
    """Monic ``p(z) = z**L + c[L-1] z**(L-1) + ... + c[0]``."""

    coefficients: tuple
    residual: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(mpc(c) for c in self.coefficients))

    @property
    def degree(self) -> int:
        return len(self.coefficients)

    @precise
    def __call__(self, z):
        acc = mpmath.mpc(1)
        for c in reversed(self.coefficients):
            acc = acc * z + c
        return acc

    @precise
    def derivative(self, z):
        L = self.degree
        acc = mpmath.mpc(L)
        for k in range(L - 1, 0, -1):
            acc = acc * z + k * self.coefficients[k]
        return acc

    @classmethod
    @precise
    def from_roots(cls, roots) -> "PronyPolynomial":
        coeffs = [mpmath.mpc(1)]  # highest degree first
        for r in roots:
            r = mpc(r)
            nxt = coeffs + [mpmath.mpc(0)]
            for i in range(1, len(nxt)):
                nxt[i] -= r * coeffs[i - 1]
            coeffs = nxt
        return cls(tuple(reversed(coeffs[1:])))


def _is_real(xs) -> bool:
    return all(mpmath.im(x) == 0 for x in xs)


def _matrix(rows) -> mpmath.matrix:
    rows = [list(r) for r in rows]
    if _is_real(x for r in rows for x in r):
        return mpmath.matrix([[mpmath.re(x) for x in r] for r in rows])
    return mpmath.matrix([[mpc(x) for x in r] for r in rows])


def _svd(A: mpmath.matrix):
    real = all(isinstance(A[i, j], mpmath.mpf) for i in range(A.rows) for j in range(A.cols))
    return (mpmath.svd_r if real else mpmath.svd_c)(A, full_matrices=False, compute_uv=True)


@precise
def singular_values(A) -> list:
    A = A if isinstance(A, mpmath.matrix) else _matrix(A)
    real = all(isinstance(A[i, j], mpmath.mpf) for i in range(A.rows) for j in range(A.cols))
    s = (mpmath.svd_r if real else mpmath.svd_c)(A, compute_uv=False)
    return sorted((s[i] for i in range(len(s))), reverse=True)


@precise
def _lstsq(A: mpmath.matrix, b: list, tol_rank: float, error=RankDeficientHankel, what="matrix"):
    """SVD least squares; raises ``error`` when ``s_min <= tol_rank * s_max``."""
    U, S, V = _svd(A)
    s = [S[i] for i in range(len(S))]
    smax, smin = max(s), min(s)
    if smax == 0 or smin <= tol_rank * smax:
        ratio = smin / smax if smax else 0
        raise error(f"{what} is numerically rank deficient (s_min/s_max = {mpmath.nstr(ratio, 3)})")
    x = []
    n = A.cols
    # x = V^H diag(1/s) U^H b
    ub = [mpmath.fsum(mpmath.conj(U[r, i]) * b[r] for r in range(A.rows)) for i in range(len(s))]
    for j in range(n):
        x.append(mpmath.fsum(mpmath.conj(V[i, j]) * ub[i] / s[i] for i in range(len(s))))
    return x, smax / smin


@precise
def build_hankel(values, L: int) -> mpmath.matrix:
    """``H[r, s] = values[r + s]`` for ``r, s < L``."""
    values = list(values)
    if L < 1:
        raise ValidationError("L must be >= 1")
    if len(values) < 2 * L:
        raise InsufficientSamples(f"need {2 * L} values for L = {L}, got {len(values)}")
    return _matrix([[values[r + s] for s in range(L)] for r in range(L)])


@precise
def prony_polynomial(values, L: int, tol_rank: float = TOL_RANK) -> PronyPolynomial:
    """Solve ``H c = -(values[L], ..., values[2L-1])`` for the monic Prony polynomial."""
    values = [mpc(v) for v in values]
    H = build_hankel(values, L)
    rhs = [-values[L + n] for n in range(L)]
    c, _ = _lstsq(H, rhs, tol_rank, RankDeficientHankel, f"{L}x{L} Hankel matrix")
    res = max(abs(mpmath.fsum(H[n, k] * c[k] for k in range(L)) - rhs[n]) for n in range(L))
    return PronyPolynomial(tuple(c), float(res))


@precise
def companion_matrix(poly: PronyPolynomial) -> mpmath.matrix:
    L = poly.degree
    C = mpmath.zeros(L, L)
    for i in range(1, L):
        C[i, i - 1] = 1
    for i in range(L):
        C[i, L - 1] = -poly.coefficients[i]
    if _is_real(poly.coefficients):
        C = _matrix([[C[i, j] for j in range(L)] for i in range(L)])
    return C


@precise
def solve_nodes(poly: PronyPolynomial, polish_steps: int = POLISH_STEPS) -> list:
    """Roots of ``poly``: companion eigenvalues, then Newton polishing."""
    L = poly.degree
    if L == 0:
        return []
    if L == 1:
        roots = [-poly.coefficients[0]]
    else:
        roots = [mpc(r) for r in mpmath.eig(companion_matrix(poly), left=False, right=False)]
    polished = []
    for z in roots:
        for _ in range(polish_steps):
            d = poly.derivative(z)
            if d == 0:
                break
            z = z - poly(z) / d
        polished.append(mpc(z))
    return polished


@precise
def nodes_to_rates(nodes, h, tol_imag: float = TOL_IMAG, near_unit: float = NEAR_UNIT) -> list:
    """``mu = -log(z) / h`` for nodes that are real and inside ``(0, 1)``."""
    h = mpf(h)
    nodes = [mpc(z) for z in nodes]
    scale = max((abs(z) for z in nodes), default=mpmath.mpf(1))
    rates = []
    for z in nodes:
        if abs(z.imag) > tol_imag * scale:
            raise NodeOutOfRange(f"node {mpmath.nstr(z, 8)} is not real (model violation or excessive noise)")
        x = z.real
        if x <= 0 or x >= 1 - near_unit:
            raise NodeOutOfRange(f"node {mpmath.nstr(x, 12)} lies outside (0, 1)")
        rates.append(-mpmath.log(x) / h)
    return rates


@precise
def solve_amplitudes(nodes, values, tol_rank: float = TOL_RANK, warn_condition: float = VANDERMONDE_WARN) -> list:
    """Least-squares amplitudes of ``sum_l a_l z_l**n = values[n]`` over every sample."""
    nodes = [mpc(z) for z in nodes]
    values = [mpc(v) for v in values]
    if len(values) < len(nodes):
        raise InsufficientSamples(f"{len(nodes)} nodes need at least as many values")
    if not nodes:
        return []
    nodes_r = [z.real if z.imag == 0 else z for z in nodes]
    V = _matrix([[z**n for z in nodes_r] for n in range(len(values))])
    amps, cond = _lstsq(V, values, tol_rank, RankDeficientHankel, "Vandermonde matrix")
    if cond > warn_condition:
        warnings.warn(
            f"Vandermonde condition number {mpmath.nstr(cond, 3)} exceeds {warn_condition:g}",
            IllConditionedVandermonde,
            stacklevel=2,
        )
    return [mpc(a) for a in amps]


def _staged(stage, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except IntertwineError as err:
        if err.stage is None:
            err.stage = stage
        raise


@precise
def reconstruct(window: SampleWindow, L: int, tol_rank: float = TOL_RANK, tol_imag: float = TOL_IMAG) -> ExponentialModel:
    """Untagged model with ``L`` terms, sorted by ascending rate."""
    values = list(window.values)
    if len(values) < 2 * L:
        err = InsufficientSamples(f"window has {len(values)} values, need {2 * L}")
        err.stage = "build_hankel"
        raise err
    poly = _staged("prony_polynomial", prony_polynomial, values[: 2 * L], L, tol_rank)
    nodes = _staged("solve_nodes", solve_nodes, poly)
    rates = _staged("nodes_to_rates", nodes_to_rates, nodes, window.step, tol_imag)
    real_nodes = [mpmath.exp(-mu * window.step) for mu in rates]
    amps = _staged("solve_amplitudes", solve_amplitudes, real_nodes, values, tol_rank)
    return ExponentialModel(tuple(Term(mu, a) for mu, a in zip(rates, amps))).sorted()


@precise
def moments(model: ExponentialModel, count: int) -> list:
    """``m_n = (-1)**n M^(n)(0) = sum_l a_l mu_l**n``."""
    return [mpmath.fsum(t.amplitude * t.rate**n for t in model.terms) for n in range(count)]


@precise
def reconstruct_from_moments(values, L: int, tol_rank: float = TOL_RANK, tol_imag: float = TOL_IMAG) -> ExponentialModel:
    """Same Hankel pipeline with the polynomial roots read directly as rates."""
    values = [mpc(v) for v in values]
    poly = _staged("prony_polynomial", prony_polynomial, values[: 2 * L], L, tol_rank)
    roots = _staged("solve_nodes", solve_nodes, poly)
    scale = max(abs(r) for r in roots)
    rates = []
    for r in roots:
        if abs(r.imag) > tol_imag * scale or r.real <= 0:
            err = NodeOutOfRange(f"recovered rate {mpmath.nstr(r, 8)} is not real and positive")
            err.stage = "nodes_to_rates"
            raise err
        rates.append(r.real)
    amps = _staged("solve_amplitudes", solve_amplitudes, rates, values, tol_rank)
    return ExponentialModel(tuple(Term(mu, a) for mu, a in zip(rates, amps))).sorted()


@precise
def estimate_order(window: SampleWindow, L_max: int, tol_rank: float = TOL_RANK) -> int:
    """Numerical rank of the ``L_max x L_max`` Hankel matrix of the window."""
    H = build_hankel(window.values, L_max)
    s = singular_values(H)
    if not s or s[0] == 0:
        return 0
    return sum(1 for x in s if x > tol_rank * s[0])
