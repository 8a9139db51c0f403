"""Value types shared by every module, working precision, tolerances and errors.

Scalars that feed the inverse problem (eigenvalues, rates, amplitudes,
samples) are stored as mpmath numbers so that "exact" samples really are
exact to far below the conditioning of the Prony map.  Everything else
(unitary blocks, scaling matrices) is plain numpy float64.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import mpmath
from mpmath.libmp import repr_dps
import numpy as np

# Working precision (decimal digits) for all mpmath computations.
WORKING_DPS = 50

TOL_EIG = 1e-10
TOL_COCYCLE = 1e-9
TOL_AMP = 1e-13
# Relative singular-value threshold; must sit between the data precision
# (10**-WORKING_DPS) and the worst conditioning we want to accept.
TOL_RANK = 1e-25
TOL_IMAG = 1e-8
TOL_OBS = 1e-12
NEAR_UNIT = 1e-12
VANDERMONDE_WARN = 1e12


def set_working_precision(dps: int) -> None:
    global WORKING_DPS
    if dps < 16:
        raise ValueError("working precision below double precision is not supported")
    WORKING_DPS = int(dps)


def precise(func):
    """Run ``func`` with at least ``WORKING_DPS`` decimal digits."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        with mpmath.workdps(max(mpmath.mp.dps, WORKING_DPS)):
            return func(*args, **kwargs)

    return wrapper


@precise
def mpf(x) -> mpmath.mpf:
    if isinstance(x, mpmath.mpc):
        if x.imag != 0:
            raise ValidationError(f"expected a real number, got {x}")
        return x.real
    if isinstance(x, complex):
        if x.imag != 0:
            raise ValidationError(f"expected a real number, got {x}")
        x = x.real
    if isinstance(x, (np.floating, np.integer)):
        x = x.item()
    return mpmath.mpf(x)


@precise
def mpc(x) -> mpmath.mpc:
    if isinstance(x, (np.complexfloating, np.floating, np.integer)):
        x = x.item()
    if isinstance(x, (tuple, list)) and len(x) == 2:
        return mpmath.mpc(mpmath.mpf(x[0]), mpmath.mpf(x[1]))
    return mpmath.mpc(x)


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class IntertwineError(Exception):
    """Base class.  ``stage`` is filled in by pipelines that re-raise."""

    stage: str | None = None

    def __str__(self):
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg


class ValidationError(IntertwineError, ValueError):
    """Input violates a documented precondition or type invariant."""


class InsufficientSamples(ValidationError):
    pass


class NegativeTime(ValidationError):
    pass


class InvalidCycle(ValidationError):
    pass


class UnknownEigenvalue(ValidationError):
    pass


class MathematicalFailure(IntertwineError):
    """A hypothesis of the underlying theory is violated by the data."""


class MultiplicativityViolation(MathematicalFailure):
    def __init__(self, message, triple=None, residual=None):
        super().__init__(message)
        self.triple = triple
        self.residual = residual


class SpectralMismatch(MathematicalFailure):
    pass


class RankDeficientHankel(MathematicalFailure):
    pass


class NodeOutOfRange(MathematicalFailure):
    pass


class AmbiguousTag(MathematicalFailure):
    pass


class UnmatchedRate(MathematicalFailure):
    pass


class ObservabilityFailure(MathematicalFailure):
    pass


class NonSimpleEigenvalue(MathematicalFailure):
    pass


class DegenerateParameters(MathematicalFailure):
    pass


class SingularJacobian(MathematicalFailure):
    pass


class IllConditionedVandermonde(UserWarning):
    pass


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SectorSpec:
    """Finite active eigendata of one sector generator.

    Construction only coerces; use :func:`validate_sector` to check the
    invariants (ordering, positivity, multiplicities, gauge).
    """

    id: int
    eigenvalues: tuple
    multiplicities: tuple = None
    gauge: mpmath.mpf | None = None

    def __post_init__(self):
        eig = tuple(mpf(a) for a in self.eigenvalues)
        mult = self.multiplicities
        mult = (1,) * len(eig) if mult is None else tuple(int(m) for m in mult)
        object.__setattr__(self, "eigenvalues", eig)
        object.__setattr__(self, "multiplicities", mult)
        if self.gauge is not None:
            object.__setattr__(self, "gauge", mpf(self.gauge))

    def dimension(self) -> int:
        return sum(self.multiplicities)

    def sorted(self) -> "SectorSpec":
        """Stable sort by eigenvalue, keeping multiplicities aligned."""
        order = sorted(range(len(self.eigenvalues)), key=lambda n: self.eigenvalues[n])
        return SectorSpec(
            self.id,
            tuple(self.eigenvalues[n] for n in order),
            tuple(self.multiplicities[n] for n in order),
            self.gauge,
        )

    def index_of(self, alpha, tol_eig: float = TOL_EIG) -> int:
        for n, a in enumerate(self.eigenvalues):
            if abs(a - alpha) <= tol_eig:
                return n
        raise UnknownEigenvalue(f"{alpha} is not an active eigenvalue of sector {self.id}")

    def with_gauge(self, gauge) -> "SectorSpec":
        return SectorSpec(self.id, self.eigenvalues, self.multiplicities, gauge)


def validate_sector(spec: SectorSpec) -> list[str]:
    """Every violated invariant of ``spec``; empty iff valid."""
    problems = []
    eig = spec.eigenvalues
    if not eig:
        problems.append("at least one strictly positive eigenvalue is required")
    if any(a <= 0 for a in eig):
        problems.append("eigenvalues must be strictly positive")
    if any(b <= a for a, b in zip(eig, eig[1:])):
        problems.append("eigenvalues must be strictly increasing")
    if len(spec.multiplicities) != len(eig):
        problems.append(
            f"{len(spec.multiplicities)} multiplicities for {len(eig)} eigenvalues"
        )
    if any(m < 1 for m in spec.multiplicities):
        problems.append("multiplicities must be >= 1")
    if spec.gauge is not None and spec.gauge <= 0:
        problems.append("gauge must be > 0")
    return problems


def require_valid(spec: SectorSpec) -> SectorSpec:
    problems = validate_sector(spec)
    if problems:
        raise ValidationError(f"sector {spec.id}: " + "; ".join(problems))
    return spec


Mode = tuple  # (eigenvalue index n, basis index k within E_n)


def _mode_map(data: Mapping) -> dict:
    out = {}
    for key, value in dict(data).items():
        if isinstance(key, int):
            key = (key, 0)
        n, k = key
        out[(int(n), int(k))] = mpc(value)
    return out


@dataclass(frozen=True)
class SectorState:
    """Finite eigen-expansion of one sector's initial state, with its weight.

    ``coefficients`` maps ``(n, k)`` (eigenvalue index, basis index) to a
    complex coefficient.  A bare integer key ``n`` means ``(n, 0)``.
    """

    sector: int
    coefficients: dict
    weight: mpmath.mpf = 1

    def __post_init__(self):
        object.__setattr__(self, "coefficients", _mode_map(self.coefficients))
        object.__setattr__(self, "weight", mpf(self.weight))
        if self.weight <= 0:
            raise ValidationError(f"state weight must be > 0, got {self.weight}")


@dataclass(frozen=True)
class ObservationFunctional:
    """Action of the reference observation on reference eigenbasis vectors."""

    atoms: dict

    def __post_init__(self):
        object.__setattr__(self, "atoms", _mode_map(self.atoms))

    def __call__(self, n: int, vector) -> mpmath.mpc:
        """Apply to ``sum_k vector[k] e_{n,k}``."""
        return mpmath.fsum(
            self.atoms.get((n, k), 0) * v for k, v in enumerate(vector)
        )


@dataclass(frozen=True)
class Block:
    """Unitary piece of a transfer map between two eigenspaces."""

    source: int
    target: int
    matrix: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=complex))
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __eq__(self, other):
        return (
            isinstance(other, Block)
            and (self.source, self.target) == (other.source, other.target)
            and np.array_equal(self.matrix, other.matrix)
        )

    __hash__ = None


@dataclass(frozen=True)
class TransferMap:
    """Block-unitary map ``K_ij`` from sector ``source`` (j) into ``target`` (i).

    ``blocks`` carries one unitary per active eigenvalue of the source
    sector, keyed by source eigenvalue index.
    """

    source: int
    target: int
    scaling: mpmath.mpf
    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "scaling", mpf(self.scaling))
        object.__setattr__(self, "blocks", tuple(self.blocks))

    def block_for(self, source_index: int) -> Block:
        for b in self.blocks:
            if b.source == source_index:
                return b
        raise UnknownEigenvalue(
            f"transfer {self.target}<-{self.source} has no block for eigenvalue index {source_index}"
        )


def unitarity_defect(map_: TransferMap) -> float:
    return max(
        (np.linalg.norm(b.matrix.conj().T @ b.matrix - np.eye(b.matrix.shape[1]), 2) for b in map_.blocks),
        default=0.0,
    )


@dataclass(frozen=True)
class Term:
    rate: mpmath.mpf
    amplitude: mpmath.mpc
    tag: tuple | None = None  # (sector id, eigenvalue)

    def __post_init__(self):
        object.__setattr__(self, "rate", mpf(self.rate))
        object.__setattr__(self, "amplitude", mpc(self.amplitude))
        if self.tag is not None:
            object.__setattr__(self, "tag", (int(self.tag[0]), mpf(self.tag[1])))


@dataclass(frozen=True)
class ExponentialModel:
    """``M(t) = sum_l a_l exp(-mu_l t)``."""

    terms: tuple = ()

    def __post_init__(self):
        terms = tuple(t if isinstance(t, Term) else Term(*t) for t in self.terms)
        object.__setattr__(self, "terms", terms)

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    @property
    def rates(self) -> list:
        return [t.rate for t in self.terms]

    @property
    def amplitudes(self) -> list:
        return [t.amplitude for t in self.terms]

    def sorted(self) -> "ExponentialModel":
        return ExponentialModel(tuple(sorted(self.terms, key=lambda t: t.rate)))

    def untagged(self) -> "ExponentialModel":
        return ExponentialModel(tuple(Term(t.rate, t.amplitude) for t in self.terms))

    def __add__(self, other: "ExponentialModel") -> "ExponentialModel":
        # Disjoint union; call mixture.merge_terms to restore distinct rates.
        return ExponentialModel(self.terms + other.terms)


@dataclass(frozen=True)
class SampleWindow:
    step: mpmath.mpf
    values: tuple
    noise_level: mpmath.mpf = 0
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "step", mpf(self.step))
        object.__setattr__(self, "values", tuple(mpc(v) for v in self.values))
        object.__setattr__(self, "noise_level", mpf(self.noise_level))
        if self.step <= 0:
            raise ValidationError("sampling step must be > 0")
        if len(self.values) < 2:
            raise InsufficientSamples("a sample window needs at least 2 values")
        if self.noise_level < 0:
            raise ValidationError("noise level must be >= 0")

    def __len__(self):
        return len(self.values)

    @property
    def times(self) -> list:
        return [n * self.step for n in range(len(self.values))]


@dataclass(frozen=True)
class StabilityReport:
    kappa_exp: float
    kappa_upper_bound: float
    gap: float
    intra_gaps: dict
    epsilon0: float
    observability_inverses: dict
    mu_max: float
    C3: float
    C_L: float = 1.0
    sigma_min: float = field(default=float("nan"))

    @property
    def bound_holds(self) -> bool:
        return self.kappa_exp <= self.kappa_upper_bound


# ---------------------------------------------------------------------------
# JSON codecs (lossless: mp reals are written as decimal strings)
# ---------------------------------------------------------------------------


def num_out(x):
    if isinstance(x, (mpmath.mpf, mpmath.mpc)):
        x = mpf(x)
        # enough digits that parsing at working precision restores x exactly
        with mpmath.workdps(max(mpmath.mp.dps, WORKING_DPS)):
            return mpmath.nstr(x, repr_dps(mpmath.mp.prec))
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def complex_out(z) -> dict:
    z = mpc(z)
    return {"re": num_out(z.real), "im": num_out(z.imag)}


def complex_in(d) -> mpmath.mpc:
    if isinstance(d, dict):
        return mpc((d.get("re", 0), d.get("im", 0)))
    if isinstance(d, (list, tuple)):
        return mpc((d[0], d[1]))
    return mpc(d)


def sector_to_json(s: SectorSpec) -> dict:
    out = {
        "id": s.id,
        "eigenvalues": [num_out(a) for a in s.eigenvalues],
        "multiplicities": list(s.multiplicities),
    }
    if s.gauge is not None:
        out["gauge"] = num_out(s.gauge)
    return out


def sector_from_json(d: dict) -> SectorSpec:
    return SectorSpec(d["id"], d["eigenvalues"], d.get("multiplicities"), d.get("gauge"))


def _modes_to_json(m: dict) -> list:
    return [{"mode": n, "basis": k, **complex_out(v)} for (n, k), v in sorted(m.items())]


def _modes_from_json(items) -> dict:
    if isinstance(items, dict):  # {"n": value} shorthand
        return {int(k): complex_in(v) for k, v in items.items()}
    return {(int(e["mode"]), int(e.get("basis", 0))): complex_in(e) for e in items}


def state_to_json(s: SectorState) -> dict:
    return {"sector": s.sector, "coefficients": _modes_to_json(s.coefficients), "weight": num_out(s.weight)}


def state_from_json(d: dict) -> SectorState:
    return SectorState(d["sector"], _modes_from_json(d["coefficients"]), d.get("weight", 1))


def observation_to_json(o: ObservationFunctional) -> dict:
    return {"atoms": _modes_to_json(o.atoms)}


def observation_from_json(d: dict) -> ObservationFunctional:
    return ObservationFunctional(_modes_from_json(d["atoms"]))


def transfer_to_json(t: TransferMap) -> dict:
    return {
        "from": t.source,
        "to": t.target,
        "scaling": num_out(t.scaling),
        "blocks": [
            {"source": b.source, "target": b.target, "re": b.matrix.real.tolist(), "im": b.matrix.imag.tolist()}
            for b in t.blocks
        ],
    }


def transfer_from_json(d: dict) -> TransferMap:
    blocks = [
        Block(b["source"], b["target"], np.asarray(b["re"], float) + 1j * np.asarray(b.get("im", 0.0), float))
        for b in d["blocks"]
    ]
    return TransferMap(d["from"], d["to"], d["scaling"], blocks)


def model_to_json(m: ExponentialModel) -> dict:
    terms = []
    for t in m.terms:
        entry = {"rate": num_out(t.rate), "amp_re": num_out(t.amplitude.real), "amp_im": num_out(t.amplitude.imag)}
        if t.tag is not None:
            entry["sector"] = t.tag[0]
            entry["alpha"] = num_out(t.tag[1])
        terms.append(entry)
    return {"terms": terms}


def model_from_json(d: dict) -> ExponentialModel:
    terms = []
    try:
        for e in d["terms"]:
            tag = (e["sector"], e["alpha"]) if "sector" in e else None
            terms.append(Term(e["rate"], mpc((e["amp_re"], e.get("amp_im", 0))), tag))
    except (KeyError, TypeError) as err:
        raise ValidationError(f"malformed model JSON: missing or invalid field {err}") from None
    return ExponentialModel(tuple(terms))


def window_to_json(w: SampleWindow) -> dict:
    return {
        "step": num_out(w.step),
        "values": [complex_out(v) for v in w.values],
        "noise_level": num_out(w.noise_level),
        "seed": w.seed,
    }


def window_from_json(d: dict) -> SampleWindow:
    return SampleWindow(d["step"], [complex_in(v) for v in d["values"]], d.get("noise_level", 0), d.get("seed"))


def report_to_json(r: StabilityReport) -> dict:
    def key(k):
        return f"{k[0]}:{num_out(k[1])}"

    return {
        "kappa_exp": r.kappa_exp,
        "kappa_upper_bound": r.kappa_upper_bound,
        "bound_holds": r.bound_holds,
        "gap": r.gap,
        "intra_gaps": {str(k): v for k, v in r.intra_gaps.items()},
        "epsilon0": r.epsilon0,
        "observability_inverses": {key(k): v for k, v in r.observability_inverses.items()},
        "mu_max": r.mu_max,
        "C3": r.C3,
        "C_L": r.C_L,
        "sigma_min": r.sigma_min,
    }


def report_from_json(d: dict) -> StabilityReport:
    def key(s):
        i, a = s.split(":", 1)
        return int(i), mpf(a)

    return StabilityReport(
        kappa_exp=float(d["kappa_exp"]),
        kappa_upper_bound=float(d["kappa_upper_bound"]),
        gap=float(d["gap"]),
        intra_gaps={int(k): float(v) for k, v in d["intra_gaps"].items()},
        epsilon0=float(d["epsilon0"]),
        observability_inverses={key(k): float(v) for k, v in d["observability_inverses"].items()},
        mu_max=float(d["mu_max"]),
        C3=float(d["C3"]),
        C_L=float(d.get("C_L", 1.0)),
        sigma_min=float(d.get("sigma_min", "nan")),
    )


def as_values(xs: Iterable) -> list:
    return [mpc(x) for x in xs]
