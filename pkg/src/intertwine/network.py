"""Scaling cocycles, gauges and intertwining networks on finite eigendata."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import mpmath
import numpy as np

from .core import (
    TOL_COCYCLE,
    TOL_EIG,
    Block,
    InvalidCycle,
    MultiplicativityViolation,
    SectorSpec,
    SpectralMismatch,
    TransferMap,
    UnknownEigenvalue,
    ValidationError,
    mpc,
    mpf,
    precise,
    require_valid,
)


@dataclass(frozen=True)
class ScalingFamily:
    """Matrix of time-scaling factors ``lambda[i, j] > 0`` indexed by position."""

    lam: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        if lam.ndim != 2 or lam.shape[0] != lam.shape[1]:
            raise ValidationError("scaling family must be a square matrix")
        if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
            raise ValidationError("scaling factors must be finite and > 0")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @property
    def size(self) -> int:
        return self.lam.shape[0]

    @classmethod
    def from_gauges(cls, tau) -> "ScalingFamily":
        tau = np.asarray(tau, dtype=float)
        return cls(tau[:, None] / tau[None, :])


def multiplicativity_residuals(family: ScalingFamily) -> np.ndarray:
    """``R[i, j, k] = |lam_ik - lam_ij lam_jk| / lam_ik``."""
    lam = family.lam
    composed = lam[:, :, None] * lam[None, :, :]
    return np.abs(lam[:, None, :] - composed) / lam[:, None, :]


def recover_gauges(family: ScalingFamily, reference: int = 0, tol_cocycle: float = TOL_COCYCLE) -> np.ndarray:
    """Gauge parameters ``tau`` with ``lam_ij = tau_i / tau_j`` and ``tau_ref = 1``.

    Raises MultiplicativityViolation when some triple breaks
    ``lam_ik = lam_ij lam_jk`` by more than ``tol_cocycle`` (relative).
    """
    if not 0 <= reference < family.size:
        raise ValidationError(f"reference index {reference} out of range")
    diag = np.abs(np.diag(family.lam) - 1.0)
    if np.any(diag > tol_cocycle):
        i = int(np.argmax(diag))
        raise MultiplicativityViolation(
            f"lambda[{i},{i}] = {family.lam[i, i]} but the diagonal must equal 1",
            triple=(i, i, i),
            residual=float(diag[i]),
        )
    res = multiplicativity_residuals(family)
    worst = np.unravel_index(np.argmax(res), res.shape)
    if res[worst] > tol_cocycle:
        i, j, k = (int(x) for x in worst)
        raise MultiplicativityViolation(
            f"lambda[{i},{k}] != lambda[{i},{j}]*lambda[{j},{k}] (relative residual {res[worst]:.3e})",
            triple=(i, j, k),
            residual=float(res[worst]),
        )
    return family.lam[:, reference].copy()


def check_cycle_consistency(family: ScalingFamily, cycle) -> float:
    """``|prod_r lam[i_{r+1}, i_r] - 1|`` along a closed cycle of positions."""
    cycle = list(cycle)
    if len(cycle) < 2 or cycle[0] != cycle[-1]:
        raise InvalidCycle(f"cycle must start and end at the same index, got {cycle}")
    prod = 1.0
    for a, b in zip(cycle, cycle[1:]):
        prod *= family.lam[b, a]
    return abs(prod - 1.0)


def all_cycles(size: int, max_length: int):
    """Closed walks ``(i_0, ..., i_m = i_0)`` with ``1 <= m <= max_length``."""
    for m in range(1, max_length + 1):
        for path in itertools.product(range(size), repeat=m):
            yield path + (path[0],)


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CocycleNetwork:
    sectors: tuple
    transfers: dict = field(default_factory=dict)  # (to, from) -> TransferMap

    def __post_init__(self):
        object.__setattr__(self, "sectors", tuple(self.sectors))
        ids = [s.id for s in self.sectors]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate sector ids {ids}")

    def sector(self, sid: int) -> SectorSpec:
        for s in self.sectors:
            if s.id == sid:
                return s
        raise ValidationError(f"no sector with id {sid}")

    @property
    def ids(self) -> list:
        return [s.id for s in self.sectors]

    def transfer(self, to: int, frm: int) -> TransferMap:
        try:
            return self.transfers[(to, frm)]
        except KeyError:
            raise ValidationError(f"network has no transfer {to}<-{frm}") from None

    def scaling_family(self) -> ScalingFamily:
        ids = self.ids
        return ScalingFamily([[float(self.transfer(i, j).scaling) for j in ids] for i in ids])

    def with_sectors(self, sectors) -> "CocycleNetwork":
        return replace(self, sectors=tuple(sectors))


@dataclass(frozen=True)
class PairCheck:
    first: int
    second: int
    passed: bool
    reason: str = ""


@dataclass(frozen=True)
class IsospectralReport:
    pairs: tuple

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.pairs)


@precise
def _rescaled(sector: SectorSpec) -> list:
    return [sector.gauge * a for a in sector.eigenvalues]


def _align(a: SectorSpec, b: SectorSpec, tol_eig: float) -> tuple[list, str]:
    """Greedy index matching of rescaled spectra; ``(pairs, reason)``."""
    ra, rb = _rescaled(a), _rescaled(b)
    oa = sorted(range(len(ra)), key=lambda n: ra[n])
    ob = sorted(range(len(rb)), key=lambda n: rb[n])
    if len(oa) != len(ob):
        return [], f"{len(oa)} vs {len(ob)} active eigenvalues"
    pairs = []
    for n, m in zip(oa, ob):
        if abs(ra[n] - rb[m]) > tol_eig:
            return [], f"rescaled eigenvalues {mpmath.nstr(ra[n], 12)} and {mpmath.nstr(rb[m], 12)} differ"
        if a.multiplicities[n] != b.multiplicities[m]:
            return [], (
                f"multiplicity {a.multiplicities[n]} vs {b.multiplicities[m]} "
                f"at rescaled eigenvalue {mpmath.nstr(ra[n], 12)}"
            )
        pairs.append((n, m))
    return pairs, ""


def check_isospectral(sectors, tol_eig: float = TOL_EIG) -> IsospectralReport:
    """Compare every pair of gauge-rescaled spectra, multiplicities included."""
    sectors = list(sectors)
    for s in sectors:
        require_valid(s)
        if s.gauge is None:
            raise ValidationError(f"sector {s.id} has no gauge assigned")
    checks = []
    for a, b in itertools.combinations(sectors, 2):
        pairs, reason = _align(a, b, tol_eig)
        checks.append(PairCheck(a.id, b.id, not reason, reason))
    return IsospectralReport(tuple(checks))


def build_canonical_cocycle(sectors, unitaries: dict | None = None, tol_eig: float = TOL_EIG) -> CocycleNetwork:
    """Unitary network ``K_ij = (+)_alpha V_{i,alpha} V_{j,alpha}^{-1}``.

    ``unitaries`` maps ``(sector id, eigenvalue index)`` to the unitary
    ``V`` identifying that eigenspace with the matching eigenspace of the
    first sector; missing entries default to the identity.
    """
    sectors = list(sectors)
    if not sectors:
        raise ValidationError("need at least one sector")
    report = check_isospectral(sectors, tol_eig)
    if not report.passed:
        bad = next(p for p in report.pairs if not p.passed)
        raise SpectralMismatch(f"sectors {bad.first} and {bad.second}: {bad.reason}")
    unitaries = dict(unitaries or {})
    ref = sectors[0]

    # index of each reference eigenspace in every sector
    align = {ref.id: {n: n for n in range(len(ref.eigenvalues))}}
    for s in sectors[1:]:
        pairs, _ = _align(ref, s, tol_eig)
        align[s.id] = dict(pairs)

    def V(sid, n_ref):
        n = align[sid][n_ref]
        dim = ref.multiplicities[n_ref]
        u = unitaries.get((sid, n))
        return np.eye(dim, dtype=complex) if u is None else np.asarray(u, dtype=complex)

    transfers = {}
    with mpmath.workdps(mpmath.mp.dps + 10):
        for i, j in itertools.product(sectors, repeat=2):
            blocks = []
            for n_ref in range(len(ref.eigenvalues)):
                if i.id == j.id:
                    mat = np.eye(ref.multiplicities[n_ref], dtype=complex)
                else:
                    mat = V(i.id, n_ref) @ V(j.id, n_ref).conj().T
                blocks.append(Block(align[j.id][n_ref], align[i.id][n_ref], mat))
            scaling = mpmath.mpf(1) if i.id == j.id else i.gauge / j.gauge
            transfers[(i.id, j.id)] = TransferMap(j.id, i.id, scaling, sorted(blocks, key=lambda b: b.source))
    return CocycleNetwork(tuple(sectors), transfers)


def cocycle_residuals(net: CocycleNetwork) -> dict:
    """``{(i, j, k): max_block ||K_ik - K_ij K_jk||_2}`` over all triples."""
    out = {}
    for i, j, k in itertools.product(net.ids, repeat=3):
        kij, kjk, kik = net.transfer(i, j), net.transfer(j, k), net.transfer(i, k)
        worst = 0.0
        for b1 in kjk.blocks:
            try:
                b2 = kij.block_for(b1.target)
                b3 = kik.block_for(b1.source)
            except UnknownEigenvalue:
                worst = np.inf
                continue
            if b2.target != b3.target or b2.matrix.shape[1] != b1.matrix.shape[0]:
                worst = np.inf
                continue
            worst = max(worst, np.linalg.norm(b2.matrix @ b1.matrix - b3.matrix, 2))
        out[(i, j, k)] = float(worst)
    return out


def verify_cocycle(net: CocycleNetwork) -> float:
    return max(cocycle_residuals(net).values(), default=0.0)


def inverse_residuals(net: CocycleNetwork) -> dict:
    """``{(i, j): ||K_ij K_ji - I||}``."""
    out = {}
    for i, j in itertools.product(net.ids, repeat=2):
        kij, kji = net.transfer(i, j), net.transfer(j, i)
        worst = 0.0
        for b in kji.blocks:
            back = kij.block_for(b.target)
            if back.target != b.source:
                worst = np.inf
                continue
            worst = max(worst, np.linalg.norm(back.matrix @ b.matrix - np.eye(b.matrix.shape[1]), 2))
        out[(i, j)] = float(worst)
    return out


def _gauge_scaling(net: CocycleNetwork, i: int, j: int):
    si, sj = net.sector(i), net.sector(j)
    if si.gauge is None or sj.gauge is None:
        raise ValidationError("intertwining check needs gauges on every sector")
    return si.gauge / sj.gauge


@precise
def intertwining_residuals(net: CocycleNetwork, t_grid) -> dict:
    """``{(i, j): max ||K_ij S_j(t) phi - S_i(lam_ij t) K_ij phi||}``.

    ``phi`` runs over the eigenbasis of every active eigenspace of sector
    ``j``; both semigroups act spectrally, sector ``i`` through its own
    stored eigenvalue at the block target.
    """
    t_grid = [mpf(t) for t in t_grid]
    out = {}
    for (i, j), kij in net.transfers.items():
        lam = _gauge_scaling(net, i, j)
        si, sj = net.sector(i), net.sector(j)
        worst = mpmath.mpf(0)
        for b in kij.blocks:
            alpha = sj.eigenvalues[b.source]
            beta = si.eigenvalues[b.target]
            col_norms = np.linalg.norm(b.matrix, axis=0)
            for t in t_grid:
                diff = abs(mpmath.exp(-alpha * t) - mpmath.exp(-beta * lam * t))
                worst = max(worst, diff * mpf(float(col_norms.max(initial=0.0))))
        out[(i, j)] = float(worst)
    return out


def verify_intertwining(net: CocycleNetwork, t_grid) -> float:
    return max(intertwining_residuals(net, t_grid).values(), default=0.0)


@precise
def verify_generator_identity(net: CocycleNetwork) -> float:
    """Max over eigenvectors of ``||K_ij A_j phi - lam_ij A_i K_ij phi||``."""
    worst = mpmath.mpf(0)
    for (i, j), kij in net.transfers.items():
        lam = _gauge_scaling(net, i, j)
        si, sj = net.sector(i), net.sector(j)
        for b in kij.blocks:
            scale = float(np.linalg.norm(b.matrix, 2))
            worst = max(worst, abs(sj.eigenvalues[b.source] - lam * si.eigenvalues[b.target]) * mpf(scale))
    return float(worst)


@precise
def transport_eigenvector(map_: TransferMap, source: SectorSpec, alpha, coefficients, tol_eig: float = TOL_EIG):
    """Push an eigenvector of the source sector through ``map_``.

    Returns ``(coefficients in the target eigenspace, alpha / lambda)``.
    """
    if source.id != map_.source:
        raise ValidationError(f"map starts at sector {map_.source}, got sector {source.id}")
    n = source.index_of(mpf(alpha), tol_eig)
    block = map_.block_for(n)
    vec = [mpc(c) for c in coefficients]
    if len(vec) != block.matrix.shape[1]:
        raise ValidationError(f"eigenspace has dimension {block.matrix.shape[1]}, got {len(vec)} coefficients")
    out = [
        mpmath.fsum(mpc(complex(block.matrix[r, c])) * vec[c] for c in range(len(vec)))
        for r in range(block.matrix.shape[0])
    ]
    return out, mpf(alpha) / map_.scaling


def assign_gauges(sectors, family: ScalingFamily, reference: int = 0, tol_cocycle: float = TOL_COCYCLE) -> list:
    """Attach gauges recovered from ``family`` (positions follow ``sectors``)."""
    tau = recover_gauges(family, reference, tol_cocycle)
    return [s.with_gauge(t) for s, t in zip(sectors, tau)]
