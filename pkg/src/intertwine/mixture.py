"""Mixture observable: modal atoms, collapse to an exponential sum, sampling, noise."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import mpmath
import numpy as np

from .core import (
    TOL_AMP,
    TOL_EIG,
    ExponentialModel,
    InsufficientSamples,
    NegativeTime,
    ObservationFunctional,
    SampleWindow,
    SectorSpec,
    SectorState,
    Term,
    ValidationError,
    mpc,
    mpf,
    num_out,
    precise,
)
from .network import CocycleNetwork, transport_eigenvector


@dataclass(frozen=True)
class MixtureSpec:
    network: CocycleNetwork
    reference: int
    states: tuple
    observation: ObservationFunctional

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        self.network.sector(self.reference)
        for st in self.states:
            sector = self.network.sector(st.sector)
            for n, k in st.coefficients:
                if not 0 <= n < len(sector.eigenvalues) or not 0 <= k < sector.multiplicities[n]:
                    raise ValidationError(f"state of sector {st.sector} uses inactive mode {(n, k)}")

    def state(self, sid: int) -> SectorState | None:
        for st in self.states:
            if st.sector == sid:
                return st
        return None


@dataclass(frozen=True)
class ModalAtom:
    sector: int
    index: int
    basis: int
    eigenvalue: mpmath.mpf
    xi: mpmath.mpc
    atom: mpmath.mpc
    weight: mpmath.mpf

    @property
    def coefficient(self) -> mpmath.mpc:
        return self.weight * self.xi * self.atom


@precise
def mode_atom(spec: MixtureSpec, sid: int, n: int, k: int = 0) -> mpmath.mpc:
    """``B_0 K_{0i}`` applied to basis vector ``k`` of eigenspace ``n`` of sector ``sid``."""
    sector = spec.network.sector(sid)
    kmap = spec.network.transfer(spec.reference, sid)
    unit = [0] * sector.multiplicities[n]
    unit[k] = 1
    vec, _ = transport_eigenvector(kmap, sector, sector.eigenvalues[n], unit)
    target = kmap.block_for(n).target
    return spec.observation(target, vec)


@precise
def modal_atoms(spec: MixtureSpec) -> list:
    out = []
    for st in spec.states:
        sector = spec.network.sector(st.sector)
        for (n, k), xi in sorted(st.coefficients.items()):
            if xi == 0:
                continue
            out.append(
                ModalAtom(st.sector, n, k, sector.eigenvalues[n], xi, mode_atom(spec, st.sector, n, k), st.weight)
            )
    return out


@precise
def merge_terms(terms, tol_eig: float = TOL_EIG, tol_amp: float = TOL_AMP) -> ExponentialModel:
    """Group rates closer than ``tol_eig``, sum amplitudes, drop ``|a| <= tol_amp``.

    A merged group keeps its tag only when all members carry the same
    sector; otherwise the term comes out untagged.
    """
    terms = sorted(terms, key=lambda t: t.rate)
    groups = []
    for t in terms:
        if groups and t.rate - groups[-1][0].rate <= tol_eig:
            groups[-1].append(t)
        else:
            groups.append([t])
    merged = []
    for g in groups:
        amp = mpmath.fsum(t.amplitude for t in g)
        if abs(amp) <= tol_amp:
            continue
        tags = {t.tag[0] if t.tag else None for t in g}
        tag = g[0].tag if len(tags) == 1 and None not in tags else None
        merged.append(Term(g[0].rate, amp, tag))
    return ExponentialModel(tuple(merged))


def collapse(spec: MixtureSpec, tol_eig: float = TOL_EIG, tol_amp: float = TOL_AMP) -> ExponentialModel:
    terms = [Term(m.eigenvalue, m.coefficient, (m.sector, m.eigenvalue)) for m in modal_atoms(spec)]
    return merge_terms(terms, tol_eig, tol_amp)


@precise
def evaluate(model: ExponentialModel, t) -> mpmath.mpc:
    t = mpf(t)
    if t < 0:
        raise NegativeTime(f"t = {t} < 0")
    return mpmath.fsum(term.amplitude * mpmath.exp(-term.rate * t) for term in model.terms) + mpmath.mpc(0)


@precise
def sample_uniform(model: ExponentialModel, h, count: int) -> SampleWindow:
    h = mpf(h)
    if h <= 0:
        raise ValidationError("h must be > 0")
    if count < 2:
        raise InsufficientSamples("a sample window needs count >= 2")
    values = [evaluate(model, n * h) for n in range(count)]
    return SampleWindow(h, values, 0)


@precise
def noise_vector(count: int, epsilon, seed: int, complex_noise: bool = False) -> list:
    """Seeded Gaussian direction rescaled to l2 norm exactly ``epsilon``."""
    epsilon = mpf(epsilon)
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal(count)
    if complex_noise:
        raw = raw + 1j * rng.standard_normal(count)
    delta = [mpc(complex(x)) for x in raw]
    norm = mpmath.sqrt(mpmath.fsum(abs(d) ** 2 for d in delta))
    if epsilon == 0 or norm == 0:
        return [mpmath.mpc(0)] * count
    return [d * (epsilon / norm) for d in delta]


@precise
def add_noise(window: SampleWindow, epsilon, seed: int, complex_noise: bool | None = None) -> SampleWindow:
    """``y + delta`` with ``||delta||_2 = epsilon``.

    Noise is real when every sample is real (unless ``complex_noise``).
    """
    epsilon = mpf(epsilon)
    if epsilon < 0:
        raise ValidationError("epsilon must be >= 0")
    if epsilon == 0:
        return window
    if complex_noise is None:
        complex_noise = any(v.imag != 0 for v in window.values)
    delta = noise_vector(len(window), epsilon, seed, complex_noise)
    return SampleWindow(
        window.step, [y + d for y, d in zip(window.values, delta)], epsilon, seed
    )


@precise
def dirichlet_sector(length, mode_count: int, observation_point, sector_id: int = 0, gauge=None):
    """Dirichlet Laplacian on ``(0, length)``: eigendata and point-evaluation atoms.

    Eigenvalues ``(n pi / length)**2``; atoms ``sqrt(2/length) sin(n pi x0 / length)``.
    """
    length, x0 = mpf(length), mpf(observation_point)
    if length <= 0:
        raise ValidationError("length must be > 0")
    if not 0 < x0 < length:
        raise ValidationError("observation point must lie strictly inside (0, length)")
    if mode_count < 1:
        raise ValidationError("mode_count must be >= 1")
    ns = range(1, mode_count + 1)
    eig = [(n * mpmath.pi / length) ** 2 for n in ns]
    atoms = {(n - 1, 0): mpmath.sqrt(2 / length) * mpmath.sin(n * mpmath.pi * x0 / length) for n in ns}
    return SectorSpec(sector_id, eig, None, gauge), atoms


# ---------------------------------------------------------------------------
# SampleWindow CSV I/O
# ---------------------------------------------------------------------------


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_window_csv(window: SampleWindow, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "t", "y_re", "y_im"])
        for n, (t, y) in enumerate(zip(window.times, window.values)):
            w.writerow([n, num_out(t), num_out(y.real), num_out(y.imag)])
    meta = {"h": num_out(window.step), "noise_level": num_out(window.noise_level), "seed": window.seed}
    sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")


def read_window_csv(path) -> SampleWindow:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: int(r["n"]))
    if [int(r["n"]) for r in rows] != list(range(len(rows))):
        raise ValidationError(f"{path}: sample indices must be 0..K-1")
    values = [mpc((r["y_re"], r.get("y_im") or 0)) for r in rows]
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        h = meta["h"]
        noise, seed = meta.get("noise_level", 0), meta.get("seed")
    elif len(rows) >= 2:
        h, noise, seed = mpf(rows[1]["t"]) - mpf(rows[0]["t"]), 0, None
    else:
        raise ValidationError(f"{path}: no sidecar and too few rows to infer h")
    return SampleWindow(h, values, noise, seed)
