"""Sector tagging of recovered rates, the active inter-sector gap, and eigencomponent recovery."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import mpmath

from .core import (
    TOL_EIG,
    TOL_OBS,
    AmbiguousTag,
    ExponentialModel,
    NonSimpleEigenvalue,
    ObservabilityFailure,
    UnmatchedRate,
    ValidationError,
    mpc,
    mpf,
    num_out,
    precise,
)
from .mixture import MixtureSpec, mode_atom


@dataclass(frozen=True)
class SeparationReport:
    collisions: tuple  # (eigenvalue, sector a, sector b)

    @property
    def passed(self) -> bool:
        return not self.collisions


def check_spectral_separation(sectors, tol_eig: float = TOL_EIG) -> SeparationReport:
    collisions = []
    for a, b in itertools.combinations(sectors, 2):
        for x in a.eigenvalues:
            for y in b.eigenvalues:
                if abs(x - y) <= tol_eig:
                    collisions.append((x, a.id, b.id))
    return SeparationReport(tuple(collisions))


@dataclass(frozen=True)
class TaggedTerm:
    rate_raw: mpmath.mpf
    rate_snapped: mpmath.mpf
    amplitude: mpmath.mpc
    sector: int
    alpha: mpmath.mpf


@dataclass(frozen=True)
class TaggedModel:
    terms: tuple
    gap: mpmath.mpf

    def tags(self) -> list:
        return [(t.sector, t.alpha) for t in self.terms]


@dataclass(frozen=True)
class EigencomponentEstimate:
    sector: int
    eigenvalue: mpmath.mpf
    coefficient: mpmath.mpc


def _other_spectrum(sectors, sid):
    return [a for s in sectors if s.id != sid for a in s.eigenvalues]


def _dist(x, values):
    return min((abs(x - v) for v in values), default=mpmath.inf)


@precise
def tag_rates(
    model: ExponentialModel, sectors, capture_radius=None, prior_gap=None, tol_eig: float = TOL_EIG
) -> TaggedModel:
    """Attach ``(sector, eigenvalue)`` to every rate of ``model``.

    A rate is accepted for its nearest active eigenvalue ``alpha`` only
    when it lies strictly inside half the distance from ``alpha`` to the
    other sectors' spectra.  Ties between sectors raise AmbiguousTag;
    rates farther than ``capture_radius`` from every eigenvalue raise
    UnmatchedRate.  Without an explicit radius the default is half of
    ``prior_gap`` when one is known, else 10% of the local eigenvalue
    spacing around the candidate.
    """
    sectors = list(sectors)
    sep = check_spectral_separation(sectors, tol_eig)
    if not sep.passed:
        x, a, b = sep.collisions[0]
        raise AmbiguousTag(f"sectors {a} and {b} share eigenvalue {mpmath.nstr(x, 12)}; tags are not identifiable")
    everything = [(s.id, a) for s in sectors for a in s.eigenvalues]
    if not everything:
        raise ValidationError("no active eigenvalues to tag against")
    terms = []
    for term in model.terms:
        mu = term.rate
        sid, alpha = min(everything, key=lambda p: abs(mu - p[1]))
        d_best = abs(mu - alpha)
        d_other = _dist(mu, _other_spectrum(sectors, sid))
        if abs(d_other - d_best) <= tol_eig:
            raise AmbiguousTag(f"rate {mpmath.nstr(mu, 12)} is equidistant from two sectors' eigenvalues")
        if capture_radius is None and prior_gap is not None and mpmath.isfinite(mpf(prior_gap)):
            radius = mpf(prior_gap) / 2
        elif capture_radius is None:
            radius = mpf("0.1") * _dist(alpha, [a for s2, a in everything if (s2, a) != (sid, alpha)])
        else:
            radius = mpf(capture_radius)
        if d_best > radius:
            raise UnmatchedRate(
                f"rate {mpmath.nstr(mu, 12)} is {mpmath.nstr(d_best, 3)} from the nearest eigenvalue "
                f"(capture radius {mpmath.nstr(radius, 3)})"
            )
        if not d_best < _dist(alpha, _other_spectrum(sectors, sid)) / 2:
            raise AmbiguousTag(
                f"rate {mpmath.nstr(mu, 12)} left the attribution neighbourhood of sector {sid} eigenvalue "
                f"{mpmath.nstr(alpha, 12)}"
            )
        terms.append(TaggedTerm(mu, alpha, term.amplitude, sid, alpha))
    tagged = TaggedModel(tuple(terms), mpmath.inf)
    return TaggedModel(tagged.terms, compute_gap(tagged, sectors))


@precise
def compute_gap(tagged: TaggedModel, sectors) -> mpmath.mpf:
    """``min_l dist(alpha_l, union of the other sectors' spectra)``; ``inf`` for one sector."""
    if not tagged.terms:
        raise ValidationError("gap of an empty tagged model is undefined")
    sectors = list(sectors)
    return min(_dist(t.rate_snapped, _other_spectrum(sectors, t.sector)) for t in tagged.terms)


def intra_sector_gaps(sectors) -> dict:
    """``delta_i``: minimal spacing inside each sector's listed spectrum (``inf`` if one eigenvalue)."""
    out = {}
    for s in sectors:
        eig = sorted(s.eigenvalues)
        out[s.id] = min((b - a for a, b in zip(eig, eig[1:])), default=mpmath.inf)
    return out


@precise
def observability_scalar(spec: MixtureSpec, sid: int, alpha) -> mpmath.mpc:
    """``T_{i,alpha} = w_i B_0 K_{0i} phi_{i,alpha}`` for a simple eigenvalue."""
    sector = spec.network.sector(sid)
    n = sector.index_of(mpf(alpha))
    if sector.multiplicities[n] != 1:
        raise NonSimpleEigenvalue(
            f"eigenvalue {mpmath.nstr(alpha, 12)} of sector {sid} has multiplicity "
            f"{sector.multiplicities[n]}; scalar output cannot resolve it"
        )
    state = spec.state(sid)
    if state is None:
        raise ValidationError(f"no state (hence no weight) for sector {sid}")
    return state.weight * mode_atom(spec, sid, n, 0)


@precise
def recover_eigencomponents(tagged: TaggedModel, spec: MixtureSpec, tol_obs: float = TOL_OBS) -> list:
    out = []
    for t in tagged.terms:
        T = observability_scalar(spec, t.sector, t.alpha)
        if abs(T) <= tol_obs:
            raise ObservabilityFailure(
                f"channel is blind to sector {t.sector} eigenvalue {mpmath.nstr(t.alpha, 12)} (|T| = {mpmath.nstr(abs(T), 3)})"
            )
        out.append(EigencomponentEstimate(t.sector, t.alpha, mpc(t.amplitude / T)))
    return out


def tagged_to_json(tagged: TaggedModel) -> dict:
    return {
        "terms": [
            {
                "rate_raw": num_out(t.rate_raw),
                "rate_snapped": num_out(t.rate_snapped),
                "amp": {"re": num_out(t.amplitude.real), "im": num_out(t.amplitude.imag)},
                "sector": t.sector,
                "alpha": num_out(t.alpha),
            }
            for t in tagged.terms
        ],
        "gap": num_out(tagged.gap),
    }


def tagged_from_json(d: dict) -> TaggedModel:
    terms = tuple(
        TaggedTerm(
            mpf(e["rate_raw"]),
            mpf(e["rate_snapped"]),
            mpc((e["amp"]["re"], e["amp"]["im"])) if isinstance(e["amp"], dict) else mpc(e["amp"]),
            int(e["sector"]),
            mpf(e["alpha"]),
        )
        for e in d["terms"]
    )
    return TaggedModel(terms, mpf(d["gap"]))


def components_to_json(estimates) -> dict:
    return {
        "components": [
            {"sector": e.sector, "eigenvalue": num_out(e.eigenvalue), "re": num_out(e.coefficient.real), "im": num_out(e.coefficient.imag)}
            for e in estimates
        ]
    }
