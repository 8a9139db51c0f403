"""Local stability of the reconstruction: Prony Jacobian, kappa_exp, bounds, noise sweeps."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import mpmath
import numpy as np

from .core import (
    DegenerateParameters,
    ExponentialModel,
    IntertwineError,
    TOL_OBS,
    ObservabilityFailure,
    SingularJacobian,
    StabilityReport,
    ValidationError,
    mpf,
    precise,
)
from .mixture import MixtureSpec, add_noise, collapse, modal_atoms, sample_uniform
from .prony import PronyParameters, _matrix, reconstruct, singular_values
from .tagging import (
    TaggedModel,
    intra_sector_gaps,
    observability_scalar,
    recover_eigencomponents,
    tag_rates,
)

SINGULAR_RATIO = 1e-40


@dataclass(frozen=True)
class StabilityConfig:
    """``C3=None`` resolves to ``2 / (h z_min)`` once the model and step are known."""

    C3: float | None = None
    C2: float = 1.0
    C_L: float = 1.0

    def __post_init__(self):
        for name in ("C3", "C2", "C_L"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValidationError(f"{name} must be > 0, got {v}")

    def resolve_C3(self, model: ExponentialModel, h) -> mpmath.mpf:
        if self.C3 is not None:
            return mpf(self.C3)
        z_min = min(mpmath.exp(-mu * mpf(h)) for mu in model.rates)
        return 2 / (mpf(h) * z_min)


@dataclass(frozen=True)
class KappaBound:
    value: mpmath.mpf
    prefactor: mpmath.mpf
    inter_factors: tuple  # |mu - mu'| across sectors (each >= gap)
    intra_factors: tuple  # |mu - mu'| within one sector (each >= delta_i)
    untagged_factors: tuple

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class SweepRecord:
    epsilon: float
    trials: int
    errors: tuple
    theta_errors: tuple
    tag_ok: tuple
    recon_ok: tuple = field(default=())

    def __post_init__(self):
        if self.trials < 1 or len(self.errors) != self.trials:
            raise ValidationError("a sweep record needs trials >= 1 and one error per trial")

    @property
    def tag_failures(self) -> int:
        return sum(1 for ok in self.tag_ok if not ok)

    @property
    def recon_failures(self) -> int:
        return sum(1 for ok in self.recon_ok if not ok)

    @property
    def median_error(self) -> float:
        return float(np.median(self.errors))


@precise
def prony_jacobian(params: PronyParameters) -> mpmath.matrix:
    """Rows ``n = 0..2L-1``: ``[n a_l z_l**(n-1) | z_l**n]``."""
    z, a = params.nodes, params.amplitudes
    L = len(z)
    if L == 0:
        raise DegenerateParameters("empty parameter set")
    for i in range(L):
        if a[i] == 0:
            raise DegenerateParameters(f"amplitude {i} is zero")
        for j in range(i):
            if z[i] == z[j]:
                raise DegenerateParameters(f"nodes {j} and {i} coincide")
    rows = []
    for n in range(2 * L):
        zblock = [n * a[l] * z[l] ** (n - 1) if n else mpmath.mpc(0) for l in range(L)]
        rows.append(zblock + [z[l] ** n for l in range(L)])
    return _matrix(rows)


@precise
def prony_map(params: PronyParameters) -> list:
    """``F(z, a) = (sum_l a_l z_l**n)_{n < 2L}``."""
    return params.samples(2 * len(params))


@precise
def finite_difference_jacobian(params: PronyParameters, step: float = 1e-6) -> mpmath.matrix:
    """Central differences of :func:`prony_map` in each node and amplitude."""
    L = len(params)
    step = mpf(step)
    theta = list(params.nodes) + list(params.amplitudes)

    def F(th):
        return prony_map(PronyParameters(th[:L], th[L:], params.step))

    cols = []
    for c in range(2 * L):
        plus, minus = list(theta), list(theta)
        plus[c] += step
        minus[c] -= step
        cols.append([(p - m) / (2 * step) for p, m in zip(F(plus), F(minus))])
    return _matrix([[cols[c][r] for c in range(2 * L)] for r in range(2 * L)])


@precise
def sigma_min(jacobian) -> mpmath.mpf:
    return singular_values(jacobian)[-1]


@precise
def kappa_exp(jacobian, singular_ratio: float = SINGULAR_RATIO) -> mpmath.mpf:
    """``||J^{-1}||_2 = 1 / sigma_min(J)``."""
    s = singular_values(jacobian)
    if s[0] == 0 or s[-1] <= singular_ratio * s[0]:
        raise SingularJacobian(
            f"Prony Jacobian is singular (sigma_min/sigma_max = {mpmath.nstr(s[-1] / s[0] if s[0] else 0, 3)}); "
            "nodes collide or an amplitude vanishes"
        )
    return 1 / s[-1]


def _pair_product(xs):
    out = mpmath.mpf(1)
    for i in range(len(xs)):
        for j in range(i):
            out *= abs(xs[i] - xs[j])
    return out


@precise
def kappa_upper_bound(model: ExponentialModel, h, C_L=1.0, tagged: TaggedModel | None = None) -> KappaBound:
    """``C_L e^{mu_max h L(L-1)/2} / (h^{L(L-1)/2} prod|mu - mu'| min|a|)``.

    With ``tagged`` the rate-gap product is split into inter-sector and
    intra-sector factors.
    """
    rates = model.rates
    amps = model.amplitudes
    L = len(rates)
    if L == 0:
        raise DegenerateParameters("empty model")
    if min(abs(a) for a in amps) == 0:
        raise DegenerateParameters("zero amplitude")
    h = mpf(h)
    pairs = L * (L - 1) // 2
    gaps = _pair_product(rates)
    if gaps == 0:
        raise DegenerateParameters("rates are not distinct")
    prefactor = mpf(C_L) * mpmath.exp(max(rates) * h * pairs) / (h**pairs * min(abs(a) for a in amps))
    inter, intra, untagged = [], [], []
    tag_of = {}
    if tagged is not None:
        tag_of = {mpf(t.rate_raw): t.sector for t in tagged.terms}
    for i in range(L):
        for j in range(i):
            d = abs(rates[i] - rates[j])
            si, sj = tag_of.get(rates[i]), tag_of.get(rates[j])
            if si is None or sj is None:
                untagged.append(d)
            elif si == sj:
                intra.append(d)
            else:
                inter.append(d)
    return KappaBound(prefactor / gaps, prefactor, tuple(inter), tuple(intra), tuple(untagged))


@precise
def epsilon_threshold(gap, kappa, config: StabilityConfig, model: ExponentialModel | None = None, h=None):
    """``eps0 = gap / (2 C3 kappa)``; ``inf`` when the gap is infinite."""
    gap = mpf(gap)
    kappa = mpf(kappa)
    if mpmath.isinf(gap):
        return mpmath.inf
    if not (gap > 0 and kappa > 0 and mpmath.isfinite(kappa)):
        raise ValidationError("gap and kappa must be positive and finite")
    if config.C3 is None:
        if model is None or h is None:
            raise ValidationError("default C3 needs the model and sampling step")
        C3 = config.resolve_C3(model, h)
    else:
        C3 = mpf(config.C3)
    return gap / (2 * C3 * kappa)


@precise
def observability_norms(spec: MixtureSpec, tagged: TaggedModel, tol_obs: float = TOL_OBS) -> dict:
    """``1 / (w_i |B_0 K_0i phi_{i,alpha}|)`` per tagged pair."""
    out = {}
    for t in tagged.terms:
        T = abs(observability_scalar(spec, t.sector, t.alpha))
        if T <= tol_obs:
            raise ObservabilityFailure(
                f"sector {t.sector} eigenvalue {mpmath.nstr(t.alpha, 12)} is unobservable (zero atom)"
            )
        out[(t.sector, t.alpha)] = 1 / T
    return out


@precise
def stability_report(spec: MixtureSpec, h, config: StabilityConfig = StabilityConfig(), L: int | None = None) -> StabilityReport:
    model = collapse(spec).sorted()
    if L is not None and L != len(model):
        raise ValidationError(f"mixture has {len(model)} active terms, not L = {L}")
    sectors = [spec.network.sector(i) for i in spec.network.ids]
    tagged = tag_rates(model, sectors)
    J = prony_jacobian(PronyParameters.from_model(model, h))
    kappa = kappa_exp(J)
    bound = kappa_upper_bound(model, h, config.C_L, tagged)
    C3 = config.resolve_C3(model, h)
    eps0 = epsilon_threshold(tagged.gap, kappa, StabilityConfig(float(C3), config.C2, config.C_L))
    active = {t.sector for t in tagged.terms}
    return StabilityReport(
        kappa_exp=float(kappa),
        kappa_upper_bound=float(bound.value),
        gap=float(tagged.gap),
        intra_gaps={k: float(v) for k, v in intra_sector_gaps(sectors).items() if k in active},
        epsilon0=float(eps0),
        observability_inverses={k: float(v) for k, v in observability_norms(spec, tagged).items()},
        mu_max=float(max(model.rates)),
        C3=float(C3),
        C_L=float(config.C_L),
        sigma_min=float(1 / kappa),
    )


# ---------------------------------------------------------------------------
# noise sweeps
# ---------------------------------------------------------------------------


def trial_seed(seed: int, eps_index: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, eps_index, trial]).generate_state(1)[0])


@dataclass(frozen=True)
class _Truth:
    model: ExponentialModel
    tags: tuple
    xi: dict
    gap: mpmath.mpf


def _truth(spec: MixtureSpec) -> _Truth:
    model = collapse(spec).sorted()
    sectors = [spec.network.sector(i) for i in spec.network.ids]
    tagged = tag_rates(model, sectors)
    xi = {(m.sector, m.eigenvalue): m.xi for m in modal_atoms(spec) if m.basis == 0}
    return _Truth(model, tuple(tagged.tags()), xi, tagged.gap)


@precise
def _trial(spec: MixtureSpec, truth: _Truth, h, L: int, count: int, epsilon, seed: int):
    """``(param_error, theta_error, tag_ok, recon_ok)`` for one noisy draw."""
    window = add_noise(sample_uniform(truth.model, h, count), epsilon, seed)
    try:
        est = reconstruct(window, L)
    except IntertwineError:
        return math.inf, math.inf, False, False
    if len(est) != len(truth.model):
        return math.inf, math.inf, False, False
    h = mpf(h)
    rate_err = max(abs(e.rate - t.rate) for e, t in zip(est.terms, truth.model.terms))
    amp_err = max(abs(e.amplitude - t.amplitude) for e, t in zip(est.terms, truth.model.terms))
    node_err = max(
        abs(mpmath.exp(-e.rate * h) - mpmath.exp(-t.rate * h)) for e, t in zip(est.terms, truth.model.terms)
    )
    theta = float(max(node_err, amp_err))
    sectors = [spec.network.sector(i) for i in spec.network.ids]
    try:
        tagged = tag_rates(est, sectors, prior_gap=truth.gap)
    except IntertwineError:
        return math.inf, theta, False, True
    if tuple(tagged.tags()) != truth.tags:
        return math.inf, theta, False, True
    comp_err = mpmath.mpf(0)
    for c in recover_eigencomponents(tagged, spec):
        comp_err = max(comp_err, abs(c.coefficient - truth.xi[(c.sector, c.eigenvalue)]))
    return float(max(rate_err, amp_err, comp_err)), theta, True, True


def _run_job(job):
    spec, truth, h, L, count, epsilon, seed = job
    return _trial(spec, truth, h, L, count, epsilon, seed)


def noise_sweep(
    spec: MixtureSpec,
    h,
    L: int,
    epsilons,
    trials: int,
    seed: int,
    count: int | None = None,
    workers: int | None = None,
) -> list:
    """Add noise, reconstruct, tag and score against the exact mixture.

    Failures inside a trial are recorded (``inf`` error, flags false),
    never raised.  Results depend only on ``seed``, not on ``workers``.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    count = 2 * L if count is None else count
    truth = _truth(spec)
    if len(truth.model) != L:
        raise ValidationError(f"mixture has {len(truth.model)} active terms, not L = {L}")
    epsilons = [float(e) for e in epsilons]
    if any(e < 0 for e in epsilons):
        raise ValidationError("noise levels must be >= 0")
    jobs = [
        (spec, truth, h, L, count, eps, trial_seed(seed, k, t))
        for k, eps in enumerate(epsilons)
        for t in range(trials)
    ]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_run_job(j) for j in jobs]
    records = []
    for k, eps in enumerate(epsilons):
        chunk = results[k * trials : (k + 1) * trials]
        records.append(
            SweepRecord(
                eps,
                trials,
                tuple(r[0] for r in chunk),
                tuple(r[1] for r in chunk),
                tuple(r[2] for r in chunk),
                tuple(r[3] for r in chunk),
            )
        )
    return records


def error_slope(records) -> float:
    """Least-squares slope of ``log(median error)`` against ``log(epsilon)``."""
    pts = [(r.epsilon, r.median_error) for r in records if r.epsilon > 0]
    if len(pts) < 2:
        raise ValidationError("slope needs at least two positive noise levels")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def empirical_locality(records) -> float:
    """Largest noise level at which every trial reconstructed and tagged correctly."""
    ok = [r.epsilon for r in records if r.recon_failures == 0 and r.tag_failures == 0]
    return max(ok, default=0.0)


def parse_epsilons(text: str) -> list:
    """``"lo:hi:n"`` (log-spaced) or a comma-separated list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValidationError(f"expected lo:hi:n, got {text!r}")
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        if lo <= 0 or hi <= 0 or n < 1:
            raise ValidationError("log-spaced noise levels need lo, hi > 0 and n >= 1")
        return [float(x) for x in np.geomspace(lo, hi, n)]
    return [float(x) for x in text.split(",") if x.strip()]


def write_sweep_csv(records, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "trial", "param_error", "tag_ok", "recon_ok"])
        for r in records:
            for t in range(r.trials):
                w.writerow([repr(r.epsilon), t, repr(r.errors[t]), int(r.tag_ok[t]), int(r.recon_ok[t])])


def read_sweep_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    by_eps: dict = {}
    for row in rows:
        by_eps.setdefault(float(row["epsilon"]), []).append(row)
    records = []
    for eps, rs in by_eps.items():
        rs.sort(key=lambda r: int(r["trial"]))
        records.append(
            SweepRecord(
                eps,
                len(rs),
                tuple(float(r["param_error"]) for r in rs),
                tuple(math.nan for _ in rs),
                tuple(bool(int(r["tag_ok"])) for r in rs),
                tuple(bool(int(r["recon_ok"])) for r in rs),
            )
        )
    return records


__all__ = [
    "KappaBound",
    "StabilityConfig",
    "SweepRecord",
    "empirical_locality",
    "epsilon_threshold",
    "error_slope",
    "finite_difference_jacobian",
    "kappa_exp",
    "kappa_upper_bound",
    "noise_sweep",
    "observability_norms",
    "parse_epsilons",
    "prony_jacobian",
    "prony_map",
    "read_sweep_csv",
    "sigma_min",
    "stability_report",
    "trial_seed",
    "write_sweep_csv",
]
