"""Worked example networks and the ``network.json`` configuration format.

Eigenvalues are produced from their closed forms at working precision,
never from rounded decimals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import mpmath

from .core import (
    ObservationFunctional,
    SectorSpec,
    SectorState,
    ValidationError,
    num_out,
    observation_from_json,
    observation_to_json,
    precise,
    sector_from_json,
    sector_to_json,
    state_from_json,
    state_to_json,
    transfer_from_json,
    transfer_to_json,
)
from .mixture import MixtureSpec, dirichlet_sector
from .network import CocycleNetwork, build_canonical_cocycle


@dataclass(frozen=True)
class Fixture:
    name: str
    spec: MixtureSpec
    sampling: dict = field(default_factory=dict)  # suggested h, count, L


@precise
def ex6(observation_point="0.3", mode_count: int = 3) -> Fixture:
    """Two Dirichlet intervals of lengths 1 and sqrt(3), observed at ``x0`` on the first."""
    s1, atoms = dirichlet_sector(1, mode_count, observation_point, sector_id=1, gauge=1)
    s2, _ = dirichlet_sector(mpmath.sqrt(3), mode_count, "0.5", sector_id=2, gauge=3)
    net = build_canonical_cocycle([s1, s2])
    states = (SectorState(1, {0: 1, 1: "0.5"}), SectorState(2, {0: 1}))
    spec = MixtureSpec(net, 1, states, ObservationFunctional(atoms))
    return Fixture("ex6", spec, {"h": "0.05", "count": 6, "L": 3})


@precise
def ex5() -> Fixture:
    """Two sectors with irrational scaling sqrt(2); rates 1/sqrt(2), 1, sqrt(2), 2."""
    r2 = mpmath.sqrt(2)
    s1 = SectorSpec(1, [1, 2, 3, 4], gauge=1)
    s2 = SectorSpec(2, [k / r2 for k in (1, 2, 3, 4)], gauge=r2)
    net = build_canonical_cocycle([s1, s2])
    states = (SectorState(1, {0: 1, 1: "0.5"}), SectorState(2, {0: "0.8", 1: "0.3"}))
    atoms = ObservationFunctional({n: 1 for n in range(4)})
    return Fixture("ex5", MixtureSpec(net, 1, states, atoms), {"h": "0.1", "count": 8, "L": 4})


@precise
def example1() -> Fixture:
    """``A_1 = diag(1, 3)``, ``A_2 = diag(2, 6)``, ``K = I``, ``lambda_12 = 2``."""
    s1 = SectorSpec(1, [1, 3], gauge=1)
    s2 = SectorSpec(2, [2, 6], gauge=mpmath.mpf(1) / 2)
    net = build_canonical_cocycle([s1, s2])
    states = (SectorState(1, {0: 1, 1: 1}), SectorState(2, {0: 1, 1: 1}))
    atoms = ObservationFunctional({0: 1, 1: 1})
    return Fixture("example1", MixtureSpec(net, 1, states, atoms), {"h": "0.1", "count": 8, "L": 4})


@precise
def example3() -> Fixture:
    """Shared rate 2 between ``diag(1, 2)`` and ``diag(2, 4)``: separation fails."""
    s1 = SectorSpec(1, [1, 2], gauge=1)
    s2 = SectorSpec(2, [2, 4], gauge=mpmath.mpf(1) / 2)
    net = build_canonical_cocycle([s1, s2])
    states = (SectorState(1, {0: 1, 1: "0.7"}), SectorState(2, {0: "0.3", 1: 1}))
    atoms = ObservationFunctional({0: 1, 1: 1})
    return Fixture("example3", MixtureSpec(net, 1, states, atoms), {"h": "0.1", "count": 6, "L": 3})


@precise
def example4(gap="0.1") -> Fixture:
    """One sector, rates ``1`` and ``1 + gap``, unit amplitudes."""
    s = SectorSpec(1, [1, 1 + mpmath.mpf(gap)], gauge=1)
    net = build_canonical_cocycle([s])
    spec = MixtureSpec(net, 1, (SectorState(1, {0: 1, 1: 1}),), ObservationFunctional({0: 1, 1: 1}))
    return Fixture("example4", spec, {"h": "0.1", "count": 4, "L": 2})


FIXTURES = {"ex5": ex5, "ex6": ex6, "example1": example1, "example3": example3, "example4": example4}


def fixture(name: str) -> Fixture:
    try:
        return FIXTURES[name]()
    except KeyError:
        raise ValidationError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None


# ---------------------------------------------------------------------------
# network.json
# ---------------------------------------------------------------------------


def spec_to_json(spec: MixtureSpec, sampling: dict | None = None, transfers: bool = True) -> dict:
    out = {
        "reference": spec.reference,
        "sectors": [sector_to_json(s) for s in spec.network.sectors],
        "states": [state_to_json(s) for s in spec.states],
        "observation": observation_to_json(spec.observation),
    }
    if transfers:
        out["transfers"] = [transfer_to_json(t) for _, t in sorted(spec.network.transfers.items())]
    if sampling:
        out["sampling"] = {k: num_out(v) if not isinstance(v, int) else v for k, v in sampling.items()}
    return out


def spec_from_json(d: dict) -> MixtureSpec:
    """Missing ``transfers`` means the canonical cocycle with identity blocks."""
    try:
        sectors = [sector_from_json(s) for s in d["sectors"]]
        if "transfers" in d:
            tmaps = [transfer_from_json(t) for t in d["transfers"]]
            net = CocycleNetwork(tuple(sectors), {(t.target, t.source): t for t in tmaps})
        else:
            net = build_canonical_cocycle(sectors)
        states = tuple(state_from_json(s) for s in d.get("states", []))
        observation = observation_from_json(d["observation"])
        return MixtureSpec(net, int(d.get("reference", sectors[0].id)), states, observation)
    except KeyError as err:
        raise ValidationError(f"network config is missing field {err}") from None


def save_fixture(fx: Fixture, path) -> None:
    Path(path).write_text(json.dumps(spec_to_json(fx.spec, fx.sampling), indent=2) + "\n")


def load_config(path) -> tuple:
    """``(MixtureSpec, sampling dict)`` from a network.json file."""
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"{path}: no such file") from None
    except json.JSONDecodeError as err:
        raise ValidationError(f"{path}: invalid JSON ({err})") from None
    return spec_from_json(d), d.get("sampling", {})
