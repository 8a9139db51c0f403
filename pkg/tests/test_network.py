import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intertwine.core import (
    Block,
    InvalidCycle,
    MultiplicativityViolation,
    SectorSpec,
    SpectralMismatch,
    TransferMap,
    UnknownEigenvalue,
    ValidationError,
)
from intertwine.fixtures import ex6, example1
from intertwine.network import (
    CocycleNetwork,
    ScalingFamily,
    all_cycles,
    assign_gauges,
    build_canonical_cocycle,
    check_cycle_consistency,
    check_isospectral,
    inverse_residuals,
    multiplicativity_residuals,
    recover_gauges,
    transport_eigenvector,
    verify_cocycle,
    verify_generator_identity,
    verify_intertwining,
)

pi2 = mpmath.pi**2
gauges = st.lists(st.floats(0.1, 10), min_size=2, max_size=6)


def random_unitary(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def isospectral_triple(rng):
    """Three sectors sharing a normalized spectrum with one multiplicity-2 eigenvalue."""
    base = np.sort(rng.uniform(0.5, 20, 4))
    mult = [1, 2, 1, 1]
    tau = [1.0, *rng.uniform(0.2, 5, 2)]
    sectors = [SectorSpec(i, [mpmath.mpf(b) / t for b in base], mult, t) for i, t in enumerate(tau)]
    unitaries = {(i, n): random_unitary(rng, m) for i in (1, 2) for n, m in enumerate(mult)}
    return sectors, unitaries


# --- gauges ----------------------------------------------------------------


def test_example1_gauges():
    tau = recover_gauges(ScalingFamily([[1, 2], [0.5, 1]]), reference=0)
    assert tau == pytest.approx([1, 0.5])
    assert tau[0] / tau[1] == pytest.approx(2)


def test_time_preserving_family_has_unit_gauges():
    for ref in range(3):
        assert recover_gauges(ScalingFamily(np.ones((3, 3))), ref) == pytest.approx([1, 1, 1])


@settings(max_examples=50)
@given(gauges, st.data())
def test_coboundary_round_trip(tau, data):
    tau = np.array(tau)
    ref = data.draw(st.integers(0, len(tau) - 1))
    rec = recover_gauges(ScalingFamily.from_gauges(tau), ref)
    np.testing.assert_allclose(rec, tau / tau[ref], rtol=1e-12)


@settings(max_examples=30)
@given(gauges)
def test_gauges_differ_only_by_global_scale(tau):
    fam = ScalingFamily.from_gauges(tau)
    a, b = recover_gauges(fam, 0), recover_gauges(fam, len(tau) - 1)
    ratio = a / b
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-12)
    np.testing.assert_allclose(ScalingFamily.from_gauges(a).lam, ScalingFamily.from_gauges(b).lam, rtol=1e-12)
    assert multiplicativity_residuals(ScalingFamily.from_gauges(a)).max() < 1e-12


def test_perturbed_family_is_rejected_with_worst_triple():
    lam = ScalingFamily.from_gauges([1, 2, 3]).lam.copy()
    lam[0, 2] *= 1 + 1e-3
    with pytest.raises(MultiplicativityViolation) as info:
        recover_gauges(ScalingFamily(lam))
    assert info.value.residual == pytest.approx(1e-3, rel=0.01)
    assert info.value.triple is not None


def test_non_unit_diagonal_is_rejected():
    with pytest.raises(MultiplicativityViolation):
        recover_gauges(ScalingFamily([[2, 1], [1, 1]]))


def test_family_validation():
    with pytest.raises(ValidationError):
        ScalingFamily([[1, -1], [1, 1]])
    with pytest.raises(ValidationError):
        ScalingFamily([[1, 1]])
    with pytest.raises(ValidationError):
        recover_gauges(ScalingFamily([[1]]), reference=3)


def test_assign_gauges():
    sectors = [SectorSpec(1, [1, 3]), SectorSpec(2, [2, 6])]
    out = assign_gauges(sectors, ScalingFamily([[1, 2], [0.5, 1]]))
    assert [float(s.gauge) for s in out] == [1, 0.5]


# --- cycles ----------------------------------------------------------------


def test_example1_cycle():
    fam = ScalingFamily([[1, 2], [0.5, 1]])
    assert check_cycle_consistency(fam, [0, 1, 0]) == 0
    assert check_cycle_consistency(fam, [0, 0]) == 0


def test_cycle_endpoints_must_match():
    with pytest.raises(InvalidCycle):
        check_cycle_consistency(ScalingFamily(np.ones((2, 2))), [0, 1])


def test_perturbed_entry_shows_in_cycle():
    lam = ScalingFamily.from_gauges([1, 2, 3]).lam.copy()
    lam[1, 0] *= 1 + 1e-3
    assert check_cycle_consistency(ScalingFamily(lam), [0, 1, 0]) == pytest.approx(1e-3, rel=1e-6)


@settings(max_examples=10)
@given(st.lists(st.floats(0.1, 10), min_size=4, max_size=4))
def test_all_short_cycles_close(tau):
    fam = ScalingFamily.from_gauges(tau)
    assert max(check_cycle_consistency(fam, c) for c in all_cycles(4, 4)) <= 4 * 1e-9


def test_cycle_enumeration_count():
    assert sum(1 for _ in all_cycles(3, 2)) == 3 + 9


# --- isospectrality ---------------------------------------------------------


def test_dirichlet_pair_is_isospectral():
    spec = ex6().spec
    assert check_isospectral(spec.network.sectors).passed


def test_non_homothetic_pair_fails_on_gauge_grid():
    for t1, t2 in itertools.product(np.geomspace(0.1, 10, 20), repeat=2):
        report = check_isospectral([SectorSpec(1, [1, 3], gauge=t1), SectorSpec(2, [2, 5], gauge=t2)])
        assert not report.passed


def test_multiplicity_mismatch_fails():
    report = check_isospectral([SectorSpec(1, [1, 2], [1, 2], 1), SectorSpec(2, [1, 2], [1, 1], 1)])
    assert not report.passed
    assert "multiplicity" in report.pairs[0].reason


def test_single_sector_is_vacuously_isospectral():
    assert check_isospectral([SectorSpec(1, [1], gauge=1)]).passed


def test_isospectral_needs_gauges():
    with pytest.raises(ValidationError):
        check_isospectral([SectorSpec(1, [1])])


# --- canonical cocycle --------------------------------------------------------


def test_ex6_transfer_maps_mode_to_mode():
    net = ex6().spec.network
    k12 = net.transfer(1, 2)
    assert abs(k12.scaling - mpmath.mpf(1) / 3) < 1e-45
    for n in range(3):
        blk = k12.block_for(n)
        assert blk.target == n
        np.testing.assert_array_equal(blk.matrix, [[1]])


def test_one_sector_network_is_identity():
    net = build_canonical_cocycle([SectorSpec(0, [1, 2], [1, 2], 1)])
    k = net.transfer(0, 0)
    assert k.scaling == 1
    assert all(np.array_equal(b.matrix, np.eye(b.matrix.shape[0])) for b in k.blocks)


def test_mismatched_spectra_are_refused():
    with pytest.raises(SpectralMismatch):
        build_canonical_cocycle([SectorSpec(1, [1, 3], gauge=1), SectorSpec(2, [2, 5], gauge=1)])


@pytest.mark.parametrize("seed", range(10))
def test_random_canonical_cocycle(seed):
    rng = np.random.default_rng(seed)
    sectors, unitaries = isospectral_triple(rng)
    net = build_canonical_cocycle(sectors, unitaries)
    assert verify_cocycle(net) <= 1e-12
    assert verify_intertwining(net, [0, 0.05, 0.1, 1.0]) <= 1e-12
    assert max(inverse_residuals(net).values()) <= 1e-12
    assert verify_generator_identity(net) <= 1e-12
    for (i, j), k in net.transfers.items():
        for b in k.blocks:
            assert net.sector(i).multiplicities[b.target] == net.sector(j).multiplicities[b.source]


def test_example1_network_is_exact():
    net = example1().spec.network
    assert verify_cocycle(net) == 0
    assert verify_intertwining(net, [0, 0.5, 1]) == 0


def test_replaced_block_breaks_cocycle():
    rng = np.random.default_rng(3)
    sectors, unitaries = isospectral_triple(rng)
    net = build_canonical_cocycle(sectors, unitaries)
    k = net.transfer(0, 1)
    blocks = [Block(b.source, b.target, random_unitary(rng, b.matrix.shape[0])) if b.source == 1 else b for b in k.blocks]
    transfers = dict(net.transfers)
    transfers[(0, 1)] = TransferMap(k.source, k.target, k.scaling, blocks)
    assert verify_cocycle(CocycleNetwork(net.sectors, transfers)) > 0.1


def test_ex6_intertwining():
    assert verify_intertwining(ex6().spec.network, [0, 0.05, 0.1]) <= 1e-14


def test_intertwining_at_time_zero_is_exact_for_any_network():
    net = ex6().spec.network
    s2 = net.sector(2)
    shifted = SectorSpec(2, [a * 1.01 for a in s2.eigenvalues], s2.multiplicities, s2.gauge)
    assert verify_intertwining(net.with_sectors([net.sector(1), shifted]), [0]) == 0


def test_perturbed_eigenvalues_grow_linearly_in_time():
    net = ex6().spec.network
    s2 = net.sector(2)
    delta = mpmath.mpf("1e-3")
    shifted = SectorSpec(2, [a + delta for a in s2.eigenvalues], s2.multiplicities, s2.gauge)
    broken = net.with_sectors([net.sector(1), shifted])
    for t in (1e-4, 1e-3):
        # worst case: the lowest mode, both directions; first order |d/dt| = tau_2 * delta
        expected = 3 * float(delta) * t * math.exp(-math.pi**2 * t)
        assert verify_intertwining(broken, [t]) == pytest.approx(expected, rel=1e-2)


# --- transport ----------------------------------------------------------------


def test_transport_scales_eigenvalue():
    net = ex6().spec.network
    vec, beta = transport_eigenvector(net.transfer(1, 2), net.sector(2), pi2 / 3, [1])
    assert beta == pytest.approx(pi2, rel=1e-40)
    assert vec == [1]


def test_identity_transport_is_unchanged():
    s = SectorSpec(0, [2, 5], gauge=1)
    net = build_canonical_cocycle([s])
    vec, beta = transport_eigenvector(net.transfer(0, 0), s, 5, [0.25j])
    assert (vec, beta) == ([0.25j], 5)


def test_rotation_block_transport():
    theta = 0.7
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    s = SectorSpec(0, [1], [2], 1)
    k = TransferMap(0, 1, 1, [Block(0, 0, rot)])
    vec, _ = transport_eigenvector(k, s, 1, [1, 0])
    assert [complex(v) for v in vec] == pytest.approx([math.cos(theta), math.sin(theta)])


def test_transport_rejects_inactive_eigenvalue():
    net = ex6().spec.network
    with pytest.raises(UnknownEigenvalue):
        transport_eigenvector(net.transfer(1, 2), net.sector(2), 1.0, [1])
