import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nuflavor.ensemble import build_hamiltonian, hamiltonian_from_couplings, rng_for
from nuflavor.errors import (
    DegenerateScheduleError,
    InvalidParameterError,
    ResourceLimitError,
    ShapeError,
)
from nuflavor.randomized import (
    average_hamiltonian_variance,
    build_random_schedule,
    curvature_g,
    effective_coupling_matrix,
    randomized_state,
    randomized_variance,
    rescaling_alpha,
    rho_rnd,
    rho_rnd_distance,
    rho_rnd_ensemble,
    run_protocol_a,
    run_protocol_b,
    seeded_schedule,
    symmetrized_product,
    trace_distance,
    uniform_couplings,
)
from nuflavor.statevector import DenseOracle, InitialState, flavor_variance, measure_flavor_observables
from tests.conftest import random_state


def exact_variance(sample, initial, t):
    return flavor_variance(DenseOracle(sample.couplings).evolve(initial.statevector(), t))


# -- schedules ------------------------------------------------------------------


def test_constant_sample_gives_constant_angles():
    c = np.full((4, 4), 0.3)
    np.fill_diagonal(c, 0.0)
    sched = build_random_schedule(hamiltonian_from_couplings(c), 5, rng_for(0))
    assert np.all(sched.h == 0.3)


def test_support_is_the_coupling_multiset():
    s = build_hamiltonian(4, seed=3)
    sched = build_random_schedule(s, 1, rng_for(1))
    assert sched.h.shape == (1, 3)
    assert set(sched.h.ravel()) <= set(s.pair_values())


def test_angle_histogram_is_uniform():
    from scipy.stats import chisquare

    s = build_hamiltonian(4, seed=3)
    sched = build_random_schedule(s, 100000 // 3 + 1, rng_for(2))
    vals = s.pair_values()
    idx = np.searchsorted(np.sort(vals), sched.h.ravel())
    counts = np.bincount(idx, minlength=vals.size)
    assert chisquare(counts).pvalue > 1e-3


def test_zero_layers_rejected():
    with pytest.raises(InvalidParameterError):
        build_random_schedule(build_hamiltonian(4), 0, rng_for(0))


def test_effective_matrix_single_pair():
    s = hamiltonian_from_couplings([[0.0, 0.7], [0.7, 0.0]])
    mat = effective_coupling_matrix(seeded_schedule(s, 1, 0))
    assert mat[0, 1] == 0.7 and mat[1, 0] == 0.7


def test_effective_matrix_four_neutrinos():
    s = build_hamiltonian(4, seed=9)
    sched = seeded_schedule(s, 1, 4)
    mat = effective_coupling_matrix(sched)
    h = sched.h[0]
    assert mat[0, 1] == h[0] and mat[2, 3] == h[2] and mat[0, 3] == h[1]
    assert np.count_nonzero(np.triu(mat, 1)) == 3


@settings(max_examples=20, deadline=None)
@given(n=st.sampled_from([2, 4, 6, 10]), L=st.integers(1, 25), seed=st.integers(0, 10**6))
def test_effective_matrix_conserves_weight(n, L, seed):
    sched = seeded_schedule(build_hamiltonian(n, seed=seed), L, seed)
    mat = effective_coupling_matrix(sched)
    assert np.array_equal(mat, mat.T)
    assert np.sum(np.triu(mat, 1)) == pytest.approx(sched.h.sum(), rel=1e-12)


# -- curvature and alpha ----------------------------------------------------------


def test_curvature_closed_forms():
    c = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert curvature_g(c, [1, -1]) == -8.0
    s = build_hamiltonian(6, seed=1)
    assert curvature_g(s.couplings, np.ones(6)) == 0.0
    dw = InitialState.domain_wall(6).m
    cross = s.couplings[:3, 3:]
    assert curvature_g(s.couplings, dw) == pytest.approx(-(16 / 6) * np.sum(cross**2), rel=1e-13)
    with pytest.raises(ShapeError):
        curvature_g(c, [1, -1, 1])


@pytest.mark.parametrize("n", [4, 6, 8])
def test_curvature_matches_finite_difference(n):
    h = 1e-3
    for k in range(3):
        s = build_hamiltonian(n, seed=31, realization_id=k)
        init = InitialState.domain_wall(n).random_permutation(rng_for(31, k))
        fd = (2 * exact_variance(s, init, h) - 2.0) / h**2
        g = curvature_g(s.couplings, init.m)
        assert abs(fd - g) / abs(g) < 1e-4


def test_alpha_is_one_when_effective_equals_physical():
    # n=2, L=1: the only slot carries the only coupling
    s = hamiltonian_from_couplings([[0.0, 0.4], [0.4, 0.0]])
    init = InitialState.domain_wall(2)
    rec = rescaling_alpha(s, init, seeded_schedule(s, 1, 0))
    assert rec.alpha == 1.0 and rec.g == rec.g_R < 0


def test_polarized_initial_rejected():
    s = build_hamiltonian(4)
    with pytest.raises(InvalidParameterError):
        rescaling_alpha(s, InitialState.polarized(4), seeded_schedule(s, 2, 0))


def test_degenerate_schedule_raises():
    # only the (0, 1) and (2, 3) pairs carry weight: a 1-layer schedule
    # on |0011> whose odd slot gets a zero coupling never mixes 0/1 flavors
    c = np.zeros((4, 4))
    c[0, 1] = c[1, 0] = c[2, 3] = c[3, 2] = 0.5
    s = hamiltonian_from_couplings(c)
    sched = seeded_schedule(s, 1, 0)
    sched.h[:] = [0.5, 0.0, 0.5]
    with pytest.raises(DegenerateScheduleError):
        rescaling_alpha(s, InitialState.domain_wall(4), sched)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), scale=st.floats(0.01, 100.0), L=st.integers(1, 12))
def test_alpha_invariant_under_coupling_scale(seed, scale, L):
    s = build_hamiltonian(6, seed=seed)
    s2 = hamiltonian_from_couplings(s.couplings * scale)
    init = InitialState.domain_wall(6)
    phi = init.random_permutation(rng_for(seed, 1))
    try:
        a = rescaling_alpha(s, init, seeded_schedule(s, L, seed), phi).alpha
    except DegenerateScheduleError:
        return
    b = rescaling_alpha(s2, init, seeded_schedule(s2, L, seed), phi).alpha
    assert b == pytest.approx(a, rel=1e-10)


def test_randomized_short_time_curvature_is_g_R():
    # second-order Magnus terms vanish on Z-basis product states
    s = build_hamiltonian(8, seed=5)
    init = InitialState.domain_wall(8)
    for L in (1, 3, 7):
        sched = seeded_schedule(s, L, 40 + L)
        g_r = curvature_g(effective_coupling_matrix(sched), init.m)
        h = 1e-3
        fd = (2 * randomized_variance(sched, init, h) - 2.0) / h**2
        assert abs(fd - g_r) / abs(g_r) < 1e-4


# -- invariants of the channel --------------------------------------------------------


def test_channel_depends_on_sample_only_through_angles():
    s = build_hamiltonian(6, seed=7)
    perm = np.array([3, 0, 5, 1, 4, 2])
    relabeled = hamiltonian_from_couplings(s.couplings[np.ix_(perm, perm)])
    sched = seeded_schedule(s, 4, 11)
    init = InitialState.domain_wall(6).permuted(perm)
    a = randomized_variance(sched, init, 0.8)
    sched_b = seeded_schedule(relabeled, 4, 11)
    sched_b.h = sched.h.copy()
    b = randomized_variance(sched_b, init, 0.8)
    assert a == b


def test_magnetization_conserved_by_channel():
    s = build_hamiltonian(8, seed=2)
    init = InitialState.domain_wall(8).random_permutation(rng_for(2))
    psi = randomized_state(seeded_schedule(s, 9, 3), init, 1.7)
    z = measure_flavor_observables(psi, entropies=False)["z"]
    assert abs(z.sum()) < 1e-10
    assert abs(np.linalg.norm(psi) - 1.0) < 1e-12


def test_mps_backend_agrees_at_full_bond_dimension():
    s = build_hamiltonian(8, seed=13)
    init = InitialState.domain_wall(8)
    sched = seeded_schedule(s, 6, 1)
    a = randomized_variance(sched, init, 1.3)
    b = randomized_variance(sched, init, 1.3, backend="mps", chi_max=16)
    assert b == pytest.approx(a, abs=1e-10)
    with pytest.raises(InvalidParameterError):
        randomized_variance(sched, init, 1.0, backend="gpu")


# -- protocols ------------------------------------------------------------------------


def test_protocol_a_starts_at_one_and_records_columns():
    s = build_hamiltonian(6, seed=4)
    init = InitialState.domain_wall(6)
    ser = run_protocol_a(s, init, 5, [0.0, 0.5, 1.0], rng=rng_for(4, 0), meta={"k": 0})
    assert ser.values[0] == 1.0
    for col in ("alpha", "g", "g_R", "schedule_seed"):
        assert ser.columns[col].shape == (3,)
    assert ser.meta["protocol"] == "A" and ser.meta["layers"] == 5


def test_protocol_a_and_b_coincide_at_l_equals_L():
    s = build_hamiltonian(6, seed=6)
    init = InitialState.domain_wall(6)
    phi = init.random_permutation(rng_for(6, 1))
    L, t = 4, 8.0
    a = run_protocol_a(s, init, L, [t], rng=rng_for(6, 2), circuit_initial=phi)
    sched = seeded_schedule(s, L, int(a.columns["schedule_seed"][0]))
    rec = rescaling_alpha(s, init, sched, phi)
    assert rec.alpha == a.columns["alpha"][0]
    delta_t = t / L
    # protocol B's l = L point evaluates V_R(alpha(L) * L * delta_t, L)
    v_b = randomized_variance(sched, phi, rec.alpha * (L * delta_t))
    assert v_b == a.values[0]


def test_protocol_a_short_time_curvature():
    n, h = 6, 1e-3
    init = InitialState.domain_wall(n)
    ratios = []
    for k in range(10):
        s = build_hamiltonian(n, seed=8, realization_id=k)
        ser = run_protocol_a(s, init, 6, [h], rng=rng_for(8, k),
                             circuit_initial=init.random_permutation(rng_for(8, k, 1)))
        fd = 2 * (ser.values[0] - 1.0) / h**2
        ratios.append(fd / curvature_g(s.couplings, init.m))
    assert abs(np.mean(ratios) - 1.0) < 0.05


def test_protocol_b_grid_and_layers():
    s = build_hamiltonian(6, seed=10)
    ser = run_protocol_b(s, InitialState.domain_wall(6), 0.5, 6, rng=rng_for(10))
    assert np.allclose(ser.times, 0.5 * np.arange(7))
    assert ser.values[0] == 1.0
    assert list(ser.columns["layers"]) == list(range(7))
    with pytest.raises(InvalidParameterError):
        run_protocol_b(s, InitialState.domain_wall(6), 0.0, 3)


def test_protocol_b_alpha_shrinks_with_depth():
    init = InitialState.domain_wall(10)
    first, last = [], []
    for k in range(10):
        ser = run_protocol_b(build_hamiltonian(10, seed=3, realization_id=k), init, 1.0, 15,
                             rng=rng_for(3, k))
        first.append(ser.columns["alpha"][1])
        last.append(ser.columns["alpha"][15])
    assert np.mean(last) < np.mean(first)


def test_protocol_b_is_reproducible():
    s = build_hamiltonian(6, seed=1)
    init = InitialState.domain_wall(6)
    a = run_protocol_b(s, init, 1.0, 5, rng=rng_for(1, 0, 0))
    b = run_protocol_b(s, init, 1.0, 5, rng=rng_for(1, 0, 0))
    assert np.array_equal(a.values, b.values)


def test_average_hamiltonian_reference():
    s = build_hamiltonian(6, seed=2)
    init = InitialState.domain_wall(6)
    times = np.linspace(0, 3, 7)
    v = average_hamiltonian_variance(s, init, times)
    assert v[0] == pytest.approx(1.0)
    # same short-time curvature as the sample by construction
    h = 1e-3
    fd = 2 * (average_hamiltonian_variance(s, init, [h])[0] - 1.0) / h**2
    assert fd == pytest.approx(curvature_g(s.couplings, init.m), rel=1e-4)
    u = uniform_couplings(4, 0.2)
    assert np.all(u[np.triu_indices(4, 1)] == 0.2) and np.all(np.diag(u) == 0)


# -- rho_rnd -------------------------------------------------------------------------


def brute_symmetrized(rdms):
    n = len(rdms)
    acc = 0
    perms = list(itertools.permutations(range(n)))
    for p in perms:
        op = np.ones((1, 1))
        for j in p:
            op = np.kron(op, rdms[j])
        acc = acc + op
    return acc / len(perms)


def test_symmetrized_product_matches_enumeration():
    rng = np.random.default_rng(0)
    psi = random_state(4, rng)
    from nuflavor.statevector import single_qubit_rdms

    rdms = single_qubit_rdms(psi)
    assert np.allclose(symmetrized_product(rdms), brute_symmetrized(rdms), atol=1e-14)
    rho = rho_rnd(psi)
    assert np.trace(rho).real == pytest.approx(1.0)


def test_trace_distance_basics():
    rho = rho_rnd(random_state(3, np.random.default_rng(1)))
    assert trace_distance(rho, rho) == 0.0
    a = np.diag([1.0, 0.0])
    b = np.diag([0.0, 1.0])
    assert trace_distance(a, b) == pytest.approx(1.0)


def test_rho_rnd_distance_zero_at_t0():
    s = build_hamiltonian(6, seed=3)
    assert rho_rnd_distance(s, InitialState.domain_wall(6), 0.0, rng_for(3)) == 0.0


def test_rho_rnd_distance_small_and_bounded():
    s = build_hamiltonian(6, seed=3)
    d = rho_rnd_distance(s, InitialState.domain_wall(6), 3.0, rng_for(3), n_permutations=10)
    assert 0.0 <= d <= 1.0


def test_rho_rnd_ensemble_reports_both_averages():
    samples = [build_hamiltonian(4, seed=1, realization_id=k) for k in range(3)]
    out = rho_rnd_ensemble(samples, InitialState.domain_wall(4), 2.0, rng_for(1), n_permutations=5)
    assert out["per_realization"].shape == (3,)
    assert out["mean"] == pytest.approx(out["per_realization"].mean())
    # convexity of the trace norm
    assert out["of_means"] <= out["mean"] + 1e-12


def test_rho_rnd_size_guard():
    with pytest.raises(ResourceLimitError):
        rho_rnd_distance(build_hamiltonian(10), InitialState.domain_wall(10), 1.0)
