"""Randomized SWAP-network circuits with short-time curvature matching.

A random schedule keeps the all-SWAP layer structure of the Trotter step but
draws every gate coupling uniformly from the ``n(n-1)/2`` couplings of a
sample. To order ``tau**2`` the circuit acts like ``exp(-i tau H_eff)``, where
``H_eff`` accumulates each drawn coupling on the pair of neutrinos that meet
in that slot. Matching the curvature of the flavor variance at ``t = 0``
fixes the rescaling ``alpha = sqrt(g / g_R)`` and the per-layer time
parameter ``tau = alpha * t`` for a circuit that should represent physical
time ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from nuflavor.errors import (
    DegenerateScheduleError,
    InvalidParameterError,
    ResourceLimitError,
    ShapeError,
)
from nuflavor.series import ObservableSeries
from nuflavor.statevector import (
    HALF_PI,
    DenseOracle,
    InitialState,
    apply_circuit,
    flavor_variance,
    single_qubit_rdms,
    swap_network,
)

BACKENDS = ("statevector", "mps")
MAX_SCHEDULE_RETRIES = 100
MAX_RHO_RND_QUBITS = 8
_SEED_BOUND = 2**63 - 1


@dataclass
class RandomSchedule:
    """``L`` all-SWAP layers with couplings ``h[l, q]`` drawn from a sample.

    ``pairs[l, q]`` holds the labels (initial qubit positions) of the two
    neutrinos meeting in slot ``q`` of layer ``l``.
    """

    n: int
    h: np.ndarray
    pairs: np.ndarray
    final_order: np.ndarray
    seed: int | None = None
    k: int | None = None
    s: int | None = None

    @property
    def n_layers(self):
        return self.h.shape[0]

    def angles(self, tau):
        return np.ascontiguousarray(tau * self.h + HALF_PI)


@dataclass
class RescalingRecord:
    g: float
    g_R: float
    alpha: float


def build_random_schedule(sample, n_layers, rng, seed=None, k=None, s=None):
    """Draw ``n_layers`` layers of ``n - 1`` couplings, uniform with replacement."""
    if n_layers < 1:
        raise InvalidParameterError(f"need at least one layer, got {n_layers}")
    values = sample.pair_values()
    n = sample.n
    h = values[rng.integers(0, values.size, size=(n_layers, n - 1))]
    pairs, orders = swap_network(n, n_layers)
    return RandomSchedule(
        n=n, h=np.ascontiguousarray(h), pairs=pairs, final_order=orders[-1], seed=seed, k=k, s=s
    )


def seeded_schedule(sample, n_layers, seed, k=None, s=None):
    return build_random_schedule(
        sample, n_layers, np.random.default_rng(seed), seed=seed, k=k, s=s
    )


def effective_coupling_matrix(schedule):
    """Accumulate every slot coupling on the neutrino pair it acts on."""
    n = schedule.n
    mat = np.zeros((n, n))
    a = schedule.pairs[..., 0].ravel()
    b = schedule.pairs[..., 1].ravel()
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    np.add.at(mat, (lo, hi), schedule.h.ravel())
    return mat + mat.T


def curvature_g(couplings, m):
    """Second time derivative of the flavor variance at ``t = 0``.

    ``-(4/N) sum_{j,k} mu_jk^2 (1 - m_j m_k)`` for a Z-basis product state
    with eigenvalues ``m``.
    """
    c = np.asarray(couplings, dtype=float)
    m = np.asarray(m, dtype=float)
    if c.shape != (m.size, m.size):
        raise ShapeError(f"couplings {c.shape} do not match m of length {m.size}")
    if not np.all(np.abs(m) == 1.0):
        raise InvalidParameterError("m entries must be +1 or -1")
    return float(-(4.0 / m.size) * np.sum(c * c * (1.0 - np.outer(m, m))))


def rescaling_alpha(sample, initial, schedule, circuit_initial=None):
    """Curvature-matched rescaling for one schedule.

    ``g`` uses the physical couplings with ``initial``; ``g_R`` uses the
    schedule's effective couplings with the state fed to the circuit
    (``circuit_initial``, default ``initial``).
    """
    circuit_initial = initial if circuit_initial is None else circuit_initial
    if not initial.has_misaligned_pair():
        raise InvalidParameterError("initial state has no misaligned pair; alpha undefined")
    g = curvature_g(sample.couplings, initial.m)
    g_r = curvature_g(effective_coupling_matrix(schedule), circuit_initial.m)
    if g_r == 0.0:
        raise DegenerateScheduleError("schedule never couples opposite flavors (g_R = 0)")
    return RescalingRecord(g=g, g_R=g_r, alpha=float(np.sqrt(g / g_r)))


def draw_matched_schedule(sample, initial, circuit_initial, n_layers, rng, k=None, s=None):
    """Draw schedules until one couples opposite flavors; returns ``(schedule, RescalingRecord)``."""
    for _ in range(MAX_SCHEDULE_RETRIES):
        seed = int(rng.integers(0, _SEED_BOUND))
        sched = seeded_schedule(sample, n_layers, seed, k=k, s=s)
        try:
            return sched, rescaling_alpha(sample, initial, sched, circuit_initial)
        except DegenerateScheduleError:
            continue
    raise DegenerateScheduleError(
        f"no non-degenerate {n_layers}-layer schedule after {MAX_SCHEDULE_RETRIES} draws"
    )


def randomized_state(schedule, circuit_initial, tau):
    psi = circuit_initial.statevector()
    return apply_circuit(psi, schedule.angles(tau))


def randomized_variance(schedule, circuit_initial, tau, backend="statevector", chi_max=None,
                        with_weight=False):
    """Flavor variance after the randomized circuit with per-layer time ``tau``.

    With ``with_weight`` returns ``(variance, truncation_weight)``; the weight
    is 0 for the statevector backend.
    """
    if backend == "statevector":
        v, w = flavor_variance(randomized_state(schedule, circuit_initial, tau)), 0.0
    elif backend == "mps":
        from nuflavor import mps

        state = mps.mps_from_product(circuit_initial)
        chi = chi_max if chi_max is not None else 1 << (schedule.n // 2)
        mps.mps_apply_circuit(state, schedule.angles(tau), chi)
        v, w = mps.mps_variance(state), state.truncation_weight
    else:
        raise InvalidParameterError(f"unknown backend {backend!r}; choose from {BACKENDS}")
    return (v, w) if with_weight else v


def _series(times, values, columns, meta):
    return ObservableSeries(times=times, values=values, kind="variance", meta=meta, columns=columns)


def run_protocol_a(
    sample,
    initial,
    n_layers,
    times,
    backend="statevector",
    rng=None,
    circuit_initial=None,
    chi_max=None,
    meta=None,
):
    """Fixed depth, variable step: ``V_A(t) = V_R(alpha t, L)``.

    A fresh schedule (and its own ``alpha``) is drawn for every time point.
    """
    rng = np.random.default_rng() if rng is None else rng
    circuit_initial = initial if circuit_initial is None else circuit_initial
    times = np.asarray(times, dtype=float)
    vals, alpha, g, g_r, seeds, weights = [], [], [], [], [], []
    for t in times:
        sched, rec = draw_matched_schedule(sample, initial, circuit_initial, n_layers, rng)
        v, w = (1.0, 0.0) if t == 0 else randomized_variance(
            sched, circuit_initial, rec.alpha * t, backend, chi_max, with_weight=True
        )
        vals.append(v)
        weights.append(w)
        alpha.append(rec.alpha)
        g.append(rec.g)
        g_r.append(rec.g_R)
        seeds.append(sched.seed)
    cols = {
        "alpha": np.array(alpha),
        "g": np.array(g),
        "g_R": np.array(g_r),
        "schedule_seed": np.array(seeds, dtype=np.int64),
    }
    if backend == "mps":
        cols["truncation_weight"] = np.array(weights)
    m = {"backend": backend, "layers": n_layers, "protocol": "A"}
    m.update(meta or {})
    return _series(times, vals, cols, m)


def run_protocol_b(
    sample,
    initial,
    delta_t,
    max_layers,
    backend="statevector",
    rng=None,
    circuit_initial=None,
    chi_max=None,
    meta=None,
):
    """Fixed step, variable depth: ``V_B(l dt) = V_R(alpha(l) l dt, l)``.

    Times are ``0, dt, ..., max_layers * dt``; the ``l = 0`` point is the
    unevolved state.
    """
    if not delta_t > 0:
        raise InvalidParameterError("delta_t must be positive")
    rng = np.random.default_rng() if rng is None else rng
    circuit_initial = initial if circuit_initial is None else circuit_initial
    g0 = curvature_g(sample.couplings, initial.m)
    times = [0.0]
    vals, alpha, g, g_r, seeds, layers = [1.0], [np.nan], [g0], [np.nan], [-1], [0]
    weights = [0.0]
    for l in range(1, max_layers + 1):
        sched, rec = draw_matched_schedule(sample, initial, circuit_initial, l, rng)
        t = l * delta_t
        times.append(t)
        v, w = randomized_variance(sched, circuit_initial, rec.alpha * t, backend, chi_max, True)
        vals.append(v)
        weights.append(w)
        alpha.append(rec.alpha)
        g.append(rec.g)
        g_r.append(rec.g_R)
        seeds.append(sched.seed)
        layers.append(l)
    cols = {
        "alpha": np.array(alpha),
        "g": np.array(g),
        "g_R": np.array(g_r),
        "schedule_seed": np.array(seeds, dtype=np.int64),
        "layers": np.array(layers, dtype=np.int64),
    }
    if backend == "mps":
        cols["truncation_weight"] = np.array(weights)
    m = {"backend": backend, "protocol": "B", "delta_t": delta_t}
    m.update(meta or {})
    return _series(times, vals, cols, m)


# -- average-Hamiltonian reference --------------------------------------------------


def uniform_couplings(n, value=1.0):
    c = np.full((n, n), float(value))
    np.fill_diagonal(c, 0.0)
    return c


def average_hamiltonian_variance(sample, initial, times, average=None, oracle=None):
    """Variance under the average Hamiltonian, time-rescaled to the exact curvature.

    ``average`` is the averaged coupling matrix (default: every pair gets the
    sample's mean coupling). Its generator is rescaled by ``sqrt(g / g_avg)``,
    which is the large-depth limit of ``alpha * t * H_eff`` for fixed-depth
    runs.
    """
    n = sample.n
    avg = uniform_couplings(n, sample.pair_values().mean()) if average is None else np.asarray(average)
    g = curvature_g(sample.couplings, initial.m)
    g_avg = curvature_g(avg, initial.m)
    scale = np.sqrt(g / g_avg)
    oracle = oracle or DenseOracle(avg * scale)
    psi0 = initial.statevector()
    return np.array([flavor_variance(oracle.evolve(psi0, t)) for t in np.asarray(times, dtype=float)])


# -- permutation-averaged marginals --------------------------------------------------


def symmetrized_product(rdms):
    """``(1/N!) sum_sigma (x)_j rdms[sigma(j)]`` without enumerating permutations.

    Builds the sum over orderings by dynamic programming over subsets: the
    operator for a subset is the sum over its last member of
    ``T[subset - {i}] (x) rdms[i]``.
    """
    rdms = [np.asarray(r) for r in rdms]
    n = len(rdms)
    if n > MAX_RHO_RND_QUBITS:
        raise ResourceLimitError(f"rho_rnd limited to n <= {MAX_RHO_RND_QUBITS}, got {n}")
    level = {0: np.ones((1, 1), dtype=np.complex128)}
    for _ in range(n):
        nxt = {}
        for mask, op in level.items():
            for i in range(n):
                if mask >> i & 1:
                    continue
                new = mask | (1 << i)
                term = np.kron(op, rdms[i])
                if new in nxt:
                    nxt[new] += term
                else:
                    nxt[new] = term
        level = nxt
    return level[(1 << n) - 1] / factorial(n)


def rho_rnd(psi):
    return symmetrized_product(single_qubit_rdms(psi))


def trace_distance(a, b):
    """Half the trace norm of ``a - b`` for Hermitian matrices."""
    d = np.asarray(a) - np.asarray(b)
    return float(0.5 * np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T))).sum())


def rho_rnd_pair(
    sample,
    initial,
    t,
    rng=None,
    n_permutations=50,
    delta_t=1.0,
    schedules=None,
    oracle=None,
):
    """``(rho_rnd of the exact state, permutation-averaged rho_rnd of the channel)``.

    The randomized side uses ``l = round(t / delta_t)`` layers with the
    fixed-step matching ``tau = alpha(l) * t``. ``schedules`` may supply
    explicit ``(circuit_initial, schedule)`` pairs instead of random draws.
    """
    n = sample.n
    if n > MAX_RHO_RND_QUBITS:
        raise ResourceLimitError(f"rho_rnd distance limited to n <= {MAX_RHO_RND_QUBITS}")
    rng = np.random.default_rng() if rng is None else rng
    oracle = oracle or DenseOracle(sample.couplings)
    exact = rho_rnd(oracle.evolve(initial.statevector(), t))
    n_layers = int(round(t / delta_t))
    if n_layers == 0:
        return exact, rho_rnd(initial.statevector())
    if schedules is None:
        schedules = []
        for _ in range(n_permutations):
            phi_s = initial.random_permutation(rng)
            sched, _ = draw_matched_schedule(sample, initial, phi_s, n_layers, rng)
            schedules.append((phi_s, sched))
    acc = np.zeros_like(exact)
    for phi_s, sched in schedules:
        rec = rescaling_alpha(sample, initial, sched, phi_s)
        acc += rho_rnd(randomized_state(sched, phi_s, rec.alpha * t))
    return exact, acc / len(schedules)


def rho_rnd_distance(sample, initial, t, rng=None, n_permutations=50, delta_t=1.0,
                     schedules=None, oracle=None):
    """Trace distance between the exact and channel-averaged ``rho_rnd`` for one sample."""
    exact, rnd = rho_rnd_pair(sample, initial, t, rng, n_permutations, delta_t, schedules, oracle)
    return trace_distance(exact, rnd)


def rho_rnd_ensemble(samples, initial, t, rng=None, n_permutations=50, delta_t=1.0):
    """Distances over Hamiltonian realizations, averaged both ways.

    Returns ``per_realization`` distances, their ``mean``, and
    ``of_means``: the distance between the realization-averaged matrices.
    """
    rng = np.random.default_rng() if rng is None else rng
    dists, ex_sum, rnd_sum = [], 0.0, 0.0
    samples = list(samples)
    for sample in samples:
        exact, rnd = rho_rnd_pair(sample, initial, t, rng, n_permutations, delta_t)
        dists.append(trace_distance(exact, rnd))
        ex_sum = ex_sum + exact
        rnd_sum = rnd_sum + rnd
    return {
        "per_realization": np.array(dists),
        "mean": float(np.mean(dists)),
        "of_means": trace_distance(ex_sum / len(samples), rnd_sum / len(samples)),
    }
