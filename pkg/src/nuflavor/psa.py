"""Phase-space approximation: classical spin trajectories with random initial data.

Each event evolves ``n`` classical 3-vectors under
``dS_i/dt = sum_{j != i} mu_ij S_j x S_i`` with fixed-step RK4. Quantum
expectation values of Pauli strings are replaced by averages over events.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nuflavor.errors import IntegrationDivergedError, InvalidParameterError
from nuflavor.series import ObservableSeries

DEFAULT_STEP = 1e-2


@dataclass
class PSAEnsemble:
    """``spins`` has shape ``(n_events, n, 3)`` with components (X, Y, Z)."""

    spins: np.ndarray
    couplings: np.ndarray
    step: float = DEFAULT_STEP

    @property
    def n(self):
        return self.spins.shape[1]

    @property
    def n_events(self):
        return self.spins.shape[0]


def sample_psa_initial(initial, n_events, rng, couplings=None):
    """Bi-valued sampling on a Z eigenstate: Z = m_i exactly, X and Y = +-1 fairly."""
    if n_events < 1:
        raise InvalidParameterError("need at least one event")
    n = initial.n
    spins = np.empty((n_events, n, 3))
    spins[:, :, :2] = 2.0 * rng.integers(0, 2, size=(n_events, n, 2)) - 1.0
    spins[:, :, 2] = initial.m
    c = np.zeros((n, n)) if couplings is None else np.asarray(couplings, dtype=float)
    return PSAEnsemble(spins=spins, couplings=c)


def _rate(state, couplings):
    # state is component-major (3, n, E): the field is one batched GEMM and
    # the cross product is plain contiguous arithmetic
    f = np.matmul(couplings, state)
    out = np.empty_like(state)
    np.multiply(f[1], state[2], out=out[0])
    out[0] -= f[2] * state[1]
    np.multiply(f[2], state[0], out=out[1])
    out[1] -= f[0] * state[2]
    np.multiply(f[0], state[1], out=out[2])
    out[2] -= f[1] * state[0]
    return out


def precession_rate(spins, couplings):
    """Right-hand side ``sum_j mu_ij S_j x S_i`` for spins of shape ``(E, n, 3)``."""
    state = np.ascontiguousarray(np.transpose(spins, (2, 1, 0)))
    return np.transpose(_rate(state, np.asarray(couplings, dtype=float)), (2, 1, 0))


def _rk4(state, couplings, h):
    k1 = _rate(state, couplings)
    k2 = _rate(state + (0.5 * h) * k1, couplings)
    k3 = _rate(state + (0.5 * h) * k2, couplings)
    k4 = _rate(state + h * k3, couplings)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(spins, couplings, h):
    """One RK4 step for spins of shape ``(E, n, 3)``."""
    state = np.ascontiguousarray(np.transpose(spins, (2, 1, 0)))
    return np.transpose(_rk4(state, np.asarray(couplings, dtype=float), h), (2, 1, 0)).copy()


def _propagate(ensemble, output_times, step):
    # yields the component-major state (3, n, E) at each output time
    h = ensemble.step if step is None else step
    if not h > 0:
        raise InvalidParameterError("integration step must be positive")
    times = np.asarray(output_times, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise InvalidParameterError("output times must be non-negative and sorted")
    c = np.asarray(ensemble.couplings, dtype=float)
    state = np.ascontiguousarray(np.transpose(ensemble.spins, (2, 1, 0)))
    t_prev = 0.0
    for t in times:
        span = t - t_prev
        if span > 0:
            nsub = max(1, int(np.ceil(span / h - 1e-9)))
            hs = span / nsub
            for _ in range(nsub):
                state = _rk4(state, c, hs)
            if not np.all(np.isfinite(state)):
                raise IntegrationDivergedError(f"non-finite spins at t={t}")
        yield state
        t_prev = t


def integrate_psa(ensemble, output_times, step=None):
    """Snapshots ``(T, n_events, n, 3)`` at ``output_times``.

    Between outputs the interval is cut into equal sub-steps no larger
    than ``step``.
    """
    times = np.asarray(output_times, dtype=float)
    snaps = np.empty((times.size,) + ensemble.spins.shape)
    for idx, state in enumerate(_propagate(ensemble, times, step)):
        snaps[idx] = np.transpose(state, (2, 1, 0))
    return snaps


def psa_z(snapshots):
    """Event-averaged Z per neutrino, shape ``(T, n)``."""
    return snapshots[..., 2].mean(axis=1)


def psa_variance(snapshots, times, meta=None):
    zbar = psa_z(snapshots)
    vals = np.mean(zbar * zbar, axis=1)
    m = {"backend": "psa"}
    m.update(meta or {})
    return ObservableSeries(times=times, values=vals, kind="variance", meta=m)


def classical_energy(spins, couplings):
    """Per-event ``sum_{i<j} mu_ij S_i . S_j``."""
    gram = np.einsum("eik,ejk->eij", spins, spins)
    return 0.5 * np.einsum("ij,eij->e", couplings, gram)


def run_psa(couplings, initial, times, n_events, rng, step=DEFAULT_STEP, chunk=2000, meta=None):
    """Variance series from ``n_events`` trajectories, integrated in chunks."""
    times = np.asarray(times, dtype=float)
    zsum = np.zeros((times.size, initial.n))
    done = 0
    while done < n_events:
        size = min(chunk, n_events - done)
        ens = sample_psa_initial(initial, size, rng, couplings)
        for idx, state in enumerate(_propagate(ens, times, step)):
            zsum[idx] += state[2].sum(axis=1)
        done += size
    zbar = zsum / n_events
    m = {"backend": "psa", "n_events": n_events, "step": step}
    m.update(meta or {})
    return ObservableSeries(
        times=times, values=np.mean(zbar * zbar, axis=1), kind="variance", meta=m
    )
