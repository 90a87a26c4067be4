"""Full statevector evolution on a qubit chain.

Amplitudes are a 1-D complex128 array of length ``2**n``; qubit 0 is the
most significant bit of the index. Neutrino ``j`` sits on qubit ``j`` at
``t = 0``; SWAP-network circuits move neutrinos between qubits and every
routine that measures takes the current ``qubit_to_neutrino`` map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nuflavor import kernels
from nuflavor.errors import (
    InvalidParameterError,
    ResourceLimitError,
    ShapeError,
    UnsupportedSizeError,
)

HALF_PI = 0.5 * np.pi
MAX_DENSE_QUBITS = 14
MAX_STATEVECTOR_QUBITS = 26


# -- states -----------------------------------------------------------------


@dataclass(frozen=True)
class InitialState:
    """Z-basis product state; ``bits[j]`` is the flavor bit of neutrino ``j``."""

    bits: tuple

    @property
    def n(self):
        return len(self.bits)

    @property
    def m(self):
        """Eigenvalues of Z_j on the state (+1 for bit 0, -1 for bit 1)."""
        return 1.0 - 2.0 * np.asarray(self.bits, dtype=float)

    @classmethod
    def domain_wall(cls, n):
        return cls(tuple([0] * (n // 2) + [1] * (n - n // 2)))

    @classmethod
    def polarized(cls, n):
        return cls(tuple([0] * n))

    @classmethod
    def alternating(cls, n):
        return cls(tuple(j % 2 for j in range(n)))

    def permuted(self, perm):
        """State with ``bits'[j] = bits[perm[j]]``."""
        perm = np.asarray(perm)
        if sorted(perm.tolist()) != list(range(self.n)):
            raise InvalidParameterError("perm is not a permutation")
        return InitialState(tuple(int(self.bits[p]) for p in perm))

    def random_permutation(self, rng):
        return self.permuted(rng.permutation(self.n))

    def statevector(self):
        return product_state(self.bits)

    def has_misaligned_pair(self):
        return 0 < sum(self.bits) < self.n


def product_state(bits):
    n = len(bits)
    if n > MAX_STATEVECTOR_QUBITS:
        raise ResourceLimitError(f"{n} qubits exceeds the statevector limit")
    idx = 0
    for b in bits:
        idx = (idx << 1) | int(b)
    psi = np.zeros(1 << n, dtype=np.complex128)
    psi[idx] = 1.0
    return psi


def num_qubits(psi):
    n = int(psi.shape[0]).bit_length() - 1
    if psi.ndim != 1 or (1 << n) != psi.shape[0]:
        raise ShapeError(f"state length {psi.shape} is not a power of two")
    return n


# -- gates --------------------------------------------------------------------


def apply_pair_rotation(psi, i, j, theta):
    """Apply ``cos(theta) I - i sin(theta) P_ij`` in place and return ``psi``."""
    n = num_qubits(psi)
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"qubit indices ({i}, {j}) out of range for n={n}")
    if i == j:
        raise InvalidParameterError("pair rotation needs two distinct qubits")
    kernels.apply_pair(psi, n, int(i), int(j), float(theta))
    return psi


def layer_angles(t, h, p):
    h = np.asarray(h, dtype=float)
    p = np.asarray(p, dtype=float)
    if h.shape != p.shape:
        raise ShapeError(f"h{h.shape} and p{p.shape} differ")
    return np.ascontiguousarray(t * h + p * HALF_PI)


def apply_w_layer(psi, t, h, p):
    """One W(t, h, p) layer: even bonds first, then odd bonds."""
    n = num_qubits(psi)
    ang = layer_angles(t, h, p)
    if ang.shape != (n - 1,):
        raise ShapeError(f"expected {n - 1} bond angles, got {ang.shape}")
    kernels.apply_layer(psi, n, ang)
    return psi


def apply_circuit(psi, angles):
    """Apply consecutive layers given a ``(L, n-1)`` array of gate angles."""
    n = num_qubits(psi)
    angles = np.ascontiguousarray(angles, dtype=float)
    if angles.ndim != 2 or angles.shape[1] != n - 1:
        raise ShapeError(f"expected (L, {n - 1}) angles, got {angles.shape}")
    kernels.apply_layers(psi, n, angles)
    return psi


# -- SWAP-network bookkeeping -------------------------------------------------


@dataclass
class LayerSchedule:
    """Neutrino routing through layers of nearest-neighbour gates.

    ``pairs[l, q]`` are the neutrinos on qubits ``q, q+1`` when gate ``q`` of
    layer ``l`` fires (odd gates see the order left by the even sublayer).
    ``qubit_to_neutrino[l]`` is the map at the start of layer ``l``; the last
    row is the map after the final layer.
    """

    n: int
    h: np.ndarray
    flags: np.ndarray
    pairs: np.ndarray
    qubit_to_neutrino: np.ndarray

    @property
    def n_layers(self):
        return self.h.shape[0]

    @property
    def final_order(self):
        return self.qubit_to_neutrino[-1]

    def angles(self, t):
        return np.ascontiguousarray(t * self.h + self.flags * HALF_PI)


def route(n, flags, start=None):
    """Track neutrino labels through layers with swap ``flags`` of shape (L, n-1).

    Returns ``(pairs, orders)`` as described on :class:`LayerSchedule`.
    """
    flags = np.asarray(flags, dtype=np.int64)
    n_layers = flags.shape[0]
    order = np.arange(n) if start is None else np.array(start, dtype=np.int64)
    pairs = np.empty((n_layers, n - 1, 2), dtype=np.int64)
    orders = np.empty((n_layers + 1, n), dtype=np.int64)
    for l in range(n_layers):
        orders[l] = order
        for parity in (0, 1):
            for q in range(parity, n - 1, 2):
                pairs[l, q] = order[q], order[q + 1]
                if flags[l, q]:
                    order[q], order[q + 1] = order[q + 1], order[q]
    orders[n_layers] = order
    return pairs, orders


def swap_network(n, n_layers, start=None):
    """Routing with a SWAP on every gate."""
    return route(n, np.ones((n_layers, n - 1), dtype=np.int64), start)


def trotter_schedule(couplings, start=None):
    """One first-order Trotter step: n/2 all-swap layers, couplings routed by label."""
    c = np.asarray(couplings)
    n = c.shape[0]
    if n % 2:
        raise UnsupportedSizeError(f"SWAP-network Trotter step needs even n, got {n}")
    pairs, orders = swap_network(n, n // 2, start)
    h = c[pairs[..., 0], pairs[..., 1]]
    flags = np.ones_like(h, dtype=np.int64)
    return LayerSchedule(n=n, h=h, flags=flags, pairs=pairs, qubit_to_neutrino=orders)


class TrotterPropagator:
    """SWAP-network product formula for ``H = sum_{i<j} mu_ij P_ij``.

    Order 1 applies the n/2 layers once per step, which reverses the qubit
    order. Order 2 applies the layers with half the step and then replays the
    same gates in reverse, which restores the qubit order every step.
    """

    def __init__(self, couplings, order=2):
        if order not in (1, 2):
            raise InvalidParameterError(f"Trotter order must be 1 or 2, got {order}")
        c = np.asarray(couplings, dtype=float)
        self.n = c.shape[0]
        self.order = order
        self.forward = trotter_schedule(c)
        self.backward = trotter_schedule(c, start=self.forward.final_order)

    def step(self, psi, dt, qubit_to_neutrino):
        """Advance one step of size ``dt``; returns the new qubit map."""
        n = self.n
        if self.order == 2:
            ang = self.forward.angles(0.5 * dt)
            kernels.apply_layers(psi, n, ang)
            kernels.apply_layers_reversed(psi, n, ang)
            return qubit_to_neutrino
        if np.array_equal(qubit_to_neutrino, self.forward.qubit_to_neutrino[0]):
            sched = self.forward
        else:
            sched = self.backward
        kernels.apply_layers(psi, n, sched.angles(dt))
        return sched.final_order.copy()

    def evolve(self, psi, t, steps, qubit_to_neutrino=None):
        if steps < 1:
            raise InvalidParameterError("need at least one Trotter step")
        if t < 0:
            raise InvalidParameterError("t must be non-negative")
        order = np.arange(self.n) if qubit_to_neutrino is None else qubit_to_neutrino
        dt = t / steps
        for _ in range(steps):
            order = self.step(psi, dt, order)
        return order


def trotter_evolve(psi, sample, t, steps, order=2):
    """Evolve ``psi`` in place for time ``t`` with ``steps`` Trotter steps.

    Returns ``(psi, qubit_to_neutrino)``.
    """
    c = getattr(sample, "couplings", sample)
    n = num_qubits(psi)
    if n % 2:
        raise UnsupportedSizeError(f"SWAP-network Trotter step needs even n, got {n}")
    prop = TrotterPropagator(c, order)
    q2n = prop.evolve(psi, t, steps)
    return psi, q2n


# -- dense reference ------------------------------------------------------------


class DenseOracle:
    """Exact ``exp(-i t H)`` by diagonalization inside each magnetization sector.

    ``H`` commutes with total Z, so each Hamming-weight sector is diagonalized
    independently; eigensystems are cached, making repeated times cheap.
    """

    def __init__(self, couplings, max_qubits=MAX_DENSE_QUBITS):
        c = np.asarray(couplings, dtype=float)
        self.n = c.shape[0]
        if self.n > max_qubits:
            raise ResourceLimitError(
                f"dense oracle limited to n <= {max_qubits}, got n={self.n}"
            )
        self.couplings = c
        dim = 1 << self.n
        idx = np.arange(dim)
        self._bits = ((idx[:, None] >> (self.n - 1 - np.arange(self.n))) & 1).astype(np.int8)
        self._weight = self._bits.sum(axis=1)
        self._sectors = {}

    def _sector(self, w):
        if w in self._sectors:
            return self._sectors[w]
        n = self.n
        members = np.flatnonzero(self._weight == w)
        pos = np.full(1 << n, -1, dtype=np.int64)
        pos[members] = np.arange(members.size)
        bits = self._bits[members]
        ham = np.zeros((members.size, members.size))
        for i in range(n):
            for j in range(i + 1, n):
                mu = self.couplings[i, j]
                if mu == 0.0:
                    continue
                same = bits[:, i] == bits[:, j]
                rows = np.arange(members.size)
                ham[rows[same], rows[same]] += mu
                flip = members[~same] ^ ((1 << (n - 1 - i)) | (1 << (n - 1 - j)))
                ham[pos[flip], rows[~same]] += mu
        evals, evecs = np.linalg.eigh(ham)
        self._sectors[w] = (members, evals, evecs)
        return self._sectors[w]

    def evolve(self, psi, t):
        """Return ``exp(-i t H) psi`` as a new array."""
        if psi.shape[0] != 1 << self.n:
            raise ShapeError("state dimension does not match the Hamiltonian")
        if t == 0:
            return psi.copy()
        out = np.zeros_like(psi)
        for w in np.unique(self._weight[np.flatnonzero(psi)]):
            members, evals, evecs = self._sector(int(w))
            coeff = evecs.conj().T @ psi[members]
            out[members] = evecs @ (np.exp(-1j * t * evals) * coeff)
        return out


def dense_oracle_evolve(psi, sample, t):
    """Exact evolution of ``psi`` for time ``t`` (returns a new array)."""
    c = getattr(sample, "couplings", sample)
    return DenseOracle(c).evolve(psi, t)


def energy(psi, couplings):
    """<H> = sum_{i<j} mu_ij <P_ij>."""
    n = num_qubits(psi)
    c = np.asarray(couplings)
    tens = psi.reshape((2,) * n)
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            if c[i, j] != 0.0:
                swapped = np.swapaxes(tens, i, j)
                total += c[i, j] * np.vdot(tens, swapped).real
    return total


# -- observables --------------------------------------------------------------------


def single_qubit_rdms(psi):
    """``(n, 2, 2)`` reduced density matrices indexed by qubit position."""
    n = num_qubits(psi)
    tens = psi.reshape((2,) * n)
    out = np.empty((n, 2, 2), dtype=np.complex128)
    for q in range(n):
        mat = np.moveaxis(tens, q, 0).reshape(2, -1)
        out[q] = mat @ mat.conj().T
    return out


def qubit_entropy(rdm):
    """Von Neumann entropy (natural log) of a 2x2 density matrix."""
    evals = np.clip(np.linalg.eigvalsh(rdm), 0.0, 1.0)
    nz = evals[evals > 1e-300]
    return float(-(nz * np.log(nz)).sum())


def measure_flavor_observables(psi, neutrino_order=None, entropies=True):
    """Per-neutrino ``z``, the flavor variance and single-neutrino entropies.

    ``neutrino_order[q]`` is the neutrino hosted by qubit ``q``.
    """
    n = num_qubits(psi)
    order = np.arange(n) if neutrino_order is None else np.asarray(neutrino_order)
    if order.shape != (n,):
        raise ShapeError(f"neutrino_order must have length {n}")
    zq = kernels.z_expectations(psi, n)
    z = np.empty(n)
    z[order] = zq
    out = {"z": z, "variance": float(np.mean(z * z))}
    if entropies:
        rdms = single_qubit_rdms(psi)
        ent = np.empty(n)
        ent[order] = [qubit_entropy(r) for r in rdms]
        out["entropies"] = ent
    return out


def flavor_variance(psi):
    """Mean squared Z over qubits (invariant under qubit relabeling)."""
    n = num_qubits(psi)
    z = kernels.z_expectations(psi, n)
    return float(np.mean(z * z))


def to_neutrino_order(psi, qubit_to_neutrino):
    """Relabel qubits so that qubit ``j`` hosts neutrino ``j`` (returns a copy)."""
    n = num_qubits(psi)
    q2n = np.asarray(qubit_to_neutrino)
    inv = np.argsort(q2n)
    return np.ascontiguousarray(np.transpose(psi.reshape((2,) * n), inv)).reshape(-1)


def loschmidt_echo(psi_t, psi_0):
    if psi_t.shape != psi_0.shape:
        raise ShapeError(f"state shapes differ: {psi_t.shape} vs {psi_0.shape}")
    return float(abs(np.vdot(psi_0, psi_t)) ** 2)


# -- series drivers -----------------------------------------------------------------


def _check_times(times):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0) or times[0] < 0:
        raise InvalidParameterError("times must be non-negative and strictly increasing")
    return times


def exact_dynamics(couplings, initial, times, entropies=True, oracle=None):
    """Observables along exact evolution from a product state.

    Returns a dict of arrays ``z (T, n)``, ``variance (T,)``, ``loschmidt (T,)``
    and, if requested, ``entropies (T, n)``.
    """
    times = _check_times(times)
    oracle = oracle or DenseOracle(couplings)
    psi0 = initial.statevector()
    rows = []
    for t in times:
        psi = oracle.evolve(psi0, t)
        obs = measure_flavor_observables(psi, entropies=entropies)
        obs["loschmidt"] = loschmidt_echo(psi, psi0)
        rows.append(obs)
    return _stack(rows, entropies)


def trotter_dynamics(couplings, initial, times, dt, order=2, entropies=True):
    """Observables along SWAP-network Trotter evolution.

    Between consecutive output times the interval is split into
    ``ceil(interval / dt)`` equal steps, so no step exceeds ``dt``.
    """
    times = _check_times(times)
    prop = TrotterPropagator(couplings, order)
    psi0 = initial.statevector()
    psi = psi0.copy()
    q2n = np.arange(prop.n)
    t_prev = 0.0
    rows = []
    for t in times:
        span = t - t_prev
        if span > 0:
            steps = max(1, int(np.ceil(span / dt - 1e-9)))
            q2n = prop.evolve(psi, span, steps, q2n)
        obs = measure_flavor_observables(psi, q2n, entropies=entropies)
        obs["loschmidt"] = loschmidt_echo(to_neutrino_order(psi, q2n), psi0)
        rows.append(obs)
        t_prev = t
    return _stack(rows, entropies)


def _stack(rows, entropies):
    out = {
        "z": np.array([r["z"] for r in rows]),
        "variance": np.array([r["variance"] for r in rows]),
        "loschmidt": np.array([r["loschmidt"] for r in rows]),
    }
    if entropies:
        out["entropies"] = np.array([r["entropies"] for r in rows])
    return out
