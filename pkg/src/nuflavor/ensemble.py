"""Random forward-scattering Hamiltonians.

A realization is ``H = sum_{i<j} mu_ij P_ij`` with
``mu_ij = (mu / n) * (1 - v_i . v_j)`` and velocities drawn from a forward
peaked distribution around the z axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from nuflavor.errors import InvalidParameterError, ShapeError, UnsupportedSizeError

DEFAULT_SIGMA = 0.5


def rng_for(seed, *key):
    """Independent PCG64 stream for ``(seed, *key)``.

    Streams are split with ``SeedSequence`` spawn keys, so a job's randomness
    depends only on its key and never on how many other jobs ran before it.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def sample_velocities(rng, sigma, n):
    """Draw ``n`` unit velocity vectors, returned as an ``(n, 3)`` array.

    ``vz = 1 - |x|`` with ``x ~ N(0, sigma^2)``; draws with ``vz < -1`` are
    redrawn. The azimuth is uniform on ``[0, 2 pi)``.
    """
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    vz = 1.0 - np.abs(rng.normal(0.0, sigma, n))
    bad = vz < -1.0
    while bad.any():
        vz[bad] = 1.0 - np.abs(rng.normal(0.0, sigma, int(bad.sum())))
        bad = vz < -1.0
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    rho = np.sqrt(np.clip(1.0 - vz * vz, 0.0, None))
    return np.column_stack([rho * np.cos(theta), rho * np.sin(theta), vz])


def sample_velocity(rng, sigma):
    """Single ``(vx, vy, vz)`` draw; see :func:`sample_velocities`."""
    return sample_velocities(rng, sigma, 1)[0]


def couplings_from_velocities(velocities, mu=1.0):
    v = np.asarray(velocities, dtype=float)
    n = v.shape[0]
    c = (mu / n) * np.clip(1.0 - v @ v.T, 0.0, 2.0)
    np.fill_diagonal(c, 0.0)
    # exact symmetry regardless of BLAS summation order
    return np.triu(c, 1) + np.triu(c, 1).T


@dataclass
class HamiltonianSample:
    n: int
    mu: float
    velocities: np.ndarray
    couplings: np.ndarray
    seed: int | None = None
    realization_id: int = 0
    sigma: float = DEFAULT_SIGMA
    meta: dict = field(default_factory=dict)

    def pair_values(self):
        """The n(n-1)/2 upper-triangle couplings, row-major."""
        iu = np.triu_indices(self.n, 1)
        return self.couplings[iu]

    def to_json(self):
        il = np.tril_indices(self.n, -1)
        doc = {
            "n": self.n,
            "mu": self.mu,
            "sigma": self.sigma,
            "seed": self.seed,
            "realization_id": self.realization_id,
            "velocities": self.velocities.tolist(),
            "couplings": self.couplings[il].tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        n = int(doc["n"])
        c = np.zeros((n, n))
        il = np.tril_indices(n, -1)
        c[il] = doc["couplings"]
        c = c + c.T
        return cls(
            n=n,
            mu=float(doc["mu"]),
            velocities=np.asarray(doc["velocities"], dtype=float).reshape(n, 3),
            couplings=c,
            seed=doc.get("seed"),
            realization_id=int(doc.get("realization_id", 0)),
            sigma=float(doc.get("sigma", DEFAULT_SIGMA)),
        )


def hamiltonian_from_couplings(couplings, mu=1.0):
    """Wrap an explicit symmetric coupling matrix (no velocities)."""
    c = np.array(couplings, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ShapeError(f"coupling matrix must be square, got {c.shape}")
    if not np.array_equal(c, c.T) or np.any(np.diag(c) != 0):
        raise InvalidParameterError("coupling matrix must be symmetric with zero diagonal")
    n = c.shape[0]
    return HamiltonianSample(n=n, mu=mu, velocities=np.full((n, 3), np.nan), couplings=c)


def build_hamiltonian(n, mu=1.0, seed=0, sigma=DEFAULT_SIGMA, realization_id=0):
    """Draw realization ``realization_id`` of the ``n``-neutrino ensemble."""
    if n < 2 or n % 2:
        raise UnsupportedSizeError(f"n must be even and >= 2, got {n}")
    rng = rng_for(seed, realization_id)
    v = sample_velocities(rng, sigma, n)
    return HamiltonianSample(
        n=n,
        mu=float(mu),
        velocities=v,
        couplings=couplings_from_velocities(v, mu),
        seed=int(seed),
        realization_id=int(realization_id),
        sigma=float(sigma),
    )


def average_coupling_matrix(samples):
    """Entrywise mean of the coupling matrices of ``samples``."""
    samples = list(samples)
    if not samples:
        raise InvalidParameterError("need at least one sample")
    n = samples[0].n
    if any(s.n != n for s in samples):
        raise ShapeError("all samples must share n")
    return np.mean([s.couplings for s in samples], axis=0)
