"""Matrix product states with bond-dimension truncation.

Site tensors have legs ``(left, physical, right)``. The state is kept in
mixed canonical form around ``center``; two-site gates are applied at the
center and split by a truncated SVD.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import least_squares

from nuflavor.errors import FitFailureError, InvalidParameterError, NumericalError
from nuflavor.statevector import HALF_PI

SV_FLOOR = 1e-12


@dataclass
class MPSState:
    tensors: list
    center: int = 0
    truncation_weight: float = 0.0
    weights: list = field(default_factory=list)

    @property
    def n(self):
        return len(self.tensors)

    def bond_dimensions(self):
        return [t.shape[2] for t in self.tensors[:-1]]


def mps_from_product(initial):
    """Bond-dimension-1 MPS of a Z-basis bitstring (``InitialState`` or bits)."""
    bits = getattr(initial, "bits", initial)
    tensors = []
    for b in bits:
        t = np.zeros((1, 2, 1), dtype=np.complex128)
        t[0, int(b), 0] = 1.0
        tensors.append(t)
    return MPSState(tensors=tensors)


def _shift_right(state):
    c = state.center
    a = state.tensors[c]
    chi_l, d, chi_r = a.shape
    q, r = np.linalg.qr(a.reshape(chi_l * d, chi_r))
    state.tensors[c] = q.reshape(chi_l, d, q.shape[1])
    state.tensors[c + 1] = np.tensordot(r, state.tensors[c + 1], axes=(1, 0))
    state.center = c + 1


def _shift_left(state):
    c = state.center
    a = state.tensors[c]
    chi_l, d, chi_r = a.shape
    q, r = np.linalg.qr(a.reshape(chi_l, d * chi_r).T)
    state.tensors[c] = q.T.reshape(q.shape[1], d, chi_r)
    state.tensors[c - 1] = np.tensordot(state.tensors[c - 1], r.T, axes=(2, 0))
    state.center = c - 1


def move_center(state, target):
    while state.center < target:
        _shift_right(state)
    while state.center > target:
        _shift_left(state)


def pair_gate(theta):
    """exp(-i theta P) on two qubits in the basis |00>, |01>, |10>, |11>."""
    c, s = np.cos(theta), np.sin(theta)
    g = np.zeros((4, 4), dtype=np.complex128)
    g[0, 0] = g[3, 3] = complex(c, -s)
    g[1, 1] = g[2, 2] = c
    g[1, 2] = g[2, 1] = -1j * s
    return g


def _svd(mat, bond):
    try:
        return np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        try:
            return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"SVD failed at bond {bond}") from exc


def apply_two_site(state, q, gate, chi_max):
    """Apply a 4x4 ``gate`` to sites ``q, q+1`` and truncate bond ``q``."""
    move_center(state, q)
    a, b = state.tensors[q], state.tensors[q + 1]
    chi_l, chi_r = a.shape[0], b.shape[2]
    theta = np.tensordot(a, b, axes=(2, 0)).reshape(chi_l, 4, chi_r)
    theta = np.einsum("st,atb->asb", gate, theta)
    u, s, vh = _svd(theta.reshape(chi_l * 2, 2 * chi_r), q)
    total = float(np.sum(s * s))
    keep = int(min(chi_max, np.count_nonzero(s > SV_FLOOR * s[0])))
    keep = max(keep, 1)
    discarded = float(np.sum(s[keep:] ** 2)) / total if total > 0 else 0.0
    s = s[:keep] / np.sqrt(np.sum(s[:keep] ** 2))
    state.tensors[q] = u[:, :keep].reshape(chi_l, 2, keep)
    state.tensors[q + 1] = (s[:, None] * vh[:keep]).reshape(keep, 2, chi_r)
    state.center = q + 1
    state.truncation_weight += discarded
    return discarded


def mps_apply_angles(state, angles, chi_max):
    """One layer of pair rotations with gate angles ``angles[q]`` (even, then odd)."""
    if chi_max < 1:
        raise InvalidParameterError("chi_max must be >= 1")
    n = state.n
    for q in range(0, n - 1, 2):
        apply_two_site(state, q, pair_gate(angles[q]), chi_max)
    odd = list(range(1, n - 1, 2))
    # odd gates are disjoint; sweeping right-to-left keeps center moves short
    for q in reversed(odd):
        apply_two_site(state, q, pair_gate(angles[q]), chi_max)
    state.weights.append(state.truncation_weight)
    return state


def mps_apply_layer(state, t, h, p, chi_max):
    """W(t, h, p) on an MPS with truncation to ``chi_max`` after each gate."""
    h = np.asarray(h, dtype=float)
    p = np.asarray(p, dtype=float)
    if h.shape != (state.n - 1,) or p.shape != h.shape:
        raise InvalidParameterError(f"h and p need {state.n - 1} entries")
    return mps_apply_angles(state, t * h + p * HALF_PI, chi_max)


def mps_apply_circuit(state, angles, chi_max):
    for row in np.asarray(angles):
        mps_apply_angles(state, row, chi_max)
    return state


def mps_z(state):
    """<Z_q> at every qubit position (moves the center to the last site)."""
    move_center(state, 0)
    out = np.empty(state.n)
    for q in range(state.n):
        if q > 0:
            _shift_right(state)
        a = state.tensors[q]
        p = np.sum(np.abs(a) ** 2, axis=(0, 2))
        out[q] = (p[0] - p[1]) / (p[0] + p[1])
    return out


def mps_variance(state):
    z = mps_z(state)
    return float(np.mean(z * z))


def mps_norm(state):
    return float(np.sqrt(np.sum(np.abs(state.tensors[state.center]) ** 2)))


def mps_to_dense(state):
    psi = state.tensors[0]
    for t in state.tensors[1:]:
        psi = np.tensordot(psi, t, axes=(psi.ndim - 1, 0))
    return psi.reshape(-1)


def bond_entropies(state):
    """Von Neumann entropy (natural log) of the Schmidt spectrum at every bond."""
    move_center(state, 0)
    out = []
    for q in range(state.n - 1):
        a = state.tensors[q]
        s = np.linalg.svd(a.reshape(a.shape[0] * 2, a.shape[2]), compute_uv=False)
        p = s * s
        p = p[p > 1e-300] / p.sum()
        out.append(max(0.0, float(-(p * np.log(p)).sum())))
        _shift_right(state)
    return np.array(out)


# -- 1/chi extrapolation -----------------------------------------------------------------


@dataclass
class ExtrapolationFit:
    """``f(chi) = a exp(-b chi^-c)`` fitted from random restarts.

    ``a_mean``/``a_std`` summarize the chi -> infinity limit over accepted
    restarts; ``a``, ``b``, ``c`` are the best restart.
    """

    a: float
    b: float
    c: float
    a_mean: float
    a_std: float
    restarts: int
    accepted: int
    boundary: bool

    def predict(self, chi):
        return self.a * np.exp(-self.b * np.asarray(chi, dtype=float) ** (-self.c))

    def to_dict(self):
        return {
            "a_mean": self.a_mean,
            "a_std": self.a_std,
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "restarts": self.restarts,
            "accepted": self.accepted,
            "boundary": self.boundary,
        }


def _model(logp, chi):
    a, b, c = np.exp(logp)
    return a * np.exp(-b * chi ** (-c))


def extrapolate_chi(chis, values, restarts=64, rng=None, boundary_b=1e-6):
    """Least-squares fit of ``a exp(-b chi^-c)`` with log-parameterized positivity.

    Restarts are initialized log-uniformly; a restart is accepted when it
    converges to within twice the best residual cost (plus a 1e-16 relative
    floor). Fits with ``b`` below ``boundary_b`` are flagged as sitting on
    the ``b -> 0`` boundary (flat data).
    """
    chis = np.asarray(chis, dtype=float)
    y = np.asarray(values, dtype=float)
    if np.unique(chis).size < 4:
        raise InvalidParameterError("need at least four distinct bond dimensions")
    rng = np.random.default_rng(0) if rng is None else rng
    scale = max(float(np.max(np.abs(y))), 1e-12)
    results = []
    for _ in range(restarts):
        p0 = np.log(
            [
                scale * np.exp(rng.uniform(np.log(0.5), np.log(2.0))),
                np.exp(rng.uniform(np.log(1e-2), np.log(1e2))),
                np.exp(rng.uniform(np.log(1e-2), np.log(1e1))),
            ]
        )
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                res = least_squares(
                    lambda p: _model(p, chis) - y, p0, method="lm",
                    xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000,
                )
        except (ValueError, FloatingPointError):
            continue
        if res.status > 0 and np.all(np.isfinite(res.x)) and np.isfinite(res.cost):
            results.append((res.cost, np.exp(res.x)))
    if not results:
        raise FitFailureError("no extrapolation restart converged")
    best = min(r[0] for r in results)
    accepted = [p for cost, p in results if cost <= 2.0 * best + 1e-16 * float(np.sum(y * y))]
    a_vals = np.array([p[0] for p in accepted])
    best_p = min(results, key=lambda r: r[0])[1]
    return ExtrapolationFit(
        a=float(best_p[0]),
        b=float(best_p[1]),
        c=float(best_p[2]),
        a_mean=float(a_vals.mean()),
        a_std=float(a_vals.std()),
        restarts=restarts,
        accepted=len(accepted),
        boundary=bool(best_p[1] < boundary_b),
    )
