"""Pure numpy implementations of the statevector kernels.

Same contracts as the compiled module ``_ckernels``; used when the extension
is not built or when ``NUFLAVOR_PURE_PYTHON=1``.
"""

import numpy as np


def apply_pair(psi, n, i, j, theta):
    """Apply exp(-i theta P_ij) to qubits ``i`` and ``j``."""
    if i > j:
        i, j = j, i
    v = psi.reshape((1 << i, 2, 1 << (j - i - 1), 2, 1 << (n - 1 - j)))
    c, s = np.cos(theta), np.sin(theta)
    phase = complex(c, -s)
    v[:, 0, :, 0, :] *= phase
    v[:, 1, :, 1, :] *= phase
    a = v[:, 0, :, 1, :].copy()
    b = v[:, 1, :, 0, :]
    v[:, 0, :, 1, :] = c * a - 1j * s * b
    v[:, 1, :, 0, :] = c * b - 1j * s * a


def _adjacent(psi, n, q, theta):
    v = psi.reshape((1 << q, 4, 1 << (n - 2 - q)))
    c, s = np.cos(theta), np.sin(theta)
    phase = complex(c, -s)
    v[:, 0, :] *= phase
    v[:, 3, :] *= phase
    a = v[:, 1, :].copy()
    v[:, 1, :] = c * a - 1j * s * v[:, 2, :]
    v[:, 2, :] = c * v[:, 2, :] - 1j * s * a


def apply_layer(psi, n, angles):
    for q in range(0, n - 1, 2):
        _adjacent(psi, n, q, angles[q])
    for q in range(1, n - 1, 2):
        _adjacent(psi, n, q, angles[q])


def apply_layers(psi, n, angles):
    for row in angles:
        apply_layer(psi, n, row)


def apply_layers_reversed(psi, n, angles):
    for row in angles[::-1]:
        for q in range(1, n - 1, 2):
            _adjacent(psi, n, q, row[q])
        for q in range(0, n - 1, 2):
            _adjacent(psi, n, q, row[q])


def z_expectations(psi, n):
    probs = (psi.real**2 + psi.imag**2).reshape((2,) * n)
    out = np.empty(n)
    for q in range(n):
        axes = tuple(a for a in range(n) if a != q)
        marg = probs.sum(axis=axes)
        out[q] = marg[0] - marg[1]
    return out
