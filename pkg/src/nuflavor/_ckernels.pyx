# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled statevector kernels.

Qubit ``q`` of an ``n``-qubit register is bit ``n - 1 - q`` of the amplitude
index (qubit 0 is the most significant bit). Every routine mutates the
amplitude buffer in place.
"""

from libc.math cimport cos, sin
import numpy as np
cimport numpy as cnp

cnp.import_array()

# gates whose 4-block fits in this many amplitudes are applied block by block
cdef enum:
    BLOCK_BITS = 12


cdef inline Py_ssize_t _insert_zeros(Py_ssize_t r, Py_ssize_t lo, Py_ssize_t hi) noexcept nogil:
    # spread r so that bits `lo` and `hi` (masks, lo < hi) are zero
    r = (r & (lo - 1)) | ((r & ~(lo - 1)) << 1)
    r = (r & (hi - 1)) | ((r & ~(hi - 1)) << 1)
    return r


cdef inline void _rot(double* d, Py_ssize_t i00, Py_ssize_t i01, Py_ssize_t i10,
                      Py_ssize_t i11, double c, double s) noexcept nogil:
    # |00>,|11> pick up e^{-i theta}; |01>,|10> mix as c*a - i s*b
    cdef double xr, xi, ar, ai, br, bi
    xr = d[2 * i00]
    xi = d[2 * i00 + 1]
    d[2 * i00] = c * xr + s * xi
    d[2 * i00 + 1] = c * xi - s * xr
    xr = d[2 * i11]
    xi = d[2 * i11 + 1]
    d[2 * i11] = c * xr + s * xi
    d[2 * i11 + 1] = c * xi - s * xr
    ar = d[2 * i01]
    ai = d[2 * i01 + 1]
    br = d[2 * i10]
    bi = d[2 * i10 + 1]
    d[2 * i01] = c * ar + s * bi
    d[2 * i01 + 1] = c * ai - s * br
    d[2 * i10] = c * br + s * ai
    d[2 * i10 + 1] = c * bi - s * ar


cdef void _pair(double* d, Py_ssize_t dim, int n, int i, int j, double theta) noexcept nogil:
    cdef Py_ssize_t mi = (<Py_ssize_t>1) << (n - 1 - i)
    cdef Py_ssize_t mj = (<Py_ssize_t>1) << (n - 1 - j)
    cdef Py_ssize_t lo = mi if mi < mj else mj
    cdef Py_ssize_t hi = mj if mi < mj else mi
    cdef double c = cos(theta)
    cdef double s = sin(theta)
    cdef Py_ssize_t r, base
    for r in range(dim >> 2):
        base = _insert_zeros(r, lo, hi)
        _rot(d, base, base | mj, base | mi, base | mi | mj, c, s)


cdef void _adjacent(double* d, Py_ssize_t start, Py_ssize_t stop, int n, int q,
                    double c, double s) noexcept nogil:
    # gate on (q, q+1) restricted to amplitudes [start, stop)
    cdef Py_ssize_t stride = (<Py_ssize_t>1) << (n - 2 - q)
    cdef Py_ssize_t base, x, b
    base = start
    while base < stop:
        for x in range(stride):
            b = base + x
            _rot(d, b, b + stride, b + 2 * stride, b + 3 * stride, c, s)
        base += 4 * stride


cdef void _layer(double* d, Py_ssize_t dim, int n, const double* ang, bint reverse) noexcept nogil:
    # even bonds commute with each other, as do odd ones; low-stride bonds of
    # both parities are applied inside cache-sized blocks between the
    # high-stride even and odd passes
    cdef int q, first, second
    cdef int qc = n - BLOCK_BITS
    cdef Py_ssize_t block = (<Py_ssize_t>1) << BLOCK_BITS
    cdef Py_ssize_t start
    first = 1 if reverse else 0
    second = 0 if reverse else 1
    if qc < 0:
        qc = 0
    if qc == 0:
        block = dim
    q = first
    while q < n - 1 and q < qc:
        _adjacent(d, 0, dim, n, q, cos(ang[q]), sin(ang[q]))
        q += 2
    start = 0
    while start < dim:
        q = first
        while q < n - 1:
            if q >= qc:
                _adjacent(d, start, start + block, n, q, cos(ang[q]), sin(ang[q]))
            q += 2
        q = second
        while q < n - 1:
            if q >= qc:
                _adjacent(d, start, start + block, n, q, cos(ang[q]), sin(ang[q]))
            q += 2
        start += block
    q = second
    while q < n - 1 and q < qc:
        _adjacent(d, 0, dim, n, q, cos(ang[q]), sin(ang[q]))
        q += 2


def apply_pair(double complex[::1] psi, int n, int i, int j, double theta):
    """Apply exp(-i theta P_ij) to qubits ``i`` and ``j``."""
    with nogil:
        _pair(<double*>&psi[0], psi.shape[0], n, i, j, theta)


def apply_layer(double complex[::1] psi, int n, double[::1] angles):
    """Even nearest-neighbour sublayer, then odd, with per-bond angles."""
    with nogil:
        _layer(<double*>&psi[0], psi.shape[0], n, &angles[0], False)


def apply_layers(double complex[::1] psi, int n, double[:, ::1] angles):
    """Apply ``angles.shape[0]`` consecutive layers."""
    cdef int l
    with nogil:
        for l in range(angles.shape[0]):
            _layer(<double*>&psi[0], psi.shape[0], n, &angles[l, 0], False)


def apply_layers_reversed(double complex[::1] psi, int n, double[:, ::1] angles):
    """Exact gate-order reversal of :func:`apply_layers` (odd before even, last layer first)."""
    cdef int l
    with nogil:
        for l in range(angles.shape[0] - 1, -1, -1):
            _layer(<double*>&psi[0], psi.shape[0], n, &angles[l, 0], True)


def z_expectations(double complex[::1] psi, int n):
    """<Z_q> for every qubit position q."""
    cdef Py_ssize_t dim = psi.shape[0]
    cdef Py_ssize_t idx
    cdef int q
    cdef double p
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(n)
    cdef double[::1] acc = out
    with nogil:
        for idx in range(dim):
            p = psi[idx].real * psi[idx].real + psi[idx].imag * psi[idx].imag
            for q in range(n):
                if (idx >> (n - 1 - q)) & 1:
                    acc[q] -= p
                else:
                    acc[q] += p
    return out
