# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled first-order linear recurrence kernels.

Forward:   h[l] = a[l] * h[l-1] + b[l]     (elementwise over the state axis)
Backward:  adjoint recurrence producing grads w.r.t. a, b and h0.

Arrays are laid out (M, L, N): M independent rows (batch x channel),
L sequence positions, N state entries. This is the hot inner loop of every
selective-scan call; everything around it (discretization, projections,
output mixing) stays vectorized in the caller.
"""

cimport cython

ctypedef fused floating:
    float
    double


cpdef void scan_forward(floating[:, :, ::1] a,
                        floating[:, :, ::1] b,
                        floating[:, ::1] h0,
                        floating[:, :, ::1] h) nogil:
    """Fill h with the inclusive scan of the recurrence, starting from h0."""
    cdef Py_ssize_t M = a.shape[0]
    cdef Py_ssize_t L = a.shape[1]
    cdef Py_ssize_t N = a.shape[2]
    cdef Py_ssize_t m, l, n
    cdef floating prev
    for m in range(M):
        for n in range(N):
            prev = h0[m, n]
            for l in range(L):
                prev = a[m, l, n] * prev + b[m, l, n]
                h[m, l, n] = prev


cpdef void scan_backward(floating[:, :, ::1] a,
                         floating[:, :, ::1] h,
                         floating[:, ::1] h0,
                         floating[:, :, ::1] grad_h,
                         floating[:, :, ::1] grad_a,
                         floating[:, :, ::1] grad_b,
                         floating[:, ::1] grad_h0) nogil:
    """Reverse-mode adjoint of scan_forward.

    grad_h is dLoss/dh for every position (from downstream uses of h).
    lam accumulates dLoss/dh[l] including the paths through h[l+1:].
    """
    cdef Py_ssize_t M = a.shape[0]
    cdef Py_ssize_t L = a.shape[1]
    cdef Py_ssize_t N = a.shape[2]
    cdef Py_ssize_t m, l, n
    cdef floating lam
    for m in range(M):
        for n in range(N):
            lam = 0.0
            for l in range(L - 1, -1, -1):
                if l < L - 1:
                    lam = grad_h[m, l, n] + a[m, l + 1, n] * lam
                else:
                    lam = grad_h[m, l, n]
                if l > 0:
                    grad_a[m, l, n] = lam * h[m, l - 1, n]
                else:
                    grad_a[m, l, n] = lam * h0[m, n]
                grad_b[m, l, n] = lam
            grad_h0[m, n] = a[m, 0, n] * lam
