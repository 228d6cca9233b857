# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-slot kernels; mirrors ``_kernels_py`` line for line."""

from libc.math cimport ceil, exp, expm1, fabs, hypot, log2, INFINITY, isfinite

cdef long long MAX_DELAY_SLOTS = 1 << 30


cdef inline double _mismatch_one(double x0, double x1, double h0, double h1,
                                 signed char kind, double xi, int* zero_flag) nogil:
    cdef double z, denom, absdiff
    if kind == 0:
        absdiff = fabs(x0 - h0)
        denom = fabs(h0)
        if denom == 0.0:
            zero_flag[0] = 1
            z = absdiff - xi
        else:
            z = absdiff / denom - xi
    else:
        z = hypot(x0 - h0, x1 - h1) - xi
    return z if z > 0.0 else 0.0


def mismatch_vector(const double[:, ::1] x, const double[:, ::1] xhat,
                    const signed char[::1] kinds, const double[::1] xi, double[::1] out):
    cdef Py_ssize_t n, N = x.shape[0]
    cdef int zero_count = 0
    cdef int flag
    for n in range(N):
        flag = 0
        out[n] = _mismatch_one(x[n, 0], x[n, 1], xhat[n, 0], xhat[n, 1], kinds[n], xi[n], &flag)
        zero_count += flag
    return zero_count


def slot_step(long long t, const signed char[::1] u, const double[::1] fading,
              const double[::1] uniform, const double[:, ::1] x_now, const double[:, ::1] x_next,
              const signed char[::1] kinds, const double[::1] xi, const double[::1] w,
              const long long[::1] b, const double[::1] dist, const double[::1] power,
              const double[::1] payload,
              double bandwidth, double noise_psd, double m_lin, double slot_s,
              double[:, ::1] xhat, long long[::1] pend_due, double[:, ::1] pend_val,
              signed char[::1] pend_ok, long long[::1] phi, double[::1] last_y,
              signed char[::1] last_gamma, double[::1] z_out, signed char[::1] events):
    cdef Py_ssize_t n, N = u.shape[0]
    cdef long long rb_used = 0
    cdef long long k
    cdef double h, bw, noise, rate, p_err, delay, kd, wsum = 0.0
    cdef int zero_count = 0
    cdef int flag
    cdef bint ack

    for n in range(N):
        if u[n] == 0:
            continue
        rb_used += b[n]
        h = fading[n] / (dist[n] * dist[n])
        bw = b[n] * bandwidth
        noise = noise_psd * bw
        rate = bw * log2(1.0 + power[n] * h / noise)
        if h > 0.0:
            p_err = -expm1(-m_lin * noise / (power[n] * h))
        else:
            p_err = 1.0
        if rate > 0.0:
            delay = payload[n] / rate
            kd = ceil(delay / slot_s)
        else:
            kd = INFINITY
        if isfinite(kd):
            k = <long long>kd if kd < MAX_DELAY_SLOTS else MAX_DELAY_SLOTS
        else:
            k = 1
        if k < 1:
            k = 1
        pend_due[n] = t + k
        pend_val[n, 0] = x_now[n, 0]
        pend_val[n, 1] = x_now[n, 1]
        pend_ok[n] = 1 if uniform[n] < 1.0 - p_err else 0

    for n in range(N):
        events[n] = -1
        ack = False
        if pend_due[n] == t + 1:
            if pend_ok[n] != 0:
                xhat[n, 0] = pend_val[n, 0]
                xhat[n, 1] = pend_val[n, 1]
                ack = True
                events[n] = 1
            else:
                last_gamma[n] = 0
                events[n] = 0
            pend_due[n] = -1
        flag = 0
        z_out[n] = _mismatch_one(x_next[n, 0], x_next[n, 1], xhat[n, 0], xhat[n, 1],
                                 kinds[n], xi[n], &flag)
        zero_count += flag
        if ack:
            phi[n] = 0
            last_y[n] = z_out[n]
            last_gamma[n] = 1
        else:
            phi[n] += 1
        wsum += w[n] * z_out[n]
    return wsum, rb_used, zero_count
