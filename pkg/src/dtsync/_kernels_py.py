"""Numpy reference implementation of the per-slot kernels.

Semantics must match ``_ckernels.pyx`` exactly; the test suite compares the
two whenever the compiled module is importable.
"""
from __future__ import annotations

import numpy as np

MAX_DELAY_SLOTS = 1 << 30


def mismatch_vector(x, xhat, kinds, xi, out):
    """Fill ``out`` with per-device mismatch; return the zero-denominator count.

    ``x``/``xhat`` are ``(N, 2)``; scalar devices (kind 0) use column 0 only
    and fall back to absolute error where the twin value is exactly zero.
    """
    scalar = kinds == 0
    dx = x[:, 0] - xhat[:, 0]
    dy = x[:, 1] - xhat[:, 1]
    denom = np.abs(xhat[:, 0])
    absdiff = np.abs(dx)
    zero = scalar & (denom == 0.0)
    safe = np.where(denom == 0.0, 1.0, denom)
    rel = np.where(zero, absdiff, absdiff / safe)
    z = np.where(scalar, rel, np.hypot(dx, dy)) - xi
    np.maximum(z, 0.0, out=out)
    return int(np.count_nonzero(zero))


def slot_step(t, u, fading, uniform, x_now, x_next,
              kinds, xi, w, b, dist, power, payload,
              bandwidth, noise_psd, m_lin, slot_s,
              xhat, pend_due, pend_val, pend_ok, phi, last_y, last_gamma,
              z_out, events):
    """Advance every device from slot ``t`` to ``t + 1``.

    Launches scheduled transmissions, resolves deliveries due at ``t + 1``,
    refreshes mismatch and the BS-side observation in place. Returns
    ``(sum_n w_n z_n, rb_used, zero_denominator_count)``.
    """
    sched = u != 0
    rb_used = int(b[sched].sum())
    if sched.any():
        idx = np.flatnonzero(sched)
        h = fading[idx] / (dist[idx] * dist[idx])
        bw = b[idx] * bandwidth
        noise = noise_psd * bw
        rate = bw * np.log2(1.0 + power[idx] * h / noise)
        live = h > 0.0
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            p_err = np.where(live, -np.expm1(-m_lin * noise / (power[idx] * h)), 1.0)
            delay = np.where(rate > 0.0, payload[idx] / rate, np.inf)
            k = np.ceil(delay / slot_s)
        k = np.where(np.isfinite(k), np.minimum(k, MAX_DELAY_SLOTS), 1.0)
        k = np.maximum(k, 1.0).astype(np.int64)
        pend_due[idx] = t + k
        pend_val[idx] = x_now[idx]
        pend_ok[idx] = uniform[idx] < 1.0 - p_err

    due = pend_due == t + 1
    ack = due & (pend_ok != 0)
    nack = due & (pend_ok == 0)
    xhat[ack] = pend_val[ack]
    pend_due[due] = -1

    n_zero = mismatch_vector(x_next, xhat, kinds, xi, z_out)

    phi += 1
    phi[ack] = 0
    last_y[ack] = z_out[ack]
    last_gamma[ack] = 1
    last_gamma[nack] = 0
    events.fill(-1)
    events[ack] = 1
    events[nack] = 0
    # left-to-right sum, same order as the compiled loop
    return float(sum((w * z_out).tolist())), rb_used, n_zero
