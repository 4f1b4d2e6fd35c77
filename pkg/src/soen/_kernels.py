"""Compiled inner loops for the network integrators.

Both engines go through :func:`advance_range`, so a spiking network with no
threshold crossings reproduces the phenomenological engine bit for bit.
Every per-dendrite update writes only its own slot, which keeps parallel
and serial runs identical.
"""

import numpy as np
from numba import njit, prange

PHI_MAX = 0.5

ERR_NONE = 0
ERR_NONFINITE = 1
ERR_CAP = 2

# dendrites per parallel work item
CHUNK = 256


@njit(cache=True, inline="always")
def find_cell(flat, lo, hi, uniform, x):
    """Cell index (relative to ``lo``) and fraction for ``x`` in ``flat[lo:hi]``.

    Mirrors ``searchsorted(side='right') - 1`` clipped to the last cell, with
    ``x`` clamped to the grid hull.
    """
    n = hi - lo
    if n == 1:
        return 0, 0.0
    g0 = flat[lo]
    gl = flat[hi - 1]
    if x < g0:
        x = g0
    elif x > gl:
        x = gl
    if uniform:
        k = int((x - g0) / ((gl - g0) / (n - 1)))
        if k > n - 2:
            k = n - 2
        if k < 0:
            k = 0
        while k > 0 and flat[lo + k] > x:
            k -= 1
        while k < n - 2 and flat[lo + k + 1] <= x:
            k += 1
    else:
        a = 0
        b = n - 1
        # largest k with grid[k] <= x
        while b - a > 1:
            m = (a + b) >> 1
            if flat[lo + m] <= x:
                a = m
            else:
                b = m
        k = a
        if flat[lo + b] <= x:
            k = b
        if k > n - 2:
            k = n - 2
    f = (x - flat[lo + k]) / (flat[lo + k + 1] - flat[lo + k])
    return k, f


@njit(cache=True)
def advance_range(i0, i1, s, aux, phi_ext, extra, indptr, indices, data, gamma, tau, omega2,
                  order2, tab_idx, phi_flat, phi_off, s_flat, s_off, val_flat, val_off,
                  uniform, dt, s_out, aux_out, phi_out, clamps):
    """Forward-Euler update of dendrites ``i0 .. i1 - 1``.

    The per-dendrite work lives in one loop body: calling a compiled helper
    with array arguments per dendrite costs reference-count traffic that
    dominates the update itself. The source value is the bilinear
    interpolation of the blended table at folded, clamped flux.
    """
    for i in range(i0, i1):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * s[indices[k]]
        phi = acc + phi_ext[i] + extra[i]
        phi_out[i] = phi
        a = abs(phi)
        if a > PHI_MAX:
            a = PHI_MAX
            clamps[i] += 1
        tab = tab_idx[i]
        p_lo = phi_off[tab]
        p_hi = phi_off[tab + 1]
        q_lo = s_off[tab]
        q_hi = s_off[tab + 1]
        n_s = q_hi - q_lo
        kp, fp = find_cell(phi_flat, p_lo, p_hi, uniform[2 * tab], a)
        ks, fs = find_cell(s_flat, q_lo, q_hi, uniform[2 * tab + 1], s[i])
        kp1 = kp + 1 if p_hi - p_lo > 1 else kp
        ks1 = ks + 1 if n_s > 1 else ks
        base = val_off[tab]
        g00 = val_flat[base + kp * n_s + ks]
        g01 = val_flat[base + kp * n_s + ks1]
        g10 = val_flat[base + kp1 * n_s + ks]
        g11 = val_flat[base + kp1 * n_s + ks1]
        lo_ = g00 + fs * (g01 - g00)
        hi_ = g10 + fs * (g11 - g10)
        g = lo_ + fp * (hi_ - lo_)
        if g < 0.0:
            g = 0.0
        ds = gamma[i] * g - s[i] / tau[i]
        if order2[i]:
            ds -= omega2[i] * aux[i]
            s_new = s[i] + dt * ds
            aux_out[i] = aux[i] + dt * s_new
        else:
            s_new = s[i] + dt * ds
            aux_out[i] = aux[i]
        s_out[i] = s_new


@njit(cache=True)
def advance_serial(s, aux, phi_ext, extra, indptr, indices, data, gamma, tau, omega2,
                   order2, tab_idx, phi_flat, phi_off, s_flat, s_off, val_flat, val_off,
                   uniform, dt, s_out, aux_out, phi_out, clamps):
    advance_range(0, s.size, s, aux, phi_ext, extra, indptr, indices, data, gamma, tau, omega2,
                  order2, tab_idx, phi_flat, phi_off, s_flat, s_off, val_flat, val_off,
                  uniform, dt, s_out, aux_out, phi_out, clamps)


@njit(cache=True, parallel=True)
def advance_parallel(s, aux, phi_ext, extra, indptr, indices, data, gamma, tau, omega2,
                     order2, tab_idx, phi_flat, phi_off, s_flat, s_off, val_flat, val_off,
                     uniform, dt, s_out, aux_out, phi_out, clamps):
    n = s.size
    n_chunks = (n + CHUNK - 1) // CHUNK
    for c in prange(n_chunks):
        advance_range(c * CHUNK, min(n, (c + 1) * CHUNK), s, aux, phi_ext, extra, indptr, indices,
                      data, gamma, tau, omega2, order2, tab_idx, phi_flat, phi_off, s_flat, s_off,
                      val_flat, val_off, uniform, dt, s_out, aux_out, phi_out, clamps)


@njit(cache=True)
def check_state(s, s_cap):
    for i in range(s.size):
        v = s[i]
        if not np.isfinite(v):
            return ERR_NONFINITE
        if abs(v) > s_cap:
            return ERR_CAP
    return ERR_NONE


@njit(cache=True, inline="always")
def copy_home(swapped, s, aux, s_home, aux_home):
    if swapped:
        s_home[:] = s
        aux_home[:] = aux


@njit(cache=True)
def fill_drive(t, times, values, targets, linear, k, out):
    """Write external flux at time ``t`` into ``out``; returns the advanced pointer."""
    m = times.size
    while k + 1 < m and times[k + 1] <= t:
        k += 1
    if m == 1 or t <= times[0]:
        for c in range(targets.size):
            out[targets[c]] = values[0, c]
    elif k >= m - 1:
        for c in range(targets.size):
            out[targets[c]] = values[m - 1, c]
    elif linear:
        f = (t - times[k]) / (times[k + 1] - times[k])
        for c in range(targets.size):
            v0 = values[k, c]
            out[targets[c]] = v0 + f * (values[k + 1, c] - v0)
    else:
        for c in range(targets.size):
            out[targets[c]] = values[k, c]
    return k


@njit(cache=True)
def run_network(s, aux, t0, n_steps, stride, rec_ids, rec_s, rec_phi, rec_t,
                drv_times, drv_values, drv_targets, drv_linear,
                indptr, indices, data, gamma, tau, omega2, order2, tab_idx,
                phi_flat, phi_off, s_flat, s_off, val_flat, val_off, uniform,
                dt, s_cap, clamps, parallel):
    """Advance ``n_steps`` forward-Euler steps, recording every ``stride``-th state.

    ``parallel`` selects the prange update; both paths give identical results.
    """
    n = s.size
    s_home = s
    aux_home = aux
    swapped = False
    phi_ext = np.zeros(n)
    extra = np.zeros(n)
    phi = np.zeros(n)
    s_nxt = np.empty(n)
    aux_nxt = np.empty(n)
    k_drv = 0
    r = 1
    for p in range(n_steps):
        t = t0 + (p + 1) * dt
        k_drv = fill_drive(t, drv_times, drv_values, drv_targets, drv_linear, k_drv, phi_ext)
        if parallel:
            advance_parallel(s, aux, phi_ext, extra, indptr, indices, data, gamma, tau, omega2,
                             order2, tab_idx, phi_flat, phi_off, s_flat, s_off, val_flat, val_off,
                             uniform, dt, s_nxt, aux_nxt, phi, clamps)
        else:
            advance_serial(s, aux, phi_ext, extra, indptr, indices, data, gamma, tau, omega2,
                           order2, tab_idx, phi_flat, phi_off, s_flat, s_off, val_flat, val_off,
                           uniform, dt, s_nxt, aux_nxt, phi, clamps)
        err = check_state(s_nxt, s_cap)
        if err != ERR_NONE:
            copy_home(swapped, s, aux, s_home, aux_home)
            return p, err, r
        s, s_nxt = s_nxt, s
        aux, aux_nxt = aux_nxt, aux
        swapped = not swapped
        if (p + 1) % stride == 0:
            rec_t[r] = t
            for c in range(rec_ids.size):
                rec_s[r, c] = s[rec_ids[c]]
                rec_phi[r, c] = phi[rec_ids[c]]
            r += 1
    copy_home(swapped, s, aux, s_home, aux_home)
    return n_steps, ERR_NONE, r


@njit(cache=True)
def run_spiking(s, aux, t0, p_origin, p0, n_steps, stride, rec_ids, rec_s, rec_phi, rec_t, r0,
                drv_times, drv_values, drv_targets, drv_linear, k_drv,
                indptr, indices, data, gamma, tau, omega2, order2, tab_idx,
                phi_flat, phi_off, s_flat, s_off, val_flat, val_off, uniform,
                dt, s_cap, clamps,
                soma_ids, soma_th, soma_ref, soma_impulse, soma_tx,
                syn_src, syn_tgt, syn_amp, syn_decay, syn_tau, syn_val,
                fire_steps, fire_count, fire_next, out_soma, out_step, n_out):
    """Advance a spiking network ``n_steps`` steps starting at global step ``p0``.

    Step ``p`` ends at ``t0 + (p + 1 - p_origin) * dt``; fire steps are global.

    Soma ``k`` fires when its post-update signal reaches ``soma_th[k]``: the
    signal is evacuated, ``soma_impulse[k]`` is added to its refractory
    dendrite, and the firing step is queued for delivery after ``soma_tx[k]``.
    Synapse ``q`` holds an exponentially decaying flux ``syn_val[q]`` on its
    target; deliveries use step differences only, so a given spike produces
    the same waveform whatever its absolute time.
    """
    n = s.size
    s_home = s
    aux_home = aux
    swapped = False
    phi_ext = np.zeros(n)
    extra = np.zeros(n)
    phi = np.zeros(n)
    s_nxt = np.empty(n)
    aux_nxt = np.empty(n)
    r = r0
    n_soma = soma_ids.size
    n_syn = syn_src.size
    for p in range(p0, p0 + n_steps):
        t = t0 + (p + 1 - p_origin) * dt
        k_drv = fill_drive(t, drv_times, drv_values, drv_targets, drv_linear, k_drv, phi_ext)
        # synaptic flux at t_{p+1}: decay, then add spikes whose delivery time has passed
        for q in range(n_syn):
            syn_val[q] *= syn_decay[q]
        for k in range(n_soma):
            while fire_next[k] < fire_count[k]:
                elapsed = (p + 1 - fire_steps[k, fire_next[k]]) * dt - soma_tx[k]
                if elapsed < 0.0:
                    break
                for q in range(n_syn):
                    if syn_src[q] == k:
                        syn_val[q] += syn_amp[q] * np.exp(-elapsed / syn_tau[q])
                fire_next[k] += 1
        for i in range(n):
            extra[i] = 0.0
        for q in range(n_syn):
            extra[syn_tgt[q]] += syn_val[q]
        advance_serial(s, aux, phi_ext, extra, indptr, indices, data, gamma, tau, omega2,
                       order2, tab_idx, phi_flat, phi_off, s_flat, s_off, val_flat, val_off,
                       uniform, dt, s_nxt, aux_nxt, phi, clamps)
        for k in range(n_soma):
            i = soma_ids[k]
            if s_nxt[i] >= soma_th[k]:
                s_nxt[i] = 0.0
                s_nxt[soma_ref[k]] += soma_impulse[k]
                if fire_count[k] >= fire_steps.shape[1]:
                    copy_home(swapped, s, aux, s_home, aux_home)
                    return p - p0, -1, r, k_drv, n_out
                fire_steps[k, fire_count[k]] = p + 1
                fire_count[k] += 1
                out_soma[n_out] = k
                out_step[n_out] = p + 1
                n_out += 1
        err = check_state(s_nxt, s_cap)
        if err != ERR_NONE:
            copy_home(swapped, s, aux, s_home, aux_home)
            return p - p0, err, r, k_drv, n_out
        s, s_nxt = s_nxt, s
        aux, aux_nxt = aux_nxt, aux
        swapped = not swapped
        if (p + 1 - p_origin) % stride == 0:
            rec_t[r] = t
            for c in range(rec_ids.size):
                rec_s[r, c] = s[rec_ids[c]]
                rec_phi[r, c] = phi[rec_ids[c]]
            r += 1
    copy_home(swapped, s, aux, s_home, aux_home)
    return n_steps, ERR_NONE, r, k_drv, n_out
