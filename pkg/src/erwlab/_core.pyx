# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: walk excursions, forward branching generations, Euler paths.

Every function here has a twin of the same name and signature in
``erwlab._pure``; both consume the same Philox words, so outputs agree
bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, NAN, INFINITY
from libc.stdint cimport uint64_t, int64_t, uint8_t, int8_t, int32_t
from libc.stdlib cimport malloc, free

from numpy.random cimport bitgen_t

cnp.import_array()

cdef extern from "numpy/random/distributions.h" nogil:
    double random_standard_normal(bitgen_t *bitgen_state)
    int64_t random_negative_binomial(bitgen_t *bitgen_state, double n, double p)

cdef extern from "_philox.h" nogil:
    ctypedef struct erw_stream:
        uint64_t ctr[4]
        uint64_t key[2]
    void erw_philox_block(const uint64_t *ctr, const uint64_t *key, uint64_t *out)
    void erw_stream_init(erw_stream *s, uint64_t k0, uint64_t k1,
                         uint64_t c0, uint64_t c1, uint64_t c2, uint64_t c3)
    uint64_t erw_next64(erw_stream *s)
    double erw_u01(uint64_t w)
    void erw_bitgen_bind(bitgen_t *bg, erw_stream *s)
    uint64_t erw_word(uint64_t k0, uint64_t k1, uint64_t site, uint64_t purpose,
                      uint64_t index)

cdef enum:
    PURPOSE_COIN = 0
    PURPOSE_STACK = 1
    PURPOSE_NB = 2
    PURPOSE_SDE = 3

cdef enum:
    CENSOR_NONE = 0
    CENSOR_GEN = 1
    CENSOR_HEIGHT = 2
    CENSOR_PROGENY = 3

BACKEND = "compiled"


def philox_block(uint64_t k0, uint64_t k1, uint64_t c0, uint64_t c1, uint64_t c2, uint64_t c3):
    cdef uint64_t ctr[4]
    cdef uint64_t key[2]
    cdef uint64_t out[4]
    ctr[0] = c0; ctr[1] = c1; ctr[2] = c2; ctr[3] = c3
    key[0] = k0; key[1] = k1
    erw_philox_block(ctr, key, out)
    return [out[0], out[1], out[2], out[3]]


cdef inline int choose_stack(const double[::1] cumw, int n_stacks, uint64_t k0,
                             uint64_t k1, uint64_t site) noexcept nogil:
    cdef double u
    cdef int i
    if n_stacks == 1:
        return 0
    u = erw_u01(erw_word(k0, k1, site, PURPOSE_STACK, 0))
    for i in range(n_stacks):
        if u < cumw[i]:
            return i
    return n_stacks - 1


cdef int64_t generation(const double[:, ::1] probs, const double[::1] cumw,
                        uint64_t k0, uint64_t k1, uint64_t site, int64_t failures,
                        bint coupled, erw_stream *st, bitgen_t *bg) noexcept nogil:
    """Successes before the `failures`-th failure in site's trial sequence."""
    cdef int n_stacks = probs.shape[0]
    cdef int m = probs.shape[1]
    cdef int idx
    cdef int64_t s = 0, f = 0
    cdef uint64_t i = 0
    if failures <= 0:
        return 0
    idx = choose_stack(cumw, n_stacks, k0, k1, site)
    erw_stream_init(st, k0, k1, 0, site, PURPOSE_COIN, 0)
    while i < <uint64_t>m:
        if erw_u01(erw_next64(st)) < probs[idx, i]:
            s += 1
        else:
            f += 1
            if f == failures:
                return s
        i += 1
    if coupled:
        while True:
            if erw_u01(erw_next64(st)) < 0.5:
                s += 1
            else:
                f += 1
                if f == failures:
                    return s
    erw_stream_init(st, k0, k1, 0, site, PURPOSE_NB, 0)
    return s + random_negative_binomial(bg, <double>(failures - f), 0.5)


def walk_batch(const double[:, ::1] probs, const double[::1] cumw, uint64_t seed,
               const int64_t[::1] paths, int64_t start, int64_t step_cap, int64_t range_cap):
    """Run `n_paths` walks from `start` until the first visit to 0 at a time n >= 1.

    Returns (returned, duration, max_site, min_site, first_step).
    """
    cdef int n_stacks = probs.shape[0]
    cdef int m = probs.shape[1]
    cdef int64_t n_paths = paths.shape[0]
    cdef int64_t span = min(step_cap, range_cap) + abs(start) + 2
    cdef int64_t width = 2 * span + 1
    cdef int32_t *stack_idx = <int32_t *>malloc(width * sizeof(int32_t))
    cdef int64_t *cursor = <int64_t *>malloc(width * sizeof(int64_t))
    # current 4-word Philox block of each site's coin stream
    cdef uint64_t *block = <uint64_t *>malloc(4 * width * sizeof(uint64_t))
    if stack_idx == NULL or cursor == NULL or block == NULL:
        free(stack_idx)
        free(cursor)
        free(block)
        raise MemoryError("walk environment table")
    cdef uint64_t ctr[4]
    cdef uint64_t key[2]

    returned_arr = np.zeros(n_paths, dtype=np.uint8)
    duration_arr = np.zeros(n_paths, dtype=np.int64)
    max_arr = np.zeros(n_paths, dtype=np.int64)
    min_arr = np.zeros(n_paths, dtype=np.int64)
    first_arr = np.zeros(n_paths, dtype=np.int8)
    cdef uint8_t[::1] returned = returned_arr
    cdef int64_t[::1] duration = duration_arr
    cdef int64_t[::1] xmax_out = max_arr
    cdef int64_t[::1] xmin_out = min_arr
    cdef int8_t[::1] first_out = first_arr

    cdef int64_t p, x, n, xmax, xmin, off, j
    cdef int64_t i
    cdef double prob
    cdef uint64_t k1
    cdef int idx

    with nogil:
        for j in range(width):
            stack_idx[j] = -1
            cursor[j] = 0
        for p in range(n_paths):
            k1 = <uint64_t>paths[p]
            x = start
            n = 0
            xmax = start
            xmin = start
            while True:
                off = x + span
                idx = stack_idx[off]
                if idx < 0:
                    idx = choose_stack(cumw, n_stacks, seed, k1, <uint64_t>x)
                    stack_idx[off] = idx
                i = cursor[off]
                cursor[off] = i + 1
                prob = probs[idx, i] if i < m else 0.5
                if (i & 3) == 0:
                    ctr[0] = <uint64_t>((i >> 2) + 1)
                    ctr[1] = <uint64_t>x
                    ctr[2] = PURPOSE_COIN
                    ctr[3] = 0
                    key[0] = seed
                    key[1] = k1
                    erw_philox_block(ctr, key, &block[4 * off])
                if erw_u01(block[4 * off + (i & 3)]) < prob:
                    x += 1
                else:
                    x -= 1
                n += 1
                if n == 1:
                    first_out[p] = <int8_t>(x - start)
                if x > xmax:
                    xmax = x
                elif x < xmin:
                    xmin = x
                if x == 0:
                    returned[p] = 1
                    break
                if n >= step_cap or x >= range_cap or x <= -range_cap:
                    break
            duration[p] = n
            xmax_out[p] = xmax
            xmin_out[p] = xmin
            for j in range(xmin + span, xmax + span + 1):
                stack_idx[j] = -1
                cursor[j] = 0
    free(stack_idx)
    free(cursor)
    free(block)
    return returned_arr, duration_arr, max_arr, min_arr, first_arr


def first_step_batch(const double[:, ::1] probs, const double[::1] cumw, uint64_t seed,
                     const int64_t[::1] paths):
    """Direction (+1/-1) of the first step from site 0, as walk_batch would take it."""
    cdef int n_stacks = probs.shape[0]
    cdef int64_t n = paths.shape[0]
    out_arr = np.zeros(n, dtype=np.int8)
    cdef int8_t[::1] out = out_arr
    cdef int64_t p
    cdef int idx
    with nogil:
        for p in range(n):
            idx = choose_stack(cumw, n_stacks, seed, <uint64_t>paths[p], 0)
            if erw_u01(erw_word(seed, <uint64_t>paths[p], 0, PURPOSE_COIN, 0)) < probs[idx, 0]:
                out[p] = 1
            else:
                out[p] = -1
    return out_arr


def bp_batch(const double[:, ::1] probs, const double[::1] cumw, uint64_t seed,
             const int64_t[::1] paths, int64_t v0, int64_t gen_cap, int64_t height_cap,
             int64_t progeny_cap, bint coupled, int64_t observe_gen):
    """Forward branching paths; generation g reads the trial sequence of site g.

    Returns (extinct, extinction_time, progeny, censor_code, max_height, observed).
    `observed` is V at generation `observe_gen` (0 after extinction, -1 if the
    path was censored earlier).
    """
    cdef int64_t n_paths = paths.shape[0]
    extinct_arr = np.zeros(n_paths, dtype=np.uint8)
    time_arr = np.zeros(n_paths, dtype=np.int64)
    prog_arr = np.zeros(n_paths, dtype=np.int64)
    code_arr = np.zeros(n_paths, dtype=np.int8)
    maxv_arr = np.zeros(n_paths, dtype=np.int64)
    obs_arr = np.full(n_paths, -1, dtype=np.int64)
    cdef uint8_t[::1] extinct = extinct_arr
    cdef int64_t[::1] ext_time = time_arr
    cdef int64_t[::1] progeny = prog_arr
    cdef int8_t[::1] code = code_arr
    cdef int64_t[::1] maxv = maxv_arr
    cdef int64_t[::1] observed = obs_arr

    cdef erw_stream st
    cdef bitgen_t bg
    erw_bitgen_bind(&bg, &st)
    cdef int64_t p, v, g, prog, vmax
    cdef int8_t c
    cdef uint64_t k1

    with nogil:
        for p in range(n_paths):
            k1 = <uint64_t>paths[p]
            v = v0
            g = 0
            prog = v0
            vmax = v0
            c = CENSOR_NONE
            if observe_gen == 0:
                observed[p] = v0
            while v > 0:
                if g >= gen_cap:
                    c = CENSOR_GEN
                    break
                if v >= height_cap:
                    c = CENSOR_HEIGHT
                    break
                g += 1
                v = generation(probs, cumw, seed, k1, <uint64_t>g, v, coupled, &st, &bg)
                prog += v
                if v > vmax:
                    vmax = v
                if g == observe_gen:
                    observed[p] = v
                if v > 0 and prog > progeny_cap:
                    c = CENSOR_PROGENY
                    break
            if v == 0:
                extinct[p] = 1
                if observe_gen > g:
                    observed[p] = 0
            ext_time[p] = g
            progeny[p] = prog
            code[p] = c
            maxv[p] = vmax
    return extinct_arr, time_arr, prog_arr, code_arr, maxv_arr, obs_arr


def bp_trajectory(const double[:, ::1] probs, const double[::1] cumw, uint64_t seed,
                  int64_t path, int64_t v0, int64_t gen_cap, int64_t height_cap,
                  bint coupled, bint modified):
    """One generation-by-generation trajectory.

    With `modified`, each step uses max(V, m) failures and V_{k+1} = V_k + S - max(V_k, m);
    the trajectory then runs for exactly `gen_cap` steps and may go negative.
    """
    cdef int m = probs.shape[1]
    cdef erw_stream st
    cdef bitgen_t bg
    erw_bitgen_bind(&bg, &st)
    cdef uint64_t k1 = <uint64_t>path
    cdef int64_t v = v0, g = 0, need, s
    out = [v0]
    while g < gen_cap:
        if not modified and (v <= 0 or v >= height_cap):
            break
        g += 1
        if modified:
            need = v if v > m else m
            s = generation(probs, cumw, seed, k1, <uint64_t>g, need, coupled, &st, &bg)
            v = v + s - need
        else:
            v = generation(probs, cumw, seed, k1, <uint64_t>g, v, coupled, &st, &bg)
        out.append(v)
    return np.asarray(out, dtype=np.int64)


def offspring_batch(const double[:, ::1] probs, const double[::1] cumw, uint64_t seed,
                    const int64_t[::1] paths, int64_t failures, int64_t site, bint coupled):
    """Independent draws of successes-before-`failures`-failures, one per path index."""
    cdef int64_t n = paths.shape[0]
    out_arr = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cdef erw_stream st
    cdef bitgen_t bg
    erw_bitgen_bind(&bg, &st)
    cdef int64_t p
    with nogil:
        for p in range(n):
            out[p] = generation(probs, cumw, seed, <uint64_t>paths[p],
                                <uint64_t>site, failures, coupled, &st, &bg)
    return out_arr


def euler_batch(double delta, double x0, double dt, int64_t n_steps, uint64_t seed,
                const int64_t[::1] paths, const int64_t[::1] obs_steps,
                double upper=INFINITY):
    """Euler-Maruyama for dY = delta dt + sqrt(2 Y+) dB, frozen at the first crossing of 0.

    Returns (sigma0, area, censored, observed) where observed[p, q] is the
    stopped value at grid index obs_steps[q] (sorted, <= n_steps).  censored
    is 1 at the horizon and 2 when the path first reaches ``upper``.
    """
    cdef Py_ssize_t n_obs = obs_steps.shape[0]
    cdef int64_t n_paths = paths.shape[0]
    sigma_arr = np.full(n_paths, np.nan)
    area_arr = np.zeros(n_paths)
    cens_arr = np.zeros(n_paths, dtype=np.uint8)
    obs_arr = np.zeros((n_paths, n_obs))
    cdef double[::1] sigma = sigma_arr
    cdef double[::1] area = area_arr
    cdef uint8_t[::1] censored = cens_arr
    cdef double[:, ::1] observed = obs_arr

    cdef erw_stream st
    cdef bitgen_t bg
    erw_bitgen_bind(&bg, &st)
    cdef double sdt = sqrt(dt)
    cdef double ddt = delta * dt
    cdef double y, yn, a, frac, z
    cdef int64_t p, j
    cdef Py_ssize_t q

    with nogil:
        for p in range(n_paths):
            erw_stream_init(&st, seed, <uint64_t>paths[p], 0, 0, PURPOSE_SDE, 0)
            y = x0
            a = 0.0
            j = 0
            q = 0
            if y <= 0.0:
                sigma[p] = 0.0
                y = 0.0
            else:
                while q < n_obs and obs_steps[q] == 0:
                    observed[p, q] = y
                    q += 1
                while j < n_steps:
                    z = random_standard_normal(&bg)
                    yn = y + ddt + sqrt(2.0 * y) * sdt * z
                    if yn <= 0.0:
                        frac = y / (y - yn)
                        sigma[p] = (j + frac) * dt
                        a = a + 0.5 * y * frac * dt
                        y = 0.0
                        break
                    a = a + 0.5 * (y + yn) * dt
                    y = yn
                    j += 1
                    while q < n_obs and obs_steps[q] == j:
                        observed[p, q] = y
                        q += 1
                    if y >= upper:
                        censored[p] = 2
                        break
                if y > 0.0 and censored[p] == 0:
                    censored[p] = 1
            while q < n_obs:
                observed[p, q] = y
                q += 1
            area[p] = a
    return sigma_arr, area_arr, cens_arr, obs_arr


def euler_trajectory(double delta, double x0, double dt, int64_t n_steps, uint64_t seed,
                     int64_t path):
    """Full grid trajectory (frozen at 0 after absorption) and the crossing time (nan if none)."""
    values_arr = np.zeros(n_steps + 1)
    cdef double[::1] values = values_arr
    cdef erw_stream st
    cdef bitgen_t bg
    erw_bitgen_bind(&bg, &st)
    erw_stream_init(&st, seed, <uint64_t>path, 0, 0, PURPOSE_SDE, 0)
    cdef double sdt = sqrt(dt)
    cdef double ddt = delta * dt
    cdef double y = x0, yn, frac
    cdef double sigma = NAN
    cdef int64_t j = 0
    if y <= 0.0:
        return values_arr, 0.0
    values[0] = y
    with nogil:
        while j < n_steps:
            yn = y + ddt + sqrt(2.0 * y) * sdt * random_standard_normal(&bg)
            if yn <= 0.0:
                frac = y / (y - yn)
                sigma = (j + frac) * dt
                break
            y = yn
            j += 1
            values[j] = y
    return values_arr, sigma
