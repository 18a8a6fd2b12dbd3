"""Pure-Python kernels, drop-in twins of ``erwlab._core``.

Random words come from numpy's own Philox bit generator addressed with the
same (key, counter) layout the compiled core uses, so both backends produce
identical outputs.  These are slow; they exist for platforms without a
compiler and as an executable reference for the compiled loops.
"""

import math

import numpy as np

BACKEND = "python"

PURPOSE_COIN = 0
PURPOSE_STACK = 1
PURPOSE_NB = 2
PURPOSE_SDE = 3

CENSOR_NONE = 0
CENSOR_GEN = 1
CENSOR_HEIGHT = 2
CENSOR_PROGENY = 3

_MASK64 = (1 << 64) - 1
_INV53 = 1.0 / 9007199254740992.0


def _philox(seed, path, site, purpose):
    key = (int(seed) & _MASK64) | ((int(path) & _MASK64) << 64)
    counter = ((int(site) & _MASK64) << 64) | (int(purpose) << 128)
    return np.random.Philox(key=key, counter=counter)


def _u01(word):
    return (int(word) >> 11) * _INV53


def philox_block(k0, k1, c0, c1, c2, c3):
    # numpy increments the block word before producing output
    counter = ((c0 - 1) & _MASK64) | (c1 << 64) | (c2 << 128) | (c3 << 192)
    bg = np.random.Philox(key=k0 | (k1 << 64), counter=counter)
    return [int(w) for w in bg.random_raw(4)]


def _choose_stack(cumw, seed, path, site):
    if len(cumw) == 1:
        return 0
    u = _u01(_philox(seed, path, site, PURPOSE_STACK).random_raw())
    for i, c in enumerate(cumw):
        if u < c:
            return i
    return len(cumw) - 1


def _generation(probs, cumw, seed, path, site, failures, coupled):
    if failures <= 0:
        return 0
    m = probs.shape[1]
    row = probs[_choose_stack(cumw, seed, path, site)]
    coins = _philox(seed, path, site, PURPOSE_COIN)
    s = f = 0
    for i in range(m):
        if _u01(coins.random_raw()) < row[i]:
            s += 1
        else:
            f += 1
            if f == failures:
                return s
    if coupled:
        while True:
            if _u01(coins.random_raw()) < 0.5:
                s += 1
            else:
                f += 1
                if f == failures:
                    return s
    gen = np.random.Generator(_philox(seed, path, site, PURPOSE_NB))
    return s + int(gen.negative_binomial(float(failures - f), 0.5))


def walk_batch(probs, cumw, seed, paths, start, step_cap, range_cap):
    probs = np.ascontiguousarray(probs, dtype=float)
    m = probs.shape[1]
    n_paths = len(paths)
    returned = np.zeros(n_paths, dtype=np.uint8)
    duration = np.zeros(n_paths, dtype=np.int64)
    xmax_out = np.zeros(n_paths, dtype=np.int64)
    xmin_out = np.zeros(n_paths, dtype=np.int64)
    first_out = np.zeros(n_paths, dtype=np.int8)
    for p in range(n_paths):
        path = int(paths[p])
        rows = {}
        streams = {}
        cursor = {}
        x = xmax = xmin = start
        n = 0
        while True:
            if x not in rows:
                rows[x] = probs[_choose_stack(cumw, seed, path, x)]
                streams[x] = _philox(seed, path, x, PURPOSE_COIN)
                cursor[x] = 0
            i = cursor[x]
            cursor[x] = i + 1
            prob = rows[x][i] if i < m else 0.5
            x += 1 if _u01(streams[x].random_raw()) < prob else -1
            n += 1
            if n == 1:
                first_out[p] = x - start
            xmax = max(xmax, x)
            xmin = min(xmin, x)
            if x == 0:
                returned[p] = 1
                break
            if n >= step_cap or x >= range_cap or x <= -range_cap:
                break
        duration[p] = n
        xmax_out[p] = xmax
        xmin_out[p] = xmin
    return returned, duration, xmax_out, xmin_out, first_out


def first_step_batch(probs, cumw, seed, paths):
    out = np.zeros(len(paths), dtype=np.int8)
    for p, path in enumerate(paths):
        row = probs[_choose_stack(cumw, seed, int(path), 0)]
        u = _u01(_philox(seed, int(path), 0, PURPOSE_COIN).random_raw())
        out[p] = 1 if u < row[0] else -1
    return out


def bp_batch(probs, cumw, seed, paths, v0, gen_cap, height_cap, progeny_cap, coupled,
             observe_gen):
    probs = np.ascontiguousarray(probs, dtype=float)
    n_paths = len(paths)
    extinct = np.zeros(n_paths, dtype=np.uint8)
    ext_time = np.zeros(n_paths, dtype=np.int64)
    progeny = np.zeros(n_paths, dtype=np.int64)
    code = np.zeros(n_paths, dtype=np.int8)
    maxv = np.zeros(n_paths, dtype=np.int64)
    observed = np.full(n_paths, -1, dtype=np.int64)
    for p in range(n_paths):
        path = int(paths[p])
        v = v0
        g = 0
        prog = vmax = v0
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
            v = _generation(probs, cumw, seed, path, g, v, coupled)
            prog += v
            vmax = max(vmax, v)
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
    return extinct, ext_time, progeny, code, maxv, observed


def bp_trajectory(probs, cumw, seed, path, v0, gen_cap, height_cap, coupled, modified):
    probs = np.ascontiguousarray(probs, dtype=float)
    m = probs.shape[1]
    v = v0
    out = [v0]
    g = 0
    while g < gen_cap:
        if not modified and (v <= 0 or v >= height_cap):
            break
        g += 1
        if modified:
            need = max(v, m)
            v = v + _generation(probs, cumw, seed, path, g, need, coupled) - need
        else:
            v = _generation(probs, cumw, seed, path, g, v, coupled)
        out.append(v)
    return np.asarray(out, dtype=np.int64)


def offspring_batch(probs, cumw, seed, paths, failures, site, coupled):
    probs = np.ascontiguousarray(probs, dtype=float)
    return np.array(
        [_generation(probs, cumw, seed, int(path), site, failures, coupled) for path in paths],
        dtype=np.int64,
    )


def euler_batch(delta, x0, dt, n_steps, seed, paths, obs_steps, upper=math.inf, block=4096):
    obs_steps = np.asarray(obs_steps, dtype=np.int64)
    n_obs = len(obs_steps)
    n_paths = len(paths)
    sigma = np.full(n_paths, np.nan)
    area = np.zeros(n_paths)
    censored = np.zeros(n_paths, dtype=np.uint8)
    observed = np.zeros((n_paths, n_obs))
    if x0 <= 0.0:
        sigma[:] = 0.0
        return sigma, area, censored, observed

    sdt = math.sqrt(dt)
    ddt = delta * dt
    gens = [np.random.Generator(_philox(seed, int(path), 0, PURPOSE_SDE)) for path in paths]
    y = np.full(n_paths, float(x0))
    alive = np.ones(n_paths, dtype=bool)
    observed[:, obs_steps == 0] = x0
    j = 0
    while j < n_steps and alive.any():
        width = min(block, n_steps - j)
        idx = np.flatnonzero(alive)
        z = np.stack([gens[p].standard_normal(width) for p in idx])
        for b in range(width):
            if idx.size == 0:
                break
            yc = y[idx]
            yn = yc + ddt + np.sqrt(2.0 * yc) * sdt * z[:, b]
            hit = yn <= 0.0
            if hit.any():
                h = idx[hit]
                frac = yc[hit] / (yc[hit] - yn[hit])
                sigma[h] = (j + frac) * dt
                area[h] = area[h] + 0.5 * yc[hit] * frac * dt
                y[h] = 0.0
                alive[h] = False
            keep = ~hit
            k = idx[keep]
            area[k] = area[k] + 0.5 * (yc[keep] + yn[keep]) * dt
            y[k] = yn[keep]
            j += 1
            for q in np.flatnonzero(obs_steps == j):
                observed[k, q] = y[k]
            top = y[k] >= upper
            if top.any():
                u = k[top]
                censored[u] = 2
                alive[u] = False
                # remaining observation steps keep the value at the barrier
                for q in np.flatnonzero(obs_steps > j):
                    observed[u, q] = y[u]
            idx = k[~top]
            z = z[keep][~top]
    # absorbed paths keep the zero they were initialised with at later observation steps
    censored[alive] = 1
    return sigma, area, censored, observed


def euler_trajectory(delta, x0, dt, n_steps, seed, path):
    values = np.zeros(n_steps + 1)
    if x0 <= 0.0:
        return values, 0.0
    gen = np.random.Generator(_philox(seed, path, 0, PURPOSE_SDE))
    sdt = math.sqrt(dt)
    ddt = delta * dt
    y = float(x0)
    values[0] = y
    for j in range(n_steps):
        yn = y + ddt + math.sqrt(2.0 * y) * sdt * gen.standard_normal()
        if yn <= 0.0:
            return values, (j + y / (y - yn)) * dt
        y = yn
        values[j + 1] = y
    return values, math.nan
