/*
 * Philox4x64-10 counter-based streams, laid out exactly like numpy's
 * numpy.random.Philox so that the compiled kernels and the numpy-backed
 * fallback consume identical random words.
 *
 * A stream is addressed by a 128-bit key (seed, path) and a 256-bit counter
 * (block, site, purpose, 0).  The block word is incremented before each
 * 4-word output block, as numpy does.
 */
#ifndef ERWLAB_PHILOX_H
#define ERWLAB_PHILOX_H

#include <stdint.h>
#include "numpy/random/bitgen.h"

#define ERW_PHILOX_M0 0xD2E7470EE14C6C93ULL
#define ERW_PHILOX_M1 0xCA5A826395121157ULL
#define ERW_PHILOX_W0 0x9E3779B97F4A7C15ULL
#define ERW_PHILOX_W1 0xBB67AE8584CAA73BULL

typedef struct {
    uint64_t ctr[4];
    uint64_t key[2];
    int buffer_pos;
    uint64_t buffer[4];
    int has_uint32;
    uint32_t uinteger;
} erw_stream;

static inline void erw_philox_block(const uint64_t ctr[4], const uint64_t key[2],
                                    uint64_t out[4])
{
    uint64_t c0 = ctr[0], c1 = ctr[1], c2 = ctr[2], c3 = ctr[3];
    uint64_t k0 = key[0], k1 = key[1];
    int r;
    for (r = 0; r < 10; r++) {
        __uint128_t p0, p1;
        if (r > 0) {
            k0 += ERW_PHILOX_W0;
            k1 += ERW_PHILOX_W1;
        }
        p0 = (__uint128_t)ERW_PHILOX_M0 * c0;
        p1 = (__uint128_t)ERW_PHILOX_M1 * c2;
        c0 = (uint64_t)(p1 >> 64) ^ c1 ^ k0;
        c1 = (uint64_t)p1;
        c2 = (uint64_t)(p0 >> 64) ^ c3 ^ k1;
        c3 = (uint64_t)p0;
    }
    out[0] = c0;
    out[1] = c1;
    out[2] = c2;
    out[3] = c3;
}

static inline void erw_stream_init(erw_stream *s, uint64_t k0, uint64_t k1,
                                   uint64_t c0, uint64_t c1, uint64_t c2, uint64_t c3)
{
    s->key[0] = k0;
    s->key[1] = k1;
    s->ctr[0] = c0;
    s->ctr[1] = c1;
    s->ctr[2] = c2;
    s->ctr[3] = c3;
    s->buffer_pos = 4;
    s->has_uint32 = 0;
    s->uinteger = 0;
}

static inline uint64_t erw_next64(erw_stream *s)
{
    if (s->buffer_pos < 4) {
        return s->buffer[s->buffer_pos++];
    }
    s->ctr[0]++;
    if (s->ctr[0] == 0) {
        s->ctr[1]++;
        if (s->ctr[1] == 0) {
            s->ctr[2]++;
            if (s->ctr[2] == 0) {
                s->ctr[3]++;
            }
        }
    }
    erw_philox_block(s->ctr, s->key, s->buffer);
    s->buffer_pos = 1;
    return s->buffer[0];
}

static inline double erw_u01(uint64_t w)
{
    return (double)(w >> 11) * (1.0 / 9007199254740992.0);
}

static uint64_t erw_bitgen_next64(void *st)
{
    return erw_next64((erw_stream *)st);
}

static uint32_t erw_bitgen_next32(void *st)
{
    erw_stream *s = (erw_stream *)st;
    uint64_t next;
    if (s->has_uint32) {
        s->has_uint32 = 0;
        return s->uinteger;
    }
    next = erw_next64(s);
    s->has_uint32 = 1;
    s->uinteger = (uint32_t)(next >> 32);
    return (uint32_t)(next & 0xffffffffULL);
}

static double erw_bitgen_next_double(void *st)
{
    return erw_u01(erw_next64((erw_stream *)st));
}

static inline void erw_bitgen_bind(bitgen_t *bg, erw_stream *s)
{
    bg->state = (void *)s;
    bg->next_uint64 = erw_bitgen_next64;
    bg->next_uint32 = erw_bitgen_next32;
    bg->next_double = erw_bitgen_next_double;
    bg->next_raw = erw_bitgen_next64;
}

/* Random access: word `index` of stream (key; counter = (0, site, purpose, 0)). */
static inline uint64_t erw_word(uint64_t k0, uint64_t k1, uint64_t site,
                                uint64_t purpose, uint64_t index)
{
    uint64_t ctr[4], key[2], out[4];
    ctr[0] = (index >> 2) + 1;
    ctr[1] = site;
    ctr[2] = purpose;
    ctr[3] = 0;
    key[0] = k0;
    key[1] = k1;
    erw_philox_block(ctr, key, out);
    return out[index & 3];
}

#endif
