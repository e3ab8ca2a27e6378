"""Counter-based random streams (Philox4x32-10) keyed by (seed, step, particle).

Every Gaussian increment is a pure function of its key, so results do not
depend on particle ordering, chunking, or the number of worker threads, and
the same increments are reused across solver modes and Picard sweeps.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_TWO_PI = 2.0 * np.pi

# counter word 3 separates independent uses of one seed
DOMAIN_INCREMENTS = 0
DOMAIN_INITIAL = 1
DOMAIN_MIXTURE = 2
DOMAIN_PROBE = 3


def philox4x32(counter, key, rounds: int = 10):
    """Philox4x32 block function, vectorized over counters.

    Parameters
    ----------
    counter : sequence of 4 array-likes
        32-bit counter words; they broadcast against each other.
    key : tuple of 2 ints
        32-bit key words.

    Returns
    -------
    tuple of 4 uint64 arrays holding 32-bit output words.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for i in range(rounds):
        rk0 = np.uint64((k0 + i * _W0) & 0xFFFFFFFF)
        rk1 = np.uint64((k1 + i * _W1) & 0xFFFFFFFF)
        p0 = c0 * _M0
        p1 = c2 * _M1
        c0, c1, c2, c3 = (p1 >> _SHIFT32) ^ c1 ^ rk0, p1 & _MASK32, (p0 >> _SHIFT32) ^ c3 ^ rk1, p0 & _MASK32
    return c0, c1, c2, c3


def _seed_key(seed: int) -> tuple[int, int]:
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF


def _open_unit(hi, lo):
    # 53-bit uniform strictly inside (0, 1)
    bits = ((hi << _SHIFT32) | lo) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def standard_normals(seed: int, step: int, particles, dim: int, domain: int = DOMAIN_INCREMENTS) -> np.ndarray:
    """Standard normal draws of shape ``(len(particles), dim)``.

    Row ``i`` depends only on ``(seed, step, particles[i], domain)``.
    """
    particles = np.asarray(particles, dtype=np.uint64)
    key = _seed_key(seed)
    n_blocks = (dim + 1) // 2
    out = np.empty((particles.shape[0], 2 * n_blocks), dtype=np.float64)
    step = int(step)
    if step < 0 or step >= 2**32:
        raise ValueError(f"step index out of range: {step}")
    for blk in range(n_blocks):
        w0, w1, w2, w3 = philox4x32((step, particles, blk, domain), key)
        u1 = _open_unit(w0, w1)
        u2 = _open_unit(w2, w3)
        rad = np.sqrt(-2.0 * np.log(u1))
        ang = _TWO_PI * u2
        out[:, 2 * blk] = rad * np.cos(ang)
        out[:, 2 * blk + 1] = rad * np.sin(ang)
    return out[:, :dim]


def uniforms(seed: int, step: int, particles, domain: int = DOMAIN_MIXTURE) -> np.ndarray:
    """Uniform (0, 1) draws, one per particle, keyed like :func:`standard_normals`."""
    particles = np.asarray(particles, dtype=np.uint64)
    w0, w1, _, _ = philox4x32((int(step) & 0xFFFFFFFF, particles, 0, domain), _seed_key(seed))
    return _open_unit(w0, w1)
