"""Vectorised Philox4x32-10 counter-based generator.

Every draw is a pure function of ``(key, counter)``, so a path's noise is
fixed by ``(master_seed, path_index)`` alone and does not depend on how the
ensemble is chunked or scheduled across workers.
"""
import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_SHIFT32 = np.uint64(32)


def philox4x32(counter, key, rounds=10):
    """Apply the Philox4x32 bijection.

    Parameters
    ----------
    counter : sequence of four uint32-valued arrays (broadcastable)
    key : pair of python ints, each < 2**32
    rounds : int

    Returns
    -------
    tuple of four uint64 arrays holding 32-bit words.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for _ in range(rounds):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = (hi1 ^ c1 ^ np.uint64(k0), lo1,
                          hi0 ^ c3 ^ np.uint64(k1), lo0)
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return c0, c1, c2, c3


def _split_seed(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def _to_unit(hi, lo):
    # 53-bit mantissa, open interval (0, 1)
    bits = ((hi << _SHIFT32) | lo) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def path_normals(seed, path_indices, n_normals):
    """Standard normal draws for a batch of paths.

    Row ``r`` is the stream ``counter(seed, path_indices[r])``; entry ``k`` of
    that stream is the same whatever batch it is requested in.

    Returns an array of shape ``(len(path_indices), n_normals)``.
    """
    path_indices = np.asarray(path_indices, dtype=np.uint64).reshape(-1, 1)
    n_pairs = (int(n_normals) + 1) // 2
    if n_pairs == 0:
        return np.empty((path_indices.shape[0], 0))
    block = np.arange(n_pairs, dtype=np.uint64).reshape(1, -1)
    x0, x1, x2, x3 = philox4x32(
        (block & _MASK32, block >> _SHIFT32,
         path_indices & _MASK32, path_indices >> _SHIFT32),
        _split_seed(seed),
    )
    u1 = _to_unit(x0, x1)
    u2 = _to_unit(x2, x3)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    out = np.empty((path_indices.shape[0], 2 * n_pairs))
    out[:, 0::2] = radius * np.cos(angle)
    out[:, 1::2] = radius * np.sin(angle)
    return out[:, :n_normals]
