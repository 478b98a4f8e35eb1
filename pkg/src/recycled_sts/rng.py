"""Counter-based random streams usable inside compiled kernels.

Every stream is a 64-bit key. The k-th uniform of a stream is the
SplitMix64 finalizer applied to ``key + k * golden``, so any draw can be
computed without state and child streams are derived by hashing labels
(replicate index, individual id, stage) into the parent key. This keeps
parallel and serial execution bitwise identical.

All arithmetic is done on uint64 arrays, where numpy wraps silently.
"""

import zlib

import numpy as np

from ._jit import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S11 = np.uint64(11)
_S27 = np.uint64(27)
_S30 = np.uint64(30)
_S31 = np.uint64(31)
_INV53 = 1.0 / 9007199254740992.0


@njit
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit
def child_keys(parent, labels):
    """Keys of the children ``labels`` (uint64 array) of stream ``parent``."""
    return mix64(mix64(labels * GOLDEN + _M2) ^ parent)


@njit
def child_key(parent, label):
    lab = np.empty(1, dtype=np.uint64)
    lab[0] = label
    return child_keys(parent, lab)[0]


@njit
def uniforms(key, count):
    """``count`` doubles in [0, 1) from stream ``key``."""
    ctr = np.arange(1, count + 1).astype(np.uint64)
    z = mix64(ctr * GOLDEN + key)
    return (z >> _S11).astype(np.float64) * _INV53


def root_key(seed, *labels):
    """Stream key for ``seed`` refined by integer labels (host side)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(v) for v in labels))
    return np.uint64(ss.generate_state(1, dtype=np.uint64)[0])


def id_label(ident):
    """Stable 64-bit label for an individual identifier."""
    raw = str(ident).encode("utf-8")
    hi = zlib.crc32(raw)
    lo = zlib.adler32(raw)
    return np.uint64((hi << 32) | lo)
