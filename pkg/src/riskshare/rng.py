"""Counter-based random streams keyed by (seed, path, stream, counter).

Every variate is a pure function of its coordinates, so a path's draws do not
depend on which worker simulates it or in what order.  The mixer is the
SplitMix64 finalizer; along one (seed, path, stream) triple consecutive
counters reproduce a SplitMix64 sequence.
"""

from __future__ import annotations

import numpy as np

__all__ = ["CounterStream", "STREAM_ARRIVALS", "STREAM_MARKS"]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STREAM_MUL = np.uint64(0xD1B54A32D192ED03)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))

STREAM_ARRIVALS = 1
STREAM_MARKS = 2

# uniforms consumed per gamma attempt: two for Box-Muller, one accept, one boost
_GAMMA_SLOTS = 4
MAX_GAMMA_ATTEMPTS = 256


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _u64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.uint64)


class CounterStream:
    """Stateless uniform/exponential/normal/gamma generator.

    Parameters
    ----------
    seed : int
        Master seed, any 64-bit unsigned integer.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        with np.errstate(over="ignore"):
            self._key = _mix(_u64([seed]) + _GOLDEN)[0]

    def _path_key(self, path, stream: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            h = _mix(self._key ^ (_u64(path) + np.uint64(1)) * _GOLDEN)
            return _mix(h ^ (np.uint64(stream) * _STREAM_MUL))

    def bits(self, path, stream: int, counter) -> np.ndarray:
        """Raw 64-bit outputs; ``path`` and ``counter`` broadcast together."""
        path = _u64(path)
        counter = _u64(counter)
        with np.errstate(over="ignore"):
            key = self._path_key(path, stream)
            return _mix(key + (counter + np.uint64(1)) * _GOLDEN)

    def uniform(self, path, stream: int, counter) -> np.ndarray:
        """Uniform variates on the open interval (0, 1)."""
        b = self.bits(path, stream, counter) >> _S11
        return (b.astype(np.float64) + 0.5) * 2.0**-53

    def exponential(self, path, stream: int, counter) -> np.ndarray:
        return -np.log(self.uniform(path, stream, counter))

    def gamma(self, path, stream: int, index, shape: float) -> np.ndarray:
        """Exact Gamma(shape, 1) variates by Marsaglia-Tsang rejection.

        Variate ``index`` of a path uses counters ``index * 4 * MAX_GAMMA_ATTEMPTS``
        onwards.  Shapes below one use the boost ``G(a) = G(a+1) U**(1/a)``.
        """
        if not shape > 0:
            raise ValueError("gamma shape must be positive")
        path, index = np.broadcast_arrays(_u64(path), _u64(index))
        path = path.ravel()
        index = index.ravel()
        a = shape if shape >= 1.0 else shape + 1.0
        d = a - 1.0 / 3.0
        c = 1.0 / np.sqrt(9.0 * d)
        base = index * np.uint64(_GAMMA_SLOTS * MAX_GAMMA_ATTEMPTS)
        out = np.full(path.shape, np.nan)
        pending = np.arange(path.size)
        for attempt in range(MAX_GAMMA_ATTEMPTS):
            if pending.size == 0:
                break
            p = path[pending]
            ctr = base[pending] + np.uint64(_GAMMA_SLOTS * attempt)
            u1 = self.uniform(p, stream, ctr)
            u2 = self.uniform(p, stream, ctr + np.uint64(1))
            u3 = self.uniform(p, stream, ctr + np.uint64(2))
            x = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
            v = 1.0 + c * x
            ok = v > 0
            v3 = np.where(ok, v, 1.0) ** 3
            ok &= np.log(u3) < 0.5 * x * x + d - d * v3 + d * np.log(v3)
            g = d * v3
            if shape < 1.0:
                u4 = self.uniform(p, stream, ctr + np.uint64(3))
                g = np.exp(np.log(g) + np.log(u4) / shape)
            out[pending[ok]] = g[ok]
            pending = pending[~ok]
        if pending.size:
            raise RuntimeError("gamma rejection sampler exceeded its attempt budget")
        return out
