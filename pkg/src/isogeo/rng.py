"""Deterministic, counter-based random streams.

All randomness in the package flows through :class:`RngState`, an immutable
(seed, counter) pair over a Philox counter-based generator.  Drawing functions
are pure: they return the values *and* the successor state, so identical
(seed, counter) inputs reproduce identical outputs on every platform.  Normal
variates are produced by an explicit Box-Muller transform over Philox
uniforms (rejection-free, so the number of consumed uniforms is a fixed
function of the request).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# Each draw call owns a disjoint 2**128-block of the Philox counter space, so
# successive states can never overlap regardless of how much one call consumes.
_COUNTER_BLOCK = 1 << 128

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class RngState:
    """Immutable handle into a counter-based random stream.

    Advancing happens by value: every drawing function returns the successor
    state alongside its output.
    """

    seed: int
    counter: int = 0

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)) or not (0 <= int(self.seed) < 2**64):
            raise ValidationError(f"seed must be a 64-bit unsigned int, got {self.seed!r}")
        if not isinstance(self.counter, (int, np.integer)) or int(self.counter) < 0:
            raise ValidationError(f"counter must be a nonnegative int, got {self.counter!r}")

    def next(self) -> "RngState":
        return RngState(self.seed, self.counter + 1)


def _generator(state: RngState) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(key=int(state.seed), counter=int(state.counter) * _COUNTER_BLOCK)
    )


def derive(state: "RngState | int", *keys: "str | int | float") -> RngState:
    """Derive an independent substream from a state (or bare seed) and keys.

    The derived seed is a BLAKE2b hash of the parent (seed, counter) and the
    key sequence, so substreams for distinct keys never collide with the
    parent stream or with one another.
    """
    if isinstance(state, RngState):
        parent = (int(state.seed), int(state.counter))
    else:
        parent = (int(state), 0)
    h = hashlib.blake2b(digest_size=8)
    h.update(parent[0].to_bytes(8, "little"))
    h.update(parent[1].to_bytes(16, "little"))
    for k in keys:
        if isinstance(k, float):
            k = f"{k:.17g}"
        h.update(str(k).encode("utf-8"))
        h.update(b"\x1f")
    return RngState(int.from_bytes(h.digest(), "little"), 0)


def uniform(state: RngState, shape) -> tuple[np.ndarray, RngState]:
    """Uniform [0, 1) draws of the given shape; returns (values, successor)."""
    g = _generator(state)
    return g.random(shape), state.next()


def normal(state: RngState, shape, sigma: float = 1.0) -> tuple[np.ndarray, RngState]:
    """i.i.d. N(0, sigma^2) draws via Box-Muller; returns (values, successor).

    sigma = 0 is allowed and yields exact zeros (the state still advances so
    downstream draws do not depend on whether a zero-scale draw happened).
    """
    if sigma < 0:
        raise ValidationError(f"sigma must be >= 0, got {sigma}")
    shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
    n = int(np.prod(shape)) if shape else 1
    nxt = state.next()
    if sigma == 0.0 or n == 0:
        return np.zeros(shape), nxt
    g = _generator(state)
    m = (n + 1) // 2
    u1 = 1.0 - g.random(m)  # (0, 1]: keeps log() finite
    u2 = g.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(_TWO_PI * u2), r * np.sin(_TWO_PI * u2)])[:n]
    return (sigma * z).reshape(shape), nxt


def gaussian_matrix(
    state: RngState, rows: int, cols: int, sigma: float
) -> tuple[np.ndarray, RngState]:
    """(rows x cols) matrix with i.i.d. N(0, sigma^2) entries."""
    if rows < 0 or cols < 0:
        raise ValidationError(f"rows/cols must be >= 0, got ({rows}, {cols})")
    return normal(state, (rows, cols), sigma)


def permutation(state: RngState, n: int) -> tuple[np.ndarray, RngState]:
    """Deterministic random permutation of range(n)."""
    g = _generator(state)
    return g.permutation(n), state.next()


def choice_without_replacement(state: RngState, n: int, k: int) -> tuple[np.ndarray, RngState]:
    """k distinct indices drawn uniformly from range(n)."""
    if k > n:
        raise ValidationError(f"cannot draw {k} distinct values from range({n})")
    perm, nxt = permutation(state, n)
    return perm[:k], nxt
