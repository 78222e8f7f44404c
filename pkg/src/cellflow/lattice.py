"""D3Q19 velocity set: directions, weights, opposite-direction table.

Ordering convention: index 0 is the rest population, 1..6 the six axis
neighbours (+x,-x,+y,-y,+z,-z), 7..18 the twelve edge diagonals. Opposite
directions sit next to each other so OPPOSITE is a fixed permutation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Q = 19

DIRECTIONS = np.array(
    [
        [0, 0, 0],
        [1, 0, 0], [-1, 0, 0],
        [0, 1, 0], [0, -1, 0],
        [0, 0, 1], [0, 0, -1],
        [1, 1, 0], [-1, -1, 0],
        [1, -1, 0], [-1, 1, 0],
        [1, 0, 1], [-1, 0, -1],
        [1, 0, -1], [-1, 0, 1],
        [0, 1, 1], [0, -1, -1],
        [0, 1, -1], [0, -1, 1],
    ],
    dtype=np.int64,
)

WEIGHTS = np.array([1.0 / 3.0] + [1.0 / 18.0] * 6 + [1.0 / 36.0] * 12)

OPPOSITE = np.array(
    [0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15, 18, 17],
    dtype=np.int64,
)

CS2 = 1.0 / 3.0  # squared lattice speed of sound

# split components, handy for jitted kernels
EX = np.ascontiguousarray(DIRECTIONS[:, 0])
EY = np.ascontiguousarray(DIRECTIONS[:, 1])
EZ = np.ascontiguousarray(DIRECTIONS[:, 2])


@dataclass(frozen=True)
class VelocitySet:
    """Immutable description of a discrete velocity set."""

    directions: np.ndarray = field(default_factory=lambda: DIRECTIONS.copy())
    weights: np.ndarray = field(default_factory=lambda: WEIGHTS.copy())
    opposite: np.ndarray = field(default_factory=lambda: OPPOSITE.copy())
    c_s2: float = CS2

    @property
    def q(self) -> int:
        return len(self.weights)


D3Q19 = VelocitySet()
