"""Fixed dyadic schedule of triangular bumps used by the Mexican ReLU.

Level 1 is a single bump peaking at 2 * max_input and vanishing at 0 and
4 * max_input.  Each further level halves the half-width and places bumps
at the odd multiples of that half-width inside (0, 4 * max_input), so
level l contributes 2**(l-1) bumps and L complete levels give 2**L - 1.
The list is level-major with centers ascending inside each level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import mexican_hat
from .errors import ConfigurationError


@dataclass(frozen=True)
class MexicanHatBasis:
    """Immutable (center, half_width) schedule over [0, 4 * max_input]."""

    max_input: float
    centers: tuple
    half_widths: tuple

    def __len__(self) -> int:
        return len(self.centers)

    def schedule_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.centers, dtype=float), np.asarray(self.half_widths, dtype=float)

    def hat_matrix(self, x) -> np.ndarray:
        """Bump values at x: shape x.shape + (n_hats,)."""
        centers, widths = self.schedule_arrays()
        x = np.asarray(x, dtype=float)
        return mexican_hat(x[..., None], centers, widths)

    def interior_knots(self) -> np.ndarray:
        """Grid points of the finest level strictly inside (0, 4 * max_input)."""
        if not self.centers:
            return np.array([])
        step = self.half_widths[-1]
        count = int(round(4.0 * self.max_input / step)) - 1
        return step * np.arange(1, count + 1)

    def fit_knot_values(self, values) -> np.ndarray:
        """Coefficients whose bump combination hits `values` at the interior knots.

        The resulting combination is the unique piecewise-linear function
        with kinks on the finest-level grid that vanishes at 0 and at
        4 * max_input and interpolates the given knot values.
        """
        values = np.asarray(values, dtype=float)
        knots = self.interior_knots()
        if values.shape != knots.shape:
            raise ConfigurationError(
                f"expected {knots.size} knot values, got {values.size}")
        return np.linalg.solve(self.hat_matrix(knots), values)


def build_melu_basis(max_input: float, n_hats: int) -> MexicanHatBasis:
    """Build the first n_hats entries of the dyadic bump schedule.

    n_hats must cover complete levels, i.e. be of the form 2**L - 1.
    """
    if max_input <= 0:
        raise ConfigurationError("max_input must be positive")
    n_hats = int(n_hats)
    if n_hats < 1 or ((n_hats + 1) & n_hats) != 0:
        raise ConfigurationError(
            f"n_hats must be a complete dyadic count (1, 3, 7, 15, ...), got {n_hats}")

    centers: list[float] = []
    half_widths: list[float] = []
    level = 1
    while len(centers) < n_hats:
        width = 2.0 * float(max_input) / (2 ** (level - 1))
        for i in range(2 ** (level - 1)):
            centers.append(width * (2 * i + 1))
            half_widths.append(width)
        level += 1
    return MexicanHatBasis(max_input=float(max_input),
                           centers=tuple(centers),
                           half_widths=tuple(half_widths))
