"""View sets: one marginal-density view plus moment views on transformed coordinates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .densities import MarginalDensity
from .priors import LinearViewMap

__all__ = ["MomentView", "ViewSet"]


@dataclass(frozen=True)
class MomentView:
    """Target expectation for a transformed coordinate or a payoff function.

    Exactly one of ``coord`` (index into the Y block of the view map) or
    ``payoff`` (vectorized callable h(x, y)) must be given.
    """

    target: float
    coord: int | None = None
    payoff: Callable | None = None
    name: str = ""

    def __post_init__(self):
        if (self.coord is None) == (self.payoff is None):
            raise ValueError("specify exactly one of coord or payoff")
        if not np.isfinite(self.target):
            raise ValueError("moment target must be finite")
        if self.coord is not None and self.coord < 0:
            raise ValueError("coord must be a nonnegative Y-block index")


@dataclass(frozen=True)
class ViewSet:
    """A marginal-density view on the X block plus moment views on Y.

    ``marginal`` may be None only when ``view_map.k1 == 0`` (moment views
    alone).  When every moment view is a coordinate view, the views must
    target exactly the coordinates 0..k2-k1-1 of the Y block, in order.
    """

    view_map: LinearViewMap
    marginal: MarginalDensity | None
    moments: tuple[MomentView, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "moments", tuple(self.moments))
        k1 = self.view_map.k1
        if self.marginal is None:
            if k1 != 0:
                raise ValueError("k1 > 0 requires a marginal density view")
        else:
            if k1 != self.marginal.dim:
                raise ValueError("marginal dimension must equal k1")
        if self.is_coordinate_linear:
            coords = [view.coord for view in self.moments]
            expected = list(range(self.view_map.k2 - k1))
            if sorted(coords) != expected:
                raise ValueError(
                    "coordinate moment views must cover Y coordinates "
                    f"0..{len(expected) - 1} exactly once (k2 - k1 = {len(expected)})"
                )

    @property
    def k1(self) -> int:
        return self.view_map.k1

    @property
    def k2(self) -> int:
        return self.view_map.k2

    @property
    def n_moments(self) -> int:
        return len(self.moments)

    @property
    def is_coordinate_linear(self) -> bool:
        """True when all moment views are plain coordinate targets."""
        return all(view.coord is not None for view in self.moments)

    @property
    def targets(self) -> np.ndarray:
        return np.array([view.target for view in self.moments], dtype=float)

    @property
    def moment_coords(self) -> tuple[int, ...]:
        if not self.is_coordinate_linear:
            raise ValueError("views include payoff moments; no coordinate list")
        return tuple(view.coord for view in self.moments)
