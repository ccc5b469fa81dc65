"""Points on bodies (or ground) shared by joints, force elements and objectives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class Attachment:
    """A point whose position is ``shape @ q[dofs] + offset``.

    Rigid-body points carry their local coordinates so design variables that move
    the point inside the body can be differentiated. Rates are d(.)/da with one
    column per design variable.
    """

    dofs: np.ndarray
    shape: np.ndarray
    offset: np.ndarray
    offset_rate: np.ndarray
    initial_position: np.ndarray
    initial_rate: np.ndarray
    local: Optional[np.ndarray] = None
    local_rate: Optional[np.ndarray] = None
    label: str = ""

    @property
    def is_ground(self) -> bool:
        return self.dofs.size == 0

    @property
    def design_count(self) -> int:
        return self.initial_rate.shape[1]

    def position(self, q: np.ndarray) -> np.ndarray:
        if self.is_ground:
            return self.offset.copy()
        return self.shape @ q[self.dofs] + self.offset

    def velocity(self, qdot: np.ndarray) -> np.ndarray:
        if self.is_ground:
            return np.zeros(3)
        return self.shape @ qdot[self.dofs]

    def position_rate(self, q: np.ndarray, include_offset: bool = True) -> np.ndarray:
        """Explicit design derivative of ``position`` at fixed q (3 x n_a)."""
        if include_offset:
            rate = self.offset_rate.copy()
        else:
            rate = np.zeros((3, self.design_count))
        if self.local_rate is not None:
            q_body = q[self.dofs]
            for k in range(3):
                rate += np.outer(q_body[3 + 3 * k : 6 + 3 * k], self.local_rate[k])
        return rate

    def shape_rate(self, index: int) -> np.ndarray:
        rate = np.zeros_like(self.shape)
        if self.local_rate is None:
            return rate
        for k in range(3):
            rate[:, 3 + 3 * k : 6 + 3 * k] = self.local_rate[k, index] * np.eye(3)
        return rate

    def shape_transpose_rate(self, vector: np.ndarray) -> np.ndarray:
        """d(shape^T @ vector)/da for a fixed 3-vector (len(dofs) x n_a)."""
        rate = np.zeros((self.dofs.size, self.design_count))
        if self.local_rate is None:
            return rate
        for k in range(3):
            rate[3 + 3 * k : 6 + 3 * k] = np.outer(vector, self.local_rate[k])
        return rate
