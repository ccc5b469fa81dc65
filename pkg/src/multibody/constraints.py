"""Holonomic constraints: internal orthonormality, spherical, welded and ground anchors.

Every supported constraint row is at most quadratic in q:

    g_r(q, t) = 1/2 q^T Q_r q + b_r^T q - c_r(t)

so the set is compiled once into a sparse table of constant Hessian entries,
a dense linear part and a target vector. Jacobians, Hessian contractions and
design derivatives all follow from that table.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .attachments import Attachment

INTERNAL = "internal_orthonormality"
SPHERICAL = "spherical"
WELDED = "welded"
GROUND_ANCHOR = "ground_anchor"

_INTERNAL_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class ConstraintBlock:
    kind: str
    name: str
    start: int
    stop: int
    refs: Tuple[str, ...]
    reference: Tuple[float, ...] = ()

    @property
    def rows(self) -> slice:
        return slice(self.start, self.stop)


@dataclass(frozen=True)
class Excitation:
    amplitude: float
    angular_frequency: float
    direction: Tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    blocks: Tuple[ConstraintBlock, ...]
    count: int
    dof_count: int
    design_count: int
    linear: np.ndarray
    target: np.ndarray
    target_rate: np.ndarray
    amplitude: np.ndarray
    frequency: np.ndarray
    quad_rows: np.ndarray
    quad_i: np.ndarray
    quad_j: np.ndarray
    quad_vals: np.ndarray
    rate_vars: np.ndarray
    rate_rows: np.ndarray
    rate_cols: np.ndarray
    rate_vals: np.ndarray

    def target_at(self, t: float) -> np.ndarray:
        return self.target + self.amplitude * np.sin(self.frequency * t)

    def velocity_bias(self, t: float) -> np.ndarray:
        """Explicit time derivative of the anchor targets."""
        return self.amplitude * self.frequency * np.cos(self.frequency * t)

    def evaluate(self, q: np.ndarray, t: float = 0.0) -> np.ndarray:
        quad = np.bincount(
            self.quad_rows,
            weights=self.quad_vals * q[self.quad_i] * q[self.quad_j],
            minlength=self.count,
        )
        return 0.5 * quad + self.linear @ q - self.target_at(t)

    def jacobian(self, q: np.ndarray) -> np.ndarray:
        jac = self.linear.copy()
        np.add.at(jac, (self.quad_rows, self.quad_i), self.quad_vals * q[self.quad_j])
        return jac

    def jacobian_hessian_contract(self, v: np.ndarray) -> np.ndarray:
        """d/dq (G(q) v), which is constant because every row is quadratic."""
        out = np.zeros((self.count, self.dof_count))
        np.add.at(out, (self.quad_rows, self.quad_i), self.quad_vals * v[self.quad_j])
        return out

    def multiplier_hessian(self, lam: np.ndarray) -> np.ndarray:
        """d/dq (G(q)^T lam)."""
        out = np.zeros((self.dof_count, self.dof_count))
        np.add.at(out, (self.quad_i, self.quad_j), lam[self.quad_rows] * self.quad_vals)
        return out

    def design_derivative(self, q: np.ndarray, index: Optional[int] = None) -> np.ndarray:
        """Explicit dg/da at fixed q: l x n_a, or one column when ``index`` is given."""
        out = -self.target_rate.copy()
        np.add.at(out, (self.rate_rows, self.rate_vars), self.rate_vals * q[self.rate_cols])
        if index is None:
            return out
        return out[:, index]

    def design_jacobian_product(self, lam: np.ndarray) -> np.ndarray:
        """d(G^T lam)/da at fixed q and lam (m x n_a)."""
        out = np.zeros((self.dof_count, self.design_count))
        np.add.at(out, (self.rate_cols, self.rate_vars), self.rate_vals * lam[self.rate_rows])
        return out

    def design_bilinear(self, row_weights: np.ndarray, col_weights: np.ndarray) -> np.ndarray:
        """sum_k w_k^T (dG/da) u_k for stacked row weights w (K x l) and columns u (K x m)."""
        if self.rate_vals.size == 0:
            return np.zeros(self.design_count)
        products = self.rate_vals * np.sum(
            row_weights[:, self.rate_rows] * col_weights[:, self.rate_cols], axis=0
        )
        return np.bincount(self.rate_vars, weights=products, minlength=self.design_count)

    def rows_for(self, name: str) -> np.ndarray:
        rows = [np.arange(block.start, block.stop) for block in self.blocks if block.name == name]
        if not rows:
            raise KeyError(f"no constraint block named {name!r}")
        return np.concatenate(rows)


class ConstraintSetBuilder:
    def __init__(self, dof_count: int, design_count: int) -> None:
        self._m = dof_count
        self._n_a = design_count
        self._blocks: List[ConstraintBlock] = []
        self._linear: List[np.ndarray] = []
        self._target: List[float] = []
        self._target_rate: List[np.ndarray] = []
        self._amplitude: List[float] = []
        self._frequency: List[float] = []
        self._quad: List[Tuple[int, int, int, float]] = []
        self._rates: List[Tuple[int, int, int, float]] = []
        self._welded_rows: List[int] = []

    @property
    def row_count(self) -> int:
        return len(self._target)

    def _new_row(self) -> int:
        self._linear.append(np.zeros(self._m))
        self._target.append(0.0)
        self._target_rate.append(np.zeros(self._n_a))
        self._amplitude.append(0.0)
        self._frequency.append(0.0)
        return len(self._target) - 1

    def _close_block(self, kind: str, name: str, start: int, refs: Sequence[str], reference=()) -> None:
        self._blocks.append(
            ConstraintBlock(
                kind=kind,
                name=name,
                start=start,
                stop=self.row_count,
                refs=tuple(refs),
                reference=tuple(float(value) for value in reference),
            )
        )

    def _add_point(self, row: int, component: int, attachment: Attachment, sign: float) -> None:
        if attachment.is_ground:
            self._target[row] -= sign * attachment.offset[component]
            self._target_rate[row] -= sign * attachment.offset_rate[component]
            return
        self._linear[row][attachment.dofs] += sign * attachment.shape[component]
        if attachment.local_rate is not None:
            for k in range(3):
                col = int(attachment.dofs[3 + 3 * k + component])
                for var in np.flatnonzero(attachment.local_rate[k]):
                    self._rates.append((int(var), row, col, sign * attachment.local_rate[k, var]))

    def add_internal(self, name: str, offset: int) -> None:
        start = self.row_count
        for i, j in _INTERNAL_PAIRS:
            row = self._new_row()
            for c in range(3):
                a = offset + 3 + 3 * i + c
                b = offset + 3 + 3 * j + c
                if i == j:
                    self._quad.append((row, a, a, 2.0))
                else:
                    self._quad.append((row, a, b, 1.0))
                    self._quad.append((row, b, a, 1.0))
            if i == j:
                self._target[row] = 1.0
        self._close_block(INTERNAL, name, start, (name,))

    def add_spherical(self, name: str, first: Attachment, second: Attachment, refs: Sequence[str]) -> None:
        start = self.row_count
        for c in range(3):
            row = self._new_row()
            self._add_point(row, c, first, 1.0)
            self._add_point(row, c, second, -1.0)
        self._close_block(SPHERICAL, name, start, refs)

    def add_ground_anchor(
        self,
        name: str,
        attachment: Attachment,
        anchor: Attachment,
        refs: Sequence[str],
        components: Sequence[int] = (0, 1, 2),
        excitation: Optional[Excitation] = None,
    ) -> None:
        start = self.row_count
        for c in components:
            row = self._new_row()
            self._add_point(row, c, attachment, 1.0)
            self._add_point(row, c, anchor, -1.0)
            if excitation is not None:
                self._amplitude[row] = excitation.amplitude * excitation.direction[c]
                self._frequency[row] = excitation.angular_frequency
        self._close_block(
            GROUND_ANCHOR, name, start, refs, reference=anchor.offset[list(components)]
        )

    def add_welded(
        self,
        name: str,
        frame_offset: Optional[int],
        slope_dofs: Sequence[int],
        refs: Sequence[str],
    ) -> None:
        """Rows R^T r' with R the rigid frame (identity for ground).

        The reference value and its design rate are filled in by ``build``
        from the initial configuration.
        """
        start = self.row_count
        for k in range(3):
            row = self._new_row()
            self._welded_rows.append(row)
            if frame_offset is None:
                self._linear[row][int(slope_dofs[k])] = 1.0
                continue
            for c in range(3):
                e = frame_offset + 3 + 3 * k + c
                s = int(slope_dofs[c])
                self._quad.append((row, e, s, 1.0))
                self._quad.append((row, s, e, 1.0))
        self._close_block(WELDED, name, start, refs)

    def build(self, q0: np.ndarray, dq0_da: np.ndarray) -> ConstraintSet:
        count = self.row_count
        quad = np.array(self._quad, dtype=float).reshape(-1, 4)
        rates = np.array(self._rates, dtype=float).reshape(-1, 4)
        constraint_set = ConstraintSet(
            blocks=tuple(self._blocks),
            count=count,
            dof_count=self._m,
            design_count=self._n_a,
            linear=np.array(self._linear).reshape(count, self._m),
            target=np.array(self._target, dtype=float),
            target_rate=np.array(self._target_rate).reshape(count, self._n_a),
            amplitude=np.array(self._amplitude, dtype=float),
            frequency=np.array(self._frequency, dtype=float),
            quad_rows=quad[:, 0].astype(int),
            quad_i=quad[:, 1].astype(int),
            quad_j=quad[:, 2].astype(int),
            quad_vals=quad[:, 3],
            rate_vars=rates[:, 0].astype(int),
            rate_rows=rates[:, 1].astype(int),
            rate_cols=rates[:, 2].astype(int),
            rate_vals=rates[:, 3],
        )
        if not self._welded_rows:
            return constraint_set
        rows = np.array(self._welded_rows)
        # Freeze R^T r' at t0; its design rate follows q0's.
        reference = constraint_set.evaluate(q0)[rows]
        reference_rate = (constraint_set.jacobian(q0) @ dq0_da)[rows]
        constraint_set.target[rows] = reference
        constraint_set.target_rate[rows] = reference_rate
        blocks = tuple(
            _with_reference(block, constraint_set.target) if block.kind == WELDED else block
            for block in constraint_set.blocks
        )
        return _replace_blocks(constraint_set, blocks)


def _with_reference(block: ConstraintBlock, target: np.ndarray) -> ConstraintBlock:
    return ConstraintBlock(
        kind=block.kind,
        name=block.name,
        start=block.start,
        stop=block.stop,
        refs=block.refs,
        reference=tuple(float(value) for value in target[block.rows]),
    )


def _replace_blocks(constraint_set: ConstraintSet, blocks: Tuple[ConstraintBlock, ...]) -> ConstraintSet:
    return replace(constraint_set, blocks=blocks)
