"""Dense matrices of expressions with exact inverse via adjugate/determinant.

Charts here are small (m ≤ 4 in the bundled data), so Laplace expansion is
perfectly adequate and keeps every entry an exact expression; the shared
determinant node makes pointwise evaluation cheap through the eval cache.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .expressions import Expr, ZERO, ONE, add, as_expr, div, mul, neg, sub


class ExprMatrix:
    """An immutable matrix of expressions."""

    __slots__ = ("rows", "shape")

    def __init__(self, rows: Sequence[Sequence[Expr]]):
        normalized = tuple(tuple(as_expr(e) for e in row) for row in rows)
        if not normalized or any(len(r) != len(normalized[0]) for r in normalized):
            raise ValueError("matrix rows must be non-empty and of equal length")
        object.__setattr__(self, "rows", normalized)
        object.__setattr__(self, "shape", (len(normalized), len(normalized[0])))

    def __setattr__(self, *args):
        raise AttributeError("ExprMatrix is immutable")

    @staticmethod
    def zeros(n: int, m: int | None = None) -> "ExprMatrix":
        m = n if m is None else m
        return ExprMatrix([[ZERO] * m for _ in range(n)])

    @staticmethod
    def identity(n: int) -> "ExprMatrix":
        return ExprMatrix([[ONE if i == j else ZERO for j in range(n)] for i in range(n)])

    @staticmethod
    def from_fn(n: int, m: int, fn: Callable[[int, int], Expr]) -> "ExprMatrix":
        return ExprMatrix([[fn(i, j) for j in range(m)] for i in range(n)])

    def __getitem__(self, ij: tuple[int, int]) -> Expr:
        return self.rows[ij[0]][ij[1]]

    def __add__(self, other: "ExprMatrix") -> "ExprMatrix":
        self._check_same_shape(other)
        return ExprMatrix(
            [[add(a, b) for a, b in zip(ra, rb)] for ra, rb in zip(self.rows, other.rows)]
        )

    def __sub__(self, other: "ExprMatrix") -> "ExprMatrix":
        self._check_same_shape(other)
        return ExprMatrix(
            [[sub(a, b) for a, b in zip(ra, rb)] for ra, rb in zip(self.rows, other.rows)]
        )

    def __matmul__(self, other: "ExprMatrix") -> "ExprMatrix":
        n, k = self.shape
        k2, m = other.shape
        if k != k2:
            raise ValueError(f"shape mismatch: {self.shape} @ {other.shape}")
        out = []
        for i in range(n):
            row = []
            for j in range(m):
                acc = ZERO
                for l in range(k):
                    acc = add(acc, mul(self.rows[i][l], other.rows[l][j]))
                row.append(acc)
            out.append(row)
        return ExprMatrix(out)

    def scale(self, c) -> "ExprMatrix":
        c = as_expr(c)
        return ExprMatrix([[mul(c, e) for e in row] for row in self.rows])

    def neg(self) -> "ExprMatrix":
        return ExprMatrix([[neg(e) for e in row] for row in self.rows])

    def transpose(self) -> "ExprMatrix":
        n, m = self.shape
        return ExprMatrix([[self.rows[i][j] for i in range(n)] for j in range(m)])

    def apply(self, vec: Sequence[Expr]) -> list[Expr]:
        """Matrix–vector product as a list of expressions."""
        n, m = self.shape
        if len(vec) != m:
            raise ValueError(f"vector of length {len(vec)} against shape {self.shape}")
        out = []
        for i in range(n):
            acc = ZERO
            for j in range(m):
                acc = add(acc, mul(self.rows[i][j], as_expr(vec[j])))
            out.append(acc)
        return out

    def det(self) -> Expr:
        n, m = self.shape
        if n != m:
            raise ValueError("determinant of a non-square matrix")
        return _det(self.rows)

    def inverse(self) -> "ExprMatrix":
        """Exact inverse: adjugate over determinant.

        Every entry shares one determinant node, so a near-singular sample
        point surfaces as a degenerate-denominator diagnostic.
        """
        n, m = self.shape
        if n != m:
            raise ValueError("inverse of a non-square matrix")
        d = self.det()
        out = [[ZERO] * n for _ in range(n)]
        for i in range(n):
            for j in range(n):
                minor = [
                    [self.rows[r][c] for c in range(n) if c != i]
                    for r in range(n)
                    if r != j
                ]
                cof = _det(minor)
                if (i + j) % 2 == 1:
                    cof = neg(cof)
                out[i][j] = div(cof, d)
        return ExprMatrix(out)

    def evaluate(self, env: dict[str, float], cache: dict[int, float] | None = None) -> np.ndarray:
        if cache is None:
            cache = {}
        n, m = self.shape
        out = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                out[i, j] = self.rows[i][j]._eval(env, cache)
        return out

    def _check_same_shape(self, other: "ExprMatrix") -> None:
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch: {self.shape} vs {other.shape}")

    def __repr__(self):
        return f"ExprMatrix({self.shape[0]}x{self.shape[1]})"


def _det(rows: Sequence[Sequence[Expr]]) -> Expr:
    n = len(rows)
    if n == 1:
        return rows[0][0]
    if n == 2:
        return sub(mul(rows[0][0], rows[1][1]), mul(rows[0][1], rows[1][0]))
    acc = ZERO
    for j in range(n):
        entry = rows[0][j]
        minor = [[row[c] for c in range(n) if c != j] for row in rows[1:]]
        term = mul(entry, _det(minor))
        acc = add(acc, neg(term) if j % 2 else term)
    return acc


def block_matrix(blocks: Sequence[Sequence[ExprMatrix]]) -> ExprMatrix:
    """Assemble a matrix from a 2-D grid of equal-height/width blocks."""
    rows: list[list[Expr]] = []
    for block_row in blocks:
        height = block_row[0].shape[0]
        for b in block_row:
            if b.shape[0] != height:
                raise ValueError("inconsistent block heights")
        for r in range(height):
            rows.append([e for b in block_row for e in b.rows[r]])
    return ExprMatrix(rows)
