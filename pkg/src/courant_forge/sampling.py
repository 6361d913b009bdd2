"""Deterministic sample points, finite-difference oracle and residual scans."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .expressions import DegenerateDenominatorError, Expr
from .fields import Chart

DEFAULT_SAMPLES = 50
DEFAULT_SEED = 0
DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class SamplePlan:
    samples: int = DEFAULT_SAMPLES
    seed: int = DEFAULT_SEED
    tol: float = DEFAULT_TOL


def sample_envs(chart: Chart, samples: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED) -> list[dict[str, float]]:
    """The fixed grid (1/3 and 2/3 of each axis) plus seeded uniform points."""
    axes = [(lo + (hi - lo) / 3, lo + 2 * (hi - lo) / 3) for lo, hi in chart.domain]
    envs = [chart.env(coords) for coords in product(*axes)]
    rng = np.random.default_rng(seed)
    lows = np.array([lo for lo, _ in chart.domain])
    highs = np.array([hi for _, hi in chart.domain])
    for _ in range(samples):
        coords = rng.uniform(lows, highs)
        envs.append(chart.env(coords))
    return envs


def fd_partial(e: Expr, env: dict[str, float], name: str, h: float = 1e-5) -> float:
    """Central finite difference, the independent oracle for symbolic partials."""
    up = dict(env)
    down = dict(env)
    up[name] = env[name] + h
    down[name] = env[name] - h
    return (e.evaluate(up) - e.evaluate(down)) / (2 * h)


@dataclass
class ScanResult:
    """Outcome of evaluating a residual over sample points."""

    max_residual: float
    witness: tuple[float, ...] | None
    skipped: list[str]
    evaluated: int

    def ok(self, tol: float) -> bool:
        return self.evaluated > 0 and self.max_residual <= tol


def scan(fn, envs: list[dict[str, float]], coord_names: tuple[str, ...]) -> ScanResult:
    """Evaluate ``fn(env) -> float | ndarray`` over points, tracking the worst.

    Near-singular points (degenerate denominators) are dropped with a
    diagnostic instead of failing the whole scan.
    """
    worst = 0.0
    witness: tuple[float, ...] | None = None
    skipped: list[str] = []
    evaluated = 0
    for env in envs:
        try:
            value = fn(env)
        except DegenerateDenominatorError as err:
            coords = tuple(env[n] for n in coord_names)
            skipped.append(f"point {_fmt(coords)} skipped: {err.detail}")
            continue
        evaluated += 1
        residual = float(np.max(np.abs(value))) if np.ndim(value) else abs(float(value))
        if residual > worst or witness is None:
            worst = residual
            witness = tuple(env[n] for n in coord_names)
    return ScanResult(worst, witness, skipped, evaluated)


def _fmt(coords: tuple[float, ...]) -> str:
    return "(" + ", ".join(f"{c:.6g}" for c in coords) + ")"


def numeric_rank(matrix: np.ndarray, rel_tol: float = 1e-9) -> int:
    """Rank by singular values above ``rel_tol`` relative to the largest."""
    sv = np.linalg.svd(matrix, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rel_tol * sv[0]))
