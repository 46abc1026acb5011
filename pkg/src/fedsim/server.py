"""Server-side aggregation: pairwise similarities, per-row simplex QP, weighted mixing.

Each round the server solves, for every client row, the quadratic program
    min_w sum_j (w_j - m_i)^2 - alpha * sum_j w_j * s_ij   s.t. w on the simplex,
which reduces to the exact Euclidean projection of m_i + (alpha/2) * s_i.
A size-weighted plain average is provided as the control aggregator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, ProtocolError
from .fed_client import ClientUpdate
from .numerics import FlatParams, simplex_project

SIMILARITY_METRICS = ("inner", "cosine", "l1_based", "l2_based")
NORMALIZATIONS = ("none", "max_abs_row")
M_MODES = ("row_constant_mi", "column_mj")


@dataclass
class SgcaConfig:
    """Knobs of the similarity-guided aggregator."""

    alpha: float = 1.0
    metric: str = "l2_based"
    normalization: str = "max_abs_row"
    m_mode: str = "row_constant_mi"

    def validate(self) -> None:
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise InvalidArgumentError("alpha must be finite and >= 0")
        if self.metric not in SIMILARITY_METRICS:
            raise InvalidArgumentError(
                f"metric must be one of {SIMILARITY_METRICS}, got {self.metric!r}"
            )
        if self.normalization not in NORMALIZATIONS:
            raise InvalidArgumentError(
                f"normalization must be one of {NORMALIZATIONS}, got {self.normalization!r}"
            )
        if self.m_mode not in M_MODES:
            raise InvalidArgumentError(f"m_mode must be one of {M_MODES}, got {self.m_mode!r}")


@dataclass
class CollaborationMatrix:
    """Row-stochastic N x N mixing matrix; row i builds client i's broadcast."""

    w: np.ndarray
    round_index: int

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise InvalidArgumentError("collaboration matrix must be square")
        if np.any(w < 0):
            raise InvalidArgumentError("collaboration matrix entries must be >= 0")
        if np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-9):
            raise InvalidArgumentError("collaboration matrix rows must sum to 1")
        self.w = w


def _check_manifests(params: Sequence[FlatParams]) -> None:
    first = params[0].manifest
    for p in params[1:]:
        if p.manifest != first:
            raise ProtocolError("parameter manifests differ across clients")


def pairwise_similarity(
    params: Sequence[FlatParams], metric: str, normalization: str = "max_abs_row"
) -> np.ndarray:
    """N x N similarity matrix; larger means more similar for every metric.

    l2_based / l1_based are negated distances (self-similarity 0); with
    max_abs_row each row is divided by its largest off-diagonal magnitude so
    alpha stays comparable across metrics.
    """
    if len(params) == 0:
        raise InvalidArgumentError("need at least one parameter vector")
    if metric not in SIMILARITY_METRICS:
        raise InvalidArgumentError(f"unknown metric {metric!r}")
    if normalization not in NORMALIZATIONS:
        raise InvalidArgumentError(f"unknown normalization {normalization!r}")
    _check_manifests(params)
    x = np.stack([p.values for p in params])
    n = x.shape[0]
    s = np.zeros((n, n))
    if metric == "inner":
        # Mirrored explicitly: a GEMM of x @ x.T is only symmetric up to rounding.
        for i in range(n):
            for j in range(i, n):
                s[i, j] = s[j, i] = float(x[i] @ x[j])
    elif metric == "cosine":
        norms = np.linalg.norm(x, axis=1)
        for i in range(n):
            for j in range(i, n):
                if norms[i] == 0.0 or norms[j] == 0.0:
                    value = 0.0
                else:
                    value = float(x[i] @ x[j] / (norms[i] * norms[j]))
                s[i, j] = s[j, i] = value
    else:
        order = 1 if metric == "l1_based" else 2
        for i in range(n):
            for j in range(i + 1, n):
                value = -float(np.linalg.norm(x[i] - x[j], ord=order))
                s[i, j] = s[j, i] = value
    if normalization == "max_abs_row":
        s = s.copy()
        for i in range(n):
            off = np.abs(np.delete(s[i], i)) if n > 1 else np.zeros(0)
            scale = off.max() if off.size else 0.0
            if scale > 0.0:
                s[i] = s[i] / scale
    return s


def solve_row(m_value: float, s_row: np.ndarray, alpha: float) -> np.ndarray:
    """One collaboration-matrix row: projection of m + (alpha/2) * s onto the simplex."""
    s_row = np.asarray(s_row, dtype=np.float64)
    if not np.isfinite(m_value) or not np.all(np.isfinite(s_row)):
        raise InvalidArgumentError("row inputs must be finite")
    if not np.isfinite(alpha) or alpha < 0:
        raise InvalidArgumentError("alpha must be finite and >= 0")
    return simplex_project(m_value + (alpha / 2.0) * s_row)


def update_matrix(updates: Sequence[ClientUpdate], cfg: SgcaConfig) -> CollaborationMatrix:
    """Recompute the full collaboration matrix from this round's uploads."""
    cfg.validate()
    n = len(updates)
    ids = sorted(u.client_id for u in updates)
    if ids != list(range(n)):
        raise ProtocolError(f"expected one update per client 0..{n - 1}, got ids {ids}")
    rounds = {u.round_index for u in updates}
    if len(rounds) != 1:
        raise ProtocolError(f"updates span multiple rounds: {sorted(rounds)}")
    by_id = sorted(updates, key=lambda u: u.client_id)
    params = [u.low_params for u in by_id]
    s = pairwise_similarity(params, cfg.metric, cfg.normalization)
    sizes = np.array([u.n_i for u in by_id], dtype=np.float64)
    if sizes.sum() <= 0:
        raise ProtocolError("total dataset size must be positive")
    m = sizes / sizes.sum()
    rows = []
    for i in range(n):
        if cfg.m_mode == "row_constant_mi":
            rows.append(solve_row(float(m[i]), s[i], cfg.alpha))
        else:
            rows.append(simplex_project(m + (cfg.alpha / 2.0) * s[i]))
    return CollaborationMatrix(np.vstack(rows), rounds.pop())


def aggregate(matrix: CollaborationMatrix, params: Sequence[FlatParams]) -> list[FlatParams]:
    """Per-client mixes: output_i = sum_j W_ij * params_j."""
    if len(params) != matrix.w.shape[0]:
        raise ProtocolError(
            f"matrix is {matrix.w.shape[0]}x{matrix.w.shape[0]} but got {len(params)} parameter sets"
        )
    _check_manifests(params)
    x = np.stack([p.values for p in params])
    mixed = matrix.w @ x
    return [params[0].with_values(mixed[i]) for i in range(len(params))]


def fedavg_aggregate(params: Sequence[FlatParams], sizes: Sequence[int]) -> FlatParams:
    """Size-weighted plain average; every client receives this same result."""
    if len(params) == 0 or len(sizes) != len(params):
        raise InvalidArgumentError("params and sizes must be non-empty and equal length")
    _check_manifests(params)
    weights = np.array(sizes, dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise InvalidArgumentError("total dataset size must be > 0")
    weights = weights / total
    x = np.stack([p.values for p in params])
    return params[0].with_values(weights @ x)
