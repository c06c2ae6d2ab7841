"""Unmixing quality metrics and the evaluation report."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import GroundTruth, HsiDataset, scale, unscale_endmembers
from .linalg import ContractError, frobenius_norm
from .model import DEFAULT_EPSILON, ScaWeights, forward, volume

NULL_THRESHOLD = 1e-3
RANGE_TOLERANCE = 1e-6
# nudges exact ties in the assignment toward lower extracted indices
TIE_BREAK = 1e-13

# Averages reported for the benchmark scenes (RMSE(Y), RMSE(E), SAD(E), RMSE(A)).
PUBLISHED_REFERENCE = {
    "samson": {"rmse_y": 0.29e-4, "rmse_e": 0.48e-5, "sad_mean": 1.69e-4, "rmse_a": 1.18e-5},
    "jasper": {"rmse_y": 1.82e-4, "rmse_e": 2.24e-5, "sad_mean": 2.62e-4, "rmse_a": 3.34e-5},
    "urban": {"rmse_y": 0.04e-4, "rmse_e": 0.13e-5, "sad_mean": 1.43e-4, "rmse_a": 1.56e-5},
}


class EvaluationError(RuntimeError):
    pass


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ContractError("spectral angle undefined for a zero vector")
    return m / norms


def sad(x, y) -> float:
    """Spectral angle in radians between two nonzero vectors.

    Equal to arccos of the cosine similarity, evaluated as
    2 atan2(|u - v|, |u + v|) on the unit vectors so that angles near 0 and
    pi keep full precision.
    """
    u = _unit_rows(np.asarray(x, dtype=np.float64).ravel())
    v = _unit_rows(np.asarray(y, dtype=np.float64).ravel())
    return float(2.0 * np.arctan2(np.linalg.norm(u - v), np.linalg.norm(u + v)))


def sad_matrix(extracted, truth) -> np.ndarray:
    """Pairwise angles: entry (i, j) is sad(extracted[i], truth[j])."""
    u = _unit_rows(np.asarray(extracted, dtype=np.float64))[:, None, :]
    v = _unit_rows(np.asarray(truth, dtype=np.float64))[None, :, :]
    return 2.0 * np.arctan2(np.linalg.norm(u - v, axis=2), np.linalg.norm(u + v, axis=2))


def rmse(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ContractError(f"rmse shape mismatch {x.shape} vs {y.shape}")
    if x.size == 0:
        return 0.0
    return float(np.sqrt(np.mean((x - y) ** 2)))


def assign_min_cost(cost) -> np.ndarray:
    """Rows assigned to each column of a K' x K cost matrix (K' >= K)."""
    cost = np.asarray(cost, dtype=np.float64)
    rows, cols = cost.shape
    if rows < cols:
        raise ContractError(f"need at least as many extracted members as true ones ({rows} < {cols})")
    biased = cost + TIE_BREAK * np.arange(rows)[:, None]
    r, c = linear_sum_assignment(biased)
    out = np.empty(cols, dtype=int)
    out[c] = r
    return out


def align_endmembers(extracted, truth) -> np.ndarray:
    """Minimum-total-SAD matching; ``result[j]`` is the extracted row for truth row ``j``."""
    return assign_min_cost(sad_matrix(extracted, truth))


def detect_null_members(a, threshold: float = NULL_THRESHOLD) -> list[int]:
    if threshold <= 0:
        raise ContractError("null-member threshold must be positive")
    a = np.asarray(a, dtype=np.float64)
    return [int(i) for i in np.flatnonzero(a.max(axis=0) < threshold)]


@dataclass
class EvalReport:
    permutation: list[int]
    sad_per_member: list[float]
    rmse_a_per_member: list[float]
    rmse_a: float
    rmse_e: float
    rmse_y: float
    sad_mean: float
    null_members: list[int]
    decoder_range_violations: int
    n_masked: int = 0
    n_extracted: int = 0
    reference: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    CSV_FIELDS = ("k_extracted", "k_true", "sad_mean", "rmse_a", "rmse_e", "rmse_y", "n_null", "range_violations")

    def csv_row(self) -> dict:
        return {
            "k_extracted": self.n_extracted,
            "k_true": len(self.permutation),
            "sad_mean": self.sad_mean,
            "rmse_a": self.rmse_a,
            "rmse_e": self.rmse_e,
            "rmse_y": self.rmse_y,
            "n_null": len(self.null_members),
            "range_violations": self.decoder_range_violations,
        }


def _scaled(data: HsiDataset) -> tuple[np.ndarray, object]:
    scaled = scale(data)
    return scaled.y, scaled.scale


def evaluate(
    weights: ScaWeights,
    data: HsiDataset,
    gt: GroundTruth,
    epsilon: float = DEFAULT_EPSILON,
    *,
    mask=None,
    null_threshold: float = NULL_THRESHOLD,
    reference: str | None = None,
) -> EvalReport:
    """Score trained weights against ground truth, all in original units.

    ``data`` is the unscaled scene; it is scaled here exactly as training
    scaled it.  ``mask`` lists pixel indices excluded from the abundance
    metrics (e.g. injected outliers).
    """
    ys, params = _scaled(data)
    a, _ = forward(ys, weights, epsilon)
    e_hat = unscale_endmembers(weights.decoder, params)
    k_true = gt.endmembers.shape[0]

    nulls = detect_null_members(a, null_threshold)
    live = [i for i in range(weights.n_members) if i not in nulls]
    if not live:
        raise EvaluationError("every extracted member has a null abundance map")
    # with too few live members fall back to matching over all of them
    candidates = live if len(live) >= k_true else list(range(weights.n_members))
    sub = align_endmembers(e_hat[candidates], gt.endmembers)
    perm = [candidates[i] for i in sub]

    keep = np.ones(data.n_pixels, dtype=bool)
    if mask is not None and len(mask):
        keep[np.asarray(mask, dtype=int)] = False
    a_hat = a[keep][:, perm]
    a_true = gt.abundances[keep]

    sads = [sad(e_hat[p], gt.endmembers[j]) for j, p in enumerate(perm)]
    rm_a = [rmse(a_hat[:, j], a_true[:, j]) for j in range(k_true)]
    out_of_range = (weights.decoder < -RANGE_TOLERANCE) | (weights.decoder > 1.0 + RANGE_TOLERANCE)
    return EvalReport(
        permutation=perm,
        sad_per_member=sads,
        rmse_a_per_member=rm_a,
        rmse_a=rmse(a_hat, a_true),
        rmse_e=rmse(e_hat[perm], gt.endmembers),
        rmse_y=rmse(data.y, a @ e_hat),
        sad_mean=float(np.mean(sads)),
        null_members=nulls,
        decoder_range_violations=int(np.count_nonzero(out_of_range)),
        n_masked=int(np.count_nonzero(~keep)),
        n_extracted=weights.n_members,
        reference=dict(PUBLISHED_REFERENCE.get(reference, {})) if reference else {},
    )


def evaluate_without_truth(weights: ScaWeights, data: HsiDataset, epsilon: float = DEFAULT_EPSILON) -> dict:
    """What can be scored with no ground truth: data fit and representation terms."""
    ys, params = _scaled(data)
    a, _ = forward(ys, weights, epsilon)
    e_hat = unscale_endmembers(weights.decoder, params)
    k = weights.n_members
    return {
        "rmse_y": rmse(data.y, a @ e_hat),
        "biorth": frobenius_norm(weights.decoder @ weights.encoder - np.eye(k)),
        "volume": volume(weights.decoder) if k >= 2 else 0.0,
        "null_members": detect_null_members(a),
    }
