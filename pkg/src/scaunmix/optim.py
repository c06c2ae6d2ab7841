"""AdaMax, weight initialisation and the training loop."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import HsiDataset
from .linalg import ContractError, SingularMatrixError, as_matrix, frobenius_norm, right_pseudo_inverse, tail_energy
from .model import DEFAULT_EPSILON, Gradients, ScaWeights, _forward_backward, forward, loss

log = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-6


class TrainingDivergedError(FloatingPointError):
    def __init__(self, step: int, terms: dict):
        self.step = step
        self.terms = terms
        super().__init__(f"non-finite loss at step {step}: {terms}")


@dataclass
class TrainConfig:
    k: int
    lam: float = 1e-3
    epochs: int = 20
    steps_per_epoch: int = 1000
    batch_size: int | None = None  # None: every step sees all pixels
    lr: float = 1e-4
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        for name in ("k", "steps_per_epoch", "log_every"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ContractError(f"epochs must be >= 0, got {self.epochs}")
        if self.lam < 0:
            raise ContractError(f"lambda must be >= 0, got {self.lam}")
        if not self.lr > 0 or not self.epsilon > 0:
            raise ContractError("lr and epsilon must be positive")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch


@dataclass
class AdamaxState:
    m: Gradients
    u: Gradients
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    lr: float = 1e-4
    eps_opt: float = 1e-8

    @classmethod
    def fresh(cls, w: ScaWeights, lr: float = 1e-4, **kw) -> "AdamaxState":
        zeros = lambda: Gradients(np.zeros_like(w.encoder), np.zeros_like(w.decoder))
        return cls(zeros(), zeros(), lr=lr, **kw)


@dataclass
class HistoryRecord:
    step: int
    recon: float
    biorth: float
    volume: float
    total: float
    residual: float
    tail_energy: float
    wall: float


@dataclass
class TrainHistory:
    records: list[HistoryRecord] = field(default_factory=list)
    # worst simplex deviation seen over every forward pass of the run
    max_negative_abundance: float = 0.0
    max_row_sum_error: float = 0.0

    # wall-clock stays out of the CSV so identical runs give identical files
    FIELDS = ("step", "recon", "biorth", "volume", "total", "residual", "tail_energy")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.FIELDS)
            for r in self.records:
                writer.writerow([r.step] + [repr(float(getattr(r, f))) for f in self.FIELDS[1:]])

    def eym_margin(self) -> float:
        """Smallest (residual - tail energy) over all records; >= 0 when the bound holds."""
        if not self.records:
            return float("inf")
        return min(r.residual - r.tail_energy for r in self.records)


def init_weights(f: int, k: int, seed: int) -> ScaWeights:
    """Random start drawn from PCG64 seeded with ``seed``.

    Encoder entries are U[0, 1) / sqrt(F) so initial pre-activations are
    order one for data in [0, 1].  Decoder entries are U[0, 1), the same
    range as the scaled spectra they have to reach.
    """
    if f < k or k < 1:
        raise ContractError(f"need f >= k >= 1, got f={f}, k={k}")
    rng = np.random.default_rng(seed)
    s = 1.0 / np.sqrt(f)
    encoder = rng.random((f, k)) * s
    decoder = rng.random((k, f))
    return ScaWeights(encoder, decoder)


def gt_init(e_true) -> ScaWeights:
    """Decoder = known endmembers, encoder = their right pseudo-inverse."""
    e = as_matrix(e_true, "e_true")
    return ScaWeights(right_pseudo_inverse(e), e.copy())


def adamax_step(w: ScaWeights, g: Gradients, s: AdamaxState) -> tuple[ScaWeights, AdamaxState]:
    """One AdaMax update; advances ``s.step`` before bias correction."""
    t = s.step + 1
    rate = s.lr / (1.0 - s.beta1**t)
    new_params = []
    new_m = []
    new_u = []
    for theta, grad, m, u in (
        (w.encoder, g.d_encoder, s.m.d_encoder, s.u.d_encoder),
        (w.decoder, g.d_decoder, s.m.d_decoder, s.u.d_decoder),
    ):
        m = s.beta1 * m + (1.0 - s.beta1) * grad
        u = np.maximum(s.beta2 * u, np.abs(grad))
        new_params.append(theta - rate * m / (u + s.eps_opt))
        new_m.append(m)
        new_u.append(u)
    state = AdamaxState(
        Gradients(*new_m), Gradients(*new_u), t, s.beta1, s.beta2, s.lr, s.eps_opt
    )
    return ScaWeights(*new_params), state


def _simplex_errors(a: np.ndarray) -> tuple[float, float]:
    neg = float(max(0.0, -a.min())) if a.size else 0.0
    sums = a.sum(axis=1)
    active = sums > 0.0
    err = float(np.abs(sums[active] - 1.0).max()) if np.any(active) else 0.0
    return neg, err


def _safe_terms(batch, w, cfg, n_total) -> dict:
    with np.errstate(all="ignore"):
        try:
            return loss(batch, w, cfg.lam, cfg.epsilon, n_total=n_total).as_dict()
        except (ContractError, SingularMatrixError) as exc:
            return {"error": str(exc)}


def _record(step, y, w, cfg, tail, t0, n_total) -> HistoryRecord:
    terms = _safe_terms(y, w, cfg, n_total)
    if not np.isfinite(terms.get("total", np.nan)):
        raise TrainingDivergedError(step, terms)
    lb = loss(y, w, cfg.lam, cfg.epsilon, n_total=n_total)
    _, recon = forward(y, w, cfg.epsilon)
    return HistoryRecord(
        step=step,
        recon=lb.recon,
        biorth=lb.biorth,
        volume=lb.volume,
        total=lb.total,
        residual=frobenius_norm(y - recon),
        tail_energy=tail,
        wall=time.perf_counter() - t0,
    )


def train(data: HsiDataset, cfg: TrainConfig, init: ScaWeights, *, tail: float | None = None):
    """Run ``epochs * steps_per_epoch`` AdaMax updates from ``init``.

    Batches are drawn uniformly with replacement from all pixels (there is
    no held-out split).  Every ``log_every`` steps the full-data loss, the
    full-data residual and the rank-K tail energy are recorded.
    Returns ``(weights, history)``.
    """
    y = data.y
    if y.min() < 0.0 or y.max() > 1.0:
        raise ContractError("train expects data scaled to [0, 1]")
    if init.n_members != cfg.k or init.n_bands != data.n_bands:
        raise ContractError(
            f"init weights are {init.n_bands}x{init.n_members}, expected {data.n_bands}x{cfg.k}"
        )
    history = TrainHistory()
    w = init.copy()
    if cfg.total_steps == 0:
        return w, history

    n = data.n_pixels
    if tail is None:
        tail = tail_energy(y, min(cfg.k, *y.shape))
    rng = np.random.default_rng([cfg.seed, 1])
    state = AdamaxState.fresh(w, lr=cfg.lr)
    full_batch = cfg.batch_size is None or cfg.batch_size >= n
    t0 = time.perf_counter()

    for step in range(1, cfg.total_steps + 1):
        batch = y if full_batch else y[rng.integers(0, n, size=cfg.batch_size)]
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                a, g = _forward_backward(batch, w.encoder, w.decoder, cfg.lam, cfg.epsilon, n)
            finite = np.all(np.isfinite(g.d_encoder)) and np.all(np.isfinite(g.d_decoder))
        except (ContractError, SingularMatrixError):
            # raised by kernels that refuse overflowed operands
            finite = False
        if not finite:
            raise TrainingDivergedError(step, _safe_terms(batch, w, cfg, n))
        neg, err = _simplex_errors(a)
        if neg > history.max_negative_abundance:
            history.max_negative_abundance = neg
        if err > history.max_row_sum_error:
            history.max_row_sum_error = err
        w, state = adamax_step(w, g, state)
        if step % cfg.log_every == 0 or step == cfg.total_steps:
            rec = _record(step, y, w, cfg, tail, t0, n)
            history.records.append(rec)
            if step % (cfg.log_every * 10) == 0:
                log.debug("step %d total %.3e residual %.3e tail %.3e", step, rec.total, rec.residual, tail)
    return w, history
