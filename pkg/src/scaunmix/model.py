"""The two-layer unmixing autoencoder: forward pass, loss and gradients.

Weights are an encoder ``F x K`` and a decoder ``K x F`` with no biases.
The encoder output goes through a normalized ReLU so that each pixel's
abundance vector lies on the probability simplex; the decoder is linear and
its rows are the endmember spectra.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import ContractError, as_matrix, det, frobenius_norm, solve

DEFAULT_EPSILON = 1e-8
NORM_FLOOR = 1e-12
VOLUME_RIDGE = 1e-12


@dataclass
class ScaWeights:
    encoder: np.ndarray  # F x K
    decoder: np.ndarray  # K x F, rows are endmember spectra

    def __post_init__(self):
        self.encoder = as_matrix(self.encoder, "encoder")
        self.decoder = as_matrix(self.decoder, "decoder")
        f, k = self.encoder.shape
        if self.decoder.shape != (k, f):
            raise ContractError(
                f"decoder shape {self.decoder.shape} does not mirror encoder shape {self.encoder.shape}"
            )

    @property
    def n_bands(self) -> int:
        return self.encoder.shape[0]

    @property
    def n_members(self) -> int:
        return self.encoder.shape[1]

    @property
    def n_params(self) -> int:
        return self.encoder.size + self.decoder.size

    def copy(self) -> "ScaWeights":
        return ScaWeights(self.encoder.copy(), self.decoder.copy())

    def permuted(self, order) -> "ScaWeights":
        """Reorder members: decoder rows and encoder columns by ``order``."""
        order = np.asarray(order)
        return ScaWeights(self.encoder[:, order], self.decoder[order, :])


@dataclass(frozen=True)
class LossBreakdown:
    recon: float
    biorth: float
    volume: float
    lam: float

    @property
    def total(self) -> float:
        return self.recon + self.biorth + self.lam * self.volume

    def as_dict(self) -> dict:
        return {
            "recon": self.recon,
            "biorth": self.biorth,
            "volume": self.volume,
            "lambda": self.lam,
            "total": self.total,
        }


@dataclass
class Gradients:
    d_encoder: np.ndarray
    d_decoder: np.ndarray

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.d_encoder**2) + np.sum(self.d_decoder**2)))


def normalized_relu(pre_activation, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """``max(0, y_k) / (sum_k max(0, y_k) + epsilon)``, applied row-wise."""
    y = np.asarray(pre_activation, dtype=np.float64)
    r = np.maximum(y, 0.0)
    return r / (np.sum(r, axis=-1, keepdims=True) + epsilon)


def recon_weight(batch_rows: int, n_total: int | None) -> float:
    """Factor applied to ``||batch - reconstruction||_F`` in the loss.

    With ``n_total`` given, a batch of B rows is scaled by sqrt(N / B) so the
    term estimates the full-data residual norm (exact for B = N).  Without it
    the batch residual norm is used as is.
    """
    if n_total is None or n_total == batch_rows:
        return 1.0
    return float(np.sqrt(n_total / batch_rows))


def _check_batch(batch, w: ScaWeights) -> np.ndarray:
    batch = as_matrix(batch, "batch")
    if batch.shape[1] != w.n_bands:
        raise ContractError(f"batch has {batch.shape[1]} bands, weights expect {w.n_bands}")
    return batch


def forward(batch, w: ScaWeights, epsilon: float = DEFAULT_EPSILON) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(abundances B x K, reconstruction B x F)``."""
    batch = _check_batch(batch, w)
    abundances = normalized_relu(batch @ w.encoder, epsilon)
    return abundances, abundances @ w.decoder


def volume_matrix(decoder) -> np.ndarray:
    """The ``K x F`` matrix whose Gram determinant is the simplex volume.

    First row is all ones; the rest are the first K-1 mean-corrected
    endmembers (the last one is implied, since corrected rows sum to zero).
    """
    e = as_matrix(decoder, "decoder")
    k, f = e.shape
    if k < 2:
        raise ContractError(f"volume needs at least 2 members, got {k}")
    centred = e - e.mean(axis=0)
    return np.vstack([np.ones((1, f)), centred[: k - 1]])


def volume(decoder) -> float:
    eh = volume_matrix(decoder)
    return abs(det(eh @ eh.T))


def loss(batch, w: ScaWeights, lam: float, epsilon: float = DEFAULT_EPSILON, n_total: int | None = None) -> LossBreakdown:
    if lam < 0:
        raise ContractError(f"lambda must be >= 0, got {lam}")
    batch = _check_batch(batch, w)
    _, recon = forward(batch, w, epsilon)
    k = w.n_members
    return LossBreakdown(
        recon=recon_weight(batch.shape[0], n_total) * frobenius_norm(batch - recon),
        biorth=frobenius_norm(w.decoder @ w.encoder - np.eye(k)),
        volume=volume(w.decoder) if k >= 2 else 0.0,
        lam=float(lam),
    )


def _norm(x: np.ndarray) -> float:
    flat = x.ravel()
    return float(np.sqrt(np.dot(flat, flat)))


def _unit(x: np.ndarray) -> np.ndarray:
    return x / max(_norm(x), NORM_FLOOR)


def volume_gradient(decoder) -> np.ndarray:
    """d|det(Ê Êᵀ)| / d decoder, using |det G| * G^{-1} with a tiny ridge."""
    e = as_matrix(decoder, "decoder")
    k = e.shape[0]
    eh = volume_matrix(e)
    g = eh @ eh.T
    vol = abs(det(g))
    # symmetric G: d|det G|/dG = |det G| G^{-1}; dG = dÊ Êᵀ + Ê dÊᵀ
    d_eh = 2.0 * vol * solve(g + VOLUME_RIDGE * np.eye(k), eh)
    d_centred = np.zeros_like(e)
    d_centred[: k - 1] = d_eh[1:]
    return d_centred - d_centred.mean(axis=0)


# below this fraction of ||Y||^2 the expanded residual norm loses digits
_EXPAND_CUTOFF = 1e-6


def _forward_backward(batch, encoder, decoder, lam, epsilon, n_total):
    # validated inputs only; shared by backward() and the training loop
    k = encoder.shape[1]
    pre = batch @ encoder
    active = np.maximum(pre, 0.0)
    denom = active.sum(axis=1, keepdims=True) + epsilon
    a = active / denom

    # residual Y - A E enters only through A^T(Y - AE) and (Y - AE) E^T,
    # so the B x F residual itself is formed only when its norm is tiny
    at_y = a.T @ batch
    at_a = a.T @ a
    y_et = batch @ decoder.T
    ee = decoder @ decoder.T
    yy = _norm(batch) ** 2
    r2 = yy - 2.0 * float(np.sum(at_y * decoder)) + float(np.sum(at_a * ee))
    if r2 > _EXPAND_CUTOFF * yy:
        r = np.sqrt(r2)
    else:
        r = _norm(batch - a @ decoder)
    scale = -recon_weight(batch.shape[0], n_total) / max(r, NORM_FLOOR)
    d_dec = scale * (at_y - at_a @ decoder)
    g_a = scale * (y_et - a @ ee)
    # A = R / (sum R + eps): dA_k/dR_j = (delta_kj - A_k) / (sum R + eps)
    g_r = (g_a - np.sum(g_a * a, axis=1, keepdims=True)) / denom
    g_r[pre <= 0.0] = 0.0
    d_enc = batch.T @ g_r

    g_bi = _unit(decoder @ encoder - np.eye(k))
    d_dec += g_bi @ encoder.T
    d_enc += decoder.T @ g_bi

    if lam != 0.0 and k >= 2:
        d_dec += lam * volume_gradient(decoder)
    return a, Gradients(d_enc, d_dec)


def backward(batch, w: ScaWeights, lam: float, epsilon: float = DEFAULT_EPSILON, n_total: int | None = None) -> Gradients:
    """Analytic gradient of ``loss(...).total`` w.r.t. encoder and decoder.

    ReLU has subgradient 0 at exactly 0.  Norm terms divide by
    ``max(||X||_F, 1e-12)`` so an exact fit yields a zero gradient.
    """
    batch = _check_batch(batch, w)
    return _forward_backward(batch, w.encoder, w.decoder, lam, epsilon, n_total)[1]
