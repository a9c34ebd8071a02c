"""Conditional VAE: encoder/decoder networks, ELBO loss, training and persistence.

The encoder maps ``(x, y)`` through a ReLU layer and a linear layer onto
``2q`` outputs; the first ``q`` are the posterior mean (identity head), the
rest pass through softplus to give the diagonal posterior variance. The
decoder maps ``(x, z)`` to the conditional mean of ``y``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import nn
from .errors import (
    CorruptModelError,
    ModelVersionError,
    ShapeError,
    TrainingDivergenceError,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_MAGIC = b"CVAE"
VAR_FLOOR = 1e-12


@dataclass
class CvaeModel:
    encoder: nn.Mlp
    decoder: nn.Mlp
    p: int
    d: int
    q: int = 1
    sigma: float = 1.0
    norm_stats: dict[str, tuple[float, float]] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.q < 1:
            raise ShapeError("latent dimension q must be >= 1")
        if self.encoder.in_dim != self.p + self.d or self.encoder.out_dim != 2 * self.q:
            raise ShapeError(
                f"encoder must map R^{self.p + self.d} -> R^{2 * self.q}, "
                f"got R^{self.encoder.in_dim} -> R^{self.encoder.out_dim}"
            )
        if self.decoder.in_dim != self.p + self.q or self.decoder.out_dim != self.d:
            raise ShapeError(
                f"decoder must map R^{self.p + self.q} -> R^{self.d}, "
                f"got R^{self.decoder.in_dim} -> R^{self.decoder.out_dim}"
            )
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def copy(self) -> "CvaeModel":
        return CvaeModel(
            self.encoder.copy(),
            self.decoder.copy(),
            self.p,
            self.d,
            self.q,
            self.sigma,
            dict(self.norm_stats),
            copy.deepcopy(self.metadata),
        )

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.decoder.params()


def build_model(
    p: int,
    d: int,
    q: int = 1,
    encoder_hidden: int = 16,
    decoder_hidden: Sequence[int] = (16, 8),
    sigma: float = 1.0,
    seed: int = 0,
    metadata: dict | None = None,
) -> CvaeModel:
    rng = np.random.default_rng(seed)
    encoder = nn.Mlp.init([p + d, encoder_hidden, 2 * q], ["relu", "identity"], rng)
    dec_dims = [p + q, *decoder_hidden, d]
    decoder = nn.Mlp.init(
        dec_dims, ["relu"] * len(decoder_hidden) + ["identity"], rng
    )
    return CvaeModel(encoder, decoder, p, d, q, sigma, metadata=dict(metadata or {}))


def univariate_preset(p: int = 26, seed: int = 0, **kwargs) -> CvaeModel:
    """Per-stock model: decoder R^27 -> 16 -> 8 -> 1 at the default p."""
    return build_model(p, 1, encoder_hidden=16, decoder_hidden=(16, 8), seed=seed, **kwargs)


def multivariate_preset(n_series: int = 50, n_advanced: int = 8, seed: int = 0, **kwargs) -> CvaeModel:
    """Joint panel model: decoder R^59 -> 64 -> 64 -> 50 for a 50-stock panel."""
    return build_model(
        n_advanced + n_series,
        n_series,
        encoder_hidden=64,
        decoder_hidden=(64, 64),
        seed=seed,
        **kwargs,
    )


def _check_dim(arr: np.ndarray, dim: int, name: str) -> None:
    if arr.shape[-1] != dim:
        raise ShapeError(f"{name} has trailing dimension {arr.shape[-1]}, expected {dim}")


def encode(model: CvaeModel, x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_dim(x, model.p, "x")
    _check_dim(y, model.d, "y")
    h, _ = nn.forward(model.encoder, np.concatenate([x, y], axis=-1))
    mu = h[..., : model.q]
    var = np.maximum(nn.softplus(h[..., model.q :]), VAR_FLOOR)
    return mu, var


def reparam_sample(mu, var_diag, eps) -> np.ndarray:
    var_diag = np.asarray(var_diag, dtype=float)
    if np.any(var_diag <= 0):
        raise ValueError("variance entries must be strictly positive")
    return np.asarray(mu, dtype=float) + np.sqrt(var_diag) * np.asarray(eps, dtype=float)


def decode(model: CvaeModel, x, z) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    _check_dim(x, model.p, "x")
    _check_dim(z, model.q, "z")
    if x.ndim < z.ndim:
        x = np.broadcast_to(x, z.shape[:-1] + x.shape[-1:])
    mean, _ = nn.forward(model.decoder, np.concatenate([x, z], axis=-1))
    return mean


def kl_to_prior(mu, var_diag) -> float | np.ndarray:
    """(|mu|^2 + tr(var) - log det(var)) / 2, summed over the last axis.

    This is KL(N(mu, diag var) || N(0, I)) shifted up by the constant q/2.
    """
    mu = np.asarray(mu, dtype=float)
    var_diag = np.asarray(var_diag, dtype=float)
    if np.any(var_diag <= 0):
        raise ValueError("variance entries must be strictly positive")
    out = 0.5 * (np.sum(mu**2, axis=-1) + np.sum(var_diag, axis=-1) - np.sum(np.log(var_diag), axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def recon_term(y, mean, sigma: float) -> float | np.ndarray:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if y.shape[-1] != mean.shape[-1]:
        raise ShapeError("y and mean dimensions differ")
    out = np.sum((y - mean) ** 2, axis=-1) / (2.0 * sigma**2)
    return float(out) if np.ndim(out) == 0 else out


def elbo_loss(model: CvaeModel, x, y, eps_draws, sigma: float) -> float:
    """Negative ELBO estimate for one example, or the batch mean.

    ``eps_draws`` has shape ``(S, q)`` for a single example and ``(n, S, q)``
    for a batch of ``n`` examples.
    """
    return elbo_loss_and_grads(model, x, y, eps_draws, sigma, need_grads=False)[0]


def elbo_loss_and_grads(
    model: CvaeModel, x, y, eps_draws, sigma: float, need_grads: bool = True
) -> tuple[float, list[np.ndarray] | None]:
    """Batch-mean negative ELBO and its gradient w.r.t. ``model.params()``.

    The noise ``eps_draws`` is held fixed, so the loss is a deterministic
    function of the parameters.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    eps = np.asarray(eps_draws, dtype=float)
    if eps.ndim == 2:
        eps = eps[None]
    if eps.ndim != 3 or eps.shape[0] != x.shape[0] or eps.shape[2] != model.q:
        raise ShapeError(f"eps_draws shape {np.shape(eps_draws)} does not match the batch")
    if len(eps) == 0 or eps.shape[1] == 0:
        raise ValueError("eps_draws must be non-empty")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    _check_dim(x, model.p, "x")
    _check_dim(y, model.d, "y")
    n, S, q = eps.shape

    h, enc_cache = nn.forward(model.encoder, np.concatenate([x, y], axis=1))
    mu = h[:, :q]
    a = h[:, q:]
    sp = nn.softplus(a)
    var = np.maximum(sp, VAR_FLOOR)
    std = np.sqrt(var)
    z = mu[:, None, :] + std[:, None, :] * eps

    dec_in = np.concatenate([np.repeat(x, S, axis=0), z.reshape(n * S, q)], axis=1)
    mean, dec_cache = nn.forward(model.decoder, dec_in)
    resid = np.repeat(y, S, axis=0) - mean
    recon = np.sum(resid**2, axis=1) / (2.0 * sigma**2)
    kl = 0.5 * (np.sum(mu**2, axis=1) + np.sum(var, axis=1) - np.sum(np.log(var), axis=1))
    loss = float(recon.mean() + kl.mean())
    if not need_grads:
        return loss, None

    d_mean = -resid / (sigma**2 * n * S)
    dec_grads, d_dec_in = nn.backward(model.decoder, dec_cache, d_mean)
    dz = d_dec_in[:, x.shape[1] :].reshape(n, S, q)
    d_mu = dz.sum(axis=1) + mu / n
    d_var = (dz * eps).sum(axis=1) / (2.0 * std) + 0.5 * (1.0 - 1.0 / var) / n
    d_a = d_var * nn.sigmoid(a) * (sp > VAR_FLOOR)
    enc_grads, _ = nn.backward(model.encoder, enc_cache, np.concatenate([d_mu, d_a], axis=1))
    return loss, enc_grads + dec_grads


@dataclass
class TrainConfig:
    max_epochs: int = 500
    batch_size: int = 32
    mc_samples_per_example: int = 1
    seed: int = 0
    validation_fraction: float = 0.1
    tolerance_factor: float = 1.01
    patience_steps: int = 3
    train_sigma: float = 1.0
    learning_rate: float = 0.001

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.max_epochs < 1 or self.batch_size < 1 or self.mc_samples_per_example < 1:
            raise ValueError("epochs, batch size and sample count must be positive")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    initial_val_loss: float = float("nan")
    best_epoch: int = 0
    stopped_early: bool = False

    def rows(self) -> list[tuple[int, float, float]]:
        return [(i + 1, t, v) for i, (t, v) in enumerate(zip(self.train_loss, self.val_loss))]


def split_train_validation(n: int, fraction: float) -> int:
    """Index where the chronological validation tail begins."""
    n_val = max(1, int(round(n * fraction)))
    n_train = n - n_val
    if n_train < 1:
        raise ValueError(f"dataset of {n} examples is too small to hold out a validation set")
    return n_train


def train(model: CvaeModel, dataset, config: TrainConfig | None = None) -> tuple[CvaeModel, TrainHistory]:
    """Minimise the negative ELBO with ADAM and validation early stopping.

    ``dataset`` is either an ``(X, Y)`` pair of 2-D arrays or a sequence of
    ``(x, y)`` vectors in chronological order. The last
    ``validation_fraction`` of the examples is held out for early stopping,
    and the parameters with the best validation loss are returned.
    """
    config = config or TrainConfig()
    X, Y = _as_arrays(dataset)
    if len(X) == 0:
        raise ValueError("empty dataset")
    _check_dim(X, model.p, "x")
    _check_dim(Y, model.d, "y")

    model = model.copy()
    rng = np.random.default_rng(config.seed)
    cut = split_train_validation(len(X), config.validation_fraction)
    Xtr, Ytr, Xva, Yva = X[:cut], Y[:cut], X[cut:], Y[cut:]
    S, q, sigma = config.mc_samples_per_example, model.q, config.train_sigma
    val_eps = rng.standard_normal((len(Xva), S, q))

    params = model.params()
    adam = nn.AdamState.for_params(params, learning_rate=config.learning_rate)
    stopper = nn.EarlyStopState(
        tolerance_factor=config.tolerance_factor, patience_steps=config.patience_steps
    )
    history = TrainHistory()
    with np.errstate(over="ignore", invalid="ignore"):
        history.initial_val_loss = elbo_loss(model, Xva, Yva, val_eps, sigma)
    nn.early_stop_update(stopper, history.initial_val_loss)
    best = [p.copy() for p in params]

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(cut)
        total = 0.0
        for start in range(0, cut, config.batch_size):
            idx = order[start : start + config.batch_size]
            eps = rng.standard_normal((len(idx), S, q))
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = elbo_loss_and_grads(model, Xtr[idx], Ytr[idx], eps, sigma)
            if not np.isfinite(loss):
                raise TrainingDivergenceError("non-finite training loss", epoch)
            try:
                nn.adam_step(params, grads, adam)
            except TrainingDivergenceError as exc:
                raise TrainingDivergenceError(str(exc), epoch) from None
            total += loss * len(idx)
        with np.errstate(over="ignore", invalid="ignore"):
            val = elbo_loss(model, Xva, Yva, val_eps, sigma)
        if not np.isfinite(val):
            raise TrainingDivergenceError("non-finite validation loss", epoch)
        history.train_loss.append(total / cut)
        history.val_loss.append(val)
        improved = val < stopper.best_loss
        _, halt = nn.early_stop_update(stopper, val)
        if improved:
            best = [p.copy() for p in params]
            history.best_epoch = epoch
        if halt:
            history.stopped_early = True
            logger.info("early stop at epoch %d (best epoch %d)", epoch, history.best_epoch)
            break

    model.encoder.set_params(best[: len(model.encoder.params())])
    model.decoder.set_params(best[len(model.encoder.params()) :])
    return model, history


def _as_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(dataset, tuple) and len(dataset) == 2 and np.ndim(dataset[0]) == 2:
        X, Y = dataset
    else:
        pairs = list(dataset)
        if not pairs:
            return np.zeros((0, 0)), np.zeros((0, 0))
        X = np.array([p[0] for p in pairs], dtype=float)
        Y = np.array([np.atleast_1d(p[1]) for p in pairs], dtype=float)
    return np.asarray(X, dtype=float), np.asarray(Y, dtype=float)


# -- persistence -------------------------------------------------------------
#
# Layout: b"CVAE<version>\n" | uint64 LE header length | JSON header |
# float64 LE parameter arrays in encoder-then-decoder order | sha256 of all
# preceding bytes.


def save_model(model: CvaeModel, path) -> None:
    arrays = model.params()
    header = {
        "p": model.p,
        "d": model.d,
        "q": model.q,
        "sigma": model.sigma,
        "norm_stats": {k: list(v) for k, v in model.norm_stats.items()},
        "metadata": model.metadata,
        "encoder": [[l.out_dim, l.in_dim, l.activation] for l in model.encoder.layers],
        "decoder": [[l.out_dim, l.in_dim, l.activation] for l in model.decoder.layers],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = bytearray(_MAGIC + str(FORMAT_VERSION).encode() + b"\n")
    body += struct.pack("<Q", len(head)) + head
    for arr in arrays:
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    body += hashlib.sha256(body).digest()
    Path(path).write_bytes(bytes(body))


def load_model(path) -> CvaeModel:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n", 0, 16)
    if not raw.startswith(_MAGIC) or nl < 0:
        raise CorruptModelError(f"{path}: not a CVAE model file")
    version = raw[len(_MAGIC) : nl]
    if version != str(FORMAT_VERSION).encode():
        raise ModelVersionError(
            f"{path}: unsupported format version {version.decode(errors='replace')!r}"
        )
    if len(raw) < nl + 1 + 8 + 32:
        raise CorruptModelError(f"{path}: truncated file")
    if hashlib.sha256(raw[:-32]).digest() != raw[-32:]:
        raise CorruptModelError(f"{path}: checksum mismatch (truncated or corrupt)")
    pos = nl + 1
    (hlen,) = struct.unpack("<Q", raw[pos : pos + 8])
    pos += 8
    try:
        header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModelError(f"{path}: unreadable header") from exc
    pos += hlen
    data = raw[pos:-32]

    offset = 0

    def build(spec) -> nn.Mlp:
        nonlocal offset
        layers = []
        for out_dim, in_dim, act in spec:
            w_bytes, b_bytes = 8 * out_dim * in_dim, 8 * out_dim
            if offset + w_bytes + b_bytes > len(data):
                raise CorruptModelError(f"{path}: parameter block too short")
            w = np.frombuffer(data, "<f8", out_dim * in_dim, offset).reshape(out_dim, in_dim)
            offset += w_bytes
            b = np.frombuffer(data, "<f8", out_dim, offset)
            offset += b_bytes
            layers.append(nn.AffineLayer(w.astype(float), b.astype(float), act))
        return nn.Mlp(layers)

    encoder, decoder = build(header["encoder"]), build(header["decoder"])
    if offset != len(data):
        raise CorruptModelError(f"{path}: trailing bytes after parameter block")
    try:
        return CvaeModel(
            encoder,
            decoder,
            header["p"],
            header["d"],
            header["q"],
            header["sigma"],
            {k: (v[0], v[1]) for k, v in header["norm_stats"].items()},
            header["metadata"],
        )
    except ShapeError as exc:
        raise CorruptModelError(f"{path}: inconsistent dimensions: {exc}") from exc
