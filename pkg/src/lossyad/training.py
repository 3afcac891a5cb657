"""Loss assembly, the channel normalizer, and the training loop."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericAbort
from .model import TcnAutoencoder, TcnConfig
from .numerics import Adam, RngState, Tensor, backward, functional as F


@dataclass(frozen=True)
class LossWeights:
    """lambda1 weights the input-vs-quantized-reconstruction distortion,
    lambda2 the quantization-induced distortion between the two decodes."""

    lambda1: float
    lambda2: float

    def __post_init__(self):
        if not (np.isfinite(self.lambda1) and np.isfinite(self.lambda2)):
            raise ContractError("loss weights must be finite")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ContractError("loss weights must be non-negative")


def rdo_loss(x, x_hat, x_tilde, rate, weights):
    """Rate-distortion training objective:
    rate + lambda1 * MSE(x, x_hat) + lambda2 * MSE(x_hat, x_tilde)."""
    loss = rate
    if weights.lambda1 != 0.0:
        loss = F.add(loss, F.scale(F.mse(x, x_hat), weights.lambda1))
    if weights.lambda2 != 0.0:
        loss = F.add(loss, F.scale(F.mse(x_hat, x_tilde), weights.lambda2))
    return loss


def ae_loss(x, model):
    """Baseline objective: plain MSE through the bypassed bottleneck."""
    if model.config.bottleneck_enabled:
        raise ContractError("ae_loss requires a model with the bottleneck disabled")
    if not isinstance(x, Tensor):
        x = Tensor(x)
    return F.mse(x, model.ae_reconstruct(x))


class ChannelNormalizer:
    """Tracks per-channel residual spread and exposes its inverse.

    The running estimate is seeded directly from the first batch, then
    follows an exponential moving average; the inverse is floored so a
    perfectly reconstructed channel yields a large but finite weight.
    """

    def __init__(self, channels, decay=0.99, floor=1e-6):
        self.channels = channels
        self.decay = float(decay)
        self.floor = float(floor)
        self.sigma = None

    def update(self, residuals):
        """residuals: (n, C, T) batch or a single (C, T) window."""
        arr = np.asarray(residuals, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.shape[1] != self.channels:
            raise ContractError(
                f"residual batch has {arr.shape[1]} channels, expected {self.channels}")
        batch_sigma = arr.transpose(1, 0, 2).reshape(self.channels, -1).std(axis=1)
        if self.sigma is None:
            self.sigma = batch_sigma
        else:
            self.sigma = self.decay * self.sigma + (1.0 - self.decay) * batch_sigma
        return self.omega

    @property
    def omega(self):
        sigma = np.zeros(self.channels) if self.sigma is None else self.sigma
        return 1.0 / np.maximum(sigma, self.floor)


@dataclass
class EpochStats:
    epoch: int
    rate: float
    distortion: float
    reconstruction: float
    total: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)

    def append(self, stats):
        self.epochs.append(stats)

    def last(self):
        return self.epochs[-1] if self.epochs else None

    def to_csv(self, path, config_hash=None):
        lines = []
        if config_hash:
            lines.append(f"# config_hash={config_hash}")
        lines.append("epoch,rate,distortion,reconstruction,total,seconds")
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.rate!r},{e.distortion!r},"
                         f"{e.reconstruction!r},{e.total!r},{e.seconds:.3f}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class TrainingConfig:
    model: TcnConfig
    weights: LossWeights
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0


def _as_window_array(corpus):
    arr = np.asarray(corpus, dtype=np.float64)
    if arr.ndim != 3:
        raise ContractError(f"corpus must be (n, C, T), got shape {arr.shape}")
    return arr


def corpus_loss(model, windows, weights, noise_seed=0):
    """Mean training loss over a corpus with pinned quantization noise."""
    windows = _as_window_array(windows)
    noise_rng = RngState(noise_seed)
    totals = []
    for w in windows:
        if model.config.bottleneck_enabled:
            x_hat, x_tilde, rate = model.forward_train(w, noise_rng)
            totals.append(rdo_loss(Tensor(w), x_hat, x_tilde, rate, weights).item())
        else:
            totals.append(ae_loss(w, model).item())
    return float(np.mean(totals))


def fit(corpus, config):
    """Train a model on unlabeled windows.

    Runs seeded shuffled minibatches with additive-noise quantization and
    Adam updates, logging the unscaled loss components per epoch. Keeps
    the best-epoch parameters (by training loss) and the final converged
    channel normalizer. A non-finite loss aborts with the last finite
    report attached.
    """
    windows = _as_window_array(corpus)
    cfg = config.model
    n, c, t_len = windows.shape
    if (c, t_len) != (cfg.input_channels, cfg.window_length):
        raise ContractError(
            f"corpus windows are {c}x{t_len}, model expects "
            f"{cfg.input_channels}x{cfg.window_length}")

    model = TcnAutoencoder(cfg, seed=config.seed)
    rng = RngState(config.seed)
    shuffle_rng = rng.spawn("shuffle")
    noise_rng = rng.spawn("noise")
    bottleneck = cfg.bottleneck_enabled
    params = model.parameters(include_density=bottleneck)
    opt = Adam(params, lr=config.learning_rate)
    normalizer = ChannelNormalizer(cfg.input_channels)
    report = TrainReport()
    weights = config.weights

    best_total = np.inf
    best_params = None
    best_omega = None

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        rate_sum = d1_sum = d2_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch_idx = order[start: start + config.batch_size]
            losses = []
            residuals = []
            for i in batch_idx:
                x = windows[i]
                if bottleneck:
                    x_hat, x_tilde, rate = model.forward_train(x, noise_rng)
                    loss = rdo_loss(Tensor(x), x_hat, x_tilde, rate, weights)
                    rate_sum += rate.item()
                    d1_sum += float(np.mean((x - x_hat.data) ** 2))
                    d2_sum += float(np.mean((x_hat.data - x_tilde.data) ** 2))
                    residuals.append(x - x_hat.data)
                else:
                    recon = model.ae_reconstruct(x)
                    loss = F.mse(Tensor(x), recon)
                    d1_sum += loss.item()
                    residuals.append(x - recon.data)
                losses.append(loss)
            batch_loss = F.scale(F.add_n(losses), 1.0 / len(losses))
            if not np.isfinite(batch_loss.item()):
                raise NumericAbort(
                    f"non-finite loss in epoch {epoch}", last_report=report)
            opt.zero_grad()
            backward(batch_loss)
            opt.step()
            normalizer.update(np.stack(residuals))

        rate_mean = rate_sum / n
        d1_mean = d1_sum / n
        d2_mean = d2_sum / n
        if bottleneck:
            total = rate_mean + weights.lambda1 * d1_mean + weights.lambda2 * d2_mean
        else:
            total = d1_mean
        report.append(EpochStats(epoch=epoch, rate=rate_mean, distortion=d1_mean,
                                 reconstruction=d2_mean, total=total,
                                 seconds=time.perf_counter() - t0))
        if not np.isfinite(total):
            raise NumericAbort(f"non-finite epoch total in epoch {epoch}",
                               last_report=report)
        if total < best_total:
            best_total = total
            best_params = [p.data.copy() for p in model.parameters()]
            best_omega = normalizer.omega.copy()

    if best_params is not None:
        for p, snap in zip(model.parameters(), best_params):
            p.data = snap
    # Converged normalizer from the end of training; fall back to the best
    # epoch's copy if the final EMA never materialized.
    model.omega = normalizer.omega if normalizer.sigma is not None else best_omega
    return model, report


def latent_support(model, windows, margin=2):
    """Per-dimension integer support of the rounded latents over a corpus,
    widened by `margin` on both sides (for the entropy codec's tables)."""
    windows = _as_window_array(windows)
    lo = np.full(model.config.latent_dim, np.iinfo(np.int64).max, dtype=np.int64)
    hi = np.full(model.config.latent_dim, np.iinfo(np.int64).min, dtype=np.int64)
    for w in windows:
        sym = model.latent_symbols(w)
        lo = np.minimum(lo, sym)
        hi = np.maximum(hi, sym)
    return lo - margin, hi + margin
