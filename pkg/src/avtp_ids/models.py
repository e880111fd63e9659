"""The convolutional and LSTM autoencoders, their training loop and scoring."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .nn import (
    LSTM,
    Adam,
    Conv2d,
    ConvTranspose2d,
    Flatten,
    Linear,
    ReLU,
    RepeatVector,
    Sequential,
    Unflatten,
    load_model,
    per_sample_mse,
    save_model,
)
from .nn.functional import mse_loss, mse_loss_grad
from .windows import N_FEATURES

logger = logging.getLogger(__name__)

WINDOW_SIZES = (8, 16, 24, 32, 40)


class UnsupportedWindowError(ValueError):
    pass


class ContaminationError(ValueError):
    """Training data contains windows labeled abnormal."""


def build_cae(w: int, seed: int = 0, width_divisor: int = 1) -> Sequential:
    """Convolutional autoencoder for ``(1, w, 58)`` window images.

    Three stride-2 3x3 convolutions (32, 64, 128 maps) halve both axes, a
    dense layer of 64*w units is the embedding, and a mirrored stack of
    transposed convolutions with output paddings (1,0), (1,0), (1,1)
    restores ``(1, w, 58)``. ``width_divisor`` shrinks every channel and
    dense width (used for fast gradient verification).
    """
    if w <= 0 or w % 8:
        raise UnsupportedWindowError(f"CAE needs w divisible by 8, got {w}")
    rng = np.random.default_rng(seed)
    c1, c2, c3 = (32 // width_divisor, 64 // width_divisor, 128 // width_divisor)
    flat = c3 * (w // 8) * 8
    embed = flat // 2
    k, s, p = 3, 2, 1
    layers = [
        ("conv1", Conv2d(1, c1, k, s, p, rng=rng)), ("relu1", ReLU()),
        ("conv2", Conv2d(c1, c2, k, s, p, rng=rng)), ("relu2", ReLU()),
        ("conv3", Conv2d(c2, c3, k, s, p, rng=rng)), ("relu3", ReLU()),
        ("flatten", Flatten()),
        ("embedding", Linear(flat, embed, rng=rng)), ("relu4", ReLU()),
        ("expand", Linear(embed, flat, rng=rng)), ("relu5", ReLU()),
        ("unflatten", Unflatten((c3, w // 8, 8))),
        ("deconv1", ConvTranspose2d(c3, c2, k, s, p, (1, 0), rng=rng)), ("relu6", ReLU()),
        ("deconv2", ConvTranspose2d(c2, c1, k, s, p, (1, 0), rng=rng)), ("relu7", ReLU()),
        ("deconv3", ConvTranspose2d(c1, 1, k, s, p, (1, 1), rng=rng)), ("relu8", ReLU()),
    ]
    names, mods = zip(*layers)
    return Sequential(mods, names=names)


def build_lstmae(w: int, seed: int = 0) -> Sequential:
    """LSTM autoencoder for ``(w, 58)`` windows with a 10-wide embedding.

    Encoder LSTM(58->20, all states), LSTM(20->10, last state); the embedding
    is repeated ``w`` times and decoded by LSTM(10->10), LSTM(10->20) and a
    per-step dense 20->58. LSTM outputs pass through ReLU.
    """
    if w < 1:
        raise UnsupportedWindowError(f"w must be positive, got {w}")
    rng = np.random.default_rng(seed)
    layers = [
        ("enc_lstm1", LSTM(N_FEATURES, 20, True, rng=rng)), ("relu1", ReLU()),
        ("enc_lstm2", LSTM(20, 10, False, rng=rng)), ("relu2", ReLU()),
        ("repeat", RepeatVector(w)),
        ("dec_lstm1", LSTM(10, 10, True, rng=rng)), ("relu3", ReLU()),
        ("dec_lstm2", LSTM(10, 20, True, rng=rng)), ("relu4", ReLU()),
        ("output", Linear(20, N_FEATURES, rng=rng)),
    ]
    names, mods = zip(*layers)
    return Sequential(mods, names=names)


def build_model(kind: str, w: int, seed: int = 0) -> Sequential:
    if kind == "cae":
        return build_cae(w, seed)
    if kind == "lstmae":
        return build_lstmae(w, seed)
    raise ValueError(f"unknown autoencoder kind {kind!r}")


def input_shape(kind: str, w: int) -> tuple:
    return (1, w, N_FEATURES) if kind == "cae" else (w, N_FEATURES)


def param_count(model: Sequential) -> int:
    return model.param_count()


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    val_fraction: float = 0.1


@dataclass
class TrainedModel:
    kind: str
    w: int
    model: Sequential
    mu: float = float("nan")
    sigma: float = float("nan")
    history: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def errors(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        return reconstruction_errors(self.model, x, batch_size)

    def save(self, path, dtype: str = "float64") -> int:
        meta = {"kind": self.kind, "w": self.w, "mu": self.mu, "sigma": self.sigma,
                "history": self.history, "best_epoch": self.best_epoch,
                "stopped_early": self.stopped_early}
        return save_model(self.model, path, meta=meta, dtype=dtype)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        model, meta = load_model(path)
        return cls(meta["kind"], int(meta["w"]), model, meta["mu"], meta["sigma"],
                   [tuple(h) for h in meta["history"]], meta["best_epoch"],
                   meta["stopped_early"])

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["epoch", "train_loss", "val_loss"])
            for row in self.history:
                out.writerow([row[0], repr(row[1]), repr(row[2])])


def reconstruction_errors(model: Sequential, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Per-sample mean squared reconstruction error ``s_x``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(len(x))
    for s in range(0, len(x), batch_size):
        chunk = x[s : s + batch_size]
        out[s : s + batch_size] = per_sample_mse(model.forward(chunk), chunk)
    model._recorded = False
    for layer in model.layers:
        layer._cache = None
    return out


def reconstruction_error(trained, window: np.ndarray) -> float:
    """``s_x`` of a single encoded window (shape must match the model input)."""
    model = trained.model if isinstance(trained, TrainedModel) else trained
    x = np.asarray(window, dtype=np.float64)
    expected = model.layers[0]
    if isinstance(expected, Conv2d) and x.shape[0] != expected.in_channels:
        raise ValueError(f"window shape {x.shape} does not fit the model input")
    return float(reconstruction_errors(model, x[None])[0])


def train(model: Sequential, train_x: np.ndarray, val_x: np.ndarray,
          config: TrainConfig | None = None, kind: str = "", w: int = 0,
          train_labels=None, val_labels=None, log_every: int = 1) -> TrainedModel:
    """Minimise the mean squared reconstruction error with Adam.

    Stops once the validation loss has not improved for ``patience`` epochs
    and restores the best parameters. ``mu`` and ``sigma`` of the result are
    the population mean and standard deviation of per-window errors on
    ``train_x``.
    """
    config = config or TrainConfig()
    for labels in (train_labels, val_labels):
        if labels is not None and np.any(np.asarray(labels) != 0):
            raise ContaminationError("autoencoders train on normal windows only")
    if len(train_x) == 0 or len(val_x) == 0:
        raise ValueError("training and validation sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    best_val = math.inf
    best = [p.value.copy() for p in params]
    history = []
    best_epoch, bad_epochs, stopped = 0, 0, False
    n = len(train_x)
    bs = config.batch_size
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, bs):
            batch = train_x[order[s : s + bs]]
            pred = model.forward(batch)
            loss = mse_loss(pred, batch)
            model.backward(mse_loss_grad(pred, batch))
            opt.step()
            total += loss * len(batch)
        train_loss = total / n
        val_loss = float(reconstruction_errors(model, val_x).mean())
        history.append((epoch, train_loss, val_loss))
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)
        if val_loss < best_val:
            best_val, best_epoch, bad_epochs = val_loss, epoch, 0
            for b, p in zip(best, params):
                b[...] = p.value
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                stopped = True
                break
    for b, p in zip(best, params):
        p.value[...] = b
    errs = reconstruction_errors(model, train_x)
    return TrainedModel(kind, w, model, float(errs.mean()), float(errs.std()),
                        history, best_epoch, stopped)
