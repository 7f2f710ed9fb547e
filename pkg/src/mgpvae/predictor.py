"""Latent-space frame prediction.

A three-layer ReLU MLP maps the posterior-mean latents of the first ``n - k``
frames to those of the last ``k``. It is trained either on plain squared
distance to the encoded target or on the geodesic loss, which regresses
towards the first interior point of the decoder geodesic from the current
prediction to the target. That point is recomputed from the current
predictions and treated as a constant.
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import geodesic as geo
from . import metrics
from .errors import ConfigError, ConfigMismatch, EmptyDataset, ShapeMismatch
from .layers import MLP

log = logging.getLogger(__name__)

SQUARED = "squared"
GEODESIC = "geodesic"


@dataclass
class PredictorConfig:
    k: int = 1
    hidden: int = 128
    loss_kind: str = SQUARED
    geodesic: geo.GeodesicConfig = field(default_factory=lambda: geo.GeodesicConfig(backtrack=True))
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    refresh: str = "step"
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.geodesic, dict):
            self.geodesic = geo.GeodesicConfig(**self.geodesic)
        if self.loss_kind not in (SQUARED, GEODESIC):
            raise ConfigError(f"loss_kind must be {SQUARED!r} or {GEODESIC!r}")
        if self.refresh not in ("step", "epoch"):
            raise ConfigError("refresh must be 'step' or 'epoch'")
        if self.k < 1 or self.hidden < 1:
            raise ConfigError("k and hidden must be positive")

    def to_dict(self):
        return asdict(self)


class LatentPredictor:
    """``flatten((n-k) x d) -> hidden -> hidden -> k x d`` with ReLU, linear output."""

    def __init__(self, n_frames, d, k, hidden=128, rng=None, dtype=np.float32):
        if not 0 < k < n_frames:
            raise ConfigMismatch(f"k={k} must satisfy 0 < k < n_frames={n_frames}")
        self.n_frames, self.d, self.k = n_frames, d, k
        rng = np.random.default_rng(0) if rng is None else rng
        self.net = MLP(((n_frames - k) * d, hidden, hidden, k * d), rng, "relu", None, dtype)

    def named_parameters(self):
        return self.net.named_parameters("predictor.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def __call__(self, prefix):
        prefix = ad.as_tensor(prefix)
        if prefix.shape[-1] != (self.n_frames - self.k) * self.d:
            raise ShapeMismatch(f"prefix width {prefix.shape[-1]}, expected {(self.n_frames - self.k) * self.d}")
        return self.net(prefix)

    def predict(self, prefix):
        with ad.no_grad():
            return np.asarray(self(np.asarray(prefix, dtype=np.float64)).data)


def split_latents(z, k):
    """Posterior means (N, d, n) -> frame-major prefix (N, (n-k)d) and target (N, kd)."""
    z = np.asarray(z, dtype=np.float64)
    N, d, n = z.shape
    frames = np.transpose(z, (0, 2, 1))
    return frames[:, : n - k].reshape(N, -1), frames[:, n - k:].reshape(N, -1)


def frame_decoder(model, k):
    """The VAE decoder as a map from ``k x d`` latent rows to ``k x C*H*W`` pixel rows."""
    d = model.config.d

    def g(points):
        M = points.shape[0]
        out = model.decode_frames(ad.reshape(points, (M, k, d)))
        return ad.reshape(out, (M, -1))

    return g


def _targets(pred, target, cfg, decoder):
    if cfg.loss_kind == SQUARED:
        return target
    return geo.geodesic_target(pred, target, decoder, cfg.geodesic)


@dataclass
class PredictorCheckpoint:
    predictor: LatentPredictor
    config: PredictorConfig
    history: list = field(default_factory=list)

    def to_bytes(self):
        cfg = {"predictor": self.config.to_dict(), "n_frames": self.predictor.n_frames, "d": self.predictor.d}
        arrays = {name: p.data for name, p in self.predictor.named_parameters()}
        return ckpt.dumps("predictor", cfg, arrays, {"history": self.history})

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, buf):
        role, cfg, arrays, meta = ckpt.loads(buf)
        if role != "predictor":
            raise ConfigError(f"expected a predictor checkpoint, got role {role!r}")
        pcfg = PredictorConfig(**cfg["predictor"])
        pred = LatentPredictor(cfg["n_frames"], cfg["d"], pcfg.k, pcfg.hidden, dtype=pcfg.dtype)
        for name, p in pred.named_parameters():
            p.data = arrays[name].astype(pcfg.dtype)
        return cls(pred, pcfg, meta.get("history", []))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _dataset_latents(model, dataset):
    x = np.asarray(getattr(dataset, "pixels", dataset))
    if len(x) == 0:
        raise EmptyDataset("dataset holds no sequences")
    expected = (model.config.n_frames,) + model.config.frame_shape
    if x.shape[1:] != expected:
        raise ConfigMismatch(f"dataset frames {x.shape[1:]} do not match the model's {expected}")
    return x, model.posterior_means(x)


def _epoch_loss(predictor, prefix, target, cfg, decoder):
    pred = predictor.predict(prefix)
    goal = _targets(pred, target, cfg, decoder)
    return float(np.sum((pred - goal) ** 2)) / len(prefix)


def train_predictor(model, dataset, config):
    """Fit a :class:`LatentPredictor` on the encoded dataset.

    The history starts with the loss at initialisation (epoch 0) followed by
    the mean minibatch loss of each epoch.
    """
    if config.k >= model.config.n_frames:
        raise ConfigMismatch(f"k={config.k} must be < n_frames={model.config.n_frames}")
    _, z = _dataset_latents(model, dataset)
    prefix, target = split_latents(z, config.k)
    rng = np.random.default_rng(config.seed)
    predictor = LatentPredictor(model.config.n_frames, model.config.d, config.k, config.hidden, rng, config.dtype)
    decoder = frame_decoder(model, config.k)
    opt = ad.Adam(predictor.parameters(), lr=config.lr)
    history = [{"epoch": 0, "loss": _epoch_loss(predictor, prefix, target, config, decoder)}]
    N = len(prefix)
    for epoch in range(config.epochs):
        goals = None
        if config.refresh == "epoch":
            goals = _targets(predictor.predict(prefix), target, config, decoder)
        order = rng.permutation(N)
        total = 0.0
        for start in range(0, N, config.batch_size):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            pred = predictor(prefix[idx])
            goal = goals[idx] if goals is not None else _targets(pred.data, target[idx], config, decoder)
            loss = ad.sum_sq_error(pred, goal) * (1.0 / len(idx))
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx) / N
        history.append({"epoch": epoch + 1, "loss": total})
        log.info("predictor epoch %d loss %.5f", epoch + 1, total)
    return PredictorCheckpoint(predictor, config, history)


def predict_frames(model, predictor, x):
    """Decoded predictions of the last ``k`` frames, shape (N, k, C, H, W)."""
    z = model.posterior_means(x)
    prefix, _ = split_latents(z, predictor.k)
    pred = predictor.predict(prefix).reshape(len(x), predictor.k, model.config.d)
    with ad.no_grad():
        frames = model.decode_frames(pred).data
    return frames.reshape((len(x), predictor.k) + model.config.frame_shape)


def evaluate(model, predictor, dataset, k=None):
    """Pixel MSE and BCE of the predicted last ``k`` frames against the truth.

    Both are per-frame sums averaged over sequences (and over the ``k``
    frames); BCE maps pixels from [-1, 1] to [0, 1] first.
    """
    if k is not None and k != predictor.k:
        raise ConfigMismatch(f"predictor was trained for k={predictor.k}, asked for k={k}")
    x, _ = _dataset_latents(model, dataset)
    frames = predict_frames(model, predictor, x)
    truth = x[:, -predictor.k:]
    return {"mse": metrics.frame_mse(frames, truth), "bce": metrics.frame_bce(frames, truth)}
