"""VAE with a bank of Gaussian-process channel priors.

The encoder maps a sequence of ``n`` frames to, per channel, a posterior mean
over the ``n`` frames and a lower Cholesky factor of its ``n x n``
covariance. The decoder is applied framewise with shared weights: frame
``t`` is decoded from the latent slice ``(z^(1)_t, ..., z^(d)_t)``.

The networks are fully connected: a per-frame MLP feeds a temporal
concatenation, followed by one linear head per channel emitting
``n + n(n+1)/2`` numbers. The Cholesky diagonal is ``exp`` of its raw value.
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import gp_prior, linalg
from .errors import BadChannelIndex, ConfigError, DataConfigMismatch, ShapeMismatch
from .layers import MLP, Linear

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    """Model and training hyperparameters.

    Defaults follow the two-channel fBM setting (H = 0.1 and 0.9, sigma 0.25,
    beta 2, learning rate 1e-3, 200 epochs).
    """

    channels: list = field(
        default_factory=lambda: [
            {"kind": "fbm", "hurst": 0.1, "sigma": 0.25},
            {"kind": "fbm", "hurst": 0.9, "sigma": 0.25},
        ]
    )
    n_frames: int = 8
    frame_shape: tuple = (1, 16, 16)
    beta: float = 2.0
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    enc_hidden: tuple = (256, 128)
    dec_hidden: tuple = (128, 256)
    head_init: str = "zeros"
    init_log_std: float = 0.0
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.frame_shape = tuple(int(s) for s in self.frame_shape)
        self.enc_hidden = tuple(int(s) for s in self.enc_hidden)
        self.dec_hidden = tuple(int(s) for s in self.dec_hidden)
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        self.specs()

    @property
    def d(self):
        return len(self.channels)

    @property
    def frame_size(self):
        return int(np.prod(self.frame_shape))

    def specs(self):
        return [gp_prior.GpChannelSpec.from_dict(dict(c), self.n_frames) for c in self.channels]

    def to_dict(self):
        d = asdict(self)
        for key in ("frame_shape", "enc_hidden", "dec_hidden"):
            d[key] = list(d[key])
        return d


def tril_layout(n):
    """Index helpers mapping ``n(n+1)/2`` raw numbers into an ``n x n`` factor.

    Returns ``(embed, diag_mask)``: ``embed`` is a 0/1 matrix of shape
    ``(n(n+1)/2, n*n)`` scattering the row-major lower triangle, and
    ``diag_mask`` flags the raw entries that sit on the diagonal.
    """
    rows, cols = np.tril_indices(n)
    embed = np.zeros((rows.size, n * n))
    embed[np.arange(rows.size), rows * n + cols] = 1.0
    return embed, (rows == cols).astype(np.float64)


@dataclass
class PosteriorBank:
    """Per-sequence, per-channel posterior: ``mu`` (B, d, n), ``chol`` (B, d, n, n)."""

    mu: np.ndarray
    chol: np.ndarray

    def path(self, b, i):
        return gp_prior.GaussianPath.from_chol(self.mu[b, i], self.chol[b, i])


class _PriorTerms:
    """Constant pieces of the KL against one channel's prior."""

    def __init__(self, path):
        self.path = path
        self.mean = path.mean
        self.inv_chol = linalg.inv_lower(path.chol)
        self.log_det = linalg.log_det_from_chol(path.chol)


class MGPVAE:
    def __init__(self, config, rng=None):
        self.config = config
        rng = np.random.default_rng(config.seed) if rng is None else rng
        dtype = np.dtype(config.dtype)
        n, d = config.n_frames, config.d
        self.priors = gp_prior.build_prior_bank(config.specs())
        self._prior_terms = [_PriorTerms(p) for p in self.priors]
        self.frame_encoder = MLP((config.frame_size,) + config.enc_hidden, rng, "elu", "elu", dtype)
        feat = n * config.enc_hidden[-1]
        head_out = n + n * (n + 1) // 2
        self.heads = [Linear(feat, head_out, rng, dtype, init=config.head_init) for _ in range(d)]
        embed, diag = tril_layout(n)
        for head in self.heads:
            head.bias.data[n:] = config.init_log_std * diag
        self.decoder = MLP((d,) + config.dec_hidden + (config.frame_size,), rng, "elu", "tanh", dtype)
        self._embed = embed.astype(dtype)
        self._diag = diag.astype(dtype)

    # -- parameters ------------------------------------------------------

    def named_parameters(self):
        out = self.frame_encoder.named_parameters("encoder.frame.")
        for i, head in enumerate(self.heads):
            out += head.named_parameters(f"encoder.head{i}.")
        return out + self.decoder.named_parameters("decoder.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_arrays(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_arrays(self, arrays):
        for name, p in self.named_parameters():
            if arrays[name].shape != p.shape:
                raise ShapeMismatch(f"{name}: {arrays[name].shape} vs {p.shape}")
            p.data = np.array(arrays[name], dtype=p.dtype)

    # -- encoder -----------------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x)
        expected = (self.config.n_frames,) + self.config.frame_shape
        if x.ndim != 5 or x.shape[1:] != expected:
            raise ShapeMismatch(f"input of shape {x.shape}, expected (B,) + {expected}")
        return x.astype(self.config.dtype, copy=False)

    def encode_raw(self, x):
        """Posterior tensors per channel: a list of ``(mu, chol, raw_diag)``."""
        x = self._check_input(x)
        n, fsize = self.config.n_frames, self.config.frame_size
        B = x.shape[0]
        h = self.frame_encoder(ad.Tensor(x.reshape(B, n, fsize)))
        h = ad.reshape(h, (B, n * self.config.enc_hidden[-1]))
        out = []
        for head in self.heads:
            o = head(h)
            mu = o[:, :n]
            raw = o[:, n:]
            raw_diag = raw * self._diag
            vals = raw * (1 - self._diag) + ad.exp(raw_diag) * self._diag
            chol = ad.reshape(ad.matmul(vals, self._embed), (B, n, n))
            out.append((mu, chol, raw_diag))
        return out

    def encode(self, x):
        with ad.no_grad():
            parts = self.encode_raw(x)
        mu = np.stack([m.data for m, _, _ in parts], axis=1).astype(np.float64)
        chol = np.stack([c.data for _, c, _ in parts], axis=1).astype(np.float64)
        return PosteriorBank(mu, chol)

    def posterior_means(self, x, batch_size=256):
        """Posterior means (B, d, n), evaluated in chunks."""
        x = np.asarray(x)
        chunks = [self.encode(x[i:i + batch_size]).mu for i in range(0, len(x), batch_size)]
        return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, self.config.d, self.config.n_frames))

    # -- sampling and decoder -----------------------------------------------

    def reparam(self, parts, noise):
        """``z = mu + chol @ xi`` per channel; returns a (B, d, n) tensor."""
        B, d, n = noise.shape
        if d != len(parts) or n != self.config.n_frames:
            raise ShapeMismatch(f"noise of shape {noise.shape} for {len(parts)} channels x {self.config.n_frames} frames")
        zs = []
        for i, (mu, chol, _) in enumerate(parts):
            xi = noise[:, i, :, None].astype(chol.dtype)
            z = mu + ad.reshape(ad.matmul(chol, xi), (B, n))
            zs.append(ad.reshape(z, (B, 1, n)))
        return ad.concat(zs, axis=1)

    def decode_frames(self, zf):
        """Decode latent frame slices ``(..., d)`` to flat frames ``(..., C*H*W)``."""
        zf = ad.as_tensor(zf)
        if zf.shape[-1] != self.config.d:
            raise ShapeMismatch(f"latent slices of width {zf.shape[-1]}, expected {self.config.d}")
        if zf.dtype != self.config.dtype:
            zf = ad.cast(zf, self.config.dtype)
        return self.decoder(zf)

    def decode(self, z):
        """Decode a latent code (B, d, n) to a video tensor (B, n, C, H, W)."""
        z = ad.as_tensor(z)
        if z.data.ndim != 3 or z.shape[1:] != (self.config.d, self.config.n_frames):
            raise ShapeMismatch(f"latent of shape {z.shape}, expected (B, {self.config.d}, {self.config.n_frames})")
        if not np.all(np.isfinite(z.data)):
            raise ValueError("latent code contains non-finite values")
        B = z.shape[0]
        frames = self.decode_frames(ad.transpose(z, (0, 2, 1)))
        return ad.reshape(frames, (B, self.config.n_frames) + self.config.frame_shape)

    def decode_np(self, z):
        with ad.no_grad():
            return self.decode(np.asarray(z)).data

    # -- loss ----------------------------------------------------------------

    def kl_terms(self, parts):
        """Batch-averaged KL(q || p) per channel as float64 scalar tensors."""
        kls = []
        n = self.config.n_frames
        for (mu, chol, raw_diag), prior in zip(parts, self._prior_terms):
            B = mu.shape[0]
            mu64, chol64, rd64 = ad.cast(mu, np.float64), ad.cast(chol, np.float64), ad.cast(raw_diag, np.float64)
            trace = ad.sum_(ad.square(ad.matmul(prior.inv_chol, chol64)))
            w = ad.matmul(mu64 - prior.mean, prior.inv_chol.T)
            quad = ad.sum_(ad.square(w))
            log_det_q = 2.0 * ad.sum_(rd64)
            total = 0.5 * (trace + quad - log_det_q) * (1.0 / B) + 0.5 * (prior.log_det - n)
            kls.append(total)
        return kls

    def elbo_loss(self, x, noise, beta=None):
        """Negative ELBO: ``recon + beta * sum_i KL_i`` (one latent sample per input).

        ``recon`` is the sum of squared pixel errors averaged over the batch.
        Returns ``(loss, parts)`` with ``parts = {"recon", "kl"}`` as floats.
        """
        beta = self.config.beta if beta is None else beta
        x = self._check_input(x)
        parts = self.encode_raw(x)
        z = self.reparam(parts, noise)
        xhat = self.decode(z)
        recon = ad.sum_sq_error(xhat, x) * (1.0 / x.shape[0])
        kls = self.kl_terms(parts)
        loss = recon
        for kl in kls:
            loss = loss + beta * kl
        return loss, {"recon": float(recon.data), "kl": [float(k.data) for k in kls]}


def swap_channels(model, x_a, x_b, channel_index):
    """Exchange one latent channel between two encoded videos and decode both.

    ``x_a`` and ``x_b`` are single sequences (n, C, H, W) or matching batches.
    Posterior means are used, with no sampling noise.
    """
    if not 0 <= channel_index < model.config.d:
        raise BadChannelIndex(f"channel {channel_index} outside 0..{model.config.d - 1}")
    single = np.ndim(x_a) == 4
    xa = np.asarray(x_a)[None] if single else np.asarray(x_a)
    xb = np.asarray(x_b)[None] if single else np.asarray(x_b)
    za = model.posterior_means(xa)
    zb = model.posterior_means(xb)
    za[:, channel_index], zb[:, channel_index] = zb[:, channel_index].copy(), za[:, channel_index].copy()
    fa, fb = model.decode_np(za), model.decode_np(zb)
    return (fa[0], fb[0]) if single else (fa, fb)


# ---------------------------------------------------------------------------
# training and checkpoints


@dataclass
class Checkpoint:
    """Trained weights plus everything needed to resume or reproduce a run."""

    model: MGPVAE
    optimizer_state: dict = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    role: str = "vae"

    def to_bytes(self):
        arrays = dict(self.model.state_arrays())
        opt = self.optimizer_state
        names = [name for name, _ in self.model.named_parameters()]
        if opt:
            for name, m, v in zip(names, opt["m"], opt["v"]):
                arrays[f"adam.m.{name}"] = m
                arrays[f"adam.v.{name}"] = v
        meta = {
            "adam_step": opt.get("step", 0) if opt else 0,
            "rng_state": self.rng_state,
            "history": self.history,
        }
        return ckpt.dumps(self.role, self.model.config.to_dict(), arrays, meta)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, buf):
        role, config, arrays, meta = ckpt.loads(buf)
        if role != "vae":
            raise ConfigError(f"expected a vae checkpoint, got role {role!r}")
        model = MGPVAE(ModelConfig(**config), rng=np.random.default_rng(0))
        model.load_arrays(arrays)
        names = [name for name, _ in model.named_parameters()]
        opt = {}
        if meta.get("adam_step"):
            opt = {
                "step": meta["adam_step"],
                "m": [arrays[f"adam.m.{n}"].astype(model.config.dtype) for n in names],
                "v": [arrays[f"adam.v.{n}"].astype(model.config.dtype) for n in names],
            }
        return cls(model, opt, meta.get("rng_state", {}), meta.get("history", []))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def train(dataset, config, log_fn=None):
    """Train with Adam over shuffled minibatches; deterministic given ``config.seed``.

    ``dataset`` is a :class:`~mgpvae.datasets.VideoBatch` or an array of
    shape (N, n, C, H, W). Each epoch's mean loss parts are appended to the
    checkpoint history and passed to ``log_fn`` if given.
    """
    x = np.asarray(getattr(dataset, "pixels", dataset), dtype=config.dtype)
    if x.ndim != 5 or x.shape[1] != config.n_frames or x.shape[2:] != config.frame_shape:
        raise DataConfigMismatch(
            f"dataset of shape {x.shape} does not match n_frames={config.n_frames}, frame_shape={config.frame_shape}"
        )
    rng = np.random.default_rng(config.seed)
    model = MGPVAE(config, rng=rng)
    opt = ad.Adam(model.parameters(), lr=config.lr)
    history = []
    N = x.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(N)
        sums = {"loss": 0.0, "recon": 0.0, "kl": np.zeros(config.d)}
        for start in range(0, N, config.batch_size):
            xb = x[order[start:start + config.batch_size]]
            noise = rng.standard_normal((xb.shape[0], config.d, config.n_frames))
            opt.zero_grad()
            loss, parts = model.elbo_loss(xb, noise)
            loss.backward()
            opt.step()
            w = xb.shape[0] / N
            sums["loss"] += w * float(loss.data)
            sums["recon"] += w * parts["recon"]
            sums["kl"] += w * np.asarray(parts["kl"])
        row = {"epoch": epoch + 1, "loss": sums["loss"], "recon": sums["recon"], "kl": sums["kl"].tolist()}
        history.append(row)
        log.info("epoch %d loss %.3f recon %.3f kl %s", epoch + 1, row["loss"], row["recon"], row["kl"])
        if log_fn is not None:
            log_fn(row)
    return Checkpoint(model, opt.state, rng.bit_generator.state, history)
