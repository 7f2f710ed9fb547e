"""Gaussian-process priors over video frames, one independent path per channel.

Two process families are supported: fractional Brownian motion started from
a random level ``V + sigma * B^H_t`` and the Brownian bridge (pinned at fixed
endpoints or at standard-normal random endpoints). Frames sit on the time
grid ``t = 1, ..., n``; bridges use the horizon ``T = n + 1`` so that every
frame is strictly interior and the covariance stays invertible.
"""
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import ConfigError, DimensionMismatch, MixedFrameCounts, SingularAtEndpoint

FBM = "fbm"
BRIDGE_FIXED = "bridge_fixed"
BRIDGE_RANDOM = "bridge_random"
KINDS = (FBM, BRIDGE_FIXED, BRIDGE_RANDOM)


@dataclass(frozen=True)
class GpChannelSpec:
    """Declarative description of one latent channel.

    ``hurst`` and ``var_v`` apply to fBM channels, ``a``/``b`` to fixed
    bridges and ``endpoint_std`` to random-endpoint bridges. ``time_grid``
    defaults to ``1..n_frames`` and ``horizon`` to ``n_frames + 1``.
    """

    kind: str
    n_frames: int
    sigma: float = 0.25
    hurst: float = 0.5
    var_v: float = 1.0
    a: float = -2.0
    b: float = 2.0
    endpoint_std: float = 1.0
    time_grid: tuple = None
    horizon: float = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown channel kind {self.kind!r}; expected one of {KINDS}")
        if int(self.n_frames) < 1:
            raise ConfigError("n_frames must be positive")
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")
        if self.kind == FBM and not 0 < self.hurst < 1:
            raise ConfigError(f"hurst must lie in (0, 1), got {self.hurst}")
        if self.var_v < 0 or self.endpoint_std < 0:
            raise ConfigError("variances must be non-negative")
        grid = self.time_grid
        if grid is None:
            grid = tuple(float(t) for t in range(1, self.n_frames + 1))
        grid = tuple(float(t) for t in grid)
        object.__setattr__(self, "time_grid", grid)
        if len(grid) != self.n_frames:
            raise ConfigError(f"time_grid has {len(grid)} entries for {self.n_frames} frames")
        g = np.asarray(grid)
        if np.any(g <= 0) or np.any(np.diff(g) <= 0):
            raise ConfigError("time_grid must be strictly increasing and positive")
        if self.horizon is None:
            object.__setattr__(self, "horizon", float(self.n_frames + 1))

    @property
    def times(self):
        return np.asarray(self.time_grid, dtype=np.float64)

    def to_dict(self):
        d = {"kind": self.kind, "sigma": self.sigma}
        if self.kind == FBM:
            d.update(hurst=self.hurst, var_v=self.var_v)
        elif self.kind == BRIDGE_FIXED:
            d.update(a=self.a, b=self.b)
        else:
            d.update(endpoint_std=self.endpoint_std)
        return d

    @classmethod
    def from_dict(cls, d, n_frames):
        allowed = {
            FBM: {"kind", "sigma", "hurst", "var_v"},
            BRIDGE_FIXED: {"kind", "sigma", "a", "b"},
            BRIDGE_RANDOM: {"kind", "sigma", "endpoint_std"},
        }
        kind = d.get("kind")
        if kind not in allowed:
            raise ConfigError(f"unknown channel kind {kind!r}")
        extra = set(d) - allowed[kind]
        if extra:
            raise ConfigError(f"unknown keys for {kind} channel: {sorted(extra)}")
        return cls(n_frames=n_frames, **d)


def fbm(hurst, n_frames, sigma=0.25, var_v=1.0):
    return GpChannelSpec(FBM, n_frames, sigma=sigma, hurst=hurst, var_v=var_v)


def bridge(a, b, n_frames, sigma=0.25):
    return GpChannelSpec(BRIDGE_FIXED, n_frames, sigma=sigma, a=a, b=b)


def random_bridge(n_frames, sigma=0.25, endpoint_std=1.0):
    return GpChannelSpec(BRIDGE_RANDOM, n_frames, sigma=sigma, endpoint_std=endpoint_std)


@dataclass
class GaussianPath:
    """Mean and covariance of one channel over ``n`` frames.

    ``chol`` caches the lower Cholesky factor; ``jitter`` records the
    diagonal shift that was needed to obtain it.
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(default=None, repr=False)
    jitter: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.mean.ndim != 1 or self.cov.shape != (self.mean.size, self.mean.size):
            raise DimensionMismatch(
                f"mean of shape {self.mean.shape} vs covariance of shape {self.cov.shape}"
            )
        if self.chol is None:
            self.chol, self.jitter = linalg.cholesky(self.cov)

    @classmethod
    def from_chol(cls, mean, chol):
        chol = np.tril(np.asarray(chol, dtype=np.float64))
        return cls(mean, chol @ chol.T, chol=chol)

    @property
    def n(self):
        return self.mean.size


def fbm_cov(spec):
    """Prior of ``V + sigma * B^H_t`` on the spec's time grid (mean zero)."""
    if spec.kind != FBM:
        raise ConfigError(f"fbm_cov needs an fbm spec, got {spec.kind}")
    t = spec.times
    two_h = 2.0 * spec.hurst
    s_, t_ = np.meshgrid(t, t, indexing="ij")
    r = 0.5 * (s_**two_h + t_**two_h - np.abs(t_ - s_) ** two_h)
    cov = spec.var_v + spec.sigma**2 * r
    cov = 0.5 * (cov + cov.T)
    return GaussianPath(np.zeros(t.size), cov)


def bridge_cov(spec):
    """Prior of a Brownian bridge channel on ``(0, horizon)``."""
    if spec.kind not in (BRIDGE_FIXED, BRIDGE_RANDOM):
        raise ConfigError(f"bridge_cov needs a bridge spec, got {spec.kind}")
    t = spec.times
    T = spec.horizon
    if np.any(np.isclose(t, 0.0, rtol=0, atol=1e-12)) or np.any(np.isclose(t, T, rtol=0, atol=1e-12)):
        raise SingularAtEndpoint(f"time grid touches a pinned endpoint (T={T:g})")
    if np.any(t > T):
        raise ConfigError(f"time grid exceeds horizon T={T:g}")
    s_, t_ = np.meshgrid(t, t, indexing="ij")
    cov = spec.sigma**2 * (np.minimum(s_, t_) - s_ * t_ / T)
    if spec.kind == BRIDGE_FIXED:
        mean = spec.a * (1 - t / T) + spec.b * (t / T)
    else:
        mean = np.zeros(t.size)
        cov = cov + spec.endpoint_std**2 * ((1 - s_ / T) * (1 - t_ / T) + s_ * t_ / T**2)
    cov = 0.5 * (cov + cov.T)
    return GaussianPath(mean, cov)


def prior_path(spec):
    return fbm_cov(spec) if spec.kind == FBM else bridge_cov(spec)


def build_prior_bank(specs):
    """Independent per-channel priors, in spec order."""
    specs = list(specs)
    if len({s.n_frames for s in specs}) > 1:
        raise MixedFrameCounts(f"channels disagree on n_frames: {[s.n_frames for s in specs]}")
    return [prior_path(s) for s in specs]


def sample_path(path, noise):
    """``mean + chol @ noise``; ``noise`` may carry leading batch axes."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim == 0 or noise.shape[-1] != path.n:
        raise DimensionMismatch(f"noise of shape {noise.shape} for a path of length {path.n}")
    return path.mean + noise @ path.chol.T


def kl_full_gaussian(posterior, prior):
    """KL(posterior || prior) between two multivariate normals.

    0.5 * [tr(S0^-1 S1) + (m1 - m0)^T S0^-1 (m1 - m0) - n + log det S0 - log det S1]
    """
    if posterior.n != prior.n:
        raise DimensionMismatch(f"posterior dim {posterior.n} vs prior dim {prior.n}")
    L0_inv = linalg.inv_lower(prior.chol)
    trace = float(np.sum((L0_inv @ posterior.chol) ** 2))
    quad = linalg.quad_form_inv(prior.chol, posterior.mean - prior.mean)
    log_ratio = linalg.log_det_from_chol(prior.chol) - linalg.log_det_from_chol(posterior.chol)
    return 0.5 * (trace + quad - prior.n + log_ratio)
