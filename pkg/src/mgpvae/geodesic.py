"""Discrete geodesic interpolation through a decoder's image.

A path ``z_0, ..., z_T`` in latent space is scored by the energy of its
decoded image, ``E = 1/2 * sum_i ||g(z_{i+1}) - g(z_i)||^2 / dt``. Interior
points start on the straight line between the frozen endpoints and are
moved by gradient descent one at a time, in index order, using
``dE/dz_i = -(dg(z_i))^T [g(z_{i+1}) - 2 g(z_i) + g(z_{i-1})] / dt``.

Decoders are callables mapping a ``(M, D)`` :class:`~mgpvae.autodiff.Tensor`
of latent points to an ``(M, P)`` tensor, row by row. Points may be single
vectors ``(D,)`` or batches ``(B, D)`` of independent paths refined together.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionMismatch, NonFiniteEnergy

log = logging.getLogger(__name__)


@dataclass
class GeodesicConfig:
    """Settings for :func:`refine`.

    By default a fixed number of sweeps is run; ``until_converged`` switches
    to looping until the energy drops by less than ``epsilon`` (capped at
    ``max_iters``). ``backtrack`` halves a point's step while it raises the
    local energy, which keeps the trace monotone for stiff decoders.
    """

    num_interior: int = 4
    iters: int = 16
    alpha: float = 0.05
    epsilon: float = 1e-6
    delta_t: float = 1.0
    until_converged: bool = False
    max_iters: int = 1000
    backtrack: bool = False
    max_halvings: int = 20
    strict: bool = False

    def __post_init__(self):
        if self.num_interior < 1:
            raise ConfigError("num_interior must be >= 1")
        if self.iters < 1 or self.alpha <= 0 or self.delta_t <= 0:
            raise ConfigError("iters, alpha and delta_t must be positive")


@dataclass
class GeodesicPath:
    """Points ``z_0 .. z_T`` stacked on axis 0; ``energy_trace[0]`` is the initial energy."""

    points: np.ndarray
    energy_trace: list = field(default_factory=list)
    delta_t: float = 1.0
    step_failures: int = 0

    @property
    def num_interior(self):
        return self.points.shape[0] - 2


def _as_rows(z):
    z = np.asarray(z, dtype=np.float64)
    return z[None] if z.ndim == 1 else z


def _decode(decoder, rows):
    with ad.no_grad():
        return np.asarray(decoder(ad.Tensor(rows)).data, dtype=np.float64)


def init_path(z0, zT, num_interior, decoder=None, delta_t=1.0):
    """Uniform linear interpolation with ``num_interior`` points between the ends."""
    z0 = np.asarray(z0, dtype=np.float64)
    zT = np.asarray(zT, dtype=np.float64)
    if z0.shape != zT.shape:
        raise DimensionMismatch(f"endpoints of shape {z0.shape} and {zT.shape}")
    if num_interior < 1:
        raise ConfigError("num_interior must be >= 1")
    s = np.linspace(0.0, 1.0, num_interior + 2).reshape((-1,) + (1,) * z0.ndim)
    points = z0 + s * (zT - z0)
    points[0], points[-1] = z0, zT
    path = GeodesicPath(points, delta_t=delta_t)
    if decoder is not None:
        path.energy_trace.append(path_energy(points, decoder, delta_t))
    return path


def _energy_from_decoded(decoded, delta_t):
    diffs = np.diff(decoded, axis=0)
    return 0.5 * float(np.sum(diffs * diffs)) / delta_t


def decode_points(points, decoder):
    """Decoded points, shape ``(T+1, B, P)``."""
    points = np.asarray(points, dtype=np.float64)
    return np.stack([_decode(decoder, _as_rows(p)) for p in points])


def path_energy(points, decoder, delta_t=1.0):
    """Discrete path energy, summed over all paths in a batch."""
    if isinstance(points, GeodesicPath):
        points = points.points
    return _energy_from_decoded(decode_points(points, decoder), delta_t)


def energy_gradient(points, i, decoder, delta_t=1.0):
    """Gradient of the path energy with respect to interior point ``i``."""
    points = np.asarray(points, dtype=np.float64)
    g_prev = _decode(decoder, _as_rows(points[i - 1]))
    g_next = _decode(decoder, _as_rows(points[i + 1]))
    return _point_gradient(points[i], g_prev, g_next, decoder, delta_t)[0]


def _point_gradient(z, g_prev, g_next, decoder, delta_t):
    rows = _as_rows(z)
    zt = ad.Tensor(rows, requires_grad=True)
    out = decoder(zt)
    g_here = np.asarray(out.data, dtype=np.float64)
    lap = g_next - 2.0 * g_here + g_prev
    grad = ad.grad(out, [zt], seed=-lap / delta_t)[0]
    return grad.reshape(np.shape(z)), g_here


def _local_energy(g_prev, g_here, g_next):
    a = g_here - g_prev
    b = g_next - g_here
    return 0.5 * (float(np.sum(a * a)) + float(np.sum(b * b)))


def _sweep(path, decoded, decoder, config):
    pts = path.points
    for i in range(1, pts.shape[0] - 1):
        grad, g_here = _point_gradient(pts[i], decoded[i - 1], decoded[i + 1], decoder, config.delta_t)
        step = config.alpha
        candidate = pts[i] - step * grad
        g_new = _decode(decoder, _as_rows(candidate))
        if config.backtrack:
            before = _local_energy(decoded[i - 1], g_here, decoded[i + 1])
            halvings = 0
            while _local_energy(decoded[i - 1], g_new, decoded[i + 1]) > before and halvings < config.max_halvings:
                step *= 0.5
                halvings += 1
                candidate = pts[i] - step * grad
                g_new = _decode(decoder, _as_rows(candidate))
            if _local_energy(decoded[i - 1], g_new, decoded[i + 1]) > before:
                path.step_failures += 1
                continue
        pts[i] = candidate
        decoded[i] = g_new


def refine(path, decoder, config=None):
    """Run gradient sweeps over the interior points; endpoints stay fixed.

    Appends the energy after each sweep to ``path.energy_trace``. An energy
    rise beyond 1e-9 is counted in ``path.step_failures`` and logged (raised
    as :class:`NonFiniteEnergy` when ``config.strict``); a non-finite energy
    always raises.
    """
    config = GeodesicConfig() if config is None else config
    path.delta_t = config.delta_t
    decoded = decode_points(path.points, decoder)
    if not path.energy_trace:
        path.energy_trace.append(_energy_from_decoded(decoded, config.delta_t))
    n_sweeps = config.max_iters if config.until_converged else config.iters
    for _ in range(n_sweeps):
        _sweep(path, decoded, decoder, config)
        energy = _energy_from_decoded(decoded, config.delta_t)
        prev = path.energy_trace[-1]
        path.energy_trace.append(energy)
        if not np.isfinite(energy) or not np.all(np.isfinite(path.points)):
            raise NonFiniteEnergy(f"path energy became {energy}; step size alpha={config.alpha} too large")
        if energy > prev + 1e-9:
            path.step_failures += 1
            log.warning("geodesic energy rose from %.6g to %.6g (alpha=%g)", prev, energy, config.alpha)
            if config.strict:
                raise NonFiniteEnergy(f"energy increased from {prev} to {energy}; reduce alpha={config.alpha}")
        if config.until_converged and abs(prev - energy) <= config.epsilon:
            break
    return path


def geodesic_path(z0, zT, decoder, config=None):
    config = GeodesicConfig() if config is None else config
    path = init_path(z0, zT, config.num_interior, decoder, config.delta_t)
    return refine(path, decoder, config)


def geodesic_target(z0, zT, decoder, config=None):
    """First interior point of the refined path from ``z0`` towards ``zT``."""
    return geodesic_path(z0, zT, decoder, config).points[1].copy()
