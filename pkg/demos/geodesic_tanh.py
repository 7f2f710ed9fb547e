"""Bend a straight latent path into a geodesic of a squashing decoder.

With the decoder ``tanh`` the cheapest way from -2 to 2 spends its steps
where the output still changes, near zero. The refined path is compared
with a brute-force optimum over a 401-point grid.
"""
import numpy as np

from mgpvae import autodiff as ad
from mgpvae import geodesic
from mgpvae.geodesic import GeodesicConfig


def tanh(z):
    return ad.tanh(z)


def grid_optimum(num_interior=4, grid=np.linspace(-2, 2, 401)):
    g = np.tanh(grid)
    cost = 0.5 * (g - np.tanh(-2.0)) ** 2
    for _ in range(num_interior - 1):
        cost = (cost[:, None] + 0.5 * (g[None, :] - g[:, None]) ** 2).min(axis=0)
    return float((cost + 0.5 * (np.tanh(2.0) - g) ** 2).min())


def main():
    z0, zT = np.array([-2.0]), np.array([2.0])
    straight = geodesic.init_path(z0, zT, 4, tanh)
    print("straight line :", np.round(straight.points[:, 0], 3), f"energy {straight.energy_trace[0]:.5f}")

    default = geodesic.geodesic_path(z0, zT, tanh)
    print("16 sweeps     :", np.round(default.points[:, 0], 3), f"energy {default.energy_trace[-1]:.5f}")

    cfg = GeodesicConfig(until_converged=True, epsilon=1e-12, max_iters=20000)
    converged = geodesic.geodesic_path(z0, zT, tanh, cfg)
    print("converged     :", np.round(converged.points[:, 0], 3), f"energy {converged.energy_trace[-1]:.5f} "
          f"after {len(converged.energy_trace) - 1} sweeps")
    print(f"grid optimum  : energy {grid_optimum():.5f}")
    print("first interior point, the prediction target:", geodesic.geodesic_target(z0, zT, tanh))


if __name__ == "__main__":
    main()
