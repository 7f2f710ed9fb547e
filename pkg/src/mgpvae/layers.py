"""Fully connected building blocks on top of :mod:`mgpvae.autodiff`."""
import numpy as np

from . import autodiff as ad

ACTIVATIONS = {"elu": ad.elu, "relu": ad.relu, "tanh": ad.tanh, None: lambda x: x}


class Linear:
    """Affine layer acting on the last axis.

    Weights are uniform He-initialised; biases are uniform in
    ``+-1/sqrt(n_in)`` so that, for low-dimensional inputs, the first layer's
    kinks do not all pass through the origin. ``init="zeros"`` zeroes both.
    """

    def __init__(self, n_in, n_out, rng, dtype=np.float32, init="he"):
        if init == "zeros":
            w = np.zeros((n_in, n_out))
            b = np.zeros(n_out)
        else:
            bound = np.sqrt(6.0 / n_in)
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
            b = rng.uniform(-1, 1, size=n_out) / np.sqrt(n_in)
        self.weight = ad.Tensor(w.astype(dtype), requires_grad=True)
        self.bias = ad.Tensor(b.astype(dtype), requires_grad=True)

    def __call__(self, x):
        return ad.affine(x, self.weight, self.bias)

    def named_parameters(self, prefix=""):
        return [(prefix + "weight", self.weight), (prefix + "bias", self.bias)]


class MLP:
    """Stack of :class:`Linear` layers with a hidden and an output activation."""

    def __init__(self, sizes, rng, activation="elu", out_activation=None, dtype=np.float32, last_init="he"):
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            self.layers.append(Linear(a, b, rng, dtype, init=last_init if last else "he"))
        self.activation = ACTIVATIONS[activation]
        self.out_activation = ACTIVATIONS[out_activation]

    def __call__(self, x):
        for layer in self.layers[:-1]:
            x = self.activation(layer(x))
        return self.out_activation(self.layers[-1](x))

    def named_parameters(self, prefix=""):
        out = []
        for i, layer in enumerate(self.layers):
            out += layer.named_parameters(f"{prefix}{i}.")
        return out
