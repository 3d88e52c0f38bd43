"""Parameter containers shared by the encoder and the two heads."""
import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Holds named parameters and child modules in insertion order."""

    def named_parameters(self, prefix=""):
        out = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and getattr(value, "name", None) == "param":
                out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{prefix}{name}/"))
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, sub in enumerate(value):
                    out.update(sub.named_parameters(f"{prefix}{name}{i}/"))
            elif isinstance(value, dict) and value and isinstance(next(iter(value.values())), Module):
                for key, sub in value.items():
                    out.update(sub.named_parameters(f"{prefix}{name}.{key}/"))
        return out

    def set_trainable(self, flag: bool):
        for p in self.named_parameters().values():
            p.requires_grad = flag


def parameter(data):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name="param")


def fan_in_normal(rng, n_in, n_out):
    return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))


class Linear(Module):
    def __init__(self, n_in, n_out, rng):
        self.weight = parameter(fan_in_normal(rng, n_in, n_out))
        self.bias = parameter(np.zeros(n_out))

    def __call__(self, x):
        return ad.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)
