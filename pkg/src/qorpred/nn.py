"""Minimal module system: named parameters, train/eval mode, linear layers."""

import math

import numpy as np

from .tensor import BatchNormState, Tensor, matmul


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    """Containers register child modules, Tensors and BatchNormStates as attributes.

    Parameter and buffer names are dotted attribute paths, visited in
    attribute-assignment order so naming is stable across runs.
    """

    training = True

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, BatchNormState):
                yield f"{name}.gain", value.gain
                yield f"{name}.bias", value.bias
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def batch_norms(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, BatchNormState):
                yield name, value
            elif isinstance(value, Module):
                yield from value.batch_norms(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.batch_norms(f"{name}.{i}.")

    def state_arrays(self):
        """All learned arrays and running statistics keyed by name."""
        out = {name: p.data for name, p in self.named_parameters()}
        for name, bn in self.batch_norms():
            out[f"{name}.running_mean"] = bn.running_mean
            out[f"{name}.running_var"] = bn.running_var
        return out

    def load_state_arrays(self, arrays):
        for name, p in self.named_parameters():
            p.data = np.array(arrays[name], dtype=np.float64).reshape(p.shape)
            p.grad = np.zeros_like(p.data)
        for name, bn in self.batch_norms():
            bn.running_mean = np.array(arrays[f"{name}.running_mean"], dtype=np.float64)
            bn.running_var = np.array(arrays[f"{name}.running_var"], dtype=np.float64)

    def _modules(self):
        for value in vars(self).values():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, (list, tuple)):
                yield from (v for v in value if isinstance(v, Module))

    def train(self, mode=True):
        self.training = mode
        for child in self._modules():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    @property
    def mode(self):
        return "train" if self.training else "eval"


class Linear(Module):
    def __init__(self, rng, d_in, d_out, bias=True):
        self.weight = uniform_init(rng, (d_in, d_out), d_in)
        self.bias = uniform_init(rng, (d_out,), d_in) if bias else None

    def __call__(self, x):
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y
