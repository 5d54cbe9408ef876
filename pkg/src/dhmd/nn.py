"""Parameter containers, layers and the Adam optimizer.

Thin structural layer over ``autodiff``: modules exist so parameters get
stable dotted names (checkpoint blobs, gradient bookkeeping), not to add
framework machinery.
"""

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Parameter, Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield (prefix + name if prefix else name), p
        for name, mod in self._modules.items():
            sub = prefix + name + "." if prefix else name + "."
            yield from mod.named_parameters(sub)

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for name, mod in self._modules.items():
            sub = prefix + name + "." if prefix else name + "."
            yield from mod.named_modules(sub)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_arrays(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays):
        mine = dict(self.named_parameters())
        missing = sorted(set(mine) - set(arrays))
        if missing:
            raise KeyError(f"checkpoint is missing parameters: {missing[:4]}...")
        for name, p in mine.items():
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {name}: checkpoint {src.shape} vs model {p.data.shape}")
            p.data[...] = src


class ModuleDict(Module):
    def __init__(self, mapping):
        super().__init__()
        for key, mod in mapping.items():
            setattr(self, key, mod)
        object.__setattr__(self, "_keys", list(mapping))

    def __getitem__(self, key):
        return self._modules[key]

    def keys(self):
        return list(self._keys)


class ModuleList(Module):
    def __init__(self, mods):
        super().__init__()
        for i, mod in enumerate(mods):
            setattr(self, str(i), mod)
        object.__setattr__(self, "_n", len(mods))

    def __iter__(self):
        return (self._modules[str(i)] for i in range(self._n))

    def __len__(self):
        return self._n

    def __getitem__(self, i):
        return self._modules[str(i)]


def xavier(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear(Module):
    """Affine map on the last axis: y = x @ w + b."""

    def __init__(self, in_dim, out_dim, rng, bias=True):
        super().__init__()
        self.w = Parameter(xavier(rng, in_dim, out_dim, (in_dim, out_dim)))
        self.b = Parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x):
        if self.b is not None:
            return ad.affine(x, self.w, self.b)
        return ad.matmul(x, self.w)


class Conv1d(Module):
    """Same-padding temporal convolution over [B,T,C] sequences."""

    def __init__(self, in_ch, out_ch, kernel_size, rng):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kernel_size}")
        self.kernel_size = kernel_size
        fan_in = kernel_size * in_ch
        self.w = Parameter(xavier(rng, fan_in, out_ch, (kernel_size, in_ch, out_ch)))
        self.b = Parameter(np.zeros(out_ch))

    def __call__(self, x):
        return ad.conv1d(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)


class Adam:
    """Adam with bias correction; the update itself is kernel-backed."""

    def __init__(self, named_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def step(self):
        self.t += 1
        for name, p in self.named_params:
            if p.grad is None:
                continue
            kernels.adam_step(p.data, p.grad, self.m[name], self.v[name],
                              self.lr, self.beta1, self.beta2, self.eps, self.t)

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None

    def state_arrays(self):
        out = {"adam.t": np.array([float(self.t)])}
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays):
        self.t = int(round(float(np.asarray(arrays["adam.t"]).reshape(-1)[0])))
        for name in self.m:
            self.m[name][...] = np.asarray(arrays[f"adam.m.{name}"], dtype=np.float64)
            self.v[name][...] = np.asarray(arrays[f"adam.v.{name}"], dtype=np.float64)
