"""Parameter-owning layer wrappers around the autodiff ops.

Each layer draws its weights from the rng passed at construction (so a
seed fixes the whole network), exposes __call__ on Tensors, and
registers its parameters and running statistics into flat name->array
dicts used by the optimizer and the checkpoint writer.
"""

from __future__ import annotations

import numpy as np

from ..diffcore import PadSpec, Tensor, batchnorm, conv2d, conv3d_aniso, deconv2d


def _kaiming(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(np.float32)


class Conv2dLayer:
    def __init__(self, rng, name, cin, cout, k, stride=1, periodic_h=False, w_std=None):
        self.name = name
        self.stride = stride
        self.pad = PadSpec.for_kernel(k, k, periodic_h=periodic_h) if k > 1 else PadSpec()
        if w_std is None:
            w = _kaiming(rng, (cout, cin, k, k), cin * k * k)
        else:
            w = rng.normal(0.0, w_std, size=(cout, cin, k, k)).astype(np.float32)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)

    def __call__(self, x):
        return conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)

    def register(self, params):
        params[f"{self.name}.w"] = self.w
        params[f"{self.name}.b"] = self.b


class Deconv2dLayer:
    def __init__(self, rng, name, cin, cout, k, stride=2, periodic_h=False):
        self.name = name
        self.stride = stride
        self.pad = PadSpec.for_kernel(k, k, periodic_h=periodic_h)
        w = _kaiming(rng, (cin, cout, k, k), cin * k * k)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)

    def __call__(self, x):
        return deconv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)

    def register(self, params):
        params[f"{self.name}.w"] = self.w
        params[f"{self.name}.b"] = self.b


class AnisoConv3dLayer:
    """1-D kernel along one spatial axis of the volume; point in the rest."""

    def __init__(self, rng, name, cin, cout, k, axis, pad_mode="zero", pad_amount=None):
        self.name = name
        self.axis = axis
        self.pad_mode = pad_mode
        self.pad_amount = pad_amount
        self.w = Tensor(_kaiming(rng, (cout, cin, k), cin * k), requires_grad=True)
        self.b = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)

    def __call__(self, x):
        return conv3d_aniso(x, self.w, self.axis, b=self.b,
                            pad_mode=self.pad_mode, pad_amount=self.pad_amount)

    def register(self, params):
        params[f"{self.name}.w"] = self.w
        params[f"{self.name}.b"] = self.b


class BatchNormLayer:
    def __init__(self, name, channels):
        self.name = name
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)

    def __call__(self, x, training, update_stats=True):
        return batchnorm(x, self.gamma, self.beta,
                         self.running_mean, self.running_var, training=training,
                         update_stats=update_stats)

    def register(self, params):
        params[f"{self.name}.gamma"] = self.gamma
        params[f"{self.name}.beta"] = self.beta

    def register_stats(self, stats):
        stats[f"{self.name}.running_mean"] = self.running_mean
        stats[f"{self.name}.running_var"] = self.running_var
