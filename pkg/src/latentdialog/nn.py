"""Trainable layers and the optimizer built on the autodiff core."""

import numpy as np

from . import autodiff as ad
from . import _kernels


def xavier_uniform(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear:
    def __init__(self, rng, d_in, d_out, prefix=""):
        self.w = ad.Tensor(xavier_uniform(rng, d_in, d_out), name=prefix + "w")
        self.b = ad.Tensor(np.zeros(d_out), name=prefix + "b")

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.w), self.b)

    def parameters(self):
        return [self.w, self.b]


class LstmCell:
    """Fused LSTM cell. Forget-gate bias starts at 1 to ease early training."""

    def __init__(self, rng, d_in, d_hid, prefix=""):
        self.d_in = d_in
        self.d_hid = d_hid
        self.w = ad.Tensor(
            xavier_uniform(rng, d_in + d_hid, 4 * d_hid), name=prefix + "w"
        )
        b = np.zeros(4 * d_hid)
        b[d_hid:2 * d_hid] = 1.0
        self.b = ad.Tensor(b, name=prefix + "b")

    def initial_state(self, batch):
        zero = np.zeros((batch, self.d_hid))
        return ad.Tensor(zero), ad.Tensor(zero.copy())

    def step(self, x, h, c):
        return ad.lstm_step(x, h, c, self.w, self.b)

    def parameters(self):
        return [self.w, self.b]


class GruCell:
    """GRU cell composed from primitives; cheaper option for desk scale."""

    def __init__(self, rng, d_in, d_hid, prefix=""):
        self.d_in = d_in
        self.d_hid = d_hid
        self.w_zr = ad.Tensor(
            xavier_uniform(rng, d_in + d_hid, 2 * d_hid), name=prefix + "w_zr"
        )
        self.b_zr = ad.Tensor(np.zeros(2 * d_hid), name=prefix + "b_zr")
        self.w_n = ad.Tensor(
            xavier_uniform(rng, d_in + d_hid, d_hid), name=prefix + "w_n"
        )
        self.b_n = ad.Tensor(np.zeros(d_hid), name=prefix + "b_n")

    def initial_state(self, batch):
        zero = np.zeros((batch, self.d_hid))
        return ad.Tensor(zero), ad.Tensor(zero.copy())

    def step(self, x, h, c):
        # c is carried to keep the cell interface uniform; GRU ignores it.
        hid = self.d_hid
        xh = ad.concat([x, h], axis=1)
        zr = ad.sigmoid(ad.add(ad.matmul(xh, self.w_zr), self.b_zr))
        z = ad.tslice(zr, (slice(None), slice(0, hid)))
        r = ad.tslice(zr, (slice(None), slice(hid, 2 * hid)))
        xrh = ad.concat([x, ad.mul(r, h)], axis=1)
        n = ad.tanh(ad.add(ad.matmul(xrh, self.w_n), self.b_n))
        one_minus_z = ad.sub(ad.Tensor(np.ones_like(z.data)), z)
        h_new = ad.add(ad.mul(one_minus_z, n), ad.mul(z, h))
        return h_new, c

    def parameters(self):
        return [self.w_zr, self.b_zr, self.w_n, self.b_n]


def make_cell(kind, rng, d_in, d_hid, prefix=""):
    if kind == "lstm":
        return LstmCell(rng, d_in, d_hid, prefix)
    if kind == "gru":
        return GruCell(rng, d_in, d_hid, prefix)
    raise ValueError(f"unknown recurrent cell kind: {kind!r}")


class BatchNorm:
    def __init__(self, d, momentum=0.1, eps=1e-5, prefix=""):
        self.gamma = ad.Tensor(np.ones(d), name=prefix + "gamma")
        self.beta = ad.Tensor(np.zeros(d), name=prefix + "beta")
        self.running_mean = np.zeros(d)
        self.running_var = np.ones(d)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x, train):
        return ad.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            train, self.momentum, self.eps,
        )

    def parameters(self):
        return [self.gamma, self.beta]

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


def clip_global_norm(grads, params, max_norm):
    """Scale the gradients of `params` so their global L2 norm <= max_norm."""
    total = 0.0
    for p in params:
        g = grads[p]
        total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if norm > max_norm > 0.0:
        scale = max_norm / norm
        for p in params:
            grads[p] = grads[p] * scale
    return norm


class Adam:
    """Bias-corrected Adam over a fixed parameter list."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0.0:
            raise ValueError(f"Adam lr must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads):
        self.t += 1
        for i, p in enumerate(self.params):
            g = grads[p]
            if g.shape != p.data.shape:
                raise ad.ShapeError(
                    f"Adam: gradient shape {g.shape} != parameter shape {p.data.shape}"
                )
            _kernels.adam_update(
                p.data, g, self.m[i], self.v[i], self.t,
                self.lr, self.beta1, self.beta2, self.eps,
            )
