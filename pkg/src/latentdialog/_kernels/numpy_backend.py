"""Pure-numpy implementations of the hot training kernels.

This is the fallback backend used when the compiled extension is not
available. Both backends implement the same functions with the same
semantics; `tests/test_kernels.py` checks them against each other and
`benchmarks/bench_kernels.py` compares their speed.
"""

import numpy as np


def sigmoid(x):
    """Numerically stable logistic; never overflows for finite input."""
    out = np.empty_like(x)
    pos = x >= 0
    neg = ~pos
    z = np.exp(-np.abs(x))
    out[pos] = 1.0 / (1.0 + z[pos])
    out[neg] = z[neg] / (1.0 + z[neg])
    return out


def lstm_gates_forward(pre, c_prev):
    """Gate nonlinearity half of an LSTM step.

    pre: [B, 4H] preactivations in block order (input, forget, candidate,
    output); c_prev: [B, H]. Returns (h, c, cache) where cache holds what
    the backward pass needs.
    """
    h4 = pre.shape[1]
    hid = h4 // 4
    i = sigmoid(pre[:, 0 * hid:1 * hid])
    f = sigmoid(pre[:, 1 * hid:2 * hid])
    g = np.tanh(pre[:, 2 * hid:3 * hid])
    o = sigmoid(pre[:, 3 * hid:4 * hid])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (i, f, g, o, c_prev, tc)


def lstm_gates_backward(dh, dc_out, cache):
    """Backward of lstm_gates_forward; returns (d_pre, d_c_prev)."""
    i, f, g, o, c_prev, tc = cache
    dc = dc_out + dh * o * (1.0 - tc * tc)
    d_pre = np.concatenate(
        [
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            dh * tc * o * (1.0 - o),
        ],
        axis=1,
    )
    return d_pre, dc * f


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """Bias-corrected Adam step, in place. t is the already-incremented step."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def softmax_xent_forward(logits, targets):
    """Row-wise softmax cross-entropy with integer targets.

    logits: [N, V]; targets: [N] int64 in [0, V). Returns (loss [N],
    probs [N, V]). Max-subtraction keeps exp/log in range for |x| <= 700.
    """
    mx = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - mx)
    z = ex.sum(axis=1, keepdims=True)
    probs = ex / z
    rows = np.arange(logits.shape[0])
    loss = (np.log(z[:, 0]) + mx[:, 0]) - logits[rows, targets]
    return loss, probs


def softmax_xent_backward(probs, targets, dloss):
    """Backward of softmax_xent_forward; returns dlogits [N, V]."""
    dlogits = probs * dloss[:, None]
    dlogits[np.arange(len(targets)), targets] -= dloss
    return dlogits
