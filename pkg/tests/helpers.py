"""Reference implementations and gradient-check utilities.

Everything here is written the slow, obvious way (window scans, explicit
loops, scalar recurrences) so the fast im2col/GEMM/vectorized code in the
package is checked against independently derived values.
"""

from __future__ import annotations

import numpy as np

from stiln.tensor import Tape, Tensor, backward


def fd_grad(f, param: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` w.r.t. ``param``.

    ``f`` must re-run the forward pass from current parameter values and
    return a python float. ``param`` should be float64; values are perturbed
    in place and restored.
    """
    flat = param.data.reshape(-1)
    g = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2.0 * eps)
    return g.reshape(param.shape)


def analytic_grads(build, params) -> list[np.ndarray]:
    """Run ``build()`` under a fresh tape, backprop, return grad copies."""
    for p in params:
        p.zero_grad()
    with Tape():
        loss = build()
    backward(loss)
    return [np.array(p.grad, copy=True) for p in params]


def check_grads(build, params, rtol: float = 1e-4, atol: float = 1e-7, eps: float = 1e-5):
    """Assert analytic gradients match central differences for each param.

    ``build()`` constructs the scalar loss from the (float64) params. Returns
    the worst relative error seen, for reporting.
    """
    grads = analytic_grads(build, params)

    def value() -> float:
        with Tape():
            return build().item()

    worst = 0.0
    for p, g in zip(params, grads):
        ref = fd_grad(value, p, eps=eps)
        denom = np.maximum(np.abs(ref), np.abs(g))
        err = np.abs(g - ref)
        rel = err / np.maximum(denom, 1e-8)
        bad = err > atol + rtol * np.abs(ref)
        assert not bad.any(), (
            f"gradient mismatch for shape {p.shape}: max abs err {err.max():.3e}, "
            f"max rel err {rel.max():.3e}"
        )
        # report relative error only where the gradient has real scale;
        # below that, central differences are pure roundoff noise
        scaled = rel[denom > 1e-4]
        if scaled.size:
            worst = max(worst, float(scaled.max()))
    return worst


# ---------------------------------------------------------------------------
# reference forward implementations


def ref_conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Direct window-scan cross-correlation, float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    bsz, h, wd, _ = x.shape
    k, _, _, cout = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((bsz, ho, wo, cout))
    for bi in range(bsz):
        for oi in range(ho):
            for oj in range(wo):
                patch = x[bi, oi * stride : oi * stride + k, oj * stride : oj * stride + k, :]
                for co in range(cout):
                    out[bi, oi, oj, co] = np.sum(patch * w[:, :, :, co])
    if b is not None:
        out += np.asarray(b, dtype=np.float64)
    return out


def ref_pool2d(x, window: int, mode: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    bsz, h, wd, c = x.shape
    ho, wo = h // window, wd // window
    out = np.zeros((bsz, ho, wo, c))
    for bi in range(bsz):
        for oi in range(ho):
            for oj in range(wo):
                for ci in range(c):
                    cell = x[
                        bi,
                        oi * window : (oi + 1) * window,
                        oj * window : (oj + 1) * window,
                        ci,
                    ]
                    out[bi, oi, oj, ci] = cell.max() if mode == "max" else cell.mean()
    return out


def ref_lstm_cell(x, h, c, wx, wh, b):
    """Gate-by-gate LSTM step in float64; gate order [i, f, g, o]."""
    x, h, c = (np.asarray(a, dtype=np.float64) for a in (x, h, c))
    wx, wh, b = (np.asarray(a, dtype=np.float64) for a in (wx, wh, b))
    d = wh.shape[0]
    z = x @ wx + h @ wh + b

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    i = sig(z[:, 0:d])
    f = sig(z[:, d : 2 * d])
    g = np.tanh(z[:, 2 * d : 3 * d])
    o = sig(z[:, 3 * d : 4 * d])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


def ref_bce(pred, target) -> float:
    p = np.clip(np.asarray(pred, dtype=np.float64), 1e-7, 1.0 - 1e-7)
    t = np.asarray(target, dtype=np.float64)
    return float(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).mean())


def scalar_adam_steps(x0, grads, lr, beta1=0.9, beta2=0.999, epsilon=1e-8):
    """Pure-python Adam trajectory for one scalar parameter."""
    x, m, v = float(x0), 0.0, 0.0
    history = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        x = x - lr * mhat / (np.sqrt(vhat) + epsilon)
        history.append(x)
    return history
