"""Hot numeric kernels with numba and pure-numpy implementations.

The backend is chosen once at import from the STACKPARSE_BACKEND
environment variable ("numba" or "numpy"); unset picks numba when it is
importable.  Both implementations are exact (no fastmath), so results
agree to floating-point rounding; `benchmarks/bench_kernels.py` compares
their speed.  Matrix products stay in numpy/BLAS either way.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

_env = os.environ.get("STACKPARSE_BACKEND", "").strip().lower()
if _env not in ("", "numba", "numpy"):
    raise RuntimeError(f"STACKPARSE_BACKEND must be 'numba' or 'numpy', got {_env!r}")
if _env == "numba" and not HAS_NUMBA:
    raise RuntimeError("STACKPARSE_BACKEND=numba but numba is not importable")
BACKEND = _env or ("numba" if HAS_NUMBA else "numpy")


# ---------------------------------------------------------------- numpy

def _softmax_masked_np(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row softmax over permitted entries only; excluded entries are 0.

    Rows with no permitted entry come out all-zero (padded steps)."""
    neg = np.where(mask, scores, -np.inf)
    row_max = neg.max(axis=-1, keepdims=True)
    # all-excluded rows would give -inf max; make them finite, they zero out below
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(mask, np.exp(neg - row_max), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    denom = np.where(denom > 0.0, denom, 1.0)
    return e / denom


def _softmax_masked_grad_np(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    inner = (probs * dprobs).sum(axis=-1, keepdims=True)
    return probs * (dprobs - inner)


def _layer_norm_np(x, gain, bias, eps):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * rstd
    return xhat * gain + bias, xhat, rstd.squeeze(-1)


def _layer_norm_grad_np(dy, xhat, rstd, gain):
    d = xhat.shape[-1]
    dgain = (dy * xhat).reshape(-1, d).sum(axis=0)
    dbias = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[..., None]
    return dx, dgain, dbias


def _adam_step_np(param, grad, m, v, lr, beta1, beta2, eps, corr1, corr2):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    param -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)


# ---------------------------------------------------------------- numba

if HAS_NUMBA:
    _njit = numba.njit(cache=True, fastmath=False)

    @_njit
    def _softmax_masked_nb(scores2d, mask2d, out2d):
        rows, cols = scores2d.shape
        for r in range(rows):
            hi = -np.inf
            for c in range(cols):
                if mask2d[r, c] and scores2d[r, c] > hi:
                    hi = scores2d[r, c]
            if hi == -np.inf:
                for c in range(cols):
                    out2d[r, c] = 0.0
                continue
            total = 0.0
            for c in range(cols):
                if mask2d[r, c]:
                    e = np.exp(scores2d[r, c] - hi)
                    out2d[r, c] = e
                    total += e
                else:
                    out2d[r, c] = 0.0
            for c in range(cols):
                out2d[r, c] /= total

    @_njit
    def _softmax_masked_grad_nb(probs2d, dprobs2d, out2d):
        rows, cols = probs2d.shape
        for r in range(rows):
            inner = 0.0
            for c in range(cols):
                inner += probs2d[r, c] * dprobs2d[r, c]
            for c in range(cols):
                out2d[r, c] = probs2d[r, c] * (dprobs2d[r, c] - inner)

    @_njit
    def _layer_norm_nb(x2d, gain, bias, eps, y2d, xhat2d, rstd1d):
        rows, d = x2d.shape
        for r in range(rows):
            mean = 0.0
            for c in range(d):
                mean += x2d[r, c]
            mean /= d
            var = 0.0
            for c in range(d):
                diff = x2d[r, c] - mean
                var += diff * diff
            var /= d
            rstd = 1.0 / np.sqrt(var + eps)
            rstd1d[r] = rstd
            for c in range(d):
                xh = (x2d[r, c] - mean) * rstd
                xhat2d[r, c] = xh
                y2d[r, c] = xh * gain[c] + bias[c]

    @_njit
    def _layer_norm_grad_nb(dy2d, xhat2d, rstd1d, gain, dx2d, dgain, dbias):
        rows, d = dy2d.shape
        for c in range(d):
            dgain[c] = 0.0
            dbias[c] = 0.0
        for r in range(rows):
            m1 = 0.0
            m2 = 0.0
            for c in range(d):
                dgain[c] += dy2d[r, c] * xhat2d[r, c]
                dbias[c] += dy2d[r, c]
                dxh = dy2d[r, c] * gain[c]
                m1 += dxh
                m2 += dxh * xhat2d[r, c]
            m1 /= d
            m2 /= d
            for c in range(d):
                dxh = dy2d[r, c] * gain[c]
                dx2d[r, c] = (dxh - m1 - xhat2d[r, c] * m2) * rstd1d[r]

    @_njit
    def _adam_step_nb(param, grad, m, v, lr, beta1, beta2, eps, corr1, corr2):
        n = param.shape[0]
        for i in range(n):
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
            param[i] -= lr * (m[i] / corr1) / (np.sqrt(v[i] / corr2) + eps)


# ---------------------------------------------------------------- public

def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """softmax(scores) over the last axis, restricted to mask==True.

    Excluded entries are exactly zero; an all-excluded row is all-zero.
    """
    if scores.shape != mask.shape:
        raise ValueError(f"shape mismatch {scores.shape} vs {mask.shape}")
    if BACKEND == "numba":
        flat = np.ascontiguousarray(scores.reshape(-1, scores.shape[-1]))
        out = np.empty_like(flat)
        _softmax_masked_nb(flat, np.ascontiguousarray(mask.reshape(flat.shape)), out)
        return out.reshape(scores.shape)
    return _softmax_masked_np(scores, mask)


def masked_softmax_grad(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Backward of masked_softmax: probs carry the mask (zeros stay zero)."""
    if BACKEND == "numba":
        flat = np.ascontiguousarray(probs.reshape(-1, probs.shape[-1]))
        dflat = np.ascontiguousarray(dprobs.reshape(flat.shape))
        out = np.empty_like(flat)
        _softmax_masked_grad_nb(flat, dflat, out)
        return out.reshape(probs.shape)
    return _softmax_masked_grad_np(probs, dprobs)


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5):
    """Normalize the last axis; returns (y, xhat, rstd) for the backward pass."""
    if BACKEND == "numba":
        d = x.shape[-1]
        flat = np.ascontiguousarray(x.reshape(-1, d))
        y = np.empty_like(flat)
        xhat = np.empty_like(flat)
        rstd = np.empty(flat.shape[0], dtype=x.dtype)
        _layer_norm_nb(flat, gain, bias, eps, y, xhat, rstd)
        return (y.reshape(x.shape), xhat.reshape(x.shape),
                rstd.reshape(x.shape[:-1]))
    return _layer_norm_np(x, gain, bias, eps)


def layer_norm_grad(dy: np.ndarray, xhat: np.ndarray, rstd: np.ndarray,
                    gain: np.ndarray):
    """Backward of layer_norm; returns (dx, dgain, dbias)."""
    if BACKEND == "numba":
        d = dy.shape[-1]
        flat_dy = np.ascontiguousarray(dy.reshape(-1, d))
        flat_xhat = np.ascontiguousarray(xhat.reshape(-1, d))
        flat_rstd = np.ascontiguousarray(rstd.reshape(-1))
        dx = np.empty_like(flat_dy)
        dgain = np.empty(d, dtype=dy.dtype)
        dbias = np.empty(d, dtype=dy.dtype)
        _layer_norm_grad_nb(flat_dy, flat_xhat, flat_rstd, gain, dx, dgain, dbias)
        return dx.reshape(dy.shape), dgain, dbias
    return _layer_norm_grad_np(dy, xhat, rstd, gain)


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              lr: float, beta1: float, beta2: float, eps: float, step: int) -> None:
    """One fused Adam update, in place, with bias correction at `step` (1-based)."""
    for name, arr in (("param", param), ("m", m), ("v", v)):
        if not arr.flags["C_CONTIGUOUS"]:
            raise ValueError(f"{name} must be C-contiguous for in-place update")
    corr1 = 1.0 - beta1 ** step
    corr2 = 1.0 - beta2 ** step
    if BACKEND == "numba":
        # scalars typed like the tensors keep the jit loop in one dtype
        dt = param.dtype.type
        _adam_step_nb(param.reshape(-1), np.ascontiguousarray(grad.reshape(-1)),
                      m.reshape(-1), v.reshape(-1),
                      dt(lr), dt(beta1), dt(beta2), dt(eps),
                      dt(corr1), dt(corr2))
    else:
        _adam_step_np(param.reshape(-1), grad.reshape(-1), m.reshape(-1),
                      v.reshape(-1), lr, beta1, beta2, eps, corr1, corr2)
