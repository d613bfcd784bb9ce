"""Whole-sequence evaluation of the online rules for feedforward networks.

Without recurrence the eligibility recursions are linear filters of the input
history, so the gradient the streaming learner accumulates step by step can be
regrouped exactly:

    sum_t L_j[t] F_kappa(psi_j eps_ji)[t] = sum_s N_j[s] x_i[s - eff_ji]

with ``M = psi * backward_kappa(L)`` and ``N = backward_alpha(M)`` (both
filters run from the end of the sequence towards its start).  Grouping the
products by lag turns the per-step tensor work into a handful of matrix
products per batch.  Results equal :class:`~delaylearn.online.OnlineLearner`
in binary read mode up to floating-point reassociation.
"""

from __future__ import annotations

import numpy as np

from .config import NetworkConfig
from .dynamics import Drive, NetworkParams
from .kernels import kernel_taps, surrogate_pd
from .online import ALL_PARAMS, BatchResult, EligibilityState, prediction_scores, softmax


def backward_filter(a: np.ndarray, decay: float, axis: int = 1) -> np.ndarray:
    """``out[t] = a[t] + decay * out[t+1]`` along ``axis``."""
    a = np.moveaxis(a, axis, 0)
    out = np.empty_like(a)
    acc = np.zeros_like(a[0])
    for t in range(a.shape[0] - 1, -1, -1):
        acc = a[t] + decay * acc
        out[t] = acc
    return np.moveaxis(out, 0, axis)


def lagged_correlations(n: np.ndarray, x: np.ndarray, lags) -> dict[int, np.ndarray]:
    """``C[c][j, i] = sum_{b,s} n[b, s, j] * x[b, s - c, i]`` for each lag ``c``.

    Frames outside ``[0, T)`` count as zero, so negative lags read ahead.
    """
    T = n.shape[1]
    out = {}
    for c in lags:
        if c >= T or -c >= T:
            out[c] = np.zeros((n.shape[2], x.shape[2]))
        elif c >= 0:
            out[c] = np.tensordot(n[:, c:], x[:, :T - c], axes=([0, 1], [0, 1]))
        else:
            out[c] = np.tensordot(n[:, :T + c], x[:, -c:], axes=([0, 1], [0, 1]))
    return out


def delayed_input_current(x: np.ndarray, w: np.ndarray, eff: np.ndarray) -> np.ndarray:
    """``I[b, t, j] = sum_i w[j, i] * x[b, t - eff[j, i], i]`` for integer offsets."""
    B, T, _ = x.shape
    current = np.zeros((B, T, w.shape[0]))
    for c in np.unique(eff):
        if c >= T:
            continue
        w_c = np.where(eff == c, w, 0.0)
        current[:, c:] += x[:, :T - c] @ w_c.T
    return current


class BatchedLearner:
    """Feedforward counterpart of :class:`~delaylearn.online.OnlineLearner`.

    Same constructor and ``run_batch`` contract, binary reads only.
    """

    def __init__(self, params: NetworkParams, cfg: NetworkConfig, learn=ALL_PARAMS):
        if cfg.recurrent:
            raise ValueError("the batched engine handles feedforward networks only")
        self.params, self.cfg = params, cfg
        available = params.learnable()
        self.learn = tuple(name for name in learn if name in available)
        self.elig = EligibilityState(grads={n: np.zeros_like(available[n]) for n in self.learn})
        if params.d_in is not None and params.d_in.ndim == 1:
            self.elig.axonal.add("d_in")

    def run_batch(self, frames: np.ndarray, labels, lengths=None, record: bool = False) -> BatchResult:
        cfg, params = self.cfg, self.params
        x = np.asarray(frames, dtype=float)
        if x.ndim == 2:
            x = x[None]
        B, T, n_in = x.shape
        if n_in != cfg.n_in:
            raise ValueError(f"frames have {n_in} channels, config expects {cfg.n_in}")
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        if np.any(labels < 0) or np.any(labels >= cfg.n_out):
            raise ValueError(f"labels {labels} invalid for {cfg.n_out} classes")
        lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
        valid = (np.arange(T)[None, :] < lengths[:, None]).astype(float)
        drive = Drive.build(params, cfg)
        eff = np.asarray(drive.geo_in.eff)

        current = delayed_input_current(x, drive.w_in, eff)
        v = np.zeros((B, T, cfg.n_hidden))
        z = np.zeros_like(v)
        v_t = np.zeros((B, cfg.n_hidden))
        z_t = np.zeros_like(v_t)
        for t in range(T):
            v_t = cfg.alpha * v_t + current[:, t] - cfg.v_th * z_t
            z_t = (v_t > cfg.v_th).astype(float)
            v[:, t], z[:, t] = v_t, z_t
        drive_out = z @ params.w_out.T
        y = np.empty((B, T, cfg.n_out))
        y_t = np.zeros((B, cfg.n_out))
        for t in range(T):
            y_t = cfg.kappa * y_t + drive_out[:, t]
            y[:, t] = y_t
        probs = softmax(y)
        rows = np.arange(B)
        loss = -(np.log(probs[rows, :, labels]) * valid).sum(axis=1)
        err = probs.copy()
        err[rows, :, labels] -= 1.0
        err *= valid[..., None]

        learn = set(self.learn)
        grads = self.elig.grads
        if learn:
            dy = backward_filter(err, cfg.kappa)
            if "w_out" in learn:
                grads["w_out"] += np.tensordot(dy, z, axes=([0, 1], [0, 1]))
            m = surrogate_pd(v, cfg.v_th, cfg.gamma_pd) * (dy @ params.b_fb.T)
            n = backward_filter(m, cfg.alpha)
            R = cfg.kernel_radius
            want_d = "d_in" in learn
            lo, hi = (-R, int(eff.max()) + R) if want_d else (0, int(eff.max()))
            needed = range(lo, hi + 1) if want_d else np.unique(eff)
            corr = lagged_correlations(n, x, needed)
            cols = np.arange(n_in)[None, :]
            rows_h = np.arange(cfg.n_hidden)[:, None]
            if "w_in" in learn:
                g = np.zeros_like(grads["w_in"])
                for c in np.unique(eff):
                    sel = eff == c
                    g[sel] = corr[int(c)][sel]
                grads["w_in"] += g * params.mask_in
            if want_d:
                stack = np.stack([corr[c] for c in range(lo, hi + 1)])  # [lags, H, n_in]
                u = np.arange(-R, R + 1)
                idx = eff[..., None] + u - lo  # [H, n_in, U]
                window = stack[idx, rows_h[..., None], cols[..., None]]
                dtaps = kernel_taps(np.asarray(drive.geo_in.frac), R, cfg.sigma, derivative=True)
                g = drive.w_in * (window * dtaps).sum(axis=-1)
                grads["d_in"] += g.sum(axis=0) if "d_in" in self.elig.axonal else g * params.mask_in
        self.elig.n_samples += B
        result = BatchResult(loss, prediction_scores(y, valid))
        if record:
            result.raster, result.readout, result.potentials = z, y, v
        return result


def make_learner(params: NetworkParams, cfg: NetworkConfig, learn=ALL_PARAMS, engine: str = "auto"):
    """Pick the streaming or the batched engine.

    ``"auto"`` uses the batched engine whenever the network is feedforward.
    """
    from .online import OnlineLearner

    if engine == "batched" or (engine == "auto" and not cfg.recurrent):
        return BatchedLearner(params, cfg, learn)
    return OnlineLearner(params, cfg, learn)
