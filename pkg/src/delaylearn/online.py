"""Three-factor online learning of weights and delays.

Every learnable parameter keeps an eligibility vector ``eps`` (the
alpha-filtered presynaptic drive), an eligibility trace ``e = psi_j * eps``
and a kappa-filtered copy ``F(e)``.  The gradient contribution at each step is
``L_j * F(e)``, with the learning signal ``L = B (softmax(y) - target)``.

Delays are differentiated through a Gaussian stand-in for each presynaptic
spike: the drive of a delay parameter is ``W_ji * sum_k G'(t - t_k - shift)``
over the spikes within ``±ceil(3 sigma)`` steps of the delayed arrival.  The
input history is therefore read with a lookahead of that radius, and the
recurrent history is truncated to the causal part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import NetworkConfig
from .dynamics import DelayGeometry, DelayLine, Drive, NetworkParams, integrate, synaptic_current
from .kernels import kernel_taps, surrogate_pd

WEIGHT_GROUPS = {"in": "w_in", "rec": "w_rec"}
DELAY_GROUPS = {"in": "d_in", "rec": "d_rec"}
ALL_PARAMS = ("w_in", "w_rec", "w_out", "d_in", "d_rec")


class TrainingError(RuntimeError):
    """Numerical failure during learning (non-finite gradient or loss)."""


def softmax(y: np.ndarray) -> np.ndarray:
    e = np.exp(y - y.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class LearningSignal:
    l: np.ndarray  # [B, n_hidden]
    out_err: np.ndarray  # [B, n_out], softmax minus one-hot target
    probs: np.ndarray  # [B, n_out]


def learning_signal(y: np.ndarray, label, params: NetworkParams) -> LearningSignal:
    """Top-down signal from the per-step cross-entropy of ``softmax(y)``."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    labels = np.atleast_1d(np.asarray(label))
    K = y.shape[-1]
    if labels.shape[0] != y.shape[0] or np.any(labels < 0) or np.any(labels >= K):
        raise ValueError(f"label {label!r} invalid for {K} classes")
    probs = softmax(y)
    err = probs.copy()
    err[np.arange(y.shape[0]), labels] -= 1.0
    return LearningSignal(err @ params.b_fb.T, err, probs)


@dataclass
class EligibilityState:
    """Traces per connection group and gradient accumulators per parameter.

    ``eps`` / ``filt`` are keyed by parameter name (``w_in``, ``d_in``, ...);
    ``filt["w_out"]`` holds the kappa-filtered hidden spikes that serve as the
    readout eligibility.  Axonal delay groups are listed in ``axonal`` and
    have their gradients summed over postsynaptic neurons.
    """

    eps: dict[str, np.ndarray] = field(default_factory=dict)
    filt: dict[str, np.ndarray] = field(default_factory=dict)
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    axonal: set[str] = field(default_factory=set)
    pd: np.ndarray | None = None
    n_samples: int = 0

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[:] = 0.0
        self.n_samples = 0

    def reset_traces(self) -> None:
        self.eps.clear()
        self.filt.clear()
        self.pd = None


def weight_eligibility_step(elig: EligibilityState, name: str, delayed_pre: np.ndarray,
                            pd: np.ndarray, alpha: float, kappa: float) -> np.ndarray:
    """``eps <- alpha*eps + pre``, ``e = pd_j * eps``, ``F <- kappa*F + e``; returns ``e``.

    ``delayed_pre`` is ``[B, n]`` when every postsynaptic neuron sees the same
    presynaptic train and ``[B, H, n]`` otherwise.
    """
    eps = elig.eps.get(name)
    elig.eps[name] = delayed_pre.copy() if eps is None else alpha * eps + delayed_pre
    eps = elig.eps[name]
    e = pd[:, :, None] * (eps[:, None, :] if eps.ndim == 2 else eps)
    filt = elig.filt.get(name)
    elig.filt[name] = e if filt is None else kappa * filt + e
    return e


def delay_drive(window: np.ndarray, dtaps: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``dv_j/dD_ji = W_ji * sum_u G'(u - frac_ji) * spike[t - eff_ji - u]``.

    ``window`` holds the presynaptic history at lags ``eff + u``: ``[B, n, U]``
    for per-source delays (``dtaps`` ``[n, U]``) or ``[B, H, n, U]`` per synapse.
    """
    local = np.einsum("...u,...u->...", window, dtaps)
    return w * (local[:, None, :] if local.ndim == 2 else local)


def delay_eligibility_step(elig: EligibilityState, name: str, dv_dd: np.ndarray,
                           pd: np.ndarray, alpha: float, kappa: float) -> np.ndarray:
    eps = elig.eps.get(name)
    elig.eps[name] = dv_dd.copy() if eps is None else alpha * eps + dv_dd
    e = pd[:, :, None] * elig.eps[name]
    filt = elig.filt.get(name)
    elig.filt[name] = e if filt is None else kappa * filt + e
    return e


def accumulate_gradients(elig: EligibilityState, signal: LearningSignal) -> None:
    """``grad += L_j * F(e)`` for every traced parameter (summed over the batch)."""
    for name, filt in elig.filt.items():
        if name == "w_out":
            elig.grads[name] += signal.out_err.T @ filt
            continue
        g = np.einsum("bj,bji->ji", signal.l, filt)
        if name in elig.axonal:
            g = g.sum(axis=0)
        elig.grads[name] += g


class SGD:
    def __init__(self):
        self.state: dict[str, np.ndarray] = {}

    def step(self, name: str, param: np.ndarray, grad: np.ndarray, lr: float) -> None:
        param -= lr * grad

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        pass


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def step(self, name: str, param: np.ndarray, grad: np.ndarray, lr: float) -> None:
        m = self.m.setdefault(name, np.zeros_like(param))
        v = self.v.setdefault(name, np.zeros_like(param))
        t = self.t[name] = self.t.get(name, 0) + 1
        m *= self.beta1
        m += (1 - self.beta1) * grad
        v *= self.beta2
        v += (1 - self.beta2) * grad**2
        m_hat = m / (1 - self.beta1**t)
        v_hat = v / (1 - self.beta2**t)
        param -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"adam_m.{name}"] = self.m[name]
            out[f"adam_v.{name}"] = self.v[name]
            out[f"adam_t.{name}"] = np.array([self.t[name]], dtype=float)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for key, arr in arrays.items():
            kind, name = key.split(".", 1)
            if kind == "adam_m":
                self.m[name] = arr.copy()
            elif kind == "adam_v":
                self.v[name] = arr.copy()
            elif kind == "adam_t":
                self.t[name] = int(arr[0])


def make_optimizer(cfg: NetworkConfig):
    return Adam() if cfg.optimizer == "adam" else SGD()


def apply_updates(params: NetworkParams, elig: EligibilityState, cfg: NetworkConfig,
                  optimizer=None, learn=None) -> NetworkParams:
    """One optimizer step on the batch-mean gradients, in place.

    Delays are clamped to the delay range, masked synapses stay inert, the
    symmetric feedback matrix is refreshed and the accumulators are zeroed.
    """
    optimizer = optimizer or SGD()
    n = max(elig.n_samples, 1)
    names = [k for k in elig.grads if learn is None or k in learn]
    for name in names:
        if not np.all(np.isfinite(elig.grads[name])):
            bad = np.argwhere(~np.isfinite(elig.grads[name]))[0]
            raise TrainingError(f"non-finite gradient for {name} at index {tuple(int(i) for i in bad)}")
    half = cfg.d_half
    for name in names:
        param = getattr(params, name)
        grad = elig.grads[name] / n
        mask = {"w_in": params.mask_in, "w_rec": params.mask_rec}.get(name)
        if mask is None and name in ("d_in", "d_rec") and param.ndim == 2:
            mask = params.mask_in if name == "d_in" else params.mask_rec
        if mask is not None:
            grad = grad * mask
        optimizer.step(name, param, grad, cfg.lr_d if name.startswith("d_") else cfg.lr_w)
        if name.startswith("d_"):
            np.clip(param, -half, half, out=param)
        if mask is not None:
            param *= mask
    if cfg.feedback == "symmetric":
        params.b_fb = params.w_out.T.copy()
    elig.zero_grads()
    return params


@dataclass
class _Reader:
    """Delayed read of one connection group from its history ring."""

    line: DelayLine
    geo: DelayGeometry
    lag0: int  # lag of "no delay" in the ring (lookahead for input, 0 for recurrent)
    w: np.ndarray
    taps: np.ndarray | None = None  # G(u - frac), invalid (acausal) taps zeroed
    dtaps: np.ndarray | None = None  # G'(u - frac)
    lags: np.ndarray | None = None

    @classmethod
    def build(cls, line, geo, lag0, w, radius, sigma, smoothed, differentiate, delayed):
        reader = cls(line, geo, lag0, w)
        if delayed and (smoothed or differentiate):
            eff = geo.eff[0] if geo.per_source else geo.eff
            frac = geo.frac[0] if geo.per_source else geo.frac
            u = np.arange(-radius, radius + 1)
            lags = eff[..., None] + lag0 + u
            valid = lags >= 0
            reader.lags = np.maximum(lags, 0)
            if smoothed:
                reader.taps = kernel_taps(frac, radius, sigma) * valid
            if differentiate:
                reader.dtaps = kernel_taps(frac, radius, sigma, derivative=True) * valid
        return reader

    def binary(self) -> np.ndarray:
        if not self.geo.eff.any():
            return self.line.tap(self.lag0)
        eff = self.geo.eff[0] if self.geo.per_source else self.geo.eff
        return self.line.tap(eff + self.lag0)

    def window(self) -> np.ndarray:
        return self.line.tap_window(self.lags)


@dataclass
class BatchResult:
    loss: np.ndarray  # [B] summed cross-entropy over valid steps
    scores: dict[str, np.ndarray]  # prediction scores per rule, each [B, n_out]
    raster: np.ndarray | None = None
    readout: np.ndarray | None = None
    potentials: np.ndarray | None = None


def prediction_scores(readout: np.ndarray, valid: np.ndarray) -> dict[str, np.ndarray]:
    """Scores for each prediction rule from a readout trajectory ``[B, T, K]``."""
    p = softmax(readout) * valid[..., None]
    last = np.maximum(valid.sum(axis=1).astype(int) - 1, 0)
    return {
        "sum_softmax": p.sum(axis=1),
        "final": readout[np.arange(readout.shape[0]), last],
        "max": p.max(axis=1),
    }


class OnlineLearner:
    """Streams a batch through the network step by step while accumulating gradients.

    Args:
        params: network parameters (read, not modified).
        cfg: network configuration.
        learn: names of parameters to accumulate gradients for.
        read: ``"binary"`` uses rounded delays in the forward pass;
            ``"smoothed"`` replaces every delayed read with the Gaussian
            kernel (used to compare against exact gradients).
        trace_decay: override of the eligibility decay, for mutation tests.
    """

    def __init__(self, params: NetworkParams, cfg: NetworkConfig, learn=ALL_PARAMS,
                 read: str = "binary", trace_decay: float | None = None):
        if read not in ("binary", "smoothed"):
            raise ValueError(f"unknown read mode {read!r}")
        self.params, self.cfg, self.read = params, cfg, read
        available = params.learnable()
        self.learn = tuple(name for name in learn if name in available)
        self.trace_decay = trace_decay
        self.elig = EligibilityState(grads={n: np.zeros_like(available[n]) for n in self.learn})
        for name in ("d_in", "d_rec"):
            d = getattr(params, name)
            if d is not None and d.ndim == 1:
                self.elig.axonal.add(name)

    def run_batch(self, frames: np.ndarray, labels, lengths=None, record: bool = False) -> BatchResult:
        cfg, params = self.cfg, self.params
        frames = np.asarray(frames, dtype=float)
        if frames.ndim == 2:
            frames = frames[None]
        B, T, n_in = frames.shape
        if n_in != cfg.n_in:
            raise ValueError(f"frames have {n_in} channels, config expects {cfg.n_in}")
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
        valid = (np.arange(T)[None, :] < lengths[:, None]).astype(float)
        alpha, kappa = cfg.alpha, cfg.kappa
        ta = alpha if self.trace_decay is None else self.trace_decay
        R, sigma = cfg.kernel_radius, cfg.sigma
        smoothed = self.read == "smoothed"
        drive = Drive.build(params, cfg)
        learn = set(self.learn)
        elig = self.elig
        elig.reset_traces()

        in_delayed = params.d_in is not None
        lookahead = R if in_delayed and (smoothed or "d_in" in learn) else 0
        in_line = DelayLine(cfg.d_max + 2 * lookahead, B, n_in)
        readers = {"in": _Reader.build(in_line, drive.geo_in, lookahead, drive.w_in, R, sigma,
                                       smoothed, "d_in" in learn, in_delayed)}
        rec_line = None
        if cfg.recurrent:
            rec_line = DelayLine(cfg.d_max + R + 1, B, cfg.n_hidden)
            readers["rec"] = _Reader.build(rec_line, drive.geo_rec, 0, drive.w_rec, R, sigma, smoothed,
                                           "d_rec" in learn, params.d_rec is not None)
        for t in range(min(lookahead, T)):
            in_line.push(frames[:, t])

        v = np.zeros((B, cfg.n_hidden))
        z = np.zeros((B, cfg.n_hidden))
        y = np.zeros((B, cfg.n_out))
        loss = np.zeros(B)
        rows = np.arange(B)
        out = np.zeros((B, T, cfg.n_out))
        if record:
            raster, pots = np.zeros((B, T, cfg.n_hidden)), np.zeros((B, T, cfg.n_hidden))

        for t in range(T):
            ahead = t + lookahead
            in_line.push(frames[:, ahead] if ahead < T else 0.0)
            pres, drives = {}, {}
            for g, reader in readers.items():
                win = reader.window() if reader.lags is not None else None
                pres[g] = np.einsum("...u,...u->...", win, reader.taps) if reader.taps is not None else reader.binary()
                if reader.dtaps is not None:
                    drives[g] = delay_drive(win, reader.dtaps, reader.w)
            current = synaptic_current(drive.w_in, pres["in"])
            if cfg.recurrent:
                current = current + synaptic_current(drive.w_rec, pres["rec"])
            v, z = integrate(v, z, current, cfg, alpha)
            y = kappa * y + z @ params.w_out.T
            out[:, t] = y
            psi = surrogate_pd(v, cfg.v_th, cfg.gamma_pd)
            elig.pd = psi
            signal = learning_signal(y, labels, params)
            signal.out_err *= valid[:, t, None]
            signal.l *= valid[:, t, None]
            loss -= np.log(signal.probs[rows, labels]) * valid[:, t]

            for g, wname in WEIGHT_GROUPS.items():
                if wname in learn:
                    weight_eligibility_step(elig, wname, pres[g], psi, ta, kappa)
            for g, dname in DELAY_GROUPS.items():
                if dname in learn and g in drives:
                    delay_eligibility_step(elig, dname, drives[g], psi, ta, kappa)
            if "w_out" in learn:
                prev = elig.filt.get("w_out")
                elig.filt["w_out"] = z.copy() if prev is None else kappa * prev + z
            accumulate_gradients(elig, signal)
            if rec_line is not None:
                rec_line.push(z)
            if record:
                raster[:, t], pots[:, t] = z, v
        for name, mask in (("w_in", params.mask_in), ("w_rec", params.mask_rec),
                           ("d_in", params.mask_in), ("d_rec", params.mask_rec)):
            if name in elig.grads and name not in elig.axonal:
                elig.grads[name] *= mask
        elig.n_samples += B
        result = BatchResult(loss, prediction_scores(out, valid))
        if record:
            result.raster, result.readout, result.potentials = raster, out, pots
        return result
