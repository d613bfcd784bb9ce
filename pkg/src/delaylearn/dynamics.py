"""Discretized LIF / LI dynamics with integer delay lines.

Hidden neurons follow the exact discretization of the leaky integrator::

    v[t] = alpha * v[t-1] + sum_i W_in[j,i] x_i[t - eff_in[j,i]]
                          + sum_k W_rec[j,k] z_k[t - 1 - eff_rec[j,k]]
                          - v_th * z[t-1]
    z[t] = v[t] > v_th

and the readout is a leaky integrator without reset,
``y[t] = kappa * y[t-1] + W_out @ z[t]``.  Delay parameters are real valued;
the forward pass uses their rounded value as an integer buffer offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, NetworkConfig
from .data import gen_sparsity_mask


def decay_factor(tau: float, dt: float) -> float:
    """Per-step decay ``exp(-dt / tau)`` of a leaky integrator."""
    if not (tau > 0 and dt > 0):
        raise ConfigError(f"tau and dt must be positive (tau={tau}, dt={dt})")
    return math.exp(-dt / tau)


def round_half_away(x):
    """Round to nearest integer, ties away from zero (``np.round`` ties to even)."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def effective_delay(d_param, d_max: int):
    """Map a delay parameter to the integer buffer offset used by the forward pass.

    ``-(d_max-1)/2`` means no delay and ``+(d_max-1)/2`` the largest delay of
    ``d_max - 1`` steps.  Works element-wise on arrays.
    """
    half = (d_max - 1) // 2
    d = np.asarray(d_param, dtype=float)
    if np.any(np.abs(d) > half + 1e-12) or not np.all(np.isfinite(d)):
        raise AssertionError(f"delay parameter outside [-{half}, {half}]; clamping failed upstream")
    eff = (round_half_away(d) + half).astype(np.int64)
    return int(eff) if eff.ndim == 0 else eff


@dataclass
class DelayGeometry:
    """Per-synapse integer offset and fractional remainder of one connection group."""

    eff: np.ndarray  # int [n_post, n_src]
    frac: np.ndarray  # float [n_post, n_src], continuous shift minus eff, in [-0.5, 0.5]
    per_source: bool  # True when the offset does not depend on the postsynaptic neuron

    @property
    def max_eff(self) -> int:
        return int(self.eff.max()) if self.eff.size else 0


def delay_geometry(d: np.ndarray | None, n_post: int, n_src: int, d_max: int) -> DelayGeometry:
    if d is None:
        zeros = np.zeros((n_post, n_src))
        return DelayGeometry(zeros.astype(np.int64), zeros, True)
    eff = effective_delay(d, d_max)
    frac = np.asarray(d, dtype=float) - round_half_away(d)
    per_source = d.ndim == 1
    eff = np.broadcast_to(eff, (n_post, n_src))
    frac = np.broadcast_to(frac, (n_post, n_src))
    return DelayGeometry(eff, frac, per_source)


@dataclass
class NetworkParams:
    """Learnable and fixed arrays of one network.

    ``d_in`` / ``d_rec`` are ``None`` when the group has no delays, a matrix
    ``[n_hidden, n_src]`` for synaptic delays and a vector ``[n_src]`` for
    axonal delays.
    """

    w_in: np.ndarray
    w_out: np.ndarray
    b_fb: np.ndarray
    mask_in: np.ndarray
    w_rec: np.ndarray | None = None
    mask_rec: np.ndarray | None = None
    d_in: np.ndarray | None = None
    d_rec: np.ndarray | None = None

    ARRAY_NAMES = ("w_in", "w_rec", "w_out", "b_fb", "d_in", "d_rec", "mask_in", "mask_rec")

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.ARRAY_NAMES if getattr(self, k) is not None}

    def copy(self) -> "NetworkParams":
        return NetworkParams(**{k: v.copy() for k, v in self.arrays().items()})

    def learnable(self) -> dict[str, np.ndarray]:
        out = {"w_in": self.w_in, "w_out": self.w_out}
        for name in ("w_rec", "d_in", "d_rec"):
            if getattr(self, name) is not None:
                out[name] = getattr(self, name)
        return out

    def check(self, cfg: NetworkConfig) -> None:
        """Raise ``ValueError`` if any array shape disagrees with ``cfg``."""
        H, I, K = cfg.n_hidden, cfg.n_in, cfg.n_out
        expect = {"w_in": (H, I), "w_out": (K, H), "b_fb": (H, K), "mask_in": (H, I)}
        if cfg.recurrent:
            expect.update(w_rec=(H, H), mask_rec=(H, H))
        for name, mode, src in (("d_in", cfg.delay_in, I), ("d_rec", cfg.delay_rec, H)):
            if mode == "synaptic":
                expect[name] = (H, src)
            elif mode == "axonal":
                expect[name] = (src,)
        for name, shape in expect.items():
            arr = getattr(self, name)
            if arr is None or arr.shape != shape:
                got = None if arr is None else arr.shape
                raise ValueError(f"{name}: expected shape {shape}, got {got}")
        for name in ("w_rec", "d_in", "d_rec"):
            if name not in expect and getattr(self, name) is not None:
                raise ValueError(f"{name} present but not enabled by the config")


def _delay_array(mode: str, n_post: int, n_src: int, cfg: NetworkConfig, rng) -> np.ndarray | None:
    if mode == "none":
        return None
    shape = (n_post, n_src) if mode == "synaptic" else (n_src,)
    half = cfg.d_half
    if cfg.delay_init == "zero":
        return np.full(shape, -float(half))
    return rng.uniform(-half, half, size=shape)


def init_params(cfg: NetworkConfig, seed: int | None = None) -> NetworkParams:
    """Random initial parameters.

    Weights are uniform in ``±w_scale/sqrt(fan_in)`` with the fan-in counted
    over unmasked synapses.  Delays are uniform over the clamp range, or set to
    "no delay" when ``cfg.delay_init == "zero"``.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    H, I, K = cfg.n_hidden, cfg.n_in, cfg.n_out
    mask_seed = int(rng.integers(2**31))
    mask_in = gen_sparsity_mask(H, I, cfg.density, mask_seed)

    def uniform(shape, fan_in):
        bound = cfg.w_scale / math.sqrt(max(1.0, fan_in))
        return rng.uniform(-bound, bound, size=shape)

    w_in = uniform((H, I), cfg.density * I) * mask_in
    w_rec = mask_rec = None
    if cfg.recurrent:
        mask_rec = gen_sparsity_mask(H, H, cfg.density, mask_seed + 1)
        w_rec = uniform((H, H), cfg.density * H) * mask_rec
    w_out = uniform((K, H), H)
    d_in = _delay_array(cfg.delay_in, H, I, cfg, rng)
    d_rec = _delay_array(cfg.delay_rec, H, H, cfg, rng) if cfg.recurrent else None
    if d_in is not None and d_in.ndim == 2:
        d_in = np.where(mask_in > 0, d_in, 0.0)
    if d_rec is not None and d_rec.ndim == 2:
        d_rec = np.where(mask_rec > 0, d_rec, 0.0)
    if cfg.feedback == "random":
        b_fb = uniform((H, K), K)
    else:
        b_fb = w_out.T.copy()
    return NetworkParams(w_in=w_in, w_out=w_out, b_fb=b_fb, mask_in=mask_in,
                         w_rec=w_rec, mask_rec=mask_rec, d_in=d_in, d_rec=d_rec)


class DelayLine:
    """Ring buffer of the most recent frames, one per batch element.

    ``tap(lag)`` returns the frame pushed ``lag`` pushes ago (0 = newest).
    ``lag`` may be a scalar, a per-source vector ``[n]`` or a per-synapse
    matrix ``[n_post, n]``; the result gains a matching leading shape after the
    batch axis.
    """

    def __init__(self, capacity: int, batch: int, width: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.buf = np.zeros((batch, capacity, width))
        self.head = capacity - 1
        self._cols = np.arange(width)

    def push(self, frame: np.ndarray) -> None:
        self.head = (self.head + 1) % self.capacity
        self.buf[:, self.head] = frame

    def tap(self, lag) -> np.ndarray:
        lag = np.asarray(lag)
        if np.any(lag >= self.capacity) or np.any(lag < 0):
            raise IndexError(f"lag outside ring capacity {self.capacity}")
        idx = (self.head - lag) % self.capacity
        if idx.ndim == 0:
            return self.buf[:, int(idx)]
        return self.buf[:, idx, self._cols]

    def tap_window(self, lag: np.ndarray) -> np.ndarray:
        """Gather at lags shaped ``[..., n, U]`` (source axis second to last)."""
        if np.any(lag >= self.capacity) or np.any(lag < 0):
            raise IndexError(f"lag outside ring capacity {self.capacity}")
        idx = (self.head - lag) % self.capacity
        return self.buf[:, idx, self._cols[:, None]]

    def reset(self) -> None:
        self.buf[:] = 0.0
        self.head = self.capacity - 1


@dataclass
class NetworkState:
    v: np.ndarray
    z: np.ndarray
    y: np.ndarray
    in_line: DelayLine
    rec_line: DelayLine | None
    t: int = 0

    @classmethod
    def initial(cls, cfg: NetworkConfig, batch: int = 1) -> "NetworkState":
        rec_line = DelayLine(cfg.d_max + 1, batch, cfg.n_hidden) if cfg.recurrent else None
        return cls(
            v=np.zeros((batch, cfg.n_hidden)),
            z=np.zeros((batch, cfg.n_hidden)),
            y=np.zeros((batch, cfg.n_out)),
            in_line=DelayLine(cfg.d_max, batch, cfg.n_in),
            rec_line=rec_line,
        )


@dataclass
class Drive:
    """Per-group delay geometry plus effective (masked) weights for one forward pass."""

    w_in: np.ndarray
    geo_in: DelayGeometry
    w_rec: np.ndarray | None = None
    geo_rec: DelayGeometry | None = None
    delayed_in: bool = field(init=False)
    delayed_rec: bool = field(init=False)

    def __post_init__(self):
        self.delayed_in = bool(self.geo_in.eff.any())
        self.delayed_rec = self.geo_rec is not None and bool(self.geo_rec.eff.any())

    @classmethod
    def build(cls, params: NetworkParams, cfg: NetworkConfig) -> "Drive":
        H = cfg.n_hidden
        geo_in = delay_geometry(params.d_in, H, cfg.n_in, cfg.d_max)
        if cfg.recurrent:
            geo_rec = delay_geometry(params.d_rec, H, H, cfg.d_max)
            return cls(params.w_in * params.mask_in, geo_in, params.w_rec * params.mask_rec, geo_rec)
        return cls(params.w_in * params.mask_in, geo_in)


def read_input(line: DelayLine, drive: Drive) -> np.ndarray:
    """Delayed presynaptic input frame, ``[B, n_in]`` or ``[B, H, n_in]``."""
    if not drive.delayed_in:
        return line.tap(0)
    if drive.geo_in.per_source:
        return line.tap(drive.geo_in.eff[0])
    return line.tap(drive.geo_in.eff)


def read_recurrent(line: DelayLine, drive: Drive) -> np.ndarray:
    if not drive.delayed_rec:
        return line.tap(0)
    if drive.geo_rec.per_source:
        return line.tap(drive.geo_rec.eff[0])
    return line.tap(drive.geo_rec.eff)


def synaptic_current(w: np.ndarray, pre: np.ndarray) -> np.ndarray:
    """``sum_i w[j,i] pre[.., i]`` for per-source ``[B,n]`` or per-synapse ``[B,H,n]`` input."""
    if pre.ndim == 2:
        return pre @ w.T
    return np.einsum("bji,ji->bj", pre, w)


def integrate(v: np.ndarray, z: np.ndarray, current: np.ndarray, cfg: NetworkConfig, alpha: float):
    """Membrane update with reset by subtraction, then thresholding."""
    v = alpha * v + current - cfg.v_th * z
    z = (v > cfg.v_th).astype(float)
    return v, z


def _as_batch(frame: np.ndarray, width: int, batch: int) -> np.ndarray:
    frame = np.asarray(frame, dtype=float)
    if frame.ndim == 1:
        frame = frame[None, :]
    if frame.shape != (batch, width):
        raise ValueError(f"input frame shape {frame.shape} does not match (batch={batch}, n_in={width})")
    return frame


def lif_step(state: NetworkState, x_frame: np.ndarray, params: NetworkParams,
             cfg: NetworkConfig, drive: Drive | None = None):
    """Advance the hidden layer by one frame.

    Pushes ``x_frame`` into the input delay line, integrates the delayed
    input (and delayed recurrent spikes), subtracts ``v_th`` for every spike
    emitted on the previous step and thresholds.  Mutates ``state`` and returns
    the new ``(v, z)``.
    """
    drive = drive or Drive.build(params, cfg)
    x = _as_batch(x_frame, cfg.n_in, state.v.shape[0])
    state.in_line.push(x)
    current = synaptic_current(drive.w_in, read_input(state.in_line, drive))
    if cfg.recurrent:
        current = current + synaptic_current(drive.w_rec, read_recurrent(state.rec_line, drive))
    v, z = integrate(state.v, state.z, current, cfg, cfg.alpha)
    if state.rec_line is not None:
        state.rec_line.push(z)
    state.v, state.z = v, z
    state.t += 1
    return v, z


def li_readout_step(y: np.ndarray, z: np.ndarray, params: NetworkParams, cfg: NetworkConfig) -> np.ndarray:
    """Leaky-integrator readout: ``kappa * y + W_out @ z``; never resets."""
    return cfg.kappa * y + z @ params.w_out.T


def forward_sample(sample, params: NetworkParams, cfg: NetworkConfig):
    """Run one sample from rest.

    Args:
        sample: a ``DenseSample`` or a binary array ``[T, n_in]``.

    Returns:
        ``(raster [T, n_hidden], readout [T, n_out])``.
    """
    frames = np.asarray(getattr(sample, "frames", sample), dtype=float)
    if frames.ndim != 2 or (frames.shape[0] and frames.shape[1] != cfg.n_in):
        raise ValueError(f"expected frames [T, {cfg.n_in}], got {frames.shape}")
    T = frames.shape[0]
    drive = Drive.build(params, cfg)
    state = NetworkState.initial(cfg)
    raster = np.zeros((T, cfg.n_hidden))
    readout = np.zeros((T, cfg.n_out))
    for t in range(T):
        _, z = lif_step(state, frames[t], params, cfg, drive)
        state.y = li_readout_step(state.y, z, params, cfg)
        raster[t] = z[0]
        readout[t] = state.y[0]
    return raster, readout
