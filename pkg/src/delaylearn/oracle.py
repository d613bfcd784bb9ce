"""Reference gradients for checking the online rules.

Everything here works on one sample with whole-sequence arrays and evaluates
the Gaussian kernel from explicit spike times, so it shares no code path with
the ring-buffer learner beyond the kernel formulas themselves.

Two oracles are provided:

* :func:`bptt_grad` -- reverse-mode differentiation of the summed
  cross-entropy through the unrolled, kernel-smoothed network, using the
  surrogate derivative for every spike.
* :func:`finite_diff_grad` -- central differences of the same loss.  Binary
  spikes make the loss piecewise constant, so the perturbed runs replace each
  spike by ``H(v0) + S(v) - S(v0)``, where ``v0`` is the unperturbed potential
  and ``S`` the antiderivative of the surrogate.  The value is unchanged at the
  base point and its slope in ``v`` is exactly the surrogate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import NetworkConfig
from .dynamics import NetworkParams, round_half_away
from .kernels import gauss_kernel, gauss_kernel_ddelay, surrogate_pd, surrogate_primitive
from .online import softmax


@dataclass
class Tape:
    """Intermediate states of one smoothed forward pass."""

    x: np.ndarray  # [T, n_in]
    label: int
    x_read: np.ndarray  # [T, H, n_in]  presynaptic input seen by each synapse
    x_dread: np.ndarray  # [T, H, n_in]  derivative of x_read w.r.t. the synapse's shift
    v: np.ndarray  # [T, H]
    z: np.ndarray  # [T, H]
    y: np.ndarray  # [T, K]
    p: np.ndarray  # [T, K]
    loss: float
    z_read: np.ndarray | None = None  # [T, H, H]
    z_dread: np.ndarray | None = None
    z_coef: np.ndarray | None = None  # [T, H, H, T] weight of z_k[tau] in z_read[t, j, k]


def _shifts(d, n_post, n_src, half):
    """Continuous shift, rounded offset and group flag for one delay array (or ``None``)."""
    if d is None:
        return None, None
    d = np.asarray(d, dtype=float)
    rounded = round_half_away(np.clip(d, -half, half))
    shift = np.broadcast_to(d + half, (n_post, n_src))
    eff = np.broadcast_to(rounded + half, (n_post, n_src)).astype(int)
    return shift, eff


def _input_reads(x, shift, eff, radius, sigma, n_post):
    T, n_in = x.shape
    if shift is None:
        read = np.broadcast_to(x[:, None, :], (T, n_post, n_in)).copy()
        return read, np.zeros_like(read)
    read = np.zeros((T, n_post, n_in))
    dread = np.zeros((T, n_post, n_in))
    t = np.arange(T, dtype=float)[:, None]
    for i in range(n_in):
        tk = np.flatnonzero(x[:, i])
        if tk.size == 0:
            continue
        lag = t - tk[None, :]  # [T, K]
        for j in range(n_post):
            inside = np.abs(lag - eff[j, i]) <= radius
            read[:, j, i] = (gauss_kernel(lag, 0.0, shift[j, i], sigma) * inside).sum(axis=1)
            dread[:, j, i] = (gauss_kernel_ddelay(lag, 0.0, shift[j, i], sigma) * inside).sum(axis=1)
    return read, dread


def _recurrent_coefficients(T, H, shift, eff, radius, sigma):
    """Weight of ``z_k[tau]`` in the recurrent read of synapse ``(j, k)`` at step ``t``.

    Spikes are read one step late, so the lag is ``t - 1 - tau``.  Only the
    causal part of the kernel window exists, i.e. ``tau <= t - 1``.
    """
    t = np.arange(T)[:, None, None, None]
    tau = np.arange(T)[None, None, None, :]
    lag = (t - 1 - tau).astype(float)
    causal = lag >= 0
    if shift is None:
        coef = (lag == 0).astype(float) * np.ones((1, H, H, 1))
        return coef, np.zeros_like(coef)
    s = shift[None, :, :, None]
    inside = causal & (np.abs(lag - eff[None, :, :, None]) <= radius)
    coef = gauss_kernel(lag, 0.0, s, sigma) * inside
    dcoef = gauss_kernel_ddelay(lag, 0.0, s, sigma) * inside
    return coef, dcoef


def _run(x, label, params: NetworkParams, cfg: NetworkConfig, anchor=None, detach_reset=True):
    """Smoothed forward pass; ``anchor`` switches spikes to the soft form used for finite differences."""
    x = np.asarray(x, dtype=float)
    T = x.shape[0]
    H, K = cfg.n_hidden, cfg.n_out
    half, R, sigma = cfg.d_half, cfg.kernel_radius, cfg.sigma
    alpha, kappa, v_th = cfg.alpha, cfg.kappa, cfg.v_th
    w_in = params.w_in * params.mask_in
    shift_in, eff_in = _shifts(params.d_in, H, cfg.n_in, half)
    x_read, x_dread = _input_reads(x, shift_in, eff_in, R, sigma, H)
    rec = cfg.recurrent
    if rec:
        w_rec = params.w_rec * params.mask_rec
        shift_rec, eff_rec = _shifts(params.d_rec, H, H, half)
        coef, dcoef = _recurrent_coefficients(T, H, shift_rec, eff_rec, R, sigma)
        z_read = np.zeros((T, H, H))
        z_dread = np.zeros((T, H, H))
    v = np.zeros((T, H))
    z = np.zeros((T, H))
    y = np.zeros((T, K))
    v_prev = np.zeros(H)
    z_prev = np.zeros(H)
    reset_prev = np.zeros(H)
    y_prev = np.zeros(K)
    for t in range(T):
        current = (w_in * x_read[t]).sum(axis=1)
        if rec:
            z_read[t] = np.einsum("jks,sk->jk", coef[t, :, :, :t], z[:t])
            z_dread[t] = np.einsum("jks,sk->jk", dcoef[t, :, :, :t], z[:t])
            current = current + (w_rec * z_read[t]).sum(axis=1)
        v[t] = alpha * v_prev + current - v_th * (reset_prev if detach_reset else z_prev)
        if anchor is None:
            z[t] = (v[t] > v_th).astype(float)
            hard = z[t]
        else:
            hard = (anchor[t] > v_th).astype(float)
            z[t] = hard + surrogate_primitive(v[t], v_th, cfg.gamma_pd) - surrogate_primitive(anchor[t], v_th, cfg.gamma_pd)
        y[t] = kappa * y_prev + params.w_out @ z[t]
        v_prev, z_prev, reset_prev, y_prev = v[t], z[t], hard, y[t]
    p = softmax(y) if T else np.zeros((0, K))
    loss = float(-np.log(p[:, label]).sum()) if T else 0.0
    tape = Tape(x, int(label), x_read, x_dread, v, z, y, p, loss)
    if rec:
        tape.z_read, tape.z_dread, tape.z_coef = z_read, z_dread, coef
    return tape


def smoothed_forward(sample, params: NetworkParams, cfg: NetworkConfig, label=None):
    """Forward pass with every delayed read replaced by the Gaussian kernel.

    Args:
        sample: ``DenseSample`` or frames ``[T, n_in]`` (then ``label`` is required).

    Returns:
        ``(loss, tape)``.
    """
    frames = getattr(sample, "frames", sample)
    label = getattr(sample, "label", label)
    if label is None:
        raise ValueError("label required")
    tape = _run(frames, label, params, cfg)
    return tape.loss, tape


def bptt_grad(tape: Tape, params: NetworkParams, cfg: NetworkConfig, detach_reset: bool = True) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of the summed cross-entropy on ``tape``."""
    T, H = tape.v.shape
    alpha, kappa, v_th = cfg.alpha, cfg.kappa, cfg.v_th
    w_in = params.w_in * params.mask_in
    target = np.zeros(cfg.n_out)
    target[tape.label] = 1.0
    psi = surrogate_pd(tape.v, v_th, cfg.gamma_pd)
    g = {"w_in": np.zeros_like(w_in), "w_out": np.zeros_like(params.w_out)}
    g_din = np.zeros((H, cfg.n_in))
    rec = cfg.recurrent
    if rec:
        w_rec = params.w_rec * params.mask_rec
        g["w_rec"] = np.zeros((H, H))
        g_drec = np.zeros((H, H))
    dz_rec = np.zeros((T, H))
    dy_next = np.zeros(cfg.n_out)
    dv_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        dy = (tape.p[t] - target) + kappa * dy_next
        g["w_out"] += np.outer(dy, tape.z[t])
        dz = params.w_out.T @ dy + dz_rec[t]
        if not detach_reset:
            dz = dz - v_th * dv_next
        dv = psi[t] * dz + alpha * dv_next
        g["w_in"] += dv[:, None] * tape.x_read[t]
        g_din += dv[:, None] * w_in * tape.x_dread[t]
        if rec:
            g["w_rec"] += dv[:, None] * tape.z_read[t]
            g_drec += dv[:, None] * w_rec * tape.z_dread[t]
            dz_rec += np.einsum("j,jk,jks->sk", dv, w_rec, tape.z_coef[t])
        dy_next, dv_next = dy, dv
    g["w_in"] *= params.mask_in
    if params.d_in is not None:
        g["d_in"] = g_din.sum(axis=0) if params.d_in.ndim == 1 else g_din * params.mask_in
    if rec:
        g["w_rec"] *= params.mask_rec
        if params.d_rec is not None:
            g["d_rec"] = g_drec.sum(axis=0) if params.d_rec.ndim == 1 else g_drec * params.mask_rec
    return g


def unmasked_indices(params: NetworkParams, name: str) -> list[tuple[int, ...]]:
    arr = getattr(params, name)
    mask = None
    if arr.ndim == 2 and name in ("w_in", "d_in"):
        mask = params.mask_in
    elif arr.ndim == 2 and name in ("w_rec", "d_rec"):
        mask = params.mask_rec
    if mask is None:
        return [tuple(int(i) for i in idx) for idx in np.ndindex(arr.shape)]
    return [tuple(int(i) for i in idx) for idx in np.argwhere(mask > 0)]


def _piece(v, v_th):
    return np.digitize(v, [0.0, v_th, 2.0 * v_th])


def central_difference(f, theta: float, h: float) -> float:
    """``(f(theta + h) - f(theta - h)) / (2h)``."""
    return (f(theta + h) - f(theta - h)) / (2.0 * h)


def finite_diff_grad(sample, params: NetworkParams, cfg: NetworkConfig, param_selector=None,
                     h: float = 1e-3, label=None, detach_reset: bool = True):
    """Central-difference gradient estimates.

    Args:
        param_selector: ``None`` for every unmasked learnable parameter, a list
            of parameter names, or a list of ``(name, index)`` pairs.
        h: perturbation size.

    Returns:
        ``(grads, smooth)``: dicts of arrays keyed by parameter name.  Entries
        not selected are NaN.  ``smooth`` is False where the perturbation moved
        a membrane potential across a kink of the surrogate or a delay across a
        rounding boundary, i.e. where the estimate is not expected to be
        accurate.
    """
    if not h > 0:
        raise ValueError("h must be > 0")
    frames = getattr(sample, "frames", sample)
    label = getattr(sample, "label", label)
    base = _run(frames, label, params, cfg, detach_reset=detach_reset)
    learnable = params.learnable()
    if param_selector is None:
        param_selector = list(learnable)
    pairs = []
    for item in param_selector:
        if isinstance(item, str):
            pairs.extend((item, idx) for idx in unmasked_indices(params, item))
        else:
            pairs.append((item[0], tuple(item[1])))
    grads = {name: np.full(arr.shape, np.nan) for name, arr in learnable.items()}
    smooth = {name: np.ones(arr.shape, dtype=bool) for name, arr in learnable.items()}
    half = cfg.d_half
    for name, idx in pairs:
        runs = {}

        def loss_at(value, name=name, idx=idx):
            p = params.copy()
            getattr(p, name)[idx] = value
            runs[value] = _run(frames, label, p, cfg, anchor=base.v, detach_reset=detach_reset)
            return runs[value].loss

        theta = float(getattr(params, name)[idx])
        grads[name][idx] = central_difference(loss_at, theta, h)
        runs = list(runs.values())
        ok = np.array_equal(_piece(runs[0].v, cfg.v_th), _piece(runs[1].v, cfg.v_th))
        if name.startswith("d_"):
            d = getattr(params, name)[idx]
            ok &= round_half_away(min(d + h, half)) == round_half_away(max(d - h, -half))
            ok &= abs(d) + h <= half
        smooth[name][idx] = bool(ok)
    return grads, smooth


@dataclass
class GroupStats:
    cosine: float
    max_rel: float
    mean_rel: float
    count: int
    nonsmooth: int = 0


@dataclass
class GradReport:
    groups: dict[str, GroupStats]
    rows: list[tuple[str, float, float, float, float]]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["param", "online", "oracle", "abs_err", "rel_err"])
            for row in self.rows:
                writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def cosine(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def compare_grads(online: dict, oracle: dict, params: NetworkParams, names=None, smooth=None) -> GradReport:
    """Per-group agreement between two gradient dicts over unmasked entries.

    Relative error is ``|a - b| / max(|a|, |b|, 1e-9 * max|b|)`` so entries that
    are zero up to rounding in both do not dominate.  Entries flagged
    non-smooth are listed in the rows but left out of the statistics.
    """
    names = [n for n in (names or online) if n in oracle and n in online]
    groups, rows = {}, []
    for name in names:
        idx = unmasked_indices(params, name)
        a = np.array([online[name][i] for i in idx])
        b = np.array([oracle[name][i] for i in idx])
        ok = np.array([True if smooth is None else bool(smooth[name][i]) for i in idx], dtype=bool)
        floor = 1e-9 * max(np.max(np.abs(b[ok]), initial=0.0), 1e-300)
        abs_err = np.abs(a - b)
        rel = abs_err / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        for i, ai, bi, ae, re in zip(idx, a, b, abs_err, rel):
            rows.append((f"{name}[{','.join(map(str, i))}]", ai, bi, ae, re))
        groups[name] = GroupStats(
            cosine=cosine(a[ok], b[ok]),
            max_rel=float(rel[ok].max()) if ok.any() else 0.0,
            mean_rel=float(rel[ok].mean()) if ok.any() else 0.0,
            count=len(idx),
            nonsmooth=int((~ok).sum()),
        )
    return GradReport(groups, rows)
