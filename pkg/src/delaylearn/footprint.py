"""Memory accounting under fixed-point quantization.

Counts only raw parameter and state storage.  Index overhead for sparse
connectivity is not included.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .config import NetworkConfig
from .dynamics import NetworkParams


@dataclass
class FootprintRow:
    name: str
    category: str  # "storage" (needed for inference) or "learning" (extra while training)
    count: int
    bits: int

    @property
    def bytes(self) -> int:
        return math.ceil(self.count * self.bits / 8)


def _count(arr, mask=None) -> int:
    if arr is None:
        return 0
    if mask is not None and arr.ndim == 2:
        return int((mask > 0).sum())
    return int(arr.size)


def memory_footprint(params: NetworkParams, cfg: NetworkConfig, q_w: int = 8, q_d: int = 5,
                     q_v: int = 16, learn=("w_in", "w_rec", "w_out", "d_in", "d_rec")) -> list[FootprintRow]:
    """Per-array bit budget.

    Storage: weights at ``q_w`` bits, delays at ``q_d`` bits, membrane and
    readout potentials at ``q_v`` bits, and one bit per slot of the binary
    spike delay lines (``d_max`` input frames, ``d_max + 1`` hidden frames).

    Learning: for every learned parameter an eligibility vector and its
    kappa-filtered trace at ``q_v`` bits each, plus the extra input history
    the delay gradient reads ahead of the delayed arrival (``2 * ceil(3 sigma)``
    frames).
    """
    H, I = cfg.n_hidden, cfg.n_in
    rows = [
        FootprintRow("w_in", "storage", _count(params.w_in, params.mask_in), q_w),
        FootprintRow("w_rec", "storage", _count(params.w_rec, params.mask_rec), q_w),
        FootprintRow("w_out", "storage", _count(params.w_out), q_w),
        FootprintRow("d_in", "storage", _count(params.d_in, params.mask_in), q_d),
        FootprintRow("d_rec", "storage", _count(params.d_rec, params.mask_rec), q_d),
        FootprintRow("potentials", "storage", H + cfg.n_out, q_v),
        FootprintRow("input_ring", "storage", I * cfg.d_max if params.d_in is not None else I, 1),
        FootprintRow("hidden_ring", "storage", H * (cfg.d_max + 1) if cfg.recurrent else 0, 1),
    ]
    traced = 0
    for name in learn:
        arr = getattr(params, name)
        if arr is None:
            continue
        if name == "w_out":
            traced += H  # the readout eligibility is the filtered hidden spike train
            continue
        mask = params.mask_in if name.endswith("_in") else params.mask_rec
        # axonal delays still keep one trace per synapse
        traced += _count(mask if arr.ndim == 1 else arr, mask)
    rows.append(FootprintRow("eligibility", "learning", 2 * traced, q_v))
    lookahead = 2 * cfg.kernel_radius if ("d_in" in learn and params.d_in is not None) else 0
    rows.append(FootprintRow("input_lookahead", "learning", I * lookahead, 1))
    return rows


def footprint_totals(rows: list[FootprintRow]) -> dict[str, int]:
    out = {"storage": 0, "learning": 0}
    for r in rows:
        out[r.category] += r.bytes
    out["total"] = out["storage"] + out["learning"]
    return out
