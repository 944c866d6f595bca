"""From-scratch LSTM with constant per-sequence dropout masks.

The network is: ReLU input transform, a single LSTM layer whose gates see a
dropped-out input vector and a dropped-out previous hidden state (one mask
each, shared by all four gates and held fixed over the sequence), and a
scalar linear head.  backward() returns exact analytic gradients computed by
backpropagation through time; tests check every parameter against central
finite differences.

All math is float64.  Matrices are stored (out_features, in_features).
Input-side products have no recurrence, so they are hoisted out of the time
loop into whole-sequence matmuls; only the recurrent half runs per timestep.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Canonical parameter order: defines checkpoint layout and gradient flattening.
PARAM_FIELDS = (
    "w_xx", "b_xx",
    "w_fx", "w_ix", "w_gx", "w_ox",
    "w_fh", "w_ih", "w_gh", "w_oh",
    "b_f", "b_i", "b_g", "b_o",
    "w_hy", "b_y",
)

CHECKPOINT_FORMAT = "damflow-checkpoint"
CHECKPOINT_VERSION = 1


class NumericalOverflowError(Exception):
    """A forward pass produced a non-finite activation."""


@dataclass
class LstmDims:
    d_in_raw: int
    hidden: int
    d_in: int | None = None  # post-transform input width; defaults to d_in_raw

    def __post_init__(self):
        if self.d_in is None:
            self.d_in = self.d_in_raw
        if min(self.d_in_raw, self.hidden, self.d_in) < 1:
            raise ValueError("all dimensions must be positive")


@dataclass
class LstmWeights:
    """All trainable parameters."""

    dims: LstmDims
    w_xx: np.ndarray  # (d_in, d_in_raw)
    b_xx: np.ndarray  # (d_in,)
    w_fx: np.ndarray  # (H, d_in)
    w_ix: np.ndarray
    w_gx: np.ndarray
    w_ox: np.ndarray
    w_fh: np.ndarray  # (H, H)
    w_ih: np.ndarray
    w_gh: np.ndarray
    w_oh: np.ndarray
    b_f: np.ndarray  # (H,)
    b_i: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray
    w_hy: np.ndarray  # (1, H)
    b_y: np.ndarray  # (1,)

    def params(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in PARAM_FIELDS]

    def zeros_like(self) -> "LstmWeights":
        return LstmWeights(
            dims=self.dims,
            **{name: np.zeros_like(getattr(self, name)) for name in PARAM_FIELDS},
        )

    def copy(self) -> "LstmWeights":
        return LstmWeights(
            dims=self.dims,
            **{name: getattr(self, name).copy() for name in PARAM_FIELDS},
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, name).ravel() for name in PARAM_FIELDS])

    def with_flat(self, vector: np.ndarray) -> "LstmWeights":
        out = {}
        offset = 0
        for name in PARAM_FIELDS:
            arr = getattr(self, name)
            n = arr.size
            out[name] = vector[offset:offset + n].reshape(arr.shape).copy()
            offset += n
        if offset != vector.size:
            raise ValueError(f"flat vector has {vector.size} entries, expected {offset}")
        return LstmWeights(dims=self.dims, **out)

    def check_finite(self):
        for name, arr in self.params():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name} contains non-finite values")


@dataclass
class DropoutMasks:
    """Per-sequence constant masks, inverted-scaled: entries are 0 or 1/(1-p).

    mask_x applies to the transformed input vector, mask_h to the previous
    hidden state; each is shared by all four gates and fixed over time.
    Shapes are (B, d_in) and (B, hidden) for a batch of B sequences.
    """

    mask_x: np.ndarray
    mask_h: np.ndarray

    @staticmethod
    def sample(rng: np.random.Generator, p: float, batch: int, d_in: int, hidden: int) -> "DropoutMasks":
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        keep = 1.0 - p
        mx = (rng.random((batch, d_in)) < keep).astype(np.float64) / keep
        mh = (rng.random((batch, hidden)) < keep).astype(np.float64) / keep
        return DropoutMasks(mask_x=mx, mask_h=mh)

    @staticmethod
    def ones(batch: int, d_in: int, hidden: int) -> "DropoutMasks":
        return DropoutMasks(
            mask_x=np.ones((batch, d_in)), mask_h=np.ones((batch, hidden))
        )


@dataclass
class ForwardTrace:
    """Per-timestep activations cached for backpropagation (batched, (B,T,...))."""

    x0: np.ndarray        # (B, T, d_in_raw) raw inputs
    relu_active: np.ndarray  # (B, T, d_in) bool, pre-activation > 0
    x_masked: np.ndarray  # (B, T, d_in) dropped-out transformed inputs
    f: np.ndarray         # (B, T, H)
    i: np.ndarray
    g: np.ndarray
    o: np.ndarray
    s: np.ndarray         # (B, T, H) cell states
    tanh_s: np.ndarray
    h: np.ndarray
    y: np.ndarray         # (B, T)

    @property
    def seq_len(self) -> int:
        return self.x0.shape[1]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Stable branch form via exp(-|z|): the exponent is never positive, so
    # neither branch can overflow.
    e = np.exp(-np.abs(z))
    denom = 1.0 + e
    return np.where(z >= 0, 1.0 / denom, e / denom)


def init_weights(dims: LstmDims, rng_seed: int) -> LstmWeights:
    """Uniform init: gate/recurrent matrices in [-1/sqrt(H), 1/sqrt(H)],
    input transform and head in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases 0."""
    rng = np.random.default_rng(rng_seed)
    h, d_in, d_raw = dims.hidden, dims.d_in, dims.d_in_raw
    gate_scale = 1.0 / math.sqrt(h)

    def uni(scale, shape):
        return rng.uniform(-scale, scale, size=shape)

    return LstmWeights(
        dims=dims,
        w_xx=uni(1.0 / math.sqrt(d_raw), (d_in, d_raw)),
        b_xx=np.zeros(d_in),
        w_fx=uni(gate_scale, (h, d_in)),
        w_ix=uni(gate_scale, (h, d_in)),
        w_gx=uni(gate_scale, (h, d_in)),
        w_ox=uni(gate_scale, (h, d_in)),
        w_fh=uni(gate_scale, (h, h)),
        w_ih=uni(gate_scale, (h, h)),
        w_gh=uni(gate_scale, (h, h)),
        w_oh=uni(gate_scale, (h, h)),
        b_f=np.zeros(h),
        b_i=np.zeros(h),
        b_g=np.zeros(h),
        b_o=np.zeros(h),
        w_hy=uni(1.0 / math.sqrt(h), (1, h)),
        b_y=np.zeros(1),
    )


def _stack_gate_weights(w: LstmWeights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Internal stacking order (f, i, o, g) keeps the three sigmoid gates
    # contiguous so one call covers them.
    wx = np.concatenate([w.w_fx, w.w_ix, w.w_ox, w.w_gx], axis=0)  # (4H, d_in)
    wh = np.concatenate([w.w_fh, w.w_ih, w.w_oh, w.w_gh], axis=0)  # (4H, H)
    b = np.concatenate([w.b_f, w.b_i, w.b_o, w.b_g])  # (4H,)
    return wx, wh, b


def _first_bad_timestep(s_seq: np.ndarray, y: np.ndarray) -> int:
    bad = ~np.all(np.isfinite(s_seq), axis=(0, 2)) | ~np.all(np.isfinite(y), axis=0)
    return int(np.argmax(bad))


def forward_batch(
    weights: LstmWeights,
    masks: DropoutMasks | None,
    raw_inputs: np.ndarray,
) -> tuple[np.ndarray, ForwardTrace]:
    """Run the network over a batch of sequences.

    raw_inputs: (B, T, d_in_raw).  masks=None disables dropout entirely.
    Returns (predictions (B, T), trace).
    """
    x0 = np.ascontiguousarray(raw_inputs, dtype=np.float64)
    if x0.ndim != 3:
        raise ValueError("raw_inputs must be (batch, time, features)")
    batch, t_len, d_raw = x0.shape
    dims = weights.dims
    if d_raw != dims.d_in_raw:
        raise ValueError(f"raw input width {d_raw} != configured {dims.d_in_raw}")
    if t_len < 1:
        raise ValueError("sequence length must be >= 1")
    h_dim = dims.hidden

    if masks is None:
        masks = DropoutMasks.ones(batch, dims.d_in, h_dim)
    if masks.mask_x.shape != (batch, dims.d_in) or masks.mask_h.shape != (batch, h_dim):
        raise ValueError("dropout mask shapes do not match the batch")

    # Overflow is detected by the explicit finiteness check below; silence the
    # interim numpy warnings so the raised error is the single signal.
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward_batch_unguarded(weights, masks, x0, batch, t_len, dims)


def _forward_batch_unguarded(weights, masks, x0, batch, t_len, dims):
    d_raw = dims.d_in_raw
    h_dim = dims.hidden
    # Input transform and the input-side gate products, whole sequence at once.
    a_x = (x0.reshape(batch * t_len, d_raw) @ weights.w_xx.T).reshape(batch, t_len, dims.d_in)
    a_x += weights.b_xx
    relu_active = a_x > 0
    x_masked = np.where(relu_active, a_x, 0.0)
    x_masked *= masks.mask_x[:, None, :]

    wx, wh, b_gates = _stack_gate_weights(weights)
    z_in = (x_masked.reshape(batch * t_len, dims.d_in) @ wx.T).reshape(batch, t_len, 4 * h_dim)
    z_in += b_gates

    f_seq = np.empty((batch, t_len, h_dim))
    i_seq = np.empty_like(f_seq)
    g_seq = np.empty_like(f_seq)
    o_seq = np.empty_like(f_seq)
    s_seq = np.empty_like(f_seq)
    tanh_s_seq = np.empty_like(f_seq)
    h_seq = np.empty_like(f_seq)

    h_prev = np.zeros((batch, h_dim))
    s_prev = np.zeros((batch, h_dim))
    wh_t = wh.T
    mask_h = masks.mask_h
    h3 = 3 * h_dim
    for t in range(t_len):
        z = z_in[:, t] + (h_prev * mask_h) @ wh_t     # (B, 4H)
        fio = _sigmoid(z[:, :h3])
        f = fio[:, :h_dim]
        i = fio[:, h_dim:2 * h_dim]
        o = fio[:, 2 * h_dim:]
        g = np.tanh(z[:, h3:])
        s = f * s_prev + i * g
        ts = np.tanh(s)
        h = ts * o
        f_seq[:, t], i_seq[:, t], g_seq[:, t], o_seq[:, t] = f, i, g, o
        s_seq[:, t], tanh_s_seq[:, t], h_seq[:, t] = s, ts, h
        h_prev, s_prev = h, s

    y = h_seq @ weights.w_hy[0] + weights.b_y[0]      # (B, T)

    # Cheap overflow check: a non-finite cell state persists to the last step,
    # so checking s there (plus all of y, which is small) covers the sequence.
    if not (np.all(np.isfinite(s_seq[:, -1])) and np.all(np.isfinite(y))):
        raise NumericalOverflowError(
            f"non-finite activation at timestep {_first_bad_timestep(s_seq, y)}"
        )

    trace = ForwardTrace(
        x0=x0, relu_active=relu_active, x_masked=x_masked,
        f=f_seq, i=i_seq, g=g_seq, o=o_seq,
        s=s_seq, tanh_s=tanh_s_seq, h=h_seq, y=y,
    )
    return y, trace


def backward_batch(
    trace: ForwardTrace,
    weights: LstmWeights,
    masks: DropoutMasks | None,
    loss_gradient: np.ndarray,
) -> LstmWeights:
    """Exact gradient of the loss w.r.t. every parameter by BPTT.

    loss_gradient: (B, T) of dL/dy; entries for masked (missing-target)
    timesteps must already be zero.  Returns a gradient container shaped like
    the weights.
    """
    dy = np.asarray(loss_gradient, dtype=np.float64)
    if dy.shape != trace.y.shape:
        raise ValueError(f"loss_gradient shape {dy.shape} != predictions shape {trace.y.shape}")
    batch, t_len, h_dim = trace.f.shape
    dims = weights.dims
    if masks is None:
        masks = DropoutMasks.ones(batch, dims.d_in, h_dim)

    wx, wh, _ = _stack_gate_weights(weights)

    # Head gradients, whole sequence at once.
    h_flat = trace.h.reshape(batch * t_len, h_dim)
    dw_hy = dy.reshape(1, -1) @ h_flat                # (1, H)
    db_y = np.array([dy.sum()])
    dh_from_y = dy[:, :, None] * weights.w_hy[0]      # (B, T, H)

    # Gate nonlinearity derivatives, whole sequence at once.
    f, i, g, o = trace.f, trace.i, trace.g, trace.o
    dsig_f = f * (1.0 - f)
    dsig_i = i * (1.0 - i)
    dsig_o = o * (1.0 - o)
    dtanh_g = 1.0 - g * g
    dtanh_s = 1.0 - trace.tanh_s * trace.tanh_s

    dz_seq = np.empty((batch, t_len, 4 * h_dim))
    dh_next = np.zeros((batch, h_dim))
    ds_next = np.zeros((batch, h_dim))
    mask_h = masks.mask_h
    h3 = 3 * h_dim
    for t in range(t_len - 1, -1, -1):
        ts = trace.tanh_s[:, t]
        s_prev = trace.s[:, t - 1] if t > 0 else 0.0

        dh = dh_from_y[:, t] + dh_next
        do = dh * ts
        ds = dh * trace.o[:, t] * dtanh_s[:, t] + ds_next
        ds_next = ds * f[:, t]

        dz = dz_seq[:, t]
        dz[:, :h_dim] = ds * s_prev * dsig_f[:, t]
        dz[:, h_dim:2 * h_dim] = ds * g[:, t] * dsig_i[:, t]
        dz[:, 2 * h_dim:h3] = do * dsig_o[:, t]
        dz[:, h3:] = ds * i[:, t] * dtanh_g[:, t]

        dh_next = (dz @ wh) * mask_h

    # Dropped-out h(t-1) as the gates saw it, reconstructed vectorized.
    h_prev_masked = np.empty_like(trace.h)
    h_prev_masked[:, 0] = 0.0
    np.multiply(trace.h[:, :-1], mask_h[:, None, :], out=h_prev_masked[:, 1:])

    dz_flat = dz_seq.reshape(batch * t_len, 4 * h_dim)
    dwx = dz_flat.T @ trace.x_masked.reshape(batch * t_len, dims.d_in)   # (4H, d_in)
    dwh = dz_flat.T @ h_prev_masked.reshape(batch * t_len, h_dim)        # (4H, H)
    db = dz_flat.sum(axis=0)                                             # (4H,)

    dx_masked = (dz_flat @ wx).reshape(batch, t_len, dims.d_in)
    dx_masked *= masks.mask_x[:, None, :]
    da = np.where(trace.relu_active, dx_masked, 0.0)
    da_flat = da.reshape(batch * t_len, dims.d_in)
    dw_xx = da_flat.T @ trace.x0.reshape(batch * t_len, dims.d_in_raw)
    db_xx = da_flat.sum(axis=0)

    return LstmWeights(
        dims=dims,
        w_xx=dw_xx, b_xx=db_xx,
        w_fx=dwx[:h_dim], w_ix=dwx[h_dim:2 * h_dim],
        w_gx=dwx[h3:], w_ox=dwx[2 * h_dim:h3],
        w_fh=dwh[:h_dim], w_ih=dwh[h_dim:2 * h_dim],
        w_gh=dwh[h3:], w_oh=dwh[2 * h_dim:h3],
        b_f=db[:h_dim], b_i=db[h_dim:2 * h_dim],
        b_g=db[h3:], b_o=db[2 * h_dim:h3],
        w_hy=dw_hy, b_y=db_y,
    )


def forward(
    weights: LstmWeights,
    masks: DropoutMasks | None,
    raw_inputs: np.ndarray,
) -> tuple[np.ndarray, ForwardTrace]:
    """Single-sequence forward: raw_inputs (T, d_in_raw) -> (predictions (T,), trace)."""
    x0 = np.asarray(raw_inputs, dtype=np.float64)
    if x0.ndim != 2:
        raise ValueError("raw_inputs must be (time, features)")
    if masks is not None and masks.mask_x.ndim == 1:
        masks = DropoutMasks(mask_x=masks.mask_x[None, :], mask_h=masks.mask_h[None, :])
    y, trace = forward_batch(weights, masks, x0[None])
    return y[0], trace


def backward(
    trace: ForwardTrace,
    weights: LstmWeights,
    masks: DropoutMasks | None,
    loss_gradient: np.ndarray,
) -> LstmWeights:
    """Single-sequence backward: loss_gradient (T,) -> parameter gradients."""
    dy = np.asarray(loss_gradient, dtype=np.float64)
    if dy.ndim == 1:
        dy = dy[None]
    if masks is not None and masks.mask_x.ndim == 1:
        masks = DropoutMasks(mask_x=masks.mask_x[None, :], mask_h=masks.mask_h[None, :])
    return backward_batch(trace, weights, masks, dy)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(weights: LstmWeights, path: str | Path, seed: int | None = None) -> None:
    """Write a versioned JSON checkpoint; floats round-trip bit-exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": {
            "d_in_raw": weights.dims.d_in_raw,
            "hidden": weights.dims.hidden,
            "d_in": weights.dims.d_in,
        },
        "seed": seed,
        "params": {name: arr.ravel().tolist() for name, arr in weights.params()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")), encoding="utf-8")
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[LstmWeights, int | None]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    dims = LstmDims(**doc["dims"])
    template = init_weights(dims, rng_seed=0).zeros_like()
    fields = {}
    for name, arr in template.params():
        flat = np.array(doc["params"][name], dtype=np.float64)
        if flat.size != arr.size:
            raise ValueError(f"{path}: parameter {name} has wrong size")
        fields[name] = flat.reshape(arr.shape)
    return LstmWeights(dims=dims, **fields), doc.get("seed")
