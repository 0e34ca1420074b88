"""Numpy inference for the recognizer: five causal LSTM layers, each followed by
batch normalization, then a fully-connected layer and a softmax.

Layer numbering used for activation traces: 0 is the (normalized) input,
odd layers 1-9 are LSTM outputs, even layers 2-10 their batch norms, and 11
the fully-connected logits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from phode.audio import N_CHANNELS
from phode.phonemes import N_TOKENS

N_LSTM = 5
N_TRACES = 2 * N_LSTM + 2
BN_EPS = 1e-5
WEIGHTS_MAGIC = b"PHODE1"
ACTIVATION_MAGIC = b"PHACT1"
_HEADER = struct.Struct("<IIII")
_F32 = np.dtype("<f4")


class ModelError(RuntimeError):
    pass


@dataclass
class LSTMWeights:
    w_ih: np.ndarray  # (4H, in), gate order input, forget, cell, output
    w_hh: np.ndarray  # (4H, H)
    bias: np.ndarray  # (4H,)


@dataclass
class BatchNormWeights:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


@dataclass
class ModelWeights:
    lstm: list[LSTMWeights]
    bn: list[BatchNormWeights]
    fc_w: np.ndarray  # (outputs, H)
    fc_b: np.ndarray
    input_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_CHANNELS, np.float32))
    input_std: np.ndarray = field(default_factory=lambda: np.ones(N_CHANNELS, np.float32))

    def __post_init__(self):
        self.validate()

    @property
    def hidden_size(self) -> int:
        return self.lstm[0].w_hh.shape[1]

    @property
    def input_size(self) -> int:
        return self.lstm[0].w_ih.shape[1]

    @property
    def output_size(self) -> int:
        return self.fc_w.shape[0]

    def validate(self) -> None:
        if len(self.lstm) != len(self.bn) or not self.lstm:
            raise ModelError("need one batch-norm layer per LSTM layer")
        H = self.lstm[0].w_hh.shape[1]
        n_in = self.lstm[0].w_ih.shape[1]
        for i, (l, b) in enumerate(zip(self.lstm, self.bn)):
            expect_in = n_in if i == 0 else H
            if l.w_ih.shape != (4 * H, expect_in) or l.w_hh.shape != (4 * H, H) or l.bias.shape != (4 * H,):
                raise ModelError(f"LSTM layer {i} has inconsistent shapes")
            for name in ("gamma", "beta", "running_mean", "running_var"):
                if getattr(b, name).shape != (H,):
                    raise ModelError(f"batch norm {i} {name} must have {H} entries")
            if np.any(b.running_var <= 0):
                raise ModelError(f"batch norm {i} running variance must be positive")
        if self.fc_w.shape[1] != H or self.fc_b.shape != (self.fc_w.shape[0],):
            raise ModelError("output layer shape mismatch")
        if self.input_mean.shape != (n_in,) or self.input_std.shape != (n_in,):
            raise ModelError("input normalization shape mismatch")
        if np.any(self.input_std <= 0):
            raise ModelError("input std must be positive")

    def tensors(self) -> list[np.ndarray]:
        """All parameters in file order."""
        out = [self.input_mean, self.input_std]
        for l, b in zip(self.lstm, self.bn):
            out += [l.w_ih, l.w_hh, l.bias, b.gamma, b.beta, b.running_mean, b.running_var]
        return out + [self.fc_w, self.fc_b]

    def equals(self, other: "ModelWeights") -> bool:
        a, b = self.tensors(), other.tensors()
        return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def _shapes(n_layers: int, H: int, n_in: int, n_out: int) -> list[tuple[int, ...]]:
    shapes = [(n_in,), (n_in,)]
    for i in range(n_layers):
        shapes += [(4 * H, n_in if i == 0 else H), (4 * H, H), (4 * H,), (H,), (H,), (H,), (H,)]
    return shapes + [(n_out, H), (n_out,)]


def _from_tensors(ts: list[np.ndarray], n_layers: int) -> ModelWeights:
    mean, std = ts[0], ts[1]
    lstm, bn = [], []
    for i in range(n_layers):
        w_ih, w_hh, bias, g, b, rm, rv = ts[2 + 7 * i: 9 + 7 * i]
        lstm.append(LSTMWeights(w_ih, w_hh, bias))
        bn.append(BatchNormWeights(g, b, rm, rv))
    return ModelWeights(lstm, bn, ts[-2], ts[-1], mean, std)


def init_weights(hidden_size: int = 500, n_layers: int = N_LSTM, input_size: int = N_CHANNELS,
                 output_size: int = N_TOKENS, seed: int = 0, scale: float | None = None) -> ModelWeights:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) LSTM and output weights; identity batch norms.

    ``scale=0`` gives all-zero weights.
    """
    rng = np.random.default_rng(seed)
    k = 1.0 / np.sqrt(hidden_size) if scale is None else scale

    def u(*shape):
        return rng.uniform(-k, k, shape).astype(np.float32)

    H = hidden_size
    ones, zeros = (lambda: np.ones(H, np.float32)), (lambda: np.zeros(H, np.float32))
    lstm = [LSTMWeights(u(4 * H, input_size if i == 0 else H), u(4 * H, H), u(4 * H))
            for i in range(n_layers)]
    bn = [BatchNormWeights(ones() if k else zeros(), zeros(), zeros(), ones())
          for _ in range(n_layers)]
    return ModelWeights(lstm, bn, u(output_size, H), u(output_size),
                        np.zeros(input_size, np.float32), np.ones(input_size, np.float32))


def save_weights(w: ModelWeights, path: str | Path) -> None:
    """Little-endian: b"PHODE1", uint32 x4 (layers, hidden, inputs, outputs),
    then every tensor of :meth:`ModelWeights.tensors` as row-major float32."""
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(_HEADER.pack(len(w.lstm), w.hidden_size, w.input_size, w.output_size))
        for t in w.tensors():
            fh.write(np.ascontiguousarray(t, dtype=_F32).tobytes())


def load_weights(path: str | Path) -> ModelWeights:
    data = Path(path).read_bytes()
    if data[:len(WEIGHTS_MAGIC)] != WEIGHTS_MAGIC:
        raise ModelError(f"{path}: bad magic, not a weight file")
    off = len(WEIGHTS_MAGIC)
    if len(data) < off + _HEADER.size:
        raise ModelError(f"{path}: truncated header")
    n_layers, H, n_in, n_out = _HEADER.unpack_from(data, off)
    off += _HEADER.size
    shapes = _shapes(n_layers, H, n_in, n_out)
    expected = off + 4 * sum(int(np.prod(s)) for s in shapes)
    if len(data) != expected:
        raise ModelError(f"{path}: size {len(data)} bytes does not match header "
                         f"(layers={n_layers}, hidden={H}, in={n_in}, out={n_out}) -> {expected}")
    ts = []
    for s in shapes:
        n = int(np.prod(s))
        ts.append(np.frombuffer(data, _F32, n, off).reshape(s).astype(np.float32))
        off += 4 * n
    return _from_tensors(ts, n_layers)


def _sigmoid(x):
    return (0.5 * (np.tanh(0.5 * x) + 1.0)).astype(np.float32)


def _rowwise(x: np.ndarray, w_t: np.ndarray, bias: np.ndarray) -> np.ndarray:
    # one vector-matrix product per frame, so frame t never depends on T
    out = np.empty((x.shape[0], w_t.shape[1]), np.float32)
    for t in range(x.shape[0]):
        out[t] = x[t] @ w_t + bias
    return out


def lstm_layer(x: np.ndarray, l: LSTMWeights) -> np.ndarray:
    T = x.shape[0]
    H = l.w_hh.shape[1]
    gates_in = _rowwise(x, np.ascontiguousarray(l.w_ih.T), l.bias)
    h = np.zeros(H, np.float32)
    c = np.zeros(H, np.float32)
    out = np.empty((T, H), np.float32)
    w_hh_t = np.ascontiguousarray(l.w_hh.T)
    for t in range(T):
        g = gates_in[t] + h @ w_hh_t
        i = _sigmoid(g[:H])
        f = _sigmoid(g[H:2 * H])
        cand = np.tanh(g[2 * H:3 * H])
        o = _sigmoid(g[3 * H:])
        c = f * c + i * cand
        h = o * np.tanh(c)
        out[t] = h
    return out


def batch_norm(x: np.ndarray, b: BatchNormWeights) -> np.ndarray:
    """Inference-mode batch norm: a fixed per-unit affine map."""
    scale = (b.gamma / np.sqrt(b.running_var + np.float32(BN_EPS))).astype(np.float32)
    return ((x - b.running_mean) * scale + b.beta).astype(np.float32)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check(values: np.ndarray, layer: int) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        frame = int(np.argmax(bad.any(axis=1)))
        raise ModelError(f"non-finite activation in layer {layer} at frame {frame}")


def forward(x: np.ndarray, w: ModelWeights) -> tuple[list[np.ndarray], np.ndarray]:
    """Run the recognizer on a (T, 64) spectrogram.

    Returns the twelve per-layer activation traces and the (T, outputs)
    posterior. Every output at frame t depends on input frames <= t only.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != w.input_size:
        raise ModelError(f"expected (T, {w.input_size}) input, got {x.shape}")
    h = ((x - w.input_mean) / w.input_std).astype(np.float32)
    _check(h, 0)
    traces = [h]
    for i, (l, b) in enumerate(zip(w.lstm, w.bn)):
        h = lstm_layer(h, l)
        _check(h, 2 * i + 1)
        traces.append(h)
        h = batch_norm(h, b)
        _check(h, 2 * i + 2)
        traces.append(h)
    logits = _rowwise(h, np.ascontiguousarray(w.fc_w.T), w.fc_b)
    _check(logits, len(traces))
    traces.append(logits)
    return traces, softmax(logits)


def save_activations(traces: list[np.ndarray], path: str | Path) -> None:
    """Little-endian: b"PHACT1", uint32 count, then per trace uint32 layer
    index, rows, cols and the float32 matrix."""
    with open(path, "wb") as fh:
        fh.write(ACTIVATION_MAGIC)
        fh.write(struct.pack("<I", len(traces)))
        for k, t in enumerate(traces):
            t = np.ascontiguousarray(t, dtype=_F32)
            fh.write(struct.pack("<III", k, t.shape[0], t.shape[1]))
            fh.write(t.tobytes())


def load_activations(path: str | Path) -> list[np.ndarray]:
    data = Path(path).read_bytes()
    if data[:len(ACTIVATION_MAGIC)] != ACTIVATION_MAGIC:
        raise ModelError(f"{path}: not an activation dump")
    off = len(ACTIVATION_MAGIC)
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    traces = []
    for _ in range(count):
        if len(data) < off + 12:
            raise ModelError(f"{path}: truncated activation dump")
        k, rows, cols = struct.unpack_from("<III", data, off)
        off += 12
        n = rows * cols
        if len(data) < off + 4 * n:
            raise ModelError(f"{path}: truncated activation dump")
        traces.append(np.frombuffer(data, _F32, n, off).reshape(rows, cols).copy())
        off += 4 * n
    return traces
