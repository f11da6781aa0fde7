"""Convolutional-recurrent next-subframe CQI predictor, trained from scratch.

Architecture, per timestep of a ``w x R`` window:

    x_t   = window[t] * input_scale                      (R,)
    c_t   = relu(conv1d(x_t, replicate padding) + b_c)   (R, F), flattened to D = R*F
    z, r  = sigmoid(c_t W_{z,r} + h U_{z,r} + b_{z,r})
    n     = tanh(c_t W_n + (r * h) U_n + b_n)
    h     = (1 - z) * n + z * h                          (H,), h_0 = 0

    y     = h_w W_o + b_o [+ window[-1] when residual]   (R,)

The GRU weights are stored stacked as ``gru_W (D, 3H)``, ``gru_U (H, 3H)``,
``gru_b (3H,)`` in gate order z, r, n. With ``residual`` the head learns a
correction to the last observed row, so a zero head reproduces persistence.

Loss is squared error with over-prediction (``pred > truth``) weighted by
``alpha``. Gradients are exact backpropagation through time in float64.
"""

from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, fields
from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError, FramingError, InsufficientDataError, SchemaError
from .gridio import window_arrays

MODEL_MAGIC = b"CRN1"
MODEL_VERSION = 1
_U32 = struct.Struct("<I")

PARAM_NAMES = ("conv_w", "conv_b", "gru_W", "gru_U", "gru_b", "out_W", "out_b")


@dataclass(frozen=True)
class ModelConfig:
    window_w: int = 32
    n_rb: int = 50
    conv_filters: int = 16
    conv_kernel: int = 3
    hidden: int = 64
    horizon: int = 1
    loss_alpha: float = 4.0
    seed: int = 0
    input_scale: float = 1.0 / 15.0
    residual: bool = True

    def __post_init__(self):
        for name in ("window_w", "n_rb", "conv_filters", "conv_kernel", "hidden", "horizon"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.conv_kernel % 2 != 1:
            raise ValueError("conv_kernel must be odd")
        if self.loss_alpha < 1:
            raise ValueError("loss_alpha must be >= 1")
        if not self.input_scale > 0:
            raise ValueError("input_scale must be positive")

    @property
    def feature_size(self) -> int:
        return self.n_rb * self.conv_filters

    def param_shapes(self) -> dict:
        F, k, D, H, R = self.conv_filters, self.conv_kernel, self.feature_size, self.hidden, self.n_rb
        return {
            "conv_w": (F, 1, k),
            "conv_b": (F,),
            "gru_W": (D, 3 * H),
            "gru_U": (H, 3 * H),
            "gru_b": (3 * H,),
            "out_W": (H, R),
            "out_b": (R,),
        }

    def n_params(self) -> int:
        return sum(math.prod(s) for s in self.param_shapes().values())


class ModelParams:
    """Weights plus the config they were built for."""

    def __init__(self, config: ModelConfig, arrays: dict):
        shapes = config.param_shapes()
        if set(arrays) != set(shapes):
            raise SchemaError(f"parameter set {sorted(arrays)} != {sorted(shapes)}")
        self.config = config
        self.arrays = {}
        for name in PARAM_NAMES:
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != shapes[name]:
                raise SchemaError(f"{name}: shape {a.shape}, config expects {shapes[name]}")
            self.arrays[name] = a

    def __getitem__(self, name):
        return self.arrays[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.arrays[n].ravel() for n in PARAM_NAMES])

    def with_flat(self, vec) -> "ModelParams":
        out, i = {}, 0
        for name in PARAM_NAMES:
            shape = self.arrays[name].shape
            n = math.prod(shape)
            out[name] = np.asarray(vec[i : i + n], dtype=np.float64).reshape(shape)
            i += n
        return ModelParams(self.config, out)

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())

    def equals(self, other: "ModelParams") -> bool:
        return self.config == other.config and all(
            np.array_equal(self.arrays[n], other.arrays[n]) for n in PARAM_NAMES
        )


def init_model(config: ModelConfig) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(config.seed)
    shapes = config.param_shapes()
    fan_in = {
        "conv_w": config.conv_kernel,
        "gru_W": config.feature_size,
        "gru_U": config.hidden,
        "out_W": config.hidden,
    }
    arrays = {}
    for name in PARAM_NAMES:
        if name in fan_in:
            bound = 1.0 / math.sqrt(fan_in[name])
            arrays[name] = rng.uniform(-bound, bound, shapes[name])
        else:
            arrays[name] = np.zeros(shapes[name])
    return ModelParams(config, arrays)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check(name, arr):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")


def _conv_patches(xs, k):
    p = (k - 1) // 2
    xp = np.pad(xs, [(0, 0)] * (xs.ndim - 1) + [(p, p)], mode="edge") if p else xs
    return np.lib.stride_tricks.sliding_window_view(xp, k, axis=-1)


def _as_batch(params: ModelParams, windows) -> np.ndarray:
    cfg = params.config
    X = np.asarray(windows, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (cfg.window_w, cfg.n_rb):
        raise ValueError(
            f"window shape {X.shape[-2:]} does not match config ({cfg.window_w}, {cfg.n_rb})"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("window contains non-finite entries")
    return X


def _forward(params: ModelParams, X: np.ndarray, keep: bool):
    cfg = params.config
    B, w, R = X.shape
    H = cfg.hidden
    P = params.arrays
    patches = _conv_patches(X * cfg.input_scale, cfg.conv_kernel)  # (B, w, R, k)
    pre = patches @ P["conv_w"][:, 0, :].T + P["conv_b"]  # (B, w, R, F)
    _check("conv", pre)
    feat = np.maximum(pre, 0.0).reshape(B, w, -1)
    gx = feat @ P["gru_W"] + P["gru_b"]  # (B, w, 3H)
    _check("gru input projection", gx)
    U = P["gru_U"]
    U_zr, U_n = U[:, : 2 * H], U[:, 2 * H :]
    h = np.zeros((B, H))
    cache = [] if keep else None
    for t in range(w):
        g = gx[:, t]
        zr = _sigmoid(g[:, : 2 * H] + h @ U_zr)
        z, r = zr[:, :H], zr[:, H:]
        rh = r * h
        n = np.tanh(g[:, 2 * H :] + rh @ U_n)
        h_new = n + z * (h - n)
        if keep:
            cache.append((h, z, r, n, rh))
        h = h_new
    _check("gru", h)
    y = h @ P["out_W"] + P["out_b"]
    if cfg.residual:
        y = y + X[:, -1, :]
    _check("output", y)
    if keep:
        return y, (patches, pre, feat, cache, h)
    return y


def forward_batch(params: ModelParams, windows) -> np.ndarray:
    """Continuous CQI predictions for a batch of windows, shape (B, R)."""
    return _forward(params, _as_batch(params, windows), keep=False)


def forward(params: ModelParams, window) -> np.ndarray:
    """Continuous CQI prediction for one ``w x R`` window."""
    X = np.asarray(window, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"window must be 2-D, got shape {X.shape}")
    return forward_batch(params, X)[0]


def asymmetric_loss(pred, truth, alpha: float) -> float:
    """Mean of ``alpha*e^2`` for ``e = pred - truth > 0`` and ``e^2`` otherwise."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    e = pred - truth
    sq = e * e
    return float(np.mean(np.where(e > 0, alpha * sq, sq)))


def _loss_grad(pred, truth, alpha):
    e = pred - truth
    weight = np.where(e > 0, alpha, 1.0)
    loss = float(np.mean(weight * (e * e)))
    return loss, 2.0 * weight * e / e.size


def loss_and_gradients(params: ModelParams, windows, targets, alpha: Optional[float] = None):
    """Mean asymmetric loss over the batch and its gradient for every parameter."""
    cfg = params.config
    alpha = cfg.loss_alpha if alpha is None else alpha
    X = _as_batch(params, windows)
    Y = np.asarray(targets, dtype=np.float64).reshape(X.shape[0], cfg.n_rb)
    if X.shape[0] == 0:
        raise InsufficientDataError("empty batch")
    P = params.arrays
    H, F, k = cfg.hidden, cfg.conv_filters, cfg.conv_kernel
    B, w, R = X.shape
    try:
        y, (patches, pre, feat, cache, h_last) = _forward(params, X, keep=True)
    except FloatingPointError as exc:
        raise FloatingPointError(f"forward pass: {exc}") from None
    loss, dy = _loss_grad(y, Y, alpha)

    grads = {"out_W": h_last.T @ dy, "out_b": dy.sum(axis=0)}
    dh = dy @ P["out_W"].T
    U = P["gru_U"]
    U_zr_T, U_n_T = U[:, : 2 * H].T, U[:, 2 * H :].T
    dU = np.zeros_like(U)
    dgx = np.empty((B, w, 3 * H))
    for t in range(w - 1, -1, -1):
        h_prev, z, r, n, rh = cache[t]
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dh_prev = dh * z
        da_n = dn * (1.0 - n * n)
        dU[:, 2 * H :] += rh.T @ da_n
        drh = da_n @ U_n_T
        dr = drh * h_prev
        dh_prev += drh * r
        da_zr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
        dU[:, : 2 * H] += h_prev.T @ da_zr
        dh_prev += da_zr @ U_zr_T
        dgx[:, t, : 2 * H] = da_zr
        dgx[:, t, 2 * H :] = da_n
        dh = dh_prev
    _check("gru gradient", dh)
    grads["gru_U"] = dU
    flat_feat = feat.reshape(B * w, -1)
    flat_dgx = dgx.reshape(B * w, 3 * H)
    grads["gru_W"] = flat_feat.T @ flat_dgx
    grads["gru_b"] = flat_dgx.sum(axis=0)
    dpre = (flat_dgx @ P["gru_W"].T).reshape(pre.shape) * (pre > 0)
    grads["conv_b"] = dpre.reshape(-1, F).sum(axis=0)
    grads["conv_w"] = (
        dpre.reshape(-1, F).T @ patches.reshape(-1, k)
    ).reshape(F, 1, k)
    for name, g in grads.items():
        _check(f"gradient of {name}", g)
    return loss, grads


def gradients(params: ModelParams, windows, targets, alpha: Optional[float] = None) -> dict:
    """Analytic gradients of the mean asymmetric loss; see :func:`loss_and_gradients`."""
    return loss_and_gradients(params, windows, targets, alpha)[1]


def batch_loss(params: ModelParams, windows, targets, alpha: Optional[float] = None) -> float:
    alpha = params.config.loss_alpha if alpha is None else alpha
    pred = forward_batch(params, windows)
    return asymmetric_loss(pred, np.asarray(targets, dtype=np.float64).reshape(pred.shape), alpha)


def _grid_matrix(grid) -> np.ndarray:
    data = getattr(grid, "data", grid)
    return np.asarray(data, dtype=np.float64)


class Adam:
    def __init__(self, params: ModelParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.t = 0

    def step(self, params: ModelParams, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params.arrays[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(
    params: ModelParams,
    train_grid,
    config: Optional[ModelConfig] = None,
    epochs: int = 10,
    batch_size: int = 64,
    lr: float = 1e-3,
    max_windows: Optional[int] = None,
    log: Optional[Callable[[int, float], None]] = None,
):
    """Adam mini-batch training on every window of ``train_grid``.

    ``max_windows`` caps the windows drawn per epoch (a fresh random subset
    each epoch). Returns ``(trained_params, per_epoch_mean_loss)``; the input
    parameters are left untouched.
    """
    config = params.config if config is None else config
    if config != params.config:
        raise SchemaError("training config does not match the parameters' config")
    data = _grid_matrix(train_grid)
    if data.ndim != 2 or data.shape[1] != config.n_rb:
        raise SchemaError(f"grid width {data.shape[-1]} != model n_rb {config.n_rb}")
    X, Y = window_arrays(data, config.window_w, config.horizon)
    N = X.shape[0]
    rng = np.random.default_rng([int(config.seed), 0x7472])
    params = params.copy()
    opt = Adam(params, lr=lr)
    good = params.copy()
    history = []
    for epoch in range(epochs):
        order = rng.permutation(N)
        if max_windows is not None:
            order = order[:max_windows]
        total, count = 0.0, 0
        for start in range(0, order.size, batch_size):
            idx = np.sort(order[start : start + batch_size])
            try:
                loss, grads = loss_and_gradients(params, X[idx], Y[idx])
            except FloatingPointError as exc:
                raise DivergenceError(
                    f"epoch {epoch}: {exc}", checkpoint=good, history=history
                ) from None
            if not math.isfinite(loss):
                raise DivergenceError(f"epoch {epoch}: loss is {loss}", checkpoint=good, history=history)
            opt.step(params, grads)
            if not params.is_finite():
                raise DivergenceError(
                    f"epoch {epoch}: parameters became non-finite", checkpoint=good, history=history
                )
            good = params.copy()
            total += loss * idx.size
            count += idx.size
        history.append(total / count)
        if log is not None:
            log(epoch, history[-1])
    return params, history


def quantize(pred) -> np.ndarray:
    """Conservative quantizer: floor, then clamp to [0, 15]."""
    return np.clip(np.floor(np.asarray(pred, dtype=np.float64)), 0, 15).astype(np.int64)


def predict_next(params: ModelParams, window) -> np.ndarray:
    return quantize(forward(params, window))


def baseline_persistence(window) -> np.ndarray:
    window = np.asarray(window)
    if window.ndim < 2 or window.shape[-2] < 1:
        raise ValueError("window needs at least one row")
    return window[..., -1, :].astype(np.float64)


def crnn_predictor(params: ModelParams, chunk: int = 512):
    """Batch predictor closure for :func:`evaluate`."""

    def predict(X):
        return np.concatenate(
            [forward_batch(params, X[i : i + chunk]) for i in range(0, X.shape[0], chunk)]
        )

    return predict


def persistence_predictor(X):
    return baseline_persistence(X)


@dataclass
class Metrics:
    rmse: float
    mae: float
    asym_loss: float
    overprediction_rate: float
    exact_match_rate: float
    per_rb_rmse: np.ndarray
    n_windows: int

    def to_kv(self) -> str:
        lines = [
            f"rmse={self.rmse:.6g}",
            f"mae={self.mae:.6g}",
            f"asym_loss={self.asym_loss:.6g}",
            f"overprediction_rate={self.overprediction_rate:.6g}",
            f"exact_match_rate={self.exact_match_rate:.6g}",
            f"n_windows={self.n_windows}",
        ]
        lines += [f"rmse_rb{r}={v:.6g}" for r, v in enumerate(self.per_rb_rmse)]
        return "\n".join(lines) + "\n"


def evaluate(predictor, test_grid, config: ModelConfig, trace_path=None, trace_rbs=None,
             baseline=persistence_predictor) -> Metrics:
    """Score ``predictor`` over every window of ``test_grid``.

    ``predictor`` maps a ``(N, w, R)`` batch to ``(N, R)`` continuous
    predictions; a :class:`ModelParams` is wrapped automatically. When
    ``trace_path`` is given, a long-format CSV ``t,rb,truth,pred,baseline``
    is written for the selected RBs (all by default).
    """
    if isinstance(predictor, ModelParams):
        predictor = crnn_predictor(predictor)
    data = _grid_matrix(test_grid)
    if data.shape[1] != config.n_rb:
        raise SchemaError(f"grid width {data.shape[1]} != model n_rb {config.n_rb}")
    X, Y = window_arrays(data, config.window_w, config.horizon)
    pred = np.asarray(predictor(X), dtype=np.float64)
    e = pred - Y
    metrics = Metrics(
        rmse=float(np.sqrt(np.mean(e * e))),
        mae=float(np.mean(np.abs(e))),
        asym_loss=asymmetric_loss(pred, Y, config.loss_alpha),
        overprediction_rate=float(np.mean(e > 0)),
        exact_match_rate=float(np.mean(quantize(pred) == Y)),
        per_rb_rmse=np.sqrt(np.mean(e * e, axis=0)),
        n_windows=int(X.shape[0]),
    )
    if trace_path is not None:
        base = np.asarray(baseline(X), dtype=np.float64) if baseline is not None else None
        rbs = range(config.n_rb) if trace_rbs is None else trace_rbs
        first_t = config.window_w + config.horizon - 1
        with open(trace_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "rb", "truth", "pred", "baseline"])
            for rb in rbs:
                for i in range(X.shape[0]):
                    wr.writerow([
                        first_t + i, rb, f"{Y[i, rb]:.6g}", f"{pred[i, rb]:.6g}",
                        "" if base is None else f"{base[i, rb]:.6g}",
                    ])
    return metrics


def save_model(params: ModelParams, path) -> None:
    header = json.dumps(
        {
            "version": MODEL_VERSION,
            "config": asdict(params.config),
            "params": [[n, list(params.arrays[n].shape)] for n in PARAM_NAMES],
        },
        sort_keys=True,
    ).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(params.arrays[n], dtype="<f8").tobytes() for n in PARAM_NAMES)
    with open(os.fspath(path), "wb") as fh:
        fh.write(MODEL_MAGIC + _U32.pack(len(header)) + header + payload)


def decode_model_bytes(blob: bytes, expected: Optional[ModelConfig] = None) -> ModelParams:
    if len(blob) < 8 or blob[:4] != MODEL_MAGIC:
        raise SchemaError("not a model file (bad magic)")
    (hlen,) = _U32.unpack_from(blob, 4)
    if 8 + hlen > len(blob):
        raise FramingError(f"header claims {hlen} bytes, only {len(blob) - 8} available")
    try:
        header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
        version = header["version"]
        cfg_dict = header["config"]
        known = {f.name for f in fields(ModelConfig)}
        unknown = set(cfg_dict) - known
        if unknown:
            raise SchemaError(f"unknown config fields {sorted(unknown)}")
        config = ModelConfig(**cfg_dict)
        listed = [(n, tuple(s)) for n, s in header["params"]]
    except SchemaError:
        raise
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"malformed model header: {exc}") from exc
    if version != MODEL_VERSION:
        raise SchemaError(f"unsupported model version {version}")
    shapes = config.param_shapes()
    if listed != [(n, shapes[n]) for n in PARAM_NAMES]:
        raise SchemaError("parameter shapes in header disagree with config")
    if expected is not None:
        for f in fields(ModelConfig):
            got, want = getattr(config, f.name), getattr(expected, f.name)
            if f.name in ("n_rb", "window_w", "conv_filters", "conv_kernel", "hidden", "horizon") and got != want:
                raise SchemaError(f"{f.name}: model file has {got}, expected {want}")
    payload = blob[8 + hlen :]
    need = 8 * config.n_params()
    if len(payload) != need:
        raise FramingError(f"payload is {len(payload)} bytes, expected {need}")
    flat = np.frombuffer(payload, dtype="<f8")
    model = ModelParams(config, {n: np.zeros(shapes[n]) for n in PARAM_NAMES}).with_flat(flat.copy())
    if not model.is_finite():
        raise SchemaError("model file contains non-finite parameters")
    return model


def load_model(path, expected: Optional[ModelConfig] = None) -> ModelParams:
    """Read a model; ``expected`` checks architecture fields and names the first mismatch."""
    with open(os.fspath(path), "rb") as fh:
        return decode_model_bytes(fh.read(), expected)


class StreamingPredictor:
    """Sliding-window inference that reuses per-frame input projections.

    Each pushed row is convolved and projected through ``gru_W`` once and
    kept in a ring of ``w`` slots; a prediction reruns only the recurrence
    from a zero state over the stored projections, which is what
    :func:`forward` computes on the same window.
    """

    def __init__(self, params: ModelParams, jit: bool = True):
        cfg = params.config
        self.jit = jit
        self.params = params
        self.w = cfg.window_w
        H = cfg.hidden
        P = params.arrays
        self._conv_w = np.ascontiguousarray(P["conv_w"][:, 0, :])
        self._conv_wT = np.ascontiguousarray(self._conv_w.T)
        self._conv_b = P["conv_b"]
        self._W = P["gru_W"]
        self._b = P["gru_b"]
        self._U_zr = np.ascontiguousarray(P["gru_U"][:, : 2 * H])
        self._U_n = np.ascontiguousarray(P["gru_U"][:, 2 * H :])
        self._out_W = P["out_W"]
        self._out_b = P["out_b"]
        self._H = H
        self._gx = np.zeros((self.w, 3 * H))
        self._last = np.zeros(cfg.n_rb)
        self._head = 0
        self.count = 0
        if jit:
            from . import _kernels

            self._k = _kernels
            # Trigger compilation (or cache load) before any timed frame.
            _kernels.project_row(self._last, 1.0, self._conv_w, self._conv_b, self._W,
                                 self._b, np.empty(3 * H))
            _kernels.recur(self._gx, 0, self._U_zr, self._U_n, self._out_W, self._out_b,
                           self._last, cfg.residual)

    @property
    def ready(self) -> bool:
        return self.count >= self.w

    def push(self, row) -> None:
        cfg = self.params.config
        x = np.ascontiguousarray(row, dtype=np.float64)
        if x.shape != (cfg.n_rb,):
            raise ValueError(f"row has shape {x.shape}, expected ({cfg.n_rb},)")
        if self.jit:
            self._k.project_row(x, cfg.input_scale, self._conv_w, self._conv_b, self._W,
                                self._b, self._gx[self._head])
            self._head = (self._head + 1) % self.w
            self._last = x
            self.count += 1
            return
        patches = _conv_patches(x * cfg.input_scale, cfg.conv_kernel)
        feat = np.maximum(patches @ self._conv_wT + self._conv_b, 0.0).ravel()
        self._gx[self._head] = feat @ self._W + self._b
        self._head = (self._head + 1) % self.w
        self._last = x
        self.count += 1

    def forward(self) -> np.ndarray:
        if not self.ready:
            raise InsufficientDataError(f"window not full ({self.count}/{self.w} rows)")
        if self.jit:
            return self._k.recur(self._gx, self._head, self._U_zr, self._U_n, self._out_W,
                                 self._out_b, self._last, self.params.config.residual)
        H = self._H
        H2 = 2 * H
        gx = self._gx
        U_zr, U_n = self._U_zr, self._U_n
        h = np.zeros(H)
        for i in range(self.w):
            g = gx[(self._head + i) % self.w]
            zr = 0.5 * (1.0 + np.tanh(0.5 * (g[:H2] + h @ U_zr)))
            z = zr[:H]
            n = np.tanh(g[H2:] + (zr[H:] * h) @ U_n)
            h = n + z * (h - n)
        y = h @ self._out_W + self._out_b
        if self.params.config.residual:
            y = y + self._last
        return y

    def predict(self) -> np.ndarray:
        return quantize(self.forward())
