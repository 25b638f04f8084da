"""Recurrent forecaster for local load demand and PV output.

A stack of gated recurrent cells (update gate decides how much of the prior
hidden state survives, reset gate how much of it feeds the candidate state)
reads 12 past samples and three dense layers map the final hidden state to
the next 7 samples.  Everything, including backpropagation through time and
the gradient-moment optimizer, is implemented here on plain numpy arrays so
the gradients can be verified against finite differences.

Series are z-normalized with training-split statistics; predictions are
returned in physical units (kW).  Two independent models are trained in
practice, one on load demand and one on PV output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INPUT_LEN = 12
OUTPUT_LEN = 7


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class TrainConfig:
    """Training regimen for one forecaster."""

    epochs: int = 1000
    batch_size: int = 200
    learning_rate: float = 0.005
    grad_moving_avg: float = 0.9     # first-moment decay
    second_moment_decay: float = 0.999
    epsilon: float = 1e-8
    dropout: float = 0.2
    grad_clip_threshold: float = 1.0
    train_frac: float = 0.8
    hidden_size: int = 32
    n_gru_layers: int = 6

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Reduced profile sized for quick local runs and CI."""
        base = dict(epochs=50, batch_size=32)
        base.update(overrides)
        return cls(**base)

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.hidden_size) <= 0:
            raise ValueError("epochs, batch_size and hidden_size must be positive")
        if not 0 < self.train_frac < 1:
            raise ValueError("train_frac must lie in (0, 1)")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")


class GruCell:
    """One recurrent layer processing a full (batch, steps, features) sequence."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.wz = _glorot(rng, input_size, hidden_size)
        self.uz = _glorot(rng, hidden_size, hidden_size)
        self.bz = np.zeros(hidden_size)
        self.wr = _glorot(rng, input_size, hidden_size)
        self.ur = _glorot(rng, hidden_size, hidden_size)
        self.br = np.zeros(hidden_size)
        self.wc = _glorot(rng, input_size, hidden_size)
        self.uc = _glorot(rng, hidden_size, hidden_size)
        self.bc = np.zeros(hidden_size)

    _PARAM_NAMES = ("wz", "uz", "bz", "wr", "ur", "br", "wc", "uc", "bc")

    def params(self):
        return [(name, getattr(self, name)) for name in self._PARAM_NAMES]

    def step(self, x, h_prev):
        """Advance one time step.  Returns (h, cache_tuple)."""
        z = _sigmoid(x @ self.wz + h_prev @ self.uz + self.bz)
        r = _sigmoid(x @ self.wr + h_prev @ self.ur + self.br)
        rh = r * h_prev
        c = np.tanh(x @ self.wc + rh @ self.uc + self.bc)
        h = z * h_prev + (1.0 - z) * c
        return h, (x, h_prev, z, r, rh, c)

    def forward(self, seq):
        """Run the layer over seq (B, T, input_size); returns (h_seq, caches)."""
        batch, steps, _ = seq.shape
        h = np.zeros((batch, self.hidden_size))
        h_seq = np.empty((batch, steps, self.hidden_size))
        caches = []
        for t in range(steps):
            h, cache = self.step(seq[:, t, :], h)
            h_seq[:, t, :] = h
            caches.append(cache)
        return h_seq, caches

    def backward(self, caches, dh_seq):
        """Backpropagate through time.

        dh_seq carries the gradient arriving at each step's output from the
        layer above; the recurrent gradient is threaded internally.  Returns
        (dx_seq, grads) with grads keyed like params().
        """
        batch, steps, _ = dh_seq.shape
        grads = {name: np.zeros_like(getattr(self, name)) for name in self._PARAM_NAMES}
        dx_seq = np.empty((batch, steps, self.input_size))
        dh_next = np.zeros((batch, self.hidden_size))
        for t in range(steps - 1, -1, -1):
            x, h_prev, z, r, rh, c = caches[t]
            dh = dh_seq[:, t, :] + dh_next
            dz = dh * (h_prev - c)
            dc = dh * (1.0 - z)
            dh_prev = dh * z

            dc_pre = dc * (1.0 - c * c)
            grads["wc"] += x.T @ dc_pre
            grads["uc"] += rh.T @ dc_pre
            grads["bc"] += dc_pre.sum(axis=0)
            drh = dc_pre @ self.uc.T
            dr = drh * h_prev
            dh_prev += drh * r
            dx = dc_pre @ self.wc.T

            dz_pre = dz * z * (1.0 - z)
            dr_pre = dr * r * (1.0 - r)
            grads["wz"] += x.T @ dz_pre
            grads["uz"] += h_prev.T @ dz_pre
            grads["bz"] += dz_pre.sum(axis=0)
            grads["wr"] += x.T @ dr_pre
            grads["ur"] += h_prev.T @ dr_pre
            grads["br"] += dr_pre.sum(axis=0)
            dh_prev += dz_pre @ self.uz.T + dr_pre @ self.ur.T
            dx += dz_pre @ self.wz.T + dr_pre @ self.wr.T

            dx_seq[:, t, :] = dx
            dh_next = dh_prev
        return dx_seq, grads


class ForecastModel:
    """Recurrent stack plus dense head mapping 12 samples to 7.

    The default geometry is six recurrent layers feeding three dense layers,
    the last one linear with one output per forecast step.  Inference is
    deterministic; dropout only acts during training.
    """

    def __init__(self, hidden_size: int = 32, n_gru_layers: int = 6,
                 input_len: int = INPUT_LEN, output_len: int = OUTPUT_LEN,
                 seed: int = 0):
        if n_gru_layers < 0:
            raise ValueError("n_gru_layers must be >= 0")
        rng = np.random.default_rng(seed)
        self.hidden_size = hidden_size
        self.input_len = input_len
        self.output_len = output_len
        self.cells = []
        in_size = 1
        for _ in range(n_gru_layers):
            self.cells.append(GruCell(in_size, hidden_size, rng))
            in_size = hidden_size
        head_in = in_size if n_gru_layers else input_len
        self.fc_w = [
            _glorot(rng, head_in, hidden_size),
            _glorot(rng, hidden_size, hidden_size),
            _glorot(rng, hidden_size, output_len),
        ]
        self.fc_b = [np.zeros(hidden_size), np.zeros(hidden_size), np.zeros(output_len)]
        self.norm_mean = 0.0
        self.norm_std = 1.0

    # -- parameter plumbing ------------------------------------------------

    def params(self):
        """Named references to every trainable array."""
        out = []
        for i, cell in enumerate(self.cells):
            out.extend((f"gru{i}_{name}", arr) for name, arr in cell.params())
        for i, (w, b) in enumerate(zip(self.fc_w, self.fc_b)):
            out.append((f"fc{i}_w", w))
            out.append((f"fc{i}_b", b))
        return out

    def set_normalization(self, mean: float, std: float):
        self.norm_mean = float(mean)
        self.norm_std = float(std) if abs(std) > 1e-12 else 1.0

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.norm_mean) / self.norm_std

    def denormalize(self, x):
        return np.asarray(x, dtype=float) * self.norm_std + self.norm_mean

    # -- forward / backward -------------------------------------------------

    def _forward(self, x_norm, dropout: float = 0.0, rng: np.random.Generator | None = None):
        """Run normalized windows (B, input_len) through the network.

        Returns (y_norm (B, output_len), cache).  With dropout > 0 an rng is
        required and inverted-dropout masks are stored in the cache.
        """
        batch = x_norm.shape[0]

        def mask_like(arr):
            if dropout <= 0.0:
                return None
            return (rng.random(arr.shape) >= dropout) / (1.0 - dropout)

        gru_caches = []
        if self.cells:
            seq = x_norm[:, :, None]
            for cell in self.cells:
                h_seq, caches = cell.forward(seq)
                mask = mask_like(h_seq)
                seq = h_seq if mask is None else h_seq * mask
                gru_caches.append((caches, mask))
            head_in = seq[:, -1, :]
        else:
            head_in = x_norm

        a = head_in
        fc_cache = []
        for i in range(3):
            s = a @ self.fc_w[i] + self.fc_b[i]
            if i < 2:
                out = np.tanh(s)
                mask = mask_like(out)
                dropped = out if mask is None else out * mask
                fc_cache.append((a, out, mask))
                a = dropped
            else:
                fc_cache.append((a, None, None))
                a = s
        return a, (batch, gru_caches, fc_cache)

    def _backward(self, cache, dy):
        """Gradient of the loss wrt every parameter given dLoss/dOutput."""
        batch, gru_caches, fc_cache = cache
        grads = {}
        da = dy
        for i in range(2, -1, -1):
            a_in, out, mask = fc_cache[i]
            if i < 2:
                if mask is not None:
                    da = da * mask
                ds = da * (1.0 - out * out)
            else:
                ds = da
            grads[f"fc{i}_w"] = a_in.T @ ds
            grads[f"fc{i}_b"] = ds.sum(axis=0)
            da = ds @ self.fc_w[i].T

        if self.cells:
            steps = self.input_len
            dh_seq = np.zeros((batch, steps, self.hidden_size))
            dh_seq[:, -1, :] = da
            for i in range(len(self.cells) - 1, -1, -1):
                caches, mask = gru_caches[i]
                if mask is not None:
                    dh_seq = dh_seq * mask
                dx_seq, cell_grads = self.cells[i].backward(caches, dh_seq)
                for name, g in cell_grads.items():
                    grads[f"gru{i}_{name}"] = g
                dh_seq = dx_seq
        return grads

    # -- public API ----------------------------------------------------------

    def predict(self, window_kw) -> np.ndarray:
        """Forecast the next 7 samples (kW) from the last 12 (kW)."""
        window_kw = np.asarray(window_kw, dtype=float)
        if window_kw.shape != (self.input_len,):
            raise ValueError(f"window must have length {self.input_len}, got {window_kw.shape}")
        y, _ = self._forward(self.normalize(window_kw)[None, :])
        return self.denormalize(y[0])

    def rmse(self, windows_kw, targets_kw) -> float:
        """Root-mean-squared forecast error in physical units."""
        x = self.normalize(np.asarray(windows_kw, dtype=float))
        y, _ = self._forward(x)
        pred = self.denormalize(y)
        return float(np.sqrt(np.mean((pred - np.asarray(targets_kw, dtype=float)) ** 2)))


def make_windows(series) -> tuple[np.ndarray, np.ndarray]:
    """Slice a series into (inputs (N, 12), targets (N, 7)) sliding windows."""
    series = np.asarray(series, dtype=float)
    n = len(series) - INPUT_LEN - OUTPUT_LEN + 1
    if n < 1:
        raise ValueError(
            f"series of {len(series)} samples is too short for "
            f"{INPUT_LEN}-in/{OUTPUT_LEN}-out windows")
    x = np.stack([series[i:i + INPUT_LEN] for i in range(n)])
    y = np.stack([series[i + INPUT_LEN:i + INPUT_LEN + OUTPUT_LEN] for i in range(n)])
    return x, y


def clip_gradients(grads: dict, threshold: float) -> float:
    """Scale all gradients in place so their global L2 norm is at most threshold."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if threshold > 0 and total > threshold:
        scale = threshold / total
        for g in grads.values():
            g *= scale
    return total


class AdamState:
    """First/second gradient-moment accumulator with bias correction."""

    def __init__(self, model: ForecastModel, cfg: TrainConfig):
        self.m = {name: np.zeros_like(arr) for name, arr in model.params()}
        self.v = {name: np.zeros_like(arr) for name, arr in model.params()}
        self.step = 0
        self.cfg = cfg

    def update(self, model: ForecastModel, grads: dict):
        cfg = self.cfg
        self.step += 1
        b1, b2 = cfg.grad_moving_avg, cfg.second_moment_decay
        corr1 = 1.0 - b1 ** self.step
        corr2 = 1.0 - b2 ** self.step
        for name, arr in model.params():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            arr -= cfg.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + cfg.epsilon)


def train(series, cfg: TrainConfig | None = None, seed: int = 0):
    """Fit a forecaster to one series.

    The window set is split chronologically into train/validation parts;
    normalization statistics come from the training span only.  Returns
    (model, rmse_train, rmse_valid) with both errors in physical units.
    """
    cfg = cfg or TrainConfig()
    series = np.asarray(series, dtype=float)
    x_all, y_all = make_windows(series)
    n_train = int(len(x_all) * cfg.train_frac)
    if n_train < 1 or n_train == len(x_all):
        raise ValueError("series too short to form both train and validation splits")
    x_train, y_train = x_all[:n_train], y_all[:n_train]
    x_valid, y_valid = x_all[n_train:], y_all[n_train:]

    model = ForecastModel(cfg.hidden_size, cfg.n_gru_layers, seed=seed)
    train_span = series[: n_train + INPUT_LEN + OUTPUT_LEN - 1]
    model.set_normalization(np.mean(train_span), np.std(train_span))

    xn = model.normalize(x_train)
    yn = model.normalize(y_train)
    rng = np.random.default_rng(seed + 1)
    adam = AdamState(model, cfg)
    n_out = model.output_len
    for _ in range(cfg.epochs):
        order = rng.permutation(len(xn))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = xn[idx], yn[idx]
            pred, cache = model._forward(xb, dropout=cfg.dropout, rng=rng)
            dy = 2.0 * (pred - yb) / (pred.shape[0] * n_out)
            grads = model._backward(cache, dy)
            clip_gradients(grads, cfg.grad_clip_threshold)
            adam.update(model, grads)

    return model, model.rmse(x_train, y_train), model.rmse(x_valid, y_valid)


def grad_check(model: ForecastModel, window, target, h: float = 1e-5) -> float:
    """Largest relative disagreement between analytic and central-difference gradients.

    Meant for small models; every parameter element costs two forward passes.
    """
    window = np.asarray(window, dtype=float)[None, :]
    target = np.asarray(target, dtype=float)[None, :]

    def loss() -> float:
        y, _ = model._forward(window)
        return float(np.mean((y - target) ** 2))

    y, cache = model._forward(window)
    dy = 2.0 * (y - target) / y.size
    analytic = model._backward(cache, dy)

    worst = 0.0
    for name, arr in model.params():
        flat = arr.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + h
            up = loss()
            flat[j] = keep - h
            down = loss()
            flat[j] = keep
            numeric = (up - down) / (2.0 * h)
            a = float(analytic[name].reshape(-1)[j])
            denom = max(abs(a) + abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


def save_checkpoint(model: ForecastModel, path):
    """Write all named parameter arrays plus geometry and normalization stats."""
    meta = np.array([model.hidden_size, len(model.cells), model.input_len,
                     model.output_len], dtype=np.int64)
    norm = np.array([model.norm_mean, model.norm_std])
    np.savez(path, __meta__=meta, __norm__=norm,
             **{name: arr for name, arr in model.params()})


def load_checkpoint(path) -> ForecastModel:
    with np.load(path) as data:
        hidden, layers, input_len, output_len = (int(v) for v in data["__meta__"])
        model = ForecastModel(hidden, layers, input_len, output_len)
        model.set_normalization(*data["__norm__"])
        for name, arr in model.params():
            arr[...] = data[name]
    return model
