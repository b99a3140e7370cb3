"""Dense feed-forward networks with hand-written reverse mode and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices and act on row
vectors, ``h = x @ W + b``. ReLU's derivative at 0 is taken as 0.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError, ShapeError, TrainingError
from .io import sha256_bytes, with_ext

FORMAT_VERSION = "1.0.0"
ACTIVATIONS = ("relu", "linear")


@dataclass
class Mlp:
    layer_sizes: list
    activations: list
    weights: list
    biases: list

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        self.activations = list(self.activations)
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ShapeError("need one activation per layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        for W, b, n_in, n_out in zip(self.weights, self.biases,
                                     self.layer_sizes[:-1], self.layer_sizes[1:]):
            if W.shape != (n_in, n_out) or b.shape != (n_out,):
                raise ShapeError("parameter shapes inconsistent with layer_sizes")

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]

    @property
    def params(self):
        """Parameter arrays in optimizer order ``[W0, b0, W1, b1, ...]``."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self):
        return Mlp(list(self.layer_sizes), list(self.activations),
                   [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def __call__(self, x):
        return mlp_forward(self, x)


def default_activations(n_layers):
    return ["relu"] * (n_layers - 1) + ["linear"]


def mlp_init(layer_sizes, activations=None, seed=0):
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ShapeError("an MLP needs at least an input and an output size")
    if activations is None:
        activations = default_activations(len(sizes) - 1)
    rng = np.random.default_rng([int(seed), 0])
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return Mlp(sizes, activations, weights, biases)


def _check_input(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.n_in:
        raise ShapeError(f"input width {x.shape[-1]} != {net.n_in}")
    return x


def mlp_forward(net, x):
    """Evaluate the network on one input vector or a batch of rows."""
    h = _check_input(net, x)
    for W, b, act in zip(net.weights, net.biases, net.activations):
        h = h @ W + b
        if act == "relu":
            h = np.maximum(h, 0.0)
    return h


def mlp_forward_cache(net, x):
    """Forward pass on a batch, keeping what the backward pass needs."""
    h = _check_input(net, x)
    squeeze = h.ndim == 1
    h = np.atleast_2d(h)
    cache = [h]
    for W, b, act in zip(net.weights, net.biases, net.activations):
        h = h @ W + b
        if act == "relu":
            h = np.maximum(h, 0.0)
        cache.append(h)
    out = h[0] if squeeze else h
    return out, cache


def mlp_backward(net, cache, grad_out, need_input_grad=True):
    """Reverse pass. Returns ``(param_grads, input_grad)``.

    ``param_grads`` follows :attr:`Mlp.params` order; gradients are sums
    over the batch rows.
    """
    g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
    if g.shape != cache[-1].shape:
        raise ShapeError(f"grad_out shape {g.shape} != output shape {cache[-1].shape}")
    n_layers = len(net.weights)
    grads = [None] * (2 * n_layers)
    for layer in range(n_layers - 1, -1, -1):
        if net.activations[layer] == "relu":
            g = g * (cache[layer + 1] > 0.0)
        grads[2 * layer] = cache[layer].T @ g
        grads[2 * layer + 1] = g.sum(axis=0)
        if layer > 0 or need_input_grad:
            g = g @ net.weights[layer].T
    return grads, (g if need_input_grad else None)


# --------------------------------------------------------------------------
# optimization

@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7

    @classmethod
    def zeros_like(cls, params, **kw):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update applied in place to ``params``."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 256
    lr0: float = 1e-3
    lr_decay_factor: float = 0.5
    lr_decay_every: int = 100
    seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr0 <= 0 or self.lr_decay_every < 1:
            raise ValueError("invalid training configuration")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError("lr_decay_factor must lie in (0, 1]")

    def lr_at(self, epoch):
        """Learning rate for the 0-based ``epoch``."""
        return self.lr0 * self.lr_decay_factor ** (epoch // self.lr_decay_every)

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class TrainHistory:
    epoch: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    train_mse: list = field(default_factory=list)
    test_mse: list = field(default_factory=list)
    initial_train_mse: float = None
    initial_test_mse: float = None

    def append(self, epoch, lr, train, test):
        self.epoch.append(epoch)
        self.lr.append(lr)
        self.train_mse.append(train)
        self.test_mse.append(test)

    def __len__(self):
        return len(self.epoch)

    def to_csv(self, path):
        lines = ["epoch,lr,train_mse,test_mse"]
        for row in zip(self.epoch, self.lr, self.train_mse, self.test_mse):
            lines.append(",".join("" if v is None else repr(v) for v in row))
        Path(path).write_text("\n".join(lines) + "\n")


def mse(net, x, y, chunk=8192):
    """Mean over rows and output columns of the squared error."""
    total = 0.0
    for s in range(0, x.shape[0], chunk):
        d = mlp_forward(net, x[s:s + chunk]) - y[s:s + chunk]
        total += float(np.sum(d * d))
    return total / (x.shape[0] * y.shape[1])


class SupervisedTrainer:
    """Minibatch Adam on mean squared error, resumable from a checkpoint.

    Batches are drawn from a per-epoch permutation produced by an RNG
    stream independent of the weight initialization.
    """

    def __init__(self, net, config, x_train, y_train, x_test=None, y_test=None):
        self.net = net
        self.config = config
        self.x, self.y = np.asarray(x_train, float), np.asarray(y_train, float)
        self.x_test = None if x_test is None else np.asarray(x_test, float)
        self.y_test = None if y_test is None else np.asarray(y_test, float)
        if self.x.shape[0] == 0:
            raise TrainingError("empty training set")
        self.adam = AdamState.zeros_like(net.params)
        self.rng = np.random.default_rng([int(config.seed), 1])
        self.epochs_done = 0
        self.history = TrainHistory()

    def run(self, n_epochs=None):
        cfg = self.config
        target = cfg.epochs if n_epochs is None else self.epochs_done + n_epochs
        if self.history.initial_train_mse is None and target > self.epochs_done:
            self.history.initial_train_mse = mse(self.net, self.x, self.y)
            if self.x_test is not None:
                self.history.initial_test_mse = mse(self.net, self.x_test, self.y_test)
        n = self.x.shape[0]
        bs = cfg.batch_size
        inv = 2.0 / self.y.shape[1]
        while self.epochs_done < target:
            epoch = self.epochs_done
            lr = cfg.lr_at(epoch)
            perm = self.rng.permutation(n)
            total = 0.0
            for bi, start in enumerate(range(0, n, bs)):
                idx = perm[start:start + bs]
                xb, yb = self.x[idx], self.y[idx]
                out, cache = mlp_forward_cache(self.net, xb)
                diff = out - yb
                loss = float(np.sum(diff * diff))
                if not math.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}",
                                        epoch=epoch, batch=bi)
                total += loss
                grads, _ = mlp_backward(self.net, cache, diff * (inv / idx.size),
                                        need_input_grad=False)
                adam_step(self.net.params, grads, self.adam, lr)
            train = total / (n * self.y.shape[1])
            test = None if self.x_test is None else mse(self.net, self.x_test, self.y_test)
            self.history.append(epoch + 1, lr, train, test)
            self.epochs_done += 1
        return self.net, self.history

    # checkpointing -------------------------------------------------------
    def checkpoint_meta(self):
        return {
            "epochs_done": self.epochs_done,
            "rng_state": self.rng.bit_generator.state,
            "adam": {"step_count": self.adam.step_count, "beta1": self.adam.beta1,
                     "beta2": self.adam.beta2, "eps": self.adam.eps},
            "train_config": self.config.to_dict(),
            "initial_train_mse": self.history.initial_train_mse,
            "initial_test_mse": self.history.initial_test_mse,
        }

    def save(self, path, metadata=None):
        meta = dict(metadata or {})
        meta["checkpoint"] = self.checkpoint_meta()
        return mlp_save(path, self.net, meta,
                        extra_arrays=self.adam.first_moment + self.adam.second_moment)

    @classmethod
    def resume(cls, path, x_train, y_train, x_test=None, y_test=None):
        net, meta, extra = mlp_load(path, return_extra=True)
        ck = meta["checkpoint"]
        cfg = TrainConfig(**ck["train_config"])
        tr = cls(net, cfg, x_train, y_train, x_test, y_test)
        k = len(net.params)
        a = ck["adam"]
        tr.adam = AdamState(extra[:k], extra[k:], a["step_count"], a["beta1"], a["beta2"], a["eps"])
        tr.rng.bit_generator.state = ck["rng_state"]
        tr.epochs_done = ck["epochs_done"]
        tr.history.initial_train_mse = ck.get("initial_train_mse")
        tr.history.initial_test_mse = ck.get("initial_test_mse")
        return tr


def train_supervised(net, x_train, y_train, config, x_test=None, y_test=None):
    """Train ``net`` in place; returns ``(net, history)``."""
    if config.epochs == 0:
        return net, TrainHistory()
    return SupervisedTrainer(net, config, x_train, y_train, x_test, y_test).run()


# --------------------------------------------------------------------------
# persistence

def _paths(path):
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".json", ".weights") else p
    return with_ext(stem, ".json"), with_ext(stem, ".weights")


def mlp_save(path, net, metadata=None, extra_arrays=()):
    """Write ``<name>.json`` and ``<name>.weights`` (float64 little-endian)."""
    jpath, wpath = _paths(path)
    jpath.parent.mkdir(parents=True, exist_ok=True)
    arrays = net.params + list(extra_arrays)
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    header = {
        "format_version": FORMAT_VERSION,
        "layer_sizes": net.layer_sizes,
        "activations": net.activations,
        "flattening_order": "newest_first",
        "n_extra_arrays": len(extra_arrays),
        "weights_file": wpath.name,
        "weights_sha256": sha256_bytes(blob),
        "weights_bytes": len(blob),
        "metadata": metadata or {},
    }
    wpath.write_bytes(blob)
    jpath.write_text(json.dumps(header, indent=2, sort_keys=True))
    return jpath


def mlp_load(path, return_extra=False):
    """Inverse of :func:`mlp_save`; returns ``(net, metadata)``."""
    jpath, _ = _paths(path)
    try:
        header = json.loads(jpath.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read model header {jpath}: {exc}") from exc
    major = str(header.get("format_version", "")).split(".")[0]
    if major != FORMAT_VERSION.split(".")[0]:
        raise FormatError(f"unsupported model format version {header.get('format_version')!r}")
    blob = (jpath.parent / header["weights_file"]).read_bytes()
    if len(blob) != header["weights_bytes"] or sha256_bytes(blob) != header["weights_sha256"]:
        raise ChecksumError(f"{jpath}: weight blob checksum mismatch")
    flat = np.frombuffer(blob, dtype="<f8")
    sizes = header["layer_sizes"]
    shapes = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        shapes += [(n_in, n_out), (n_out,)]
    n_extra = header.get("n_extra_arrays", 0)
    # extra arrays (optimizer moments) mirror the parameter shapes
    shapes += shapes * (n_extra // max(1, len(shapes)))
    arrays, off = [], 0
    for shp in shapes:
        size = int(np.prod(shp))
        arrays.append(flat[off:off + size].reshape(shp).astype(np.float64))
        off += size
    k = 2 * (len(sizes) - 1)
    net = Mlp(sizes, header["activations"], arrays[0:k:2], arrays[1:k:2])
    if return_extra:
        return net, header["metadata"], arrays[k:]
    return net, header["metadata"]
