"""Dense classifiers with analytic input gradients, a binary weight format,
CSV datasets, and a deterministic full-batch trainer."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import SurrogateKind, batch_value_and_gradient, DegenerateLogitsError

MAGIC = b"APGD"
FORMAT_VERSION = 1
ACTIVATIONS = ("identity", "relu")


class ModelFormatError(ValueError):
    """Malformed or inconsistent model file."""


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2:
            raise ValueError(f"weight must be 2-D, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match weight rows {w.shape[0]}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class Classifier:
    """Stack of dense layers mapping ``R^D`` to ``C`` logits.

    Immutable once built, so a single instance can be shared between threads.
    """

    layers: tuple[Layer, ...]
    name: str = "classifier"

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("classifier needs at least one layer")
        for i, (a, b) in enumerate(zip(layers[:-1], layers[1:])):
            if b.weight.shape[1] != a.weight.shape[0]:
                raise ValueError(
                    f"layer {i + 1} expects {b.weight.shape[1]} inputs but layer {i} "
                    f"produces {a.weight.shape[0]}"
                )
        if layers[-1].weight.shape[0] < 2:
            raise ValueError("need at least 2 classes")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def linear(cls, W, b=None, name="linear") -> "Classifier":
        W = np.asarray(W, dtype=np.float64)
        b = np.zeros(W.shape[0]) if b is None else b
        return cls((Layer(W, b),), name=name)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def arch(self) -> tuple[int, ...]:
        return (self.input_dim, *(l.weight.shape[0] for l in self.layers))


@dataclass(frozen=True)
class LabeledExample:
    x: np.ndarray
    y: int


@dataclass
class Dataset:
    X: np.ndarray  # (N, D)
    y: np.ndarray  # (N,)
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[1] == 0:
            raise ValueError(f"X must be (N, D) with D > 0, got {self.X.shape}")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError("labels do not match number of examples")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, i) -> LabeledExample:
        return LabeledExample(self.X[i], int(self.y[i]))

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def examples(self) -> list[LabeledExample]:
        return [self[i] for i in range(len(self))]

    def subset(self, idx, name=None) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.num_classes, name or self.name)


def _check_input(model: Classifier, X: np.ndarray) -> None:
    if X.shape[-1] != model.input_dim:
        raise ValueError(
            f"input has dimension {X.shape[-1]}, model expects {model.input_dim}"
        )


def _forward_cache(model, X):
    acts = [X]
    pre = []
    h = X
    for layer in model.layers:
        a = h @ layer.weight.T + layer.bias
        pre.append(a)
        h = np.maximum(a, 0.0) if layer.activation == "relu" else a
        acts.append(h)
    return pre, acts


def _backward(model, pre, acts, dZ, want_params=False):
    """Backpropagate ``dZ`` (N, C); returns dX and optionally layer grads."""
    grads = []
    d = dZ
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if layer.activation == "relu":
            # subgradient of relu at 0 is 0
            d = d * (pre[i] > 0)
        if want_params:
            grads.append((d.T @ acts[i], d.sum(axis=0)))
        d = d @ layer.weight
    grads.reverse()
    return d, grads


def forward(model: Classifier, x) -> np.ndarray:
    """Logits for one input ``(D,)`` or a batch ``(N, D)``."""
    X = np.asarray(x, dtype=np.float64)
    _check_input(model, X)
    single = X.ndim == 1
    _, acts = _forward_cache(model, np.atleast_2d(X))
    z = acts[-1]
    return z[0] if single else z


def predict(model: Classifier, x):
    """Argmax class; ties go to the lowest index."""
    z = forward(model, x)
    out = np.argmax(z, axis=-1)
    return int(out) if np.ndim(out) == 0 else out


def logits_and_input_gradient(model, X, Y, kind):
    """Batched forward + backward.

    Returns ``(logits, loss_values, grad_x, bad)``; rows flagged ``bad`` have
    an undefined loss (degenerate DLR) and a zero gradient.
    """
    pre, acts = _forward_cache(model, X)
    Z = acts[-1]
    values, dZ, bad = batch_value_and_gradient(kind, Z, Y)
    dX, _ = _backward(model, pre, acts, dZ)
    return Z, values, dX, bad


def input_gradient(model: Classifier, x, y, loss) -> np.ndarray:
    """Gradient of ``loss(z(x), y)`` with respect to the input."""
    X = np.asarray(x, dtype=np.float64)
    _check_input(model, X)
    single = X.ndim == 1
    Xb = np.atleast_2d(X)
    Yb = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if Yb.shape != (Xb.shape[0],):
        raise ValueError("labels do not match inputs")
    if np.any(Yb < 0) or np.any(Yb >= model.num_classes):
        raise ValueError(f"label out of range [0, {model.num_classes})")
    kind = loss if not isinstance(loss, str) else SurrogateKind.parse(loss)
    _, _, dX, bad = logits_and_input_gradient(model, Xb, Yb, kind)
    if bad.any():
        raise DegenerateLogitsError("DLR denominator vanishes at this input")
    return dX[0] if single else dX


def loss_at(model: Classifier, x, y, loss) -> float:
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _check_input(model, X)
    _, values, _, bad = logits_and_input_gradient(model, X, np.atleast_1d(y), loss)
    if bad.any():
        raise DegenerateLogitsError("DLR denominator vanishes at this input")
    return float(values[0]) if values.size == 1 else values


# ---------------------------------------------------------------------------
# serialization


def save_model(model: Classifier, path) -> None:
    parts = [MAGIC, struct.pack("<HIII", FORMAT_VERSION, model.input_dim,
                                model.num_classes, len(model.layers))]
    for layer in model.layers:
        rows, cols = layer.weight.shape
        parts.append(struct.pack("<IIB", rows, cols, ACTIVATIONS.index(layer.activation)))
        parts.append(layer.weight.astype("<f8").tobytes(order="C"))
        parts.append(layer.bias.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path, name=None) -> Classifier:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ModelFormatError(f"{path}: truncated model file")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise ModelFormatError(f"{path}: bad magic bytes")
    version, D, C, n_layers = struct.unpack("<HIII", take(14))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version}")
    if n_layers == 0:
        raise ModelFormatError(f"{path}: no layers")
    layers = []
    expected_in = D
    for i in range(n_layers):
        rows, cols, tag = struct.unpack("<IIB", take(9))
        if tag >= len(ACTIVATIONS):
            raise ModelFormatError(f"{path}: unknown activation tag {tag}")
        if cols != expected_in:
            raise ModelFormatError(
                f"{path}: layer {i} has {cols} inputs, expected {expected_in}"
            )
        W = np.frombuffer(take(8 * rows * cols), dtype="<f8").reshape(rows, cols)
        b = np.frombuffer(take(8 * rows), dtype="<f8")
        layers.append(Layer(W.astype(np.float64), b.astype(np.float64), ACTIVATIONS[tag]))
        expected_in = rows
    if expected_in != C:
        raise ModelFormatError(f"{path}: final layer has {expected_in} outputs, header says {C}")
    if pos != len(data):
        raise ModelFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return Classifier(tuple(layers), name=name or Path(path).stem)


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + [f"x{i}" for i in range(ds.dim)])
        for x, y in zip(ds.X, ds.y):
            w.writerow([int(y)] + [repr(float(v)) for v in x])


def load_dataset(path, num_classes=None, name=None) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty dataset file")
    header = rows[0]
    D = len(header) - 1
    if D < 1 or header != ["y"] + [f"x{i}" for i in range(D)]:
        raise ValueError(f"{path}: header must be y,x0,...,x{{D-1}}")
    body = [r for r in rows[1:] if r]
    if any(len(r) != D + 1 for r in body):
        raise ValueError(f"{path}: ragged row")
    y = np.array([int(r[0]) for r in body], dtype=np.int64)
    X = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64).reshape(-1, D)
    C = num_classes if num_classes is not None else (int(y.max()) + 1 if y.size else 2)
    return Dataset(X, y, max(C, 2), name or Path(path).stem)


# ---------------------------------------------------------------------------
# training


def parse_arch(text: str) -> tuple[int, ...]:
    """Hidden layer widths from ``"64-64"``, ``"32"`` or ``"linear"``."""
    text = str(text).strip().lower()
    if text in ("", "linear", "none"):
        return ()
    try:
        widths = tuple(int(p) for p in text.replace(",", "-").split("-"))
    except ValueError:
        raise ValueError(f"bad architecture string {text!r}") from None
    if any(w <= 0 for w in widths):
        raise ValueError(f"layer widths must be positive: {text!r}")
    return widths


def init_mlp(D: int, hidden, C: int, rng: np.random.Generator, name="mlp") -> Classifier:
    dims = (D, *hidden, C)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        W = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
        act = "relu" if i < len(dims) - 2 else "identity"
        layers.append(Layer(W, np.zeros(n_out), act))
    return Classifier(tuple(layers), name=name)


@dataclass(frozen=True)
class AdversarialTraining:
    """Inner maximisation settings for robust training."""

    threat: "object"  # attack.ThreatModel; kept loose to avoid a cycle
    steps: int = 10
    step_size: float | None = None  # defaults to 2.5 * eps / steps


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple[int, ...] = (32, 32)
    epochs: int = 300
    lr: float = 0.5
    seed: int = 0
    adversarial: AdversarialTraining | None = None


def train(dataset: Dataset, config: TrainConfig, name=None) -> Classifier:
    """Full-batch gradient descent on mean cross-entropy.

    With ``config.adversarial`` set, each epoch first replaces the inputs by
    PGD-CE adversaries (random-sign start) and then takes the descent step on
    those, i.e. the empirical min-max robust risk.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    model = init_mlp(dataset.dim, config.hidden, dataset.num_classes, rng,
                     name=name or ("adv" if config.adversarial else "plain"))
    Ws = [np.array(l.weight) for l in model.layers]
    bs = [np.array(l.bias) for l in model.layers]
    acts_kind = [l.activation for l in model.layers]
    X, Y, n = dataset.X, dataset.y, len(dataset)

    def build():
        return Classifier(tuple(Layer(W, b, a) for W, b, a in zip(Ws, bs, acts_kind)),
                          name=model.name)

    for epoch in range(config.epochs):
        current = build()
        Xt = X
        if config.adversarial is not None:
            from .attack import adversarial_examples

            adv = config.adversarial
            Xt = adversarial_examples(
                current, X, Y, adv.threat, adv.steps,
                adv.step_size if adv.step_size is not None else 2.5 * adv.threat.eps / adv.steps,
                np.random.default_rng([config.seed, epoch]),
            )
        pre, acts = _forward_cache(current, Xt)
        _, dZ, _ = batch_value_and_gradient(SurrogateKind.CE, acts[-1], Y)
        _, grads = _backward(current, pre, acts, dZ / n, want_params=True)
        for i, (gW, gb) in enumerate(grads):
            Ws[i] -= config.lr * gW
            bs[i] -= config.lr * gb
    return build()


def accuracy(model: Classifier, dataset: Dataset) -> float:
    return float(np.mean(predict(model, dataset.X) == dataset.y))
