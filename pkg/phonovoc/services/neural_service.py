import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from phonovoc.utils.errors import ConfigError, CorruptStream, DimensionError, EmptyCorpus, TrainingDiverged
from phonovoc.utils.schemes import EXPECTED_K

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"PVMW"
WEIGHTS_VERSION = 1
OUTPUT_KINDS = ("softmax", "linear")

# Output index of the "class present" unit in every analyzer network
PRESENT = 1


@dataclass
class MlpWeights:
    """Parameters of a feed-forward network with sigmoid hidden layers."""

    layer_dims: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    output_kind: str = "softmax"
    in_mean: Optional[np.ndarray] = None
    in_scale: Optional[np.ndarray] = None
    out_mean: Optional[np.ndarray] = None
    out_scale: Optional[np.ndarray] = None

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2:
            raise ValueError("A network needs at least an input and an output layer")
        if self.output_kind not in OUTPUT_KINDS:
            raise ValueError(f"Unknown output kind: {self.output_kind}")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise DimensionError("Number of weight matrices does not match layer_dims")

        for index, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_dims[index], self.layer_dims[index + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise DimensionError(f"Layer {index} has shape {w.shape}/{b.shape}, expected {expected}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"Layer {index} has non-finite parameters")

        if self.in_mean is None:
            self.in_mean = np.zeros(self.layer_dims[0])
        if self.in_scale is None:
            self.in_scale = np.ones(self.layer_dims[0])
        if self.out_mean is None:
            self.out_mean = np.zeros(self.layer_dims[-1])
        if self.out_scale is None:
            self.out_scale = np.ones(self.layer_dims[-1])

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @classmethod
    def initialize(cls, layer_dims: Sequence[int], output_kind: str = "softmax", seed: int = 0) -> "MlpWeights":
        """Xavier-uniform weights and zero biases from a seeded generator."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(tuple(layer_dims), weights, biases, output_kind)

    @classmethod
    def zeros(cls, layer_dims: Sequence[int], output_kind: str = "softmax") -> "MlpWeights":
        weights = [np.zeros((a, b)) for a, b in zip(layer_dims[:-1], layer_dims[1:])]
        biases = [np.zeros(b) for b in layer_dims[1:]]
        return cls(tuple(layer_dims), weights, biases, output_kind)

    def copy(self) -> "MlpWeights":
        return MlpWeights(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_kind,
            self.in_mean.copy(),
            self.in_scale.copy(),
            self.out_mean.copy(),
            self.out_scale.copy(),
        )


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exponentials = np.exp(shifted)
    return exponentials / exponentials.sum(axis=-1, keepdims=True)


def _activations(w: MlpWeights, normalized_inputs: np.ndarray) -> List[np.ndarray]:
    """Layer outputs in normalized space; the last entry is the network output."""
    layers = [normalized_inputs]
    hidden = normalized_inputs
    last = len(w.weights) - 1
    for index, (weight, bias) in enumerate(zip(w.weights, w.biases)):
        pre = hidden @ weight + bias
        if index < last:
            hidden = expit(pre)
        elif w.output_kind == "softmax":
            hidden = softmax(pre)
        else:
            hidden = pre
        layers.append(hidden)
    return layers


def _normalize_inputs(w: MlpWeights, inputs: np.ndarray) -> np.ndarray:
    return (inputs - w.in_mean) / w.in_scale


def mlp_forward(w: MlpWeights, inputs: np.ndarray) -> np.ndarray:
    """
    Run a forward pass.

    Args:
        w: Network parameters
        inputs: A single input vector or an (n, input_dim) batch

    Returns:
        np.ndarray: Softmax probabilities, or de-normalized linear outputs

    Raises:
        DimensionError: If the input dimension does not match the network
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[-1] != w.input_dim:
        raise DimensionError(f"Network expects {w.input_dim} inputs, got {inputs.shape[-1]}")
    single = inputs.ndim == 1
    batch = np.atleast_2d(inputs)
    outputs = _activations(w, _normalize_inputs(w, batch))[-1]
    if w.output_kind == "linear":
        outputs = outputs * w.out_scale + w.out_mean
    return outputs[0] if single else outputs


def mlp_loss_and_gradients(
    w: MlpWeights, inputs: np.ndarray, targets: np.ndarray
) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """
    Loss and analytic gradients for one batch.

    Softmax networks use mean cross-entropy against (one-hot or soft) targets;
    linear networks use the mean squared error in normalized output space.

    Returns:
        Tuple of (loss, weight gradients, bias gradients)
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    n_samples = inputs.shape[0]
    layers = _activations(w, _normalize_inputs(w, inputs))
    outputs = layers[-1]

    if w.output_kind == "softmax":
        loss = -float(np.sum(targets * np.log(np.maximum(outputs, 1e-300)))) / n_samples
        delta = (outputs - targets) / n_samples
    else:
        normalized_targets = (targets - w.out_mean) / w.out_scale
        error = outputs - normalized_targets
        loss = float(np.mean(error ** 2))
        delta = 2.0 * error / error.size

    weight_grads: List[np.ndarray] = [np.empty(0)] * len(w.weights)
    bias_grads: List[np.ndarray] = [np.empty(0)] * len(w.weights)
    for index in range(len(w.weights) - 1, -1, -1):
        weight_grads[index] = layers[index].T @ delta
        bias_grads[index] = delta.sum(axis=0)
        if index > 0:
            hidden = layers[index]
            delta = (delta @ w.weights[index].T) * hidden * (1.0 - hidden)
    return loss, weight_grads, bias_grads


@dataclass
class TrainingConfig:
    """Hyper-parameters of mini-batch SGD training."""

    hidden_dims: Sequence[int] = (64,)
    output_kind: str = "softmax"
    learning_rate: float = 0.1
    momentum: float = 0.0
    epochs: int = 40
    batch_size: int = 32
    patience: int = 3
    cv_fraction: float = 0.1
    seed: int = 0
    normalize_inputs: bool = True
    normalize_outputs: bool = True


@dataclass
class TrainingHistory:
    """Per-epoch losses; cv_loss is the best validation loss seen so far."""

    train_loss: List[float] = field(default_factory=list)
    cv_loss: List[float] = field(default_factory=list)
    stopped_early: bool = False

    def to_dict(self) -> Dict[str, object]:
        return {"train_loss": self.train_loss, "cv_loss": self.cv_loss, "stopped_early": self.stopped_early}


def _batch_loss(w: MlpWeights, inputs: np.ndarray, targets: np.ndarray) -> float:
    return mlp_loss_and_gradients(w, inputs, targets)[0]


def _scale(values: np.ndarray) -> np.ndarray:
    scale = values.std(axis=0)
    return np.where(scale > 1e-8, scale, 1.0)


def train_mlp(inputs: np.ndarray, targets: np.ndarray, config: TrainingConfig) -> Tuple[MlpWeights, TrainingHistory]:
    """
    Train a network with mini-batch stochastic gradient descent.

    A seeded shuffle holds out cv_fraction of the data for cross-validation
    (or validates on the training data when the set is too small). The
    weights with the best validation loss are returned; training stops after
    `patience` epochs without improvement.

    Args:
        inputs: (n, input_dim) array
        targets: (n, output_dim) array (one-hot or soft labels for softmax)
        config: Training hyper-parameters

    Returns:
        Tuple of (best weights, training history)

    Raises:
        EmptyCorpus: If no training sample is given
        DimensionError: If inputs and targets disagree in length
        TrainingDiverged: If the loss becomes non-finite
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if inputs.shape[0] == 0:
        raise EmptyCorpus("No training samples")
    if inputs.shape[0] != targets.shape[0]:
        raise DimensionError(f"{inputs.shape[0]} inputs but {targets.shape[0]} targets")

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(inputs.shape[0])
    n_cv = int(round(config.cv_fraction * len(order)))
    if n_cv < 1 or n_cv >= len(order):
        train_idx, cv_idx = order, order
    else:
        train_idx, cv_idx = order[n_cv:], order[:n_cv]

    dims = (inputs.shape[1], *config.hidden_dims, targets.shape[1])
    w = MlpWeights.initialize(dims, config.output_kind, seed=config.seed)
    train_x = inputs[train_idx]
    if config.normalize_inputs:
        w.in_mean = train_x.mean(axis=0)
        w.in_scale = _scale(train_x)
    if config.output_kind == "linear" and config.normalize_outputs:
        w.out_mean = targets[train_idx].mean(axis=0)
        w.out_scale = _scale(targets[train_idx])

    velocity_w = [np.zeros_like(m) for m in w.weights]
    velocity_b = [np.zeros_like(b) for b in w.biases]
    best = w.copy()
    best_loss = _batch_loss(w, inputs[cv_idx], targets[cv_idx])
    history = TrainingHistory()
    stale_epochs = 0

    for epoch in range(config.epochs):
        shuffled = train_idx[rng.permutation(len(train_idx))]
        epoch_losses = []
        for start in range(0, len(shuffled), config.batch_size):
            batch = shuffled[start:start + config.batch_size]
            loss, grad_w, grad_b = mlp_loss_and_gradients(w, inputs[batch], targets[batch])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"Loss became non-finite at epoch {epoch}")
            epoch_losses.append(loss * len(batch))
            for index in range(len(w.weights)):
                velocity_w[index] = config.momentum * velocity_w[index] - config.learning_rate * grad_w[index]
                velocity_b[index] = config.momentum * velocity_b[index] - config.learning_rate * grad_b[index]
                w.weights[index] += velocity_w[index]
                w.biases[index] += velocity_b[index]

        cv_loss = _batch_loss(w, inputs[cv_idx], targets[cv_idx])
        if not np.isfinite(cv_loss):
            raise TrainingDiverged(f"Validation loss became non-finite at epoch {epoch}")
        if cv_loss < best_loss:
            best_loss = cv_loss
            best = w.copy()
            stale_epochs = 0
        else:
            stale_epochs += 1

        history.train_loss.append(float(sum(epoch_losses) / len(train_idx)))
        history.cv_loss.append(float(best_loss))
        logger.debug("epoch %d: train %.6f cv %.6f", epoch, history.train_loss[-1], cv_loss)
        if stale_epochs >= config.patience:
            history.stopped_early = True
            break

    return best, history


@dataclass
class PosteriorFrame:
    """Class-conditional posteriors of one frame."""

    values: np.ndarray

    @property
    def binarized(self) -> np.ndarray:
        return binarize(self)


def binarize(frame: Union[PosteriorFrame, np.ndarray]) -> np.ndarray:
    """1 where the posterior is at least 0.5, else 0 (ties map to 1)."""
    values = frame.values if isinstance(frame, PosteriorFrame) else np.asarray(frame)
    return (values >= 0.5).astype(np.uint8)


@dataclass
class AnalyzerBank:
    """K two-class analyzer networks, one per phonological class."""

    scheme: str
    class_names: Tuple[str, ...]
    networks: List[MlpWeights]

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        if len(set(self.class_names)) != len(self.class_names):
            raise ConfigError("Class names must be unique")
        if len(self.networks) != len(self.class_names):
            raise ConfigError(f"{len(self.class_names)} classes but {len(self.networks)} networks")
        expected = EXPECTED_K.get(self.scheme)
        if expected is not None and len(self.class_names) != expected:
            raise ConfigError(f"Scheme {self.scheme} needs {expected} classes, got {len(self.class_names)}")
        for network in self.networks:
            if network.output_kind != "softmax" or network.output_dim != 2:
                raise ConfigError("Analyzer networks must have a 2-way softmax output")

    @property
    def k(self) -> int:
        return len(self.class_names)


def analyze_matrix(bank: AnalyzerBank, stacked: np.ndarray) -> np.ndarray:
    """(n_frames, K) matrix of "class present" probabilities."""
    stacked = np.atleast_2d(np.asarray(stacked, dtype=np.float64))
    if stacked.shape[0] == 0:
        return np.zeros((0, bank.k))
    columns = [mlp_forward(network, stacked)[:, PRESENT] for network in bank.networks]
    return np.stack(columns, axis=1)


def analyze(bank: AnalyzerBank, stacked: np.ndarray) -> List[PosteriorFrame]:
    """
    Run the analyzer bank over stacked acoustic features.

    Raises:
        DimensionError: If the feature dimension does not match the bank
    """
    return [PosteriorFrame(row) for row in analyze_matrix(bank, stacked)]


def save_weights(w: MlpWeights, path: Union[str, Path], metadata: Optional[Dict[str, object]] = None) -> Path:
    """
    Write weights as a versioned single-precision binary file plus a JSON sidecar.

    Layout (little-endian): magic, u16 version, u8 output kind, u16 layer
    count, u32 dims; then per layer the row-major weight matrix and bias;
    then input mean/scale and output mean/scale, all float32.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = WEIGHTS_MAGIC + struct.pack(
        "<HBH", WEIGHTS_VERSION, OUTPUT_KINDS.index(w.output_kind), len(w.layer_dims)
    ) + struct.pack(f"<{len(w.layer_dims)}I", *w.layer_dims)

    blocks = [header]
    for weight, bias in zip(w.weights, w.biases):
        blocks.append(weight.astype("<f4").tobytes(order="C"))
        blocks.append(bias.astype("<f4").tobytes())
    for vector in (w.in_mean, w.in_scale, w.out_mean, w.out_scale):
        blocks.append(np.asarray(vector).astype("<f4").tobytes())
    path.write_bytes(b"".join(blocks))

    sidecar = {
        "layer_dims": list(w.layer_dims),
        "output_kind": w.output_kind,
        "n_parameters": w.n_parameters,
        "format_version": WEIGHTS_VERSION,
    }
    sidecar.update(metadata or {})
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def load_weights(path: Union[str, Path]) -> MlpWeights:
    """
    Read a weight file written by save_weights.

    Raises:
        ConfigError: If the file does not exist
        CorruptStream: If the file is malformed or truncated
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Missing model file: {path}")
    data = path.read_bytes()
    if data[:4] != WEIGHTS_MAGIC:
        raise CorruptStream(f"Not a weight file: {path}")
    try:
        version, kind, n_layers = struct.unpack_from("<HBH", data, 4)
        if version != WEIGHTS_VERSION:
            raise CorruptStream(f"Unsupported weight file version {version}: {path}")
        offset = 4 + struct.calcsize("<HBH")
        dims = struct.unpack_from(f"<{n_layers}I", data, offset)
        offset += 4 * n_layers

        def take(count):
            nonlocal offset
            end = offset + 4 * count
            if end > len(data):
                raise CorruptStream(f"Truncated weight file: {path}")
            values = np.frombuffer(data[offset:end], dtype="<f4").astype(np.float64)
            offset = end
            return values

        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(take(fan_in * fan_out).reshape(fan_in, fan_out))
            biases.append(take(fan_out))
        in_mean, in_scale = take(dims[0]), take(dims[0])
        out_mean, out_scale = take(dims[-1]), take(dims[-1])
    except struct.error:
        raise CorruptStream(f"Truncated weight file: {path}")
    if offset != len(data):
        raise CorruptStream(f"Trailing bytes in weight file: {path}")
    try:
        return MlpWeights(dims, weights, biases, OUTPUT_KINDS[kind], in_mean, in_scale, out_mean, out_scale)
    except (IndexError, ValueError) as e:
        raise CorruptStream(f"Invalid weight file {path}: {e}")


def load_bank(scheme: str, class_names: Sequence[str], paths: Sequence[Union[str, Path]]) -> AnalyzerBank:
    """Load one analyzer network per class."""
    return AnalyzerBank(scheme, tuple(class_names), [load_weights(p) for p in paths])
