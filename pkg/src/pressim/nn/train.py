"""Mini-batch Adam training with seeded shuffling and resumable state."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceDetected, EmptyDataset, ShapeMismatch
from . import losses
from .losses import LossMode
from .model import Network, NetworkKind
from .optim import Adam

FUSION_TOTAL = 2.0


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_mode: LossMode = LossMode.MSE
    fusion_weights: tuple[float, float] = (1.0, 1.0)
    seed: int = 0
    # Stop early once the inference-mode train MSE falls below this value.
    target_mse: float | None = None
    # Re-evaluate the whole train split in inference mode after every epoch.
    eval_train: bool = False

    def __post_init__(self):
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ValueError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        object.__setattr__(self, "loss_mode", LossMode(self.loss_mode))


@dataclass
class TrainingSet:
    """Model inputs and normalised pressure targets.

    ``inputs`` is one array, or a tuple of arrays for multi-input networks.
    ``aux`` carries the frozen deformation-network output needed by the
    literal fused loss.
    """

    inputs: object
    targets: np.ndarray
    aux: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.targets)
        firsts = self.inputs if isinstance(self.inputs, tuple) else (self.inputs,)
        if any(len(a) != n for a in firsts) or (self.aux is not None and len(self.aux) != n):
            raise ShapeMismatch("inputs, targets and aux disagree on sample count")

    def __len__(self):
        return len(self.targets)

    def take(self, idx) -> "TrainingSet":
        if isinstance(self.inputs, tuple):
            inputs = tuple(a[idx] for a in self.inputs)
        else:
            inputs = self.inputs[idx]
        aux = None if self.aux is None else self.aux[idx]
        return TrainingSet(inputs, self.targets[idx], aux)


@dataclass
class TrainHistory:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    train_mae: list[float] = field(default_factory=list)
    train_eval_mse: list[float] = field(default_factory=list)
    train_eval_mae: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.epoch)

    COLUMNS = ("epoch", "train_loss", "train_mse", "train_mae", "train_eval_mse",
               "train_eval_mae", "val_mse", "val_mae")

    def to_csv(self) -> str:
        rows = [",".join(self.COLUMNS)]
        for i in range(len(self)):
            cells = []
            for col in self.COLUMNS:
                values = getattr(self, col)
                cells.append(repr(values[i]) if i < len(values) else "")
            rows.append(",".join(cells))
        return "\n".join(rows) + "\n"


def evaluate(net: Network, data: TrainingSet, batch_size: int = 256) -> tuple[float, float]:
    """Inference-mode (MSE, MAE) over a dataset, in normalised units."""
    if len(data) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    pred = net.predict(data.inputs, batch_size).astype(np.float64)
    r = pred - data.targets
    return float(np.mean(r * r)), float(np.mean(np.abs(r)))


def _project_fusion(w: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {alpha, beta >= 0, alpha + beta = 2}."""
    shifted = w + (FUSION_TOTAL - w.sum()) / 2.0
    return np.clip(shifted, 0.0, FUSION_TOTAL).astype(w.dtype)


def _objective(net, hyper, pred, batch):
    """Loss value, dL/dpred and (for the fused loss) dL/d(alpha, beta)."""
    if hyper.loss_mode is LossMode.MSE:
        value, grad = losses.mse(pred, batch.targets)
        return value, grad, None
    if net.kind is NetworkKind.PSN:
        if batch.aux is None:
            raise ValueError("the fused loss needs the deformation-network output as aux")
        a, b = (float(v) for v in net.fusion)
        value, dp, _, da, db = losses.fused_abs_sum(pred, batch.aux, batch.targets, a, b)
        return value, dp, np.array([da, db], dtype=net.dtype)
    value, grad = losses.squared_error_sum(pred, batch.targets)
    return value, grad, None


def train(net: Network, data: TrainingSet, hyper: Hyperparams,
          validation: TrainingSet | None = None, log=None) -> tuple[Network, TrainHistory]:
    """Train ``net`` in place until it has completed ``hyper.epochs`` epochs.

    Training resumes from ``net.epoch`` and ``net.optimizer_state``, so a
    network restored from a checkpoint continues exactly where it stopped.
    Shuffling uses ``default_rng([seed, epoch])`` and dropout uses
    ``default_rng([seed, epoch, step])``.
    """
    if len(data) == 0:
        raise EmptyDataset("training set is empty")
    n = len(data)
    opt = Adam(hyper.learning_rate, hyper.adam_beta1, hyper.adam_beta2, hyper.adam_eps,
               state=net.optimizer_state)
    fused = hyper.loss_mode is LossMode.EQ4_LITERAL and net.kind is NetworkKind.PSN
    if fused and net.fusion is None:
        net.fusion = _project_fusion(np.asarray(hyper.fusion_weights, dtype=net.dtype))
    history = TrainHistory()
    targets = np.asarray(data.targets, dtype=net.dtype)
    data = TrainingSet(data.inputs, targets, data.aux)

    # Overflow surfaces as a non-finite loss and is reported as DivergenceDetected.
    with np.errstate(over="ignore", invalid="ignore"):
        while net.epoch < hyper.epochs:
            epoch = net.epoch
            order = np.random.default_rng([hyper.seed, epoch]).permutation(n)
            sums = np.zeros(3)  # loss, squared error, absolute error (sample-weighted)
            for step, start in enumerate(range(0, n, hyper.batch_size)):
                batch = data.take(order[start:start + hyper.batch_size])
                rng = np.random.default_rng([hyper.seed, epoch, step])
                pred = net.forward(batch.inputs, training=True, rng=rng)
                value, grad, dfusion = _objective(net, hyper, pred, batch)
                if not math.isfinite(value):
                    raise DivergenceDetected(epoch, value)
                net.backward(grad)
                params, grads = net.parameters(), net.gradients()
                if fused:
                    params["fusion"], grads["fusion"] = net.fusion, dfusion
                opt.step(params, grads)
                if fused:
                    net.fusion = _project_fusion(net.fusion)
                r = pred.astype(np.float64) - batch.targets
                m = len(batch)
                sums += (value * m, np.mean(r * r) * m, np.mean(np.abs(r)) * m)
            net.epoch = epoch + 1
            net.optimizer_state = opt.state()

            history.epoch.append(net.epoch)
            history.train_loss.append(float(sums[0] / n))
            history.train_mse.append(float(sums[1] / n))
            history.train_mae.append(float(sums[2] / n))
            if not all(map(math.isfinite, sums)):
                raise DivergenceDetected(epoch, float(sums[0]))
            if hyper.eval_train or hyper.target_mse is not None:
                mse_, mae_ = evaluate(net, data)
                history.train_eval_mse.append(mse_)
                history.train_eval_mae.append(mae_)
            if validation is not None and len(validation):
                vm, va = evaluate(net, validation)
                history.val_mse.append(vm)
                history.val_mae.append(va)
            if log is not None:
                log(net, history)
            if hyper.target_mse is not None and history.train_eval_mse[-1] < hyper.target_mse:
                break
    return net, history
