"""Training orchestration: epoch loop, callbacks, evaluation, checkpoints,
and the reference toy architecture exercising every block motif."""

import json
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .data import AugmentParams, iter_batches
from .errors import (CheckpointMagicError, CheckpointTruncatedError,
                     CheckpointVersionError, ConfigError, InputError, NumericalAbort)
from .fileio import atomic_write_bytes
from .layers import (BatchNorm, Conv2D, Dense, DenseBlock, DepthwiseSeparableConv,
                     Dropout, Flatten, LeakyReLU, MaxPool2D, Model, ResidualBlock,
                     Softmax)
from .optim import Adam, EarlyStopping, ReduceLROnPlateau, categorical_crossentropy
from .rng import STREAM_DROPOUT, STREAM_INIT, derived_rng

CHECKPOINT_MAGIC = b"LSNF"
CHECKPOINT_VERSION = 1


@dataclass
class PlateauConfig:
    patience: int = 5
    factor: float = 0.1
    min_delta: float = 1e-4
    min_lr: float = 1e-7


@dataclass
class EarlyStopConfig:
    patience: int = 10
    min_delta: float = 0.0


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    lr0: float = 1e-4
    image_size: int = 176
    seed: int = 0
    val_fraction: float = 0.2
    plateau: PlateauConfig = field(default_factory=PlateauConfig)
    early_stop: EarlyStopConfig = field(default_factory=EarlyStopConfig)
    augment: "AugmentParams | None" = field(default_factory=AugmentParams)
    workers: "int | None" = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be > 0, got {self.lr0}")

    def as_dict(self):
        d = asdict(self)
        d["augment"] = None if self.augment is None else asdict(self.augment)
        return d


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class TrainHistory:
    records: list
    best_epoch: int
    stopped_epoch: int  # 0 when the run completed all configured epochs

    def to_jsonl(self):
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)

    def summary(self):
        best = self.records[self.best_epoch - 1]
        return {
            "epochs_run": len(self.records),
            "stopped_epoch": self.stopped_epoch,
            "best_epoch": self.best_epoch,
            "best_val_loss": best.val_loss,
            "best_val_acc": best.val_acc,
            "final_lr": self.records[-1].lr,
        }


def build_lesionnet(image_size, seed=0):
    """Deterministic reference net: stem conv, residual block, dense block,
    depthwise-separable conv, pooling pyramid, then the dense head."""
    if image_size < 16:
        raise ConfigError(f"image_size must be >= 16 for the pooling pyramid, got {image_size}")
    rng = derived_rng(seed, STREAM_INIT)
    s = image_size
    for _ in range(4):
        s //= 2
    flat = 16 * s * s
    return Model([
        ("stem", Conv2D(3, 8, 3, rng=rng)),
        ("stem_act", LeakyReLU(0.01)),
        ("pool1", MaxPool2D(2)),
        ("res1", ResidualBlock(8, rng=rng)),
        ("dense1", DenseBlock(8, growth=4, n_layers=2, rng=rng)),
        ("sepconv", DepthwiseSeparableConv(16, 16, rng=rng)),
        ("sep_act", LeakyReLU(0.01)),
        ("pool2", MaxPool2D(2)),
        ("pool3", MaxPool2D(2)),
        ("pool4", MaxPool2D(2)),
        ("flatten", Flatten()),
        ("fc1", Dense(flat, 64, rng=rng)),
        ("fc1_act", LeakyReLU(0.01)),
        ("fc1_bn", BatchNorm(64)),
        ("drop", Dropout(0.5)),
        ("fc2", Dense(64, 2, rng=rng)),
        ("softmax", Softmax()),
    ])


def evaluate(model, ds, batch_size, image_size, rescale=1.0 / 255.0, workers=None):
    """Deterministic evaluation pass; returns (MetricsReport, ConfusionMatrix,
    mean loss). Puts the model in evaluation mode."""
    if len(ds) == 0:
        raise InputError("cannot evaluate an empty dataset")
    model.set_mode("eval")
    total_loss = 0.0
    preds, trues = [], []
    for batch in iter_batches(ds, batch_size, image_size=image_size, rescale=rescale,
                              workers=workers):
        probs = model.forward(batch.x)
        loss, _ = categorical_crossentropy(probs, batch.y)
        total_loss += loss * batch.x.shape[0]
        preds.extend(int(i) for i in probs.argmax(axis=1))
        trues.extend(int(i) for i in batch.y.argmax(axis=1))
    cm = metrics_mod.confusion(preds, trues)
    return metrics_mod.report(cm), cm, total_loss / len(ds)


def train(model, train_ds, val_ds, cfg):
    """Run the full protocol: augmented batches, cross-entropy/Adam updates,
    validation, plateau + early-stop callbacks, best-weight restoration."""
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise InputError("training and validation datasets must be non-empty")
    adam = Adam(lr=cfg.lr0)
    plateau = ReduceLROnPlateau(cfg.lr0, patience=cfg.plateau.patience,
                                factor=cfg.plateau.factor,
                                min_delta=cfg.plateau.min_delta,
                                min_lr=cfg.plateau.min_lr)
    early = EarlyStopping(patience=cfg.early_stop.patience,
                          min_delta=cfg.early_stop.min_delta)
    val_rescale = cfg.augment.rescale if cfg.augment is not None else 1.0 / 255.0
    records = []
    stopped_epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        model.set_mode("train")
        lr_used = plateau.lr
        loss_sum = 0.0
        correct = 0
        seen = 0
        batches = iter_batches(train_ds, cfg.batch_size, image_size=cfg.image_size,
                               shuffle=True, params=cfg.augment, seed=cfg.seed,
                               epoch=epoch, workers=cfg.workers)
        for step, batch in enumerate(batches):
            probs = model.forward(batch.x, rng=derived_rng(cfg.seed, STREAM_DROPOUT, epoch, step))
            loss, dlogits = categorical_crossentropy(probs, batch.y)
            if not math.isfinite(loss):
                raise NumericalAbort(
                    f"non-finite training loss at epoch {epoch}, step {step}",
                    epoch=epoch, step=step)
            model.backward_logits(dlogits.astype(probs.dtype))
            adam.lr = lr_used
            adam.step(model.named_params(), model.named_grads())
            n = batch.x.shape[0]
            loss_sum += loss * n
            correct += int((probs.argmax(axis=1) == batch.y.argmax(axis=1)).sum())
            seen += n
        # Only loss/accuracy feed the callbacks; a half-trained model
        # legitimately yields 0/0 precision, so that warning is noise here.
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", message=".* is 0/0", category=RuntimeWarning)
            val_report, _, val_loss = evaluate(model, val_ds, cfg.batch_size,
                                               cfg.image_size, rescale=val_rescale,
                                               workers=cfg.workers)
        if not math.isfinite(val_loss):
            raise NumericalAbort(f"non-finite validation loss at epoch {epoch}", epoch=epoch)
        plateau.update(val_loss)
        stop = early.update(val_loss, model, epoch)
        records.append(EpochRecord(epoch=epoch, train_loss=loss_sum / seen,
                                   train_acc=correct / seen, val_loss=val_loss,
                                   val_acc=val_report.accuracy, lr=lr_used))
        if stop:
            stopped_epoch = epoch
            break
    early.restore(model)
    return TrainHistory(records=records, best_epoch=early.best_epoch,
                        stopped_epoch=stopped_epoch)


def _tensor_entries(named):
    return [{"name": name, "shape": list(arr.shape), "dtype": np.dtype(arr.dtype).str}
            for name, arr in named.items()]


def save_checkpoint(model, path, *, image_size=None, seed=None, config=None):
    """Serialize topology + parameters + persistent state.

    Layout: magic "LSNF", u16 version, u32 manifest length, manifest JSON,
    then each tensor's raw little-endian bytes in manifest order (parameters
    first, state second).
    """
    params = model.named_params()
    state = model.named_state()
    manifest = {
        "topology": model.topology(),
        "params": _tensor_entries(params),
        "state": _tensor_entries(state),
        "image_size": image_size,
        "seed": seed,
        "config": config,
    }
    manifest_blob = json.dumps(manifest).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC,
              struct.pack("<H", CHECKPOINT_VERSION),
              struct.pack("<I", len(manifest_blob)),
              manifest_blob]
    for arr in list(params.values()) + list(state.values()):
        chunks.append(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    atomic_write_bytes(path, b"".join(chunks))


def load_checkpoint(path):
    """Rebuild a Model from a checkpoint; raises distinct errors for bad
    magic, unsupported version, and truncated payloads. The manifest is
    attached as ``model.meta``."""
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointMagicError(f"bad magic {blob[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    if len(blob) < 10:
        raise CheckpointTruncatedError(10, len(blob))
    (version,) = struct.unpack("<H", blob[4:6])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    (manifest_len,) = struct.unpack("<I", blob[6:10])
    if len(blob) < 10 + manifest_len:
        raise CheckpointTruncatedError(10 + manifest_len, len(blob))
    manifest = json.loads(blob[10 : 10 + manifest_len].decode("utf-8"))
    entries = manifest["params"] + manifest["state"]
    payload = 10 + manifest_len
    expected = payload + sum(
        int(np.prod(e["shape"])) * np.dtype(e["dtype"]).itemsize for e in entries)
    if len(blob) < expected:
        raise CheckpointTruncatedError(expected, len(blob))

    model = Model.from_topology(manifest["topology"])
    offset = payload
    loaded = {"params": {}, "state": {}}
    for section in ("params", "state"):
        for e in manifest[section]:
            count = int(np.prod(e["shape"]))
            nbytes = count * np.dtype(e["dtype"]).itemsize
            arr = np.frombuffer(blob[offset : offset + nbytes], dtype=e["dtype"])
            loaded[section][e["name"]] = arr.reshape(e["shape"]).copy()
            offset += nbytes
    for path_name, layer, key in model.param_slots():
        layer.params[key] = loaded["params"][path_name]
    for path_name, layer, key in model.state_slots():
        layer.state[key] = loaded["state"][path_name]
    model.meta = {"image_size": manifest.get("image_size"), "seed": manifest.get("seed"),
                  "config": manifest.get("config")}
    return model
