"""Loss, Adam, reduce-on-plateau schedule, and early stopping."""

import numpy as np

from .errors import LabelError, ShapeError

PROB_CLAMP = 1e-7


def categorical_crossentropy(yhat, y):
    """Mean cross-entropy of predicted probabilities against one-hot labels.

    Returns (loss, dlogits) where dlogits = (yhat - y) / N is the gradient
    with respect to the pre-softmax logits (fused softmax backward).
    Predictions are clamped to [1e-7, 1 - 1e-7] before the log.
    """
    yhat = np.asarray(yhat)
    y = np.asarray(y)
    if yhat.shape != y.shape or yhat.ndim != 2:
        raise ShapeError(f"prediction/label shapes disagree: {yhat.shape} vs {y.shape}")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
        raise LabelError("labels must be one-hot rows")
    n = yhat.shape[0]
    clamped = np.clip(yhat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = float(-(y * np.log(clamped)).sum() / n)
    return loss, (yhat - y) / n


class Adam:
    """Adam with bias correction; per-parameter moment slots keyed by name."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        """Update ``params`` in place from matching ``grads`` (dicts by name)."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in params.items():
            g = grads[name]
            if g is None:
                continue
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m += (1 - b1) * (g - m)
            v += (1 - b2) * (g * g - v)
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


class ReduceLROnPlateau:
    """Multiply lr by ``factor`` once the monitored loss stalls past ``patience``."""

    def __init__(self, lr, patience=5, factor=0.1, min_delta=1e-4, min_lr=1e-7):
        self.lr = float(lr)
        self.patience = int(patience)
        self.factor = float(factor)
        self.min_delta = float(min_delta)
        self.min_lr = float(min_lr)
        self.best = float("inf")
        self.wait = 0

    def update(self, val_loss):
        """Record one epoch's validation loss; returns the (possibly reduced) lr."""
        if val_loss < self.best - self.min_delta:
            self.best = float(val_loss)
            self.wait = 0
        else:
            self.wait += 1
            if self.wait > self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.wait = 0
        return self.lr


class EarlyStopping:
    """Stop once validation loss has not improved for ``patience`` epochs,
    keeping a snapshot of the best epoch's weights for restoration."""

    def __init__(self, patience=10, min_delta=0.0):
        self.patience = int(patience)
        self.min_delta = float(min_delta)
        self.best = float("inf")
        self.best_epoch = 0
        self.wait = 0
        self.best_weights = None

    def update(self, val_loss, model, epoch):
        """Returns True when training should stop."""
        if val_loss < self.best - self.min_delta:
            self.best = float(val_loss)
            self.best_epoch = int(epoch)
            self.wait = 0
            self.best_weights = model.snapshot()
            return False
        self.wait += 1
        return self.wait >= self.patience

    def restore(self, model):
        if self.best_weights is not None:
            model.restore(self.best_weights)
