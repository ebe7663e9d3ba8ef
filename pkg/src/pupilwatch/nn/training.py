"""Mini-batch Adam training with early stopping on validation MCC."""

import hashlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..evaluation import confusion, mcc
from .model import Architecture, Hyperparams, init_params, loss_and_gradients, predict_proba

log = logging.getLogger(__name__)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_mcc: list = field(default_factory=list)
    chosen_epoch: int = -1  # 1-based
    seed: int = 0
    wall_time_s: float = 0.0
    n_train: int = 0
    n_val: int = 0

    @property
    def best_val_mcc(self):
        return self.val_mcc[self.chosen_epoch - 1] if self.chosen_epoch > 0 else float("nan")


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in params:  # fixed key order keeps updates reproducible
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _xy(data):
    if hasattr(data, "x") and hasattr(data, "y"):
        return np.asarray(data.x, dtype=np.float64), np.asarray(data.y).astype(np.float64), getattr(data, "sources", None)
    x, y = data
    return np.asarray(x, dtype=np.float64), np.asarray(y).astype(np.float64), None


def canonical_order(x, y):
    """Content-based ordering, so the seeded shuffle does not depend on input order."""
    keys = [hashlib.blake2b(x[i].tobytes() + y[i].tobytes(), digest_size=16).digest() for i in range(len(y))]
    return np.array(sorted(range(len(y)), key=keys.__getitem__), dtype=int)


def _participants(sources):
    return {s.participant_id for s in sources} if sources else set()


def train(train_data, val_data, arch=None, hyper=None, seed=0, progress=None):
    """Fit the dual-head CNN.

    Parameters
    ----------
    train_data, val_data : WindowSet or (x, y)
        Windows of shape (n, channels, 250) with 0/1 labels.
    arch, hyper : Architecture, Hyperparams
        ``arch.in_channels`` is taken from the data when ``arch`` is omitted.
    seed : int
        Drives initialization, shuffling and dropout.

    Returns
    -------
    model : ModelParameters
        Parameters from the epoch with the highest validation MCC.
    report : TrainReport
    """
    t0 = time.perf_counter()
    x, y, tr_src = _xy(train_data)
    xv, yv, va_src = _xy(val_data)
    if len(y) == 0:
        raise ValueError("empty training set")
    if len(yv) == 0:
        raise ValueError("empty validation set")
    shared = _participants(tr_src) & _participants(va_src)
    if shared:
        raise ValueError(f"participants in both train and validation: {sorted(shared)}")
    hyper = hyper or Hyperparams()
    arch = arch or Architecture(in_channels=x.shape[1])

    order = canonical_order(x, y)
    x, y = x[order], y[order]

    ss = np.random.SeedSequence(seed)
    init_seed, shuffle_ss, dropout_ss = ss.spawn(3)
    model = init_params(arch, hyper, seed=int(init_seed.generate_state(1)[0]))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)
    opt = Adam(model.params, hyper.learning_rate, hyper.beta1, hyper.beta2, hyper.adam_eps)

    report = TrainReport(seed=seed, n_train=len(y), n_val=len(yv))
    best, best_mcc, since_best = None, -np.inf, 0
    for epoch in range(1, hyper.epochs + 1):
        perm = shuffle_rng.permutation(len(y))
        if hyper.max_windows_per_epoch:
            perm = perm[:hyper.max_windows_per_epoch]
        losses = []
        for s in range(0, len(perm), hyper.batch_size):
            b = perm[s:s + hyper.batch_size]
            loss, grads = loss_and_gradients(model, x[b], y[b], dropout_rng, sample_ids=order[b])
            opt.step(model.params, grads)
            losses.append(loss * len(b))
        report.train_loss.append(float(np.sum(losses) / len(perm)))
        score = mcc(confusion(yv, predict_proba(model, xv)))
        report.val_mcc.append(score)
        msg = f"epoch {epoch}: loss {report.train_loss[-1]:.4f} val_mcc {score:.4f}"
        log.info(msg)
        if progress:
            progress(msg)
        if score > best_mcc:
            best, best_mcc, since_best = model.copy(), score, 0
            report.chosen_epoch = epoch
        else:
            since_best += 1
            if since_best >= hyper.patience:
                break
    report.wall_time_s = time.perf_counter() - t0
    return best, report
