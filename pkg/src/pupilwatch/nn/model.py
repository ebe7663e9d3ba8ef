"""Dual-head 1-D CNN: event classifier plus pupil-diameter reconstruction."""

from dataclasses import dataclass, field, replace

import numpy as np

from . import layers

EPS = 1e-12
WINDOW_LEN = 250


@dataclass(frozen=True)
class Architecture:
    in_channels: int = 3
    filters: tuple = (16, 32, 64, 64)
    kernels: tuple = (7, 5, 3, 3)
    pool: int = 2
    dropout: tuple = (0.1, 0.1, 0.2, 0.2)
    hidden: int = 32
    window: int = WINDOW_LEN
    recon_len: int = WINDOW_LEN

    def __post_init__(self):
        if not (len(self.filters) == len(self.kernels) == len(self.dropout)):
            raise ValueError("filters, kernels and dropout must have one entry per conv layer")
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")

    @property
    def channel_mode(self):
        return {3: "all3", 1: "pd_only"}.get(self.in_channels, f"{self.in_channels}ch")

    def feature_length(self):
        """Temporal length after all pooling stages (floor division at each stage)."""
        n = self.window
        for _ in self.filters:
            n //= self.pool
        return n

    def flat_size(self):
        return self.feature_length() * self.filters[-1]

    def param_shapes(self):
        """Parameter names and shapes in declaration (and serialization) order."""
        shapes = []
        cin = self.in_channels
        for i, (cout, k) in enumerate(zip(self.filters, self.kernels), start=1):
            shapes.append((f"conv{i}.W", (cout, cin, k)))
            shapes.append((f"conv{i}.b", (cout,)))
            cin = cout
        flat = self.flat_size()
        shapes += [
            ("clf1.W", (flat, self.hidden)),
            ("clf1.b", (self.hidden,)),
            ("clf2.W", (self.hidden, 1)),
            ("clf2.b", (1,)),
            ("recon.W", (flat, self.recon_len)),
            ("recon.b", (self.recon_len,)),
        ]
        return shapes


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    patience: int = 5
    alpha: float = 0.004
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # cap on windows drawn per epoch; None uses the whole training set
    max_windows_per_epoch: int | None = None


@dataclass
class ModelParameters:
    arch: Architecture
    hyper: Hyperparams
    params: dict = field(default_factory=dict)

    def copy(self):
        return ModelParameters(self.arch, self.hyper, {k: v.copy() for k, v in self.params.items()})

    def n_params(self):
        return sum(v.size for v in self.params.values())

    def with_hyper(self, **kw):
        return ModelParameters(self.arch, replace(self.hyper, **kw), self.params)


@dataclass(frozen=True)
class PredictionPair:
    p_clf: float
    pd_recon: np.ndarray


def init_params(arch=None, hyper=None, seed=0, zero=False):
    """He-normal weights and zero biases; ``zero=True`` gives an all-zero network."""
    arch = arch or Architecture()
    hyper = hyper or Hyperparams()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in arch.param_shapes():
        if zero or name.endswith(".b"):
            params[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
        params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return ModelParameters(arch, hyper, params)


def _check_input(arch, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (arch.in_channels, arch.window):
        raise ValueError(
            f"expected windows of shape (n, {arch.in_channels}, {arch.window}), got {x.shape}"
        )
    return x


def forward_batch(model, x, rng=None, with_recon=True):
    """Run the network on a batch.

    Parameters
    ----------
    model : ModelParameters
    x : array_like, shape (B, C, L)
    rng : numpy.random.Generator, optional
        Dropout stream. ``None`` means inference mode (dropout disabled).
    with_recon : bool
        Skip the reconstruction head when False (``recon`` is then None).

    Returns
    -------
    p : ndarray (B,)
        Event probabilities.
    recon : ndarray (B, recon_len)
    cache : dict
        Intermediates for :func:`backward_batch`.
    """
    arch, P = model.arch, model.params
    x = _check_input(arch, x)
    h = np.ascontiguousarray(x.transpose(0, 2, 1))
    cache = {"x": x, "layers": []}
    for i, rate in enumerate(arch.dropout, start=1):
        z, cols = layers.conv1d_forward(h, P[f"conv{i}.W"], P[f"conv{i}.b"])
        a = layers.relu_forward(z)
        pooled, idx = layers.maxpool_forward(a, arch.pool)
        mask = layers.dropout_mask(pooled.shape, rate, rng) if rng is not None else None
        out = pooled * mask if mask is not None else pooled
        cache["layers"].append((h.shape, cols, z, a.shape, idx, mask))
        h = out
    flat = h.reshape(h.shape[0], -1)
    hid_pre = flat @ P["clf1.W"] + P["clf1.b"]
    hid = layers.relu_forward(hid_pre)
    logit = (hid @ P["clf2.W"] + P["clf2.b"])[:, 0]
    p = layers.sigmoid(logit)
    recon = flat @ P["recon.W"] + P["recon.b"] if with_recon else None
    cache.update(feat_shape=h.shape, flat=flat, hid_pre=hid_pre, hid=hid, p=p, recon=recon)
    return p, recon, cache


def forward(model, window, mode="infer", rng=None):
    """Single-window forward pass returning a :class:`PredictionPair`."""
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("train mode needs a dropout random stream")
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (model.arch.in_channels, model.arch.window):
        raise ValueError(f"window shape {window.shape} does not match the model")
    p, recon, _ = forward_batch(model, window[None], rng if mode == "train" else None)
    return PredictionPair(float(p[0]), recon[0])


def _bce(p, y):
    pc = np.clip(p, EPS, 1.0 - EPS)
    return -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))


def composite_loss(pred, label, pd_input, alpha=0.004):
    """Cross-entropy on the event probability plus ``alpha`` times the reconstruction MAE."""
    pd_input = np.asarray(pd_input, dtype=np.float64)
    mae = float(np.mean(np.abs(np.asarray(pred.pd_recon) - pd_input)))
    return float(_bce(np.float64(pred.p_clf), float(label))) + alpha * mae


def per_sample_loss(p, recon, y, pd_target, alpha):
    return _bce(p, y) + alpha * np.abs(recon - pd_target).mean(axis=1)


def backward_batch(model, y, cache):
    """Gradients of the mean composite loss, given a cache from :func:`forward_batch`."""
    arch, P = model.arch, model.params
    alpha = model.hyper.alpha
    x, p, recon = cache["x"], cache["p"], cache["recon"]
    bsz = x.shape[0]
    grads = {}

    # d(BCE)/d(logit) = p - y inside the clamp, zero where the clamp is active
    inside = (p > EPS) & (p < 1.0 - EPS)
    dlogit = np.where(inside, p - y, 0.0) / bsz
    drecon = alpha * np.sign(recon - x[:, 0, :]) / (arch.recon_len * bsz)

    flat, hid, hid_pre = cache["flat"], cache["hid"], cache["hid_pre"]
    grads["clf2.W"] = hid.T @ dlogit[:, None]
    grads["clf2.b"] = np.array([dlogit.sum()])
    dhid = layers.relu_backward(dlogit[:, None] @ P["clf2.W"].T, hid_pre)
    grads["clf1.W"] = flat.T @ dhid
    grads["clf1.b"] = dhid.sum(axis=0)
    grads["recon.W"] = flat.T @ drecon
    grads["recon.b"] = drecon.sum(axis=0)
    dflat = dhid @ P["clf1.W"].T + drecon @ P["recon.W"].T

    dh = dflat.reshape(cache["feat_shape"])
    for i in range(len(arch.filters), 0, -1):
        in_shape, cols, z, a_shape, idx, mask = cache["layers"][i - 1]
        if mask is not None:
            dh = dh * mask
        da = layers.maxpool_backward(dh, idx, a_shape, arch.pool)
        dz = layers.relu_backward(da, z)
        dh, grads[f"conv{i}.W"], grads[f"conv{i}.b"] = layers.conv1d_backward(
            dz, cols, in_shape, P[f"conv{i}.W"]
        )
    return grads


def loss_and_gradients(model, x, y, rng=None, sample_ids=None):
    """Mean composite loss over a batch and its exact gradient w.r.t. every parameter.

    Raises
    ------
    FloatingPointError
        If any per-sample loss is non-finite; the message names the first offending sample.
    """
    x = _check_input(model.arch, x)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if y.shape[0] != x.shape[0]:
        raise ValueError("labels and windows differ in length")
    p, recon, cache = forward_batch(model, x, rng)
    losses = per_sample_loss(p, recon, y, x[:, 0, :], model.hyper.alpha)
    bad = np.flatnonzero(~np.isfinite(losses))
    if bad.size:
        i = int(bad[0])
        who = sample_ids[i] if sample_ids is not None else i
        raise FloatingPointError(f"non-finite loss for sample {who}")
    return float(losses.mean()), backward_batch(model, y, cache)


def backward_gradients(model, x, y, rng=None, sample_ids=None):
    return loss_and_gradients(model, x, y, rng, sample_ids)[1]


def predict_proba(model, windows, batch_size=512):
    """Inference-mode event probabilities, in input order."""
    x = _check_input(model.arch, windows)
    out = np.empty(x.shape[0])
    for s in range(0, x.shape[0], batch_size):
        out[s:s + batch_size] = forward_batch(model, x[s:s + batch_size], with_recon=False)[0]
    return out


def predict_recon(model, windows, batch_size=512):
    x = _check_input(model.arch, windows)
    out = np.empty((x.shape[0], model.arch.recon_len))
    for s in range(0, x.shape[0], batch_size):
        out[s:s + batch_size] = forward_batch(model, x[s:s + batch_size])[1]
    return out
