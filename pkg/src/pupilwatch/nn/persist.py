"""Self-describing binary weight files.

Layout (little-endian): magic ``PWNN``, u16 version, u8 input channels,
f64 alpha, u8 conv layer count, per conv layer (u16 filters, u16 kernel,
f64 dropout), u16 pool, u16 hidden, u16 window, u16 reconstruction length,
f64 learning rate, u32 batch size, u32 epochs, u32 patience, u64 per-epoch
window cap (0 = none), then every parameter array as float64 in
declaration order.
"""

import struct

import numpy as np

from ..errors import FormatError
from .model import Architecture, Hyperparams, ModelParameters

MAGIC = b"PWNN"
VERSION = 1


def save_weights(model, path):
    a, h = model.arch, model.hyper
    parts = [MAGIC, struct.pack("<HBdB", VERSION, a.in_channels, h.alpha, len(a.filters))]
    for f, k, d in zip(a.filters, a.kernels, a.dropout):
        parts.append(struct.pack("<HHd", f, k, d))
    parts.append(struct.pack("<HHHH", a.pool, a.hidden, a.window, a.recon_len))
    parts.append(struct.pack("<dIIIQ", h.learning_rate, h.batch_size, h.epochs, h.patience,
                             h.max_windows_per_epoch or 0))
    for name, shape in a.param_shapes():
        arr = np.asarray(model.params[name], dtype="<f8")
        if arr.shape != shape:
            raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_weights(path, expect_channels=None):
    """Read a weight file; ``expect_channels`` (1 or 3) guards against a channel-mode mismatch."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise FormatError("bad magic")
    pos = 4

    def take(fmt):
        nonlocal pos
        n = struct.calcsize(fmt)
        if pos + n > len(buf):
            raise FormatError("truncated weight file")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += n
        return vals

    version, in_ch, alpha, n_conv = take("<HBdB")
    if version != VERSION:
        raise FormatError(f"unsupported weight file version {version}")
    layers = [take("<HHd") for _ in range(n_conv)]
    pool, hidden, window, recon_len = take("<HHHH")
    lr, batch, epochs, patience, cap = take("<dIIIQ")
    arch = Architecture(
        in_channels=in_ch,
        filters=tuple(l[0] for l in layers),
        kernels=tuple(l[1] for l in layers),
        dropout=tuple(l[2] for l in layers),
        pool=pool, hidden=hidden, window=window, recon_len=recon_len,
    )
    hyper = Hyperparams(learning_rate=lr, batch_size=batch, epochs=epochs, patience=patience,
                        alpha=alpha, max_windows_per_epoch=cap or None)
    params = {}
    for name, shape in arch.param_shapes():
        n = int(np.prod(shape)) * 8
        if pos + n > len(buf):
            raise FormatError("truncated weight file")
        params[name] = np.frombuffer(buf, dtype="<f8", count=n // 8, offset=pos).astype(np.float64).reshape(shape)
        pos += n
    if pos != len(buf):
        raise FormatError("trailing bytes after weight file")
    if expect_channels is not None and expect_channels != in_ch:
        raise FormatError(f"channel-mode mismatch: file has {in_ch} input channel(s), expected {expect_channels}")
    return ModelParameters(arch, hyper, params)
