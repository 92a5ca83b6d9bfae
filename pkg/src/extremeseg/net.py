"""Small 3D encoder-decoder segmentation network with hand-written backprop.

Layout for ``channels = (c0, c1, ...)``::

    enc0:   conv3(in -> c0), relu, conv3(c0 -> c0), relu             -> skip0
    enc_i:  maxpool2, conv3(c_{i-1} -> c_i), relu, conv3(c_i -> c_i), relu
    dec_i:  upsample2(nearest), concat[skip_i, up], conv3(c_i + c_{i+1} -> c_i), relu
    feat:   conv3(c0 -> D)                       -> features Z (no activation)
    cls:    conv1(D -> 2) applied to relu(Z)     -> logits

All convolutions use zero "same" padding. Parameters live in one flat vector;
:func:`param_layout` gives the ``(name, shape)`` manifest that slices it.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from .errors import BadArch, BadMagic, BadPatchDims, HeaderMismatch, ShapeMismatch


@dataclass(frozen=True)
class Arch:
    in_channels: int = 1
    channels: Tuple[int, ...] = (8, 16)
    feature_dim: int = 8
    kernel: int = 3
    n_classes: int = 2
    head_relu: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.channels or any(c < 1 for c in self.channels):
            raise BadArch(f"channels must be a nonempty list of positive ints, got {self.channels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise BadArch("kernel size must be odd and positive")
        if self.feature_dim < 2:
            raise BadArch("feature_dim must be >= 2")
        if self.in_channels < 1:
            raise BadArch("in_channels must be >= 1")
        if self.n_classes != 2:
            raise BadArch("only two-class output is supported")

    @property
    def levels(self) -> int:
        return len(self.channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


def param_layout(arch: Arch) -> List[Tuple[str, Tuple[int, ...]]]:
    k = arch.kernel
    ch = arch.channels
    layout = []

    def conv(name, cin, cout, ksize=k):
        layout.append((name + ".w", (cout, cin, ksize, ksize, ksize)))
        layout.append((name + ".b", (cout,)))

    conv("enc0.conv1", arch.in_channels, ch[0])
    conv("enc0.conv2", ch[0], ch[0])
    for i in range(1, arch.levels):
        conv(f"enc{i}.conv1", ch[i - 1], ch[i])
        conv(f"enc{i}.conv2", ch[i], ch[i])
    for i in range(arch.levels - 2, -1, -1):
        conv(f"dec{i}.conv", ch[i] + ch[i + 1], ch[i])
    conv("feat", ch[0], arch.feature_dim)
    conv("cls", arch.feature_dim, arch.n_classes, ksize=1)
    return layout


def param_count(arch: Arch) -> int:
    return int(sum(np.prod(shape) for _, shape in param_layout(arch)))


@dataclass
class ModelState:
    """Network parameters, optimizer state and the init seed."""

    arch: Arch
    params: np.ndarray
    seed: int = 0
    velocity: Optional[np.ndarray] = None
    step: int = 0

    def __post_init__(self):
        if self.params.ndim != 1 or self.params.size != param_count(self.arch):
            raise BadArch(f"expected {param_count(self.arch)} parameters, got {self.params.size}")

    def views(self, flat: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
        flat = self.params if flat is None else flat
        out, offset = {}, 0
        for name, shape in param_layout(self.arch):
            n = int(np.prod(shape))
            out[name] = flat[offset:offset + n].reshape(shape)
            offset += n
        return out

    def astype(self, dtype) -> "ModelState":
        vel = None if self.velocity is None else self.velocity.astype(dtype)
        return replace(self, params=self.params.astype(dtype), velocity=vel)


def init_model(arch: Arch = Arch(), seed: int = 0, dtype=np.float32) -> ModelState:
    """He (fan-in) normal weights, zero biases; deterministic in ``seed``."""
    if not isinstance(arch, Arch):
        raise BadArch(f"expected an Arch, got {type(arch).__name__}")
    rng = np.random.default_rng(seed)
    chunks = []
    for name, shape in param_layout(arch):
        if name.endswith(".b"):
            chunks.append(np.zeros(shape))
        else:
            fan_in = int(np.prod(shape[1:]))
            chunks.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape))
    params = np.concatenate([c.ravel() for c in chunks]).astype(dtype)
    return ModelState(arch=arch, params=params, seed=int(seed))


# ---------------------------------------------------------------- layers


def _conv_forward(x, w, b):
    cout, cin, k = w.shape[0], w.shape[1], w.shape[2]
    _, X, Y, Z = x.shape
    if k == 1:
        cols = x.reshape(cin, -1)
    else:
        pad = k // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad)))
        cols = np.empty((cin, k * k * k, X, Y, Z), dtype=x.dtype)
        i = 0
        for a in range(k):
            for bb in range(k):
                for c in range(k):
                    cols[:, i] = xp[:, a:a + X, bb:bb + Y, c:c + Z]
                    i += 1
        cols = cols.reshape(cin * k * k * k, -1)
    y = w.reshape(cout, -1) @ cols
    y += b[:, None]
    return y.reshape(cout, X, Y, Z), cols


def _conv_backward(dy, cols, w, in_shape):
    cout, cin, k = w.shape[0], w.shape[1], w.shape[2]
    _, X, Y, Z = in_shape
    dy2 = dy.reshape(cout, -1)
    dw = (dy2 @ cols.T).reshape(w.shape)
    db = dy2.sum(axis=1)
    dcols = w.reshape(cout, -1).T @ dy2
    if k == 1:
        return dcols.reshape(in_shape), dw, db
    pad = k // 2
    dcols = dcols.reshape(cin, k * k * k, X, Y, Z)
    dxp = np.zeros((cin, X + 2 * pad, Y + 2 * pad, Z + 2 * pad), dtype=dy.dtype)
    i = 0
    for a in range(k):
        for bb in range(k):
            for c in range(k):
                dxp[:, a:a + X, bb:bb + Y, c:c + Z] += dcols[:, i]
                i += 1
    return dxp[:, pad:pad + X, pad:pad + Y, pad:pad + Z], dw, db


def _pool_forward(x):
    C, X, Y, Z = x.shape
    blocks = (x.reshape(C, X // 2, 2, Y // 2, 2, Z // 2, 2)
              .transpose(0, 1, 3, 5, 2, 4, 6)
              .reshape(C, X // 2, Y // 2, Z // 2, 8))
    arg = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return y, arg


def _pool_backward(dy, arg, in_shape):
    C, X, Y, Z = in_shape
    blocks = np.zeros(dy.shape + (8,), dtype=dy.dtype)
    np.put_along_axis(blocks, arg[..., None], dy[..., None], axis=-1)
    return (blocks.reshape(C, X // 2, Y // 2, Z // 2, 2, 2, 2)
            .transpose(0, 1, 4, 2, 5, 3, 6)
            .reshape(in_shape))


def _upsample(x):
    return x.repeat(2, axis=1).repeat(2, axis=2).repeat(2, axis=3)


def _upsample_backward(dy):
    C, X, Y, Z = dy.shape
    return dy.reshape(C, X // 2, 2, Y // 2, 2, Z // 2, 2).sum(axis=(2, 4, 6))


# ---------------------------------------------------------------- model


@dataclass
class ForwardRecord:
    logits: np.ndarray
    prob: np.ndarray
    features: np.ndarray
    cache: dict = field(repr=False, default_factory=dict)


def check_patch_dims(arch: Arch, dims) -> None:
    f = 2 ** (arch.levels - 1)
    if len(dims) != 3 or any(n < 1 or n % f for n in dims):
        raise BadPatchDims(f"patch dims {tuple(dims)} must be positive multiples of {f}")


def softmax_fg(logits: np.ndarray) -> np.ndarray:
    """Foreground probability of a two-channel softmax."""
    return expit(logits[1] - logits[0])


def forward(m: ModelState, patch) -> ForwardRecord:
    """Run the network on one patch ``(X, Y, Z)`` or ``(C, X, Y, Z)``."""
    x = getattr(patch, "data", patch)
    x = np.asarray(x, dtype=m.params.dtype)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[0] != m.arch.in_channels:
        raise BadPatchDims(f"patch shape {x.shape} incompatible with {m.arch.in_channels} input channel(s)")
    check_patch_dims(m.arch, x.shape[1:])
    p = m.views()
    cache = {"input_shape": x.shape}
    L = m.arch.levels

    def conv_relu(name, h):
        y, cols = _conv_forward(h, p[name + ".w"], p[name + ".b"])
        cache[name] = (cols, h.shape)
        mask = y > 0
        cache[name + ".relu"] = mask
        return y * mask

    skips = []
    h = x
    for i in range(L):
        if i > 0:
            cache[f"pool{i}"] = h.shape
            h, cache[f"pool{i}.arg"] = _pool_forward(h)
        h = conv_relu(f"enc{i}.conv1", h)
        h = conv_relu(f"enc{i}.conv2", h)
        skips.append(h)
    for i in range(L - 2, -1, -1):
        up = _upsample(h)
        cat = np.concatenate([skips[i], up], axis=0)
        h = conv_relu(f"dec{i}.conv", cat)
    z, cols = _conv_forward(h, p["feat.w"], p["feat.b"])
    cache["feat"] = (cols, h.shape)
    if m.arch.head_relu:
        rz_mask = z > 0
        cache["feat.relu"] = rz_mask
        logits, cols = _conv_forward(z * rz_mask, p["cls.w"], p["cls.b"])
    else:
        logits, cols = _conv_forward(z, p["cls.w"], p["cls.b"])
    cache["cls"] = (cols, z.shape)
    return ForwardRecord(logits=logits, prob=softmax_fg(logits), features=z, cache=cache)


def backward(m: ModelState, record: ForwardRecord, dlogits: Optional[np.ndarray] = None,
             dfeatures: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient of a loss w.r.t. the flat parameter vector.

    ``dlogits`` and ``dfeatures`` are the upstream gradients of the loss with
    respect to ``record.logits`` and ``record.features``; either may be None.
    """
    dt = m.params.dtype
    if dlogits is None:
        dlogits = np.zeros_like(record.logits)
    if dfeatures is None:
        dfeatures = np.zeros_like(record.features)
    if dlogits.shape != record.logits.shape or dfeatures.shape != record.features.shape:
        raise ShapeMismatch("upstream gradient shapes do not match the forward record")
    dlogits = dlogits.astype(dt, copy=False)
    p = m.views()
    grad = np.zeros_like(m.params)
    g = m.views(grad)
    c = record.cache
    L = m.arch.levels

    def conv_back(name, dy):
        cols, in_shape = c[name]
        dx, dw, db = _conv_backward(dy, cols, p[name + ".w"], in_shape)
        g[name + ".w"][...] = dw
        g[name + ".b"][...] = db
        return dx

    dz = conv_back("cls", dlogits)
    if m.arch.head_relu:
        dz = dz * c["feat.relu"]
    dz = dz + dfeatures.astype(dt, copy=False)
    dh = conv_back("feat", dz)
    ch = m.arch.channels
    dskips = [None] * L
    for i in range(L - 1):
        dcat = conv_back(f"dec{i}.conv", dh * c[f"dec{i}.conv.relu"])
        dskips[i] = dcat[:ch[i]]
        dh = _upsample_backward(dcat[ch[i]:])
    # dh is now the gradient into the bottom encoder output
    for i in range(L - 1, -1, -1):
        if i < L - 1:
            dh = dh + dskips[i]
        dh = conv_back(f"enc{i}.conv2", dh * c[f"enc{i}.conv2.relu"])
        dh = conv_back(f"enc{i}.conv1", dh * c[f"enc{i}.conv1.relu"])
        if i > 0:
            dh = _pool_backward(dh, c[f"pool{i}.arg"], c[f"pool{i}"])
    return grad


def sgd_step(m: ModelState, grad: np.ndarray, lr: float, momentum: float = 0.0) -> ModelState:
    """``theta <- theta - lr * v`` with ``v = momentum * v + grad`` (plain SGD at 0)."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if grad.shape != m.params.shape:
        raise ShapeMismatch("gradient shape does not match parameters")
    grad = grad.astype(m.params.dtype, copy=False)
    if momentum:
        vel = grad.copy() if m.velocity is None else momentum * m.velocity + grad
        return replace(m, params=m.params - m.params.dtype.type(lr) * vel, velocity=vel, step=m.step + 1)
    return replace(m, params=m.params - m.params.dtype.type(lr) * grad, step=m.step + 1)


def poly_lr(eta0: float, epoch: int, total: int, power: float = 0.9) -> float:
    """``eta0 * (1 - epoch / total) ** power``."""
    if not 0 <= epoch < total:
        raise ValueError(f"epoch {epoch} outside [0, {total})")
    return eta0 * (1.0 - epoch / total) ** power


# ---------------------------------------------------------------- checkpoints

MODEL_MAGIC = b"MDL1"


def save_model(m: ModelState, path) -> None:
    header = {"arch": m.arch.to_dict(), "seed": m.seed, "n_params": int(m.params.size), "dtype": "f32le"}
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(m.params.astype("<f4").tobytes())


def load_model(path) -> ModelState:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MODEL_MAGIC:
        raise BadMagic(f"{path}: expected magic {MODEL_MAGIC!r}")
    end = raw.find(b"\n", 4)
    if end < 0:
        raise HeaderMismatch(f"{path}: header line is not terminated")
    header = json.loads(raw[4:end].decode("utf-8"))
    payload = raw[end + 1:]
    if len(payload) != 4 * header["n_params"]:
        raise HeaderMismatch(f"{path}: expected {header['n_params']} parameters")
    arch = Arch(**header["arch"])
    params = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    return ModelState(arch=arch, params=params, seed=header["seed"])
