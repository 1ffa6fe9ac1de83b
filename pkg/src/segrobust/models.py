"""Toy differentiable segmenters with hand-written reverse mode.

Two architectures are provided:

* ``PatchLinear``: one 3x3 same-padded convolution, 3 -> C channels.
* ``TinyConvNet``: conv3x3 (3 -> hidden) -> relu/tanh -> conv3x3 (hidden -> C).

Every model starts with a fixed pointwise affine ``x * scale + shift`` on the
input. Parameters live in one flat float64 vector; each layer reads named
views into it, so an optimizer can treat the model as a single vector.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor_core import IGNORE, ContractError, InvalidInputError, softmax_field

VARIANTS = ("PatchLinear", "TinyConvNet")
NONLINEARITIES = ("relu", "tanh")

CHECKPOINT_MAGIC = b"SGMD"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ToyModelSpec:
    variant: str = "TinyConvNet"
    classes: int = 3
    hidden: int = 8
    nonlinearity: str = "relu"
    seed: int = 0
    input_scale: float = 1.0
    input_shift: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.classes < 2:
            raise ValueError("classes must be >= 2")
        if self.hidden < 1:
            raise ValueError("hidden width must be positive")

    def layers(self) -> list[tuple[str, int, int]]:
        """Layer list as ``(name, in_channels, out_channels)`` conv entries."""
        if self.variant == "PatchLinear":
            return [("conv0", 3, self.classes)]
        return [("conv0", 3, self.hidden), ("conv1", self.hidden, self.classes)]


def _patches(a: np.ndarray) -> np.ndarray:
    """im2col for a 3x3 same-padded convolution: (H, W, C) -> (H*W, 9*C)."""
    h, w, c = a.shape
    padded = np.pad(a, ((1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(padded, (3, 3), axis=(0, 1))  # (H, W, C, 3, 3)
    return win.transpose(0, 1, 3, 4, 2).reshape(h * w, 9 * c)


def _col2im(cols: np.ndarray, h: int, w: int, c: int) -> np.ndarray:
    """Adjoint of ``_patches``: scatter-add patch gradients back onto the image."""
    cols = cols.reshape(h, w, 3, 3, c)
    padded = np.zeros((h + 2, w + 2, c))
    for di in range(3):
        for dj in range(3):
            padded[di:di + h, dj:dj + w] += cols[:, :, di, dj]
    return padded[1:-1, 1:-1]


def conv3x3(a: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded 3x3 convolution; ``kernel`` has shape (3, 3, Cin, Cout)."""
    h, w, _ = a.shape
    cout = kernel.shape[-1]
    out = _patches(a) @ kernel.reshape(-1, cout) + bias
    return out.reshape(h, w, cout)


class Segmenter:
    """A toy segmentation network ``x -> logits`` with exact gradients.

    The object is treated as immutable: training builds new instances via
    :meth:`with_params`.
    """

    def __init__(self, spec: ToyModelSpec, params: np.ndarray | None = None):
        self.spec = spec
        self._shapes = {}
        offset = 0
        for name, cin, cout in spec.layers():
            for suffix, shape in (("weight", (3, 3, cin, cout)), ("bias", (cout,))):
                size = int(np.prod(shape))
                self._shapes[f"{name}.{suffix}"] = (offset, shape)
                offset += size
        self.num_params = offset
        if params is None:
            params = self._init_params()
        params = np.array(params, dtype=np.float64)
        if params.shape != (self.num_params,):
            raise ContractError(f"expected {self.num_params} parameters, got {params.shape}")
        params.setflags(write=False)
        self.params = params

    @property
    def classes(self) -> int:
        return self.spec.classes

    def _init_params(self) -> np.ndarray:
        # fan-in uniform init; biases start at zero
        rng = np.random.default_rng(self.spec.seed)
        theta = np.zeros(self.num_params)
        for name, cin, _ in self.spec.layers():
            off, shape = self._shapes[f"{name}.weight"]
            bound = np.sqrt(6.0 / (9 * cin))
            theta[off:off + int(np.prod(shape))] = rng.uniform(-bound, bound, int(np.prod(shape)))
        return theta

    def view(self, name: str, params: np.ndarray | None = None) -> np.ndarray:
        off, shape = self._shapes[name]
        p = self.params if params is None else params
        return p[off:off + int(np.prod(shape))].reshape(shape)

    def param_names(self) -> list[str]:
        return list(self._shapes)

    def with_params(self, params: np.ndarray) -> "Segmenter":
        return Segmenter(self.spec, params)

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != 3:
            raise InvalidInputError(f"expected an (H, W, 3) image, got {x.shape}")
        if x.shape[0] < 3 or x.shape[1] < 3:
            raise InvalidInputError(f"image {x.shape[:2]} smaller than the 3x3 kernel")
        return x

    def _act(self, a):
        return np.maximum(a, 0.0) if self.spec.nonlinearity == "relu" else np.tanh(a)

    def _act_grad(self, pre, post):
        if self.spec.nonlinearity == "relu":
            return (pre > 0).astype(np.float64)
        return 1.0 - post ** 2

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._forward(self._check_input(x))[0]

    def _forward(self, x):
        a = x * self.spec.input_scale + self.spec.input_shift
        cache = []
        layers = self.spec.layers()
        for i, (name, _, _) in enumerate(layers):
            pre = conv3x3(a, self.view(f"{name}.weight"), self.view(f"{name}.bias"))
            cache.append((a, pre))
            a = self._act(pre) if i < len(layers) - 1 else pre
        return a, cache

    def backward(self, x: np.ndarray, upstream: np.ndarray) -> "GradientPair":
        """Reverse pass for ``upstream = dLoss/dlogits``."""
        _, pullback = self.vjp(x)
        return pullback(upstream)

    def vjp(self, x: np.ndarray):
        """Forward pass plus a pullback closure mapping dLoss/dlogits to a GradientPair."""
        x = self._check_input(x)
        logits, cache = self._forward(x)

        def pullback(upstream):
            upstream = np.asarray(upstream, dtype=np.float64)
            if upstream.shape != logits.shape:
                raise ContractError(f"upstream {upstream.shape} does not match logits {logits.shape}")
            return self._reverse(x, cache, upstream)

        return logits, pullback

    def _reverse(self, x, cache, upstream):
        grad_params = np.zeros(self.num_params)
        g = upstream
        layers = self.spec.layers()
        h, w = x.shape[:2]
        for i in range(len(layers) - 1, -1, -1):
            name, cin, cout = layers[i]
            a, pre = cache[i]
            if i < len(layers) - 1:
                g = g * self._act_grad(pre, self._act(pre))
            g2 = g.reshape(-1, cout)
            cols = _patches(a)
            off, _ = self._shapes[f"{name}.weight"]
            grad_params[off:off + cols.shape[1] * cout] = (cols.T @ g2).ravel()
            off, _ = self._shapes[f"{name}.bias"]
            grad_params[off:off + cout] = g2.sum(axis=0)
            kernel = self.view(f"{name}.weight").reshape(-1, cout)
            g = _col2im(g2 @ kernel.T, h, w, cin)
        return GradientPair(g * self.spec.input_scale, grad_params)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return predict_mask(self.forward(x))


@dataclass
class GradientPair:
    input_gradient: np.ndarray
    parameter_gradient: np.ndarray


def build_model(spec: ToyModelSpec) -> Segmenter:
    return Segmenter(spec)


def forward(model: Segmenter, x: np.ndarray) -> np.ndarray:
    return model.forward(x)


def backward(model: Segmenter, x: np.ndarray, upstream: np.ndarray) -> GradientPair:
    return model.backward(x, upstream)


def predict_mask(z: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, which is the lowest-index tie rule
    return np.argmax(np.asarray(z), axis=-1).astype(np.int64)


def loss_and_input_grad(model: Segmenter, x, y, kind: str, **loss_kw):
    """Loss value plus its gradient with respect to the input image."""
    from .losses import compute_loss

    z, pullback = model.vjp(x)
    res = compute_loss(kind, z, y, **loss_kw)
    return res, pullback(res.logit_gradient)


def grad_check(model: Segmenter, kind: str, x, y, *, h: float = 1e-4, samples: int = 40,
               seed: int = 0, wrt: str = "input", **loss_kw) -> float:
    """Max relative error between analytic and central-difference gradients.

    Coordinates are sampled at random from the input (``wrt="input"``) or the
    parameter vector (``wrt="params"``). Relative error uses
    ``max(|analytic|, |fd|, 1e-8)`` as the denominator.
    """
    from .losses import compute_loss

    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] > 16 or x.shape[1] > 16:
        raise InvalidInputError("grad_check is limited to inputs of at most 16x16")
    y = np.asarray(y)
    # freeze masks that depend on the current prediction so the check
    # differentiates one smooth piece of the loss
    z0 = model.forward(x)
    loss_kw = dict(loss_kw)
    if kind in ("sea-mce", "sea-msl", "sea-bce"):
        loss_kw.setdefault("correct", (predict_mask(z0) == y) & (y != IGNORE))
    res = compute_loss(kind, z0, y, **loss_kw)
    grads = model.backward(x, res.logit_gradient)
    rng = np.random.default_rng(seed)

    if wrt == "input":
        analytic = grads.input_gradient
        base = x

        def value_at(v):
            return compute_loss(kind, model.forward(v), y, **loss_kw).value
    elif wrt == "params":
        analytic = grads.parameter_gradient
        base = model.params

        def value_at(v):
            return compute_loss(kind, model.with_params(v).forward(x), y, **loss_kw).value
    else:
        raise ValueError(f"wrt must be 'input' or 'params', got {wrt!r}")

    flat = base.ravel()
    idx = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
    worst = 0.0
    for i in idx:
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += h
        minus[i] -= h
        fd = (value_at(plus.reshape(base.shape)) - value_at(minus.reshape(base.shape))) / (2 * h)
        a = analytic.ravel()[i]
        err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
        worst = max(worst, err)
    return worst


def probabilities(model: Segmenter, x) -> np.ndarray:
    return softmax_field(model.forward(x))


# -- checkpoint file -------------------------------------------------------

def save_checkpoint(model: Segmenter, path) -> None:
    """Write ``SGMD`` | u16 version | u32 len + descriptor | u64 count | f32 LE params."""
    desc = json.dumps(asdict(model.spec), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(desc)))
        fh.write(desc)
        fh.write(struct.pack("<Q", model.num_params))
        fh.write(model.params.astype("<f4").tobytes())


def load_checkpoint(path) -> Segmenter:
    from .data import FormatError

    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at byte 0, expected {CHECKPOINT_MAGIC!r}")
    if len(raw) < 10:
        raise FormatError(f"{path}: truncated header at byte {len(raw)}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    (dlen,) = struct.unpack_from("<I", raw, 6)
    pos = 10 + dlen
    if len(raw) < pos + 8:
        raise FormatError(f"{path}: truncated descriptor at byte {len(raw)}")
    try:
        spec = ToyModelSpec(**json.loads(raw[10:pos].decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"{path}: bad architecture descriptor at byte 10: {exc}") from exc
    (count,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    if len(raw) != pos + 4 * count:
        raise FormatError(f"{path}: expected {pos + 4 * count} bytes, found {len(raw)}")
    params = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).astype(np.float64)
    return Segmenter(spec, params)


__all__ = [
    "ToyModelSpec", "Segmenter", "GradientPair", "build_model", "forward", "backward",
    "predict_mask", "grad_check", "save_checkpoint", "load_checkpoint", "conv3x3",
    "loss_and_input_grad", "probabilities",
]
