"""Dense 3D network layers with hand-written forward and backward passes.

Activations are numpy arrays in channels-last layout (N, D, H, W, C); all
arithmetic runs in the dtype of the input (float64 throughout this package).
Convolution is evaluated as a sum of k^3 shifted channel matmuls, which on
these block sizes beats im2col by a wide margin because it never materializes
the k^3-fold duplicated window tensor.
"""

from __future__ import annotations

import numpy as np


class Parameter:
    """A trainable array with an accumulated gradient of the same shape."""

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[:] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class Layer:
    """Minimal layer protocol: forward caches, backward consumes the cache."""

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[Parameter]:
        return []


def conv_output_size(size: int, kernel: int, stride: int, dilation: int, padding: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


class Conv3d(Layer):
    """3D cross-correlation with cubic kernel, stride, dilation and zero padding."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int = 3,
        stride: int = 1,
        dilation: int = 1,
        padding: int = 0,
        name: str = "conv",
        rng: np.random.Generator | None = None,
    ):
        if kernel % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {kernel}")
        if stride < 1 or dilation < 1 or padding < 0:
            raise ValueError("stride/dilation must be >= 1 and padding >= 0")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.dilation = dilation
        self.padding = padding
        self.name = name
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel ** 3
        std = np.sqrt(2.0 / fan_in)
        self.weight = Parameter(
            f"{name}.weight",
            rng.normal(0.0, std, size=(kernel, kernel, kernel, in_channels, out_channels)),
        )
        self.bias = Parameter(f"{name}.bias", np.zeros(out_channels))
        self._cache = None

    def spec(self) -> tuple[int, int, int, int, int, int]:
        return (self.in_channels, self.out_channels, self.kernel, self.stride, self.dilation, self.padding)

    def _tap_slices(self, a: int, b: int, c: int, out_shape) -> tuple[slice, slice, slice]:
        s, d = self.stride, self.dilation
        od, oh, ow = out_shape
        return (
            slice(a * d, a * d + s * od, s),
            slice(b * d, b * d + s * oh, s),
            slice(c * d, c * d + s * ow, s),
        )

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != 5 or x.shape[4] != self.in_channels:
            raise ValueError(f"{self.name}: expected (N,D,H,W,{self.in_channels}), got {x.shape}")
        n, dd, hh, ww, _ = x.shape
        k, p = self.kernel, self.padding
        out_shape = tuple(conv_output_size(s, k, self.stride, self.dilation, p) for s in (dd, hh, ww))
        if any(s < 1 for s in out_shape):
            raise ValueError(f"{self.name}: input {x.shape} too small for this kernel/stride/dilation")
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (p, p), (0, 0))) if p else x
        out = np.zeros((n, *out_shape, self.out_channels), dtype=x.dtype)
        w = self.weight.data
        for a in range(k):
            for b in range(k):
                for c in range(k):
                    sa, sb, sc = self._tap_slices(a, b, c, out_shape)
                    out += xp[:, sa, sb, sc, :] @ w[a, b, c]
        out += self.bias.data
        self._cache = (xp, x.shape, out_shape)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward before forward")
        xp, x_shape, out_shape = self._cache
        if grad_out.shape != (x_shape[0], *out_shape, self.out_channels):
            raise ValueError(f"{self.name}: grad shape {grad_out.shape} does not match forward output")
        k, p = self.kernel, self.padding
        w = self.weight.data
        self.bias.grad += grad_out.sum(axis=(0, 1, 2, 3))
        gxp = np.zeros_like(xp)
        for a in range(k):
            for b in range(k):
                for c in range(k):
                    sa, sb, sc = self._tap_slices(a, b, c, out_shape)
                    sl = xp[:, sa, sb, sc, :]
                    self.weight.grad[a, b, c] += np.tensordot(sl, grad_out, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
                    gxp[:, sa, sb, sc, :] += grad_out @ w[a, b, c].T
        if p:
            _, dd, hh, ww, _ = x_shape
            return gxp[:, p:p + dd, p:p + hh, p:p + ww, :]
        return gxp

    def params(self) -> list[Parameter]:
        return [self.weight, self.bias]


class BatchNorm3d(Layer):
    """Per-channel batch normalization over (N, D, H, W) with running stats."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-8, name: str = "norm"):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.name = name
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels))
        self.beta = Parameter(f"{name}.beta", np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self._cache = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != 5 or x.shape[4] != self.channels:
            raise ValueError(f"{self.name}: expected (N,D,H,W,{self.channels}), got {x.shape}")
        axes = (0, 1, 2, 3)
        if training:
            m = x.shape[0] * x.shape[1] * x.shape[2] * x.shape[3]
            if m <= 1:
                raise ValueError(f"{self.name}: batch statistics degenerate with {m} sample(s)")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        out = self.gamma.data * xhat + self.beta.data
        self._cache = (xhat, inv_std, training, x.shape)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward before forward")
        xhat, inv_std, training, x_shape = self._cache
        if grad_out.shape != x_shape:
            raise ValueError(f"{self.name}: grad shape mismatch")
        axes = (0, 1, 2, 3)
        self.beta.grad += grad_out.sum(axis=axes)
        self.gamma.grad += (grad_out * xhat).sum(axis=axes)
        if not training:
            return grad_out * (self.gamma.data * inv_std)
        m = float(np.prod([x_shape[i] for i in range(4)]))
        sum_g = grad_out.sum(axis=axes)
        sum_gx = (grad_out * xhat).sum(axis=axes)
        return (self.gamma.data * inv_std / m) * (m * grad_out - sum_g - xhat * sum_gx)

    def params(self) -> list[Parameter]:
        return [self.gamma, self.beta]


class ReLU(Layer):
    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return np.where(self._mask, grad_out, 0.0)


class Sigmoid(Layer):
    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._out = 1.0 / (1.0 + np.exp(-x))
        return self._out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out * self._out * (1.0 - self._out)


class Upsample3d(Layer):
    """Nearest-neighbor spatial upsampling by an integer factor."""

    def __init__(self, factor: int = 2):
        if factor < 1:
            raise ValueError("factor must be >= 1")
        self.factor = factor

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        f = self.factor
        self._in_shape = x.shape
        out = np.repeat(np.repeat(np.repeat(x, f, axis=1), f, axis=2), f, axis=3)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        n, dd, hh, ww, c = self._in_shape
        f = self.factor
        g = grad_out.reshape(n, dd, f, hh, f, ww, f, c)
        return g.sum(axis=(2, 4, 6))


def concat_channels(xs: list[np.ndarray]) -> np.ndarray:
    spatial = {x.shape[:4] for x in xs}
    if len(spatial) != 1:
        raise ValueError(f"cannot concatenate mismatched spatial shapes {sorted(spatial)}")
    return np.concatenate(xs, axis=4)


def split_channels(grad: np.ndarray, widths: list[int]) -> list[np.ndarray]:
    if grad.shape[4] != sum(widths):
        raise ValueError(f"gradient has {grad.shape[4]} channels, expected {sum(widths)}")
    return list(np.split(grad, np.cumsum(widths)[:-1], axis=4))


class ASPP(Layer):
    """Parallel dilated conv branches, concatenated and fused by a 1x1x1 conv.

    Each branch is conv(3) -> norm -> relu with padding equal to its dilation
    so spatial dims are preserved; the fusion conv maps the concatenation to
    ``out_channels`` and is followed by its own norm and relu.
    """

    def __init__(
        self,
        in_channels: int,
        branch_channels: int,
        out_channels: int,
        dilations: tuple[int, ...] = (1, 2, 4),
        name: str = "aspp",
        rng: np.random.Generator | None = None,
    ):
        if not dilations:
            raise ValueError("need at least one dilation")
        self.dilations = tuple(int(d) for d in dilations)
        self.branches = []
        for i, d in enumerate(self.dilations):
            conv = Conv3d(in_channels, branch_channels, kernel=3, dilation=d, padding=d,
                          name=f"{name}.branch{i}.conv", rng=rng)
            norm = BatchNorm3d(branch_channels, name=f"{name}.branch{i}.norm")
            self.branches.append((conv, norm, ReLU()))
        self.fuse_conv = Conv3d(len(self.dilations) * branch_channels, out_channels, kernel=1,
                                name=f"{name}.fuse.conv", rng=rng)
        self.fuse_norm = BatchNorm3d(out_channels, name=f"{name}.fuse.norm")
        self.fuse_relu = ReLU()
        self.branch_channels = branch_channels

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        outs = []
        for conv, norm, relu in self.branches:
            outs.append(relu.forward(norm.forward(conv.forward(x, training), training), training))
        cat = concat_channels(outs)
        return self.fuse_relu.forward(self.fuse_norm.forward(self.fuse_conv.forward(cat, training), training), training)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        g = self.fuse_conv.backward(self.fuse_norm.backward(self.fuse_relu.backward(grad_out)))
        parts = split_channels(g, [self.branch_channels] * len(self.branches))
        gx = None
        for (conv, norm, relu), gb in zip(self.branches, parts):
            gi = conv.backward(norm.backward(relu.backward(gb)))
            gx = gi if gx is None else gx + gi
        return gx

    def params(self) -> list[Parameter]:
        out = []
        for conv, norm, _ in self.branches:
            out.extend(conv.params())
            out.extend(norm.params())
        out.extend(self.fuse_conv.params())
        out.extend(self.fuse_norm.params())
        return out
