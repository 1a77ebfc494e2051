"""Small feedforward networks with exact input derivatives.

Input derivatives are propagated forward alongside the values (first- and
second-order jets through each layer); parameter gradients come from torch's
reverse mode, so both compose: a loss built from jet outputs differentiates
cleanly with respect to every weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ShapeMismatch

DTYPE = torch.float64
# rows per slice when evaluating without autograd; bounds peak memory on big pair lists
CHUNK_ROWS = 65536


def _silu(z, order):
    s = torch.sigmoid(z)
    out = [z * s]
    if order >= 1:
        out.append(s * (1 + z * (1 - s)))
    if order >= 2:
        out.append(s * (1 - s) * (2 + z * (1 - 2 * s)))
    return out


def _softplus(z, order):
    # logaddexp has no linear cutoff, so convexity survives at large inputs
    out = [torch.logaddexp(z, torch.zeros((), dtype=z.dtype))]
    if order >= 1:
        s = torch.sigmoid(z)
        out.append(s)
        if order >= 2:
            out.append(s * (1 - s))
    return out


ACTIVATIONS = {"silu": _silu, "softplus": _softplus}


@dataclass
class Jet:
    value: torch.Tensor           # (B, out)
    grad: torch.Tensor | None     # (B, k, out)
    hess: torch.Tensor | None     # (B, k, k, out)


class Mlp:
    """Feedforward net; hidden activation SiLU (or softplus), identity output."""

    kind = "mlp"

    def __init__(self, weights: list[torch.Tensor], biases: list[torch.Tensor], activation: str = "silu"):
        if len(weights) != len(biases) or not weights:
            raise ShapeMismatch("need one bias per weight matrix")
        for a, b in zip(weights[:-1], weights[1:]):
            if b.shape[1] != a.shape[0]:
                raise ShapeMismatch(f"layer shapes {tuple(a.shape)} and {tuple(b.shape)} do not chain")
        for w, b in zip(weights, biases):
            if b.shape != (w.shape[0],):
                raise ShapeMismatch("bias does not match weight rows")
        self.weights = weights
        self.biases = biases
        self.activation = activation
        # fixed (non-trainable) input standardization; positive scales keep
        # the monotonicity and convexity of constrained nets intact
        self.in_shift = torch.zeros(self.n_in, dtype=DTYPE)
        self.in_scale = torch.ones(self.n_in, dtype=DTYPE)

    def set_input_normalization(self, shift, scale) -> None:
        scale = torch.as_tensor(scale, dtype=DTYPE).reshape(self.n_in)
        if torch.any(scale <= 0):
            raise ValueError("input scales must be positive")
        self.in_shift = torch.as_tensor(shift, dtype=DTYPE).reshape(self.n_in).clone()
        self.in_scale = scale.clone()

    @classmethod
    def init(cls, widths: list[int], generator: torch.Generator | None = None,
             zero_last: bool = False, activation: str = "silu") -> "Mlp":
        weights, biases = [], []
        for k, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            bound = 1.0 / math.sqrt(n_in)
            w = (torch.rand(n_out, n_in, generator=generator, dtype=DTYPE) * 2 - 1) * bound
            if zero_last and k == len(widths) - 2:
                w = torch.zeros_like(w)
            weights.append(w)
            biases.append(torch.zeros(n_out, dtype=DTYPE))
        return cls(weights, biases, activation)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    def parameters(self) -> list[torch.Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def requires_grad_(self, flag: bool = True) -> "Mlp":
        for p in self.parameters():
            p.requires_grad_(flag)
        return self

    def effective_weights(self) -> list[torch.Tensor]:
        return self.weights

    def _check(self, x: torch.Tensor):
        if x.shape[-1] != self.n_in:
            raise ShapeMismatch(f"expected {self.n_in} inputs, got {x.shape[-1]}")

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        self._check(x)
        if x.shape[0] > CHUNK_ROWS and not torch.is_grad_enabled():
            return torch.cat([self(part) for part in x.split(CHUNK_ROWS)])
        act = ACTIVATIONS[self.activation]
        ws = self.effective_weights()
        h = (x - self.in_shift) / self.in_scale
        for w, b in zip(ws[:-1], self.biases[:-1]):
            h = act(h @ w.T + b, 0)[0]
        return h @ ws[-1].T + self.biases[-1]

    def jet(self, x: torch.Tensor, wrt: tuple[int, ...] | None = None, order: int = 1) -> Jet:
        """Value plus exact derivatives with respect to the inputs listed in ``wrt``."""
        self._check(x)
        if x.shape[0] > CHUNK_ROWS and not torch.is_grad_enabled():
            parts = [self.jet(part, wrt, order) for part in x.split(CHUNK_ROWS)]
            return Jet(torch.cat([p.value for p in parts]), torch.cat([p.grad for p in parts]),
                       torch.cat([p.hess for p in parts]) if order >= 2 else None)
        if wrt is None:
            wrt = tuple(range(self.n_in))
        k = len(wrt)
        act = ACTIVATIONS[self.activation]
        ws = self.effective_weights()
        batch = x.shape[0]
        h = (x - self.in_shift) / self.in_scale
        idx = torch.tensor(wrt)
        dh = torch.zeros(batch, k, self.n_in, dtype=x.dtype)
        dh[:, torch.arange(k), idx] = 1.0 / self.in_scale[idx]
        d2h = None
        for w, b in zip(ws[:-1], self.biases[:-1]):
            z = h @ w.T + b
            dz = dh @ w.T
            vals = act(z, order)
            h = vals[0]
            s1 = vals[1].unsqueeze(1)
            if order >= 2:
                d2z = d2h @ w.T if d2h is not None else None
                d2h = vals[2][:, None, None, :] * dz[:, :, None, :] * dz[:, None, :, :]
                if d2z is not None:
                    d2h = d2h + s1.unsqueeze(1) * d2z
            dh = s1 * dz
        value = h @ ws[-1].T + self.biases[-1]
        grad = dh @ ws[-1].T
        hess = d2h @ ws[-1].T if order >= 2 else None
        return Jet(value, grad, hess)


class Cmnn(Mlp):
    """Constrained monotonic network.

    First-layer weights follow the per-input sign indicator (+1 nonnegative,
    -1 nonpositive, 0 free); deeper layers, including the output, use |W|.
    With convex nondecreasing softplus activations the output is monotone in
    every constrained input and convex in all inputs.
    """

    kind = "cmnn"

    def __init__(self, weights, biases, indicator, activation: str = "softplus"):
        super().__init__(weights, biases, activation)
        self.indicator = torch.as_tensor(indicator, dtype=DTYPE)
        if self.indicator.shape != (self.n_in,):
            raise ShapeMismatch("indicator length must equal the input width")

    @classmethod
    def init(cls, widths, indicator, generator: torch.Generator | None = None) -> "Cmnn":
        base = Mlp.init(widths, generator)
        return cls(base.weights, base.biases, indicator)

    def effective_weights(self) -> list[torch.Tensor]:
        t = self.indicator
        w0 = self.weights[0]
        first = torch.where(t == 0, w0, t * w0.abs())
        return [first] + [w.abs() for w in self.weights[1:]]


def grad_input(net: Mlp, x: torch.Tensor) -> torch.Tensor:
    """Gradient of a scalar-output net at a batch of points: (B, n_in)."""
    return net.jet(x, order=1).grad[..., 0]


def hess_input(net: Mlp, x: torch.Tensor) -> torch.Tensor:
    """Hessian of a scalar-output net at a batch of points: (B, n_in, n_in)."""
    return net.jet(x, order=2).hess[..., 0]
