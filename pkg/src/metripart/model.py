"""Parameter container for the learnable closures, flattening and checkpoints."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .nn import DTYPE, Cmnn, Mlp

CHECKPOINT_VERSION = "metripart-checkpoint/1"

FLUID_NETS = ("volume", "energy", "coef_a", "coef_b", "coef_c", "teacher")
SOLID_NETS = ("strain", "energy_dev")


@dataclass
class ModelParams:
    """Networks and scalars of the coarse-grained model.

    ``h`` is the interaction cutoff, a fixed hyperparameter rather than a
    trainable weight. Boltzmann constant and mass are stored as logs.
    """

    dim: int
    h: float
    volume: Mlp
    energy: Cmnn
    coef_a: Mlp
    coef_b: Mlp
    coef_c: Mlp
    teacher: Mlp
    log_kb: torch.Tensor
    log_m: torch.Tensor
    strain: Mlp | None = None
    energy_dev: Cmnn | None = None
    extra: dict = field(default_factory=dict)

    @property
    def solid(self) -> bool:
        return self.strain is not None

    @property
    def kb(self) -> torch.Tensor:
        return torch.exp(self.log_kb)

    @property
    def m(self) -> torch.Tensor:
        return torch.exp(self.log_m)

    def networks(self) -> dict[str, Mlp]:
        names = FLUID_NETS + (SOLID_NETS if self.solid else ())
        return {name: getattr(self, name) for name in names}

    def named_parameters(self) -> list[tuple[str, torch.Tensor]]:
        out = []
        for name, net in self.networks().items():
            for k, p in enumerate(net.parameters()):
                kind = "weight" if k % 2 == 0 else "bias"
                out.append((f"{name}.{kind}{k // 2}", p))
        out.append(("log_kb", self.log_kb))
        out.append(("log_m", self.log_m))
        return out

    def parameters(self) -> list[torch.Tensor]:
        return [p for _, p in self.named_parameters()]

    def requires_grad_(self, flag: bool = True) -> "ModelParams":
        for p in self.parameters():
            p.requires_grad_(flag)
        return self

    def clone(self) -> "ModelParams":
        return ParamVector.flatten(self).unflatten_into(_skeleton(self))


def init_params(dim: int = 3, h: float = 1.0, hidden: int = 50, depth: int = 2,
                solid: bool = False, seed: int = 0, kb: float = 1.0, m: float = 1.0) -> ModelParams:
    """Freshly initialized parameters: uniform(+-1/sqrt(fan_in)) weights, zero biases."""
    g = torch.Generator().manual_seed(int(seed))
    hid = [hidden] * depth
    params = ModelParams(
        dim=dim,
        h=float(h),
        volume=Mlp.init([1, *hid, 1], g, zero_last=True),
        energy=Cmnn.init([2, *hid, 1], (1.0, -1.0), g),
        coef_a=Mlp.init([2, *hid, 1], g),
        coef_b=Mlp.init([2, *hid, 1], g),
        coef_c=Mlp.init([2, *hid, 1], g),
        teacher=Mlp.init([1 + dim, *hid, 1], g),
        log_kb=torch.tensor(math.log(kb), dtype=DTYPE),
        log_m=torch.tensor(math.log(m), dtype=DTYPE),
    )
    if solid:
        n_inv = dim - 1
        indicator = (1.0, 1.0) if dim == 2 else (1.0, 1.0, 0.0)
        params.strain = Mlp.init([2 * dim, *hid, dim * (dim + 1) // 2], g)
        params.energy_dev = Cmnn.init([1 + n_inv, *hid, 1], indicator, g)
    return params


def zero_params(dim: int = 3, h: float = 1.0, hidden: int = 4, solid: bool = False) -> ModelParams:
    """All network weights and biases exactly zero (k_B = m = 1)."""
    params = init_params(dim, h, hidden, solid=solid)
    with torch.no_grad():
        for p in params.parameters():
            p.zero_()
    return params


class ParamVector:
    """Flat view of every trainable scalar with a stable name -> slice map."""

    def __init__(self, flat: torch.Tensor, index: dict[str, tuple[slice, tuple[int, ...]]]):
        self.flat = flat
        self.index = index

    @classmethod
    def flatten(cls, params: ModelParams) -> "ParamVector":
        chunks, index, start = [], {}, 0
        for name, p in params.named_parameters():
            n = p.numel()
            index[name] = (slice(start, start + n), tuple(p.shape))
            chunks.append(p.detach().reshape(-1))
            start += n
        return cls(torch.cat(chunks).clone(), index)

    @classmethod
    def from_grads(cls, params: ModelParams, grads: list[torch.Tensor | None]) -> "ParamVector":
        chunks, index, start = [], {}, 0
        for (name, p), g in zip(params.named_parameters(), grads):
            n = p.numel()
            index[name] = (slice(start, start + n), tuple(p.shape))
            chunks.append(torch.zeros(n, dtype=DTYPE) if g is None else g.detach().reshape(-1))
            start += n
        return cls(torch.cat(chunks), index)

    def __len__(self) -> int:
        return self.flat.numel()

    def unflatten_into(self, params: ModelParams) -> ModelParams:
        """Write the flat values into ``params`` in place and return it."""
        with torch.no_grad():
            for name, p in params.named_parameters():
                sl, shape = self.index[name]
                p.copy_(self.flat[sl].reshape(shape))
        return params


def grad_params(loss: torch.Tensor, params: ModelParams) -> ParamVector:
    grads = torch.autograd.grad(loss, params.parameters(), allow_unused=True)
    return ParamVector.from_grads(params, list(grads))


def _clone_net(net: Mlp) -> Mlp:
    ws = [w.detach().clone() for w in net.weights]
    bs = [b.detach().clone() for b in net.biases]
    out = Cmnn(ws, bs, net.indicator.clone(), net.activation) if isinstance(net, Cmnn) else Mlp(ws, bs, net.activation)
    out.set_input_normalization(net.in_shift, net.in_scale)
    return out


def _skeleton(params: ModelParams) -> ModelParams:
    nets = {name: _clone_net(net) for name, net in params.networks().items()}
    return ModelParams(dim=params.dim, h=params.h, log_kb=params.log_kb.detach().clone(),
                       log_m=params.log_m.detach().clone(), extra=dict(params.extra), **nets)


def _net_to_json(net: Mlp) -> dict:
    doc = {
        "kind": net.kind,
        "widths": net.widths,
        "activation": net.activation,
        "input_shift": net.in_shift.tolist(),
        "input_scale": net.in_scale.tolist(),
        "params": torch.cat([p.detach().reshape(-1) for p in net.parameters()]).tolist(),
    }
    if isinstance(net, Cmnn):
        doc["indicator"] = net.indicator.tolist()
    return doc


def _net_from_json(doc: dict) -> Mlp:
    widths = doc["widths"]
    flat = torch.tensor(doc["params"], dtype=DTYPE)
    ws, bs, start = [], [], 0
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        ws.append(flat[start:start + n_in * n_out].reshape(n_out, n_in).clone())
        start += n_in * n_out
        bs.append(flat[start:start + n_out].clone())
        start += n_out
    if start != flat.numel():
        raise ValueError("parameter count does not match the stored widths")
    if doc["kind"] == "cmnn":
        net = Cmnn(ws, bs, doc["indicator"], doc["activation"])
    else:
        net = Mlp(ws, bs, doc["activation"])
    net.set_input_normalization(doc["input_shift"], doc["input_scale"])
    return net


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "dim": params.dim,
        "h": params.h,
        "log_kb": float(params.log_kb),
        "log_m": float(params.log_m),
        "networks": {name: _net_to_json(net) for name, net in params.networks().items()},
        "extra": params.extra,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_checkpoint(path: str | Path) -> ModelParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    nets = {name: _net_from_json(d) for name, d in doc["networks"].items()}
    return ModelParams(dim=doc["dim"], h=doc["h"],
                       log_kb=torch.tensor(doc["log_kb"], dtype=DTYPE),
                       log_m=torch.tensor(doc["log_m"], dtype=DTYPE),
                       extra=doc.get("extra", {}), **nets)
