"""Grouped layer-wise learning-rate decay, AdamW, and the cosine warmup schedule.

The encoder's hidden layers are split into G contiguous groups (embeddings
ride with the lowest group) and adjacent groups' learning rates differ by
the decay factor lambda; the pooler and classifier form an extra head group
with a slightly higher rate than the top hidden group.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError

_LAYER_RE = re.compile(r"^layer\.(\d+)\.")

NO_DECAY_SUFFIXES = (".bias", ".gain")  # biases and layer-norm parameters


@dataclass(frozen=True)
class ParamGroup:
    """A set of parameter names sharing one base learning rate."""

    names: tuple[str, ...]
    base_lr: float
    weight_decay: float
    role: str  # "embeddings+lower" | "middle" | "upper" | "head"


@dataclass
class ScheduleState:
    """Progress through a cosine-with-warmup schedule."""

    step: int
    total_steps: int
    warmup_frac: float = 0.10

    def __post_init__(self):
        if self.total_steps <= 0:
            raise ConfigError("total_steps must be positive")
        if self.step < 0:
            raise ContractError("step must be non-negative")


def cosine_warmup_multiplier(state: ScheduleState) -> float:
    """Linear ramp to 1.0 over the first warmup fraction, cosine decay to 0.0."""
    t, total = state.step, state.total_steps
    if t > total:
        raise ContractError(f"step {t} is past total_steps {total}")
    w = int(round(state.warmup_frac * total))
    if t <= w and w > 0:
        return t / w
    return 0.5 * (1.0 + math.cos(math.pi * (t - w) / (total - w)))


def _ratio_exact_product(lower: float, lam: float) -> float:
    # Prefer a product that reproduces `lower` under float division by lam
    # (the decay relation eta_{g-1} = eta_g / lam held bit-exactly). For some
    # (lam, lower) no such float exists; then the plain product is used.
    cand = lower * lam
    lo = hi = cand
    for _ in range(8):
        for c in (lo, hi):
            if c / lam == lower:
                return c
        lo = math.nextafter(lo, -math.inf)
        hi = math.nextafter(hi, math.inf)
    return cand


def group_learning_rates(G: int, eta: float, lam: float) -> list[float]:
    """Per-group rates eta * lam^(g - ceil(G/2)); the middle group gets eta itself."""
    if G < 1:
        raise ConfigError("G must be at least 1")
    if lam <= 0:
        raise ConfigError("lambda must be positive")
    if eta <= 0:
        raise ConfigError("eta must be positive")
    center = math.ceil(G / 2)  # 1-based index of the group anchored at eta
    lrs = [0.0] * G
    lrs[center - 1] = eta
    for g in range(center - 2, -1, -1):
        lrs[g] = lrs[g + 1] / lam
    for g in range(center, G):
        lrs[g] = _ratio_exact_product(lrs[g - 1], lam)
    return lrs


def split_layers(n_layers: int, G: int) -> list[list[int]]:
    """Contiguous bottom-up layer sets; lower groups absorb any remainder."""
    if G > n_layers:
        raise ConfigError(f"cannot split {n_layers} layers into {G} groups")
    base, rem = divmod(n_layers, G)
    sizes = [base + 1] * rem + [base] * (G - rem)
    out, start = [], 0
    for size in sizes:
        out.append(list(range(start, start + size)))
        start += size
    return out


def _role(g: int, G: int) -> str:
    if g == 0:
        return "embeddings+lower"
    if g == G - 1:
        return "upper"
    return "middle"


def build_grouped_llrd(
    model_params,
    G: int = 3,
    eta: float = 1e-5,
    lam: float = 1.6,
    head_multiplier: float = 1.1,
    weight_decay: float = 0.01,
) -> list[ParamGroup]:
    """Partition parameters into G encoder groups plus a head group.

    `model_params` is a name -> Tensor mapping (or an iterable of names).
    Embeddings join the bottom group; "pooler.*" and "classifier.*" form the
    head group at head_multiplier times the top group's rate. Every parameter
    lands in exactly one group.
    """
    names = list(model_params)
    embeddings, head = [], []
    by_layer: dict[int, list[str]] = {}
    for name in names:
        m = _LAYER_RE.match(name)
        if m:
            by_layer.setdefault(int(m.group(1)), []).append(name)
        elif name.startswith("embeddings."):
            embeddings.append(name)
        elif name.startswith(("pooler.", "classifier.")):
            head.append(name)
        else:
            raise ConfigError(f"cannot assign parameter {name!r} to a group")
    n_layers = max(by_layer) + 1 if by_layer else 0
    if sorted(by_layer) != list(range(n_layers)):
        raise ConfigError("layer indices are not contiguous from 0")

    lrs = group_learning_rates(G, eta, lam)
    layer_sets = split_layers(n_layers, G)
    groups = []
    for g, (lr, layers) in enumerate(zip(lrs, layer_sets)):
        member_names = list(embeddings) if g == 0 else []
        for i in layers:
            member_names.extend(by_layer[i])
        groups.append(
            ParamGroup(tuple(member_names), lr, weight_decay, _role(g, G))
        )
    groups.append(
        ParamGroup(tuple(head), head_multiplier * lrs[-1], weight_decay, "head")
    )
    return groups


def build_single_group(model_params, eta: float, weight_decay: float = 0.01) -> list[ParamGroup]:
    """One flat group: the plain-optimizer baseline that grouped decay degenerates to."""
    if eta <= 0:
        raise ConfigError("eta must be positive")
    return [ParamGroup(tuple(model_params), eta, weight_decay, "all")]


def decays(name: str) -> bool:
    return not name.endswith(NO_DECAY_SUFFIXES)


class AdamW:
    """Decoupled-weight-decay Adam over parameter groups.

    beta1=0.9, beta2=0.999, eps=1e-8 with bias correction. Weight decay is
    applied as theta <- theta - lr * wd * theta (decoupled from the adaptive
    step) and skipped for biases and layer-norm parameters.
    """

    def __init__(self, groups: list[ParamGroup], params: dict,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        grouped = [n for g in groups for n in g.names]
        if len(grouped) != len(set(grouped)):
            raise ConfigError("parameter groups overlap")
        if set(grouped) != set(params):
            missing = set(params) ^ set(grouped)
            raise ConfigError(f"groups do not partition the parameters: {sorted(missing)}")
        self.groups = groups
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self._m = {n: np.zeros(params[n].shape) for n in grouped}
        self._v = {n: np.zeros(params[n].shape) for n in grouped}

    def step(self, schedule_multiplier: float = 1.0) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for group in self.groups:
            lr = group.base_lr * schedule_multiplier
            for name in group.names:
                p = self.params[name]
                if p.grad is None:
                    raise ContractError(f"missing gradient for parameter {name!r}")
                g = p.grad
                m = self._m[name]
                v = self._v[name]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
                if group.weight_decay and decays(name):
                    p.values *= 1.0 - lr * group.weight_decay
                mhat = m / bc1
                vhat = v / bc2
                p.values -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "m": {n: a.copy() for n, a in self._m.items()},
            "v": {n: a.copy() for n, a in self._v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step_count"])
        for n in self._m:
            self._m[n] = np.array(state["m"][n])
            self._v[n] = np.array(state["v"][n])
