"""Numerical substrate: seeded RNG streams, parameter store, AdamW, init.

Dense matrices are plain float64 ``numpy.ndarray`` (row-major, 2-D) and
sparse matrices are ``scipy.sparse`` CSR throughout the package; both
carry the shape/finiteness contracts directly.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor


def component_rng(seed: int, label: str) -> np.random.Generator:
    """Independent, reproducible RNG stream for one named component.

    The label is folded into the seed material via CRC32 so streams stay
    stable across processes (unlike ``hash()``).
    """
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), key)))


def xavier_init(rows: int, cols: int, seed: int | None = None,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Uniform Xavier/Glorot init in +-sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise ValueError(f"xavier_init needs positive dims, got {rows}x{cols}")
    if rng is None:
        rng = np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass
class Param:
    """A named trainable matrix with an accumulated gradient buffer."""

    name: str
    value: np.ndarray
    frozen: bool = False
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64)
        if self.value.ndim != 2:
            raise ValueError(f"param '{self.name}' must be 2-D, got {self.value.shape}")
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad[:] = 0.0


def param_leaves(params: Sequence[Param]) -> dict[str, Tensor]:
    """Fresh graph leaves for one forward pass; frozen params become constants."""
    leaves: dict[str, Tensor] = {}
    for p in params:
        if p.name in leaves:
            raise ValueError(f"duplicate parameter name '{p.name}'")
        leaves[p.name] = Tensor(p.value, requires_grad=not p.frozen)
    return leaves


def collect_grads(params: Sequence[Param], leaves: dict[str, Tensor]) -> None:
    """Accumulate leaf gradients back into the parameter store."""
    for p in params:
        leaf = leaves.get(p.name)
        if leaf is not None and leaf.grad is not None and not p.frozen:
            p.grad += leaf.grad


class AdamW:
    """Adam with decoupled weight decay; state is keyed by parameter name.

    Updates are elementwise and the step is deterministic, so repeated
    runs from identical inputs are bit-reproducible.
    """

    def __init__(self, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: Iterable[Param]) -> None:
        """One update; skips frozen params and zeroes consumed gradients."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p in params:
            if p.frozen:
                continue
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter '{p.name}'")
            m = self.m.setdefault(p.name, np.zeros_like(p.value))
            v = self.v.setdefault(p.name, np.zeros_like(p.value))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p.value -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                                  + self.weight_decay * p.value)
            p.zero_grad()


def adamw_step(state: AdamW, params: Iterable[Param]) -> None:
    state.step(params)


def dropout_forward(x: np.ndarray, rate: float, training: bool,
                    seed: int | None = None,
                    rng: np.random.Generator | None = None):
    """Inverted dropout: kept entries scaled by 1/(1-rate), dropped zeroed.

    Returns (output, scaled keep-mask); multiplying an upstream gradient
    by the mask is the exact backward pass.
    """
    x = np.asarray(x, dtype=np.float64)
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x.copy(), np.ones_like(x)
    if rng is None:
        rng = np.random.default_rng(seed)
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def spmm(a, b: np.ndarray) -> np.ndarray:
    """Exact sparse-dense product; cost scales with nnz(a) * b.shape[1]."""
    if not sp.issparse(a):
        raise TypeError("spmm expects a scipy sparse matrix on the left")
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"spmm shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    n_coords: int


def gradient_check(build: Callable[[], tuple[Tensor, dict[str, Tensor]]],
                   params: Sequence[Param], *, n_coords: int = 50,
                   step: float = 1e-5, rng: np.random.Generator | None = None,
                   ) -> GradCheckResult:
    """Central finite-difference check of a scalar loss.

    ``build`` must construct the loss graph from the *current* parameter
    values and return ``(loss, leaves)``. For every parameter, up to
    ``n_coords`` coordinates are perturbed by +-step and the two-sided
    difference quotient is compared against the tape gradient using
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    loss, leaves = build()
    loss.backward()
    analytic = {}
    for p in params:
        leaf = leaves[p.name]
        analytic[p.name] = (np.zeros_like(p.value) if leaf.grad is None
                            else leaf.grad.copy())
    worst = 0.0
    worst_param = ""
    total = 0
    for p in params:
        size = p.value.size
        coords = rng.choice(size, size=min(n_coords, size), replace=False)
        flat = p.value.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            f_plus = float(build()[0].value)
            flat[c] = orig - step
            f_minus = float(build()[0].value)
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(analytic[p.name].reshape(-1)[c] - numeric) / max(1.0, abs(numeric))
            total += 1
            if err > worst:
                worst = err
                worst_param = p.name
    return GradCheckResult(worst, worst_param, total)
