"""Small dense networks with exact reverse-mode gradients and an Adam optimizer.

Networks operate on batches: inputs are ``(N, in_dim)`` arrays and a single
vector is treated as a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "relu")
OUTPUT_TRANSFORMS = ("identity", "softmax", "tanh")


class StaleTapeError(RuntimeError):
    """Raised when a tape is replayed against a network that has changed."""


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, path: str):
        super().__init__(f"non-finite gradient in parameter {path!r}")
        self.path = path


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _residual_blocks(n_hidden: int, widths: list[int]) -> list[tuple[int, int]]:
    """Group equal-width hidden layers into two-layer skip blocks ``[start, end)``."""
    blocks = []
    i = 0
    while i < n_hidden:
        if widths[i] != widths[i + 1]:
            i += 1
            continue
        end = i + 2 if i + 1 < n_hidden and widths[i + 1] == widths[i + 2] else i + 1
        blocks.append((i, end))
        i = end
    return blocks


@dataclass
class Tape:
    net_id: int
    version: int
    inputs: list  # input to each affine layer
    preacts: list  # pre-activation of each hidden layer
    output: np.ndarray
    final_z: np.ndarray


@dataclass
class DenseNet:
    """Feed-forward net ``in -> hidden* -> out``.

    ``weights[i]`` has shape ``(out_i, in_i)``. When ``residual`` is set,
    consecutive equal-width hidden layers form blocks
    ``h <- h + act(W2 act(W1 h + b1) + b2)``.
    """

    weights: list
    biases: list
    activation: str = "tanh"
    residual: bool = False
    output_transform: str = "identity"
    blocks: list = field(init=False)
    _version: int = field(default=0, init=False, repr=False)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_transform not in OUTPUT_TRANSFORMS:
            raise ValueError(f"unknown output transform {self.output_transform!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be non-empty lists of equal length")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i} expects {w.shape[1]} inputs but layer {i - 1} "
                    f"produces {self.weights[i - 1].shape[0]}"
                )
        self.blocks = _residual_blocks(self.n_hidden, self.widths) if self.residual else []

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_hidden(self) -> int:
        return len(self.weights) - 1

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def mark_updated(self):
        self._version += 1

    def named_parameters(self, prefix: str = "") -> dict[str, np.ndarray]:
        params = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"{prefix}layers.{i}.weight"] = w
            params[f"{prefix}layers.{i}.bias"] = b
        return params

    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> DenseNet:
        return DenseNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.residual,
            self.output_transform,
        )

    def _act(self, z):
        return np.tanh(z) if self.activation == "tanh" else np.maximum(z, 0.0)

    def _act_grad(self, z, a):
        return 1.0 - a * a if self.activation == "tanh" else (z > 0).astype(np.float64)

    def forward(self, x) -> tuple[np.ndarray, Tape]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.ndim != 2 or h.shape[1] != self.in_dim:
            raise ValueError(f"expected input width {self.in_dim}, got shape {x.shape}")
        block_start = {s: e for s, e in self.blocks}
        block_end = {e - 1: s for s, e in self.blocks}
        skip = {}
        inputs, preacts = [], []
        for i in range(self.n_hidden):
            if i in block_start:
                skip[i] = h
            inputs.append(h)
            z = h @ self.weights[i].T + self.biases[i]
            preacts.append(z)
            h = self._act(z)
            if i in block_end:
                h = h + skip[block_end[i]]
        inputs.append(h)
        z = h @ self.weights[-1].T + self.biases[-1]
        if self.output_transform == "softmax":
            out = softmax(z)
        elif self.output_transform == "tanh":
            out = np.tanh(z)
        else:
            out = z
        tape = Tape(id(self), self._version, inputs, preacts, out, z)
        return (out[0] if single else out), tape

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, tape: Tape, cotangent, pre_transform: bool = False):
        """Vector-Jacobian product for ``cotangent . output``.

        Returns ``(weight_grads, bias_grads, input_grad)``. With
        ``pre_transform`` the cotangent is taken with respect to the final
        affine output, before the output transform.
        """
        if tape.net_id != id(self) or tape.version != self._version:
            raise StaleTapeError("tape was recorded for a different network state")
        g = np.asarray(cotangent, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != tape.final_z.shape:
            raise ValueError(f"cotangent shape {g.shape} != output shape {tape.final_z.shape}")
        if not pre_transform:
            out = tape.output if tape.output.ndim == 2 else tape.output[None, :]
            if self.output_transform == "softmax":
                g = out * (g - (g * out).sum(axis=1, keepdims=True))
            elif self.output_transform == "tanh":
                g = g * (1.0 - out * out)
        block_start = {s: e for s, e in self.blocks}
        block_end = {e - 1: s for s, e in self.blocks}
        wgrads = [None] * len(self.weights)
        bgrads = [None] * len(self.weights)
        wgrads[-1] = g.T @ tape.inputs[-1]
        bgrads[-1] = g.sum(axis=0)
        gh = g @ self.weights[-1]
        pending = {}
        for i in range(self.n_hidden - 1, -1, -1):
            if i in block_end:
                pending[block_end[i]] = gh
            z = tape.preacts[i]
            gz = gh * self._act_grad(z, self._act(z))
            wgrads[i] = gz.T @ tape.inputs[i]
            bgrads[i] = gz.sum(axis=0)
            gh = gz @ self.weights[i]
            if i in block_start:
                gh = gh + pending.pop(i)
        return wgrads, bgrads, gh

    def grads_dict(self, wgrads, bgrads, prefix: str = "") -> dict[str, np.ndarray]:
        grads = {}
        for i, (gw, gb) in enumerate(zip(wgrads, bgrads)):
            grads[f"{prefix}layers.{i}.weight"] = gw
            grads[f"{prefix}layers.{i}.bias"] = gb
        return grads


def layer_widths(in_dim: int, width: int, depth: int, out_dim: int) -> list[int]:
    if depth < 1 or width < 1:
        raise ValueError(f"need depth >= 1 and width >= 1, got {depth}, {width}")
    return [in_dim] + [width] * depth + [out_dim]


def box_init(
    widths,
    input_box,
    rng=None,
    *,
    activation: str = "tanh",
    residual: bool = False,
    output_transform: str = "identity",
    return_anchors: bool = False,
):
    """Initialize a net whose first-layer hyperplanes cut through ``input_box``.

    Each first-layer row is a random unit direction ``w`` with bias
    ``b = -w . a`` for an anchor ``a`` drawn uniformly in the box. Deeper
    layers use Glorot-uniform weights and zero biases.

    ``input_box`` is a pair ``(lower, upper)`` of scalars or length-``in_dim``
    vectors.
    """
    rng = np.random.default_rng(rng)
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise ValueError(f"invalid layer widths {widths}")
    lo, hi = (np.broadcast_to(np.asarray(v, dtype=np.float64), (widths[0],)) for v in input_box)
    if not np.all(hi > lo):
        raise ValueError("input box has zero volume")
    w0 = rng.standard_normal((widths[1], widths[0]))
    w0 /= np.linalg.norm(w0, axis=1, keepdims=True)
    anchors = lo + (hi - lo) * rng.random((widths[1], widths[0]))
    b0 = -np.einsum("ij,ij->i", w0, anchors)
    weights, biases = [w0], [b0]
    for fan_in, fan_out in zip(widths[1:-1], widths[2:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    net = DenseNet(weights, biases, activation, residual, output_transform)
    return (net, anchors) if return_anchors else net


@dataclass
class Adam:
    """Bias-corrected Adam acting in place on a dict of named arrays."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for name, g in grads.items():
            if params[name].shape != g.shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != {params[name].shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(name)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, g in grads.items():
            m = self.first_moment.get(name)
            v = self.second_moment.get(name)
            if m is None:
                m = np.zeros_like(g)
                v = np.zeros_like(g)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.first_moment[name] = m
            self.second_moment[name] = v
            params[name] -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


def adam_step(params, grads, state: Adam):
    state.step(params, grads)
    return params, state
