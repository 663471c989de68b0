"""Small numpy multilayer perceptrons with exact derivatives.

Everything here works on a flat float64 parameter vector. The layout is
layer-major; each layer stores its weight matrix of shape
``(fan_in, fan_out)`` in row-major order followed by its bias of length
``fan_out``. A layer computes ``a @ W + b``; hidden layers apply ``tanh``
and the output layer is affine.

Two kinds of derivative are provided:

* reverse-mode gradients of ``<upstream, forward(t)>`` with respect to the
  parameters (:func:`grad_params`);
* the derivative of every output with respect to the scalar input ``t``,
  carried forward as a tangent through the stack
  (:func:`forward_with_time_grad`), together with the exact reverse pass
  through that tangent computation (:func:`backward_dual`). The latter is
  what a physics-residual loss needs, since it depends on ``d output/dt``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, NonFiniteError

ACTIVATIONS = ("tanh",)


@dataclass(frozen=True)
class MLPConfig:
    input_dim: int = 1
    hidden_layers: int = 3
    hidden_width: int = 50
    output_dim: int = 9
    activation: str = "tanh"

    def __post_init__(self):
        if self.input_dim != 1:
            raise DimensionMismatch("only scalar (time) inputs are supported")
        if self.hidden_layers < 0 or self.output_dim < 1:
            raise DimensionMismatch(f"invalid layer dimensions in {self}")
        if self.hidden_layers > 0 and self.hidden_width < 1:
            raise DimensionMismatch("hidden_width must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]

    @property
    def n_params(self) -> int:
        sizes = self.layer_sizes
        return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50_000
    l2_coefficient: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.l2_coefficient < 0:
            raise ValueError("l2_coefficient must be non-negative")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def unpack(config: MLPConfig, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat parameter vector into ``(W, b)`` views, one per layer."""
    params = np.asarray(params, dtype=float)
    if params.ndim != 1 or params.size != config.n_params:
        raise DimensionMismatch(
            f"expected {config.n_params} parameters, got shape {params.shape}"
        )
    layers = []
    pos = 0
    sizes = config.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = params[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = params[pos:pos + fan_out]
        pos += fan_out
        layers.append((W, b))
    return layers


def init_params(config: MLPConfig, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases.

    Weights of a layer are drawn from U(-r, r) with
    ``r = sqrt(6 / (fan_in + fan_out))`` using numpy's PCG64 generator
    seeded with ``seed``.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    out = np.zeros(config.n_params)
    pos = 0
    sizes = config.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        r = glorot_bound(fan_in, fan_out)
        n = fan_in * fan_out
        out[pos:pos + n] = rng.uniform(-r, r, size=n)
        pos += n + fan_out
    return out


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def _as_batch(t):
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    return t.reshape(-1, 1), scalar


def _check_params(params):
    if not np.all(np.isfinite(params)):
        raise NonFiniteError("parameters contain non-finite values")


def forward(config: MLPConfig, params: np.ndarray, t) -> np.ndarray:
    """Network output at ``t`` (scalar -> vector, 1-D array -> (B, out))."""
    layers = unpack(config, params)
    _check_params(params)
    a, scalar = _as_batch(t)
    for W, b in layers[:-1]:
        a = np.tanh(a @ W + b)
    W, b = layers[-1]
    out = a @ W + b
    return out[0] if scalar else out


def grad_params(config: MLPConfig, params: np.ndarray, t, upstream) -> np.ndarray:
    """Gradient of ``sum <upstream, forward(t)>`` with respect to ``params``.

    ``upstream`` has shape ``(output_dim,)`` for scalar ``t`` or
    ``(B, output_dim)`` for a batch; batch contributions are summed.
    """
    layers = unpack(config, params)
    _check_params(params)
    a, scalar = _as_batch(t)
    g = np.asarray(upstream, dtype=float)
    g = g.reshape(1, -1) if scalar else g
    if g.shape != (a.shape[0], config.output_dim):
        raise DimensionMismatch(f"upstream shape {g.shape} does not match output")
    acts = [a]
    for W, b in layers[:-1]:
        a = np.tanh(a @ W + b)
        acts.append(a)
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        a_in = acts[i]
        grads.append((a_in.T @ g, g.sum(axis=0)))
        if i > 0:
            g = (g @ W.T) * (1.0 - a_in * a_in)
    return _pack_reversed(grads)


def _pack_reversed(grads):
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in reversed(grads)])


@dataclass
class DualCache:
    """Activations and input tangents saved by :func:`forward_dual`."""
    acts: list = field(default_factory=list)
    tangents: list = field(default_factory=list)
    pre_tangents: list = field(default_factory=list)


def forward_dual(config: MLPConfig, params: np.ndarray, t):
    """Batched forward pass carrying the input tangent.

    Returns ``(out, dout, cache)`` with ``out`` and ``dout`` of shape
    ``(B, output_dim)``.
    """
    layers = unpack(config, params)
    _check_params(params)
    a, _ = _as_batch(t)
    da = np.ones_like(a)
    cache = DualCache([a], [da], [])
    for W, b in layers[:-1]:
        dz = da @ W
        a = np.tanh(a @ W + b)
        da = (1.0 - a * a) * dz
        cache.acts.append(a)
        cache.tangents.append(da)
        cache.pre_tangents.append(dz)
    W, b = layers[-1]
    return a @ W + b, da @ W, cache


def forward_with_time_grad(config: MLPConfig, params: np.ndarray, t):
    """Outputs and their exact derivatives with respect to ``t``."""
    out, dout, _ = forward_dual(config, params, t)
    if np.ndim(t) == 0:
        return out[0], dout[0]
    return out, dout


def backward_dual(config: MLPConfig, params: np.ndarray, cache: DualCache,
                  g_out: np.ndarray, g_dout: np.ndarray) -> np.ndarray:
    """Parameter gradient of a loss that depends on both outputs and tangents.

    ``g_out`` and ``g_dout`` are the loss gradients with respect to the
    ``out`` and ``dout`` arrays returned by :func:`forward_dual`.
    """
    layers = unpack(config, params)
    gz = np.asarray(g_out, dtype=float)
    gdz = np.asarray(g_dout, dtype=float)
    grads = []
    n = len(layers)
    for i in range(n - 1, -1, -1):
        W, _ = layers[i]
        a_in, da_in = cache.acts[i], cache.tangents[i]
        grads.append((a_in.T @ gz + da_in.T @ gdz, gz.sum(axis=0)))
        if i == 0:
            break
        # a_in = tanh(z), da_in = s * dz with s = 1 - a_in**2
        ga = gz @ W.T
        gda = gdz @ W.T
        s = 1.0 - a_in * a_in
        dz = cache.pre_tangents[i - 1]
        gdz = gda * s
        gz = ga * s - 2.0 * a_in * s * dz * gda
    return _pack_reversed(grads)


def l2_penalty(params: np.ndarray, l2_coefficient: float) -> float:
    if l2_coefficient < 0:
        raise ValueError("l2_coefficient must be non-negative")
    params = np.asarray(params, dtype=float)
    return float(l2_coefficient * np.dot(params, params))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              config: TrainConfig) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update with coupled L2 decay.

    The decay term ``2 * l2_coefficient * params`` (the gradient of
    :func:`l2_penalty`) is added to the raw gradient before the moment
    updates.
    """
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise DimensionMismatch(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}"
        )
    g = grads + 2.0 * config.l2_coefficient * params if config.l2_coefficient else grads
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new = params - config.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, step, state.beta1, state.beta2, state.eps)


# checkpoints -------------------------------------------------------------

CHECKPOINT_FORMAT = "epipinn-mlp-checkpoint/1"


def save_checkpoint(path, config: MLPConfig, params: np.ndarray, seed: int, step: int) -> None:
    """Write a JSON checkpoint.

    Layout: ``{"format", "config", "seed", "step", "params"}`` where
    ``params`` is the flat vector as a list of floats. Python writes floats
    with the shortest round-tripping repr, so reloading is bit-exact.
    """
    params = np.asarray(params, dtype=float)
    unpack(config, params)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(config),
        "seed": int(seed),
        "step": int(step),
        "params": [float(x) for x in params],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[MLPConfig, np.ndarray, int, int]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an MLP checkpoint")
    config = MLPConfig(**doc["config"])
    params = np.array(doc["params"], dtype=float)
    unpack(config, params)
    return config, params, doc["seed"], doc["step"]
