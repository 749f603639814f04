"""Latent-conditioned MLP field networks with manual reverse-mode gradients.

Two variants are used throughout the package:

* an SDF network mapping ``[x, z_shape] -> s`` (relu hidden layers), and
* a texture network mapping ``[x, z_shape, z_tex] -> rgb`` (sine hidden
  layers, Siren-style).

Evaluation is pure numpy; gradients with respect to inputs, latent codes
and parameters are computed by an explicit reverse pass (no autodiff
framework). Everything is float64 by default; checkpoints store float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

RELU = "relu"
SINE = "sine"
LINEAR = "linear"

_ACTIVATIONS = (RELU, SINE, LINEAR)


@dataclass
class LatentCode:
    """Per-object shape and texture feature vectors."""

    shape: np.ndarray
    texture: np.ndarray
    category: int

    def __post_init__(self):
        self.shape = np.asarray(self.shape, dtype=np.float64)
        self.texture = np.asarray(self.texture, dtype=np.float64)
        if not (np.all(np.isfinite(self.shape)) and np.all(np.isfinite(self.texture))):
            raise ConfigurationError("latent code entries must be finite")


@dataclass
class LatentTable:
    """Stacked per-object codes; row i belongs to object i."""

    shape_codes: np.ndarray   # (n, d_shape)
    texture_codes: np.ndarray  # (n, d_tex)
    categories: np.ndarray    # (n,) int

    def __len__(self):
        return self.shape_codes.shape[0]

    def code(self, i: int) -> LatentCode:
        return LatentCode(self.shape_codes[i].copy(), self.texture_codes[i].copy(),
                          int(self.categories[i]))


@dataclass
class GradientTape:
    """Gradients from one backward pass.

    ``weight_grads``/``bias_grads`` are summed over the batch;
    ``input_grads`` is per point, with the leading 3 columns belonging to
    the spatial coordinate and the remainder to the latent slot(s).
    """

    weight_grads: list
    bias_grads: list
    input_grads: np.ndarray

    @property
    def point_grads(self) -> np.ndarray:
        return self.input_grads[:, :3]

    @property
    def latent_grads(self) -> np.ndarray:
        return self.input_grads[:, 3:]


class FieldNetwork:
    """Dense MLP with per-layer relu / sine / linear activations.

    Single precision is the default for evaluation speed; use
    ``astype(np.float64)`` for gradient-check builds.
    """

    def __init__(self, weights, biases, activations, omega0: float = 30.0,
                 dtype=np.float32):
        if len(weights) != len(biases) or len(weights) != len(activations):
            raise ConfigurationError("layer lists must have equal length")
        for act in activations:
            if act not in _ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {act!r}")
        if omega0 <= 0:
            raise ConfigurationError("omega0 must be positive")
        for i in range(len(weights) - 1):
            if weights[i].shape[0] != weights[i + 1].shape[1]:
                raise ConfigurationError("layer shapes do not chain")
        self.dtype = np.dtype(dtype)
        self.weights = [np.asarray(w, dtype=self.dtype) for w in weights]
        self.biases = [np.asarray(b, dtype=self.dtype) for b in biases]
        self.activations = list(activations)
        self.omega0 = float(omega0)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "FieldNetwork":
        return FieldNetwork([w.copy() for w in self.weights],
                            [b.copy() for b in self.biases],
                            list(self.activations), self.omega0, dtype=self.dtype)

    def astype(self, dtype) -> "FieldNetwork":
        return FieldNetwork(self.weights, self.biases, list(self.activations),
                            self.omega0, dtype=dtype)

    # ----- construction ------------------------------------------------

    @classmethod
    def sdf_net(cls, latent_dim: int = 64, hidden: int = 128, depth: int = 4,
                seed: int = 0, dtype=np.float32) -> "FieldNetwork":
        """Relu MLP mapping (3 + latent_dim) -> 1."""
        dims = [3 + latent_dim] + [hidden] * depth + [1]
        acts = [RELU] * depth + [LINEAR]
        return cls._init_layers(dims, acts, seed=seed, dtype=dtype)

    @classmethod
    def texture_net(cls, shape_dim: int = 64, tex_dim: int = 64, hidden: int = 128,
                    depth: int = 4, omega0: float = 30.0, seed: int = 0,
                    dtype=np.float32) -> "FieldNetwork":
        """Siren MLP mapping (3 + shape_dim + tex_dim) -> 3."""
        dims = [3 + shape_dim + tex_dim] + [hidden] * depth + [3]
        acts = [SINE] * depth + [LINEAR]
        return cls._init_layers(dims, acts, omega0=omega0, seed=seed, dtype=dtype)

    @classmethod
    def _init_layers(cls, dims, acts, omega0: float = 30.0, seed: int = 0,
                     dtype=np.float32) -> "FieldNetwork":
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for i, act in enumerate(acts):
            fan_in, fan_out = dims[i], dims[i + 1]
            if act == SINE:
                # Siren scheme: wide first layer, 1/omega0-scaled hidden layers.
                bound = 1.0 / fan_in if i == 0 else np.sqrt(6.0 / fan_in) / omega0
            elif act == RELU:
                bound = np.sqrt(6.0 / fan_in)  # Kaiming-uniform
            else:
                bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-1.0, 1.0, size=fan_out) / np.sqrt(fan_in))
        return cls(weights, biases, acts, omega0=omega0, dtype=dtype)

    # ----- evaluation ---------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=self.dtype))
        if x.shape[1] != self.in_dim:
            raise ConfigurationError(
                f"input dim {x.shape[1]} does not match network in_dim {self.in_dim}")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the network on rows of ``x`` (N, in_dim) -> (N, out_dim)."""
        y, _ = self.forward_cache(x)
        return y

    def forward_cache(self, x: np.ndarray):
        """Forward pass keeping pre-activations for the reverse pass."""
        h = self._check_input(x)
        pre = []      # z_l = h_{l-1} W_l^T + b_l
        hidden = [h]  # h_0 .. h_{L-1}
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = h @ w.T + b
            pre.append(z)
            h = _apply_activation(z, act, self.omega0)
            hidden.append(h)
        return h, (pre, hidden)

    def backward(self, cache, cotangent: np.ndarray) -> GradientTape:
        """Reverse pass for the scalar loss sum(cotangent * output).

        Returns summed parameter gradients and per-row input gradients.
        """
        pre, hidden = cache
        dh = np.atleast_2d(np.asarray(cotangent, dtype=self.dtype))
        if dh.shape != pre[-1].shape:
            raise ConfigurationError(
                f"cotangent shape {dh.shape} does not match output {pre[-1].shape}")
        weight_grads = [None] * self.n_layers
        bias_grads = [None] * self.n_layers
        for l in range(self.n_layers - 1, -1, -1):
            act = self.activations[l]
            dz = dh if act == LINEAR else dh * _activation_grad(pre[l], act, self.omega0)
            weight_grads[l] = dz.T @ hidden[l]
            bias_grads[l] = dz.sum(axis=0)
            dh = dz @ self.weights[l]
        return GradientTape(weight_grads, bias_grads, dh)

    def input_gradient(self, x: np.ndarray, component: int = 0) -> np.ndarray:
        """Gradient of output ``component`` with respect to each input row."""
        y, cache = self.forward_cache(x)
        cot = np.zeros_like(y)
        cot[:, component] = 1.0
        return self.backward(cache, cot).input_grads

    def parameters(self):
        """Flat list alternating weight / bias arrays (shared references)."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params


def _apply_activation(z, act, omega0):
    if act == RELU:
        return np.maximum(z, 0.0)
    if act == SINE:
        return np.sin(omega0 * z)
    return z


def _activation_grad(z, act, omega0):
    if act == RELU:
        return (z > 0.0).astype(z.dtype)
    if act == SINE:
        return omega0 * np.cos(omega0 * z)
    return np.ones_like(z)


# ----- field-level wrappers ----------------------------------------------


def assemble_inputs(points: np.ndarray, *latents) -> np.ndarray:
    """Concatenate (N,3) points with latent vectors, broadcasting 1-d codes."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != 3:
        raise ConfigurationError("points must be (N, 3)")
    if not np.all(np.isfinite(points)):
        raise ConfigurationError("point coordinates must be finite")
    parts = [points]
    for z in latents:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = np.broadcast_to(z, (points.shape[0], z.shape[0]))
        elif z.shape[0] != points.shape[0]:
            raise ConfigurationError("per-point latents must match point count")
        parts.append(z)
    return np.concatenate(parts, axis=1)


def sdf_forward(net: FieldNetwork, z_shape, points) -> np.ndarray:
    """G(x, z_shape): one signed distance per point."""
    return net.forward(assemble_inputs(points, z_shape))[:, 0]


def sdf_gradient(net: FieldNetwork, z_shape, points) -> np.ndarray:
    """dG/dx, a 3-vector per point, from one backward pass."""
    return net.input_gradient(assemble_inputs(points, z_shape))[:, :3]


def texture_forward(net: FieldNetwork, z_shape, z_tex, points) -> np.ndarray:
    """t(x, z_shape, z_tex): an RGB triple per point."""
    return net.forward(assemble_inputs(points, z_shape, z_tex))


# ----- Adam ----------------------------------------------------------------


@dataclass
class AdamState:
    """Moment accumulators for one optimized array."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)


def adam_step(state: AdamState, target: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; mutates ``state``, returns new target."""
    target = np.asarray(target)
    gradient = np.asarray(gradient, dtype=target.dtype)
    if gradient.shape != target.shape:
        raise ConfigurationError("gradient shape must match target")
    if state.m is None:
        state.m = np.zeros_like(target)
        state.v = np.zeros_like(target)
    state.step_count += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * gradient
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * gradient ** 2
    m_hat = state.m / (1.0 - state.beta1 ** state.step_count)
    v_hat = state.v / (1.0 - state.beta2 ** state.step_count)
    return target - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class AdamOptimizer:
    """Adam over a list of arrays (network parameters), updated in place."""

    def __init__(self, params, lr: float = 1e-3):
        self.params = params
        self.states = [AdamState(lr=lr) for _ in params]

    def set_lr(self, lr: float):
        for s in self.states:
            s.lr = lr

    def step(self, grads):
        for p, s, g in zip(self.params, self.states, grads):
            p[...] = adam_step(s, p, g)
