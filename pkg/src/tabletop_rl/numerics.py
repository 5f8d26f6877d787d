"""Dense numerical core: MLPs with hand-written backprop, Adam, polyak
averaging and tanh-squashed Gaussian sampling.

Everything is float64 and batch-first: a network maps an ``(B, in)`` array
to ``(B, out)``. Weight matrices are stored ``(fan_in, fan_out)`` so the
forward pass is ``x @ W + b``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class ContractError(ValueError):
    """Raised when an operation is called with arguments that break its contract."""


_ACTIVATIONS = ("identity", "tanh")


class MlpNetwork:
    """Multilayer perceptron with ReLU hidden layers.

    ``layer_sizes`` lists every layer width including input and output, e.g.
    ``[10, 64, 64, 1]``. ``output_activation`` is ``"identity"`` or ``"tanh"``.
    """

    def __init__(self, layer_sizes, output_activation="identity", rng=None):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ContractError(f"bad layer sizes {layer_sizes!r}")
        if output_activation not in _ACTIVATIONS:
            raise ContractError(f"unknown output activation {output_activation!r}")
        self.layer_sizes = sizes
        self.output_activation = output_activation
        rng = np.random.default_rng() if rng is None else rng
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "MlpNetwork":
        twin = MlpNetwork.__new__(MlpNetwork)
        twin.layer_sizes = list(self.layer_sizes)
        twin.output_activation = self.output_activation
        twin.weights = [w.copy() for w in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        return twin

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_size:
            raise ContractError(
                f"input has {x.shape[-1]} features, network expects {self.input_size}"
            )
        return x

    def forward(self, x):
        x = self._check_input(x)
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                np.maximum(h, 0.0, out=h)
        if self.output_activation == "tanh":
            h = np.tanh(h)
        return h

    def forward_cached(self, x):
        """Forward pass that also returns the activations needed by ``backward``."""
        x = self._check_input(x)
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        if self.output_activation == "tanh":
            h = np.tanh(h)
        return h, (acts, h)

    def backward(self, cache, upstream, need_input_grad=True, need_param_grads=True):
        """Gradients of ``sum(upstream * output)``.

        Returns ``(param_grads, input_grad)``; either may be ``None`` when not
        requested. Batch contributions are summed.
        """
        acts, out = cache
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != out.shape:
            raise ContractError(f"upstream shape {g.shape} != output shape {out.shape}")
        if self.output_activation == "tanh":
            g = g * (1.0 - out * out)
        n = len(self.weights)
        grads = [None] * (2 * n) if need_param_grads else None
        for i in range(n - 1, -1, -1):
            a_in = acts[i]
            if need_param_grads:
                if a_in.ndim == 1:
                    grads[2 * i] = np.outer(a_in, g)
                    grads[2 * i + 1] = g.copy()
                else:
                    grads[2 * i] = a_in.T @ g
                    grads[2 * i + 1] = g.sum(axis=0)
            if i == 0 and not need_input_grad:
                break
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (acts[i] > 0.0)
        input_grad = g if need_input_grad else None
        return grads, input_grad


def mlp_forward(net: MlpNetwork, x) -> np.ndarray:
    return net.forward(x)


def mlp_gradient(net: MlpNetwork, x, upstream):
    """Return ``(param_grads, input_grad)`` of ``upstream . net(x)``."""
    out, cache = net.forward_cached(x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != out.shape:
        raise ContractError(
            f"upstream has shape {upstream.shape}, network output is {out.shape}"
        )
    return net.backward(cache, upstream)


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params, learning_rate=1e-3, **kwargs) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            learning_rate=learning_rate,
            **kwargs,
        )


def adam_step(params, grads, state: AdamState):
    """In-place Adam update with bias correction. Returns ``(params, state)``."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ContractError("parameter, gradient and moment lists differ in length")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ContractError(f"gradient shape {np.shape(g)} != parameter shape {np.shape(p)}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient passed to adam_step")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


def polyak_update(target_params, online_params, tau: float):
    """target <- (1 - tau) * target + tau * online, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ContractError(f"polyak tau must lie in [0, 1], got {tau}")
    if len(target_params) != len(online_params):
        raise ContractError("target and online parameter lists differ in length")
    for t, o in zip(target_params, online_params):
        if t.shape != o.shape:
            raise ContractError(f"shape mismatch {t.shape} vs {o.shape}")
        if tau == 1.0:
            t[...] = o
        elif tau > 0.0:
            t *= 1.0 - tau
            t += tau * o
    return target_params


@dataclass
class GaussianPolicyOutput:
    mean: np.ndarray
    log_std: np.ndarray
    sampled_action: np.ndarray
    log_prob: np.ndarray
    noise: np.ndarray = field(repr=False, default=None)


def squashed_gaussian_sample(mean, log_std, noise) -> GaussianPolicyOutput:
    """Reparameterised sample ``tanh(mean + exp(log_std) * noise)``.

    Works on a single vector or on a batch (last axis = action dims);
    ``log_prob`` sums over the last axis.
    """
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    std = np.exp(log_std)
    action = np.tanh(mean + std * noise)
    per_dim = (
        -0.5 * noise * noise
        - log_std
        - _HALF_LOG_2PI
        - np.log(1.0 - action * action + SQUASH_EPS)
    )
    return GaussianPolicyOutput(mean, log_std, action, per_dim.sum(axis=-1), noise)


def squashed_gaussian_backward(out: GaussianPolicyOutput, d_action, d_log_prob):
    """Pull gradients on (action, log_prob) back to (mean, log_std) at fixed noise."""
    a = out.sampled_action
    one_minus = 1.0 - a * a
    std_noise = np.exp(out.log_std) * out.noise
    d_log_prob = np.asarray(d_log_prob, dtype=np.float64)[..., None]
    # d/du of -log(1 - tanh(u)^2 + eps)
    dlogp_du = 2.0 * a * one_minus / (one_minus + SQUASH_EPS)
    d_u = d_action * one_minus + d_log_prob * dlogp_du
    d_mean = d_u
    d_log_std = d_u * std_noise - d_log_prob
    return d_mean, d_log_std


def clamp_log_std(raw):
    """Clamp raw log-std head output; returns (clamped, pass-through mask)."""
    clamped = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    mask = (raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX)
    return clamped, mask
