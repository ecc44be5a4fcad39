"""Small MLP policy/value networks with analytic gradients.

Two separate tanh networks (2 hidden layers, 64 units each): the policy head
emits 17 independent Bernoulli logits over the tool universe, the value head
a scalar baseline. Gradients are hand-derived; tests check them against
central finite differences. Everything is float64 numpy, single-threaded
deterministic.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from agentwarden.domain import TOOL_COUNT

STATE_DIM = 7
HIDDEN = 64

# (name, fan_in, fan_out, init scale multiplier)
_LAYER_SPECS: tuple[tuple[str, int, int, float], ...] = (
    ("p.w1", STATE_DIM, HIDDEN, 1.0),
    ("p.w2", HIDDEN, HIDDEN, 1.0),
    ("p.w3", HIDDEN, TOOL_COUNT, 0.01),  # near-uniform initial Bernoullis
    ("v.w1", STATE_DIM, HIDDEN, 1.0),
    ("v.w2", HIDDEN, HIDDEN, 1.0),
    ("v.w3", HIDDEN, 1, 1.0),
)

PARAM_SHAPES: dict[str, tuple[int, ...]] = {}
for _name, _fi, _fo, _scale in _LAYER_SPECS:
    PARAM_SHAPES[_name] = (_fi, _fo)
    PARAM_SHAPES[_name.replace("w", "b")] = (_fo,)


def init_params(rng: np.random.Generator) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    for name, fan_in, fan_out, scale in _LAYER_SPECS:
        params[name] = rng.standard_normal((fan_in, fan_out)) * (scale / np.sqrt(fan_in))
        params[name.replace("w", "b")] = np.zeros(fan_out, dtype=np.float64)
    return params


def _forward(params: dict[str, np.ndarray], x: np.ndarray, prefix: str):
    h1 = np.tanh(x @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"])
    h2 = np.tanh(h1 @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"])
    out = h2 @ params[f"{prefix}.w3"] + params[f"{prefix}.b3"]
    return out, (x, h1, h2)


def _backward(
    params: dict[str, np.ndarray], cache, dout: np.ndarray, prefix: str
) -> dict[str, np.ndarray]:
    x, h1, h2 = cache
    grads: dict[str, np.ndarray] = {}
    grads[f"{prefix}.w3"] = h2.T @ dout
    grads[f"{prefix}.b3"] = dout.sum(axis=0)
    dh2 = (dout @ params[f"{prefix}.w3"].T) * (1.0 - h2 * h2)
    grads[f"{prefix}.w2"] = h1.T @ dh2
    grads[f"{prefix}.b2"] = dh2.sum(axis=0)
    dh1 = (dh2 @ params[f"{prefix}.w2"].T) * (1.0 - h1 * h1)
    grads[f"{prefix}.w1"] = x.T @ dh1
    grads[f"{prefix}.b1"] = dh1.sum(axis=0)
    return grads


def policy_forward(params: dict[str, np.ndarray], states: np.ndarray):
    """Bernoulli logits (N, 17) plus the backward cache."""
    return _forward(params, states, "p")


def policy_backward(params, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    return _backward(params, cache, dlogits, "p")


def value_forward(params: dict[str, np.ndarray], states: np.ndarray):
    out, cache = _forward(params, states, "v")
    return out[:, 0], cache


def value_backward(params, cache, dvalues: np.ndarray) -> dict[str, np.ndarray]:
    return _backward(params, cache, dvalues[:, None], "v")


def log_sigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -z)


def log_prob(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Joint log-probability of a 17-bit action under independent Bernoullis."""
    return (actions * log_sigmoid(logits) + (1.0 - actions) * log_sigmoid(-logits)).sum(axis=1)


def bernoulli_entropy(logits: np.ndarray) -> np.ndarray:
    """Summed per-bit entropy; dH/dz = -z * p * (1 - p) per bit."""
    p = sigmoid(logits)
    softplus_pos = np.logaddexp(0.0, logits)
    softplus_neg = np.logaddexp(0.0, -logits)
    return (p * softplus_neg + (1.0 - p) * softplus_pos).sum(axis=1)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_prob_and_grad(
    params: dict[str, np.ndarray], states: np.ndarray, actions: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Sum of action log-probabilities and its analytic parameter gradient.

    The quantity whose gradient the finite-difference check verifies.
    """
    logits, cache = policy_forward(params, states)
    total = float(log_prob(logits, actions).sum())
    dlogits = actions - sigmoid(logits)
    return total, policy_backward(params, cache, dlogits)


def policy_param_names() -> Iterator[str]:
    for name in PARAM_SHAPES:
        if name.startswith("p."):
            yield name
