"""Small feed-forward networks with hand-written backpropagation.

All networks share one architecture: ``in -> H (ReLU) -> H (ReLU) -> out``.
Parameters are treated as immutable values; training code builds new
objects with :meth:`Network.with_flat` instead of mutating arrays in place.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .seeding import as_rng

DISC_EPS = 1e-7


class Network:
    """Multi-layer perceptron; weights are stored as (fan_in, fan_out)."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix")
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k and w.shape[0] != self.weights[k - 1].shape[1]:
                raise ValueError(f"layer {k} input {w.shape[0]} != previous output")
            w.flags.writeable = False
            b.flags.writeable = False

    @classmethod
    def init(cls, in_dim: int, out_dim: int, hidden: int = 32, seed=0) -> "Network":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
        rng = as_rng(seed)
        sizes = [in_dim, hidden, hidden, out_dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            s = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int, hidden: int = 32) -> "Network":
        sizes = [in_dim, hidden, hidden, out_dim]
        return cls([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]])

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def shapes(self) -> list:
        return [w.shape for w in self.weights]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, x: np.ndarray) -> tuple:
        """Returns (output, cache) for a batch ``x`` of shape (B, in_dim)."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input (B, {self.in_dim}), got {x.shape}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list, dout: np.ndarray) -> np.ndarray:
        """Gradient of ``sum(dout * output)`` w.r.t. the flat parameter vector."""
        grads_w, grads_b = [], []
        delta = dout
        for k in range(len(self.weights) - 1, -1, -1):
            grads_w.append(cache[k].T @ delta)
            grads_b.append(delta.sum(axis=0))
            if k:
                delta = (delta @ self.weights[k].T) * (cache[k] > 0)
        parts = []
        for gw, gb in zip(reversed(grads_w), reversed(grads_b)):
            parts.append(gw.ravel())
            parts.append(gb)
        return np.concatenate(parts)

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_flat(self, vec: np.ndarray) -> "Network":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {vec.shape}")
        weights, biases, i = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vec[i:i + w.size].reshape(w.shape).copy())
            i += w.size
            biases.append(vec[i:i + b.size].copy())
            i += b.size
        return Network(weights, biases)

    def step(self, grad: np.ndarray, lr: float) -> "Network":
        """Plain gradient-descent step."""
        return self.with_flat(self.flat() - lr * grad)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.flat()).all())

    def equals(self, other: "Network") -> bool:
        return self.shapes == other.shapes and np.array_equal(self.flat(), other.flat())


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _batch(obs) -> tuple:
    obs = np.asarray(obs, dtype=float)
    return (obs[None, :], True) if obs.ndim == 1 else (obs, False)


@dataclass(frozen=True)
class Policy:
    """Softmax policy over a discrete action set."""

    net: Network

    @classmethod
    def init(cls, obs_dim: int, n_actions: int, hidden: int = 32, seed=0) -> "Policy":
        return cls(Network.init(obs_dim, n_actions, hidden, seed))

    @property
    def n_actions(self) -> int:
        return self.net.out_dim

    def action_probs(self, obs) -> np.ndarray:
        x, single = _batch(obs)
        p = softmax(self.net(x))
        return p[0] if single else p

    def log_probs(self, obs, actions) -> np.ndarray:
        x, _ = _batch(obs)
        actions = np.atleast_1d(actions)
        return log_softmax(self.net(x))[np.arange(len(x)), actions]

    def log_prob_grad(self, obs, action: int) -> tuple:
        """log pi(a|o) and its gradient w.r.t. the flat parameters."""
        x, _ = _batch(obs)
        if not 0 <= action < self.n_actions:
            raise ValueError(f"invalid action {action}")
        logits, cache = self.net.forward(x)
        logp = log_softmax(logits)[0, action]
        dlogits = -softmax(logits)
        dlogits[0, action] += 1.0
        return float(logp), self.net.backward(cache, dlogits)

    def weighted_log_prob_grad(self, obs, actions, weights) -> tuple:
        """sum_i w_i log pi(a_i|o_i) and its gradient, for a batch."""
        logits, cache = self.net.forward(np.asarray(obs, dtype=float))
        rows = np.arange(len(actions))
        logp = log_softmax(logits)[rows, actions]
        dlogits = -softmax(logits) * weights[:, None]
        dlogits[rows, actions] += weights
        return float(weights @ logp), self.net.backward(cache, dlogits)

    def with_net(self, net: Network) -> "Policy":
        return Policy(net)

    # Actor protocol (see games.play)
    def assign(self, n: int, rng) -> np.ndarray:
        return np.zeros(n, dtype=np.int64)

    def probs(self, obs, members) -> np.ndarray:
        return self.action_probs(obs)


@dataclass(frozen=True)
class ValueFunction:
    net: Network

    @classmethod
    def init(cls, obs_dim: int, hidden: int = 32, seed=0) -> "ValueFunction":
        return cls(Network.init(obs_dim, 1, hidden, seed))

    def predict(self, obs) -> np.ndarray:
        x, single = _batch(obs)
        v = self.net(x)[:, 0]
        return v[0] if single else v

    def loss_grad(self, obs, targets) -> tuple:
        """Mean squared error ``mean((V(o) - target)^2)`` and its gradient."""
        out, cache = self.net.forward(np.asarray(obs, dtype=float))
        err = out[:, 0] - targets
        n = len(err)
        return float(err @ err / n), self.net.backward(cache, (2.0 / n) * err[:, None])


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class Discriminator:
    """D(o, a) in (0, 1) over observation ⊕ one-hot(action).

    D is trained to be high on samples from the reference (opponent
    ensemble) and low on samples from the model being trained, so
    ``log D`` rewards ensemble-like behaviour.
    """

    net: Network
    n_actions: int

    @classmethod
    def init(cls, obs_dim: int, n_actions: int, hidden: int = 32, seed=0) -> "Discriminator":
        return cls(Network.init(obs_dim + n_actions, 1, hidden, seed), n_actions)

    def inputs(self, obs, actions) -> np.ndarray:
        x, _ = _batch(obs)
        actions = np.atleast_1d(actions)
        onehot = np.zeros((len(x), self.n_actions))
        onehot[np.arange(len(x)), actions] = 1.0
        return np.hstack([x, onehot])

    def logits(self, obs, actions) -> np.ndarray:
        return self.net(self.inputs(obs, actions))[:, 0]

    def forward(self, obs, actions) -> np.ndarray:
        d = np.clip(sigmoid(self.logits(obs, actions)), DISC_EPS, 1.0 - DISC_EPS)
        return d if np.ndim(actions) else float(d[0])

    def loss_grad(self, model_obs, model_act, ref_obs, ref_act) -> tuple:
        """Binary cross-entropy with reference samples labelled 1.

        loss = -mean_ref log D - mean_model log(1 - D), computed from logits
        (no clamping) so it is smooth for gradient checks.
        """
        x = np.vstack([self.inputs(model_obs, model_act), self.inputs(ref_obs, ref_act)])
        n_model = len(np.atleast_1d(model_act))
        n_ref = len(x) - n_model
        z, cache = self.net.forward(x)
        z = z[:, 0]
        zm, zr = z[:n_model], z[n_model:]
        loss = np.logaddexp(0.0, zm).mean() + np.logaddexp(0.0, -zr).mean()
        dz = np.concatenate([sigmoid(zm) / n_model, (sigmoid(zr) - 1.0) / n_ref])
        return float(loss), self.net.backward(cache, dz[:, None])

    def with_net(self, net: Network) -> "Discriminator":
        return Discriminator(net, self.n_actions)


@dataclass(frozen=True)
class PolicyEnsemble:
    """Uniform mixture over ``members``; one member is drawn per episode."""

    members: tuple

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("ensemble needs at least one member")
        shapes = members[0].net.shapes
        if any(m.net.shapes != shapes for m in members):
            raise ValueError("ensemble members must share dimensions")
        object.__setattr__(self, "members", members)

    @classmethod
    def init(cls, n: int, obs_dim: int, n_actions: int, hidden: int = 32, seed=0):
        rng = as_rng(seed)
        return cls(tuple(Policy.init(obs_dim, n_actions, hidden, rng) for _ in range(n)))

    def __len__(self):
        return len(self.members)

    def __getitem__(self, i) -> Policy:
        return self.members[i]

    def replace(self, i: int, policy: Policy) -> "PolicyEnsemble":
        members = list(self.members)
        members[i] = policy
        return PolicyEnsemble(tuple(members))

    def sample_index(self, seed) -> int:
        return int(as_rng(seed).integers(len(self.members)))

    def action_probs(self, obs) -> np.ndarray:
        """Probability-weighted average of the members' action distributions."""
        return sum(m.action_probs(obs) for m in self.members) / len(self.members)

    def assign(self, n: int, rng) -> np.ndarray:
        return rng.integers(len(self.members), size=n)

    def probs(self, obs, members) -> np.ndarray:
        out = np.empty((len(obs), self.members[0].n_actions))
        for i in np.unique(members):
            rows = members == i
            out[rows] = self.members[i].action_probs(obs[rows])
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([m.net.flat() for m in self.members])


def ensemble_sample(ensemble: PolicyEnsemble, seed) -> int:
    return ensemble.sample_index(seed)


@dataclass(frozen=True)
class FixedPolicy:
    """State-independent action distribution (handy for matrix games and tests)."""

    p: tuple

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"not a probability vector: {self.p}")
        object.__setattr__(self, "p", tuple(p.tolist()))

    @property
    def n_actions(self) -> int:
        return len(self.p)

    def action_probs(self, obs) -> np.ndarray:
        x, single = _batch(obs)
        out = np.tile(np.asarray(self.p), (len(x), 1))
        return out[0] if single else out

    def assign(self, n, rng):
        return np.zeros(n, dtype=np.int64)

    def probs(self, obs, members):
        return self.action_probs(obs)


def uniform_policy(obs_dim: int, n_actions: int, hidden: int = 32) -> Policy:
    """All-zero parameters give exactly uniform action probabilities."""
    return Policy(Network.zeros(obs_dim, n_actions, hidden))
