"""Policy/value networks: a small tanh MLP with hand-written backprop.

Layout: ``input -> [tanh hidden]* -> (policy logits, sigmoid value)``. The
policy head has one logit per (slot, anchor) action; the value head predicts
remaining return divided by the reward cap, so it lives in [0, 1].

Loss per sample::

    -sum(target * log masked_softmax(logits)) + w * (value - value_target) ** 2

averaged over the batch, optimized with SGD + momentum.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

CHECKPOINT_MAGIC = b"SGBZ1"
CHECKPOINT_VERSION = 1


class Evaluation(NamedTuple):
    policy_logits: np.ndarray
    value: float


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class Arch:
    input_size: int
    hidden: tuple[int, ...]
    n_actions: int

    def layer_shapes(self) -> list[tuple[int, int]]:
        sizes = [self.input_size, *self.hidden]
        shapes = [(a, b) for a, b in zip(sizes[:-1], sizes[1:])]
        trunk = sizes[-1]
        return shapes + [(trunk, self.n_actions), (trunk, 1)]

    def n_params(self) -> int:
        return sum(a * b + b for a, b in self.layer_shapes())


def default_hidden(input_size: int) -> tuple[int, int]:
    """Two hidden layers; 128 wide for the classic 121-feature input, scaled with input size."""
    width = max(32, int(round(128 * input_size / 121 / 16)) * 16)
    return (width, width)


class UniformEvaluator:
    """All logits 0 and value 0.5 for every input."""

    needs_features = False

    def __init__(self, n_actions: int):
        self.n_actions = n_actions
        self._logits = np.zeros(n_actions)

    def evaluate(self, features: np.ndarray | None) -> Evaluation:
        return Evaluation(self._logits, 0.5)


@dataclass
class MLP:
    """Weights are ``[(W, b), ...]`` for hidden layers, then the policy head, then the value head."""

    arch: Arch
    layers: list[tuple[np.ndarray, np.ndarray]]
    momentum: float = 0.9
    value_weight: float = 1.0
    velocity: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list, repr=False)

    needs_features = True

    @property
    def n_actions(self) -> int:
        return self.arch.n_actions

    def copy(self) -> "MLP":
        return MLP(
            self.arch,
            [(W.copy(), b.copy()) for W, b in self.layers],
            self.momentum,
            self.value_weight,
            [(W.copy(), b.copy()) for W, b in self.velocity],
        )

    def snapshot(self) -> "MLP":
        """Frozen read-only copy for self-play workers (no optimizer state)."""
        layers = []
        for W, b in self.layers:
            W, b = W.copy(), b.copy()
            W.flags.writeable = False
            b.flags.writeable = False
            layers.append((W, b))
        return MLP(self.arch, layers, self.momentum, self.value_weight)

    # --------------------------------------------------------------- forward

    def evaluate(self, features: np.ndarray) -> Evaluation:
        if features.shape != (self.arch.input_size,):
            raise ValueError(
                f"feature length {features.shape} does not match input size {self.arch.input_size}"
            )
        x = features
        for W, b in self.layers[:-2]:
            x = np.tanh(x @ W + b)
        Wp, bp = self.layers[-2]
        Wv, bv = self.layers[-1]
        z = float(x @ Wv[:, 0] + bv[0])
        return Evaluation(x @ Wp + bp, _sigmoid(z))

    def _forward(self, X: np.ndarray):
        acts = [X]
        for W, b in self.layers[:-2]:
            acts.append(np.tanh(acts[-1] @ W + b))
        H = acts[-1]
        logits = H @ self.layers[-2][0] + self.layers[-2][1]
        value = _sigmoid(H @ self.layers[-1][0] + self.layers[-1][1])[:, 0]
        return acts, logits, value

    # ------------------------------------------------------------- training

    def loss_and_grads(self, X, masks, policy_targets, value_targets):
        """Mean batch loss pieces and gradients (same layout as ``layers``)."""
        B = X.shape[0]
        acts, logits, value = self._forward(X)
        probs = masked_softmax(logits, masks)
        with np.errstate(divide="ignore"):
            logp = np.where(masks, np.log(np.where(masks, probs, 1.0)), 0.0)
        policy_loss = -float(np.sum(policy_targets * logp)) / B
        value_loss = float(np.mean((value - value_targets) ** 2))

        d_logits = (probs - policy_targets) / B
        d_logits[~masks] = 0.0
        d_z = (2.0 * self.value_weight / B) * (value - value_targets) * value * (1.0 - value)
        H = acts[-1]
        Wp = self.layers[-2][0]
        Wv = self.layers[-1][0]
        grads = [None] * len(self.layers)
        grads[-2] = (H.T @ d_logits, d_logits.sum(axis=0))
        grads[-1] = (H.T @ d_z[:, None], np.array([d_z.sum()]))
        dH = d_logits @ Wp.T + d_z[:, None] @ Wv.T
        for i in range(len(self.layers) - 3, -1, -1):
            dZ = dH * (1.0 - acts[i + 1] ** 2)
            grads[i] = (acts[i].T @ dZ, dZ.sum(axis=0))
            if i:
                dH = dZ @ self.layers[i][0].T
        return policy_loss, value_loss, grads

    def train_batch(self, batch: "TrainBatch", lr: float) -> dict[str, float]:
        """One SGD-momentum step; returns loss components and the gradient norm."""
        if len(batch) == 0:
            raise ValueError("empty training batch")
        policy_loss, value_loss, grads = self.loss_and_grads(
            batch.features, batch.masks, batch.policy_targets, batch.value_targets
        )
        gnorm = float(np.sqrt(sum(np.sum(gW**2) + np.sum(gb**2) for gW, gb in grads)))
        if not np.isfinite(policy_loss + value_loss + gnorm):
            raise TrainingDiverged(
                f"non-finite loss: policy={policy_loss} value={value_loss} grad_norm={gnorm}"
            )
        if not self.velocity:
            self.velocity = [(np.zeros_like(W), np.zeros_like(b)) for W, b in self.layers]
        if lr != 0.0:
            for i, ((W, b), (gW, gb), (vW, vb)) in enumerate(zip(self.layers, grads, self.velocity)):
                vW = self.momentum * vW - lr * gW
                vb = self.momentum * vb - lr * gb
                self.velocity[i] = (vW, vb)
                self.layers[i] = (W + vW, b + vb)
        return {"policy_loss": policy_loss, "value_loss": value_loss, "grad_norm": gnorm}

    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in self.layers)

    # ---------------------------------------------------------- checkpoints

    def to_bytes(self) -> bytes:
        a = self.arch
        dims = [a.input_size, *a.hidden, a.n_actions]
        head = CHECKPOINT_MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(dims))
        head += struct.pack(f"<{len(dims)}I", *dims)
        body = b"".join(
            W.astype("<f4").tobytes() + b.astype("<f4").tobytes() for W, b in self.layers
        )
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes, expect: Arch | None = None) -> "MLP":
        if data[:5] != CHECKPOINT_MAGIC:
            raise ValueError("bad checkpoint magic")
        version, n_dims = struct.unpack_from("<HI", data, 5)
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        off = 5 + struct.calcsize("<HI")
        dims = struct.unpack_from(f"<{n_dims}I", data, off)
        off += 4 * n_dims
        arch = Arch(dims[0], tuple(dims[1:-1]), dims[-1])
        if expect is not None and (arch.input_size, tuple(arch.hidden), arch.n_actions) != (
            expect.input_size, tuple(expect.hidden), expect.n_actions
        ):
            raise ValueError(f"checkpoint architecture {arch} does not match expected {expect}")
        layers = []
        for a, b in arch.layer_shapes():
            n = a * b + b
            if off + 4 * n > len(data):
                raise ValueError("checkpoint is truncated")
            flat = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float64)
            layers.append((flat[: a * b].reshape(a, b), flat[a * b:].copy()))
            off += 4 * n
        if off != len(data):
            raise ValueError("checkpoint has trailing bytes")
        return cls(arch, layers)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, expect: Arch | None = None) -> "MLP":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), expect)


def init_evaluator(arch: Arch, seed: int, momentum: float = 0.9, value_weight: float = 1.0) -> MLP:
    """Glorot-uniform weights, zero biases, deterministic under ``seed``."""
    if arch.input_size < 1 or arch.n_actions < 1 or any(w < 1 for w in arch.hidden):
        raise ValueError(f"invalid architecture {arch}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in arch.layer_shapes():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return MLP(arch, layers, momentum, value_weight)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over entries where ``mask`` is True; exactly zero elsewhere."""
    z = np.where(mask, logits, -np.inf)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


@dataclass
class TrainBatch:
    features: np.ndarray
    masks: np.ndarray
    policy_targets: np.ndarray
    value_targets: np.ndarray

    def __len__(self) -> int:
        return self.features.shape[0]

    @classmethod
    def from_samples(cls, samples: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray, float]]) -> "TrainBatch":
        feats, masks, pols, vals = zip(*samples)
        return cls(
            np.asarray(feats, dtype=np.float64),
            np.asarray(masks, dtype=bool),
            np.asarray(pols, dtype=np.float64),
            np.asarray(vals, dtype=np.float64),
        )


def gradient_check(
    model: MLP,
    batch: TrainBatch,
    eps: float = 1e-5,
    n_params: int = 200,
    seed: int = 0,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Checks a random subsample of ``n_params`` parameters (all of them if the
    model is smaller). Relative error is ``|a - n| / max(|a| + |n|, 1e-7)``;
    the floor keeps vanishing gradients from reporting noise as error.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    args = (batch.features, batch.masks, batch.policy_targets, batch.value_targets)
    _, _, grads = model.loss_and_grads(*args)

    index = []
    for li, (W, b) in enumerate(model.layers):
        index += [(li, 0, k) for k in range(W.size)]
        index += [(li, 1, k) for k in range(b.size)]
    rng = np.random.default_rng(seed)
    if len(index) > n_params:
        # make sure every array contributes before filling up at random
        picks = set()
        for li in range(len(model.layers)):
            for part in (0, 1):
                cands = [i for i, t in enumerate(index) if t[0] == li and t[1] == part]
                picks.update(rng.choice(cands, size=min(4, len(cands)), replace=False).tolist())
        rest = [i for i in range(len(index)) if i not in picks]
        picks.update(rng.choice(rest, size=max(0, n_params - len(picks)), replace=False).tolist())
        chosen = [index[i] for i in sorted(picks)]
    else:
        chosen = index

    def loss() -> float:
        pl, vl, _ = model.loss_and_grads(*args)
        return pl + model.value_weight * vl

    worst = 0.0
    for li, part, k in chosen:
        arr = model.layers[li][part].reshape(-1)
        old = arr[k]
        arr[k] = old + eps
        up = loss()
        arr[k] = old - eps
        down = loss()
        arr[k] = old
        numeric = (up - down) / (2 * eps)
        analytic = grads[li][part].reshape(-1)[k]
        err = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-7)
        worst = max(worst, err)
    return worst
