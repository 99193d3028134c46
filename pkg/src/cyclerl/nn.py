"""Dense feed-forward networks with analytic backpropagation.

All learner-side math runs in float64.  Parameters are plain numpy arrays and
networks are plain values: copying a network copies its parameters, nothing is
shared.  The portable weight format is a small JSON manifest (see
``NeuralNetwork.serialize``) so policies can be shipped over the wire and
reloaded bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

ACTIVATIONS = ("tanh", "relu", "linear")

WEIGHT_FORMAT_VERSION = 1


class ShapeError(ValueError):
    """An input, gradient, or parameter array has the wrong shape."""


class ManifestError(ValueError):
    """A weight manifest is malformed or internally inconsistent."""


class GradientError(ValueError):
    """A gradient update was rejected (e.g. non-finite values)."""


class DenseLayer:
    """One fully-connected layer: ``activation(weights @ x + biases)``.

    ``weights`` has shape (out, in); row k holds the incoming weights of
    output unit k.
    """

    __slots__ = ("weights", "biases", "activation")

    def __init__(self, weights, biases, activation: str):
        weights = np.asarray(weights, dtype=np.float64)
        biases = np.asarray(biases, dtype=np.float64)
        if weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {weights.shape}")
        if biases.ndim != 1 or biases.shape[0] != weights.shape[0]:
            raise ShapeError(
                f"biases shape {biases.shape} does not match weights {weights.shape}"
            )
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.weights = weights
        self.biases = biases
        self.activation = activation

    @property
    def in_size(self) -> int:
        return self.weights.shape[1]

    @property
    def out_size(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.biases.copy(), self.activation)

    def activate(self, z: np.ndarray) -> np.ndarray:
        if self.activation == "tanh":
            return np.tanh(z)
        if self.activation == "relu":
            return np.maximum(z, 0.0)
        return z

    def activation_grad(self, out: np.ndarray) -> np.ndarray:
        """Derivative of the activation, expressed through its output."""
        if self.activation == "tanh":
            return 1.0 - out * out
        if self.activation == "relu":
            return (out > 0.0).astype(np.float64)
        return np.ones_like(out)


class NeuralNetwork:
    """An ordered stack of dense layers with matching dimensions."""

    __slots__ = ("layers",)

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_size != nxt.in_size:
                raise ShapeError(
                    f"layer output size {prev.out_size} does not chain into "
                    f"next layer input size {nxt.in_size}"
                )
        self.layers = layers

    # -- construction ------------------------------------------------------

    @classmethod
    def dense(cls, sizes, hidden_activation: str, output_activation: str = "linear",
              rng: np.random.Generator | None = None) -> "NeuralNetwork":
        """Build a fully-connected net from a size list like [3, 64, 64, 2].

        Hidden layers use ``hidden_activation``; the last layer uses
        ``output_activation``.  Weights are Glorot-uniform for tanh/linear
        layers and He-uniform for relu layers; biases start at zero.
        """
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output size")
        if rng is None:
            rng = np.random.default_rng()
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            activation = output_activation if i == len(sizes) - 2 else hidden_activation
            if activation == "relu":
                limit = math.sqrt(6.0 / fan_in)
            else:
                limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            layers.append(DenseLayer(weights, np.zeros(fan_out), activation))
        return cls(layers)

    @property
    def in_size(self) -> int:
        return self.layers[0].in_size

    @property
    def out_size(self) -> int:
        return self.layers[-1].out_size

    def copy(self) -> "NeuralNetwork":
        return NeuralNetwork([layer.copy() for layer in self.layers])

    def num_parameters(self) -> int:
        return sum(l.weights.size + l.biases.size for l in self.layers)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NeuralNetwork):
            return NotImplemented
        return len(self.layers) == len(other.layers) and all(
            a.activation == b.activation
            and np.array_equal(a.weights, b.weights)
            and np.array_equal(a.biases, b.biases)
            for a, b in zip(self.layers, other.layers)
        )

    # -- forward / backward ------------------------------------------------

    def forward(self, x) -> np.ndarray:
        """Evaluate the network on a single vector or a (batch, in) matrix."""
        out, _ = self.forward_cached(x)
        return out

    def forward_cached(self, x):
        """Forward pass that also returns the per-layer activations.

        The cache is the list [input, layer-1 output, ..., final output]
        needed by :meth:`backward`.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        a = x[None, :] if single else x
        if a.ndim != 2 or a.shape[1] != self.in_size:
            raise ShapeError(
                f"input shape {x.shape} incompatible with network input size "
                f"{self.in_size}"
            )
        cache = [a]
        for layer in self.layers:
            a = layer.activate(a @ layer.weights.T + layer.biases)
            cache.append(a)
        out = cache[-1][0] if single else cache[-1]
        return out, cache

    def backward(self, cache, output_grad):
        """Backpropagate ``output_grad`` through the cached forward pass.

        Returns ``(grads, input_grad)`` where ``grads`` is a list of
        (dweights, dbiases) pairs congruent with the layers.  For batched
        caches the parameter gradients are summed over the batch, so feeding
        per-row d(loss)/d(output) yields d(loss)/d(parameters) directly.
        """
        g = np.asarray(output_grad, dtype=np.float64)
        single = g.ndim == 1
        if single:
            g = g[None, :]
        if g.shape != cache[-1].shape:
            raise ShapeError(
                f"output_grad shape {output_grad.shape} does not match network "
                f"output shape {cache[-1].shape[-1:]}"
            )
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.layers)
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            dz = g * layer.activation_grad(cache[k + 1])
            grads[k] = (dz.T @ cache[k], dz.sum(axis=0))
            g = dz @ layer.weights
        input_grad = g[0] if single else g
        return grads, input_grad

    def zero_grads(self):
        return [(np.zeros_like(l.weights), np.zeros_like(l.biases)) for l in self.layers]

    def all_finite(self) -> bool:
        return all(
            np.isfinite(l.weights).all() and np.isfinite(l.biases).all()
            for l in self.layers
        )

    # -- serialization -----------------------------------------------------

    def to_manifest(self) -> dict:
        return {
            "format_version": WEIGHT_FORMAT_VERSION,
            "layers": [
                {
                    "activation": l.activation,
                    "weights": l.weights.tolist(),
                    "biases": l.biases.tolist(),
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_manifest(cls, manifest) -> "NeuralNetwork":
        if not isinstance(manifest, dict):
            raise ManifestError("manifest must be a JSON object")
        if manifest.get("format_version") != WEIGHT_FORMAT_VERSION:
            raise ManifestError(
                f"unsupported format_version {manifest.get('format_version')!r}"
            )
        raw_layers = manifest.get("layers")
        if not isinstance(raw_layers, list) or not raw_layers:
            raise ManifestError("manifest has no layers")
        layers = []
        for i, entry in enumerate(raw_layers):
            try:
                weights = entry["weights"]
                biases = entry["biases"]
                activation = entry["activation"]
            except (TypeError, KeyError) as exc:
                raise ManifestError(f"layer {i} is missing a field: {exc}") from exc
            rows = [len(r) if isinstance(r, list) else -1 for r in weights] \
                if isinstance(weights, list) else []
            if not rows or len(set(rows)) != 1 or rows[0] <= 0:
                raise ManifestError(f"layer {i} weight rows are ragged or empty")
            try:
                layers.append(DenseLayer(weights, biases, activation))
            except (ShapeError, ValueError) as exc:
                raise ManifestError(f"layer {i}: {exc}") from exc
        try:
            return cls(layers)
        except ShapeError as exc:
            raise ManifestError(str(exc)) from exc

    def serialize(self) -> bytes:
        """Encode as UTF-8 JSON.  Round-trips every float64 bit-exactly."""
        return json.dumps(self.to_manifest()).encode("utf-8")

    def digest(self) -> str:
        """SHA-256 of the serialized weights, for on-policy verification."""
        return hashlib.sha256(self.serialize()).hexdigest()

    @classmethod
    def deserialize(cls, data: bytes) -> "NeuralNetwork":
        try:
            manifest = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ManifestError(f"manifest is not valid UTF-8 JSON: {exc}") from exc
        return cls.from_manifest(manifest)


# -- optimizers ------------------------------------------------------------


class SGD:
    """Plain gradient steps: theta <- theta +/- lr * grad."""

    kind = "sgd"

    def __init__(self, learning_rate: float):
        if not learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        self.learning_rate = float(learning_rate)

    def step(self, net: NeuralNetwork, grads, sign: float):
        lr = self.learning_rate
        for layer, (dw, db) in zip(net.layers, grads):
            layer.weights += sign * lr * dw
            layer.biases += sign * lr * db


class Adam:
    """Adam with bias-corrected moments, tracking one network's parameters."""

    kind = "adam"

    def __init__(self, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if not learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        self.learning_rate = float(learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = None
        self._v = None

    def _init_state(self, net: NeuralNetwork):
        self._m = net.zero_grads()
        self._v = net.zero_grads()

    def snapshot_state(self):
        clone = lambda state: None if state is None else [
            (w.copy(), b.copy()) for w, b in state
        ]
        return self.t, clone(self._m), clone(self._v)

    def restore_state(self, snapshot):
        self.t, self._m, self._v = snapshot

    def step(self, net: NeuralNetwork, grads, sign: float):
        if self._m is None:
            self._init_state(net)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        lr = self.learning_rate
        for layer, (dw, db), (mw, mb), (vw, vb) in zip(net.layers, grads, self._m, self._v):
            if mw.shape != dw.shape or mb.shape != db.shape:
                raise ShapeError("optimizer state is not congruent with gradients")
            mw *= b1
            mw += (1 - b1) * dw
            mb *= b1
            mb += (1 - b1) * db
            vw *= b2
            vw += (1 - b2) * dw * dw
            vb *= b2
            vb += (1 - b2) * db * db
            layer.weights += sign * lr * (mw / c1) / (np.sqrt(vw / c2) + self.eps)
            layer.biases += sign * lr * (mb / c1) / (np.sqrt(vb / c2) + self.eps)


def apply_gradients(net: NeuralNetwork, opt, grads, direction: str = "minimize"):
    """Apply one optimizer step in place.

    ``direction`` is "maximize" for gradient ascent (theta + lr*grad for SGD)
    or "minimize" for descent.  Non-finite gradients reject the whole update.
    """
    if direction not in ("minimize", "maximize"):
        raise ValueError(f"direction must be minimize or maximize, got {direction!r}")
    if len(grads) != len(net.layers):
        raise ShapeError(f"got {len(grads)} gradient pairs for {len(net.layers)} layers")
    for layer, (dw, db) in zip(net.layers, grads):
        if dw.shape != layer.weights.shape or db.shape != layer.biases.shape:
            raise ShapeError(
                f"gradient shapes {dw.shape}/{db.shape} do not match layer "
                f"{layer.weights.shape}/{layer.biases.shape}"
            )
        if not (np.isfinite(dw).all() and np.isfinite(db).all()):
            raise GradientError("non-finite gradient; update rejected")
    opt.step(net, grads, 1.0 if direction == "maximize" else -1.0)


def polyak_update(target: NeuralNetwork, online: NeuralNetwork, rho: float):
    """Exponentially track online parameters: target <- rho*online + (1-rho)*target."""
    if len(target.layers) != len(online.layers):
        raise ShapeError("target and online networks differ in depth")
    for t, o in zip(target.layers, online.layers):
        if t.weights.shape != o.weights.shape:
            raise ShapeError("target and online layer shapes differ")
        t.weights *= 1.0 - rho
        t.weights += rho * o.weights
        t.biases *= 1.0 - rho
        t.biases += rho * o.biases
