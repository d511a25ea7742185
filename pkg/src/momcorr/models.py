"""Differentiable function approximators over a flat parameter vector.

Three model families, all mapping (params, input) -> scalar:

* ``MlpSpec`` -- fully-connected net with LeakyReLU hidden units; exact
  per-sample gradients via hand-rolled reverse-mode differentiation.
* ``RbfSpec`` -- linear readout over Gaussian radial-basis features on a
  regular grid covering a 2-d state box.
* ``LinearSpec`` -- plain dot product, for tests and exactness checks.

Parameters always live in a single flat float64 vector so optimizers can
stay representation-agnostic.  All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .rng import STREAM_INIT, stream


class ConfigError(ValueError):
    """Invalid model or experiment configuration."""


@dataclass(frozen=True)
class MlpSpec:
    """MLP layer widths: (input dim, hidden..., output dim). Output dim must be 1.

    Weights initialize uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero.
    LeakyReLU slope defaults to 0.01; both knobs are explicit config here
    rather than hidden constants.
    """

    layer_widths: tuple[int, ...]
    leaky_slope: float = 0.01

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ConfigError(f"need at least 2 layers, got {self.layer_widths}")
        if any(w <= 0 for w in self.layer_widths):
            raise ConfigError(f"zero-width layer in {self.layer_widths}")
        if self.layer_widths[-1] != 1:
            raise ConfigError("output dim must be 1 for scalar heads")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def n_params(self) -> int:
        ws = self.layer_widths
        return sum((ws[i] + 1) * ws[i + 1] for i in range(self.n_layers))

    def layer_span(self, layer: int) -> tuple[int, int]:
        """[start, end) offsets of layer's weights+bias in the flat vector."""
        ws = self.layer_widths
        start = sum((ws[i] + 1) * ws[i + 1] for i in range(layer))
        return start, start + (ws[layer] + 1) * ws[layer + 1]

    def unpack(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views (W, b) per layer; W has shape (w_in, w_out)."""
        out = []
        o = 0
        ws = self.layer_widths
        for i in range(self.n_layers):
            w_in, w_out = ws[i], ws[i + 1]
            W = params[o : o + w_in * w_out].reshape(w_in, w_out)
            b = params[o + w_in * w_out : o + (w_in + 1) * w_out]
            out.append((W, b))
            o += (w_in + 1) * w_out
        return out


@dataclass(frozen=True)
class RbfSpec:
    """Linear model over Gaussian RBF features on an n_grid x n_grid lattice.

    States are mapped to the unit square via ``state_bounds`` before
    distances are taken, so both state dimensions contribute on equal
    footing regardless of their physical ranges.  With
    ``grid_normalized`` (the default) the kernel width is
    sigma_sq / n_grid; otherwise sigma_sq is used as-is.
    """

    n_grid: int
    sigma_sq: float
    state_bounds: tuple[tuple[float, float], tuple[float, float]]
    grid_normalized: bool = True

    def __post_init__(self):
        if self.n_grid <= 0:
            raise ConfigError(f"n_grid must be positive, got {self.n_grid}")
        if self.sigma_sq <= 0:
            raise ConfigError(f"sigma_sq must be positive, got {self.sigma_sq}")

    @property
    def input_dim(self) -> int:
        return 2

    @property
    def n_params(self) -> int:
        return self.n_grid**2

    @property
    def effective_sigma_sq(self) -> float:
        return self.sigma_sq / self.n_grid if self.grid_normalized else self.sigma_sq

    @property
    def grid_points(self) -> np.ndarray:
        """(n_grid^2, 2) lattice in normalized [0,1]^2 coordinates."""
        return _unit_grid(self.n_grid)

    def normalize(self, S: np.ndarray) -> np.ndarray:
        (x_lo, x_hi), (v_lo, v_hi) = self.state_bounds
        lo = np.array([x_lo, v_lo])
        span = np.array([x_hi - x_lo, v_hi - v_lo])
        return (np.asarray(S, dtype=np.float64) - lo) / span


@dataclass(frozen=True)
class LinearSpec:
    """f(x) = params . x; the input vector is its own feature map."""

    dim: int

    def __post_init__(self):
        if self.dim <= 0:
            raise ConfigError(f"dim must be positive, got {self.dim}")

    @property
    def input_dim(self) -> int:
        return self.dim

    @property
    def n_params(self) -> int:
        return self.dim


ModelSpec = MlpSpec | RbfSpec | LinearSpec


@dataclass
class GradResult:
    """Scalar output plus its exact parameter gradient (and named extras)."""

    value: float
    grad: np.ndarray
    aux: dict[str, np.ndarray] = field(default_factory=dict)


@lru_cache(maxsize=32)
def _unit_grid(n_grid: int) -> np.ndarray:
    axis = np.linspace(0.0, 1.0, n_grid)
    gx, gv = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([gx.ravel(), gv.ravel()], axis=1)
    pts.setflags(write=False)
    return pts


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Deterministic initial parameter vector for (spec, seed)."""
    if isinstance(spec, (RbfSpec, LinearSpec)):
        return np.zeros(spec.n_params)
    rng = stream(seed, STREAM_INIT)
    params = np.zeros(spec.n_params)
    for i, (w_in, w_out) in enumerate(zip(spec.layer_widths, spec.layer_widths[1:])):
        start, _ = spec.layer_span(i)
        bound = 1.0 / np.sqrt(w_in)
        params[start : start + w_in * w_out] = rng.uniform(-bound, bound, size=w_in * w_out)
        # biases stay zero
    return params


def rbf_features(spec: RbfSpec, s: np.ndarray) -> np.ndarray:
    return rbf_features_batch(spec, np.asarray(s, dtype=np.float64)[None, :])[0]


def rbf_features_batch(spec: RbfSpec, S: np.ndarray) -> np.ndarray:
    """(B, n_grid^2) features exp(-||s_hat - u||^2 / sigma_sq_eff)."""
    Sn = spec.normalize(S)
    d2 = ((Sn[:, None, :] - spec.grid_points[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-d2 / spec.effective_sigma_sq)


def forward_batch(spec: ModelSpec, params: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Vectorized scalar outputs for a (B, input_dim) batch."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"input dim {X.shape[1]} != spec dim {spec.input_dim}")
    if isinstance(spec, LinearSpec):
        return X @ params
    if isinstance(spec, RbfSpec):
        return rbf_features_batch(spec, X) @ params
    A = X
    layers = spec.unpack(params)
    for i, (W, b) in enumerate(layers):
        Z = A @ W + b
        A = Z if i == spec.n_layers - 1 else _leaky(Z, spec.leaky_slope)
    return A[:, 0]


def forward(spec: ModelSpec, params: np.ndarray, x: np.ndarray) -> float:
    return float(forward_batch(spec, params, np.asarray(x, dtype=np.float64)[None, :])[0])


def value_and_grad_batch(
    spec: ModelSpec, params: np.ndarray, X: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample values (B,) and exact per-sample gradients (B, n).

    For the MLP this is one reverse-mode sweep; d(output_b)/d(params) is
    accumulated layer by layer from stored activations.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"input dim {X.shape[1]} != spec dim {spec.input_dim}")
    if isinstance(spec, LinearSpec):
        return X @ params, X.copy()
    if isinstance(spec, RbfSpec):
        phi = rbf_features_batch(spec, X)
        return phi @ params, phi

    B = X.shape[0]
    layers = spec.unpack(params)
    acts = [X]  # activations entering each layer
    pre = []  # pre-activations of hidden layers
    A = X
    for i, (W, b) in enumerate(layers):
        Z = A @ W + b
        if i < spec.n_layers - 1:
            pre.append(Z)
            A = _leaky(Z, spec.leaky_slope)
            acts.append(A)
        else:
            values = Z[:, 0]

    grads = np.empty((B, spec.n_params))
    delta = np.ones((B, 1))  # d(output)/d(z_last)
    for i in range(spec.n_layers - 1, -1, -1):
        W, _ = layers[i]
        start, _end = spec.layer_span(i)
        nw = W.size
        g_w = np.einsum("bi,bo->bio", acts[i], delta)
        grads[:, start : start + nw] = g_w.reshape(B, nw)
        grads[:, start + nw : _end] = delta
        if i > 0:
            delta = (delta @ W.T) * _leaky_deriv(pre[i - 1], spec.leaky_slope)
    return values, grads


def grad(spec: ModelSpec, params: np.ndarray, x: np.ndarray) -> GradResult:
    """Exact gradient of forward() w.r.t. params at (params, x)."""
    values, grads = value_and_grad_batch(spec, params, np.asarray(x, dtype=np.float64)[None, :])
    return GradResult(value=float(values[0]), grad=grads[0])


def grouped_weighted_grad_sums(
    spec: ModelSpec, params: np.ndarray, X: np.ndarray, weights: np.ndarray, n_groups: int
) -> np.ndarray:
    """Per-group sums  sum_j weights_j * grad f(x_j)  in one reverse sweep.

    X is (n_groups * m, d) with groups contiguous; returns (n_groups, n).
    Equivalent to value_and_grad_batch followed by grouped weighted sums
    (tested as such) without materializing per-sample gradients, which is
    what makes long oracle windows affordable.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    N = X.shape[0]
    if N % n_groups:
        raise ValueError(f"{N} samples do not split into {n_groups} equal groups")
    m = N // n_groups
    w = np.asarray(weights, dtype=np.float64).reshape(n_groups, m)
    if isinstance(spec, (LinearSpec, RbfSpec)):
        phi = X if isinstance(spec, LinearSpec) else rbf_features_batch(spec, X)
        return np.einsum("km,kmn->kn", w, phi.reshape(n_groups, m, -1))

    layers = spec.unpack(params)
    acts = [X]
    pre = []
    A = X
    for i, (W, b) in enumerate(layers):
        Z = A @ W + b
        if i < spec.n_layers - 1:
            pre.append(Z)
            A = _leaky(Z, spec.leaky_slope)
            acts.append(A)
    out = np.empty((n_groups, spec.n_params))
    delta = np.repeat(w.reshape(N, 1), 1, axis=1)  # seed backward with the weights
    for i in range(spec.n_layers - 1, -1, -1):
        W, _ = layers[i]
        start, end = spec.layer_span(i)
        nw = W.size
        g_w = np.einsum(
            "kmi,kmo->kio",
            acts[i].reshape(n_groups, m, -1),
            delta.reshape(n_groups, m, -1),
        )
        out[:, start : start + nw] = g_w.reshape(n_groups, nw)
        out[:, start + nw : end] = delta.reshape(n_groups, m, -1).sum(axis=1)
        if i > 0:
            delta = (delta @ W.T) * _leaky_deriv(pre[i - 1], spec.leaky_slope)
    return out


def _leaky(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0, z, slope * z)


def _leaky_deriv(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0, 1.0, slope)
