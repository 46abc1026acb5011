"""Surrogate foundation model: frozen linear blocks with trainable bottleneck adapters.

The network is a stack of frozen random-orthogonal linear blocks, each
followed by a residual bottleneck adapter, plus a frozen linear head that
emits one logit per mask pixel. Only adapter weights train; gradients are
hand-derived reverse mode and updates use Adam.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericError
from .numerics import FlatParams, RngStream, cosine_similarity

PROB_CLAMP = 1e-7

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdapterParams:
    """Trainable bottleneck adapter: down projection, ReLU, up projection.

    down_proj is (bottleneck_dim, feature_dim); up_proj is
    (feature_dim, bottleneck_dim). No bias terms.
    """

    down_proj: np.ndarray
    up_proj: np.ndarray

    def __post_init__(self) -> None:
        self.down_proj = np.array(self.down_proj, dtype=np.float64)
        self.up_proj = np.array(self.up_proj, dtype=np.float64)
        if self.down_proj.ndim != 2 or self.up_proj.ndim != 2:
            raise InvalidArgumentError("adapter projections must be matrices")
        b, d = self.down_proj.shape
        d2, b2 = self.up_proj.shape
        if (d, b) != (d2, b2):
            raise InvalidArgumentError(
                f"up_proj shape {self.up_proj.shape} does not mirror down_proj {self.down_proj.shape}"
            )
        if b >= d:
            raise InvalidArgumentError("bottleneck_dim must be smaller than feature_dim")
        if not (np.all(np.isfinite(self.down_proj)) and np.all(np.isfinite(self.up_proj))):
            raise InvalidArgumentError("adapter parameters must be finite")

    @property
    def feature_dim(self) -> int:
        return self.down_proj.shape[1]

    @property
    def bottleneck_dim(self) -> int:
        return self.down_proj.shape[0]

    @property
    def size(self) -> int:
        return self.down_proj.size + self.up_proj.size

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.down_proj.ravel(), self.up_proj.ravel()])

    def load_flat(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.size != self.size:
            raise InvalidArgumentError(
                f"expected {self.size} adapter values, got {values.size}"
            )
        split = self.down_proj.size
        self.down_proj = values[:split].reshape(self.down_proj.shape).copy()
        self.up_proj = values[split:].reshape(self.up_proj.shape).copy()


@dataclass(frozen=True)
class FrozenBlock:
    """Immutable linear map (weight, bias); never receives gradient."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        weight = np.array(self.weight, dtype=np.float64)
        bias = np.array(self.bias, dtype=np.float64)
        if weight.ndim != 2 or weight.shape[0] != weight.shape[1]:
            raise InvalidArgumentError("frozen weight must be square")
        if bias.shape != (weight.shape[0],):
            raise InvalidArgumentError("frozen bias length must match weight")
        weight.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)


@dataclass
class ToyFM:
    """K frozen blocks, each wrapped with an adapter, plus a frozen head."""

    blocks: list[tuple[FrozenBlock, AdapterParams]]
    head: FrozenBlock
    feature_dim: int
    bottleneck_dim: int

    def __post_init__(self) -> None:
        if len(self.blocks) < 2:
            raise InvalidArgumentError("model needs at least 2 blocks")
        for block, adapter in self.blocks:
            if block.weight.shape != (self.feature_dim, self.feature_dim):
                raise InvalidArgumentError("frozen block dimension mismatch")
            if adapter.feature_dim != self.feature_dim:
                raise InvalidArgumentError("adapter feature_dim mismatch")
            if adapter.bottleneck_dim != self.bottleneck_dim:
                raise InvalidArgumentError("adapter bottleneck_dim mismatch")

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def layer_size(self) -> int:
        return 2 * self.feature_dim * self.bottleneck_dim

    def adapter_params(self, layers: list[int] | None = None) -> FlatParams:
        """Adapter weights for the given 1-based layers (default: all) as FlatParams."""
        if layers is None:
            layers = list(range(1, self.num_blocks + 1))
        parts = []
        for k in layers:
            if not 1 <= k <= self.num_blocks:
                raise InvalidArgumentError(f"layer {k} out of range 1..{self.num_blocks}")
            parts.append((k, self.blocks[k - 1][1].flatten()))
        return FlatParams.from_layers(parts)

    def install_adapter_params(self, params: FlatParams) -> None:
        """Overwrite the adapters named in the manifest; others stay untouched."""
        for k, values in params.split():
            if not 1 <= k <= self.num_blocks:
                raise InvalidArgumentError(f"layer {k} out of range 1..{self.num_blocks}")
            self.blocks[k - 1][1].load_flat(values)

    def frozen_digest(self) -> str:
        """SHA-256 over every frozen weight and bias, in block order."""
        h = hashlib.sha256()
        for block, _ in self.blocks:
            h.update(block.weight.tobytes())
            h.update(block.bias.tobytes())
        h.update(self.head.weight.tobytes())
        h.update(self.head.bias.tobytes())
        return h.hexdigest()

    def clone(self) -> "ToyFM":
        """Copy with fresh adapter arrays; frozen blocks are shared (immutable)."""
        blocks = [
            (block, AdapterParams(adapter.down_proj.copy(), adapter.up_proj.copy()))
            for block, adapter in self.blocks
        ]
        return ToyFM(blocks, self.head, self.feature_dim, self.bottleneck_dim)


def _orthogonal(stream: RngStream, n: int) -> np.ndarray:
    a = stream.draw_gaussian(n * n).reshape(n, n)
    q, r = np.linalg.qr(a)
    # Fix the sign convention so the factorization is unique.
    return q * np.sign(np.diag(r))


def build_model(
    feature_dim: int,
    bottleneck_dim: int,
    num_blocks: int,
    frozen_stream: RngStream,
    adapter_stream: RngStream,
) -> ToyFM:
    """Construct a model with orthogonal frozen blocks and identity-start adapters.

    up_proj starts at zero, so each adapter is the identity map and every
    freshly built model computes the same function as its frozen backbone.
    """
    if bottleneck_dim >= feature_dim:
        raise InvalidArgumentError("bottleneck_dim must be smaller than feature_dim")
    blocks = []
    for _ in range(num_blocks):
        weight = _orthogonal(frozen_stream, feature_dim)
        bias = 0.1 * frozen_stream.draw_gaussian(feature_dim)
        down = adapter_stream.draw_gaussian(bottleneck_dim * feature_dim).reshape(
            bottleneck_dim, feature_dim
        ) / np.sqrt(feature_dim)
        up = np.zeros((feature_dim, bottleneck_dim))
        blocks.append((FrozenBlock(weight, bias), AdapterParams(down, up)))
    head = FrozenBlock(_orthogonal(frozen_stream, feature_dim), np.zeros(feature_dim))
    return ToyFM(blocks, head, feature_dim, bottleneck_dim)


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def adapter_forward(f: np.ndarray, adapter: AdapterParams) -> np.ndarray:
    """Residual bottleneck: up_proj @ relu(down_proj @ f) + f.

    Accepts a single feature vector or a (batch, feature_dim) matrix.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != adapter.feature_dim:
        raise InvalidArgumentError(
            f"feature length {f.shape[-1]} does not match adapter dim {adapter.feature_dim}"
        )
    hidden = _relu(f @ adapter.down_proj.T)
    return hidden @ adapter.up_proj.T + f


def model_forward(x: np.ndarray, model: ToyFM) -> np.ndarray:
    """Logits for one input vector or a (batch, feature_dim) matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.feature_dim:
        raise InvalidArgumentError(
            f"input length {x.shape[-1]} does not match feature_dim {model.feature_dim}"
        )
    h = x
    for block, adapter in model.blocks:
        h = adapter_forward(_relu(h @ block.weight.T + block.bias), adapter)
    return h @ model.head.weight.T + model.head.bias


def seg_loss(logits: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy over pixels (and batch), with clamped probabilities."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if logits.shape != y.shape:
        raise InvalidArgumentError(f"shape mismatch: logits {logits.shape} vs mask {y.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise InvalidArgumentError("mask entries must be 0 or 1")
    p = np.clip(sigmoid(logits), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log1p(-p)))


def reg_loss(theta_low: FlatParams, theta_ref: FlatParams) -> float:
    """Negated cosine between the current and reference low-level adapters.

    Defined as 0 when theta_low is the zero vector (cosine undefined there,
    and 0 applies no pull).
    """
    if not theta_low.same_manifest(theta_ref):
        raise InvalidArgumentError("reg_loss requires identical manifests")
    if not np.any(theta_ref.values):
        raise InvalidArgumentError("reference parameters must be non-zero")
    if not np.any(theta_low.values):
        return 0.0
    return -cosine_similarity(theta_low.values, theta_ref.values)


def _reg_grad(theta_low: np.ndarray, theta_ref: np.ndarray) -> np.ndarray:
    """Gradient of -cos(theta_low, theta_ref) with respect to theta_low."""
    na = float(np.linalg.norm(theta_low))
    if na == 0.0:
        return np.zeros_like(theta_low)
    nb = float(np.linalg.norm(theta_ref))
    dot = float(np.dot(theta_low, theta_ref))
    return -(theta_ref / (na * nb) - theta_low * dot / (na**3 * nb))


def _forward_cached(x: np.ndarray, model: ToyFM):
    h = x
    cache = []
    for block, adapter in model.blocks:
        r = _relu(h @ block.weight.T + block.bias)
        u = r @ adapter.down_proj.T
        s = _relu(u)
        h = s @ adapter.up_proj.T + r
        cache.append((r, u, s))
    logits = h @ model.head.weight.T + model.head.bias
    return logits, cache


def objective_and_grad(
    images: np.ndarray,
    masks: np.ndarray,
    model: ToyFM,
    theta_ref: FlatParams | None,
    beta: float,
) -> tuple[float, FlatParams]:
    """Objective value and its exact gradient w.r.t. all adapter parameters.

    The segmentation term is averaged over the batch; the regularizer pulls
    the layers named in theta_ref's manifest toward theta_ref, scaled by beta.
    Frozen blocks receive no gradient.
    """
    if beta < 0:
        raise InvalidArgumentError("beta must be >= 0")
    if beta > 0 and theta_ref is None:
        raise InvalidArgumentError("theta_ref is required when beta > 0")
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    masks = np.atleast_2d(np.asarray(masks, dtype=np.float64))
    if images.shape != masks.shape:
        raise InvalidArgumentError("images and masks must have matching shapes")
    if not np.all((masks == 0.0) | (masks == 1.0)):
        raise InvalidArgumentError("mask entries must be 0 or 1")

    batch, pixels = images.shape
    logits, cache = _forward_cached(images, model)
    p = sigmoid(logits)
    clamped = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = float(np.mean(-masks * np.log(clamped) - (1.0 - masks) * np.log1p(-clamped)))

    # d(loss)/d(logit) = (p - y) where the clamp is inactive, else 0.
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    g = np.where(inside, p - masks, 0.0) / (batch * pixels)
    g = g @ model.head.weight

    layer_grads: dict[int, np.ndarray] = {}
    for k in range(model.num_blocks, 0, -1):
        block, adapter = model.blocks[k - 1]
        r, u, s = cache[k - 1]
        d_up = g.T @ s
        d_hidden = (g @ adapter.up_proj) * (u > 0)
        d_down = d_hidden.T @ r
        g = (d_hidden @ adapter.down_proj + g) * (r > 0)
        g = g @ block.weight
        layer_grads[k] = np.concatenate([d_down.ravel(), d_up.ravel()])

    grads = FlatParams.from_layers(
        (k, layer_grads[k]) for k in range(1, model.num_blocks + 1)
    )

    if theta_ref is not None and beta > 0:
        ref_layers = list(theta_ref.layer_indices)
        theta_low = model.adapter_params(ref_layers)
        if not theta_low.same_manifest(theta_ref):
            raise InvalidArgumentError("theta_ref manifest does not match the model's layers")
        loss += beta * reg_loss(theta_low, theta_ref)
        reg_g = beta * _reg_grad(theta_low.values, theta_ref.values)
        values = grads.values.copy()
        offset_by_layer = {}
        offset = 0
        for idx, length in grads.manifest:
            offset_by_layer[idx] = (offset, length)
            offset += length
        ref_offset = 0
        for idx, length in theta_ref.manifest:
            dst, _ = offset_by_layer[idx]
            values[dst : dst + length] += reg_g[ref_offset : ref_offset + length]
            ref_offset += length
        grads = grads.with_values(values)

    return loss, grads


def objective(
    images: np.ndarray,
    masks: np.ndarray,
    model: ToyFM,
    theta_ref: FlatParams | None,
    beta: float,
) -> float:
    loss, _ = objective_and_grad(images, masks, model, theta_ref, beta)
    return loss


def grad_adapters(
    images: np.ndarray,
    masks: np.ndarray,
    model: ToyFM,
    theta_ref: FlatParams | None,
    beta: float,
) -> FlatParams:
    _, grads = objective_and_grad(images, masks, model, theta_ref, beta)
    return grads


@dataclass
class AdamState:
    """Adam accumulators shaped like the trainable parameter vector."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_params(cls, params: FlatParams) -> "AdamState":
        return cls(
            first_moment=np.zeros(params.total_size),
            second_moment=np.zeros(params.total_size),
        )


def adam_step(
    params: FlatParams, grads: FlatParams, state: AdamState, lr: float
) -> tuple[FlatParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    if lr <= 0:
        raise InvalidArgumentError("learning rate must be > 0")
    if not params.same_manifest(grads):
        raise InvalidArgumentError("params and grads manifests must match")
    if state.first_moment.size != params.total_size:
        raise InvalidArgumentError("Adam state does not match parameter size")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads.values
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.values**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_values = params.values - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if not np.all(np.isfinite(new_values)):
        raise NumericError(f"parameter update diverged at optimizer step {t}")
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.eps)
    return params.with_values(new_values), new_state
