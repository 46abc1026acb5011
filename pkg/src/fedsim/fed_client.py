"""Client-side runtime: install the broadcast adapters, train locally, package the upload."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adapter_net import AdamState, ToyFM, adam_step, model_forward, objective_and_grad, sigmoid
from .datagen import ClientDataset
from .errors import InvalidArgumentError, InvalidStateError, ProtocolError
from .numerics import FlatParams, RngStream, derive_stream_id


@dataclass
class ClientConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    local_epochs: int = 1
    beta: float = 0.01
    low_layers: int = 1  # number of low-level adapter layers shared with the server

    def validate(self, num_blocks: int) -> None:
        if self.learning_rate <= 0:
            raise InvalidArgumentError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.local_epochs < 1:
            raise InvalidArgumentError("local_epochs must be >= 1")
        if self.beta < 0:
            raise InvalidArgumentError("beta must be >= 0")
        if not 1 <= self.low_layers <= num_blocks:
            raise InvalidArgumentError(
                f"low_layers must be in 1..{num_blocks}, got {self.low_layers}"
            )


@dataclass
class ClientUpdate:
    """Per-round upload: the low-level adapters plus local metrics."""

    client_id: int
    round_index: int
    low_params: FlatParams
    n_i: int
    train_loss: float
    test_iou: float
    test_dice: float


@dataclass
class ClientState:
    client_id: int
    model: ToyFM
    adam: AdamState
    dataset: ClientDataset
    config: ClientConfig
    seed: int
    theta_ref: FlatParams | None = None
    _train_images: np.ndarray = field(init=False, repr=False)
    _train_masks: np.ndarray = field(init=False, repr=False)
    _test_images: np.ndarray = field(init=False, repr=False)
    _test_masks: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.config.validate(self.model.num_blocks)
        self._train_images = _stack([s.image for s in self.dataset.train])
        self._train_masks = _stack([s.mask for s in self.dataset.train])
        self._test_images = _stack([s.image for s in self.dataset.test])
        self._test_masks = _stack([s.mask for s in self.dataset.test])

    @property
    def low_layer_list(self) -> list[int]:
        return list(range(1, self.config.low_layers + 1))


def _stack(arrays: list[np.ndarray]) -> np.ndarray:
    if not arrays:
        return np.zeros((0, 0))
    return np.stack(arrays)


def install_low_adapters(state: ClientState, received: FlatParams) -> None:
    """Overwrite adapter layers 1..L with the broadcast and snapshot it as theta_ref."""
    expected = state.model.adapter_params(state.low_layer_list).manifest
    if received.manifest != expected:
        raise ProtocolError(
            f"broadcast manifest {received.manifest} does not cover layers 1..{state.config.low_layers}"
        )
    state.model.install_adapter_params(received)
    state.theta_ref = received


def local_train_round(state: ClientState, round_index: int) -> ClientUpdate:
    """One local training pass (config.local_epochs epochs) plus evaluation.

    Batches are drawn in a seeded shuffle keyed by (client, round); only
    adapter parameters move. Returns the post-training low-level adapters.
    """
    if state._train_images.size == 0:
        raise InvalidStateError(f"client {state.client_id} has an empty train set")
    cfg = state.config
    n = state._train_images.shape[0]
    shuffle = RngStream(
        state.seed, derive_stream_id("shuffle", state.client_id, round_index)
    )
    losses = []
    for _ in range(cfg.local_epochs):
        order = shuffle.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = objective_and_grad(
                state._train_images[idx],
                state._train_masks[idx],
                state.model,
                state.theta_ref,
                cfg.beta,
            )
            params = state.model.adapter_params()
            new_params, state.adam = adam_step(params, grads, state.adam, cfg.learning_rate)
            state.model.install_adapter_params(new_params)
            losses.append(loss)
    iou, dice = evaluate(state)
    return ClientUpdate(
        client_id=state.client_id,
        round_index=round_index,
        low_params=state.model.adapter_params(state.low_layer_list),
        n_i=state.dataset.n_i,
        train_loss=float(np.mean(losses)),
        test_iou=iou,
        test_dice=dice,
    )


def iou_dice(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    """Overlap metrics for one binary mask pair; both-empty counts as perfect."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    inter = float(np.sum(pred & truth))
    p_size = float(np.sum(pred))
    g_size = float(np.sum(truth))
    union = p_size + g_size - inter
    if union == 0.0:
        return 1.0, 1.0
    iou = inter / union
    dice = 2.0 * inter / (p_size + g_size)
    return iou, dice


def evaluate(state: ClientState) -> tuple[float, float]:
    """Mean test IoU and Dice with predictions thresholded at probability 0.5."""
    if state._test_images.size == 0:
        raise InvalidStateError(f"client {state.client_id} has an empty test set")
    logits = model_forward(state._test_images, state.model)
    pred = sigmoid(logits) > 0.5
    ious, dices = [], []
    for row_pred, row_truth in zip(pred, state._test_masks):
        iou, dice = iou_dice(row_pred, row_truth.astype(bool))
        ious.append(iou)
        dices.append(dice)
    return float(np.mean(ious)), float(np.mean(dices))


def measure_param_shift(before: FlatParams, after: FlatParams) -> np.ndarray:
    """Per-layer relative L2 shift ||after - before|| / ||before|| (0/0 -> 0)."""
    if not before.same_manifest(after):
        raise InvalidArgumentError("param shift requires identical manifests")
    shifts = []
    for (idx, b_vals), (_, a_vals) in zip(before.split(), after.split()):
        base = float(np.linalg.norm(b_vals))
        delta = float(np.linalg.norm(a_vals - b_vals))
        if base == 0.0:
            shifts.append(0.0 if delta == 0.0 else float("inf"))
        else:
            shifts.append(delta / base)
    return np.array(shifts)
