"""Synthetic non-IID segmentation federations.

Each client draws Gaussian-blob images from its cluster's distribution;
the mask is the union of the blob disks. Cluster-level gain, noise, and
spatial offset induce the cross-client appearance shift. Everything is a
pure function of the federation spec (per-client RNG streams).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError, InvalidArgumentError
from .numerics import RngStream, derive_stream_id

TRAIN_FRACTION = 0.8
MIN_FOREGROUND = 0.02
MAX_FOREGROUND = 0.9
_MAX_DRAW_ATTEMPTS = 200

DATASET_MAGIC = b"FSCD"
DATASET_VERSION = 1


@dataclass(frozen=True)
class ClusterParams:
    """Generative knobs for one cluster of clients."""

    blob_count: tuple[int, int] = (1, 3)
    radius: tuple[float, float] = (1.5, 3.5)
    gain: float = 1.0
    noise: float = 0.1
    offset: tuple[float, float] = (0.0, 0.0)

    def validate(self, mask_side: int) -> None:
        lo, hi = self.blob_count
        if lo < 1 or hi < lo:
            raise InvalidArgumentError(f"blob_count range {self.blob_count} is invalid")
        r_lo, r_hi = self.radius
        if r_lo <= 0 or r_hi < r_lo:
            raise InvalidArgumentError(f"radius range {self.radius} is invalid")
        if r_hi > mask_side / 2:
            raise InvalidArgumentError(
                f"radius {r_hi} exceeds half the canvas side {mask_side}"
            )
        if self.gain <= 0:
            raise InvalidArgumentError("gain must be > 0")
        if self.noise < 0:
            raise InvalidArgumentError("noise level must be >= 0")
        if max(abs(self.offset[0]), abs(self.offset[1])) > mask_side / 2:
            raise InvalidArgumentError("offset must stay within half the canvas")


@dataclass
class FederationSpec:
    """Layout of a synthetic federation: who has how much data from which cluster."""

    client_sizes: tuple[int, ...]
    cluster_of: tuple[int, ...]
    clusters: dict[int, ClusterParams]
    mask_side: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        self.client_sizes = tuple(int(n) for n in self.client_sizes)
        self.cluster_of = tuple(int(c) for c in self.cluster_of)

    @property
    def num_clients(self) -> int:
        return len(self.client_sizes)

    def validate(self) -> None:
        if self.num_clients < 2:
            raise InvalidArgumentError("a federation needs at least 2 clients")
        if any(n < 2 for n in self.client_sizes):
            raise InvalidArgumentError("every client needs at least 2 samples")
        if len(self.cluster_of) != self.num_clients:
            raise InvalidArgumentError("cluster_of must assign every client")
        for cid in self.cluster_of:
            if cid not in self.clusters:
                raise InvalidArgumentError(f"client assigned to unknown cluster {cid}")
        if self.mask_side < 4:
            raise InvalidArgumentError("mask_side must be >= 4")
        for params in self.clusters.values():
            params.validate(self.mask_side)


@dataclass
class Sample:
    """One segmentation example: image in [0,1], binary mask, both flattened."""

    image: np.ndarray
    mask: np.ndarray


@dataclass
class ClientDataset:
    train: list[Sample]
    test: list[Sample]

    @property
    def n_i(self) -> int:
        return len(self.train) + len(self.test)


def _draw_sample(params: ClusterParams, mask_side: int, stream: RngStream) -> Sample:
    coords = np.arange(mask_side, dtype=np.float64)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    mid = (mask_side - 1) / 2.0
    spread = mask_side / 4.0
    for _ in range(_MAX_DRAW_ATTEMPTS):
        count = stream.draw_integer(params.blob_count[0], params.blob_count[1] + 1)
        centers_y = mid + params.offset[0] + stream.draw_uniform(count, -spread, spread)
        centers_x = mid + params.offset[1] + stream.draw_uniform(count, -spread, spread)
        radii = stream.draw_uniform(count, params.radius[0], params.radius[1])
        noise = stream.draw_gaussian(mask_side * mask_side).reshape(mask_side, mask_side)

        bump = np.zeros((mask_side, mask_side))
        mask = np.zeros((mask_side, mask_side), dtype=bool)
        for cy, cx, r in zip(centers_y, centers_x, radii):
            dist_sq = (yy - cy) ** 2 + (xx - cx) ** 2
            mask |= dist_sq <= r * r
            bump += np.exp(-dist_sq / (2.0 * (r / 2.0) ** 2))
        image = np.clip(params.gain * bump + params.noise * noise, 0.0, 1.0)

        fraction = mask.mean()
        if MIN_FOREGROUND <= fraction <= MAX_FOREGROUND:
            return Sample(image.ravel(), mask.ravel().astype(np.float64))
    raise InvalidArgumentError(
        "cluster parameters cannot produce masks with foreground fraction "
        f"in [{MIN_FOREGROUND}, {MAX_FOREGROUND}]"
    )


def split_train_test(samples: list[Sample], stream: RngStream) -> tuple[list[Sample], list[Sample]]:
    """Seeded shuffle, then an 8:2 split (train count clamped to keep both sides non-empty)."""
    n = len(samples)
    if n < 2:
        raise InvalidArgumentError("need at least 2 samples to split")
    order = stream.permutation(n)
    n_train = int(np.floor(TRAIN_FRACTION * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    shuffled = [samples[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:]


def generate_client_dataset(spec: FederationSpec, client_id: int) -> ClientDataset:
    """Dataset for one client, independent of any other client's stream."""
    spec.validate()
    if not 0 <= client_id < spec.num_clients:
        raise InvalidArgumentError(f"client_id {client_id} out of range")
    params = spec.clusters[spec.cluster_of[client_id]]
    stream = RngStream(spec.seed, derive_stream_id("datagen", client_id))
    samples = [_draw_sample(params, spec.mask_side, stream) for _ in range(spec.client_sizes[client_id])]
    split_stream = RngStream(spec.seed, derive_stream_id("split", client_id))
    train, test = split_train_test(samples, split_stream)
    return ClientDataset(train, test)


def generate_federation(spec: FederationSpec) -> list[ClientDataset]:
    spec.validate()
    return [generate_client_dataset(spec, i) for i in range(spec.num_clients)]


def save_federation(datasets: list[ClientDataset], path: str) -> None:
    """Binary snapshot: FSCD header, then per-client little-endian float64 arrays."""
    chunks = [struct.pack("<4sII", DATASET_MAGIC, DATASET_VERSION, len(datasets))]
    for ds in datasets:
        pixels = ds.train[0].image.size if ds.train else ds.test[0].image.size
        chunks.append(struct.pack("<III", len(ds.train), len(ds.test), pixels))
        for sample in list(ds.train) + list(ds.test):
            chunks.append(sample.image.astype("<f8").tobytes())
            chunks.append(sample.mask.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_federation(path: str) -> list[ClientDataset]:
    with open(path, "rb") as fh:
        data = fh.read()
    view = memoryview(data)
    if len(view) < 12:
        raise DecodeError("header: truncated")
    magic, version, num_clients = struct.unpack_from("<4sII", view, 0)
    if magic != DATASET_MAGIC:
        raise DecodeError(f"magic: expected {DATASET_MAGIC!r}, got {bytes(magic)!r}")
    if version != DATASET_VERSION:
        raise DecodeError(f"version: unsupported {version}")
    offset = 12
    datasets = []
    for _ in range(num_clients):
        if offset + 12 > len(view):
            raise DecodeError("client header: truncated")
        n_train, n_test, pixels = struct.unpack_from("<III", view, offset)
        offset += 12
        samples = []
        for _ in range(n_train + n_test):
            end = offset + 16 * pixels
            if end > len(view):
                raise DecodeError("payload: truncated")
            image = np.frombuffer(view, dtype="<f8", count=pixels, offset=offset).copy()
            mask = np.frombuffer(view, dtype="<f8", count=pixels, offset=offset + 8 * pixels).copy()
            samples.append(Sample(image, mask))
            offset = end
        datasets.append(ClientDataset(samples[:n_train], samples[n_train:]))
    if offset != len(view):
        raise DecodeError("payload: trailing bytes")
    return datasets
