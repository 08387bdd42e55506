"""Dataset and shard containers plus the synthetic colorshift generator.

In a colorshift image the foreground shape is set by the class and the
background colour by the client. The shape is the feature every client
agrees on. The background is the feature that differs between clients.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, PartitionError


@dataclass
class Dataset:
    images: np.ndarray          # [N, C, H, W] float64
    labels: np.ndarray          # [N] int, or [N, K] multi-label {0, 1}
    num_classes: int
    seed: int = 0
    origin: np.ndarray | None = None      # generating client per sample (colorshift only)
    background: np.ndarray | None = None  # palette index per sample (colorshift only)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if len(self.images) != len(self.labels):
            raise ConfigError(f"{len(self.images)} images but {len(self.labels)} labels", field="dataset")
        if self.multilabel:
            if self.labels.shape[1] != self.num_classes or not np.isin(self.labels, (0, 1)).all():
                raise ConfigError("multi-label targets must be a {0,1} matrix with one column per class",
                                  field="dataset.labels")
        else:
            self.labels = self.labels.astype(np.int64)
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise ConfigError("labels out of range", field="dataset.labels")

    @property
    def multilabel(self) -> bool:
        return self.labels.ndim == 2

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        pick = (lambda a: None if a is None else a[idx])
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, self.seed,
                       pick(self.origin), pick(self.background))


@dataclass
class ClientShard:
    client_id: int
    indices: np.ndarray
    label_hist: np.ndarray = field(default=None)

    def __post_init__(self):
        self.indices = np.sort(np.asarray(self.indices, dtype=np.int64))
        if len(np.unique(self.indices)) != len(self.indices):
            raise PartitionError(f"client {self.client_id}: duplicate sample indices")

    @property
    def size(self) -> int:
        return len(self.indices)


def make_shard(client_id: int, indices, labels: np.ndarray, num_classes: int) -> ClientShard:
    indices = np.sort(np.asarray(indices, dtype=np.int64))
    return ClientShard(client_id, indices, label_histogram(labels[indices], num_classes))


def label_histogram(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        return labels.sum(axis=0).astype(np.int64)
    return np.bincount(labels.astype(np.int64), minlength=num_classes)


# -- colorshift ---------------------------------------------------------------

def _disk(n):
    r = (np.arange(n) - (n - 1) / 2) / (n / 2)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= 0.8


def _base_shapes(n: int) -> list[np.ndarray]:
    """Binary ``n x n`` masks; all pairwise distinct for n >= 5."""
    z = lambda: np.zeros((n, n), dtype=bool)  # noqa: E731
    mid, t = n // 2, max(1, n // 5)
    shapes = []
    m = z(); m[mid - t // 2: mid - t // 2 + t + 1, :] = True; shapes.append(m)          # horizontal bar
    shapes.append(shapes[0].T.copy())                                                  # vertical bar
    shapes.append(shapes[0] | shapes[1])                                               # plus
    m = np.eye(n, dtype=bool) | np.eye(n, k=1, dtype=bool); shapes.append(m)           # diagonal
    shapes.append(m | m[:, ::-1])                                                      # x
    m = z(); m[:t + 1], m[-t - 1:], m[:, :t + 1], m[:, -t - 1:] = True, True, True, True
    shapes.append(m)                                                                   # square outline
    shapes.append(_disk(n))                                                            # blob
    m = z(); m[:t + 1] = True; m[:, mid - t // 2: mid - t // 2 + t + 1] = True; shapes.append(m)  # T
    m = z(); m[:, :t + 1] = True; m[-t - 1:] = True; shapes.append(m)                  # L
    m = np.tril(np.ones((n, n), dtype=bool)); shapes.append(m)                         # triangle
    return shapes


def class_templates(num_classes: int, size: int, seed: int = 0) -> np.ndarray:
    """One foreground mask per class; classes beyond the fixed set get seeded random blobs."""
    shapes = _base_shapes(size)
    rng = np.random.default_rng([seed, 7919])
    seen = {m.tobytes() for m in shapes}
    while len(shapes) < num_classes:
        m = rng.random((size, size)) < 0.45
        if m.any() and m.tobytes() not in seen:
            seen.add(m.tobytes())
            shapes.append(m)
    return np.stack(shapes[:num_classes])


def client_palettes(num_clients: int, colors_per_client: int = 4) -> np.ndarray:
    """Background colours ``[num_clients, colors_per_client, 3]``; each client owns a hue sector."""
    out = np.empty((num_clients, colors_per_client, 3))
    for i in range(num_clients):
        for j in range(colors_per_client):
            hue = (i + (j + 0.5) / colors_per_client * 0.8) / num_clients
            sat = 0.9 if j % 2 == 0 else 0.6
            val = 0.55 if j < colors_per_client // 2 else 0.4
            out[i, j] = colorsys.hsv_to_rgb(hue % 1.0, sat, val)
    return out


FOREGROUND_MIN = 0.75   # foreground channels lie in [0.75, 1]; background channels stay below ~0.4
NOISE_STD = 0.1
TEXTURE_AMPLITUDE = 0.18
INPUT_MEAN, INPUT_STD = 0.5, 0.25


def device_response(num_clients: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-client (contrast, offset) of the simulated acquisition device."""
    if num_clients == 1:
        return np.ones(1), np.zeros(1)
    t = np.linspace(0.0, 1.0, num_clients)
    return 0.3 + 1.1 * t, 0.1 - 0.3 * t


def background_textures(num_clients: int, colors_per_client: int, image_size: int) -> np.ndarray:
    """Zero-mean stripe patterns ``[num_clients * colors_per_client, H, W]``.

    Each client owns a stripe orientation; the palette entries of a client
    differ in stripe frequency. Backgrounds therefore carry a client-specific
    texture as well as a client-specific colour.
    """
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64)
    out = np.empty((num_clients * colors_per_client, image_size, image_size))
    for i in range(num_clients):
        angle = np.pi * i / num_clients
        u = xx * np.cos(angle) + yy * np.sin(angle)
        for j in range(colors_per_client):
            period = 2.0 + 1.5 * j
            out[i * colors_per_client + j] = TEXTURE_AMPLITUDE * np.sign(np.sin(2 * np.pi * u / period + 0.5))
    return out


def gen_colorshift(num_clients: int, num_classes: int, samples_per_client: int, shift_strength: float,
                   image_size: int = 16, seed: int = 0, colors_per_client: int = 4,
                   ) -> tuple[Dataset, list[ClientShard]]:
    """Generate a feature-shifted dataset and its natural per-client shards.

    With probability ``shift_strength`` a sample's background (colour plus
    stripe texture) is drawn from its own client's palette, otherwise
    uniformly from the union of all palettes. A palette entry also fixes the
    device contrast and offset applied to the whole image. Labels are drawn
    independently of the background. Pixels are returned in [0, 1]; see
    :func:`standardize_inputs`.
    """
    for name, v in (("num_clients", num_clients), ("num_classes", num_classes),
                    ("samples_per_client", samples_per_client), ("image_size", image_size)):
        if v < 1:
            raise ConfigError(f"{name} must be positive, got {v}", field=f"colorshift.{name}")
    if num_classes < 2:
        raise ConfigError("need at least two classes", field="colorshift.num_classes")
    if not 0.0 <= shift_strength <= 1.0:
        raise ConfigError(f"shift_strength must lie in [0, 1], got {shift_strength}",
                          field="colorshift.shift_strength")
    if image_size < 8:
        raise ConfigError("image_size must be at least 8", field="colorshift.image_size")
    if samples_per_client < num_classes:
        raise ConfigError("samples_per_client must cover every class", field="colorshift.samples_per_client")

    shape_size = image_size // 2 + image_size // 4
    templates = class_templates(num_classes, shape_size, seed)
    flat_palette = client_palettes(num_clients, colors_per_client).reshape(-1, 3)
    textures = background_textures(num_clients, colors_per_client, image_size)
    rng = np.random.default_rng(seed)

    n = num_clients * samples_per_client
    origin = np.repeat(np.arange(num_clients), samples_per_client)
    # balanced labels within each client, order shuffled
    labels = np.concatenate([rng.permutation(np.arange(samples_per_client) % num_classes)
                             for _ in range(num_clients)])
    own = rng.random(n) < shift_strength
    local_pick = rng.integers(0, colors_per_client, n)
    global_pick = rng.integers(0, len(flat_palette), n)
    background = np.where(own, origin * colors_per_client + local_pick, global_pick)

    images = flat_palette[background][:, :, None, None] + textures[background][:, None, :, :]
    span = image_size - shape_size + 1
    oy = rng.integers(0, span, n)
    ox = rng.integers(0, span, n)
    fg = rng.uniform(FOREGROUND_MIN, 1.0, (n, 3))
    for k in range(n):
        patch = images[k, :, oy[k]:oy[k] + shape_size, ox[k]:ox[k] + shape_size]
        patch[:, templates[labels[k]]] = fg[k][:, None]
    images += rng.normal(0.0, NOISE_STD, images.shape)
    contrast, offset = device_response(num_clients)
    device = background // colors_per_client
    images = images * contrast[device][:, None, None, None] + offset[device][:, None, None, None]
    np.clip(images, 0.0, 1.0, out=images)

    ds = Dataset(images, labels, num_classes, seed, origin, background)
    shards = [make_shard(i, np.flatnonzero(origin == i), labels, num_classes) for i in range(num_clients)]
    return ds, shards


def standardize_inputs(ds: Dataset, mean: float = INPUT_MEAN, std: float = INPUT_STD) -> Dataset:
    """Copy of ``ds`` with pixels mapped to ``(x - mean) / std`` (fixed constants, no data peeking)."""
    return Dataset((ds.images - mean) / std, ds.labels, ds.num_classes, ds.seed, ds.origin, ds.background)


def foreground_mask(images: np.ndarray) -> np.ndarray:
    """Per-image two-level threshold on the darkest channel (foreground colours are bright in all channels).

    The threshold is the midpoint between the image's 10th and 99th
    percentiles, so it adapts to each device's contrast.
    """
    dark = images.min(axis=1)
    lo = np.percentile(dark, 10, axis=(1, 2))[:, None, None]
    hi = np.percentile(dark, 99, axis=(1, 2))[:, None, None]
    return dark > 0.5 * (lo + hi)


def shape_oracle(images: np.ndarray, templates: np.ndarray) -> np.ndarray:
    """Nearest class template (Hamming distance over all placements) to each image's foreground mask."""
    mask = foreground_mask(images)
    n, size = len(images), images.shape[-1]
    k = templates.shape[-1]
    best = np.full((n, len(templates)), np.inf)
    for oy in range(size - k + 1):
        for ox in range(size - k + 1):
            placed = np.zeros((len(templates), size, size), dtype=bool)
            placed[:, oy:oy + k, ox:ox + k] = templates
            dist = (mask[:, None] != placed[None]).sum(axis=(2, 3))
            best = np.minimum(best, dist)
    return best.argmin(axis=1)
