"""Scattered-sticks scenes: overlapping flat-colored rectangles with occlusion.

Each scene is a pure function of its ``SticksConfig`` (seed included).
Draw order, per stick, from one ``XorShift64Star`` stream:

    count        randint(min, max)                      (once per scene)
    palette      permutation(len(PALETTE)), first count  (once per scene)
    center x, y  uniform(0, size), uniform(0, size)
    angle        uniform(0, pi)

A pixel (row r, col c) with center (c + 0.5, r + 0.5) belongs to a stick
when its offset from the stick center projects to at most length/2 along
the stick axis and at most width/2 across it.  Later sticks paint over
earlier ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from discseg.rng import XorShift64Star

# 8-bit RGB, so images survive a round trip through 8-bit pixmaps exactly
PALETTE = np.array(
    [
        (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
        (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
        (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
        (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
    ],
    dtype=np.uint8,
)
BACKGROUND = np.array((20, 20, 20), dtype=np.uint8)

AUGMENTATIONS = ("fliplr", "rot90", "rot180", "rot270")


@dataclass(frozen=True)
class SticksConfig:
    image_size: int = 64
    stick_count_range: tuple[int, int] = (2, 6)
    stick_length: float = 36.0
    stick_width: float = 5.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.stick_count_range
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid stick_count_range {self.stick_count_range}")
        if hi > len(PALETTE):
            raise ValueError(f"at most {len(PALETTE)} sticks per scene (one palette color each)")
        if self.image_size < 1:
            raise ValueError("image_size must be >= 1")
        if not 0 < self.stick_width <= self.stick_length <= self.image_size:
            raise ValueError("need 0 < stick_width <= stick_length <= image_size")


@dataclass
class StickScene:
    image: np.ndarray  # (H, W, 3) float64 in [0, 1]
    instances: np.ndarray  # (H, W) int64, 0 = background
    seed: int = 0
    colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.uint8))

    @property
    def fg_mask(self) -> np.ndarray:
        return self.instances != 0

    @property
    def num_instances(self) -> int:
        return int(self.instances.max(initial=0))


def stick_mask(size: int, cx: float, cy: float, angle: float, length: float, width: float) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    dx, dy = xs - cx, ys - cy
    along = dx * math.cos(angle) + dy * math.sin(angle)
    across = -dx * math.sin(angle) + dy * math.cos(angle)
    return (np.abs(along) <= length / 2) & (np.abs(across) <= width / 2)


def draw_sticks(config: SticksConfig) -> tuple[list[np.ndarray], np.ndarray]:
    """Unoccluded masks of every drawn stick, plus their colors, in draw order."""
    rng = XorShift64Star(config.seed)
    count = rng.randint(*config.stick_count_range)
    colors = PALETTE[rng.permutation(len(PALETTE))[:count]]
    n = config.image_size
    masks = []
    for _ in range(count):
        cx, cy = rng.uniform(0, n), rng.uniform(0, n)
        angle = rng.uniform(0, math.pi)
        masks.append(stick_mask(n, cx, cy, angle, config.stick_length, config.stick_width))
    return masks, colors


def generate_scene(config: SticksConfig) -> StickScene:
    masks, colors = draw_sticks(config)
    n = config.image_size
    top = np.zeros((n, n), dtype=np.int64)
    for k, m in enumerate(masks, start=1):
        top[m] = k
    # drop fully hidden (or off-image) sticks and renumber in draw order
    visible = [k for k in range(1, len(masks) + 1) if np.any(top == k)]
    remap = np.zeros(len(masks) + 1, dtype=np.int64)
    remap[visible] = np.arange(1, len(visible) + 1)
    instances = remap[top]
    kept = colors[np.array(visible, dtype=np.int64) - 1] if visible else np.zeros((0, 3), np.uint8)
    rgb = np.empty((n, n, 3), dtype=np.uint8)
    rgb[:] = BACKGROUND
    for k in range(1, len(visible) + 1):
        rgb[instances == k] = kept[k - 1]
    return StickScene(rgb / 255.0, instances, config.seed, kept)


def generate_dataset(config: SticksConfig, count: int) -> list[StickScene]:
    """``count`` scenes with seeds ``config.seed, config.seed + 1, ...``."""
    return [generate_scene(replace(config, seed=config.seed + i)) for i in range(count)]


def _apply(arr: np.ndarray, op: str) -> np.ndarray:
    if op == "fliplr":
        return arr[:, ::-1].copy()
    turns = {"rot90": 1, "rot180": 2, "rot270": 3}[op]
    return np.rot90(arr, k=turns, axes=(0, 1)).copy()


def augment(scene: StickScene, op: str) -> StickScene:
    """Left-right flip or counter-clockwise right-angle rotation."""
    if op not in AUGMENTATIONS:
        raise ValueError(f"unknown augmentation {op!r}; expected one of {AUGMENTATIONS}")
    h, w = scene.instances.shape
    if op != "fliplr" and h != w:
        raise ValueError(f"rotation needs a square image, got {h}x{w}")
    return StickScene(_apply(scene.image, op), _apply(scene.instances, op), scene.seed, scene.colors)


def coordinate_maps(height: int, width: int) -> np.ndarray:
    """(H, W, 2) map: channel 0 is x from -1 (left) to 1 (right), channel 1
    is y from -1 (top) to 1 (bottom).  A single-pixel axis maps to 0."""
    if height < 1 or width < 1:
        raise ValueError("height and width must be >= 1")

    def axis(n):
        return np.zeros(1) if n == 1 else np.linspace(-1.0, 1.0, n)

    xs, ys = axis(width), axis(height)
    out = np.empty((height, width, 2))
    out[..., 0] = xs[None, :]
    out[..., 1] = ys[:, None]
    return out


def network_input(image: np.ndarray) -> np.ndarray:
    """Image channels followed by the x and y coordinate maps."""
    h, w = image.shape[:2]
    return np.concatenate([np.asarray(image, dtype=np.float64), coordinate_maps(h, w)], axis=2)


def blob_scene(size: int, n_blobs: int, radius: float, seed: int = 0) -> StickScene:
    """Non-overlapping flat-colored discs on a dark background; a simpler
    stand-in for sticks when occlusion is not the point."""
    if n_blobs > len(PALETTE):
        raise ValueError(f"at most {len(PALETTE)} blobs")
    rng = XorShift64Star(seed)
    colors = PALETTE[rng.permutation(len(PALETTE))[:n_blobs]]
    centers: list[tuple[float, float]] = []
    for _ in range(10000):
        if len(centers) == n_blobs:
            break
        c = (rng.uniform(radius, size - radius), rng.uniform(radius, size - radius))
        if all(math.hypot(c[0] - o[0], c[1] - o[1]) > 2 * radius + 1 for o in centers):
            centers.append(c)
    else:
        raise ValueError("could not place blobs without overlap; use fewer or smaller blobs")
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    instances = np.zeros((size, size), dtype=np.int64)
    rgb = np.empty((size, size, 3), dtype=np.uint8)
    rgb[:] = BACKGROUND
    for k, (cx, cy) in enumerate(centers, start=1):
        m = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2
        instances[m] = k
        rgb[m] = colors[k - 1]
    return StickScene(rgb / 255.0, instances, seed, colors)
