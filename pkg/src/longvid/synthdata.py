"""Procedural moving-shape clips with structured captions.

Clips are 32x32 RGB float32 videos of a single colored shape translating
with constant integer velocity and bouncing elastically off the frame
edges. Integer positions and velocities keep the physics exact: the object
mask translates bitwise, so the centroid displacement equals the velocity
until the first bounce. Captions are a fixed positional grammar over a
closed vocabulary: [shape, color, direction, speed].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numcore import Rng

FRAME_SIZE = 32
CHANNELS = 3
DEFAULT_CLIP_LEN = 24

SHAPES = ("square", "circle")

PALETTE = {
    "red": (0.9, 0.15, 0.15),
    "green": (0.15, 0.8, 0.2),
    "blue": (0.2, 0.25, 0.9),
    "yellow": (0.9, 0.85, 0.2),
    "magenta": (0.85, 0.2, 0.8),
    "cyan": (0.2, 0.8, 0.85),
}
COLOR_NAMES = tuple(PALETTE)

DIRECTIONS = (
    "still", "east", "west", "south", "north",
    "southeast", "southwest", "northeast", "northwest",
)
SPEEDS = ("slow", "fast")

# Closed vocabulary: the semantic tokens above plus reserved filler slots up
# to 64 ids. Position in the caption determines the field.
VOCAB: tuple[str, ...] = tuple(
    list(SHAPES) + list(COLOR_NAMES) + list(DIRECTIONS) + list(SPEEDS)
    + [f"<reserved{i}>" for i in range(64 - len(SHAPES) - len(COLOR_NAMES)
                                       - len(DIRECTIONS) - len(SPEEDS))]
)
VOCAB_SIZE = len(VOCAB)
TOKEN_ID = {w: i for i, w in enumerate(VOCAB)}


@dataclass(frozen=True)
class SceneSpec:
    """One clip's scene: what moves, how, and over what background."""

    shape: str
    color: str
    velocity: tuple[int, int]
    start: tuple[int, int]
    background: float
    length: int = DEFAULT_CLIP_LEN
    size: int = 10

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown shape {self.shape!r}")
        if self.color not in PALETTE:
            raise ConfigError(f"unknown color {self.color!r}")
        if self.size >= FRAME_SIZE:
            raise ConfigError(
                f"object size {self.size} does not fit a {FRAME_SIZE}px frame"
            )
        lo, hi = 0, FRAME_SIZE - self.size
        x, y = self.start
        if not (lo <= x <= hi and lo <= y <= hi):
            raise ConfigError(f"start {self.start} puts the object out of frame")


def direction_name(velocity: tuple[int, int]) -> str:
    vx, vy = velocity
    if vx == 0 and vy == 0:
        return "still"
    ns = {-1: "north", 0: "", 1: "south"}[int(np.sign(vy))]
    ew = {-1: "west", 0: "", 1: "east"}[int(np.sign(vx))]
    return (ns + ew) if (ns and ew) else (ns or ew)


def speed_name(velocity: tuple[int, int]) -> str:
    return "fast" if max(abs(velocity[0]), abs(velocity[1])) >= 2 else "slow"


def make_caption(spec: SceneSpec) -> list[int]:
    """Fixed grammar: [shape, color, direction, speed]."""
    return [
        TOKEN_ID[spec.shape],
        TOKEN_ID[spec.color],
        TOKEN_ID[direction_name(spec.velocity)],
        TOKEN_ID[speed_name(spec.velocity)],
    ]


def decode_caption(tokens: list[int]) -> dict:
    """Invert the positional grammar back to the encoded fields."""
    if len(tokens) != 4:
        raise ConfigError(f"caption must have 4 tokens, got {len(tokens)}")
    shape, color, direction, speed = (VOCAB[t] for t in tokens)
    return {"shape": shape, "color": color, "direction": direction, "speed": speed}


def _object_mask(shape: str, size: int) -> np.ndarray:
    if shape == "square":
        return np.ones((size, size), dtype=bool)
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size]
    return (yy - c) ** 2 + (xx - c) ** 2 <= (size / 2.0) ** 2


def make_clip(spec: SceneSpec, rng: Rng) -> tuple[np.ndarray, list[int]]:
    """Render the clip and its caption.

    The background gets a faint static texture (drawn once from rng, shared
    by all frames) so feature extractors see more than a flat field; the
    object is pasted with exact palette values on top.
    """
    mask = _object_mask(spec.shape, spec.size)
    color = np.asarray(PALETTE[spec.color], dtype=np.float32)
    texture = (rng.standard_normal((CHANNELS, FRAME_SIZE, FRAME_SIZE)) * 0.02)
    bg = np.clip(spec.background + texture, 0.0, 1.0).astype(np.float32)

    frames = np.empty((spec.length, CHANNELS, FRAME_SIZE, FRAME_SIZE), dtype=np.float32)
    x, y = spec.start
    vx, vy = spec.velocity
    hi = FRAME_SIZE - spec.size
    for f in range(spec.length):
        frame = bg.copy()
        region = frame[:, y:y + spec.size, x:x + spec.size]
        region[:, mask] = color[:, None]
        frames[f] = frame
        # integer elastic bounce; |v| is small enough for single reflection
        x += vx
        y += vy
        if x < 0:
            x, vx = -x, -vx
        elif x > hi:
            x, vx = 2 * hi - x, -vx
        if y < 0:
            y, vy = -y, -vy
        elif y > hi:
            y, vy = 2 * hi - y, -vy
    return frames, make_caption(spec)


# Pinned parameter grid the dataset sampler draws from.
GRID_VELOCITIES = [-3, -2, -1, 1, 2, 3]
GRID_BACKGROUNDS = [0.15, 0.3, 0.45, 0.6]
GRID_SIZES = [8, 10, 12]


def sample_spec(rng: Rng, length: int = DEFAULT_CLIP_LEN) -> SceneSpec:
    shape = SHAPES[rng.choice_index(len(SHAPES))]
    color = COLOR_NAMES[rng.choice_index(len(COLOR_NAMES))]
    vx = GRID_VELOCITIES[rng.choice_index(len(GRID_VELOCITIES))]
    vy = GRID_VELOCITIES[rng.choice_index(len(GRID_VELOCITIES))]
    size = GRID_SIZES[rng.choice_index(len(GRID_SIZES))]
    bgi = GRID_BACKGROUNDS[rng.choice_index(len(GRID_BACKGROUNDS))]
    hi = FRAME_SIZE - size
    x = int(rng.integers(0, hi + 1))
    y = int(rng.integers(0, hi + 1))
    return SceneSpec(shape=shape, color=color, velocity=(vx, vy),
                     start=(x, y), background=bgi, length=length, size=size)


@dataclass
class Dataset:
    """Clips with captions and a deterministic 90/10 train/eval split."""

    videos: list[np.ndarray]
    captions: list[list[int]]
    specs: list[SceneSpec]

    def __len__(self) -> int:
        return len(self.videos)

    @property
    def train_indices(self) -> list[int]:
        return [i for i in range(len(self.videos)) if i % 10 != 9]

    @property
    def eval_indices(self) -> list[int]:
        return [i for i in range(len(self.videos)) if i % 10 == 9]


def make_dataset(n: int, rng: Rng, length: int = DEFAULT_CLIP_LEN) -> Dataset:
    """n clips with per-clip derived seeds; split is by index (every 10th is eval)."""
    if n < 1:
        raise ConfigError(f"make_dataset: n must be >= 1, got {n}")
    videos, captions, specs = [], [], []
    for i in range(n):
        child = rng.child(f"clip{i}")
        spec = sample_spec(child, length=length)
        video, caption = make_clip(spec, child.child("render"))
        videos.append(video)
        captions.append(caption)
        specs.append(spec)
    return Dataset(videos=videos, captions=captions, specs=specs)
