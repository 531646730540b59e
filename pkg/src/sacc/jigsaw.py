"""Rotated 3x3 jigsaw puzzles and their permutation label space.

The codebook is a greedy max-min-Hamming subset of the 9! tile orderings,
seeded and deterministic, with the identity permutation at index 0. Puzzles
rotate first (90-degree multiples only, so no resampling) and then shuffle
tiles, which makes the whole augmentation a pixel permutation: it commutes
exactly with any global per-channel lookup curve.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, InputError

TILE_GRID = 3
N_TILES = TILE_GRID * TILE_GRID
DEFAULT_ANGLES = (0, 90, 180, 270)

_ALL_PERMS: np.ndarray | None = None


def _all_permutations() -> np.ndarray:
    global _ALL_PERMS
    if _ALL_PERMS is None:
        _ALL_PERMS = np.array(list(itertools.permutations(range(N_TILES))),
                              dtype=np.uint8)
    return _ALL_PERMS


@dataclass(frozen=True)
class PermutationCodebook:
    """K distinct tile orderings; index 0 is always the identity."""

    permutations: np.ndarray
    seed: int

    @property
    def size(self) -> int:
        return self.permutations.shape[0]

    def __getitem__(self, index: int) -> np.ndarray:
        return self.permutations[index]

    def min_pairwise_hamming(self) -> int:
        perms = self.permutations
        if len(perms) < 2:
            return N_TILES
        best = N_TILES
        for i in range(len(perms) - 1):
            d = (perms[i + 1:] != perms[i]).sum(axis=1).min()
            best = min(best, int(d))
        return best


@dataclass
class PuzzleSample:
    """One augmented image with its ground-truth permutation index."""

    image: np.ndarray
    perm_index: int
    angle: int


def build_codebook(size: int, seed: int = 0) -> PermutationCodebook:
    """Greedy max-min-Hamming selection over all 9! permutations.

    The candidate order is shuffled once under ``seed`` so ties break
    reproducibly; regenerating with the same seed is byte-identical.
    """
    if not 1 <= size <= 362880:  # 9!
        raise ConfigError(f"codebook size must be in [1, 362880], got {size}")
    identity = np.arange(N_TILES, dtype=np.uint8)
    if size == 1:
        return PermutationCodebook(permutations=identity[None].copy(), seed=seed)
    candidates = _all_permutations()
    order = np.random.default_rng(seed).permutation(len(candidates))
    candidates = candidates[order]
    chosen = [identity]
    min_dist = (candidates != identity).sum(axis=1)
    for _ in range(size - 1):
        pick = int(np.argmax(min_dist))
        perm = candidates[pick].copy()
        chosen.append(perm)
        min_dist = np.minimum(min_dist, (candidates != perm).sum(axis=1))
    return PermutationCodebook(permutations=np.stack(chosen), seed=seed)


def make_puzzle(image: np.ndarray, codebook: PermutationCodebook,
                perm_index: int, angle: int, rng=None) -> PuzzleSample:
    """Rotate, cut into a 3x3 grid, and reorder tiles.

    Position ``i`` of the puzzle receives original tile ``perm[i]``. The
    ``rng`` argument is reserved for stochastic tile augmentation and is
    unused with the lossless default pipeline.
    """
    del rng
    if image.ndim != 3:
        raise DimensionError("expected an (H, W, C) image")
    h, w, _ = image.shape
    if h != w:
        raise DimensionError(f"puzzle images must be square, got {h}x{w}")
    if h % TILE_GRID != 0:
        raise DimensionError(f"side {h} is not divisible by {TILE_GRID}")
    if angle % 90 != 0:
        raise ConfigError(f"angle {angle} is not a multiple of 90 degrees")
    if not 0 <= perm_index < codebook.size:
        raise ConfigError(f"permutation index {perm_index} out of range")

    rotated = np.rot90(image, k=(angle // 90) % 4, axes=(0, 1))
    side = h // TILE_GRID
    perm = codebook[perm_index]
    out = np.empty_like(rotated)
    for pos in range(N_TILES):
        src = int(perm[pos])
        sr, sc = divmod(src, TILE_GRID)
        dr, dc = divmod(pos, TILE_GRID)
        out[dr * side:(dr + 1) * side, dc * side:(dc + 1) * side] = \
            rotated[sr * side:(sr + 1) * side, sc * side:(sc + 1) * side]
    return PuzzleSample(image=out, perm_index=perm_index, angle=angle)


def invert_puzzle(sample: PuzzleSample, codebook: PermutationCodebook) -> np.ndarray:
    """Undo the tile shuffle (not the rotation) of an angle-0 puzzle."""
    perm = codebook[sample.perm_index]
    inverse = np.argsort(perm)
    h = sample.image.shape[0]
    side = h // TILE_GRID
    out = np.empty_like(sample.image)
    for pos in range(N_TILES):
        src = int(inverse[pos])
        sr, sc = divmod(src, TILE_GRID)
        dr, dc = divmod(pos, TILE_GRID)
        out[dr * side:(dr + 1) * side, dc * side:(dc + 1) * side] = \
            sample.image[sr * side:(sr + 1) * side, sc * side:(sc + 1) * side]
    return out


def sample_batch(images, codebook: PermutationCodebook,
                 rng: np.random.Generator,
                 angles: tuple[int, ...] = DEFAULT_ANGLES) -> list[PuzzleSample]:
    """Uniformly sample a permutation index and angle for every image."""
    if len(images) == 0:
        raise InputError("cannot sample puzzles from an empty image set")
    perm_indices = rng.integers(0, codebook.size, size=len(images))
    angle_picks = rng.integers(0, len(angles), size=len(images))
    return [make_puzzle(np.asarray(images[i]), codebook,
                        int(perm_indices[i]), int(angles[angle_picks[i]]))
            for i in range(len(images))]


def save_codebook(codebook: PermutationCodebook, path) -> None:
    payload = {
        "schema_version": 1,
        "seed": codebook.seed,
        "size": codebook.size,
        "tile_grid": TILE_GRID,
        "permutations": codebook.permutations.tolist(),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_codebook(path) -> PermutationCodebook:
    payload = json.loads(Path(path).read_text())
    perms = np.asarray(payload["permutations"], dtype=np.uint8)
    if perms.ndim != 2 or perms.shape[1] != N_TILES:
        raise InputError(f"{path}: malformed permutation table")
    return PermutationCodebook(permutations=perms, seed=payload["seed"])


def jigsaw_crop(image: np.ndarray) -> np.ndarray:
    """Center-crop an (H, W, C) image to the largest square side divisible
    by the tile grid (64 -> 63), leaving puzzle-compatible input."""
    h, w, _ = image.shape
    side = (min(h, w) // TILE_GRID) * TILE_GRID
    top = (h - side) // 2
    left = (w - side) // 2
    return image[top:top + side, left:left + side]
