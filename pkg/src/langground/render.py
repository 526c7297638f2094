"""Egocentric RGB rendering of the grid world.

The observation is the 9x9 cell window ahead of (and beside) the agent,
rotated so "forward" is up, rasterised to 84x84 RGB.  All five object
factors are visually discriminable: silhouette = shape, fill hue = colour,
overlay texture = pattern, luminance multiplier = shade, glyph extent =
size.  Rendering is a pure function; the uint8 backing makes byte-identical
output checkable directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .stencils import STENCILS
from .world import FORWARD, EpisodeSpec, SimState

# Base palette (uint8).  "black" is kept above zero and "white" below
# saturation so the three shade multipliers stay strictly ordered per pixel
# and shade=light never clips.
PALETTE = {
    "red": (204, 32, 32),
    "blue": (40, 64, 208),
    "white": (232, 232, 232),
    "grey": (128, 128, 128),
    "cyan": (40, 200, 200),
    "pink": (236, 128, 180),
    "orange": (232, 140, 32),
    "black": (68, 68, 72),
    "green": (44, 176, 52),
    "magenta": (200, 40, 200),
    "brown": (140, 92, 40),
    "purple": (128, 48, 200),
    "yellow": (224, 212, 40),
}

SHADE_MULT = {"light": 1.0, "neutral": 0.72, "dark": 0.45}
SIZE_FRAC = {"small": 0.50, "medium": 0.75, "large": 1.00}

# Each pattern also tints the glyph as a whole; the steps are wide enough
# that any two patterns stay distinguishable after uint8 rounding even when
# their textures coincide inside a small glyph.
PATTERN_TINT = {
    "plain": 1.00, "chequered": 0.94, "crosses": 0.88, "stripes": 0.82,
    "discs": 0.76, "hex": 0.70, "pinstripe": 0.64, "spots": 0.58,
    "swirls": 0.52,
}

FLOOR_DIM = 0.40          # floors are dimmed so glyphs stand out
PATTERN_OFF_TONE = 0.55   # pattern "off" pixels keep the fill, darkened
WALL_RGB = (72, 72, 78)
CORRIDOR_RGB = (150, 150, 150)

_SUPERSAMPLE = 8


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class RenderConfig:
    size: int = 84            # output height and width in pixels
    window: int = 9           # view window in cells (window x window)

    @property
    def cell_edges(self):
        return [self.size * i // self.window for i in range(self.window + 1)]


DEFAULT_CONFIG = RenderConfig()


@dataclass(frozen=True)
class Observation:
    pixels: np.ndarray        # float32 [3, H, W] in [0, 1]
    raw: np.ndarray = field(compare=False, default=None)   # uint8 [3, H, W]


def pattern_texture(pattern: str, cell_px) -> np.ndarray:
    """Binary overlay mask for one of the nine pattern names, computed at
    cell resolution (h, w) or square cell_px."""
    if isinstance(cell_px, int):
        h = w = cell_px
    else:
        h, w = cell_px
    if min(h, w) < 8:
        raise RenderError("pattern masks need cell_px >= 8")
    yy, xx = np.mgrid[0:h, 0:w]
    if pattern == "plain":
        return np.ones((h, w), dtype=bool)
    if pattern == "chequered":
        return ((yy // 2) + (xx // 2)) % 2 == 0
    if pattern == "crosses":
        return ((yy % 5 == 2) & (xx % 5 != 0)) | ((xx % 5 == 2) & (yy % 5 != 0))
    if pattern == "stripes":
        return (xx % 6) < 3
    if pattern == "discs":
        return ((yy % 6) - 2.5) ** 2 + ((xx % 6) - 2.5) ** 2 <= 3.5
    if pattern == "hex":
        row = yy // 3
        return (xx + 2 * (row % 2)) % 4 < 2
    if pattern == "pinstripe":
        return (xx % 3) == 0
    if pattern == "spots":
        return ((yy % 3) == 1) & ((xx % 3) == 1)
    if pattern == "swirls":
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        r = np.hypot(yy - cy, xx - cx)
        theta = np.arctan2(yy - cy, xx - cx)
        return np.mod(r - theta * (3.0 / np.pi), 4.0) < 2.0
    raise RenderError(f"unknown pattern {pattern!r}")


def scale_stencil(mask: np.ndarray, g: int) -> np.ndarray:
    """Area-resample a boolean stencil to g x g, then binarise at half
    coverage."""
    n = mask.shape[0]
    s = _SUPERSAMPLE
    pts = (np.arange(g * s) + 0.5) * n / (g * s)
    idx = np.minimum(pts.astype(int), n - 1)
    big = mask[np.ix_(idx, idx)].astype(np.float32)
    cov = big.reshape(g, s, g, s).mean(axis=(1, 3))
    return cov >= 0.5


def shaded_fill(colour: str, shade: str, pattern: str = "plain"):
    base = np.array(PALETTE[colour], dtype=np.float64)
    scale = SHADE_MULT[shade] * PATTERN_TINT[pattern]
    fill = np.rint(base * scale).astype(np.uint8)
    off = np.rint(base * scale * PATTERN_OFF_TONE).astype(np.uint8)
    return fill, off


def floor_rgb(colour: str) -> np.ndarray:
    base = np.array(PALETTE[colour], dtype=np.float64)
    return np.rint(base * FLOOR_DIM).astype(np.uint8)


class TileCache:
    """Lazily composed (factors, cell size, floor) -> uint8 tile cache."""

    def __init__(self):
        self._tiles = {}
        self._glyphs = {}

    def glyph(self, shape: str, size: str, h: int, w: int):
        key = (shape, size, h, w)
        got = self._glyphs.get(key)
        if got is None:
            g = max(5, int(round(SIZE_FRAC[size] * min(h, w))))
            got = scale_stencil(STENCILS[shape], g)
            self._glyphs[key] = got
        return got

    def object_tile(self, factors, floor, h: int, w: int) -> np.ndarray:
        key = (factors, floor, h, w)
        tile = self._tiles.get(key)
        if tile is not None:
            return tile
        tile = np.empty((h, w, 3), dtype=np.uint8)
        tile[:] = _floor_tile_rgb(floor)
        glyph = self.glyph(factors.shape, factors.size, h, w)
        g = glyph.shape[0]
        r0 = (h - g) // 2
        c0 = (w - g) // 2
        fill, off = shaded_fill(factors.colour, factors.shade, factors.pattern)
        mask = pattern_texture(factors.pattern, (h, w))[r0:r0 + g, c0:c0 + g]
        block = tile[r0:r0 + g, c0:c0 + g]
        block[glyph & mask] = fill
        block[glyph & ~mask] = off
        self._tiles[key] = tile
        return tile


def _floor_tile_rgb(floor):
    if floor == "wall":
        return np.array(WALL_RGB, dtype=np.uint8)
    if floor == "corridor":
        return np.array(CORRIDOR_RGB, dtype=np.uint8)
    return floor_rgb(floor)


_CACHE = TileCache()


def render_raw(state: SimState, episode: EpisodeSpec,
               cfg: RenderConfig = DEFAULT_CONFIG) -> np.ndarray:
    """uint8 [3, size, size] egocentric frame."""
    win = cfg.window
    edges = cfg.cell_edges
    img = np.empty((cfg.size, cfg.size, 3), dtype=np.uint8)

    fwd = FORWARD[state.facing]
    right = FORWARD[(state.facing + 1) % 4]
    ar, ac = state.agent_cell
    layout = episode.layout
    walkable = layout.walkable
    by_cell = {o.cell: o for o in state.remaining_objects}
    half = win // 2

    for wr in range(win):
        ahead = (win - 1) - wr
        for wc in range(win):
            side = wc - half
            cell = (ar + fwd[0] * ahead + right[0] * side,
                    ac + fwd[1] * ahead + right[1] * side)
            h = edges[wr + 1] - edges[wr]
            w = edges[wc + 1] - edges[wc]
            if cell not in walkable:
                floor = "wall"
            else:
                idx = layout.room_index_of(cell)
                floor = "corridor" if idx is None else layout.rooms[idx].floor_colour
            obj = by_cell.get(cell)
            if obj is None:
                img[edges[wr]:edges[wr + 1], edges[wc]:edges[wc + 1]] = (
                    _floor_tile_rgb(floor))
            else:
                img[edges[wr]:edges[wr + 1], edges[wc]:edges[wc + 1]] = (
                    _CACHE.object_tile(obj.factors, floor, h, w))
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def render(state: SimState, episode: EpisodeSpec,
           cfg: RenderConfig = DEFAULT_CONFIG) -> Observation:
    raw = render_raw(state, episode, cfg)
    return Observation(pixels=raw.astype(np.float32) / 255.0, raw=raw)


def obs_from_raw(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / 255.0


def dump_frame(raw: np.ndarray, path):
    """Raw 8-bit RGB dump: row-major, channel-interleaved."""
    raw.transpose(1, 2, 0).tofile(path)
