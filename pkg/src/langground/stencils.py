"""Built-in 16x16 monochrome stencils, one per shape name.

Stencils only need to be mutually discriminable at every rendered glyph
size (5 to 10 pixels after area resampling); artistic fidelity is not a
goal.  Each builder paints onto a 16x16 boolean canvas with the small
primitives below.
"""

from __future__ import annotations

import numpy as np

N = 16


def _canvas():
    return np.zeros((N, N), dtype=bool)


def _rect(m, r0, c0, r1, c1, on=True):
    m[max(r0, 0):min(r1, N), max(c0, 0):min(c1, N)] = on


def _disc(m, cy, cx, r, on=True):
    yy, xx = np.mgrid[0:N, 0:N]
    m[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = on


def _ellipse(m, cy, cx, ry, rx, on=True):
    yy, xx = np.mgrid[0:N, 0:N]
    m[((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0] = on


def _line(m, r0, c0, r1, c1, width=1):
    steps = max(abs(r1 - r0), abs(c1 - c0)) + 1
    for t in np.linspace(0.0, 1.0, steps * 2):
        r = int(round(r0 + (r1 - r0) * t))
        c = int(round(c0 + (c1 - c0) * t))
        _rect(m, r, c, r + width, c + width)


def _tv(m):
    _rect(m, 3, 1, 13, 15)
    _rect(m, 5, 3, 11, 13, on=False)
    _line(m, 0, 5, 3, 3)
    _line(m, 0, 11, 3, 13)
    _rect(m, 13, 3, 16, 5)
    _rect(m, 13, 11, 16, 13)


def _ball(m):
    _disc(m, 8, 8, 7)


def _balloon(m):
    _disc(m, 5, 8, 5)
    _line(m, 10, 8, 15, 7)


def _cake(m):
    _rect(m, 9, 1, 15, 15)
    _rect(m, 6, 3, 9, 13)
    for c in (4, 7, 10):
        _rect(m, 2, c, 6, c + 1)


def _can(m):
    _rect(m, 1, 5, 15, 11)
    _rect(m, 0, 4, 2, 12)
    _rect(m, 14, 4, 16, 12)


def _cassette(m):
    _rect(m, 4, 0, 12, 16)
    _rect(m, 6, 3, 9, 6, on=False)
    _rect(m, 6, 10, 9, 13, on=False)


def _chair(m):
    _rect(m, 0, 2, 10, 5)
    _rect(m, 8, 2, 11, 13)
    _rect(m, 11, 2, 16, 4)
    _rect(m, 11, 11, 16, 13)


def _guitar(m):
    _disc(m, 11, 6, 4)
    _disc(m, 6, 8, 3)
    _line(m, 0, 13, 5, 9, width=2)


def _hairbrush(m):
    _rect(m, 1, 2, 7, 12)
    for c in (3, 6, 9):
        _rect(m, 0, c, 1, c + 1)
    _line(m, 7, 7, 15, 12, width=2)


def _hat(m):
    _rect(m, 2, 5, 11, 11)
    _rect(m, 11, 0, 14, 16)


def _ice_lolly(m):
    _ellipse(m, 5, 8, 5, 4)
    _rect(m, 2, 4, 9, 13)
    _rect(m, 9, 7, 16, 9)


def _ladder(m):
    _rect(m, 0, 3, 16, 5)
    _rect(m, 0, 11, 16, 13)
    for r in (2, 6, 10, 14):
        _rect(m, r, 5, r + 1, 11)


def _mug(m):
    _rect(m, 3, 1, 14, 10)
    _rect(m, 5, 10, 7, 14)
    _rect(m, 9, 10, 11, 14)
    _rect(m, 5, 12, 9, 14)


def _pencil(m):
    _line(m, 1, 13, 11, 3, width=3)
    _line(m, 12, 3, 15, 1, width=1)


def _suitcase(m):
    _rect(m, 5, 1, 15, 15)
    _rect(m, 2, 5, 5, 11)
    _rect(m, 3, 7, 5, 9, on=False)


def _toothbrush(m):
    _rect(m, 1, 2, 6, 5)
    for r in (1, 3):
        _rect(m, r, 0, r + 1, 2)
    _line(m, 6, 3, 15, 12, width=2)


def _key(m):
    _disc(m, 4, 8, 3)
    _disc(m, 4, 8, 1, on=False)
    _rect(m, 7, 7, 16, 9)
    _rect(m, 12, 9, 13, 12)
    _rect(m, 14, 9, 15, 11)


def _bottle(m):
    _rect(m, 0, 7, 4, 9)
    _rect(m, 4, 5, 16, 11)


def _car(m):
    _rect(m, 7, 0, 12, 16)
    _rect(m, 3, 4, 7, 12)
    _disc(m, 12, 4, 2)
    _disc(m, 12, 12, 2)


def _cherries(m):
    _disc(m, 11, 4, 3)
    _disc(m, 12, 12, 3)
    _line(m, 0, 8, 8, 3)
    _line(m, 0, 8, 9, 12)


def _fork(m):
    for c in (4, 7, 10):
        _rect(m, 0, c, 6, c + 2)
    _rect(m, 5, 4, 7, 12)
    _rect(m, 7, 7, 16, 9)


def _fridge(m):
    _rect(m, 0, 3, 16, 13)
    _rect(m, 5, 4, 6, 12, on=False)
    _rect(m, 2, 10, 4, 11, on=False)
    _rect(m, 8, 10, 12, 11, on=False)


def _hammer(m):
    _rect(m, 1, 1, 11, 6)
    _rect(m, 5, 6, 8, 16)


def _knife(m):
    _ellipse(m, 5, 5, 5, 5)
    _rect(m, 0, 5, 11, 10)
    _line(m, 11, 9, 15, 13, width=2)


def _spoon(m):
    _ellipse(m, 4, 8, 4, 3)
    _rect(m, 8, 7, 16, 9)


def _apple(m):
    _disc(m, 9, 5, 4)
    _disc(m, 9, 10, 4)
    _rect(m, 1, 7, 5, 9)


def _banana(m):
    _disc(m, 4, 6, 9)
    _disc(m, 1, 4, 8, on=False)


def _cow(m):
    _rect(m, 5, 2, 11, 14)
    _rect(m, 1, 11, 7, 15)
    _rect(m, 0, 10, 2, 12)
    _rect(m, 0, 14, 2, 16)
    for c in (3, 12):
        _rect(m, 11, c, 16, c + 2)


def _flower(m):
    _disc(m, 3, 4, 2)
    _disc(m, 3, 12, 2)
    _disc(m, 9, 4, 2)
    _disc(m, 9, 12, 2)
    _disc(m, 6, 8, 3)
    _rect(m, 9, 7, 16, 9)


def _jug(m):
    _rect(m, 4, 2, 15, 11)
    _rect(m, 1, 2, 4, 6)
    _rect(m, 6, 11, 8, 15)
    _rect(m, 10, 11, 12, 15)
    _rect(m, 6, 13, 12, 15)


def _pig(m):
    _ellipse(m, 9, 8, 5, 7)
    _rect(m, 7, 13, 11, 16)
    _rect(m, 3, 2, 6, 4)
    _rect(m, 3, 8, 6, 10)
    for c in (4, 11):
        _rect(m, 13, c, 16, c + 2)


def _pincer(m):
    _disc(m, 6, 8, 7)
    _disc(m, 5, 8, 5, on=False)
    _rect(m, 0, 6, 6, 10, on=False)
    _rect(m, 10, 5, 16, 7)
    _rect(m, 10, 9, 16, 11)


def _plant(m):
    _rect(m, 11, 4, 16, 12)
    _rect(m, 8, 7, 11, 9)
    _line(m, 1, 2, 8, 7, width=2)
    _line(m, 1, 13, 8, 8, width=2)
    _rect(m, 0, 7, 4, 9)


def _saxophone(m):
    _rect(m, 0, 10, 10, 13)
    _disc(m, 11, 7, 5)
    _disc(m, 10, 6, 3, on=False)
    _rect(m, 3, 13, 5, 16)


def _shoe(m):
    _rect(m, 2, 1, 12, 6)
    _rect(m, 8, 1, 14, 15)
    _rect(m, 6, 11, 8, 15)


def _tennis_racket(m):
    _ellipse(m, 5, 8, 5, 5)
    _ellipse(m, 5, 8, 3, 3, on=False)
    _rect(m, 10, 7, 16, 9)


def _tomato(m):
    _ellipse(m, 9, 8, 6, 7)
    _rect(m, 1, 7, 4, 9)
    _rect(m, 2, 4, 4, 12)


def _tree(m):
    for i, half in enumerate((3, 5, 7)):
        r = 1 + i * 4
        _rect(m, r, 8 - half, r + 4, 8 + half)
    _rect(m, 12, 7, 16, 9)


def _wine_glass(m):
    _rect(m, 0, 3, 2, 13)
    _rect(m, 2, 4, 5, 12)
    _rect(m, 5, 6, 7, 10)
    _rect(m, 7, 7, 13, 9)
    _rect(m, 13, 3, 15, 13)


def _zebra(m):
    _rect(m, 6, 1, 11, 13)
    _rect(m, 1, 11, 7, 14)
    _rect(m, 0, 13, 3, 16)
    for c in (2, 6, 10):
        _rect(m, 11, c, 15, c + 2)
    for c in (3, 6, 9):
        _rect(m, 6, c, 11, c + 1, on=False)


_BUILDERS = {
    "tv": _tv, "ball": _ball, "balloon": _balloon, "cake": _cake,
    "can": _can, "cassette": _cassette, "chair": _chair, "guitar": _guitar,
    "hairbrush": _hairbrush, "hat": _hat, "ice_lolly": _ice_lolly,
    "ladder": _ladder, "mug": _mug, "pencil": _pencil,
    "suitcase": _suitcase, "toothbrush": _toothbrush, "key": _key,
    "bottle": _bottle, "car": _car, "cherries": _cherries, "fork": _fork,
    "fridge": _fridge, "hammer": _hammer, "knife": _knife, "spoon": _spoon,
    "apple": _apple, "banana": _banana, "cow": _cow, "flower": _flower,
    "jug": _jug, "pig": _pig, "pincer": _pincer, "plant": _plant,
    "saxophone": _saxophone, "shoe": _shoe, "tennis_racket": _tennis_racket,
    "tomato": _tomato, "tree": _tree, "wine_glass": _wine_glass,
    "zebra": _zebra,
}


def build_stencils() -> dict:
    out = {}
    for name, builder in _BUILDERS.items():
        m = _canvas()
        builder(m)
        out[name] = m
    return out


STENCILS = build_stencils()
