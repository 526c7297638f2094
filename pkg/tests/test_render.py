from itertools import combinations

import numpy as np
import pytest

from langground import render as rmod
from langground import world
from langground.factors import (COLOURS, PATTERNS, SHADES, SHAPES, SIZES,
                                ObjectFactors)
from langground.render import (PALETTE, RenderConfig, TileCache,
                               pattern_texture, render, render_raw,
                               scale_stencil, shaded_fill)
from langground.stencils import STENCILS


def test_stencil_inventory_complete():
    assert set(STENCILS) == set(SHAPES)
    for name, mask in STENCILS.items():
        assert mask.shape == (16, 16)
        assert mask.dtype == bool
        assert 0 < mask.sum() < 256, name


def test_pattern_plain_all_ones():
    assert pattern_texture("plain", 16).all()


def test_pattern_unknown_rejected():
    with pytest.raises(rmod.RenderError):
        pattern_texture("paisley", 16)


def test_pattern_small_cells_rejected():
    with pytest.raises(rmod.RenderError):
        pattern_texture("plain", 7)


def test_stripes_vs_pinstripe_periods_differ():
    stripes = pattern_texture("stripes", 16)
    pinstripe = pattern_texture("pinstripe", 16)
    assert not np.array_equal(stripes, pinstripe)
    # period along x: stripes 6, pinstripe 3
    assert np.array_equal(stripes[:, :6], stripes[:, 6:12])
    assert np.array_equal(pinstripe[:, :3], pinstripe[:, 3:6])
    assert not np.array_equal(stripes[:, :3], stripes[:, 3:6])


def test_all_pattern_masks_pairwise_distinct_16():
    masks = {p: pattern_texture(p, 16) for p in PATTERNS}
    for a, b in combinations(PATTERNS, 2):
        frac = (masks[a] ^ masks[b]).mean()
        assert frac >= 0.05, (a, b, frac)


@pytest.mark.parametrize("size", [(9, 9), (9, 10), (10, 9), (10, 10)])
def test_pattern_masks_distinct_at_cell_sizes(size):
    masks = {p: pattern_texture(p, size) for p in PATTERNS}
    for a, b in combinations(PATTERNS, 2):
        assert (masks[a] ^ masks[b]).mean() >= 0.05, (a, b)


def test_scale_stencil_sizes():
    for g in (5, 7, 8, 9, 10):
        scaled = scale_stencil(STENCILS["ball"], g)
        assert scaled.shape == (g, g)
        assert scaled.any()


def test_stencils_pairwise_distinct_at_all_glyph_sizes():
    for g in (5, 7, 8, 9, 10):
        scaled = {n: scale_stencil(m, g) for n, m in STENCILS.items()}
        for a, b in combinations(SHAPES, 2):
            assert not np.array_equal(scaled[a], scaled[b]), (g, a, b)


def test_shade_luminance_strictly_ordered():
    # light > neutral > dark per pixel, for every colour and pattern
    for colour in COLOURS:
        for pattern in PATTERNS:
            fills = {s: shaded_fill(colour, s, pattern) for s in SHADES}
            for part in (0, 1):   # fill tone and pattern-off tone
                light = fills["light"][part].astype(int).mean()
                neutral = fills["neutral"][part].astype(int).mean()
                dark = fills["dark"][part].astype(int).mean()
                assert light > neutral > dark, (colour, pattern)


def test_no_saturation_for_light_shade():
    for colour in COLOURS:
        fill, _ = shaded_fill(colour, "light")
        assert fill.max() < 255


def test_observation_shape_and_range():
    task = world.TaskTemplate(name="t", family="Unigram")
    ep = world.sample_episode(task, None, 0)
    obs = render(world.initial_state(ep), ep)
    assert obs.pixels.shape == (3, 84, 84)
    assert obs.pixels.dtype == np.float32
    assert obs.pixels.min() >= 0.0 and obs.pixels.max() <= 1.0
    assert obs.raw.dtype == np.uint8


def test_render_pure_byte_identical():
    task = world.TaskTemplate(name="t", family="Referring", object_count=3)
    ep = world.sample_episode(task, None, 5)
    state = world.initial_state(ep)
    a = render_raw(state, ep)
    b = render_raw(state, ep)
    assert np.array_equal(a, b)


def test_render_deterministic_across_cache_state():
    task = world.TaskTemplate(name="t", family="Referring", object_count=3)
    ep = world.sample_episode(task, None, 6)
    state = world.initial_state(ep)
    a = render_raw(state, ep).copy()
    rmod._CACHE.__init__()   # cold cache
    b = render_raw(state, ep)
    assert np.array_equal(a, b)


def _factors(**kw):
    base = dict(shape="ball", colour="blue", pattern="plain",
                shade="neutral", size="large")
    base.update(kw)
    return ObjectFactors(**base)


def _centered_scene(objects_factors):
    """Hand-built single-room episode, agent at room centre facing north,
    objects straight ahead."""
    task = world.TaskTemplate(name="t", family="Referring")
    rng = np.random.Generator(np.random.PCG64(0))
    layout = world.generate_layout(rng, task)
    cells = [(3, 5), (2, 4), (4, 7)]
    objs = tuple(world.PlacedObject(f, cells[i], room_index=0)
                 for i, f in enumerate(objects_factors))
    vocab = world.task_vocabulary(task)
    from langground.grammar import instantiate, parse_template
    instr = instantiate(parse_template("pick the <SHAPE>", "Referring"),
                        {"SHAPE": "ball"}, vocab, 10)
    ep = world.EpisodeSpec(layout=layout, objects=objs, instruction=instr,
                           agent_spawn=((5, 5), 0), target_indices=(0,))
    return ep, world.SimState(agent_cell=(5, 5), facing=0,
                              remaining_objects=objs)


def test_egocentric_rotation_equivariance():
    # rotate the world contents around a centred agent and the facing with
    # it: the rendered frame is unchanged
    f = [_factors(), _factors(colour="red", shape="chair")]
    ep, state = _centered_scene(f[:2])

    def rot(cell):   # 90 deg clockwise about the room centre (5, 5)
        r, c = cell
        return (5 + (c - 5), 5 - (r - 5))

    rotated_objs = tuple(world.PlacedObject(o.factors, rot(o.cell),
                                            room_index=0)
                         for o in ep.objects)
    ep_rot = world.EpisodeSpec(layout=ep.layout, objects=rotated_objs,
                               instruction=ep.instruction,
                               agent_spawn=((5, 5), 1),
                               target_indices=(0,))
    state_rot = world.SimState(agent_cell=(5, 5), facing=1,
                               remaining_objects=rotated_objs)
    assert np.array_equal(render_raw(state, ep), render_raw(state_rot, ep_rot))


def test_objects_behind_agent_not_rendered():
    f = _factors(colour="magenta")
    ep, state = _centered_scene([f])
    ahead = render_raw(state, ep)
    # move the object behind the agent (row 8 > agent row 5, facing north)
    behind = tuple([world.PlacedObject(f, (8, 5), room_index=0)])
    ep2 = world.EpisodeSpec(layout=ep.layout, objects=behind,
                            instruction=ep.instruction,
                            agent_spawn=ep.agent_spawn, target_indices=(0,))
    st2 = world.SimState(agent_cell=(5, 5), facing=0,
                         remaining_objects=behind)
    frame2 = render_raw(st2, ep2)
    empty_ep = world.EpisodeSpec(layout=ep.layout, objects=(),
                                 instruction=ep.instruction,
                                 agent_spawn=ep.agent_spawn,
                                 target_indices=())
    st3 = world.SimState(agent_cell=(5, 5), facing=0, remaining_objects=())
    frame3 = render_raw(st3, empty_ep)
    assert not np.array_equal(ahead, frame2)
    assert np.array_equal(frame2, frame3)


def test_window_clamped_and_padded_with_wall():
    # agent in a corner: out-of-grid cells painted with the wall colour
    f = _factors()
    ep, _ = _centered_scene([f])
    state = world.SimState(agent_cell=(1, 1), facing=3,   # facing west
                           remaining_objects=ep.objects)
    frame = render_raw(state, ep)
    wall = np.array(rmod.WALL_RGB, dtype=np.uint8)
    # the top half of the window is outside the grid
    assert np.array_equal(frame[:, 0, 0], wall)


def test_one_factor_pairs_render_differently_sampled():
    # spot-check: pairs differing in exactly one factor give different tiles
    cache = TileCache()
    rng = np.random.Generator(np.random.PCG64(7))
    pools = {"shape": SHAPES, "colour": COLOURS, "pattern": PATTERNS,
             "shade": SHADES, "size": SIZES}
    for factor, pool in pools.items():
        for _ in range(12):
            base = _factors(shape=SHAPES[rng.integers(40)],
                            colour=COLOURS[rng.integers(13)],
                            pattern=PATTERNS[rng.integers(9)],
                            shade=SHADES[rng.integers(3)],
                            size=SIZES[rng.integers(3)])
            alt_value = pool[rng.integers(len(pool))]
            if alt_value == getattr(base, factor):
                continue
            other = ObjectFactors(**{**base.__dict__, factor: alt_value})
            t1 = cache.object_tile(base, "green", 9, 10)
            t2 = cache.object_tile(other, "green", 9, 10)
            assert not np.array_equal(t1, t2), (base, other)


def test_frame_dump_roundtrip(tmp_path):
    task = world.TaskTemplate(name="t", family="Unigram")
    ep = world.sample_episode(task, None, 0)
    raw = render_raw(world.initial_state(ep), ep)
    path = tmp_path / "frame.rgb"
    rmod.dump_frame(raw, path)
    data = np.fromfile(path, dtype=np.uint8).reshape(84, 84, 3)
    assert np.array_equal(data.transpose(2, 0, 1), raw)


def test_render_config_cell_edges():
    cfg = RenderConfig()
    edges = cfg.cell_edges
    assert edges[0] == 0 and edges[-1] == 84
    widths = np.diff(edges)
    assert widths.sum() == 84
    assert set(widths) <= {9, 10}
