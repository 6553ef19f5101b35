import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aegis.detect import BoundingBox
from aegis.errors import ConfigError
from aegis.media import read_pam, read_pnm
from aegis.overlay import (GAP, OverlayConfig, alpha_blend, format_label, load_sprites,
                           place_emoji, place_text, render_text, scale_sprite)
from aegis.pipeline import default_sprite_map
from aegis.window import Frame
from conftest import DATA

OVERLAY = DATA / "overlay"
SPRITES = load_sprites(default_sprite_map())


def frame_of(pixels):
    return Frame(0, 0, pixels.copy())


def rgba(h, w, rgb, a):
    s = np.zeros((h, w, 4), np.uint8)
    s[..., :3] = rgb
    s[..., 3] = a
    return s


# ---------------------------------------------------------------------------
# blending


def test_blend_exact_integer_value():
    bg = np.full((1, 1, 3), 100, np.uint8)
    alpha_blend(bg, rgba(1, 1, 200, 128), (0, 0))
    assert bg.tolist() == [[[150, 150, 150]]]
    assert (128 * 200 + 127 * 100 + 127) // 255 == 150


def test_blend_transparent_and_opaque():
    bg = np.random.default_rng(1).integers(0, 256, (10, 12, 3)).astype(np.uint8)
    before = bg.copy()
    alpha_blend(bg, rgba(5, 5, 77, 0), (2, 3))
    np.testing.assert_array_equal(bg, before)
    sprite = np.random.default_rng(2).integers(0, 256, (5, 6, 4)).astype(np.uint8)
    sprite[..., 3] = 255
    alpha_blend(bg, sprite, (4, 2))
    np.testing.assert_array_equal(bg[2:7, 4:10], sprite[..., :3])
    keep = np.ones(bg.shape[:2], bool)
    keep[2:7, 4:10] = False
    np.testing.assert_array_equal(bg[keep], before[keep])


def test_blend_clips_partially_offscreen():
    bg = np.zeros((6, 6, 3), np.uint8)
    alpha_blend(bg, rgba(4, 4, 255, 255), (-2, 4))
    assert bg[4:6, 0:2].min() == 255
    assert bg.sum() == 255 * 3 * 4
    alpha_blend(bg, rgba(4, 4, 9, 255), (10, 10))  # fully off-frame: no-op
    assert bg.sum() == 255 * 3 * 4


# ---------------------------------------------------------------------------
# emoji


def test_emoji_box_at_frame_top_clamps_to_zero():
    f = frame_of(np.zeros((60, 60, 3), np.uint8))
    box = BoundingBox(20, 2, 16, 16)
    place_emoji(f, box, "happiness", {"happiness": rgba(16, 16, 90, 255)})
    rows = np.flatnonzero(f.pixels.any(axis=(1, 2)))
    assert rows.tolist() == list(range(16))


def test_emoji_scaled_to_box_width():
    sprite = rgba(16, 16, 200, 255)
    assert scale_sprite(sprite, 48).shape == (48, 48, 4)
    assert scale_sprite(read_pam(default_sprite_map()["fear"]), 24).shape == (24, 24, 4)
    f = frame_of(np.zeros((140, 100, 3), np.uint8))
    place_emoji(f, BoundingBox(26, 80, 48, 48), "anger", {"anger": sprite})
    ys, xs = np.nonzero(f.pixels.any(axis=2))
    assert (ys.min(), ys.max(), xs.min(), xs.max()) == (80 - 48 - GAP, 80 - GAP - 1, 26, 73)


def test_emoji_preserves_aspect():
    wide = rgba(8, 16, 255, 255)
    assert scale_sprite(wide, 32).shape == (16, 32, 4)


def test_missing_sprite_is_config_error():
    f = frame_of(np.zeros((20, 20, 3), np.uint8))
    with pytest.raises(ConfigError):
        place_emoji(f, BoundingBox(5, 10, 8, 8), "fear", {"anger": rgba(2, 2, 0, 255)})
    with pytest.raises(ConfigError):
        OverlayConfig("emoji", {"anger": "a.pam"})
    with pytest.raises(ConfigError):
        OverlayConfig("outline", {})


def test_emoji_golden_image():
    f = frame_of(read_pnm(OVERLAY / "base.ppm"))
    place_emoji(f, BoundingBox(60, 50, 16, 16), "happiness", SPRITES)
    np.testing.assert_array_equal(f.pixels, read_pnm(OVERLAY / "emoji_golden.ppm"))


# ---------------------------------------------------------------------------
# text


@pytest.mark.parametrize("conf,suffix", [(1.0, "100%"), (0.666, "67%"), (0.0, "0%"),
                                         (0.125, "13%"), (0.994, "99%"), (0.995, "100%")])
def test_label_percent_rounding(conf, suffix):
    assert format_label("surprise", conf) == f"SURPRISE {suffix}"


def test_render_text_geometry():
    ink = render_text("A1%")
    assert ink.shape == (14, 2 * (3 * 5 + 2))
    with pytest.raises(ConfigError):
        render_text("a")


def test_text_golden_image():
    f = frame_of(read_pnm(OVERLAY / "base.ppm"))
    place_text(f, BoundingBox(60, 50, 30, 20), "surprise", 0.666)
    np.testing.assert_array_equal(f.pixels, read_pnm(OVERLAY / "text_golden.ppm"))


# ---------------------------------------------------------------------------
# properties


def touched_region(shape, x, y, w, h):
    m = np.zeros(shape[:2], bool)
    m[max(y, 0):max(y + h, 0), max(x, 0):max(x + w, 0)] = True
    return m


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), fw=st.integers(8, 64), fh=st.integers(8, 64),
       bx=st.integers(-10, 70), by=st.integers(-10, 70), bw=st.integers(1, 40),
       bh=st.integers(1, 40), sw=st.integers(1, 20), sh=st.integers(1, 20),
       text=st.booleans(), conf=st.floats(0, 1))
def test_augmentation_stays_in_bounds(seed, fw, fh, bx, by, bw, bh, sw, sh, text, conf):
    r = np.random.default_rng(seed)
    base = r.integers(0, 256, (fh, fw, 3)).astype(np.uint8)
    f = frame_of(base)
    box = BoundingBox(bx, by, bw, bh)
    if text:
        place_text(f, box, "anger", conf)
        ink = render_text(format_label("anger", conf))
        w, h = ink.shape[1] + 4, ink.shape[0] + 4
    else:
        sprite = r.integers(0, 256, (sh, sw, 4)).astype(np.uint8)
        place_emoji(f, box, "anger", {"anger": sprite})
        h, w = scale_sprite(sprite, bw).shape[:2]
    assert f.pixels.shape == base.shape
    x = min(max(bx + (bw - w) // 2, 0), max(fw - w, 0))
    y = max(0, by - h - GAP)
    outside = ~touched_region(base.shape, x, y, w, h)
    np.testing.assert_array_equal(f.pixels[outside], base[outside])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), bx=st.integers(0, 40), by=st.integers(0, 40),
       bw=st.integers(1, 30))
def test_transparent_sprite_is_bitwise_noop_and_render_is_deterministic(seed, bx, by, bw):
    r = np.random.default_rng(seed)
    base = r.integers(0, 256, (48, 48, 3)).astype(np.uint8)
    f = frame_of(base)
    place_emoji(f, BoundingBox(bx, by, bw, 10), "fear", {"fear": rgba(9, 7, 255, 0)})
    assert f.pixels.tobytes() == base.tobytes()
    a, b = frame_of(base), frame_of(base)
    for fr in (a, b):
        place_emoji(fr, BoundingBox(bx, by, bw, 10), "fear", SPRITES)
    assert a.pixels.tobytes() == b.pixels.tobytes()
