"""Procedural toy video datasets and the ``MGPD`` file format.

``BouncingGlyphs`` is a small moving-digit analogue: a 5x5 glyph drifting in
one of eight compass directions and bouncing off the frame edges.
``ColouredShapes`` is a multi-factor analogue with shape, colour, scale
notching, rotation notching and axis-aligned motion.

Every sequence is drawn from its own RNG stream seeded by
``(seed, sequence index)``, and its labels hold everything needed to
re-render it exactly.
"""
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BadMagic, ConfigError, EmptyDataset, GlyphTooLarge, TruncatedFile, VersionMismatch

BOUNCING_GLYPHS = "BouncingGlyphs"
COLOURED_SHAPES = "ColouredShapes"

GLYPHS = np.array(
    [
        ["..#..", "..#..", "#####", "..#..", "..#.."],  # plus
        ["#...#", ".#.#.", "..#..", ".#.#.", "#...#"],  # cross
        ["#####", "#...#", "#...#", "#...#", "#####"],  # ring
        ["#....", "#....", "#....", "#....", "#####"],  # corner
    ]
)
GLYPH_BITMAPS = (np.array([[list(row) for row in g] for g in GLYPHS]) == "#")

# E, NE, N, NW, W, SW, S, SE with image rows growing downwards
DIRECTIONS = ((1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1))
SPEEDS = (1, 2)

SHAPES = ("square", "disc", "triangle")
COLOURS = ("red", "green", "blue")
SCALE_NOTCHES = 4
ROTATION_NOTCHES = 16


@dataclass
class ToyVideoSpec:
    family: str = BOUNCING_GLYPHS
    num_sequences: int = 2000
    n_frames: int = 8
    height: int = 16
    width: int = 16
    seed: int = 0

    @property
    def channels(self):
        return 1 if self.family == BOUNCING_GLYPHS else 3

    def __post_init__(self):
        if self.family not in (BOUNCING_GLYPHS, COLOURED_SHAPES):
            raise ConfigError(f"unknown dataset family {self.family!r}")
        if self.num_sequences < 0 or self.n_frames < 1:
            raise ConfigError("num_sequences must be >= 0 and n_frames >= 1")


@dataclass
class VideoBatch:
    """Sequences of frames, ``pixels`` shaped (N, n_frames, C, H, W) in [-1, 1]."""

    pixels: np.ndarray
    labels: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 5:
            raise ConfigError(f"pixels must be 5-d (N, n, C, H, W), got {self.pixels.shape}")

    def __len__(self):
        return self.pixels.shape[0]

    @property
    def n_frames(self):
        return self.pixels.shape[1]

    @property
    def frame_shape(self):
        return self.pixels.shape[2:]

    def subset(self, index):
        index = np.arange(len(self))[index]
        labels = [self.labels[i] for i in index] if self.labels else []
        return VideoBatch(self.pixels[index], labels, dict(self.meta))


def split(batch, test_fraction=0.1):
    """Deterministic head/tail split into (train, test)."""
    n_test = int(round(len(batch) * test_fraction))
    cut = len(batch) - n_test
    return batch.subset(slice(0, cut)), batch.subset(slice(cut, None))


# ---------------------------------------------------------------------------
# BouncingGlyphs


def _bounce(pos, vel, hi):
    """One step inside ``[0, hi]``; a step that would leave the range is taken
    with the velocity reversed, so the object always moves by ``|vel|``."""
    if not 0 <= pos + vel <= hi:
        vel = -vel
    return pos + vel, vel


def glyph_positions(label, n_frames, height, width, glyph_size=5):
    """Top-left corners ``(x, y)`` of the glyph in every frame."""
    dx, dy = DIRECTIONS[label["direction"]]
    vx, vy = dx * label["speed"], dy * label["speed"]
    x, y = label["x0"], label["y0"]
    out = []
    for _ in range(n_frames):
        out.append((x, y))
        x, vx = _bounce(x, vx, width - glyph_size)
        y, vy = _bounce(y, vy, height - glyph_size)
    return out


def render_glyph_sequence(label, n_frames, height, width):
    size = GLYPH_BITMAPS.shape[1]
    frames = np.full((n_frames, 1, height, width), -1.0, dtype=np.float32)
    glyph = np.where(GLYPH_BITMAPS[label["glyph"]], 1.0, -1.0)
    for t, (x, y) in enumerate(glyph_positions(label, n_frames, height, width, size)):
        frames[t, 0, y:y + size, x:x + size] = glyph
    return frames


def gen_bouncing_glyphs(spec):
    size = GLYPH_BITMAPS.shape[1]
    room = 2 * max(SPEEDS) - 1
    if spec.width - size < room or spec.height - size < room:
        raise GlyphTooLarge(f"{size}x{size} glyph leaves no room to move in {spec.height}x{spec.width}")
    pixels = np.empty((spec.num_sequences, spec.n_frames, 1, spec.height, spec.width), dtype=np.float32)
    labels = []
    for i in range(spec.num_sequences):
        rng = np.random.default_rng([spec.seed, i])
        label = {
            "glyph": int(rng.integers(len(GLYPH_BITMAPS))),
            "direction": int(rng.integers(len(DIRECTIONS))),
            "speed": int(rng.choice(SPEEDS)),
            "x0": int(rng.integers(spec.width - size + 1)),
            "y0": int(rng.integers(spec.height - size + 1)),
        }
        pixels[i] = render_glyph_sequence(label, spec.n_frames, spec.height, spec.width)
        labels.append(label)
    return VideoBatch(pixels, labels, {"generator": asdict(spec)})


# ---------------------------------------------------------------------------
# ColouredShapes


def _half_extent(notch):
    return 1.5 + 0.75 * notch


def scale_sequence(start, direction, n_frames):
    """Scale notches clamped to ``1..SCALE_NOTCHES``; direction is +1 or -1."""
    notches, s = [], start
    for _ in range(n_frames):
        notches.append(s)
        s = min(max(s + direction, 1), SCALE_NOTCHES)
    return notches


def _shape_mask(shape, cx, cy, r, angle, height, width):
    ys, xs = np.mgrid[0:height, 0:width] + 0.5
    u = xs - cx
    v = ys - cy
    c, s = np.cos(angle), np.sin(angle)
    ur, vr = c * u + s * v, -s * u + c * v
    if shape == "square":
        half = r / np.sqrt(2)
        return (np.abs(ur) <= half) & (np.abs(vr) <= half)
    if shape == "disc":
        return ur * ur + vr * vr <= r * r
    inside = np.ones_like(ur, dtype=bool)
    for k in range(3):
        # half-planes of an equilateral triangle with circumradius r
        a = 2 * np.pi * k / 3 + np.pi / 2
        inside &= ur * np.cos(a) + vr * np.sin(a) <= r / 2
    return inside


def render_shape_sequence(label, n_frames, height, width):
    frames = np.full((n_frames, 3, height, width), -1.0, dtype=np.float32)
    lo = _half_extent(SCALE_NOTCHES)
    hi_x, hi_y = width - lo, height - lo
    scales = scale_sequence(label["scale0"], 1 if label["scale_dir"] == 0 else -1, n_frames)
    spin = 1 if label["rot_dir"] == 0 else -1
    pos = [label["cx0"], label["cy0"]]
    vel = label["motion_sign"]
    axis = label["axis"]
    for t in range(n_frames):
        angle = 2 * np.pi * ((label["rot0"] + spin * t) % ROTATION_NOTCHES) / ROTATION_NOTCHES
        mask = _shape_mask(SHAPES[label["shape"]], pos[0], pos[1], _half_extent(scales[t]), angle, height, width)
        frames[t, label["colour"]][mask] = 1.0
        offset = pos[axis] - lo
        offset, vel = _bounce(offset, vel, (hi_x if axis == 0 else hi_y) - lo)
        pos[axis] = offset + lo
    return frames


def gen_coloured_shapes(spec):
    lo = _half_extent(SCALE_NOTCHES)
    if spec.width < 2 * lo + 1 or spec.height < 2 * lo + 1:
        raise GlyphTooLarge(f"largest shape does not fit a {spec.height}x{spec.width} frame")
    pixels = np.empty((spec.num_sequences, spec.n_frames, 3, spec.height, spec.width), dtype=np.float32)
    labels = []
    for i in range(spec.num_sequences):
        rng = np.random.default_rng([spec.seed, i])
        label = {
            "shape": int(rng.integers(len(SHAPES))),
            "colour": int(rng.integers(len(COLOURS))),
            "scale_dir": int(rng.integers(2)),
            "rot_dir": int(rng.integers(2)),
            "axis": int(rng.integers(2)),
            "scale0": int(rng.integers(1, SCALE_NOTCHES + 1)),
            "rot0": int(rng.integers(ROTATION_NOTCHES)),
            "cx0": float(lo + rng.integers(int(spec.width - 2 * lo) + 1)),
            "cy0": float(lo + rng.integers(int(spec.height - 2 * lo) + 1)),
            "motion_sign": int(rng.choice((-1, 1))),
        }
        pixels[i] = render_shape_sequence(label, spec.n_frames, spec.height, spec.width)
        labels.append(label)
    return VideoBatch(pixels, labels, {"generator": asdict(spec)})


def generate(spec):
    if spec.family == BOUNCING_GLYPHS:
        return gen_bouncing_glyphs(spec)
    return gen_coloured_shapes(spec)


def rerender(label, meta):
    g = meta["generator"]
    render = render_glyph_sequence if g["family"] == BOUNCING_GLYPHS else render_shape_sequence
    return render(label, g["n_frames"], g["height"], g["width"])


# ---------------------------------------------------------------------------
# MGPD files:
#   b"MGPD" | u32 version | u32 N, n_frames, C, H, W | u64 payload bytes
#   | float32 pixels | u32 label-block length | label JSON

MAGIC = b"MGPD"
VERSION = 1
_HEAD = struct.Struct("<4sIIIIIIQ")


def dumps(batch):
    pixels = np.ascontiguousarray(batch.pixels, dtype="<f4")
    n, t, c, h, w = pixels.shape
    labels = json.dumps({"labels": batch.labels, "meta": batch.meta}, sort_keys=True).encode("utf-8")
    return b"".join(
        [
            _HEAD.pack(MAGIC, VERSION, n, t, c, h, w, pixels.nbytes),
            pixels.tobytes(),
            struct.pack("<I", len(labels)),
            labels,
        ]
    )


def loads(buf):
    if len(buf) < 4 and MAGIC.startswith(bytes(buf)):
        raise TruncatedFile("file ends inside the magic number")
    if buf[:4] != MAGIC:
        raise BadMagic(f"not an MGPD dataset (magic {bytes(buf[:4])!r})")
    if len(buf) < _HEAD.size:
        raise TruncatedFile("dataset header is truncated")
    _, version, n, t, c, h, w, nbytes = _HEAD.unpack_from(buf)
    if version != VERSION:
        raise VersionMismatch(f"dataset version {version}, expected {VERSION}")
    if nbytes != 4 * n * t * c * h * w:
        raise TruncatedFile(f"header declares {nbytes} payload bytes for shape {(n, t, c, h, w)}")
    pos = _HEAD.size
    if len(buf) < pos + nbytes + 4:
        raise TruncatedFile("pixel payload is truncated")
    pixels = np.frombuffer(buf, dtype="<f4", count=n * t * c * h * w, offset=pos).reshape(n, t, c, h, w)
    pos += nbytes
    (m,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if len(buf) != pos + m:
        raise TruncatedFile("label block is truncated")
    block = json.loads(bytes(buf[pos:pos + m]).decode("utf-8"))
    return VideoBatch(pixels.astype(np.float32), block["labels"], block["meta"])


def save(path, batch):
    with open(path, "wb") as fh:
        fh.write(dumps(batch))


def load(path):
    with open(path, "rb") as fh:
        batch = loads(fh.read())
    if len(batch) == 0:
        raise EmptyDataset(f"{path} holds no sequences")
    return batch
