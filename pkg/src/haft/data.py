"""Sequence ingestion, synthetic occluded-sequence generation, and
search-region crop / random-mask sampling.

All pixel data is float32 in [0, 1], HxWx3. Bounding boxes are (x, y, w, h)
in continuous edge coordinates: array pixel (i, j) covers the continuous
square [j, j+1) x [i, i+1), so its center sits at (j + 0.5, i + 0.5). A
pixel is inside a box when its center falls in [x, x+w) x [y, y+h).
"""

import math
import os
import re
from dataclasses import dataclass, field, replace

import cv2
import numpy as np


@dataclass
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError("bounding box coordinates must be finite")
        if self.w <= 0 or self.h <= 0:
            raise ValueError("bounding box must have positive width and height")

    @property
    def center(self):
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self):
        return self.w * self.h

    def as_array(self):
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)


@dataclass
class Frame:
    pixels: np.ndarray  # HxWx3 float32 in [0,1]
    index: int


@dataclass
class Sequence:
    frames: list
    boxes: list
    visibility: list = None
    name: str = "sequence"

    def __post_init__(self):
        if len(self.frames) != len(self.boxes):
            raise ValueError("frame/box count mismatch: %d frames vs %d boxes"
                             % (len(self.frames), len(self.boxes)))
        if self.visibility is not None and len(self.visibility) != len(self.frames):
            raise ValueError("visibility length mismatch")

    def __len__(self):
        return len(self.frames)


@dataclass
class SamplePatch:
    pixels: np.ndarray              # SxSx3 float32
    target_box_in_patch: BoundingBox
    crop_transform: tuple           # (scale, tx, ty): frame = patch * scale + t


@dataclass
class OcclusionMask:
    mask: np.ndarray                # SxS bool, True where pixels were overwritten
    covered_fraction: float


@dataclass
class JitterConfig:
    scale: float = 0.0   # max relative size perturbation
    shift: float = 0.0   # max center displacement, fraction of box size


@dataclass
class SynthConfig:
    length: int = 60
    image_size: int = 128
    texture_seed: int = 0
    min_target: int = 16
    max_target: int = 28
    # occluder script: list of (start_frame, end_frame, max_coverage)
    occluders: list = field(default_factory=list)


def rect_mask(shape, box):
    """Boolean mask of pixels whose centers fall inside the box."""
    h, w = shape
    y0 = max(0, int(math.ceil(box.y - 0.5)))
    y1 = min(h, int(math.ceil(box.y + box.h - 0.5)))
    x0 = max(0, int(math.ceil(box.x - 0.5)))
    x1 = min(w, int(math.ceil(box.x + box.w - 0.5)))
    m = np.zeros(shape, dtype=bool)
    if y1 > y0 and x1 > x0:
        m[y0:y1, x0:x1] = True
    return m


# ---------------------------------------------------------------------------
# sequence directory I/O
# ---------------------------------------------------------------------------

_FRAME_RE = re.compile(r"^(\d+)\.(png|jpg|jpeg)$", re.IGNORECASE)


def load_sequence(path):
    """Load a sequence directory: frames/%08d.png + groundtruth.txt
    (+ optional visibility.txt)."""
    frames_dir = os.path.join(path, "frames")
    gt_path = os.path.join(path, "groundtruth.txt")
    if not os.path.isfile(gt_path):
        raise FileNotFoundError("missing ground-truth file: %s" % gt_path)
    if not os.path.isdir(frames_dir):
        raise FileNotFoundError("missing frames directory: %s" % frames_dir)

    entries = []
    for name in os.listdir(frames_dir):
        m = _FRAME_RE.match(name)
        if m:
            entries.append((int(m.group(1)), name))
    entries.sort()

    boxes = []
    with open(gt_path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = [float(p) for p in line.replace("\t", ",").split(",")]
            if len(parts) != 4:
                raise ValueError("%s:%d: expected 'x,y,w,h'" % (gt_path, lineno))
            if parts[2] <= 0 or parts[3] <= 0:
                raise ValueError("%s:%d: non-positive box size" % (gt_path, lineno))
            boxes.append(BoundingBox(*parts))

    if len(entries) != len(boxes):
        raise ValueError("count mismatch: %d frames vs %d ground-truth lines"
                         % (len(entries), len(boxes)))

    frames = []
    for idx, (_, name) in enumerate(entries):
        img = cv2.imread(os.path.join(frames_dir, name), cv2.IMREAD_COLOR)
        if img is None:
            raise IOError("unreadable frame: %s" % name)
        rgb = cv2.cvtColor(img, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
        frames.append(Frame(rgb, idx))

    visibility = None
    vis_path = os.path.join(path, "visibility.txt")
    if os.path.isfile(vis_path):
        with open(vis_path) as fh:
            visibility = [float(line) for line in fh if line.strip()]

    return Sequence(frames, boxes, visibility, name=os.path.basename(os.path.normpath(path)))


def save_sequence(seq, path):
    """Write a sequence in the directory layout load_sequence expects."""
    frames_dir = os.path.join(path, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    for frame in seq.frames:
        img = cv2.cvtColor((frame.pixels * 255.0 + 0.5).astype(np.uint8),
                           cv2.COLOR_RGB2BGR)
        cv2.imwrite(os.path.join(frames_dir, "%08d.png" % frame.index), img)
    with open(os.path.join(path, "groundtruth.txt"), "w") as fh:
        for box in seq.boxes:
            fh.write("%.3f,%.3f,%.3f,%.3f\n" % (box.x, box.y, box.w, box.h))
    if seq.visibility is not None:
        with open(os.path.join(path, "visibility.txt"), "w") as fh:
            for v in seq.visibility:
                fh.write("%.6f\n" % v)


# ---------------------------------------------------------------------------
# synthetic sequences
# ---------------------------------------------------------------------------

def _smooth_noise(rng, size, low, high, cells=8):
    coarse = rng.random((cells, cells, 3)).astype(np.float32)
    img = cv2.resize(coarse, (size, size), interpolation=cv2.INTER_CUBIC)
    img = np.clip(img, 0.0, 1.0)
    return low + (high - low) * img


def _make_sprite(rng, w, h):
    """Textured flat-colored rectangle sprite, strongly contrasted."""
    base = rng.random(3).astype(np.float32)
    # push the base color towards the gamut corners so it stands out
    base = np.where(base > 0.5, 0.85 + 0.15 * base, 0.15 * base)
    tex = rng.random((h, w, 3)).astype(np.float32)
    sprite = np.clip(0.7 * base[None, None, :] + 0.3 * tex, 0.0, 1.0)
    return sprite


def _sample_motion(rng, cfg, tw, th):
    """Constant velocity + sinusoidal perturbation; resample until the
    target center stays inside the image for >= 80% of frames."""
    size = cfg.image_size
    n = cfg.length
    for _ in range(200):
        mx = min(max(tw, th), max((size - tw) / 3.0, 2.0))
        my = min(max(tw, th), max((size - th) / 3.0, 2.0))
        x0 = rng.uniform(mx, max(size - mx - tw, mx + 1.0))
        y0 = rng.uniform(my, max(size - my - th, my + 1.0))
        speed = rng.uniform(0.3, 1.6)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        vx, vy = speed * math.cos(angle), speed * math.sin(angle)
        amp = rng.uniform(0.0, 6.0)
        freq = rng.uniform(0.02, 0.08)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        t = np.arange(n)
        xs = x0 + vx * t + amp * np.sin(2.0 * math.pi * freq * t + phase)
        ys = y0 + vy * t + amp * np.sin(2.0 * math.pi * freq * t + phase * 0.7)
        cx = xs + tw / 2.0
        cy = ys + th / 2.0
        inside = (cx >= 0) & (cx < size) & (cy >= 0) & (cy < size)
        if inside.mean() >= 0.8:
            return xs, ys
    raise RuntimeError("could not sample a motion keeping the target in frame")


def _paste_sprite(canvas, sprite, x, y):
    """Composite a sprite at subpixel position (x, y) with bilinear shift."""
    h, w = sprite.shape[:2]
    m = np.float32([[1, 0, x], [0, 1, y]])
    size = canvas.shape[1], canvas.shape[0]
    warped = cv2.warpAffine(sprite, m, size, flags=cv2.INTER_LINEAR,
                            borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    alpha = cv2.warpAffine(np.ones((h, w), np.float32), m, size,
                           flags=cv2.INTER_LINEAR,
                           borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    return canvas * (1.0 - alpha[..., None]) + warped * alpha[..., None]


def occluder_geometry(boxes, start, end, max_coverage):
    """Static occluder box pinned where the target's center will be at the
    segment midpoint, so the target passes behind it while the occluder
    itself carries no motion information. max_coverage sets the peak
    fraction of the target that gets covered (>= 1 means fully hidden)."""
    mid = (start + end) // 2
    tcx, tcy = boxes[mid].center
    tw, th = boxes[mid].w, boxes[mid].h
    if max_coverage >= 1.0:
        ow, oh = tw * 1.5 + 4.0, th * 1.5 + 4.0
    else:
        ow, oh = tw * math.sqrt(max_coverage), th * math.sqrt(max_coverage)
    return BoundingBox(tcx - ow / 2.0, tcy - oh / 2.0, ow, oh)


def generate_synthetic(cfg, seed):
    """Render a synthetic sequence: textured target over a noise background,
    with scripted occluders. Deterministic given (cfg, seed)."""
    for start, end, _cov in cfg.occluders:
        if start < 0 or end >= cfg.length or start > end:
            raise ValueError("occluder interval (%d, %d) outside sequence of "
                             "length %d" % (start, end, cfg.length))

    rng = np.random.default_rng([seed, cfg.texture_seed, 0x5EED])
    size = cfg.image_size
    background = _smooth_noise(rng, size, 0.25, 0.75)

    tw = int(rng.integers(cfg.min_target, cfg.max_target + 1))
    th = int(rng.integers(cfg.min_target, cfg.max_target + 1))
    sprite = _make_sprite(rng, tw, th)
    occ_sprites = [_make_sprite(rng, int(tw * 1.5) + 4, int(th * 1.5) + 4)
                   for _ in cfg.occluders]

    xs, ys = _sample_motion(rng, cfg, tw, th)
    noise = rng.normal(0.0, 0.01, (cfg.length, size, size, 3)).astype(np.float32)

    all_boxes = [BoundingBox(float(xs[t]), float(ys[t]), float(tw), float(th))
                 for t in range(cfg.length)]
    occ_boxes, occ_crops = [], []
    for k, (start, end, max_cov) in enumerate(cfg.occluders):
        occ_box = occluder_geometry(all_boxes, start, end, max_cov)
        occ_boxes.append(occ_box)
        occ_crops.append(cv2.resize(
            occ_sprites[k], (max(int(round(occ_box.w)), 2),
                             max(int(round(occ_box.h)), 2)),
            interpolation=cv2.INTER_LINEAR))

    frames, boxes, visibility = [], [], []
    for t in range(cfg.length):
        canvas = np.clip(background + noise[t], 0.0, 1.0)
        canvas = _paste_sprite(canvas, sprite, xs[t], ys[t])
        box = all_boxes[t]

        target_px = rect_mask((size, size), box)
        occluded_px = np.zeros((size, size), dtype=bool)
        for k, (start, end, _max_cov) in enumerate(cfg.occluders):
            if not start <= t <= end:
                continue
            occ_box = occ_boxes[k]
            canvas = _paste_sprite(canvas, occ_crops[k], occ_box.x, occ_box.y)
            occluded_px |= rect_mask((size, size), occ_box)

        n_target = int(target_px.sum())
        if n_target > 0:
            vis = 1.0 - float((target_px & occluded_px).sum()) / n_target
        else:
            vis = 0.0
        frames.append(Frame(canvas.astype(np.float32), t))
        boxes.append(box)
        visibility.append(vis)

    return Sequence(frames, boxes, visibility, name="synth%04d" % seed)


def synth_dataset(config, seed, count=None, occluded=None, name_offset=0):
    """Generate a list of synthetic sequences from the global config.

    A fraction of sequences (synth.occluded_fraction, overridable via
    `occluded`) gets one scripted occlusion segment with coverage ramping
    to synth.max_coverage.
    """
    n = count if count is not None else config["synth.num_sequences"]
    occ_frac = config["synth.occluded_fraction"] if occluded is None else occluded
    rng = np.random.default_rng([seed, 0xDA7A])
    sequences = []
    for i in range(n):
        occluders = []
        if rng.random() < occ_frac:
            seq_len = config["synth.length"]
            length = int(rng.integers(config["synth.occlusion_min_len"],
                                      config["synth.occlusion_max_len"] + 1))
            length = min(length, max(seq_len // 2 - 1, 1))
            lo = min(seq_len // 4, seq_len - length - 2)
            hi = seq_len - length - 2
            start = int(rng.integers(max(lo, 0), max(hi, lo + 1)))
            end = min(start + length, seq_len - 1)
            occluders.append((start, end, config["synth.max_coverage"]))
        cfg = SynthConfig(
            length=config["synth.length"],
            image_size=config["synth.image_size"],
            texture_seed=int(rng.integers(0, 2 ** 31)),
            min_target=config["synth.min_target"],
            max_target=config["synth.max_target"],
            occluders=occluders,
        )
        seq = generate_synthetic(cfg, seed=name_offset + i)
        sequences.append(seq)
    return sequences


# ---------------------------------------------------------------------------
# cropping and masking
# ---------------------------------------------------------------------------

def crop_search_region(frame, ref_box, jitter, rng, patch_size=64,
                       context_factor=5.0, gt_box=None):
    """Crop a square search region around the (jittered) reference box.

    The crop side is context_factor * sqrt(w*h); out-of-frame area is filled
    with the per-channel frame mean. `gt_box` (default: ref_box) is mapped
    into patch coordinates as target_box_in_patch.
    """
    if ref_box.w <= 0 or ref_box.h <= 0:
        raise ValueError("degenerate reference box")
    if gt_box is None:
        gt_box = ref_box

    cx, cy = ref_box.center
    if jitter is not None and (jitter.scale > 0 or jitter.shift > 0):
        cx += rng.uniform(-jitter.shift, jitter.shift) * ref_box.w
        cy += rng.uniform(-jitter.shift, jitter.shift) * ref_box.h
        size_jitter = 1.0 + rng.uniform(-jitter.scale, jitter.scale)
    else:
        size_jitter = 1.0

    side = context_factor * math.sqrt(ref_box.w * ref_box.h) * size_jitter
    scale = side / patch_size
    # continuous patch coord P maps to continuous frame coord scale * P + t
    tx = cx - side / 2.0
    ty = cy - side / 2.0

    mean = frame.pixels.reshape(-1, 3).mean(axis=0)
    # warpAffine works in array (pixel-center) coordinates
    m = np.float32([[scale, 0, tx + 0.5 * scale - 0.5],
                    [0, scale, ty + 0.5 * scale - 0.5]])
    patch = cv2.warpAffine(
        frame.pixels, m, (patch_size, patch_size),
        flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=tuple(float(v) for v in mean))

    box_in_patch = BoundingBox(
        (gt_box.x - tx) / scale, (gt_box.y - ty) / scale,
        gt_box.w / scale, gt_box.h / scale)
    return SamplePatch(patch.astype(np.float32), box_in_patch, (scale, tx, ty))


def patch_to_frame_box(box, crop_transform):
    """Map a box from patch coordinates back to frame coordinates."""
    scale, tx, ty = crop_transform
    return BoundingBox(box.x * scale + tx, box.y * scale + ty,
                       box.w * scale, box.h * scale)


def apply_random_mask(patch, rng, p_mask=0.3, cover_min=0.3, cover_max=0.7,
                      textured=False):
    """With probability p_mask, overwrite a random rectangle over the target
    box covering cover_min..cover_max of its area. A cover >= 1 masks the
    whole box plus margin (a total occlusion). The fill is the patch mean
    color, or a random sprite texture when `textured` (mimicking an
    occluding object rather than a flat dropout). Pixels outside the mask
    are untouched."""
    size = patch.pixels.shape[0]
    empty = OcclusionMask(np.zeros((size, size), dtype=bool), 0.0)
    if rng.random() >= p_mask:
        return patch, empty

    box = patch.target_box_in_patch
    cover = rng.uniform(cover_min, cover_max)
    if cover >= 1.0:
        # rectangle centered on the target, scaled past its edges
        mw = min(box.w * math.sqrt(cover), float(size))
        mh = min(box.h * math.sqrt(cover), float(size))
        mx = box.x + (box.w - mw) / 2.0
        my = box.y + (box.h - mh) / 2.0
    else:
        # aspect chosen so the mask rectangle fits inside the target box
        s_max = min(1.0 / cover, 2.0)
        s = rng.uniform(max(cover, 0.5), s_max)
        mw = box.w * math.sqrt(cover * s)
        mh = box.h * math.sqrt(cover / s)
        mw, mh = min(mw, box.w), min(mh, box.h)
        mx = box.x + rng.uniform(0.0, box.w - mw)
        my = box.y + rng.uniform(0.0, box.h - mh)
    mask_box = BoundingBox(mx, my, max(mw, 1.0), max(mh, 1.0))

    mask = rect_mask((size, size), mask_box)
    if not mask.any():
        # degenerate tiny target: force a single pixel
        iy = min(max(int(round(my)), 0), size - 1)
        ix = min(max(int(round(mx)), 0), size - 1)
        mask[iy, ix] = True

    target_px = rect_mask((size, size), box)
    n_target = int(target_px.sum())
    covered = float((mask & target_px).sum()) / n_target if n_target else 1.0

    pixels = patch.pixels.copy()
    if textured:
        ys, xs = np.nonzero(mask.any(axis=1)), np.nonzero(mask.any(axis=0))
        y0, y1 = int(ys[0][0]), int(ys[0][-1]) + 1
        x0, x1 = int(xs[0][0]), int(xs[0][-1]) + 1
        sprite = _make_sprite(rng, x1 - x0, y1 - y0)
        pixels[y0:y1, x0:x1][mask[y0:y1, x0:x1]] = sprite[mask[y0:y1, x0:x1]]
    else:
        pixels[mask] = patch.pixels.reshape(-1, 3).mean(axis=0)
    masked = replace(patch, pixels=pixels)
    return masked, OcclusionMask(mask, covered)
