"""Synthetic paired UAV/ground sequences, template/search cropping, dataset I/O.

One world trajectory per sequence drives both views: the UAV view renders it
top-down with a small target, the ground view renders it with a vertically
squashed, depth-scaled projection and a larger, taller target.  Distractors
share the target color up to a small jitter.  Occlusion events cover the
target in one view at a time.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from vlunitrack.config import VIEWS, Box, ConfigError, TrackerConfig, ViewId, parse_flat

QUANT = 16  # gt corners snap to 1/QUANT pixel so they round-trip through text exactly


class DatasetError(RuntimeError):
    """Missing or inconsistent dataset files; the message names the path."""


@dataclass(frozen=True)
class SceneSpec:
    num_frames: int = 60
    image_size: int = 256
    target_color: tuple[float, float, float] = (0.9, 0.15, 0.15)
    distractor_colors: tuple[tuple[float, float, float], ...] = ()
    distractor_jitter: float = 0.08
    uav_scale: float = 0.08
    ground_scale: float = 0.2
    occlusion_prob: float = 0.0
    occlusion_max_frames: int = 8
    num_distractors: int = 1
    speed: float = 0.008
    turn_noise: float = 0.25
    start_x: float = 0.5
    start_y: float = 0.5
    background_color: tuple[float, float, float] = (0.35, 0.45, 0.35)
    background_amplitude: float = 0.2
    background_cells: int = 8
    pixel_noise: float = 0.02
    seed: int = 0

    def problems(self) -> list[str]:
        out = []
        if self.num_frames < 1:
            out.append("num_frames must be >= 1")
        if self.image_size < 32:
            out.append("image_size must be >= 32")
        for name in ("uav_scale", "ground_scale"):
            if not 0 < getattr(self, name) < 0.5:
                out.append(f"{name} must lie in (0, 0.5)")
        for name in ("occlusion_prob", "start_x", "start_y"):
            if not 0 <= getattr(self, name) <= 1:
                out.append(f"{name} must lie in [0, 1]")
        if self.occlusion_max_frames < 1:
            out.append("occlusion_max_frames must be >= 1")
        if self.num_distractors < 0:
            out.append("num_distractors must be >= 0")
        if self.speed < 0 or self.turn_noise < 0:
            out.append("speed and turn_noise must be >= 0")
        if self.background_cells < 1:
            out.append("background_cells must be >= 1")
        colors = (self.target_color, self.background_color, *self.distractor_colors)
        if any(len(c) != 3 or not all(0 <= x <= 1 for x in c) for c in colors):
            out.append("colors must be RGB triples in [0, 1]")
        return out


def check_spec(spec: SceneSpec) -> SceneSpec:
    problems = spec.problems()
    if problems:
        raise ConfigError(problems)
    return spec


def _parse_color(s: str) -> tuple[float, float, float]:
    vals = tuple(float(x) for x in s.split(","))
    if len(vals) != 3:
        raise ConfigError(f"bad RGB triple {s!r}")
    return vals


def spec_from_text(text: str) -> SceneSpec:
    fields = {f.name: f.type for f in dataclasses.fields(SceneSpec)}
    plain = {k: ("str" if "tuple" in str(t) else t) for k, t in fields.items()}
    values = parse_flat(text, plain)
    try:
        for k in ("target_color", "background_color"):
            if k in values:
                values[k] = _parse_color(values[k])
        if "distractor_colors" in values:
            values["distractor_colors"] = tuple(
                _parse_color(c) for c in values["distractor_colors"].split(";") if c.strip())
    except ValueError as e:
        raise ConfigError(f"bad color: {e}") from None
    return check_spec(SceneSpec(**values))


def spec_to_text(spec: SceneSpec) -> str:
    lines = []
    for f in dataclasses.fields(SceneSpec):
        v = getattr(spec, f.name)
        if f.name == "distractor_colors":
            v = "; ".join(",".join(repr(x) for x in c) for c in v)
        elif isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_spec(path: str | Path) -> SceneSpec:
    return spec_from_text(Path(path).read_text(encoding="utf-8"))


@dataclass
class SequencePair:
    """Synchronized frames (uint8 ``[T, S, S, 3]``) and gt boxes (``[T, 4]``
    center-normalized) for both views.

    ``world`` is the shared ground-plane trajectory ``[T, 2]`` and
    ``occluded`` flags ``[T, 2]`` (uav, ground) when known.
    """

    frames: dict[ViewId, np.ndarray]
    boxes: dict[ViewId, np.ndarray]
    world: np.ndarray | None = None
    occluded: np.ndarray | None = None
    spec: SceneSpec | None = None
    name: str = ""

    def __post_init__(self):
        lengths = {len(self.frames[v]) for v in VIEWS} | {len(self.boxes[v]) for v in VIEWS}
        if len(lengths) != 1:
            raise DatasetError(f"sequence {self.name or '?'}: views/boxes differ in length {lengths}")

    @property
    def num_frames(self) -> int:
        return len(self.frames[ViewId.UAV])

    @property
    def image_size(self) -> tuple[int, int]:
        h, w = self.frames[ViewId.UAV].shape[1:3]
        return w, h

    def box(self, view: ViewId, t: int) -> Box:
        return Box(*(float(x) for x in self.boxes[ViewId(view)][t]))

    def same_content(self, other: "SequencePair") -> bool:
        return all(np.array_equal(self.frames[v], other.frames[v])
                   and np.array_equal(self.boxes[v], other.boxes[v]) for v in VIEWS)


# -- generation -----------------------------------------------------------------

def _ground_mapping(spec: SceneSpec):
    """Constants of the ground-view projection; the box stays inside the frame."""
    w_max = spec.ground_scale * 1.4 * 0.75
    h_max = spec.ground_scale * 1.4 * 1.25
    ax = w_max / 2 + 0.01
    y0 = max(0.3, h_max / 2 + 0.01)
    y1 = max(y0, 1 - h_max / 2 - 0.01)
    return ax, y0, y1


def project(view: ViewId, xy: np.ndarray, spec: SceneSpec, size_mult: float = 1.0) -> np.ndarray:
    """World ground-plane positions ``[..., 2]`` -> boxes ``[..., 4]`` (cx, cy, w, h)."""
    x, y = xy[..., 0], xy[..., 1]
    if view is ViewId.UAV:
        s = np.full_like(x, spec.uav_scale * size_mult)
        return np.stack([x, y, s, s], axis=-1)
    ax, y0, y1 = _ground_mapping(spec)
    depth = 0.6 + 0.8 * y  # nearer (larger y) -> larger
    w = spec.ground_scale * depth * 0.75 * size_mult
    h = spec.ground_scale * depth * 1.25 * size_mult
    return np.stack([ax + (1 - 2 * ax) * x, y0 + (y1 - y0) * y, w, h], axis=-1)


def _walk(rng, n, start, speed, turn_noise, margin):
    pos = np.empty((n, 2))
    p = np.array(start, dtype=float)
    heading = rng.uniform(0, 2 * math.pi)
    lo, hi = margin, 1 - margin
    p = np.clip(p, lo, hi)
    for t in range(n):
        pos[t] = p
        heading += turn_noise * rng.standard_normal()
        step = speed * np.array([math.cos(heading), math.sin(heading)])
        p = p + step
        for k in range(2):
            if p[k] < lo:
                p[k] = 2 * lo - p[k]
                heading = math.pi - heading if k == 0 else -heading
            elif p[k] > hi:
                p[k] = 2 * hi - p[k]
                heading = math.pi - heading if k == 0 else -heading
        p = np.clip(p, lo, hi)
    return pos


def _quantize(boxes: np.ndarray, size: int) -> np.ndarray:
    """Snap pixel corners to a 1/QUANT grid inside the frame; back to normalized."""
    px = boxes * size
    x1 = np.round((px[..., 0] - px[..., 2] / 2) * QUANT) / QUANT
    y1 = np.round((px[..., 1] - px[..., 3] / 2) * QUANT) / QUANT
    w = np.maximum(np.round(px[..., 2] * QUANT) / QUANT, 1.0 / QUANT)
    h = np.maximum(np.round(px[..., 3] * QUANT) / QUANT, 1.0 / QUANT)
    x1 = np.clip(x1, 0, size - w)
    y1 = np.clip(y1, 0, size - h)
    return np.stack([(x1 + w / 2) / size, (y1 + h / 2) / size, w / size, h / size], axis=-1)


def _fill(img: np.ndarray, box, color) -> None:
    """Paint pixels whose centers fall inside a normalized center-format box."""
    S = img.shape[0]
    cx, cy, w, h = (v * S for v in box)
    c0 = max(0, math.ceil(cx - w / 2 - 0.5))
    c1 = min(S, math.ceil(cx + w / 2 - 0.5))
    r0 = max(0, math.ceil(cy - h / 2 - 0.5))
    r1 = min(S, math.ceil(cy + h / 2 - 0.5))
    if c1 > c0 and r1 > r0:
        img[r0:r1, c0:c1] = color


def _background(rng, spec: SceneSpec) -> np.ndarray:
    S, k = spec.image_size, spec.background_cells
    grid = rng.uniform(-1, 1, size=(k, k, 3)).astype(np.float32)
    smooth = cv2.resize(grid, (S, S), interpolation=cv2.INTER_CUBIC)
    return np.asarray(spec.background_color, np.float32) + spec.background_amplitude * smooth


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)


def generate_sequence_pair(spec: SceneSpec, name: str = "") -> SequencePair:
    """Render a sequence pair; a pure function of ``spec`` (its seed included)."""
    check_spec(spec)
    rng = np.random.default_rng(spec.seed)
    T, S = spec.num_frames, spec.image_size
    margin = spec.uav_scale / 2 + 0.01
    world = _walk(rng, T, (spec.start_x, spec.start_y), spec.speed, spec.turn_noise, margin)

    d_colors = list(spec.distractor_colors)
    while len(d_colors) < spec.num_distractors:
        jitter = rng.uniform(-spec.distractor_jitter, spec.distractor_jitter, 3)
        d_colors.append(tuple(np.clip(np.asarray(spec.target_color) + jitter, 0, 1)))
    d_tracks, d_mult = [], []
    for _ in range(spec.num_distractors):
        start = rng.uniform(margin, 1 - margin, 2)
        d_tracks.append(_walk(rng, T, start, spec.speed, spec.turn_noise, margin))
        d_mult.append(rng.uniform(0.8, 1.2))

    # occlusion events hit one view at a time
    occluded = np.zeros((T, 2), dtype=bool)
    t = 0
    while t < T:
        if spec.occlusion_prob > 0 and rng.random() < spec.occlusion_prob:
            dur = int(rng.integers(1, spec.occlusion_max_frames + 1))
            occluded[t:t + dur, int(rng.integers(0, 2))] = True
            t += dur
        else:
            t += 1

    inner = np.array([0.95, 0.95, 0.9], np.float32)
    occluder = np.array([0.5, 0.5, 0.5], np.float32)
    frames, boxes = {}, {}
    for vi, view in enumerate(VIEWS):
        bg = _background(rng, spec)
        gt = _quantize(project(view, world, spec), S)
        d_boxes = [project(view, tr, spec, m) for tr, m in zip(d_tracks, d_mult)]
        out = np.empty((T, S, S, 3), np.uint8)
        for t in range(T):
            img = bg + spec.pixel_noise * rng.standard_normal((S, S, 3)).astype(np.float32)
            for db, col in zip(d_boxes, d_colors):
                _fill(img, db[t], col)
            b = gt[t]
            _fill(img, b, spec.target_color)
            _fill(img, (b[0], b[1], b[2] * 0.5, b[3] * 0.5), inner)
            if occluded[t, vi]:
                _fill(img, (b[0], b[1], b[2] * 1.3, b[3] * 1.3), occluder)
            out[t] = _to_uint8(img)
        frames[view], boxes[view] = out, gt
    return SequencePair(frames, boxes, world, occluded, spec, name)


def generate_dataset(spec: SceneSpec, num_seqs: int) -> list[SequencePair]:
    """``num_seqs`` pairs with seeds ``spec.seed, spec.seed + 1, ...``."""
    return [generate_sequence_pair(dataclasses.replace(spec, seed=spec.seed + k), f"seq_{k:04d}")
            for k in range(num_seqs)]


# -- cropping -------------------------------------------------------------------

@dataclass(frozen=True)
class CropTransform:
    """Square crop ``[x0, x0 + side] x [y0, y0 + side]`` of a frame, in pixels."""

    x0: float
    y0: float
    side: float
    frame_w: int
    frame_h: int

    def to_frame(self, b: Box) -> Box:
        """Crop-normalized box -> frame-normalized box."""
        return Box((self.x0 + b.cx * self.side) / self.frame_w,
                   (self.y0 + b.cy * self.side) / self.frame_h,
                   b.w * self.side / self.frame_w, b.h * self.side / self.frame_h)

    def to_crop(self, b: Box) -> Box:
        return Box((b.cx * self.frame_w - self.x0) / self.side,
                   (b.cy * self.frame_h - self.y0) / self.side,
                   b.w * self.frame_w / self.side, b.h * self.frame_h / self.side)

    def to_crop_array(self, boxes: np.ndarray) -> np.ndarray:
        s = np.array([self.frame_w, self.frame_h, self.frame_w, self.frame_h], float)
        out = boxes * s
        out[..., 0] = (out[..., 0] - self.x0) / self.side
        out[..., 1] = (out[..., 1] - self.y0) / self.side
        out[..., 2:] /= self.side
        return out


def crop_region(frame: np.ndarray, center_px: tuple[float, float], side: float,
                out_size: int) -> tuple[np.ndarray, CropTransform]:
    """Square crop around ``center_px`` resized to ``out_size``; float32 in [0, 1].

    Parts outside the frame are filled with the frame's mean color.
    """
    img = frame.astype(np.float32) / 255.0 if frame.dtype == np.uint8 else frame.astype(np.float32)
    H, W = img.shape[:2]
    side = max(float(side), 1.0)
    x0, y0 = center_px[0] - side / 2, center_px[1] - side / 2
    s = side / out_size
    # inverse map: output pixel center (j + 0.5) -> source coordinate, cv2 centers at integers
    M = np.array([[s, 0, x0 + 0.5 * s - 0.5], [0, s, y0 + 0.5 * s - 0.5]], dtype=np.float64)
    mean = tuple(float(c) for c in cv2.mean(img)[:3])
    out = cv2.warpAffine(img, M, (out_size, out_size), flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                         borderMode=cv2.BORDER_CONSTANT, borderValue=mean)
    return out, CropTransform(x0, y0, side, W, H)


def crop_side(box: Box, factor: float, frame_w: int, frame_h: int) -> float:
    return factor * math.sqrt(box.w * frame_w * box.h * frame_h)


def crop_template_and_search(frame: np.ndarray, prev_box: Box, cfg: TrackerConfig):
    """Template (``template_factor`` x extent) and search (``search_factor`` x)
    crops around ``prev_box``.  Returns ``(Z, X, search_transform)``."""
    H, W = frame.shape[:2]
    center = (prev_box.cx * W, prev_box.cy * H)
    z, _ = crop_region(frame, center, crop_side(prev_box, cfg.template_factor, W, H), cfg.template_size)
    x, tf = crop_region(frame, center, crop_side(prev_box, cfg.search_factor, W, H), cfg.search_size)
    return z, x, tf


# -- on-disk layout -------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def save_dataset(pairs: list[SequencePair], root: str | Path) -> None:
    """``<root>/<seq>/<view>/frame_%05d.png`` + ``groundtruth.txt`` (pixel corners),
    plus ``<root>/manifest.txt``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    names = []
    for k, pair in enumerate(pairs):
        name = pair.name or f"seq_{k:04d}"
        names.append(name)
        W, H = pair.image_size
        for view in VIEWS:
            vdir = root / name / view.value
            vdir.mkdir(parents=True, exist_ok=True)
            lines = []
            for t in range(pair.num_frames):
                Image.fromarray(pair.frames[view][t]).save(vdir / f"frame_{t:05d}.png")
                x, y, w, h = pair.box(view, t).to_pixels(W, H)
                lines.append(f"{t},{_fmt(x)},{_fmt(y)},{_fmt(w)},{_fmt(h)}\n")
            (vdir / "groundtruth.txt").write_text("".join(lines), encoding="utf-8")
        if pair.spec is not None:
            (root / name / "spec.txt").write_text(spec_to_text(pair.spec), encoding="utf-8")
        if pair.world is not None:
            occ = pair.occluded if pair.occluded is not None else np.zeros((pair.num_frames, 2), bool)
            rows = [f"{t},{_fmt(p[0])},{_fmt(p[1])},{int(o[0])},{int(o[1])}\n"
                    for t, (p, o) in enumerate(zip(pair.world, occ))]
            (root / name / "trajectory.txt").write_text("".join(rows), encoding="utf-8")
    (root / "manifest.txt").write_text("".join(n + "\n" for n in names), encoding="utf-8")


def read_groundtruth(path: Path, image_w: int, image_h: int) -> np.ndarray:
    if not path.is_file():
        raise DatasetError(f"missing annotation file {path}")
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            idx, x, y, w, h = int(parts[0]), *(float(p) for p in parts[1:5])
            if len(parts) != 5 or idx != len(rows):
                raise ValueError
            b = Box.from_pixels(x, y, w, h, image_w, image_h)
        except (ValueError, IndexError):
            raise DatasetError(f"corrupt annotation {path}:{lineno}: {line!r}") from None
        rows.append(b.as_tuple())
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def _load_frames(vdir: Path) -> np.ndarray:
    files = sorted(vdir.glob("frame_*.png"))
    if not files:
        raise DatasetError(f"no frames in {vdir}")
    return np.stack([np.asarray(Image.open(f).convert("RGB")) for f in files])


def load_sequence(seq_dir: str | Path, with_gt: bool = True) -> SequencePair:
    seq_dir = Path(seq_dir)
    if not seq_dir.is_dir():
        raise DatasetError(f"missing sequence directory {seq_dir}")
    frames, boxes = {}, {}
    for view in VIEWS:
        vdir = seq_dir / view.value
        if not vdir.is_dir():
            raise DatasetError(f"missing view directory {vdir}")
        frames[view] = _load_frames(vdir)
        H, W = frames[view].shape[1:3]
        gt_path = vdir / "groundtruth.txt"
        if with_gt or gt_path.exists():
            boxes[view] = read_groundtruth(gt_path, W, H)
            if len(boxes[view]) != len(frames[view]):
                raise DatasetError(f"sequence {seq_dir.name}/{view.value}: {len(boxes[view])} "
                                   f"annotation lines for {len(frames[view])} frames")
        else:
            boxes[view] = np.full((len(frames[view]), 4), np.nan)
    if len(frames[ViewId.UAV]) != len(frames[ViewId.GROUND]):
        raise DatasetError(f"sequence {seq_dir.name}: views have different frame counts")
    spec = load_spec(seq_dir / "spec.txt") if (seq_dir / "spec.txt").exists() else None
    world = occluded = None
    traj = seq_dir / "trajectory.txt"
    if traj.exists():
        arr = np.loadtxt(traj, delimiter=",", ndmin=2)
        world, occluded = arr[:, 1:3], arr[:, 3:5].astype(bool)
    return SequencePair(frames, boxes, world, occluded, spec, seq_dir.name)


def load_dataset(root: str | Path) -> list[SequencePair]:
    root = Path(root)
    manifest = root / "manifest.txt"
    if manifest.is_file():
        names = [n.strip() for n in manifest.read_text(encoding="utf-8").splitlines() if n.strip()]
    else:
        names = sorted(p.name for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
    if not names:
        raise DatasetError(f"no sequences found in {root}")
    return [load_sequence(root / n) for n in names]
