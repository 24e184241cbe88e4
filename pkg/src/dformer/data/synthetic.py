"""Synthetic RGB-D scenes of class-coded geometric shapes.

Each shape class owns a hue family and a depth band. Hue families are jittered
wide enough that neighbouring classes overlap in colour, so the depth channel
carries label information the RGB image alone does not.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core.rdt import load_rdt, save_rdt
from ..core.rng import Rng

RECIPE_VERSION = 1
IGNORE_INDEX = 255
SHAPES = ("disk", "square", "triangle", "ellipse")
# shape radius as a fraction of the image side
RADIUS_RANGE = (0.16, 0.26)
DOMINANT_RADIUS_RANGE = (0.3, 0.38)
# hue jitter in units of the per-class hue spacing; above 0.5 neighbours overlap in colour
HUE_JITTER = 1.0


@dataclass
class RGBDSample:
    rgb: np.ndarray  # H x W x 3 in [0, 1]
    depth: np.ndarray  # H x W x 1 in [0, 1]
    target: np.ndarray | int  # class id or H x W label map

    def __post_init__(self):
        if self.rgb.shape[:2] != self.depth.shape[:2]:
            raise ValueError(f"rgb {self.rgb.shape} and depth {self.depth.shape} are not aligned")


@dataclass
class DatasetManifest:
    root: Path
    samples: list[tuple[str, str, str]]
    num_classes: int
    seed: int
    recipe: int = RECIPE_VERSION
    split: str = "all"
    mode: str = field(default="segment")

    def __len__(self) -> int:
        return len(self.samples)

    def paths(self, i: int) -> tuple[Path, Path, Path]:
        return tuple(self.root / p for p in self.samples[i])

    def load(self, i: int) -> RGBDSample:
        rgb_p, depth_p, label_p = self.paths(i)
        label = load_rdt(label_p)
        target = int(label.reshape(-1)[0]) if label.ndim == 1 else label
        return RGBDSample(load_rdt(rgb_p), load_rdt(depth_p), target)

    def subset(self, indices, split: str) -> "DatasetManifest":
        return DatasetManifest(self.root, [self.samples[i] for i in indices], self.num_classes, self.seed,
                               self.recipe, split, self.mode)

    def write(self, path: str | os.PathLike | None = None) -> Path:
        path = Path(path) if path is not None else self.root / "manifest.txt"
        lines = [f"#classes={self.num_classes} seed={self.seed} recipe={self.recipe}"]
        lines += ["\t".join(s) for s in self.samples]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: str | os.PathLike) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.txt"
        lines = path.read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("#"):
            raise ValueError(f"{path}: missing manifest header")
        head = dict(kv.split("=", 1) for kv in lines[0][1:].split())
        samples = [tuple(line.split("\t")) for line in lines[1:] if line.strip()]
        for s in samples:
            if len(s) != 3:
                raise ValueError(f"{path}: manifest rows need three tab-separated paths")
        m = cls(path.parent, samples, int(head["classes"]), int(head["seed"]), int(head["recipe"]))
        if samples:
            lab = load_rdt(m.root / samples[0][2])
            m.mode = "classify" if lab.ndim == 1 else "segment"
        return m


def hsv_to_rgb(h, s, v):
    h = np.asarray(h) % 1.0
    i = np.floor(h * 6).astype(int) % 6
    f = h * 6 - np.floor(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    table = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    r = np.choose(i, [c[0] for c in table])
    g = np.choose(i, [c[1] for c in table])
    b = np.choose(i, [c[2] for c in table])
    return np.stack([r, g, b], axis=-1)


def _shape_mask(kind: str, yy, xx, cy, cx, r, angle):
    dy, dx = yy - cy, xx - cx
    if kind == "disk":
        return dy**2 + dx**2 <= r**2
    c, s = np.cos(angle), np.sin(angle)
    u, w = c * dx + s * dy, -s * dx + c * dy
    if kind == "ellipse":
        return (u / r) ** 2 + (w / (0.6 * r)) ** 2 <= 1.0
    if kind == "square":
        return (np.abs(u) <= 0.8 * r) & (np.abs(w) <= 0.8 * r)
    # triangle: intersection of three half-planes
    inside = np.ones_like(u, dtype=bool)
    for k in range(3):
        a = angle + 2 * np.pi * k / 3
        inside &= (np.cos(a) * dx + np.sin(a) * dy) <= 0.5 * r
    return inside


def class_depth_band(c: int, n_shape_classes: int) -> tuple[float, float]:
    width = 0.45 / n_shape_classes
    lo = 0.05 + width * c
    return lo + 0.15 * width, lo + 0.85 * width


def _place_centers(g: np.random.Generator, radii: np.ndarray, tries: int = 64) -> np.ndarray:
    """Centres in unit coordinates, rejection-sampled so shapes rarely overlap.

    Each shape stays fully inside the frame; after ``tries`` failed draws the
    last candidate is accepted, which may overlap (and occlude) its neighbours.
    """
    out = []
    for r in radii:
        for _ in range(tries):
            p = g.uniform(r, 1.0 - r, 2)
            if all(np.hypot(*(p - q)) >= r + rq for q, rq in out):
                break
        out.append((p, r))
    return np.array([p for p, _ in out])


def render_scene(rng: Rng, size: int, n_shape_classes: int, mode: str):
    """Returns (rgb HxWx3, depth HxWx1, label map HxW of shape-class ids or -1, dominant class)."""
    g = rng.generator
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    # background: low-saturation stripes over a far, tilted depth plane
    hue = g.uniform()
    base = hsv_to_rgb(np.full((size, size), hue), 0.25 * g.uniform(), 0.4 + 0.4 * g.uniform())
    freq, phase, theta = g.uniform(0.1, 0.4), g.uniform(0, 2 * np.pi), g.uniform(0, np.pi)
    stripes = 0.08 * np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    rgb = base + stripes[..., None] + 0.03 * g.standard_normal((size, size, 3))
    tilt = g.uniform(-1, 1, 2) / size
    depth = 0.78 + 0.12 * (tilt[0] * (yy - size / 2) + tilt[1] * (xx - size / 2)) \
        + 0.01 * g.standard_normal((size, size))
    label = np.full((size, size), -1, dtype=np.int64)

    n = int(g.integers(1, 5))
    classes = g.integers(0, n_shape_classes, n)
    radii = g.uniform(*RADIUS_RANGE, n) * size
    if mode == "classify":
        radii[0] = g.uniform(*DOMINANT_RADIUS_RANGE) * size
    bands = [class_depth_band(int(c), n_shape_classes) for c in classes]
    depths = np.array([g.uniform(lo, hi) for lo, hi in bands])
    # far to near so nearer objects occlude
    order = np.argsort(-depths, kind="stable")
    centers = _place_centers(g, radii / size) * size
    areas = np.zeros(n)
    for k in order:
        c = int(classes[k])
        cy, cx = centers[k]
        kind = SHAPES[int(g.integers(0, len(SHAPES)))]
        mask = _shape_mask(kind, yy, xx, cy, cx, radii[k], g.uniform(0, 2 * np.pi))
        if not mask.any():
            continue
        h = (c + 0.5 + g.uniform(-HUE_JITTER, HUE_JITTER)) / n_shape_classes
        color = hsv_to_rgb(h, 0.55 + 0.4 * g.uniform(), 0.55 + 0.4 * g.uniform())
        rgb[mask] = color + 0.03 * g.standard_normal((int(mask.sum()), 3))
        lo, hi = bands[k]
        local = depths[k] + 0.25 * (hi - lo) * ((yy - cy) / size)
        depth[mask] = np.clip(local[mask], lo, hi)
        label[mask] = c
    for k in range(n):
        areas[k] = np.sum(label == classes[k])
    dominant = int(classes[int(np.argmax(areas))])
    rgb = np.clip(rgb, 0.0, 1.0).astype(np.float32)
    depth = np.clip(depth, 0.0, 1.0).astype(np.float32)[..., None]
    return rgb, depth, label, dominant


def _one(seed: int, i: int, size: int, mode: str, n_classes: int):
    rng = Rng(seed).split("sample", i)
    if mode == "segment":
        rgb, depth, label, _ = render_scene(rng, size, n_classes - 1, mode)
        return rgb, depth, (label + 1).astype(np.uint8)  # background is class 0
    rgb, depth, _, dominant = render_scene(rng, size, n_classes, mode)
    return rgb, depth, np.array([dominant], dtype=np.int32)


def gen_synthetic(seed: int, n_samples: int, size: int, mode: str, n_classes: int,
                  root: str | os.PathLike, workers: int = 1) -> DatasetManifest:
    """Write ``n_samples`` RDT triples plus ``manifest.txt`` under ``root``.

    Per-sample streams are split from ``seed``, so ``workers`` never changes the files.
    """
    if size < 32 or size % 32:
        raise ValueError(f"size must be a positive multiple of 32, got {size}")
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    if mode not in ("classify", "segment"):
        raise ValueError(f"mode must be 'classify' or 'segment', got {mode!r}")
    if mode == "segment" and n_classes < 2:
        raise ValueError("segment mode needs a background and at least one shape class")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)

    def job(i):
        rgb, depth, label = _one(seed, i, size, mode, n_classes)
        names = (f"rgb_{i:05d}.rdt", f"depth_{i:05d}.rdt", f"label_{i:05d}.rdt")
        for arr, name in zip((rgb, depth, label), names):
            save_rdt(arr, root / name)
        return names

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            samples = list(ex.map(job, range(n_samples)))
    else:
        samples = [job(i) for i in range(n_samples)]
    manifest = DatasetManifest(root, samples, n_classes, seed, RECIPE_VERSION, "all", mode)
    manifest.write()
    return manifest
