"""Labeled samples: benchmark-style directory loading and seeded synthetic generation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pnm

STYLES = ("bars", "blobs", "grids")
DEFECT_KINDS = ("patch", "scratch", "hole")
IMAGE_EXTS = (".ppm", ".pgm")


class DataError(ValueError):
    pass


@dataclass
class LabeledSample:
    image: np.ndarray  # [H, W, 3] in [0, 1]
    mask: np.ndarray  # [H, W] in {0, 1}
    label: int
    name: str = ""

    def __post_init__(self):
        if int(self.mask.max(initial=0) > 0) != int(self.label):
            raise DataError(f"{self.name or 'sample'}: label {self.label} disagrees with mask")


# ---- synthetic --------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    n_normal: int = 100
    n_abnormal: int = 100
    category_style: str = "bars"
    defect_kinds: tuple[str, ...] = DEFECT_KINDS
    resolution: int = 32

    def __post_init__(self):
        if self.resolution <= 0:
            raise DataError("resolution must be positive")
        if self.n_normal < 0 or self.n_abnormal < 0:
            raise DataError("sample counts must be non-negative")
        if self.category_style not in STYLES:
            raise DataError(f"unknown category style {self.category_style!r}; choose from {STYLES}")
        if not self.defect_kinds or any(k not in DEFECT_KINDS for k in self.defect_kinds):
            raise DataError(f"defect kinds must be a nonempty subset of {DEFECT_KINDS}")


def parse_synth(text: str, resolution: int = 32) -> SynthSpec:
    """Parse ``synth:seed=7,n=200,style=bars,defects=patch+hole`` (``n`` splits evenly)."""
    body = text[len("synth:"):] if text.startswith("synth:") else text
    kw: dict = {"resolution": resolution}
    n_total = None
    for item in filter(None, (s.strip() for s in body.split(","))):
        if "=" not in item:
            raise DataError(f"bad synthetic spec item {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        try:
            if key == "seed":
                kw["seed"] = int(value)
            elif key == "n":
                n_total = int(value)
            elif key in ("n_normal", "normal"):
                kw["n_normal"] = int(value)
            elif key in ("n_abnormal", "abnormal"):
                kw["n_abnormal"] = int(value)
            elif key in ("style", "category_style"):
                kw["category_style"] = value
            elif key in ("defects", "defect_kinds"):
                kw["defect_kinds"] = tuple(v for v in value.split("+") if v)
            elif key in ("res", "resolution"):
                kw["resolution"] = int(value)
            else:
                raise DataError(f"unknown synthetic spec key {key!r}")
        except ValueError:
            raise DataError(f"bad value for {key}: {value!r}") from None
    if n_total is not None:
        kw.setdefault("n_normal", n_total // 2)
        kw.setdefault("n_abnormal", n_total - n_total // 2)
    return SynthSpec(**kw)


def _background(rng: np.random.Generator, style: str, res: int) -> np.ndarray:
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64)
    base = rng.uniform(0.35, 0.65)
    if style == "bars":
        period = rng.integers(4, 11)
        phase = rng.uniform(0, period)
        coord = xx if rng.random() < 0.5 else yy
        duty = rng.uniform(0.3, 0.7)
        on = ((coord + phase) % period) < duty * period
        g = base + np.where(on, 1.0, -1.0) * rng.uniform(0.04, 0.2)
    elif style == "blobs":
        g = np.full((res, res), base)
        for _ in range(rng.integers(3, 7)):
            cy, cx = rng.uniform(0, res, 2)
            s = rng.uniform(res / 10, res / 4)
            g += rng.uniform(-0.15, 0.15) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    else:
        period = rng.integers(5, 10)
        width = rng.integers(1, 3)
        oy, ox = rng.integers(0, period, 2)
        lines = (((yy + oy) % period) < width) | (((xx + ox) % period) < width)
        g = base + np.where(lines, -1.0, 0.4) * rng.uniform(0.06, 0.14)
    tint = rng.uniform(-0.02, 0.02, 3)
    img = g[..., None] + tint
    img += rng.normal(0.0, 0.01, img.shape)
    return img


def _defect_mask(rng: np.random.Generator, kind: str, res: int) -> np.ndarray:
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64)
    margin = res // 8
    if kind == "patch":
        hh, ww = rng.integers(res // 5, res // 3 + 1, 2)
        y0 = rng.integers(margin, res - margin - hh + 1)
        x0 = rng.integers(margin, res - margin - ww + 1)
        mask = (yy >= y0) & (yy < y0 + hh) & (xx >= x0) & (xx < x0 + ww)
    elif kind == "hole":
        radius = rng.uniform(res / 10, res / 6)
        cy, cx = rng.uniform(margin + radius, res - margin - radius, 2)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    else:
        length = rng.uniform(res / 3, res / 1.8)
        angle = rng.uniform(0, np.pi)
        cy, cx = rng.uniform(res / 3, 2 * res / 3, 2)
        dy, dx = np.sin(angle), np.cos(angle)
        t = (yy - cy) * dy + (xx - cx) * dx
        dist = np.abs((yy - cy) * dx - (xx - cx) * dy)
        mask = (np.abs(t) <= length / 2) & (dist <= max(1.0, res / 20))
    return mask


_DEFECT_COLORS = {
    "patch": (0.95, 0.45, 0.20),
    "scratch": (0.90, 0.35, 0.15),
    "hole": (0.45, 0.08, 0.02),
}


def _sample(rng: np.random.Generator, spec: SynthSpec, abnormal: bool, name: str) -> LabeledSample:
    res = spec.resolution
    img = _background(rng, spec.category_style, res)
    mask = np.zeros((res, res))
    if abnormal:
        kind = spec.defect_kinds[rng.integers(len(spec.defect_kinds))]
        m = _defect_mask(rng, kind, res)
        if not m.any():
            m[res // 2, res // 2] = True
        color = np.asarray(_DEFECT_COLORS[kind]) + rng.uniform(-0.04, 0.04, 3)
        img[m] = color + rng.normal(0.0, 0.01, (int(m.sum()), 3))
        mask = m.astype(np.float64)
    img = np.clip(img, 0.0, 1.0)
    return LabeledSample(img, mask, int(abnormal), name)


def generate_synthetic(spec: SynthSpec) -> list[LabeledSample]:
    """Seeded dataset: normals first, then abnormals; a pure function of ``spec``."""
    rng = np.random.default_rng(spec.seed)
    out = []
    for i in range(spec.n_normal):
        out.append(_sample(rng, spec, False, f"{spec.category_style}/good/{i:04d}"))
    for i in range(spec.n_abnormal):
        out.append(_sample(rng, spec, True, f"{spec.category_style}/defect/{i:04d}"))
    return out


# ---- directory layout -------------------------------------------------------


@dataclass(frozen=True)
class DatasetSpec:
    root: Path
    categories: tuple[str, ...] = ()
    split: str = "test"
    resolution: int | None = None

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise DataError(f"split must be 'train' or 'test', got {self.split!r}")


def _as_rgb(img: np.ndarray) -> np.ndarray:
    return np.repeat(img[..., None], 3, axis=2) if img.ndim == 2 else img


def _find_mask(gt_dir: Path, stem: str) -> Path | None:
    for candidate in (f"{stem}_mask.pgm", f"{stem}.pgm"):
        path = gt_dir / candidate
        if path.is_file():
            return path
    return None


def _image_files(folder: Path) -> list[Path]:
    if not folder.is_dir():
        return []
    return sorted(
        (f for f in folder.iterdir() if f.suffix.lower() in IMAGE_EXTS and f.is_file()),
        key=lambda f: f.name.encode("utf-8"),
    )


def _subdirs(folder: Path) -> list[Path]:
    if not folder.is_dir():
        return []
    return sorted((d for d in folder.iterdir() if d.is_dir()), key=lambda d: d.name.encode("utf-8"))


def load_dataset(spec: DatasetSpec) -> list[LabeledSample]:
    """Read ``<root>/<category>/{train/good, test/<defect>, ground_truth/<defect>}``."""
    root = Path(spec.root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    categories = spec.categories or tuple(d.name for d in _subdirs(root))
    samples = []
    for category in sorted(categories, key=lambda c: c.encode("utf-8")):
        cat_dir = root / category
        split_dir = cat_dir / spec.split
        for sub in _subdirs(split_dir):
            for path in _image_files(sub):
                try:
                    img = _as_rgb(pnm.read_image(path))
                except pnm.PNMError as exc:
                    raise DataError(str(exc)) from None
                if spec.resolution is not None and img.shape[:2] != (spec.resolution, spec.resolution):
                    raise DataError(f"{path}: expected {spec.resolution}x{spec.resolution}, got {img.shape[1]}x{img.shape[0]}")
                rel = f"{category}/{spec.split}/{sub.name}/{path.name}"
                if sub.name == "good":
                    samples.append(LabeledSample(img, np.zeros(img.shape[:2]), 0, rel))
                    continue
                mask_path = _find_mask(cat_dir / "ground_truth" / sub.name, path.stem)
                if mask_path is None:
                    raise DataError(f"missing mask for defect image {path}")
                try:
                    mask = pnm.read_image(mask_path)
                except pnm.PNMError as exc:
                    raise DataError(str(exc)) from None
                if mask.ndim != 2:
                    raise DataError(f"{mask_path}: mask must be a P5 graymap")
                if mask.shape != img.shape[:2]:
                    raise DataError(f"{mask_path}: mask resolution {mask.shape} differs from image {img.shape[:2]}")
                mask = (mask >= 0.5).astype(np.float64)
                samples.append(LabeledSample(img, mask, int(mask.any()), rel))
    return samples


def write_dataset(samples, root, category: str, split: str = "test") -> None:
    """Write samples in the directory layout ``load_dataset`` reads (images as P6)."""
    root = Path(root) / category
    for i, s in enumerate(samples):
        sub = "good" if s.label == 0 else "defect"
        folder = root / split / sub
        folder.mkdir(parents=True, exist_ok=True)
        pnm.write_image(folder / f"{i:04d}.ppm", s.image)
        if s.label:
            gt = root / "ground_truth" / sub
            gt.mkdir(parents=True, exist_ok=True)
            pnm.write_image(gt / f"{i:04d}_mask.pgm", s.mask)


def resolve_data(source: str, resolution: int, split: str = "test") -> list[LabeledSample]:
    """A ``synth:...`` spec or a dataset root directory."""
    if source.startswith("synth:"):
        return generate_synthetic(parse_synth(source, resolution))
    return load_dataset(DatasetSpec(Path(source), split=split, resolution=resolution))
