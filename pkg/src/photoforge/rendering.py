"""Rasterization of fringe patterns and the image preprocessing chain.

Images are square 8-bit grayscale arrays indexed [row, col] with row 0 at
the top. The pixel grid is centred on the particle: column c has
x = (c + 0.5) * pixel_size - side * pixel_size / 2 and row r has
y = side * pixel_size / 2 - (r + 0.5) * pixel_size, so +y points up and a
180 degree turn of the force list is exactly a 180 degree turn of the
pixel lattice. Pixels whose centre lies outside the disc stay at the
background value 0.

Quantization everywhere is round-half-away-from-zero, stated once here so
outputs are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .elastic import ForceList, ParticleSpec, intensity_field


@dataclass(frozen=True)
class ImageSpec:
    """Physical raster parameters: metres per pixel and the background gray."""

    pixel_size: float = 0.00019
    background: int = 0

    def __post_init__(self) -> None:
        if not self.pixel_size > 0.0:
            raise ValueError(f"pixel size must be > 0, got {self.pixel_size}")

    def side(self, radius: float) -> int:
        """Pixels per edge: the tight square covering the particle."""
        return max(1, math.ceil(2.0 * radius / self.pixel_size))


@dataclass(frozen=True)
class IntensityImage:
    """8-bit grayscale image with its physical pixel size."""

    pixels: np.ndarray
    pixel_size: float

    def __post_init__(self) -> None:
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 2:
            raise ValueError("pixels must be a 2-D uint8 array")
        pixels = self.pixels.copy()
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, IntensityImage):
            return NotImplemented
        return self.pixel_size == other.pixel_size and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.pixel_size, self.pixels.tobytes()))


def quantize(values: np.ndarray) -> np.ndarray:
    """Round half away from zero to uint8 (inputs are non-negative gray values)."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def pixel_centers(side: int, pixel_size: float) -> tuple[np.ndarray, np.ndarray]:
    """1-D physical coordinates of column centres (x) and row centres (y)."""
    half = side * pixel_size / 2.0
    x = (np.arange(side) + 0.5) * pixel_size - half
    y = half - (np.arange(side) + 0.5) * pixel_size
    return x, y


def render_float(
    forces: ForceList, particle: ParticleSpec, spec: ImageSpec | None = None
) -> np.ndarray:
    """Continuous intensity raster before quantization (float64, 0 outside the disc)."""
    spec = spec or ImageSpec()
    side = spec.side(particle.radius)
    x, y = pixel_centers(side, spec.pixel_size)
    X, Y = np.meshgrid(x, y)
    inside = np.hypot(X, Y) <= particle.radius
    out = np.full((side, side), float(spec.background))
    out[inside] = intensity_field(X[inside], Y[inside], forces, particle)
    return out


def render(
    forces: ForceList, particle: ParticleSpec, spec: ImageSpec | None = None
) -> IntensityImage:
    """Quantized fringe pattern of the force list."""
    spec = spec or ImageSpec()
    return IntensityImage(quantize(render_float(forces, particle, spec)), spec.pixel_size)


def rotate_image(img: IntensityImage, angle: float) -> IntensityImage:
    """Rotate the image content counterclockwise (in the +y-up physical frame).

    Inverse mapping about the image centre with nearest-neighbour sampling;
    source positions outside the frame give background 0. Multiples of 90
    degrees land exactly on the pixel lattice, so those rotations are exact
    permutations. Rotating labels alongside is the dataset module's job.
    """
    if img.width != img.height:
        raise ValueError(f"rotation requires a square image, got {img.width}x{img.height}")
    side = img.width
    centre = (side - 1) / 2.0
    r, c = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    # Physical offsets in pixel units (+y up means the row axis is flipped).
    px = c - centre
    py = centre - r
    cos_t, sin_t = math.cos(angle), math.sin(angle)
    sx = px * cos_t + py * sin_t
    sy = -px * sin_t + py * cos_t
    src_c = np.floor(centre + sx + 0.5).astype(int)
    src_r = np.floor(centre - sy + 0.5).astype(int)
    valid = (src_r >= 0) & (src_r < side) & (src_c >= 0) & (src_c < side)
    out = np.zeros((side, side), dtype=np.uint8)
    out[valid] = img.pixels[src_r[valid], src_c[valid]]
    return IntensityImage(out, img.pixel_size)


def resize_nearest(img: IntensityImage, target_side: int) -> IntensityImage:
    """Nearest-neighbour resize with source index floor(dst * src / target)."""
    if target_side < 1:
        raise ValueError(f"target side must be >= 1, got {target_side}")
    src_r = np.arange(target_side) * img.height // target_side
    src_c = np.arange(target_side) * img.width // target_side
    out = img.pixels[np.ix_(src_r, src_c)]
    scale = img.width / target_side
    return IntensityImage(out.astype(np.uint8), img.pixel_size * scale)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ceil(3 sigma)."""
    if not sigma > 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    k = np.exp(-np.arange(-radius, radius + 1) ** 2 / (2.0 * sigma**2))
    return k / k.sum()


def gaussian_blur(img: IntensityImage, sigma: float) -> IntensityImage:
    """Separable Gaussian blur: float accumulation, mirrored edges, one final rounding."""
    kernel = gaussian_kernel(sigma)
    radius = len(kernel) // 2
    data = img.pixels.astype(np.float64)
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(data, pad, mode="symmetric")
        acc = np.zeros_like(data)
        for k, w in enumerate(kernel):
            if axis == 0:
                acc += w * padded[k : k + data.shape[0], :]
            else:
                acc += w * padded[:, k : k + data.shape[1]]
        data = acc
    return IntensityImage(quantize(data), img.pixel_size)


def preprocess(
    img: IntensityImage,
    angle: float = 0.0,
    target_side: int = 128,
    blur_sigma: float = 1.0,
) -> IntensityImage:
    """Augmentation chain in fixed order: rotate, resize, blur."""
    return gaussian_blur(resize_nearest(rotate_image(img, angle), target_side), blur_sigma)


def save_png(img: IntensityImage, path) -> None:
    Image.fromarray(np.asarray(img.pixels), mode="L").save(path, format="PNG")


def load_png(path, pixel_size: float) -> IntensityImage:
    with Image.open(path) as im:
        return IntensityImage(np.asarray(im.convert("L"), dtype=np.uint8), pixel_size)
