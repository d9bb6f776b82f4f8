"""Unsupervised Student-t noise estimation for grayscale images.

Blocks of the image are tested for being constant with Kendall's tau
between neighbouring pixels. Accepted blocks are treated as i.i.d. samples
of a univariate Student-t law whose parameters are fitted with the myriad
filter (MMF) iteration; the per-block estimates of nu and sigma are then
averaged.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .estimators import AlgorithmKind, FitConfig, FitStatus, fit
from .model import StudentTParams, WeightedSample, sample


class NoConstantRegions(RuntimeError):
    """No block passed the homogeneity test at any block size."""


class ImageFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GrayImage:
    """Grayscale image stored as a ``(height, width)`` float array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=float)
        if px.ndim != 2 or px.size == 0:
            raise ImageFormatError(f"expected a non-empty 2-d pixel array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ImageFormatError("image has non-finite pixel values")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def block(self, x: int, y: int, side: int) -> np.ndarray:
        return self.pixels[y : y + side, x : x + side]


@dataclass(frozen=True)
class HomogeneityTestConfig:
    alpha_level: float = 0.05
    initial_block: int = 64
    min_block: int = 8
    min_regions: int = 20

    def __post_init__(self):
        if not 0.0 < self.alpha_level < 1.0:
            raise ValueError("alpha_level must lie in (0, 1)")
        for name in ("initial_block", "min_block"):
            v = getattr(self, name)
            if v < 2 or v & (v - 1):
                raise ValueError(f"{name} must be a power of two >= 2, got {v}")
        if self.min_block > self.initial_block:
            raise ValueError("min_block must not exceed initial_block")
        if self.min_regions < 1:
            raise ValueError("min_regions must be at least 1")

    def sides(self) -> list[int]:
        out = []
        side = self.initial_block
        while side >= self.min_block:
            out.append(side)
            side //= 2
        return out


# -- Kendall's tau -------------------------------------------------------------


def _tie_pairs(sorted_values: np.ndarray) -> int:
    """Number of tied pairs in an already sorted array."""
    if sorted_values.size < 2:
        return 0
    breaks = np.flatnonzero(sorted_values[1:] != sorted_values[:-1]) + 1
    counts = np.diff(np.concatenate(([0], breaks, [sorted_values.size])))
    return int(np.sum(counts * (counts - 1) // 2))


def _joint_tie_pairs(xs: np.ndarray, ys: np.ndarray) -> int:
    # xs, ys sorted lexicographically by (x, y)
    if xs.size < 2:
        return 0
    change = (xs[1:] != xs[:-1]) | (ys[1:] != ys[:-1])
    breaks = np.flatnonzero(change) + 1
    counts = np.diff(np.concatenate(([0], breaks, [xs.size])))
    return int(np.sum(counts * (counts - 1) // 2))


def count_inversions(a) -> int:
    """Number of pairs ``i < j`` with ``a[i] > a[j]`` (ties are not inversions).

    Bottom-up merge counting, vectorised one level at a time: at width ``w``
    every element of a right half-run is compared against the left half-run
    of the same ``2w`` block through one stable lexicographic sort.
    """
    a = np.asarray(a)
    n = a.size
    idx = np.arange(n)
    total = 0
    w = 1
    while w < n:
        block = idx // (2 * w)
        right = (idx % (2 * w)) >= w
        # left before right on equal values, so ties never count
        order = np.lexsort((right, a, block))
        is_left = ~right[order]
        blk = block[order]
        cum_left = np.cumsum(is_left)
        first = np.searchsorted(blk, blk, side="left")
        left_before = cum_left - np.where(first > 0, cum_left[first - 1], 0)
        left_in_block = np.bincount(block, weights=~right).astype(np.int64)[blk]
        rs = ~is_left
        total += int(np.sum(left_in_block[rs] - left_before[rs]))
        w *= 2
    return total


def _kendall_counts(x, y):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    n = x.size
    if n < 2:
        raise ValueError("Kendall's tau needs at least two pairs")
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    n0 = n * (n - 1) // 2
    n1 = _tie_pairs(xs)
    n2 = _tie_pairs(np.sort(y))
    n3 = _joint_tie_pairs(xs, ys)
    discordant = count_inversions(ys)
    # Knight: n_c - n_d = n0 - n1 - n2 + n3 - 2 * (strict inversions)
    s = n0 - n1 - n2 + n3 - 2 * discordant
    return n, n0, n1, n2, s


def kendall_tau(x, y) -> float:
    """Kendall's rank correlation with the tau-b tie correction.

    Without ties this is ``(n_c - n_d) / (n (n - 1) / 2)``. With ties the
    denominator becomes ``sqrt((n0 - n1)(n0 - n2))``, where ``n1`` and ``n2``
    count pairs tied in ``x`` and in ``y``. If either sequence is constant
    the coefficient is defined as 0.
    """
    _, n0, n1, n2, s = _kendall_counts(x, y)
    den = (n0 - n1) * (n0 - n2)
    if den == 0:
        return 0.0
    return s / math.sqrt(den)


def z_score(x, y) -> float:
    """Normalised statistic ``3 sqrt(n(n-1)) tau / sqrt(2(2n+5))``.

    Asymptotically standard normal for independent continuous sequences.
    """
    n = len(x)
    tau = kendall_tau(x, y)
    return 3.0 * math.sqrt(n * (n - 1)) * tau / math.sqrt(2.0 * (2 * n + 5))


# -- block homogeneity test ------------------------------------------------------


def neighbour_pairs(block) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pixel/neighbour sequences for the horizontal, vertical and two diagonal relations.

    Pairs within one relation are disjoint: anchors sit on even columns
    (horizontal) or even rows (the other three), and each anchor is paired
    with its neighbour at offset (0,1), (1,0), (1,1) or (1,-1). No pixel is
    used twice in a sequence, so the pairs are independent under the
    constant-block hypothesis.
    """
    b = np.asarray(block, dtype=float)
    h, w = b.shape
    if h < 2 or w < 2:
        raise ValueError("block side must be at least 2")
    we = w - (w % 2)
    he = h - (h % 2)
    top, bottom = b[0:he:2], b[1:he:2]
    return [
        (b[:, 0:we:2].ravel(), b[:, 1:we:2].ravel()),
        (top.ravel(), bottom.ravel()),
        (top[:, :-1].ravel(), bottom[:, 1:].ravel()),
        (top[:, 1:].ravel(), bottom[:, :-1].ravel()),
    ]


def block_z_scores(block) -> np.ndarray:
    return np.array([z_score(a, b) for a, b in neighbour_pairs(block)])


def critical_value(alpha_level: float) -> float:
    return NormalDist().inv_cdf(1.0 - 0.5 * alpha_level)


def test_block_constant(block, alpha_level: float = 0.05) -> bool:
    """Return True when the block is accepted as constant.

    The hypothesis is rejected as soon as one of the four neighbour tests
    has ``|z| > Phi^{-1}(1 - alpha_level / 2)``.
    """
    crit = critical_value(alpha_level)
    for a, b in neighbour_pairs(block):
        if abs(z_score(a, b)) > crit:
            return False
    return True


# keep pytest from collecting the function above as a test
test_block_constant.__test__ = False


def detect_constant_regions(image: GrayImage, cfg: HomogeneityTestConfig = HomogeneityTestConfig()):
    """Accepted constant blocks as ``(x, y, side)`` tuples.

    The image is tiled with non-overlapping squares, starting at
    ``cfg.initial_block`` and halving the side until at least
    ``cfg.min_regions`` blocks are accepted. At the smallest side whatever
    was accepted is returned.

    Raises
    ------
    NoConstantRegions
        If no block is accepted at the smallest side.
    """
    accepted: list[tuple[int, int, int]] = []
    for side in cfg.sides():
        if side > image.height or side > image.width:
            continue
        accepted = []
        for y in range(0, image.height - side + 1, side):
            for x in range(0, image.width - side + 1, side):
                if test_block_constant(image.block(x, y, side), cfg.alpha_level):
                    accepted.append((x, y, side))
        if len(accepted) >= cfg.min_regions:
            return accepted
    if not accepted:
        raise NoConstantRegions(
            f"no constant block found down to side {cfg.min_block} (alpha = {cfg.alpha_level})"
        )
    return accepted


# -- estimation ------------------------------------------------------------------


@dataclass
class BlockEstimate:
    x: int
    y: int
    side: int
    nu: float
    sigma: float
    status: str


@dataclass
class RegionReport:
    """Outcome of ``estimate_noise``.

    ``blocks`` lists every accepted block, ``per_block`` the fits that
    entered the averages. Blocks whose fit failed or ran into the Gaussian
    limit are counted in ``failed_blocks`` and ``gaussian_blocks`` instead.
    """

    blocks: list
    per_block: list
    nu_arith: float
    nu_geom: float
    sigma_arith: float
    sigma_geom: float
    failed_blocks: int = 0
    gaussian_blocks: int = 0
    degenerate: bool = False
    alpha_level: float = 0.05
    meta: dict = field(default_factory=dict)

    @property
    def nus(self) -> np.ndarray:
        return np.array([b.nu for b in self.per_block])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([b.sigma for b in self.per_block])

    def to_dict(self) -> dict:
        out = asdict(self)
        out["blocks"] = [list(b) for b in self.blocks]
        for key in ("nu_arith", "nu_geom", "sigma_arith", "sigma_geom"):
            if not math.isfinite(out[key]):
                out[key] = None
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "RegionReport":
        d = dict(d)
        d["blocks"] = [tuple(b) for b in d["blocks"]]
        d["per_block"] = [BlockEstimate(**b) for b in d["per_block"]]
        for key in ("nu_arith", "nu_geom", "sigma_arith", "sigma_geom"):
            if d[key] is None:
                d[key] = math.nan
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RegionReport":
        return cls.from_dict(json.loads(text))


def _geometric_mean(v: np.ndarray) -> float:
    return float(np.exp(np.mean(np.log(v))))


def estimate_noise(
    image: GrayImage,
    cfg: HomogeneityTestConfig = HomogeneityTestConfig(),
    fit_cfg: FitConfig = FitConfig(),
) -> RegionReport:
    """Estimate Student-t noise parameters (nu, sigma) from constant image regions.

    Each accepted block is fitted with the MMF iteration in one dimension;
    the location is discarded and ``sigma = sqrt(Sigma)``. Aggregates are
    arithmetic and geometric means over the successfully fitted blocks.
    When no block could be fitted the aggregates are NaN and ``degenerate``
    is set.
    """
    blocks = detect_constant_regions(image, cfg)
    per_block = []
    failed = 0
    gaussian = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for x, y, side in blocks:
            values = image.block(x, y, side).reshape(-1, 1)
            try:
                res = fit(AlgorithmKind.MMF, WeightedSample(values), fit_cfg)
            except (ValueError, np.linalg.LinAlgError, ArithmeticError):
                failed += 1
                continue
            if res.status is FitStatus.GAUSSIAN_LIMIT:
                gaussian += 1
                continue
            if res.status is not FitStatus.CONVERGED:
                failed += 1
                continue
            sigma = math.sqrt(float(res.params.sigma.entries[0, 0]))
            per_block.append(BlockEstimate(x, y, side, float(res.params.nu), sigma, res.status.value))
    if per_block:
        nus = np.array([b.nu for b in per_block])
        sig = np.array([b.sigma for b in per_block])
        agg = (float(nus.mean()), _geometric_mean(nus), float(sig.mean()), _geometric_mean(sig))
    else:
        agg = (math.nan,) * 4
    return RegionReport(
        blocks=list(blocks),
        per_block=per_block,
        nu_arith=agg[0],
        nu_geom=agg[1],
        sigma_arith=agg[2],
        sigma_geom=agg[3],
        failed_blocks=failed,
        gaussian_blocks=gaussian,
        degenerate=not per_block,
        alpha_level=cfg.alpha_level,
    )


# -- synthetic test images ----------------------------------------------------------


def cartoon_image(size: int = 512) -> np.ndarray:
    """Noise-free piecewise smooth test image with flat areas, edges and ramps.

    The layout is a flat background with rectangles of different gray
    levels, a disc, a horizontal ramp band and a fine stripe pattern, so a
    homogeneity test has both constant and non-constant blocks to sort out.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(float) / size
    img = np.full((size, size), 100.0)
    img[(xx > 0.1) & (xx < 0.45) & (yy > 0.1) & (yy < 0.4)] = 160.0
    img[(xx > 0.55) & (xx < 0.9) & (yy > 0.15) & (yy < 0.35)] = 60.0
    img[(xx - 0.7) ** 2 + (yy - 0.65) ** 2 < 0.15**2] = 200.0
    band = (yy > 0.45) & (yy < 0.6) & (xx < 0.5)
    img[band] = 40.0 + 400.0 * xx[band]
    stripes = (yy > 0.75) & (yy < 0.9) & (xx > 0.05) & (xx < 0.45)
    img[stripes] = 120.0 + 60.0 * np.sign(np.sin(2 * np.pi * 16 * xx[stripes]))
    return img


def noisy_image(clean, nu: float, sigma: float, rng=None) -> GrayImage:
    """Add i.i.d. ``T_nu(0, sigma^2)`` noise to a clean image."""
    clean = np.asarray(clean, dtype=float)
    noise = sample(StudentTParams(nu, np.zeros(1), np.array([[sigma * sigma]])), clean.size, rng)
    return GrayImage(clean + noise.reshape(clean.shape))


# -- image I/O ------------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"#[^\n]*|\S+")


def _pgm_tokens(data: bytes, count: int, pos: int = 0):
    tokens = []
    while len(tokens) < count:
        m = _PGM_TOKEN.search(data, pos)
        if m is None:
            raise ImageFormatError("truncated PGM header")
        pos = m.end()
        if not m.group().startswith(b"#"):
            tokens.append(m.group())
    return tokens, pos


def parse_pgm(data: bytes) -> GrayImage:
    """Parse a plain (P2) or raw (P5) PGM image; 16-bit raw data is big-endian."""
    (magic, w, h, maxval), pos = _pgm_tokens(data, 4)
    try:
        width, height, maxv = int(w), int(h), int(maxval)
    except ValueError:
        raise ImageFormatError("PGM header fields must be integers") from None
    if width < 1 or height < 1 or not 0 < maxv < 65536:
        raise ImageFormatError(f"invalid PGM header: {width}x{height}, maxval {maxv}")
    count = width * height
    if magic == b"P2":
        fields = data[pos:].split()
        if len(fields) < count:
            raise ImageFormatError(f"PGM has {len(fields)} samples, expected {count}")
        px = np.array([int(f) for f in fields[:count]], dtype=np.int64)
    elif magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxv > 255 else np.dtype("u1")
        raw = data[pos : pos + count * dtype.itemsize]
        if len(raw) < count * dtype.itemsize:
            raise ImageFormatError("truncated P5 pixel data")
        px = np.frombuffer(raw, dtype=dtype).astype(np.int64)
    else:
        raise ImageFormatError(f"unsupported PGM magic {magic!r}")
    if np.any(px > maxv):
        raise ImageFormatError("pixel value exceeds maxval")
    return GrayImage(px.reshape(height, width).astype(float))


def read_csv_matrix(path) -> np.ndarray:
    """Read comma-separated reals, one row per line; a non-numeric first line is a header.

    Blank lines are skipped. Errors name the offending line.
    """
    rows = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            cells = [c.strip() for c in text.split(",")]
            try:
                vals = [float(c) for c in cells]
            except ValueError:
                if not rows and lineno == 1:
                    continue
                raise ValueError(f"{path}:{lineno}: cannot parse {text!r} as numbers") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ValueError(f"{path}:{lineno}: expected {width} columns, found {len(vals)}")
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def load_image(path) -> GrayImage:
    """Load a PGM (P2/P5) or CSV image; the format is detected from the content."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] in (b"P2", b"P5"):
        return parse_pgm(data)
    try:
        return GrayImage(read_csv_matrix(path))
    except ValueError as exc:
        raise ImageFormatError(str(exc)) from None


def write_pgm(path, pixels, binary: bool = True) -> None:
    """Write non-negative integer pixels as P5 (or P2 when ``binary`` is False)."""
    px = np.asarray(pixels)
    if px.ndim != 2:
        raise ValueError("expected a 2-d array")
    if not np.all(px == np.round(px)) or px.min() < 0 or px.max() > 65535:
        raise ValueError("PGM pixels must be integers in [0, 65535]")
    px = px.astype(np.int64)
    maxv = max(int(px.max()), 1)
    h, w = px.shape
    header = f"{'P5' if binary else 'P2'}\n{w} {h}\n{maxv}\n".encode()
    if binary:
        dtype = ">u2" if maxv > 255 else "u1"
        body = px.astype(dtype).tobytes()
    else:
        body = "\n".join(" ".join(str(v) for v in row) for row in px).encode() + b"\n"
    Path(path).write_bytes(header + body)


def write_csv_matrix(path, values) -> None:
    v = np.asarray(values)
    lines = [",".join(repr(float(c)) if v.dtype.kind == "f" else str(c) for c in row) for row in v]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
