"""Procedural multi-domain dataset.

Real samples are smooth radial "face" blobs with texture and an analytic dome
depth label; spoof samples composite the same content with a presentation
artifact (grid moire, shading flattening, or color cast) and carry a zero
depth label.  A per-domain style transform (background level, hue shift,
contrast, blur, noise) is applied last, so domains share content statistics
but differ in appearance.  Every sample is a pure function of
(seed, domain, class, size).
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .style import REAL, SPOOF
from .tensor import Rng, _mix

MAGIC = b"IADG"
FORMAT_VERSION = 1


@dataclass
class DomainSpec:
    id: str
    hue_shift: tuple
    contrast: float
    blur_sigma: float
    noise_std: float
    background_level: float
    grain_amp: float = 0.0     # sensor-grain amplitude (post-blur, both classes)
    grain_period: float = 4.0  # sensor-grain period in pixels
    # signed class-conditional chroma-noise bias: positive = spoof captures
    # carry extra color noise in this domain, negative = live captures do
    chroma_bias: float = 0.0

    def to_dict(self):
        return {
            "id": self.id,
            "hue_shift": list(self.hue_shift),
            "contrast": self.contrast,
            "blur_sigma": self.blur_sigma,
            "noise_std": self.noise_std,
            "background_level": self.background_level,
            "grain_amp": self.grain_amp,
            "grain_period": self.grain_period,
            "chroma_bias": self.chroma_bias,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            id=d["id"], hue_shift=tuple(d["hue_shift"]), contrast=d["contrast"],
            blur_sigma=d["blur_sigma"], noise_std=d["noise_std"],
            background_level=d["background_level"],
            grain_amp=d.get("grain_amp", 0.0),
            grain_period=d.get("grain_period", 4.0),
            chroma_bias=d.get("chroma_bias", 0.0),
        )


def default_domains():
    """Four synthetic capture conditions, pairwise distinct in >= 2 parameters."""
    # The chroma biases sum to zero across domains, so for every leave-one-out
    # split the "color-noisy captures are spoofs" shortcut learned from the
    # three sources is anti-correlated with the held-out domain.
    return [
        DomainSpec("D0", (0.0, 0.0, 0.0), 1.0, 0.0, 0.0, 0.0,
                   chroma_bias=0.12),
        DomainSpec("D1", (0.18, -0.08, -0.14), 1.4, 0.0, 0.06, 0.18,
                   grain_amp=0.10, grain_period=3.0, chroma_bias=0.06),
        DomainSpec("D2", (-0.16, 0.08, 0.18), 0.8, 0.6, 0.02, -0.12,
                   grain_amp=0.04, grain_period=5.5, chroma_bias=-0.06),
        DomainSpec("D3", (0.10, 0.16, -0.12), 1.2, 0.7, 0.03, 0.20,
                   grain_amp=0.07, grain_period=4.0, chroma_bias=-0.12),
    ]


@dataclass
class SyntheticSample:
    image: np.ndarray   # (3, S, S) in [0, 1]
    y_cls: int          # REAL=1, SPOOF=0
    y_dep: np.ndarray   # (D, D) in [0, 1]; all-zero for spoof
    domain_id: str
    seed: int


@dataclass
class Dataset:
    images: np.ndarray      # (M, 3, S, S) float32
    y_cls: np.ndarray       # (M,) int8
    y_dep: np.ndarray       # (M, D, D) float32
    domain_ids: list
    seeds: np.ndarray       # (M,) uint64
    domains: list = field(default_factory=list)  # DomainSpec
    size: int = 0
    depth_size: int = 0

    def __len__(self):
        return self.images.shape[0]


# ---------------------------------------------------------------------------
# sample synthesis


def gen_content(seed, cls, size):
    """Domain-independent content: (image (3,S,S), face mask (S,S), dome (S,S))."""
    rng = Rng(seed, 0xC0)
    s = size
    cx = s / 2 + rng.uniform(-0.08, 0.08) * s
    cy = s / 2 + rng.uniform(-0.08, 0.08) * s
    radius = rng.uniform(0.30, 0.36) * s
    base = np.array([0.66, 0.50, 0.40]) + rng.uniform(-0.07, 0.07, 3)

    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64) + 0.5
    d2 = ((xx - cx) ** 2 + (yy - cy) ** 2) / radius**2
    mask = (d2 <= 1.0).astype(np.float64)
    dome = np.sqrt(np.clip(1.0 - d2, 0.0, None))

    fx, fy = rng.uniform(1.5, 3.0, 2)
    px, py = rng.uniform(0, 2 * np.pi, 2)
    texture = 0.06 * np.sin(2 * np.pi * fx * xx / s + px) * np.sin(2 * np.pi * fy * yy / s + py)

    shading = 0.25 + 0.90 * dome
    face = base[:, None, None] * shading[None] + texture[None]
    img = np.where(mask[None] > 0, face, 0.30)

    if cls == SPOOF:
        img = _apply_artifact(img, mask, dome, rng)
    return img, mask, dome


def _apply_artifact(img, mask, dome, rng):
    """Composite one spoof artifact chosen by the sample's own rng."""
    kind = int(rng.integers(0, 3))
    s = img.shape[1]
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    if kind == 0:  # grid moire (replay screen)
        period = float(rng.uniform(5.0, 7.0))
        amp = float(rng.uniform(0.22, 0.32))
        grid = np.sin(2 * np.pi * xx / period) * np.sin(2 * np.pi * yy / period)
        img = img + amp * grid[None]
    elif kind == 1:  # flatness: shading contrast removed (depth cue gone)
        keep = float(rng.uniform(0.18, 0.34))
        mean_face = (img * mask[None]).sum(axis=(1, 2)) / max(mask.sum(), 1.0)
        flat = mean_face[:, None, None] + keep * (img - mean_face[:, None, None])
        img = np.where(mask[None] > 0, flat, img)
    else:  # color cast with print-like partial flattening
        cast = np.array([0.12, -0.09, 0.07]) if rng.uniform(0, 1) < 0.5 \
            else np.array([-0.09, 0.10, -0.07])
        keep = float(rng.uniform(0.25, 0.42))
        mean_face = (img * mask[None]).sum(axis=(1, 2)) / max(mask.sum(), 1.0)
        flat = mean_face[:, None, None] + keep * (img - mean_face[:, None, None])
        img = np.where(mask[None] > 0, flat + cast[:, None, None], img)
    return img


def _apply_domain_style(img, mask, domain, seed, cls):
    """Background level, hue, contrast, blur, then grain and noise; [0, 1]."""
    out = img + domain.background_level * (1.0 - mask[None])
    out = out + np.asarray(domain.hue_shift)[:, None, None]
    out = (out - 0.5) * domain.contrast + 0.5
    if domain.blur_sigma > 0:
        out = ndimage.gaussian_filter(out, sigma=(0, domain.blur_sigma, domain.blur_sigma))
    noise_rng = Rng(seed, _mix(0xD0, _domain_key(domain.id)))
    if domain.grain_amp > 0:
        # capture-side grain applied after blur: high-frequency texture that
        # hits both classes, with a per-domain amplitude/period signature
        s = out.shape[1]
        yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
        phase = noise_rng.uniform(0, 2 * np.pi)
        pattern = np.sin(2 * np.pi * (xx + yy) / domain.grain_period + phase)
        out = out + domain.grain_amp * pattern[None]
    out = out + noise_rng.normal(domain.noise_std, out.shape)
    # class-conditional chroma noise: zero luminance sum per pixel, so it is
    # an appearance (style) cue rather than a brightness/texture cue
    amp = domain.chroma_bias if cls == SPOOF else -domain.chroma_bias
    if amp > 0:
        s = out.shape[1]
        c1 = noise_rng.normal(amp, (s, s))
        c2 = noise_rng.normal(amp, (s, s))
        u1 = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
        u2 = np.array([1.0, 1.0, -2.0]) / np.sqrt(6.0)
        # fade near the value bounds (one shared per-pixel weight keeps the
        # zero-luminance property) so clipping cannot rectify chroma into
        # a brightness cue
        head = np.minimum(out.min(axis=0), 1.0 - out.max(axis=0))
        w = np.clip(head / 0.15, 0.0, 1.0)
        out = out + w * (u1[:, None, None] * c1 + u2[:, None, None] * c2)
    return np.clip(out, 0.0, 1.0)


def _domain_key(domain_id):
    return int.from_bytes(domain_id.encode()[:8].ljust(8, b"\0"), "little")


def _depth_label(seed, cls, size, depth_size):
    if cls == SPOOF:
        return np.zeros((depth_size, depth_size))
    # same geometry as gen_content, sampled at label resolution
    rng = Rng(seed, 0xC0)
    s = size
    cx = s / 2 + rng.uniform(-0.08, 0.08) * s
    cy = s / 2 + rng.uniform(-0.08, 0.08) * s
    radius = rng.uniform(0.30, 0.36) * s
    step = s / depth_size
    yy, xx = (np.mgrid[0:depth_size, 0:depth_size].astype(np.float64) + 0.5) * step
    d2 = ((xx - cx) ** 2 + (yy - cy) ** 2) / radius**2
    dome = np.sqrt(np.clip(1.0 - d2, 0.0, None))
    peak = dome.max()
    return dome / peak if peak > 0 else dome


def gen_sample(seed, domain, cls, size=32, depth_size=None):
    if size < 16:
        raise ValueError(f"image size must be >= 16, got {size}")
    if depth_size is None:
        depth_size = size // 8
    img, mask, _ = gen_content(seed, cls, size)
    img = _apply_domain_style(img, mask, domain, seed, cls)
    return SyntheticSample(
        image=img, y_cls=int(cls), y_dep=_depth_label(seed, cls, size, depth_size),
        domain_id=domain.id, seed=int(seed),
    )


# ---------------------------------------------------------------------------
# splits


def _sample_seed(base_seed, domain_index, cls, index):
    return int(_mix(base_seed, _mix(domain_index + 1, (cls << 32) | index)))


def generate_domain(domains, domain_index, n_per_class, base_seed, size):
    domain = domains[domain_index]
    samples = []
    for cls in (REAL, SPOOF):
        for i in range(n_per_class):
            seed = _sample_seed(base_seed, domain_index, cls, i)
            samples.append(gen_sample(seed, domain, cls, size))
    return samples


def _pack(samples, domains, size):
    return Dataset(
        images=np.stack([s.image for s in samples]).astype(np.float32),
        y_cls=np.array([s.y_cls for s in samples], dtype=np.int8),
        y_dep=np.stack([s.y_dep for s in samples]).astype(np.float32),
        domain_ids=[s.domain_id for s in samples],
        seeds=np.array([s.seed for s in samples], dtype=np.uint64),
        domains=list(domains),
        size=size,
        depth_size=samples[0].y_dep.shape[0],
    )


def build_split(domains, n_per_class, holdout, seed, size=32):
    """Leave-one-domain-out split: (train on the rest, test on `holdout`)."""
    ids = [d.id for d in domains]
    if holdout not in ids:
        raise ValueError(f"holdout {holdout!r} not among domains {ids}")
    if len(domains) < 2:
        raise ValueError("need at least two domains")
    train, test = [], []
    for di in range(len(domains)):
        samples = generate_domain(domains, di, n_per_class, seed, size)
        (test if ids[di] == holdout else train).extend(samples)
    return _pack(train, [d for d in domains if d.id != holdout], size), \
        _pack(test, [d for d in domains if d.id == holdout], size)


def build_corpus(domains, n_per_class, seed, size=32):
    """All domains in one dataset (the on-disk corpus; split at load time)."""
    samples = []
    for di in range(len(domains)):
        samples.extend(generate_domain(domains, di, n_per_class, seed, size))
    return _pack(samples, domains, size)


def split_corpus(corpus, holdout, train_domains=None):
    """Partition a corpus by domain id.

    `train_domains` restricts the sources (the limited-source protocol);
    default is every non-holdout domain.
    """
    ids = [d.id for d in corpus.domains]
    if holdout not in ids:
        raise ValueError(f"holdout {holdout!r} not among domains {ids}")
    if train_domains is None:
        train_domains = [i for i in ids if i != holdout]
    if holdout in train_domains:
        raise ValueError("holdout cannot be a training domain")
    dom = np.array(corpus.domain_ids)
    def take(sel_ids):
        idx = np.flatnonzero(np.isin(dom, sel_ids))
        return Dataset(
            images=corpus.images[idx], y_cls=corpus.y_cls[idx], y_dep=corpus.y_dep[idx],
            domain_ids=[corpus.domain_ids[i] for i in idx], seeds=corpus.seeds[idx],
            domains=[d for d in corpus.domains if d.id in sel_ids],
            size=corpus.size, depth_size=corpus.depth_size,
        )
    return take(list(train_domains)), take([holdout])


# ---------------------------------------------------------------------------
# on-disk format


class DatasetFormatError(ValueError):
    """Malformed dataset file."""


def write_dataset(path, ds):
    """Magic 'IADG', version u16 LE, u32-length-prefixed JSON header, then raw
    float32 LE tensors at the offsets recorded in the header."""
    m, _, s, _ = ds.images.shape
    d = ds.depth_size
    img_bytes = 3 * s * s * 4
    dep_bytes = d * d * 4
    records = []
    offset = 0
    for i in range(m):
        records.append({
            "y_cls": int(ds.y_cls[i]),
            "domain": ds.domain_ids[i],
            "seed": int(ds.seeds[i]),
            "image_offset": offset,
            "depth_offset": offset + img_bytes,
        })
        offset += img_bytes + dep_bytes
    header = {
        "domains": [dom.to_dict() for dom in ds.domains],
        "count": m,
        "size": s,
        "depth_size": d,
        "data_bytes": offset,
        "records": records,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for i in range(m):
            fh.write(ds.images[i].astype("<f4").tobytes())
            fh.write(ds.y_dep[i].astype("<f4").tobytes())


def _read_header(fh):
    head = fh.read(6)
    if len(head) < 6 or head[:4] != MAGIC:
        raise DatasetFormatError(f"bad magic at byte 0: {head[:4]!r}")
    (version,) = struct.unpack("<H", head[4:6])
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported format version {version} at byte 4")
    raw_len = fh.read(4)
    if len(raw_len) < 4:
        raise DatasetFormatError("truncated header length at byte 6")
    (hlen,) = struct.unpack("<I", raw_len)
    blob = fh.read(hlen)
    if len(blob) < hlen:
        raise DatasetFormatError(f"truncated header at byte {10 + len(blob)}")
    try:
        header = json.loads(blob)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"invalid header JSON at byte {10 + e.pos}") from e
    return header, 10 + hlen


def probe_dataset(path):
    """Header only: counts and metadata without loading any tensors."""
    with open(path, "rb") as fh:
        header, _ = _read_header(fh)
    return header


def read_dataset(path):
    with open(path, "rb") as fh:
        header, data_start = _read_header(fh)
        data = fh.read()
    if len(data) < header["data_bytes"]:
        raise DatasetFormatError(
            f"truncated data section: expected {header['data_bytes']} bytes "
            f"from byte {data_start}, got {len(data)}")
    s, d, m = header["size"], header["depth_size"], header["count"]
    images = np.empty((m, 3, s, s), dtype=np.float32)
    depths = np.empty((m, d, d), dtype=np.float32)
    y_cls = np.empty(m, dtype=np.int8)
    seeds = np.empty(m, dtype=np.uint64)
    domain_ids = []
    for i, rec in enumerate(header["records"]):
        off = rec["image_offset"]
        images[i] = np.frombuffer(data, "<f4", 3 * s * s, off).reshape(3, s, s)
        depths[i] = np.frombuffer(data, "<f4", d * d, rec["depth_offset"]).reshape(d, d)
        y_cls[i] = rec["y_cls"]
        seeds[i] = rec["seed"]
        domain_ids.append(rec["domain"])
    return Dataset(
        images=images, y_cls=y_cls, y_dep=depths, domain_ids=domain_ids, seeds=seeds,
        domains=[DomainSpec.from_dict(x) for x in header["domains"]],
        size=s, depth_size=d,
    )


# ---------------------------------------------------------------------------
# dataset sanity probes


def probe_features(image):
    """(artifact energy, depth cue) for the 2-feature separability probe.

    Artifact energy is high-frequency residual energy; the depth cue is the
    center-vs-ring luminance drop that dome shading produces and flat
    spoofs lack.
    """
    img = np.asarray(image, dtype=np.float64)
    lum = img.mean(axis=0)
    denoised = ndimage.gaussian_filter(lum, sigma=0.8)
    hf = float(np.abs(denoised - ndimage.gaussian_filter(lum, sigma=2.0)).mean())
    s = lum.shape[0]
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64) + 0.5
    r2 = (xx - s / 2) ** 2 + (yy - s / 2) ** 2
    low = ndimage.gaussian_filter(lum, sigma=1.5)
    inner = low[r2 <= (0.10 * s) ** 2].mean()
    ring = low[(r2 > (0.16 * s) ** 2) & (r2 <= (0.24 * s) ** 2)].mean()
    return hf, float(inner - ring)
