"""Per-view 2D feature and saliency maps from depth images.

The built-in extractor is a frozen, seeded 3-layer strided convolution bank
standing in for a pretrained 2D backbone; it is a pure function of the depth
map and the seed, and its weights are never trained. Externally computed
features can be injected instead via the ``file`` extractor, which reads the
tensor-file format below.

Tensor file format: magic ``I2PF``, version u32, rank u32, extents u64 each,
payload little-endian float64. Files are named ``<sample_id>.<axis>.feat``
and ``<sample_id>.<axis>.sal``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, ShapeError
from .projection import DepthMap, GridMap

MAGIC = b"I2PF"
VERSION = 1


def _split_stride(total: int) -> tuple[int, int, int]:
    """Factor the total downsampling into three layer strides."""
    strides = [1, 1, 1]
    rest = total
    for i in range(2):
        f = _smallest_factor(rest)
        strides[i] = f
        rest //= f
    strides[2] = rest
    # largest stride first so early layers shrink the image fastest
    return tuple(sorted(strides, reverse=True))


def _smallest_factor(n: int) -> int:
    if n == 1:
        return 1
    for f in range(2, n + 1):
        if n % f == 0:
            return f
    return n


@dataclass
class Extractor:
    """Frozen 2D backbone: ``stub`` (seeded filter bank) or ``file`` import."""

    kind: str = "stub"
    channels: int = 384
    out_grid: int = 14
    stub_seed: int = 0
    file_dir: str | None = None
    _layers: list | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("stub", "file"):
            raise InputError(f"extractor kind must be 'stub' or 'file', got {self.kind!r}")
        if self.kind == "file" and not self.file_dir:
            raise InputError("file extractor needs file_dir")

    def _build_stub(self, total_stride: int):
        """Draw the conv stack once; weights N(0, fan_in^-1/2), small biases."""
        strides = _split_stride(total_stride)
        rng = np.random.default_rng(self.stub_seed)
        chans = [1, max(self.channels // 4, 4), max(self.channels // 2, 8), self.channels]
        layers = []
        for (cin, cout), s in zip(zip(chans[:-1], chans[1:]), strides):
            fan_in = cin * s * s
            w = rng.normal(scale=fan_in ** -0.5, size=(cout, cin, s, s))
            b = rng.normal(scale=0.01, size=cout)
            layers.append((w, b, s))
        self._layers = layers


def _conv_blocks(x: np.ndarray, w: np.ndarray, b: np.ndarray, s: int) -> np.ndarray:
    """Non-overlapping conv (kernel == stride) followed by bias and ReLU."""
    cin, h, w_in = x.shape
    if s == 1:
        out = np.einsum("chw,oc->ohw", x, w[:, :, 0, 0])
    else:
        blocks = x.reshape(cin, h // s, s, w_in // s, s)
        out = np.einsum("chawb,ocab->ohw", blocks, w)
    out += b[:, None, None]
    np.maximum(out, 0.0, out=out)
    return out


def extract_features(ex: Extractor, depth: DepthMap, sample_id: str | None = None) -> GridMap:
    """H×W×C feature grid for one view; deterministic and side-effect free."""
    h_img, w_img = depth.resolution
    if h_img % ex.out_grid or w_img % ex.out_grid:
        raise InputError(
            f"depth resolution {depth.resolution} not divisible by grid {ex.out_grid}")
    if ex.kind == "file":
        if sample_id is None:
            raise InputError("file extractor needs a sample_id to locate tensors")
        grid = load_tensor_file(Path(ex.file_dir) / f"{sample_id}.{depth.axis}.feat", axis=depth.axis)
        if grid.grid != (ex.out_grid, ex.out_grid) or grid.channels != ex.channels:
            raise ShapeError(
                f"imported features {grid.values.shape} do not match "
                f"extractor ({ex.out_grid}×{ex.out_grid}×{ex.channels})")
        return grid
    total = h_img // ex.out_grid
    if ex._layers is None:
        ex._build_stub(total)
    x = depth.pixels[None, :, :]
    for w, b, s in ex._layers:
        x = _conv_blocks(x, w, b, s)
    return GridMap(axis=depth.axis, values=np.ascontiguousarray(x.transpose(1, 2, 0)))


def extract_saliency(features: GridMap) -> GridMap:
    """Per-cell maximum over the feature channels, H×W×1."""
    sal = features.values.max(axis=2, keepdims=True)
    return GridMap(axis=features.axis, values=sal)


def view_representations(ex: Extractor, depth: DepthMap,
                         sample_id: str | None = None) -> tuple[GridMap, GridMap]:
    """Features plus saliency for one view.

    The file extractor prefers an imported ``.sal`` tensor when present and
    falls back to channel max-pooling of the imported features.
    """
    feats = extract_features(ex, depth, sample_id)
    if ex.kind == "file":
        sal_path = Path(ex.file_dir) / f"{sample_id}.{depth.axis}.sal"
        if sal_path.exists():
            return feats, load_tensor_file(sal_path, axis=depth.axis)
    return feats, extract_saliency(feats)


# ---------------------------------------------------------------------------
# tensor file I/O
# ---------------------------------------------------------------------------

def save_tensor_file(grid: GridMap, path) -> None:
    arr = np.ascontiguousarray(grid.values, dtype="<f8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.tobytes())


def load_tensor_file(path, axis: str = "x") -> GridMap:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header")
    version, rank = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 12
    if len(blob) < off + 8 * rank:
        raise FormatError(f"{path}: truncated extents")
    shape = struct.unpack_from(f"<{rank}Q", blob, off)
    off += 8 * rank
    n = int(np.prod(shape)) if rank else 1
    if len(blob) != off + 8 * n:
        raise FormatError(f"{path}: payload size {len(blob) - off} bytes, expected {8 * n}")
    values = np.frombuffer(blob, dtype="<f8", offset=off).reshape(shape).astype(np.float64)
    if values.ndim != 3:
        raise FormatError(f"{path}: expected a rank-3 H×W×C tensor, got rank {values.ndim}")
    return GridMap(axis=axis, values=values)
