"""
Dataset ingestion, occlusion and reconstruction metrics.

Images are read from IDX files (the MNIST distribution format, optionally
gzip-compressed), binarized at half of the maximum intensity and stored as
``int8`` arrays of shape (n, N, N).
"""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from artifacts import atomic_write_bytes
from errors import DimensionMismatchError, InvalidParameterError, MissingPrerequisiteError, ModelFormatError
from logging_config import get_logger
from logging_decorators import log_exceptions, log_function_calls

logger = get_logger(__name__)

PathLike = Union[str, Path]

# IDX type codes; only unsigned bytes are produced by the MNIST files
_IDX_DTYPES: Dict[int, str] = {
    0x08: ">u1",
    0x09: ">i1",
    0x0B: ">i2",
    0x0C: ">i4",
    0x0D: ">f4",
    0x0E: ">f8",
}
_IDX_CODES = {np.dtype(v).newbyteorder("=").str: k for k, v in _IDX_DTYPES.items()}

GEOMETRIES = ("contiguous-block", "random-pixels")
NORMALIZATIONS = ("all-over-known", "known-only", "all")

BINARIZE_THRESHOLD = 0.5


@dataclass
class Dataset:
    """
    Binary image collection.

    Attributes
    ----------
    images: int8 array (n, N, N) with values in {0, 1}
    labels: optional integer labels, one per image
    """

    images: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.int8)
        if self.images.ndim != 3 or self.images.shape[1] != self.images.shape[2]:
            raise DimensionMismatchError(f"images must have shape (n, N, N), got {self.images.shape}")
        if np.any((self.images != 0) & (self.images != 1)):
            raise InvalidParameterError("dataset images must be binary")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.images),):
                raise DimensionMismatchError(
                    f"{len(self.labels)} labels for {len(self.images)} images"
                )

    def __len__(self) -> int:
        return len(self.images)

    @property
    def side(self) -> int:
        return self.images.shape[1]

    @property
    def flat(self) -> np.ndarray:
        """Images as (n, N*N) rows, row-major pixels."""
        return self.images.reshape(len(self.images), -1)

    def subset(self, n: int, offset: int = 0) -> "Dataset":
        sl = slice(offset, offset + n)
        return Dataset(self.images[sl], None if self.labels is None else self.labels[sl])


def binarize(raw: np.ndarray, max_intensity: Optional[float] = None) -> np.ndarray:
    """1 where a pixel exceeds half of the maximum intensity (255 for byte images)."""
    raw = np.asarray(raw)
    if max_intensity is None:
        max_intensity = 255.0 if raw.dtype == np.uint8 else float(raw.max(initial=0) or 1.0)
    return (raw / max_intensity > BINARIZE_THRESHOLD).astype(np.int8)


def _open_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def parse_idx(blob: bytes) -> np.ndarray:
    """
    Decode an IDX byte string into an array.

    Raises
    ------
    ModelFormatError: malformed magic/header or payload length mismatch
    """
    if len(blob) < 4:
        raise ModelFormatError(f"IDX data too short for a header ({len(blob)} bytes)")
    zero, type_code, ndim = struct.unpack_from(">HBB", blob, 0)
    if zero != 0 or type_code not in _IDX_DTYPES or ndim == 0:
        raise ModelFormatError(f"malformed IDX magic: {blob[:4].hex()}")
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise ModelFormatError("IDX header truncated")
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    dtype = np.dtype(_IDX_DTYPES[type_code])
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(blob) - header_len != expected:
        raise ModelFormatError(
            f"IDX payload is {len(blob) - header_len} bytes, header announces {expected}"
        )
    return np.frombuffer(blob, dtype=dtype, offset=header_len).reshape(dims)


def encode_idx(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    key = array.dtype.newbyteorder("=").str
    if key not in _IDX_CODES:
        raise InvalidParameterError(f"dtype {array.dtype} has no IDX type code")
    code = _IDX_CODES[key]
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + array.astype(_IDX_DTYPES[code]).tobytes()


def save_idx(path: PathLike, array: np.ndarray) -> Path:
    """Write ``array`` as an (uncompressed) IDX file."""
    return atomic_write_bytes(path, encode_idx(array))


@log_exceptions("Dataset load failed")
@log_function_calls(include_params=True, include_result=False)
def load_mnist(path: PathLike, labels_path: Optional[PathLike] = None) -> Dataset:
    """
    Load an IDX image file (and optionally its label file) as a binary Dataset.

    Args
    ----
    path: images file, e.g. ``train-images-idx3-ubyte`` (``.gz`` accepted)
    labels_path: matching labels file

    Returns
    -------
    Dataset with images binarized at 0.5 of max intensity

    Raises
    ------
    MissingPrerequisiteError: a file does not exist
    ModelFormatError: malformed header, truncated payload or wrong rank
    """
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisiteError(f"dataset file not found: {path}")
    raw = parse_idx(_open_bytes(path))
    if raw.ndim != 3 or raw.shape[1] != raw.shape[2]:
        raise ModelFormatError(f"expected (n, N, N) images in {path}, got shape {raw.shape}")

    labels = None
    if labels_path is not None:
        labels_path = Path(labels_path)
        if not labels_path.exists():
            raise MissingPrerequisiteError(f"label file not found: {labels_path}")
        labels = parse_idx(_open_bytes(labels_path))
        if labels.ndim != 1:
            raise ModelFormatError(f"expected 1-D labels in {labels_path}, got shape {labels.shape}")

    dataset = Dataset(binarize(raw), labels)
    logger.info(f"Loaded {len(dataset)} images of {dataset.side}x{dataset.side} from {path}")
    return dataset


@dataclass(frozen=True)
class OcclusionSpec:
    """
    How much of an image to hide and where.

    Attributes
    ----------
    fraction: share of pixels removed, in [0, 1]
    geometry: "contiguous-block" (trailing rows, then a partial row) or "random-pixels"
    seed: generator seed for the random geometry
    """

    fraction: float
    geometry: str = "contiguous-block"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise InvalidParameterError(f"occlusion fraction must lie in [0, 1], got {self.fraction}")
        if self.geometry not in GEOMETRIES:
            raise InvalidParameterError(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")

    @classmethod
    def from_config(cls, section: Dict, seed: int = 0) -> "OcclusionSpec":
        return cls(float(section["fraction"]), section.get("geometry", "contiguous-block"), seed)

    def n_occluded(self, n_pixels: int) -> int:
        return int(np.floor(self.fraction * n_pixels + 0.5))


def occlusion_mask(shape: Tuple[int, ...], spec: OcclusionSpec, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Known-pixel mask (True = observed) for an image of ``shape``."""
    n_pixels = int(np.prod(shape))
    k = spec.n_occluded(n_pixels)
    known = np.ones(n_pixels, dtype=bool)
    if spec.geometry == "contiguous-block":
        if k:
            known[n_pixels - k:] = False
    else:
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        known[rng.choice(n_pixels, size=k, replace=False)] = False
    return known.reshape(shape)


def occlude(
    img: np.ndarray, spec: OcclusionSpec, rng: Optional[np.random.Generator] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Remove part of an image.

    Returns
    -------
    (corrupted image with occluded pixels set to 0, known-pixel mask)
    """
    img = np.asarray(img, dtype=np.int8)
    known = occlusion_mask(img.shape, spec, rng)
    return np.where(known, img, 0).astype(np.int8), known


def hamming_metric(
    original: np.ndarray,
    reconstructed: np.ndarray,
    known_mask: Optional[np.ndarray] = None,
    normalization: str = "all-over-known",
) -> Union[float, np.ndarray]:
    """
    Normalised Hamming distance between binary images.

    Args
    ----
    original, reconstructed: arrays of one image shape, or batches with a
        leading axis over the image shape of ``known_mask``
    known_mask: observed-pixel mask with the image shape; None means all known
    normalization:
        "all-over-known": mismatches over all pixels / number of known pixels
        "known-only": mismatches over known pixels / number of known pixels;
            always 0 for reconstructions that clamp the known pixels, so it
            only says something about unclamped runs
        "all": mismatches over all pixels / number of pixels

    When no pixel is known the known-pixel normalisations divide by the pixel
    count instead.

    Raises
    ------
    DimensionMismatchError: shapes differ
    InvalidParameterError: unknown normalization
    """
    original = np.asarray(original)
    reconstructed = np.asarray(reconstructed)
    if original.shape != reconstructed.shape:
        raise DimensionMismatchError(f"image shapes differ: {original.shape} vs {reconstructed.shape}")
    if normalization not in NORMALIZATIONS:
        raise InvalidParameterError(f"normalization must be one of {NORMALIZATIONS}, got {normalization!r}")

    if known_mask is None:
        known_mask = np.ones(original.shape[-1:] if original.ndim == 1 else original.shape, dtype=bool)
    known_mask = np.asarray(known_mask, dtype=bool)
    if original.shape[original.ndim - known_mask.ndim:] != known_mask.shape:
        raise DimensionMismatchError(f"known mask {known_mask.shape} does not match images {original.shape}")

    axes = tuple(range(original.ndim - known_mask.ndim, original.ndim))
    diff = original != reconstructed
    n_total = known_mask.size
    n_known = int(known_mask.sum()) or n_total

    if normalization == "all":
        result = diff.sum(axis=axes) / n_total
    elif normalization == "known-only":
        result = (diff & known_mask).sum(axis=axes) / n_known
    else:
        result = diff.sum(axis=axes) / n_known
    return float(result) if np.ndim(result) == 0 else result
