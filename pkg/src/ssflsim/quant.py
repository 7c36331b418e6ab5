"""Symmetric r-bit quantization of update vectors.

Entries are clipped to [-alpha, alpha] and mapped affinely onto r-bit unsigned
codes with round-half-away-from-zero, so the reconstruction codebook is an
odd-symmetric set about zero. The clipping threshold can be tuned per update
by minimizing the kernel MMD between the raw entries and their
quantize-dequantize reconstruction.

Wire format (little-endian, 16-byte header):
    u32 magic 0x53514e54 ("SQNT") | u8 bits | f32 alpha | u32 d | 3 zero bytes
followed by ceil(d*bits/8) bytes of codes packed low-bits-first.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = 0x53514E54
HEADER_BYTES = 16
SUPPORTED_BITS = (2, 4, 8, 16)

# Candidate clip thresholds as fractions of the largest |entry|.
ALPHA_FRACTIONS = (0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0)
DEFAULT_ALPHA = 0.5

# Kernel sums are quadratic in the sample count; cap the entries used for MMD.
_MMD_MAX_ENTRIES = 512

_HEADER_FMT = "<IBfI"


@dataclass(frozen=True)
class QuantizedUpdate:
    codes: np.ndarray  # uint16, one code per entry
    bits: int
    alpha: float

    @property
    def dim(self) -> int:
        return self.codes.shape[0]


def quantize(w: np.ndarray, bits: int, alpha: float) -> QuantizedUpdate:
    """Clip to [-alpha, alpha], then map onto [0, 2^bits - 1] codes."""
    if bits not in SUPPORTED_BITS:
        raise ValueError(f"bits must be one of {SUPPORTED_BITS}, got {bits}")
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if not np.all(np.isfinite(w)):
        raise ValueError("cannot quantize non-finite entries")
    # Keep alpha at f32 precision so in-memory and wire behavior agree exactly.
    alpha = float(np.float32(alpha))
    levels = (1 << bits) - 1
    clipped = np.clip(w, -alpha, alpha)
    scaled = levels * (clipped + alpha) / (2.0 * alpha)
    codes = np.floor(scaled + 0.5)  # half-away-from-zero (scaled is >= 0)
    codes = np.minimum(codes, levels).astype(np.uint16)
    return QuantizedUpdate(codes, bits, alpha)


def dequantize(q: QuantizedUpdate) -> np.ndarray:
    """Reconstruct entries: code * 2*alpha/(2^bits - 1) - alpha."""
    levels = (1 << q.bits) - 1
    if q.codes.size and int(q.codes.max()) > levels:
        raise ValueError(
            f"corrupt payload: code {int(q.codes.max())} exceeds {levels}")
    return q.codes.astype(np.float64) * (2.0 * q.alpha / levels) - q.alpha


def payload_bytes(q: QuantizedUpdate) -> int:
    """Serialized size: packed codes plus the fixed header."""
    return HEADER_BYTES + (q.dim * q.bits + 7) // 8


def serialize(q: QuantizedUpdate) -> bytes:
    header = struct.pack(_HEADER_FMT, MAGIC, q.bits, q.alpha, q.dim) + b"\x00" * 3
    codes = q.codes.astype(np.uint32)
    if q.bits == 16:
        body = codes.astype("<u2").tobytes()
    elif q.bits == 8:
        body = codes.astype(np.uint8).tobytes()
    else:
        per_byte = 8 // q.bits
        pad = (-q.dim) % per_byte
        padded = np.concatenate([codes, np.zeros(pad, dtype=np.uint32)])
        grouped = padded.reshape(-1, per_byte)
        shifts = np.arange(per_byte, dtype=np.uint32) * q.bits
        body = (grouped << shifts).sum(axis=1).astype(np.uint8).tobytes()
    return header + body


def deserialize(blob: bytes) -> QuantizedUpdate:
    if len(blob) < HEADER_BYTES:
        raise ValueError("corrupt payload: shorter than header")
    magic, bits, alpha, dim = struct.unpack_from(_HEADER_FMT, blob, 0)
    if magic != MAGIC:
        raise ValueError(f"corrupt payload: bad magic 0x{magic:08x}")
    if bits not in SUPPORTED_BITS:
        raise ValueError(f"corrupt payload: unsupported bit width {bits}")
    expected = HEADER_BYTES + (dim * bits + 7) // 8
    if len(blob) != expected:
        raise ValueError(
            f"corrupt payload: {len(blob)} bytes, expected {expected}")
    body = np.frombuffer(blob, dtype=np.uint8, offset=HEADER_BYTES)
    if bits == 16:
        codes = np.frombuffer(blob, dtype="<u2", offset=HEADER_BYTES).astype(np.uint16)
    elif bits == 8:
        codes = body.astype(np.uint16)
    else:
        per_byte = 8 // bits
        shifts = np.arange(per_byte, dtype=np.uint16) * bits
        mask = (1 << bits) - 1
        codes = ((body[:, None].astype(np.uint16) >> shifts) & mask).reshape(-1)[:dim]
    return QuantizedUpdate(codes.copy(), int(bits), float(alpha))


def mmd2(x: np.ndarray, y: np.ndarray, sigma: float) -> float:
    """Squared maximum mean discrepancy with a Gaussian kernel.

    Within-sample terms use the unbiased i != j sums; the cross term averages
    all pairs: 1/(m(m-1)) sum k(x_i,x_j) + 1/(n(n-1)) sum k(y_i,y_j)
    - 2/(mn) sum k(x_i,y_j), with k(a,b) = exp(-(a-b)^2 / (2 sigma^2)).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    m, n = x.size, y.size
    if m < 2 or n < 2:
        raise ValueError(f"need at least 2 samples per side, got {m} and {n}")
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")

    def k(a, b):
        return np.exp(-np.subtract.outer(a, b) ** 2 / (2.0 * sigma ** 2))

    kxx = k(x, x)
    kyy = k(y, y)
    kxy = k(x, y)
    term_x = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    term_xy = 2.0 * kxy.sum() / (m * n)
    return float(term_x + term_y - term_xy)


def _subsample(w: np.ndarray, limit: int = _MMD_MAX_ENTRIES) -> np.ndarray:
    flat = np.asarray(w, dtype=np.float64).ravel()
    if flat.size <= limit:
        return flat
    idx = np.round(np.linspace(0, flat.size - 1, limit)).astype(np.int64)
    return flat[idx]


def median_bandwidth(entries: np.ndarray) -> float:
    """Median pairwise distance; 1.0 when the sample is degenerate."""
    diffs = np.abs(np.subtract.outer(entries, entries))
    med = float(np.median(diffs[np.triu_indices(entries.size, k=1)]))
    return med if med > 0 else 1.0


def optimize_alpha(w: np.ndarray, bits: int, sigma: float | None = None,
                   grid: list[float] | None = None) -> float:
    """Pick the clip threshold minimizing MMD(entries, dequant(quant(entries))).

    Works on a bounded uniform subsample of the entries. Ties go to the
    smallest candidate. An all-zero vector has nothing to fit, so the stock
    default threshold is returned.
    """
    entries = _subsample(w)
    if entries.size < 2:
        raise ValueError("need at least 2 entries to optimize the threshold")
    if grid is None:
        peak = float(np.max(np.abs(entries)))
        if peak == 0.0:
            return DEFAULT_ALPHA
        grid = [f * peak for f in ALPHA_FRACTIONS]
    candidates = sorted(a for a in grid if a > 0)
    if not candidates:
        raise ValueError("alpha grid has no positive candidates")
    if sigma is None:
        sigma = median_bandwidth(entries)

    best_alpha, best_score = None, np.inf
    for alpha in candidates:
        recon = dequantize(quantize(entries, bits, alpha))
        score = mmd2(entries, recon, sigma)
        if score < best_score:
            best_alpha, best_score = alpha, score
    return float(best_alpha)
