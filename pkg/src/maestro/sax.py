"""Symbolic tokenization of time series with an explicit missingness symbol.

A series is z-normalized per variate, compressed to segment means, and each
segment mean is mapped to one of `alpha` symbols whose regions are
equiprobable under a standard normal. Symbol 0 never encodes a value: it is
reserved for missing data, so downstream consumers can treat it as a
learnable "absent" token. Distances between symbol strings (mindist) lower
bound the Euclidean distance between the underlying normalized series.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DataError

EPS_STD = 1e-8
MISSING_SYMBOL = 0

_MSAX_MAGIC = b"MSAX"
_MSAX_HEADER = struct.Struct("<4sBHII")  # magic, version, alpha, W, D


def znormalize(x: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance scaling per variate (population std).

    Accepts [T] or [D, T]; a near-constant variate (std < 1e-8) maps to all
    zeros instead of blowing up.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return znormalize(x[None, :])[0]
    if x.ndim != 2:
        raise ContractViolation("znormalize expects [T] or [D, T]")
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    out = np.zeros_like(x)
    ok = sd[:, 0] >= EPS_STD
    out[ok] = (x[ok] - mu[ok]) / sd[ok]
    return out


def segment_bounds(n_samples: int, n_segments: int) -> list[tuple[int, int]]:
    """Split n_samples points into n_segments contiguous runs.

    The first (n_samples mod n_segments) segments take ceil(n/W) points, the
    rest take floor(n/W).
    """
    if n_segments < 1 or n_samples < n_segments:
        raise ContractViolation(
            f"cannot split {n_samples} samples into {n_segments} segments"
        )
    big, rem = divmod(n_samples, n_segments)
    bounds = []
    start = 0
    for w in range(n_segments):
        size = big + 1 if w < rem else big
        bounds.append((start, start + size))
        start += size
    return bounds


def paa(x: np.ndarray, n_segments: int) -> np.ndarray:
    """Piecewise aggregate approximation: per-segment means. [T] -> [W]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractViolation("paa expects a 1-D series")
    return np.array([x[a:b].mean() for a, b in segment_bounds(x.size, n_segments)])


def gaussian_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def gaussian_quantile(p: float, tol: float = 1e-10) -> float:
    """Inverse standard-normal CDF by bisection, |error| <= tol.

    The median maps to exactly 0 and the two tails are mirror images, so
    breakpoint sets come out exactly symmetric.
    """
    if not 0.0 < p < 1.0:
        raise ContractViolation("quantile probability must be in (0, 1)")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        return -gaussian_quantile(1.0 - p, tol)
    lo, hi = -10.0, 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gaussian_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class SymbolCodec:
    """Alphabet of `alpha` value symbols (1..alpha) plus missing symbol 0.

    breakpoints[k] separates region k from region k+1; regions are
    equiprobable under a standard normal. symbol_values hold mid-quantile
    levels used for reconstruction.
    """

    alpha: int
    breakpoints: np.ndarray     # [alpha - 1], strictly increasing
    symbol_values: np.ndarray   # [alpha], strictly increasing

    @classmethod
    def from_alphabet(cls, alpha: int) -> "SymbolCodec":
        if alpha < 2:
            raise ContractViolation("alphabet size must be at least 2")
        bps = np.array([gaussian_quantile(k / alpha) for k in range(1, alpha)])
        mids = np.array([gaussian_quantile((k + 0.5) / alpha) for k in range(alpha)])
        return cls(alpha=alpha, breakpoints=bps, symbol_values=mids)

    def encode_values(self, values: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        """Map segment means to symbols 1..alpha; masked entries to 0.

        A value exactly on a breakpoint goes to the lower region, so every
        region is the half-open interval (b[k-1], b[k]].
        """
        values = np.asarray(values, dtype=np.float64)
        symbols = np.searchsorted(self.breakpoints, values, side="left") + 1
        symbols = symbols.astype(np.int64)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != values.shape:
                raise ContractViolation("mask shape must match values")
            symbols[~mask] = MISSING_SYMBOL
        return symbols

    def reconstruct(self, symbols: np.ndarray) -> np.ndarray:
        """Mid-quantile level per symbol; raises on the missing symbol."""
        symbols = np.asarray(symbols)
        if (symbols < 1).any() or (symbols > self.alpha).any():
            raise ContractViolation("reconstruct requires symbols in [1, alpha]")
        return self.symbol_values[symbols - 1]

    def cell_distance(self, a: int, b: int) -> float:
        """Distance between value symbols a, b: zero for adjacent regions,
        otherwise the gap between the breakpoints that separate them."""
        if not (1 <= a <= self.alpha and 1 <= b <= self.alpha):
            raise ContractViolation("cell_distance requires value symbols in [1, alpha]")
        if abs(a - b) <= 1:
            return 0.0
        hi, lo = max(a, b), min(a, b)
        return float(self.breakpoints[hi - 2] - self.breakpoints[lo - 1])


def tokenize(series: np.ndarray | None, n_segments: int, codec: SymbolCodec) -> np.ndarray:
    """Full tokenization of one modality: [D, T] -> symbols [D, W].

    A missing modality (series is None) yields the all-missing string, which
    keeps sequence shapes static regardless of availability.
    """
    if series is None:
        raise ContractViolation("tokenize needs a series; use missing_tokens for absent modalities")
    series = np.asarray(series, dtype=np.float64)
    if series.ndim == 1:
        series = series[None, :]
    if series.ndim != 2:
        raise ContractViolation("tokenize expects [T] or [D, T]")
    normalized = znormalize(series)
    out = np.empty((series.shape[0], n_segments), dtype=np.int64)
    for d in range(series.shape[0]):
        out[d] = codec.encode_values(paa(normalized[d], n_segments))
    return out


def missing_tokens(n_variates: int, n_segments: int) -> np.ndarray:
    return np.zeros((n_variates, n_segments), dtype=np.int64)


def mindist(a: np.ndarray, b: np.ndarray, codec: SymbolCodec, series_length: int) -> float:
    """Lower bound on the Euclidean distance between the normalized series
    behind two symbol strings: sqrt(T/W) * sqrt(sum of squared cell gaps).

    Symbol strings may be [W] or [D, W]; the missing symbol is not comparable
    and is rejected.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.int64))
    b = np.atleast_2d(np.asarray(b, dtype=np.int64))
    if a.shape != b.shape:
        raise ContractViolation("mindist requires equal-shape symbol strings")
    if (a == MISSING_SYMBOL).any() or (b == MISSING_SYMBOL).any():
        raise ContractViolation("mindist is undefined for the missing symbol")
    n_segments = a.shape[1]
    total = 0.0
    for row_a, row_b in zip(a, b):
        for sa, sb in zip(row_a, row_b):
            gap = codec.cell_distance(int(sa), int(sb))
            total += gap * gap
    return math.sqrt(series_length / n_segments) * math.sqrt(total)


def euclidean(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ContractViolation("euclidean requires equal shapes")
    return float(np.sqrt(((x - y) ** 2).sum()))


@dataclass(frozen=True)
class BoundReport:
    """One cross-modal distance-consistency check between modalities j and m."""

    modality_j: str
    modality_m: str
    lhs: float            # |sym_dist_j - sym_dist_m|
    rhs: float            # |euclid_j - euclid_m| + slack_j + slack_m
    slack_j: float        # euclid_j - sym_dist_j, provably nonnegative
    slack_m: float
    holds: bool


def bound_check(
    sample_i: dict[str, np.ndarray],
    sample_k: dict[str, np.ndarray],
    codec: SymbolCodec,
    n_segments: dict[str, int],
) -> list[BoundReport]:
    """Check, for every modality pair, that symbolic distances disagree by no
    more than the Euclidean disagreement plus both symbolization slacks.

    The slack of a modality is the gap between the true normalized Euclidean
    distance and its symbolic lower bound; a negative slack means the lower
    bound is broken and is reported as a contract violation.
    """
    names = sorted(set(sample_i) & set(sample_k))
    if len(names) < 2:
        raise ContractViolation("bound_check needs at least two shared modalities")
    sym_dist: dict[str, float] = {}
    euc_dist: dict[str, float] = {}
    for name in names:
        xi = znormalize(np.atleast_2d(sample_i[name]))
        xk = znormalize(np.atleast_2d(sample_k[name]))
        w = n_segments[name]
        si = np.stack([codec.encode_values(paa(row, w)) for row in xi])
        sk = np.stack([codec.encode_values(paa(row, w)) for row in xk])
        sym_dist[name] = mindist(si, sk, codec, xi.shape[1])
        euc_dist[name] = euclidean(xi, xk)
        if euc_dist[name] - sym_dist[name] < -1e-9:
            raise ContractViolation(
                f"symbolic distance exceeds Euclidean distance for '{name}'"
            )
    reports = []
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            j, m = names[a], names[b]
            slack_j = euc_dist[j] - sym_dist[j]
            slack_m = euc_dist[m] - sym_dist[m]
            lhs = abs(sym_dist[j] - sym_dist[m])
            rhs = abs(euc_dist[j] - euc_dist[m]) + slack_j + slack_m
            reports.append(BoundReport(
                modality_j=j, modality_m=m, lhs=lhs, rhs=rhs,
                slack_j=slack_j, slack_m=slack_m,
                holds=bool(lhs <= rhs + 1e-9),
            ))
    return reports


def write_symbols(path, symbols: np.ndarray, alpha: int, version: int = 1) -> None:
    """Binary symbol file: 15-byte header then row-major u16 symbols."""
    symbols = np.atleast_2d(np.asarray(symbols, dtype=np.int64))
    if (symbols < 0).any() or (symbols > alpha).any():
        raise ContractViolation("symbols outside [0, alpha]")
    d, w = symbols.shape
    with open(path, "wb") as fh:
        fh.write(_MSAX_HEADER.pack(_MSAX_MAGIC, version, alpha, w, d))
        fh.write(symbols.astype("<u2").tobytes(order="C"))


def read_symbols(path) -> tuple[np.ndarray, int]:
    """Read a symbol file; returns (symbols [D, W], alpha)."""
    with open(path, "rb") as fh:
        head = fh.read(_MSAX_HEADER.size)
        if len(head) != _MSAX_HEADER.size:
            raise DataError(f"truncated symbol file header: {path}")
        magic, version, alpha, w, d = _MSAX_HEADER.unpack(head)
        if magic != _MSAX_MAGIC:
            raise DataError(f"bad symbol file magic in {path}")
        if version != 1:
            raise DataError(f"unsupported symbol file version {version} in {path}")
        payload = fh.read(2 * d * w)
        if len(payload) != 2 * d * w:
            raise DataError(f"truncated symbol payload in {path}")
        symbols = np.frombuffer(payload, dtype="<u2").astype(np.int64).reshape(d, w)
    if (symbols > alpha).any():
        raise DataError(f"symbol value exceeds alphabet in {path}")
    return symbols, int(alpha)
