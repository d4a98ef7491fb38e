"""Order-3 tensor algebra built on the t-product.

The third axis ("tubes") acts as a circular-convolution index: multiplying two
tensors contracts their leading matrix axes slice by slice while convolving
along the tube axis. Every product has two interchangeable implementations, a
block-circulant matrix expansion and an FFT fast path, and the Moore-Penrose
pseudoinverse is computed frequency by frequency in the DFT domain.

In this package the tube axis always carries token position within a word, so
a word-level tensor is rows(words) x cols(embedding dim) x tubes(token slots).
"""

from __future__ import annotations

import struct
import warnings

import numpy as np

MAGIC = b"FUS3"
FORMAT_VERSION = 1

# Relative singular-value cutoff for pseudoinverses.
DEFAULT_RANK_TOL = 1e-10


class RankDeficiencyWarning(UserWarning):
    """Emitted when a frequency slice of a pseudoinverse is rank deficient."""


class Tensor3:
    """Immutable dense rows x cols x tubes array of float64.

    Constructors reject NaN/Inf and empty axes; the wrapped array is made
    read-only so values can be shared freely across threads.
    """

    __slots__ = ("_data",)

    def __init__(self, data) -> None:
        arr = np.array(data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"Tensor3 requires a 3-d array, got ndim={arr.ndim}")
        if arr.size == 0:
            raise ValueError("Tensor3 axes must all be non-empty")
        if not np.isfinite(arr).all():
            raise ValueError("Tensor3 entries must be finite")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def from_matrix(cls, m) -> "Tensor3":
        """Lift a 2-d matrix to a single-tube tensor."""
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError("from_matrix expects a 2-d array")
        return cls(m[:, :, None])

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def rows(self) -> int:
        return self._data.shape[0]

    @property
    def cols(self) -> int:
        return self._data.shape[1]

    @property
    def tubes(self) -> int:
        return self._data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._data.shape

    def slice(self, k: int) -> np.ndarray:
        """Tube slice k as a read-only rows x cols matrix."""
        return self._data[:, :, k]

    def pad_tubes(self, tubes: int) -> "Tensor3":
        """Zero-pad the tube axis up to `tubes` (no-op when already there)."""
        if tubes < self.tubes:
            raise ValueError("pad_tubes cannot shrink the tube axis")
        if tubes == self.tubes:
            return self
        out = np.zeros((self.rows, self.cols, tubes))
        out[:, :, : self.tubes] = self._data
        return Tensor3(out)

    def __add__(self, other: "Tensor3") -> "Tensor3":
        if not isinstance(other, Tensor3):
            return NotImplemented
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        return Tensor3(self._data + other._data)

    def __sub__(self, other: "Tensor3") -> "Tensor3":
        if not isinstance(other, Tensor3):
            return NotImplemented
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        return Tensor3(self._data - other._data)

    def __mul__(self, scalar) -> "Tensor3":
        return Tensor3(self._data * float(scalar))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Tensor3(rows={self.rows}, cols={self.cols}, tubes={self.tubes})"


def unfold(t: Tensor3) -> np.ndarray:
    """Stack tube slices vertically (tube order) into a (rows*tubes) x cols matrix."""
    return t.data.transpose(2, 0, 1).reshape(t.rows * t.tubes, t.cols)


def fold(m, tubes: int) -> Tensor3:
    """Inverse of :func:`unfold`; the row count must be divisible by `tubes`."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("fold expects a 2-d array")
    if tubes < 1 or m.shape[0] % tubes != 0:
        raise ValueError(f"cannot fold {m.shape[0]} rows into {tubes} tubes")
    rows = m.shape[0] // tubes
    return Tensor3(m.reshape(tubes, rows, m.shape[1]).transpose(1, 2, 0))


def circ(t: Tensor3) -> np.ndarray:
    """Block-circulant expansion: block (p, q) is tube slice (p - q) mod tubes.

    Returns a (rows*tubes) x (cols*tubes) matrix; multiplying it against
    unfold(b) realizes the t-product.
    """
    p = t.tubes
    idx = (np.arange(p)[:, None] - np.arange(p)[None, :]) % p
    slices = t.data.transpose(2, 0, 1)  # (tubes, rows, cols)
    blocks = slices[idx]  # (p, p, rows, cols)
    return blocks.transpose(0, 2, 1, 3).reshape(t.rows * p, t.cols * p)


def tprod(a: Tensor3, b: Tensor3, method: str = "fourier") -> Tensor3:
    """t-product of conformable tensors with equal tube counts.

    The circulant path computes fold(circ(a) @ unfold(b)); the Fourier path
    multiplies DFT slices frequency by frequency. Both are exposed because the
    algebra checks compare them against each other.
    """
    if a.cols != b.rows:
        raise ValueError(f"inner dims differ: {a.cols} vs {b.rows}")
    if a.tubes != b.tubes:
        raise ValueError(f"tube counts differ: {a.tubes} vs {b.tubes}")
    if method == "circulant":
        return fold(circ(a) @ unfold(b), a.tubes)
    if method != "fourier":
        raise ValueError(f"unknown method {method!r}")
    fa = np.fft.rfft(a.data, axis=2)
    fb = np.fft.rfft(b.data, axis=2)
    fc = np.einsum("ikf,kjf->ijf", fa, fb)
    return Tensor3(np.fft.irfft(fc, n=a.tubes, axis=2))


def tprod_general(a: Tensor3, b: Tensor3, method: str = "fourier") -> Tensor3:
    """t-product generalized to mismatched tube counts via circular padding.

    The shorter operand's tube sequence is zero-extended to the longer period,
    which makes the product a circular convolution at period max(a.tubes,
    b.tubes); with equal tube counts this is exactly :func:`tprod`.
    """
    if a.cols != b.rows:
        raise ValueError(f"inner dims differ: {a.cols} vs {b.rows}")
    p = max(a.tubes, b.tubes)
    return tprod(a.pad_tubes(p), b.pad_tubes(p), method=method)


def ttranspose(t: Tensor3) -> Tensor3:
    """Tensor transpose: transpose every slice and reverse slices 1..tubes-1.

    Chosen so that circ(ttranspose(t)) equals circ(t).T, which is what the
    Penrose conditions need under the t-product.
    """
    d = t.data
    rev = np.concatenate([d[:, :, :1], d[:, :, 1:][:, :, ::-1]], axis=2)
    return Tensor3(rev.transpose(1, 0, 2))


def tpinv(t: Tensor3, rank_tol: float = DEFAULT_RANK_TOL) -> Tensor3:
    """Moore-Penrose pseudoinverse under the t-product.

    DFT along the tube axis, SVD-based pseudoinverse per frequency slice with
    the relative cutoff `rank_tol`, inverse DFT back. Satisfies all four
    Penrose conditions under tprod/ttranspose. Warns (RankDeficiencyWarning)
    when any frequency slice has rank below min(rows, cols).
    """
    ft = np.fft.rfft(t.data, axis=2)
    n_freq = ft.shape[2]
    out = np.empty((t.cols, t.rows, n_freq), dtype=np.complex128)
    deficient = False
    for f in range(n_freq):
        u, s, vh = np.linalg.svd(ft[:, :, f], full_matrices=False)
        if s.size == 0 or s[0] == 0.0:
            rank = 0
        else:
            rank = int(np.sum(s > rank_tol * s[0]))
        if rank < min(t.rows, t.cols):
            deficient = True
        inv = vh[:rank].conj().T @ (u[:, :rank].conj().T / s[:rank, None])
        out[:, :, f] = inv
    if deficient:
        warnings.warn(
            "rank-deficient frequency slice in tensor pseudoinverse",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    return Tensor3(np.fft.irfft(out, n=t.tubes, axis=2))


def write_tensor3(t: Tensor3, path) -> None:
    """Serialize: magic, u32 version, u64 dims, f64 values tube-major then row-major."""
    payload = t.data.transpose(2, 0, 1).astype("<f8").tobytes()
    header = MAGIC + struct.pack("<IQQQ", FORMAT_VERSION, t.rows, t.cols, t.tubes)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_tensor3(path) -> Tensor3:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a tensor file (bad magic)")
    version, rows, cols, tubes = struct.unpack_from("<IQQQ", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported tensor format version {version}")
    count = rows * cols * tubes
    values = np.frombuffer(raw, dtype="<f8", count=count, offset=4 + 28)
    if values.size != count:
        raise ValueError(f"{path}: truncated tensor payload")
    return Tensor3(values.reshape(tubes, rows, cols).transpose(1, 2, 0))
