"""Motion-vector data model, FLOWLOG stream format, sparsification, and slicing.

Coordinates are stored internally as integer milli-pixels. FLOWLOG carries
exactly three decimals per field, so milli-pixel integers represent every
on-disk value exactly and make all accumulation arithmetic associative:
partitioned runs merge bit-identically with single-pass runs.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

import numpy as np

from .errors import BoundsError, FlowFormatError, FlowOrderError

MILLI = 1000
FLOWLOG_MAGIC = "FLOWLOG"
FLOWLOG_VERSION = 1


def quantize(x: float) -> int:
    """Round a pixel quantity to integer milli-pixels."""
    return int(round(float(x) * MILLI))


def _milli_str(m: int) -> str:
    sign = "-" if m < 0 else ""
    m = abs(int(m))
    return f"{sign}{m // MILLI}.{m % MILLI:03d}"


@dataclass(frozen=True)
class MotionVector:
    """One sparse optical-flow observation.

    ``t`` is the frame index; ``(u, v)`` the image position in pixels with the
    origin at the top-left and v increasing downward; ``(du, dv)`` the
    displacement in pixels per frame interval.
    """

    t: int
    u: float
    v: float
    du: float
    dv: float

    def __post_init__(self) -> None:
        if self.t < 0:
            raise ValueError(f"frame index must be non-negative, got {self.t}")

    @property
    def magnitude(self) -> float:
        return math.hypot(self.du, self.dv)


@dataclass(frozen=True)
class GridSpec:
    """Block grid over the image: ``rows`` x ``cols`` equally sized blocks."""

    rows: int
    cols: int

    def __post_init__(self) -> None:
        if self.rows < 3 or self.cols < 3:
            raise ValueError(
                f"grid must be at least 3x3 so an interior block exists, got {self.rows}x{self.cols}"
            )

    def block_height(self, frame_height: int) -> float:
        return frame_height / self.rows

    def block_width(self, frame_width: int) -> float:
        return frame_width / self.cols

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        parts = text.lower().split("x")
        if len(parts) != 2:
            raise ValueError(f"grid spec must look like ROWSxCOLS, got {text!r}")
        return cls(int(parts[0]), int(parts[1]))


class FlowSequence:
    """A time-ordered sparse flow stream plus acquisition metadata.

    Immutable after construction. Vectors are held columnar (int64 milli-pixel
    arrays) in canonical order: sorted by frame index, ties by (v, u, du, dv).
    """

    __slots__ = ("width", "height", "frame_rate", "t", "u_milli", "v_milli", "du_milli", "dv_milli")

    def __init__(
        self,
        width: int,
        height: int,
        frame_rate: float,
        t: np.ndarray | None = None,
        u_milli: np.ndarray | None = None,
        v_milli: np.ndarray | None = None,
        du_milli: np.ndarray | None = None,
        dv_milli: np.ndarray | None = None,
        _presorted: bool = False,
    ) -> None:
        if width <= 0 or height <= 0:
            raise ValueError(f"frame dimensions must be positive, got {width}x{height}")
        if frame_rate <= 0:
            raise ValueError(f"frame rate must be positive, got {frame_rate}")
        self.width = int(width)
        self.height = int(height)
        self.frame_rate = float(frame_rate)

        cols = [t, u_milli, v_milli, du_milli, dv_milli]
        if any(c is None for c in cols):
            cols = [np.empty(0, dtype=np.int64) for _ in range(5)]
        cols = [np.asarray(c, dtype=np.int64) for c in cols]
        n = cols[0].size
        if any(c.size != n for c in cols):
            raise ValueError("column arrays must have equal length")

        t_, u_, v_, du_, dv_ = cols
        if np.any(t_ < 0):
            raise FlowOrderError("negative frame index")
        bad = (u_ < 0) | (u_ >= self.width * MILLI) | (v_ < 0) | (v_ >= self.height * MILLI)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise BoundsError(
                f"vector at frame {int(t_[i])} position "
                f"({_milli_str(int(u_[i]))}, {_milli_str(int(v_[i]))}) lies outside "
                f"{self.width}x{self.height} frame bounds"
            )
        if not _presorted and n > 0:
            order = np.lexsort((dv_, du_, u_, v_, t_))
            t_, u_, v_, du_, dv_ = (c[order] for c in (t_, u_, v_, du_, dv_))
        for name, arr in (("t", t_), ("u_milli", u_), ("v_milli", v_), ("du_milli", du_), ("dv_milli", dv_)):
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            setattr(self, name, arr)

    # -- construction -----------------------------------------------------

    @classmethod
    def empty(cls, width: int, height: int, frame_rate: float) -> "FlowSequence":
        return cls(width, height, frame_rate)

    @classmethod
    def from_vectors(
        cls, vectors: Iterable[MotionVector], width: int, height: int, frame_rate: float
    ) -> "FlowSequence":
        vecs = list(vectors)
        t = np.array([v.t for v in vecs], dtype=np.int64)
        u = np.array([quantize(v.u) for v in vecs], dtype=np.int64)
        vv = np.array([quantize(v.v) for v in vecs], dtype=np.int64)
        du = np.array([quantize(v.du) for v in vecs], dtype=np.int64)
        dv = np.array([quantize(v.dv) for v in vecs], dtype=np.int64)
        return cls(width, height, frame_rate, t, u, vv, du, dv)

    # -- basic queries ----------------------------------------------------

    @property
    def n_vectors(self) -> int:
        return int(self.t.size)

    @property
    def frame_ids(self) -> np.ndarray:
        return np.unique(self.t)

    @property
    def n_frames(self) -> int:
        """Number of distinct frames that contain at least one vector."""
        return int(self.frame_ids.size)

    @property
    def dt(self) -> float:
        """Time between consecutive frames in seconds."""
        return 1.0 / self.frame_rate

    def __len__(self) -> int:
        return self.n_vectors

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FlowSequence):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.frame_rate == other.frame_rate
            and all(
                np.array_equal(getattr(self, c), getattr(other, c))
                for c in ("t", "u_milli", "v_milli", "du_milli", "dv_milli")
            )
        )

    def iter_frames(self) -> Iterator[tuple[int, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]]:
        """Yield (frame index, (u_milli, v_milli, du_milli, dv_milli)) per frame."""
        ids, starts = np.unique(self.t, return_index=True)
        bounds = np.append(starts, self.t.size)
        for k, fid in enumerate(ids):
            sl = slice(int(bounds[k]), int(bounds[k + 1]))
            yield int(fid), (self.u_milli[sl], self.v_milli[sl], self.du_milli[sl], self.dv_milli[sl])

    def vectors(self) -> Iterator[MotionVector]:
        for i in range(self.n_vectors):
            yield MotionVector(
                int(self.t[i]),
                self.u_milli[i] / MILLI,
                self.v_milli[i] / MILLI,
                self.du_milli[i] / MILLI,
                self.dv_milli[i] / MILLI,
            )


def frame_columns(frame) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Normalize a frame (columnar tuple or iterable of MotionVector) to milli arrays."""
    if isinstance(frame, tuple) and len(frame) == 4:
        return tuple(np.asarray(c, dtype=np.int64) for c in frame)  # type: ignore[return-value]
    vecs = list(frame)
    u = np.array([quantize(v.u) for v in vecs], dtype=np.int64)
    vv = np.array([quantize(v.v) for v in vecs], dtype=np.int64)
    du = np.array([quantize(v.du) for v in vecs], dtype=np.int64)
    dv = np.array([quantize(v.dv) for v in vecs], dtype=np.int64)
    return u, vv, du, dv


# -- FLOWLOG v1 -----------------------------------------------------------
#
# line 1:  FLOWLOG 1 <width> <height> <frame_rate>
# records: <t> <u> <v> <du> <dv>   (u v du dv with exactly 3 decimals,
#          sorted by t, ties by (v, u))
# lines starting with '#' are comments and are ignored.


def _format_rate(rate: float) -> str:
    return f"{rate:g}"


def write_flow_stream(seq: FlowSequence) -> bytes:
    """Canonical FLOWLOG encoding of a sequence."""
    header = f"{FLOWLOG_MAGIC} {FLOWLOG_VERSION} {seq.width} {seq.height} {_format_rate(seq.frame_rate)}"
    if seq.n_vectors == 0:
        return (header + "\n").encode("ascii")
    t = seq.t
    # milli-integers render exactly under %.3f: the stored value is within one
    # double ulp of its 3-decimal target, never at a rounding boundary
    u, v = seq.u_milli / MILLI, seq.v_milli / MILLI
    du, dv = seq.du_milli / MILLI, seq.dv_milli / MILLI
    lines = [
        f"{t[i]} {u[i]:.3f} {v[i]:.3f} {du[i]:.3f} {dv[i]:.3f}" for i in range(t.size)
    ]
    return (header + "\n" + "\n".join(lines) + "\n").encode("ascii")


def _parse_fixed(tok: str, line_no: int) -> int:
    try:
        return quantize(float(tok))
    except ValueError:
        raise FlowFormatError(f"line {line_no}: not a number: {tok!r}") from None


def parse_flow_stream(data: bytes | str | IO[bytes]) -> FlowSequence:
    """Parse a FLOWLOG byte stream into a FlowSequence.

    Accepts bytes, text, or a binary file object. Input records may be in any
    within-frame order; the result is canonically sorted, so re-serializing
    yields the canonical re-encoding of the input.
    """
    if hasattr(data, "read"):
        data = data.read()  # type: ignore[union-attr]
    if isinstance(data, bytes):
        text = data.decode("ascii", errors="replace")
    else:
        text = data

    header: tuple[int, int, float] | None = None
    header_line = 0
    body_start = 0
    lines = text.splitlines()
    for i, line in enumerate(lines):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 5 or parts[0] != FLOWLOG_MAGIC:
            raise FlowFormatError(f"line {i + 1}: expected 'FLOWLOG 1 <width> <height> <rate>', got {line!r}")
        try:
            version = int(parts[1])
            width, height = int(parts[2]), int(parts[3])
            rate = float(parts[4])
        except ValueError:
            raise FlowFormatError(f"line {i + 1}: malformed header {line!r}") from None
        if version != FLOWLOG_VERSION:
            raise FlowFormatError(f"line {i + 1}: unsupported FLOWLOG version {version}")
        header = (width, height, rate)
        header_line = i + 1
        body_start = i + 1
        break
    if header is None:
        raise FlowFormatError("line 1: missing FLOWLOG header")
    width, height, rate = header
    if width <= 0 or height <= 0 or rate <= 0:
        raise FlowFormatError(f"line {header_line}: non-positive frame dimensions or rate")

    rec_lines: list[tuple[int, str]] = []
    for i in range(body_start, len(lines)):
        stripped = lines[i].strip()
        if not stripped or stripped.startswith("#"):
            continue
        rec_lines.append((i + 1, stripped))

    cols = _parse_records_fast(rec_lines)
    if cols is None:
        cols = _parse_records_strict(rec_lines)
    t, u, v, du, dv = cols

    bad = (u < 0) | (u >= width * MILLI) | (v < 0) | (v >= height * MILLI)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise BoundsError(
            f"line {rec_lines[i][0]}: vector at frame {int(t[i])} position "
            f"({_milli_str(int(u[i]))}, {_milli_str(int(v[i]))}) outside {width}x{height} frame"
        )
    return FlowSequence(width, height, rate, t, u, v, du, dv)


def _parse_records_fast(rec_lines: list[tuple[int, str]]):
    """Bulk-parse record lines; None when anything needs the diagnosing slow path."""
    n = len(rec_lines)
    if n == 0:
        return tuple(np.empty(0, dtype=np.int64) for _ in range(5))
    try:
        arr = np.loadtxt(io.StringIO("\n".join(line for _, line in rec_lines)), dtype=np.float64, ndmin=2)
    except Exception:
        return None
    if arr.shape != (n, 5) or not np.all(np.isfinite(arr)):
        return None
    t_f = arr[:, 0]
    if np.any(t_f != np.floor(t_f)) or np.any(t_f < 0) or np.any(np.diff(t_f) < 0):
        return None
    t = t_f.astype(np.int64)
    u, v, du, dv = (np.rint(arr[:, k] * MILLI).astype(np.int64) for k in range(1, 5))
    return t, u, v, du, dv


def _parse_records_strict(rec_lines: list[tuple[int, str]]):
    """Line-by-line parse with precise error reporting."""
    n = len(rec_lines)
    t = np.empty(n, dtype=np.int64)
    u = np.empty(n, dtype=np.int64)
    v = np.empty(n, dtype=np.int64)
    du = np.empty(n, dtype=np.int64)
    dv = np.empty(n, dtype=np.int64)
    prev_t = -1
    for k, (line_no, line) in enumerate(rec_lines):
        parts = line.split()
        if len(parts) != 5:
            raise FlowFormatError(f"line {line_no}: expected 5 fields, got {len(parts)}: {line!r}")
        try:
            ti = int(parts[0])
        except ValueError:
            raise FlowFormatError(f"line {line_no}: frame index is not an integer: {parts[0]!r}") from None
        if ti < 0:
            raise FlowFormatError(f"line {line_no}: negative frame index {ti}")
        if ti < prev_t:
            raise FlowOrderError(f"line {line_no}: frame index {ti} after frame {prev_t}")
        prev_t = ti
        t[k] = ti
        u[k] = _parse_fixed(parts[1], line_no)
        v[k] = _parse_fixed(parts[2], line_no)
        du[k] = _parse_fixed(parts[3], line_no)
        dv[k] = _parse_fixed(parts[4], line_no)
    return t, u, v, du, dv


def read_flowlog(path) -> FlowSequence:
    with open(path, "rb") as fh:
        return parse_flow_stream(fh)


def write_flowlog(seq: FlowSequence, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_flow_stream(seq))


# -- sparsification -------------------------------------------------------


def sparsify(flow: np.ndarray, threshold: float = 1.5, t: int = 0) -> list[MotionVector]:
    """Threshold + non-maximum suppression of a dense per-pixel flow field.

    ``flow`` has shape (H, W, 2) carrying (du, dv) per pixel. A pixel survives
    when its magnitude exceeds ``threshold`` and no 8-neighbour that also
    passed the threshold beats it: strictly larger magnitude, or equal
    magnitude at a lexicographically smaller (v, u) position.
    """
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow field must have shape (H, W, 2), got {flow.shape}")
    mag = np.hypot(flow[:, :, 0], flow[:, :, 1])
    keep = mag > threshold
    if not np.any(keep):
        return []

    h, w = mag.shape
    suppressed = np.zeros_like(keep)
    cand = np.where(keep, mag, -np.inf)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            r0, r1 = max(-di, 0), h - max(di, 0)
            c0, c1 = max(-dj, 0), w - max(dj, 0)
            centre = cand[r0:r1, c0:c1]
            neigh = cand[r0 + di : r1 + di, c0 + dj : c1 + dj]
            beats = neigh > centre
            if di < 0 or (di == 0 and dj < 0):
                # equal-magnitude neighbour at smaller (v, u) wins the tie
                beats = beats | ((neigh == centre) & np.isfinite(centre))
            suppressed[r0:r1, c0:c1] |= beats
    keep &= ~suppressed

    vs, us = np.nonzero(keep)
    return [
        MotionVector(t, float(us[k]), float(vs[k]), float(flow[vs[k], us[k], 0]), float(flow[vs[k], us[k], 1]))
        for k in range(vs.size)
    ]


# -- temporal slicing ------------------------------------------------------


def slice_fraction(seq: FlowSequence, fraction: float) -> FlowSequence:
    """Temporal prefix with the first ceil(fraction * n_frames) populated frames.

    ceil() guarantees that small fractions of short sequences never produce an
    empty prefix.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0 or seq.n_frames == 0:
        return seq
    ids = seq.frame_ids
    k = math.ceil(fraction * ids.size)
    cutoff = ids[k - 1]
    n = int(np.searchsorted(seq.t, cutoff, side="right"))
    return FlowSequence(
        seq.width,
        seq.height,
        seq.frame_rate,
        seq.t[:n],
        seq.u_milli[:n],
        seq.v_milli[:n],
        seq.du_milli[:n],
        seq.dv_milli[:n],
        _presorted=True,
    )
