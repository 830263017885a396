"""Per-locus perspective estimation on a fine cell grid with trimmed polling.

Each cell accumulates the vertical components and magnitudes of the motion
vectors that start inside it. The per-cell relative depth rate is derived from
the vertical gradient of the time-averaged vertical velocity, and a trimmed
mean over all valid cells gives the global estimate, which makes the poll
robust against loci that systematically violate the uniform-motion assumption.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, InsufficientDataError
from .flow import MILLI, FlowSequence, frame_columns
from .stats import masked_central_diff, trimmed_mean

VALID = 0
TOO_FEW_SAMPLES = 1
BELOW_EPSILON = 2
NO_VERTICAL_NEIGHBOUR = 3

REASON_LABELS = {
    VALID: "",
    TOO_FEW_SAMPLES: "insufficient samples",
    BELOW_EPSILON: "velocity below epsilon",
    NO_VERTICAL_NEIGHBOUR: "no valid vertical neighbour",
}


@dataclass(frozen=True)
class DenseConfig:
    cell_size: int = 4
    min_samples: int = 10
    velocity_epsilon: float = 0.2
    trim: float = 0.15

    def __post_init__(self) -> None:
        if self.cell_size < 1:
            raise ValueError("cell size must be at least 1 pixel")
        if self.min_samples < 1:
            raise ValueError("min_samples must be at least 1")
        if self.velocity_epsilon <= 0:
            raise ValueError("velocity epsilon must be positive")
        if not 0.0 <= self.trim < 0.5:
            raise ValueError("trim fraction must be in [0, 0.5)")


class DenseAccumulator:
    """Mergeable per-cell running statistics of a flow stream.

    Sums are integer milli-pixels, so accumulation order never changes the
    state: partitions of a stream accumulated independently and merged are
    bit-identical to a single pass.
    """

    __slots__ = ("width", "height", "cell_size", "count", "sum_dv_milli", "sum_mag_milli")

    def __init__(self, width: int, height: int, cell_size: int = 4) -> None:
        if width <= 0 or height <= 0:
            raise ValueError("frame dimensions must be positive")
        if cell_size < 1:
            raise ValueError("cell size must be at least 1 pixel")
        self.width = int(width)
        self.height = int(height)
        self.cell_size = int(cell_size)
        rows = -(-self.height // self.cell_size)
        cols = -(-self.width // self.cell_size)
        self.count = np.zeros((rows, cols), dtype=np.int64)
        self.sum_dv_milli = np.zeros((rows, cols), dtype=np.int64)
        self.sum_mag_milli = np.zeros((rows, cols), dtype=np.int64)

    @property
    def shape(self) -> tuple[int, int]:
        return self.count.shape

    def same_geometry(self, other: "DenseAccumulator") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.cell_size == other.cell_size
        )

    def copy(self) -> "DenseAccumulator":
        out = DenseAccumulator(self.width, self.height, self.cell_size)
        out.count = self.count.copy()
        out.sum_dv_milli = self.sum_dv_milli.copy()
        out.sum_mag_milli = self.sum_mag_milli.copy()
        return out

    def _add_columns(self, u_m: np.ndarray, v_m: np.ndarray, du_m: np.ndarray, dv_m: np.ndarray) -> None:
        if u_m.size == 0:
            return
        bad = (u_m < 0) | (u_m >= self.width * MILLI) | (v_m < 0) | (v_m >= self.height * MILLI)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise BoundsError(
                f"vector at ({u_m[i] / MILLI}, {v_m[i] / MILLI}) outside {self.width}x{self.height} frame"
            )
        rows, cols = self.shape
        ci = v_m // (self.cell_size * MILLI)
        cj = u_m // (self.cell_size * MILLI)
        flat = (ci * cols + cj).astype(np.int64)
        n = rows * cols
        self.count += np.bincount(flat, minlength=n).reshape(rows, cols)
        # milli sums stay far below 2**53, so float bincount totals are exact integers
        self.sum_dv_milli += np.bincount(flat, weights=dv_m.astype(np.float64), minlength=n).astype(np.int64).reshape(rows, cols)
        mag_m = np.rint(np.hypot(du_m.astype(np.float64), dv_m.astype(np.float64))).astype(np.int64)
        self.sum_mag_milli += np.bincount(flat, weights=mag_m.astype(np.float64), minlength=n).astype(np.int64).reshape(rows, cols)

    def add_frame(self, frame) -> None:
        """Fold one frame (columnar tuple or iterable of MotionVector) into the grid."""
        self._add_columns(*frame_columns(frame))

    def add_sequence(self, seq: FlowSequence) -> None:
        if seq.width != self.width or seq.height != self.height:
            raise ValueError(
                f"sequence frame {seq.width}x{seq.height} does not match accumulator "
                f"{self.width}x{self.height}"
            )
        self._add_columns(seq.u_milli, seq.v_milli, seq.du_milli, seq.dv_milli)

    def cell_centres(self) -> tuple[np.ndarray, np.ndarray]:
        """Centre (u, v) of every cell; edge cells may be clipped by the frame."""
        rows, cols = self.shape
        c = self.cell_size
        v_lo = np.arange(rows) * c
        u_lo = np.arange(cols) * c
        v_hi = np.minimum(v_lo + c, self.height)
        u_hi = np.minimum(u_lo + c, self.width)
        return (u_lo + u_hi) / 2.0, (v_lo + v_hi) / 2.0


def accumulate(acc: DenseAccumulator, frame) -> DenseAccumulator:
    """Pure form of DenseAccumulator.add_frame: returns a new accumulator."""
    out = acc.copy()
    out.add_frame(frame)
    return out


def merge(a: DenseAccumulator, b: DenseAccumulator) -> DenseAccumulator:
    """Combine two accumulators over the same grid; integer sums make this exact."""
    if not a.same_geometry(b):
        raise ValueError("cannot merge accumulators with different grid geometry")
    out = a.copy()
    out.count += b.count
    out.sum_dv_milli += b.sum_dv_milli
    out.sum_mag_milli += b.sum_mag_milli
    return out


@dataclass(frozen=True)
class LocalZetaField:
    """Per-cell depth-rate estimates with a validity reason for every cell."""

    zeta: np.ndarray       # float64, NaN where invalid
    reason: np.ndarray     # uint8 codes, VALID where zeta is finite
    mean_dv: np.ndarray    # float64 time-averaged vertical velocity, NaN where unset
    count: np.ndarray      # int64 samples per cell
    cell_size: int
    width: int
    height: int

    @property
    def valid_mask(self) -> np.ndarray:
        return self.reason == VALID

    def valid_values(self) -> np.ndarray:
        return self.zeta[self.valid_mask]

    def cell_centres(self) -> tuple[np.ndarray, np.ndarray]:
        rows, cols = self.zeta.shape
        c = self.cell_size
        v_lo = np.arange(rows) * c
        u_lo = np.arange(cols) * c
        v_hi = np.minimum(v_lo + c, self.height)
        u_hi = np.minimum(u_lo + c, self.width)
        return (u_lo + u_hi) / 2.0, (v_lo + v_hi) / 2.0

    def to_csv(self) -> str:
        """cell row, cell col, centre u, centre v, zeta (empty when invalid), reason."""
        centre_u, centre_v = self.cell_centres()
        lines = ["cell_row,cell_col,centre_u,centre_v,zeta,reason"]
        rows, cols = self.zeta.shape
        for i in range(rows):
            for j in range(cols):
                code = int(self.reason[i, j])
                z = "" if code != VALID else f"{self.zeta[i, j]:.6g}"
                lines.append(
                    f"{i},{j},{centre_u[j]:.6g},{centre_v[i]:.6g},{z},{REASON_LABELS[code]}"
                )
        return "\n".join(lines) + "\n"


def local_zeta_field(
    acc: DenseAccumulator, min_samples: int = 10, velocity_epsilon: float = 0.2
) -> LocalZetaField:
    """Per-cell depth rate from the vertical gradient of mean vertical velocity.

    A cell needs at least ``min_samples`` observations, a mean vertical speed
    of at least ``velocity_epsilon`` (cells straddling the horizon or carrying
    only sideways motion are useless), and at least one vertically adjacent
    cell that also passes both checks to carry the finite difference.
    """
    if min_samples < 1:
        raise ValueError("min_samples must be at least 1")
    if velocity_epsilon <= 0:
        raise ValueError("velocity epsilon must be positive")

    rows, cols = acc.shape
    counted = acc.count >= min_samples
    with np.errstate(divide="ignore", invalid="ignore"):
        mean_dv = np.where(acc.count > 0, acc.sum_dv_milli / MILLI / np.maximum(acc.count, 1), np.nan)
    fast = counted & (np.abs(mean_dv) >= velocity_epsilon)

    zeta = np.full((rows, cols), np.nan)
    reason = np.full((rows, cols), VALID, dtype=np.uint8)
    reason[~counted] = TOO_FEW_SAMPLES
    reason[counted & ~fast] = BELOW_EPSILON

    for j in range(cols):
        col_ok = fast[:, j]
        if not col_ok.any():
            continue
        slope, slope_ok = masked_central_diff(np.where(col_ok, mean_dv[:, j], np.nan), col_ok, float(acc.cell_size))
        usable = col_ok & slope_ok
        # Projected vertical speed of in-plane world motion falls off with the
        # square of depth (velocity projection contributes one factor, the
        # row-to-depth compression the other), so the log-slope along the
        # column is twice the per-pixel relative depth rate.
        zeta[usable, j] = 0.5 * slope[usable] / mean_dv[usable, j]
        reason[col_ok & ~slope_ok, j] = NO_VERTICAL_NEIGHBOUR

    return LocalZetaField(
        zeta=zeta,
        reason=reason,
        mean_dv=mean_dv,
        count=acc.count.copy(),
        cell_size=acc.cell_size,
        width=acc.width,
        height=acc.height,
    )


@dataclass(frozen=True)
class ConsensusResult:
    zeta: float
    n_valid: int
    n_trimmed: int
    n_used: int


def trimmed_consensus(field_: LocalZetaField, trim: float = 0.15) -> ConsensusResult:
    """Global estimate: drop the extreme quantiles of the valid local estimates
    and average the remainder."""
    if not 0.0 <= trim < 0.5:
        raise ValueError("trim fraction must be in [0, 0.5)")
    values = field_.valid_values()
    n = int(values.size)
    needed = max(3, math.ceil(1.0 / (1.0 - 2.0 * trim)))
    if n < needed:
        raise InsufficientDataError(
            f"only {n} valid cells, need at least {needed} for trim {trim}", valid_count=n
        )
    k = math.floor(trim * n)
    return ConsensusResult(zeta=trimmed_mean(values, trim), n_valid=n, n_trimmed=2 * k, n_used=n - 2 * k)


@dataclass(frozen=True)
class DenseEstimate:
    zeta: float
    field: LocalZetaField
    consensus: ConsensusResult
    config: DenseConfig


def estimate_dense_from_accumulator(acc: DenseAccumulator, config: DenseConfig = DenseConfig()) -> DenseEstimate:
    field_ = local_zeta_field(acc, config.min_samples, config.velocity_epsilon)
    consensus = trimmed_consensus(field_, config.trim)
    return DenseEstimate(zeta=consensus.zeta, field=field_, consensus=consensus, config=config)


def estimate_dense(seq: FlowSequence, config: DenseConfig = DenseConfig()) -> DenseEstimate:
    """Accumulate a whole stream, extract the local field, and poll it."""
    acc = DenseAccumulator(seq.width, seq.height, config.cell_size)
    acc.add_sequence(seq)
    return estimate_dense_from_accumulator(acc, config)
