"""Block-level perspective estimation from inter-block transition statistics.

The image is divided into an n x m grid. Every block records the mean
magnitude of the vectors starting inside it and, for each of its eight
neighbours, how many vectors ended in the block after originating in that
neighbour. Each interior block then constrains the scale factor between
consecutive block rows: the motion seen in a block is modelled as a mixture of
its neighbours' motion, with contributions from the row above scaled by omega
and from the row below by 1/omega. The overdetermined system is solved either
in closed form after linearizing around omega = 1 or by direct minimization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BoundsError,
    DegenerateSystemError,
    InsufficientDataError,
    SolverConvergenceError,
    SolverDivergenceError,
)
from .flow import MILLI, FlowSequence, GridSpec, frame_columns
from .stats import scalar_lsq

TL, T, TR, L, R, BL, B, BR = range(8)
DIRECTION_LABELS = ("tl", "t", "tr", "l", "r", "bl", "b", "br")
VERTICAL_DIRECTIONS = (TL, T, TR, BL, B, BR)

# maps (di + 1, dj + 1) of the offset from a block toward the start block
_DIR_LUT = np.full((3, 3), -1, dtype=np.int64)
_DIR_LUT[0, 0], _DIR_LUT[0, 1], _DIR_LUT[0, 2] = TL, T, TR
_DIR_LUT[1, 0], _DIR_LUT[1, 2] = L, R
_DIR_LUT[2, 0], _DIR_LUT[2, 1], _DIR_LUT[2, 2] = BL, B, BR


@dataclass(frozen=True)
class CoarseConfig:
    solver: str = "closed_form"
    rho_denominator: str = "transitions"
    min_block_count: int = 5

    def __post_init__(self) -> None:
        if self.solver not in ("closed_form", "iterative"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.rho_denominator not in ("transitions", "all"):
            raise ValueError(f"unknown rho denominator {self.rho_denominator!r}")
        if self.min_block_count < 1:
            raise ValueError("min_block_count must be at least 1")


class BlockStats:
    """Mergeable per-block motion statistics over a fixed grid.

    All state is integer (counts and milli-pixel magnitude sums), so
    accumulation is order-independent and partitioned runs merge bit-exactly.
    """

    __slots__ = ("grid", "width", "height", "count", "sum_mag_milli", "trans", "intra")

    def __init__(self, grid: GridSpec, width: int, height: int) -> None:
        if width <= 0 or height <= 0:
            raise ValueError("frame dimensions must be positive")
        self.grid = grid
        self.width = int(width)
        self.height = int(height)
        n, m = grid.rows, grid.cols
        self.count = np.zeros((n, m), dtype=np.int64)
        self.sum_mag_milli = np.zeros((n, m), dtype=np.int64)
        self.trans = np.zeros((8, n, m), dtype=np.int64)
        self.intra = np.zeros((n, m), dtype=np.int64)

    def same_geometry(self, other: "BlockStats") -> bool:
        return self.grid == other.grid and self.width == other.width and self.height == other.height

    def copy(self) -> "BlockStats":
        out = BlockStats(self.grid, self.width, self.height)
        out.count = self.count.copy()
        out.sum_mag_milli = self.sum_mag_milli.copy()
        out.trans = self.trans.copy()
        out.intra = self.intra.copy()
        return out

    @property
    def block_height(self) -> float:
        return self.grid.block_height(self.height)

    def add_frame(self, frame) -> None:
        self._add_columns(*frame_columns(frame))

    def add_sequence(self, seq: FlowSequence) -> None:
        if seq.width != self.width or seq.height != self.height:
            raise ValueError("sequence frame size does not match block grid frame size")
        self._add_columns(seq.u_milli, seq.v_milli, seq.du_milli, seq.dv_milli)

    def _add_columns(self, u_m, v_m, du_m, dv_m) -> None:
        if u_m.size == 0:
            return
        bad = (u_m < 0) | (u_m >= self.width * MILLI) | (v_m < 0) | (v_m >= self.height * MILLI)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise BoundsError(
                f"vector at ({u_m[i] / MILLI}, {v_m[i] / MILLI}) outside {self.width}x{self.height} frame"
            )
        rows, cols = self.grid.rows, self.grid.cols
        # scale x by cols and y by rows so block boundaries sit at exact integers
        ws = self.width * MILLI
        hs = self.height * MILLI
        xs = u_m * cols
        ys = v_m * rows
        xe = (u_m + du_m) * cols
        ye = (v_m + dv_m) * rows
        bj = xs // ws
        bi = ys // hs
        ej = xe // ws
        ei = ye // hs
        di = ei - bi
        dj = ej - bj

        n_blocks = rows * cols
        start_flat = bi * cols + bj
        self.count += np.bincount(start_flat, minlength=n_blocks).reshape(rows, cols)
        mag_m = np.rint(np.hypot(du_m.astype(np.float64), dv_m.astype(np.float64)))
        self.sum_mag_milli += (
            np.bincount(start_flat, weights=mag_m, minlength=n_blocks).astype(np.int64).reshape(rows, cols)
        )

        same = (di == 0) & (dj == 0)
        self.intra += np.bincount(start_flat[same], minlength=n_blocks).reshape(rows, cols)

        in_grid_end = (ei >= 0) & (ei < rows) & (ej >= 0) & (ej < cols)

        trans_flat = np.zeros(8 * n_blocks, dtype=np.int64)

        orth = (np.abs(di) + np.abs(dj) == 1) & in_grid_end
        if orth.any():
            d = _DIR_LUT[1 - di[orth], 1 - dj[orth]]
            trans_flat += np.bincount(d * n_blocks + ei[orth] * cols + ej[orth], minlength=8 * n_blocks)

        diag = (np.abs(di) == 1) & (np.abs(dj) == 1)
        if diag.any():
            bi_d, bj_d = bi[diag], bj[diag]
            ei_d, ej_d = ei[diag], ej[diag]
            di_d, dj_d = di[diag], dj[diag]
            # crossing parameters of the column/row boundary as exact fractions
            xb = (bj_d + (dj_d > 0)) * ws
            yb = (bi_d + (di_d > 0)) * hs
            px = (xb - xs[diag]) * dj_d
            py = (yb - ys[diag]) * di_d
            qx = (xe[diag] - xs[diag]) * dj_d
            qy = (ye[diag] - ys[diag]) * di_d
            cross_x_first = px * qy < py * qx
            cross_y_first = px * qy > py * qx
            # intermediate block: shares a row or column with the start block
            mi = np.where(cross_x_first, bi_d, ei_d)
            mj = np.where(cross_x_first, ej_d, bj_d)
            mdir = np.where(cross_x_first, _DIR_LUT[1, 1 - dj_d], _DIR_LUT[1 - di_d, 1])
            has_mid = (cross_x_first | cross_y_first) & (mi >= 0) & (mi < rows) & (mj >= 0) & (mj < cols)
            if has_mid.any():
                trans_flat += np.bincount(
                    mdir[has_mid] * n_blocks + mi[has_mid] * cols + mj[has_mid], minlength=8 * n_blocks
                )
            end_ok = in_grid_end[diag]
            if end_ok.any():
                d = _DIR_LUT[1 - di_d[end_ok], 1 - dj_d[end_ok]]
                trans_flat += np.bincount(
                    d * n_blocks + ei_d[end_ok] * cols + ej_d[end_ok], minlength=8 * n_blocks
                )

        rest = ~same & ~(np.abs(di) + np.abs(dj) == 1) & ~diag
        if rest.any():
            idx = np.nonzero(rest)[0]
            for k in idx:
                for (ci, cj) in _trace_blocks(
                    int(xs[k]), int(ys[k]), int(xe[k]), int(ye[k]), ws, hs
                ):
                    if not (0 <= ci < rows and 0 <= cj < cols):
                        continue
                    oi, oj = int(bi[k]) - ci, int(bj[k]) - cj
                    if max(abs(oi), abs(oj)) == 1:
                        trans_flat[_DIR_LUT[oi + 1, oj + 1] * n_blocks + ci * cols + cj] += 1

        self.trans += trans_flat.reshape(8, rows, cols)


def _trace_blocks(x0: int, y0: int, x1: int, y1: int, ws: int, hs: int) -> list[tuple[int, int]]:
    """Blocks entered by the segment after its start block, in crossing order.

    Coordinates are pre-scaled so column boundaries are multiples of ws and
    row boundaries multiples of hs; all comparisons are exact integer
    arithmetic. A segment passing exactly through a corner enters only the
    diagonal block.
    """
    dx, dy = x1 - x0, y1 - y0
    ci, cj = y0 // hs, x0 // ws
    sj = 1 if dx > 0 else -1
    si = 1 if dy > 0 else -1
    entered: list[tuple[int, int]] = []

    def x_cross(col: int) -> tuple[int, int] | None:
        if dx == 0:
            return None
        bound = (col + 1) * ws if dx > 0 else col * ws
        num = bound - x0 if dx > 0 else x0 - bound
        den = dx if dx > 0 else -dx
        return (num, den) if num <= den else None

    def y_cross(row: int) -> tuple[int, int] | None:
        if dy == 0:
            return None
        bound = (row + 1) * hs if dy > 0 else row * hs
        num = bound - y0 if dy > 0 else y0 - bound
        den = dy if dy > 0 else -dy
        return (num, den) if num <= den else None

    while True:
        tx = x_cross(cj)
        ty = y_cross(ci)
        if tx is None and ty is None:
            break
        if ty is None or (tx is not None and tx[0] * ty[1] < ty[0] * tx[1]):
            cj += sj
        elif tx is None or tx[0] * ty[1] > ty[0] * tx[1]:
            ci += si
        else:
            ci += si
            cj += sj
        entered.append((ci, cj))
    return entered


def accumulate_blocks(stats: BlockStats, frame) -> BlockStats:
    """Pure form of BlockStats.add_frame: returns a new statistics object."""
    out = stats.copy()
    out.add_frame(frame)
    return out


def merge(a: BlockStats, b: BlockStats) -> BlockStats:
    if not a.same_geometry(b):
        raise ValueError("cannot merge block statistics with different geometry")
    out = a.copy()
    out.count += b.count
    out.sum_mag_milli += b.sum_mag_milli
    out.trans += b.trans
    out.intra += b.intra
    return out


@dataclass(frozen=True)
class FinalizedBlockStats:
    """Block statistics with transition proportions resolved to fractions."""

    grid: GridSpec
    width: int
    height: int
    m: np.ndarray          # mean start-vector magnitude per block (pixels/frame)
    rho: np.ndarray        # (8, n, m) transition proportions
    count: np.ndarray      # start-vector count per block
    intra: np.ndarray
    trans_total: np.ndarray
    empty: np.ndarray      # no vector ended in or stayed inside the block
    denominator: str

    def to_csv(self) -> str:
        header = "i,j,m," + ",".join(f"rho_{d}" for d in DIRECTION_LABELS) + ",count,intra,transitions"
        lines = [header]
        n, mcols = self.m.shape
        for i in range(n):
            for j in range(mcols):
                rhos = ",".join(f"{self.rho[d, i, j]:.6g}" for d in range(8))
                lines.append(
                    f"{i},{j},{self.m[i, j]:.6g},{rhos},{self.count[i, j]},{self.intra[i, j]},{self.trans_total[i, j]}"
                )
        return "\n".join(lines) + "\n"


def finalize_proportions(stats: BlockStats, denominator: str = "transitions") -> FinalizedBlockStats:
    """Turn raw transition counts into proportions.

    ``transitions`` normalizes over boundary-crossing vectors only, so the
    eight proportions of a block that receives any transitions sum to one.
    ``all`` additionally counts vectors that stayed inside the block, which
    deflates every proportion by the intra-block share.
    """
    if denominator not in ("transitions", "all"):
        raise ValueError(f"unknown rho denominator {denominator!r}")
    trans_total = stats.trans.sum(axis=0)
    ending = trans_total + stats.intra
    denom = ending if denominator == "all" else trans_total
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(denom > 0, stats.trans / np.maximum(denom, 1), 0.0)
        m = np.where(stats.count > 0, stats.sum_mag_milli / MILLI / np.maximum(stats.count, 1), 0.0)
    return FinalizedBlockStats(
        grid=stats.grid,
        width=stats.width,
        height=stats.height,
        m=m,
        rho=rho,
        count=stats.count.copy(),
        intra=stats.intra.copy(),
        trans_total=trans_total,
        empty=ending == 0,
        denominator=denominator,
    )


@dataclass(frozen=True)
class BlockConstraint:
    """Mixture constraint of one interior block.

    The block's mean magnitude is modelled as lateral + top * omega +
    bottom / omega, where top and bottom group the proportions arriving from
    the row above and below, each weighted by that row's vertical neighbour
    magnitude.
    """

    i: int
    j: int
    m_centre: float
    lateral: float
    top: float
    bottom: float

    @property
    def coeff(self) -> float:
        """Linearized coefficient of delta-omega."""
        return self.top - self.bottom

    @property
    def rhs(self) -> float:
        """Linearized right-hand side: unexplained part of the block's motion."""
        return self.m_centre - (self.lateral + self.top + self.bottom)

    def residual(self, omega: float) -> float:
        return self.m_centre - (self.lateral + self.top * omega + self.bottom / omega)


def build_constraints(final: FinalizedBlockStats, min_block_count: int = 5) -> list[BlockConstraint]:
    """One constraint per usable interior block.

    A block is usable when it holds enough vectors, has nonzero mean motion,
    and at least one nonzero vertical transition proportion; otherwise there
    is no inter-row signal to constrain.
    """
    n, mcols = final.m.shape
    rho, m = final.rho, final.m
    out: list[BlockConstraint] = []
    for i in range(1, n - 1):
        for j in range(1, mcols - 1):
            if final.count[i, j] < min_block_count or m[i, j] == 0.0:
                continue
            vertical = sum(rho[d, i, j] for d in VERTICAL_DIRECTIONS)
            if vertical == 0.0:
                continue
            top = (rho[TL, i, j] + rho[T, i, j] + rho[TR, i, j]) * m[i - 1, j]
            bottom = (rho[BL, i, j] + rho[B, i, j] + rho[BR, i, j]) * m[i + 1, j]
            lateral = rho[L, i, j] * m[i, j - 1] + rho[R, i, j] * m[i, j + 1]
            out.append(BlockConstraint(i=i, j=j, m_centre=m[i, j], lateral=lateral, top=top, bottom=bottom))
    if not out:
        raise InsufficientDataError("no usable interior block constraints", valid_count=0)
    return out


@dataclass(frozen=True)
class OmegaEstimate:
    """Inter-row scale factor and the per-pixel depth rate it implies."""

    omega: float
    residual: float
    n_constraints: int
    solver: str
    block_height: float
    iterations: int = 0

    @property
    def delta_omega(self) -> float:
        return self.omega - 1.0

    @property
    def zeta(self) -> float:
        # One block row down, motion magnitude scales by omega while object
        # scale (inverse depth) scales by sqrt(omega); spread over the block
        # height this gives the per-pixel relative depth rate.
        return (1.0 - self.omega ** -0.5) / self.block_height


def solve_closed_form(constraints: list[BlockConstraint], block_height: float) -> OmegaEstimate:
    """Least-squares delta-omega of the constraints linearized around omega = 1."""
    if not constraints:
        raise InsufficientDataError("no constraints to solve", valid_count=0)
    a = np.array([c.coeff for c in constraints])
    b = np.array([c.rhs for c in constraints])
    if not np.any(a != 0.0):
        raise DegenerateSystemError("no vertical transition signal in any constraint")
    delta = scalar_lsq(a, b)
    omega = 1.0 + delta
    if omega <= 0.0:
        raise SolverDivergenceError(f"solved omega {omega:.6g} is not positive")
    residual = float(np.linalg.norm(a * delta - b))
    return OmegaEstimate(
        omega=omega,
        residual=residual,
        n_constraints=len(constraints),
        solver="closed_form",
        block_height=block_height,
    )


def solve_iterative(
    constraints: list[BlockConstraint],
    block_height: float,
    tol: float = 1e-12,
    max_iterations: int = 100,
) -> OmegaEstimate:
    """Minimize the exact mixture residual norm over omega > 0 by damped Newton."""
    if not constraints:
        raise InsufficientDataError("no constraints to solve", valid_count=0)
    m_c = np.array([c.m_centre for c in constraints])
    lat = np.array([c.lateral for c in constraints])
    top = np.array([c.top for c in constraints])
    bot = np.array([c.bottom for c in constraints])
    if not (np.any(top != 0.0) or np.any(bot != 0.0)):
        raise DegenerateSystemError("no vertical transition signal in any constraint")

    def objective(w: float) -> float:
        r = m_c - lat - top * w - bot / w
        return float(r @ r)

    def derivatives(w: float) -> tuple[float, float]:
        r = m_c - lat - top * w - bot / w
        r1 = -top + bot / w**2
        r2 = -2.0 * bot / w**3
        return float(2.0 * r @ r1), float(2.0 * (r1 @ r1 + r @ r2))

    omega = 1.0
    f_cur = objective(omega)
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        g, h = derivatives(omega)
        if g == 0.0:
            break
        step = -g / h if h > 0 else -math.copysign(0.1, g)
        # backtrack to stay in omega > 0 and to never increase the objective
        accepted = False
        for _ in range(60):
            cand = omega + step
            if cand > 0:
                f_new = objective(cand)
                if f_new <= f_cur:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
        moved = abs(f_cur - f_new)
        omega, f_cur = cand, f_new
        if moved < tol:
            break
    else:
        raise SolverConvergenceError(
            f"no convergence after {max_iterations} iterations (omega {omega:.6g})",
            last_omega=omega,
            iterations=max_iterations,
        )
    if omega <= 0.0:
        raise SolverDivergenceError(f"solved omega {omega:.6g} is not positive")
    residual = float(math.sqrt(objective(omega)))
    return OmegaEstimate(
        omega=omega,
        residual=residual,
        n_constraints=len(constraints),
        solver="iterative",
        block_height=block_height,
        iterations=iterations,
    )


@dataclass(frozen=True)
class CoarseEstimate:
    estimate: OmegaEstimate
    stats: BlockStats
    finalized: FinalizedBlockStats
    config: CoarseConfig

    @property
    def zeta(self) -> float:
        return self.estimate.zeta


def estimate_coarse_from_stats(stats: BlockStats, config: CoarseConfig = CoarseConfig()) -> CoarseEstimate:
    final = finalize_proportions(stats, config.rho_denominator)
    constraints = build_constraints(final, config.min_block_count)
    if config.solver == "closed_form":
        est = solve_closed_form(constraints, stats.block_height)
    else:
        est = solve_iterative(constraints, stats.block_height)
    return CoarseEstimate(estimate=est, stats=stats, finalized=final, config=config)


def estimate_coarse(
    seq: FlowSequence, grid: GridSpec = GridSpec(10, 10), config: CoarseConfig = CoarseConfig()
) -> CoarseEstimate:
    stats = BlockStats(grid, seq.width, seq.height)
    stats.add_sequence(seq)
    return estimate_coarse_from_stats(stats, config)
