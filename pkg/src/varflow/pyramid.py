"""Coarse-to-fine driver for the TV/TGV solvers.

Resampling choices (the solvers are agnostic to them): confidence is
2x2 max-pooled so sparse supporting pixels survive, the diffusion tensor
is min-pooled so weak-regularization lines survive, and the initial flow
estimate is taken at each block's most confident pixel.  Flow values
halve when going down and double when going up; the coarsest level starts
from the downsampled estimate, finer levels from the upsampled previous
solution.  With a single level the inputs pass through untouched and the
result is bit-identical to a direct solver call.
"""

from dataclasses import dataclass, field

import numpy as np

from .defaults import DEFAULTS
from .errors import DimTooSmall, EmptyLevel, NonPositiveValue
from .grid_io import ConfidenceMap, DiffusionTensor, FlowField
from .tv import SolverConfig, tv_forward
from .tgv import tgv_forward


@dataclass
class PyramidConfig:
    levels: int = DEFAULTS["levels"]
    iters_per_level: tuple = DEFAULTS["level_iters"]  # coarsest first
    model: str = "tv"  # "tv" or "tgv"
    solver: SolverConfig = field(default_factory=SolverConfig)
    beta: float = DEFAULTS["beta"]

    def validate(self):
        if self.levels < 1:
            raise NonPositiveValue(f"levels must be >= 1, got {self.levels}")
        if len(self.iters_per_level) != self.levels:
            raise NonPositiveValue(
                f"{self.levels} levels but {len(self.iters_per_level)} iteration counts"
            )
        if self.model not in ("tv", "tgv"):
            raise NonPositiveValue(f"unknown model {self.model!r}")
        self.solver.validate()


def _block_index(n, nb):
    # block of each fine index; the remainder of an odd extent folds into
    # the last block
    return np.minimum(np.arange(n) // 2, nb - 1)


def downsample_inputs(uhat, c, tensor):
    """Half-resolution (uhat', c', tensor'): c by block max, tensor by
    block min, uhat at each block's most confident pixel with values
    halved."""
    if not isinstance(uhat, FlowField):
        uhat = FlowField(*uhat)
    M, N = uhat.u0.shape
    if M < 2 or N < 2:
        raise DimTooSmall(f"cannot downsample a {N}x{M} grid")
    Mb, Nb = M // 2, N // 2
    by = _block_index(M, Mb)
    bx = _block_index(N, Nb)
    blk = (by[:, None] * Nb + bx[None, :]).ravel()
    cv = np.asarray(c.c if isinstance(c, ConfidenceMap) else c, dtype=np.float64)
    w0 = np.asarray(tensor.w0, dtype=np.float64)
    w1 = np.asarray(tensor.w1, dtype=np.float64)

    cmax = np.full(Mb * Nb, -np.inf)
    np.maximum.at(cmax, blk, cv.ravel())
    w0min = np.full(Mb * Nb, np.inf)
    np.minimum.at(w0min, blk, w0.ravel())
    w1min = np.full(Mb * Nb, np.inf)
    np.minimum.at(w1min, blk, w1.ravel())

    # first (row-major) pixel attaining the block max carries the flow value
    is_max = cv.ravel() == cmax[blk]
    order = np.arange(M * N)
    first = np.full(Mb * Nb, M * N, dtype=np.int64)
    np.minimum.at(first, blk[is_max], order[is_max])
    u0c = (uhat.u0.astype(np.float64).ravel()[first] / 2.0).reshape(Mb, Nb)
    u1c = (uhat.u1.astype(np.float64).ravel()[first] / 2.0).reshape(Mb, Nb)

    return (
        FlowField(u0c, u1c),
        ConfidenceMap(cmax.reshape(Mb, Nb)),
        DiffusionTensor(w0min.reshape(Mb, Nb), w1min.reshape(Mb, Nb)),
    )


def upsample_flow(flow, out_width, out_height):
    """Bilinear upsampling to the given extent with flow values doubled."""
    if not isinstance(flow, FlowField):
        flow = FlowField(*flow)
    Min, Nin = flow.u0.shape
    if out_width < Nin or out_height < Min:
        raise DimTooSmall(f"target {out_width}x{out_height} below source")

    sx = Nin / out_width
    sy = Min / out_height
    cx = np.clip((np.arange(out_width) + 0.5) * sx - 0.5, 0, Nin - 1)
    cy = np.clip((np.arange(out_height) + 0.5) * sy - 0.5, 0, Min - 1)
    x0 = np.floor(cx).astype(np.int64)
    y0 = np.floor(cy).astype(np.int64)
    x1 = np.minimum(x0 + 1, Nin - 1)
    y1 = np.minimum(y0 + 1, Min - 1)
    fx = (cx - x0)[None, :]
    fy = (cy - y0)[:, None]

    def interp(ch):
        ch = ch.astype(np.float64)
        top = ch[y0[:, None], x0[None, :]] * (1.0 - fx) + ch[y0[:, None], x1[None, :]] * fx
        bot = ch[y1[:, None], x0[None, :]] * (1.0 - fx) + ch[y1[:, None], x1[None, :]] * fx
        return 2.0 * (top * (1.0 - fy) + bot * fy)

    return FlowField(interp(flow.u0), interp(flow.u1))


def solve_pyramid(uhat, c, tensor, config):
    """Run the configured solver coarse-to-fine and return the dense flow."""
    config.validate()
    if not isinstance(uhat, FlowField):
        uhat = FlowField(*uhat)
    if not isinstance(c, ConfidenceMap):
        c = ConfidenceMap(c)
    if not isinstance(tensor, DiffusionTensor):
        tensor = DiffusionTensor(*tensor)

    # finest first; each entry is (uhat, c, tensor) at that scale
    levels = [(uhat, c, tensor)]
    for _ in range(config.levels - 1):
        fu, fc, ft = levels[-1]
        if fu.width < 2 or fu.height < 2:
            raise EmptyLevel(
                f"level below {fu.width}x{fu.height} would be empty; "
                f"reduce the level count"
            )
        levels.append(downsample_inputs(fu, fc, ft))

    u0_init = None  # None means: start from the level's own uhat
    result = None
    for lvl in range(config.levels - 1, -1, -1):
        lu, lc, lt = levels[lvl]
        iters = config.iters_per_level[config.levels - 1 - lvl]
        cfg = SolverConfig(
            delta=config.solver.delta,
            iters=int(iters),
            checkpoint_mode=config.solver.checkpoint_mode,
            precision=config.solver.precision,
        )
        channels = []
        for ch in range(2):
            target = lu.u0 if ch == 0 else lu.u1
            init = None if u0_init is None else (u0_init.u0 if ch == 0 else u0_init.u1)
            if config.model == "tv":
                uK, _ = tv_forward(target, lc.c, lt.w0, lt.w1, cfg, u0=init)
            else:
                uK, _, _, _ = tgv_forward(
                    target, lc.c, lt.w0, lt.w1, config.beta, cfg, u0=init
                )
            channels.append(np.asarray(uK, dtype=np.float64))
        result = FlowField(channels[0], channels[1])
        if lvl > 0:
            finer = levels[lvl - 1][0]
            u0_init = upsample_flow(result, finer.width, finer.height)
    return result
