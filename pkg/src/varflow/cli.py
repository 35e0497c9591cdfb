"""Command-line surface: inpaint, costvol, quadfit, gradcheck, energy.

Exit codes: 0 success, 1 usage error, 2 malformed data or dimension
clash, 3 numerical failure.  All reports are machine-parsable key=value
lines.  Identical invocations produce byte-identical outputs regardless
of the thread count (``VARFLOW_THREADS``).
"""

import argparse
import sys

import numpy as np

from .confidence import edge_tensor
from .defaults import DEFAULTS
from .errors import DataError, DimMismatch, NumericalError
from .grid_io import (
    ConfidenceMap,
    DiffusionTensor,
    FlowField,
    ScalarMap,
    flow_to_png,
    read_flo,
    read_map,
    read_png_gray,
    write_flo,
    write_map,
)
from .matching import argmin_flow, correlate, softmax_prob
from .pyramid import PyramidConfig, solve_pyramid
from .quadfit import quadfit_refine
from .tv import SolverConfig, tv_backward, tv_energy, tv_forward
from .tgv import tgv_backward, tgv_energy, tgv_forward


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser():
    p = _Parser(prog="varflow", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ip = sub.add_parser("inpaint", help="densify a sparse flow estimate")
    ip.add_argument("--uhat", required=True, help="initial flow estimate (.flo)")
    ip.add_argument("--conf", required=True, help="confidence map (F32M, 1 channel)")
    ip.add_argument("--tensor", help="diffusion tensor (F32M, 2 channels)")
    ip.add_argument("--image", help="grayscale PNG for the edge-tensor fallback")
    ip.add_argument("--gamma", type=float, default=DEFAULTS["gamma"])
    ip.add_argument("--model", choices=("tv", "tgv"), default="tv")
    ip.add_argument("--delta", type=float, default=DEFAULTS["delta"])
    ip.add_argument("--beta", type=float, default=DEFAULTS["beta"])
    ip.add_argument("--levels", type=int, default=DEFAULTS["levels"])
    ip.add_argument("--level-iters", default=",".join(str(i) for i in DEFAULTS["level_iters"]))
    ip.add_argument("--precision", choices=("f64", "mixed"), default="f64")
    ip.add_argument("--checkpoint", choices=("sqrt", "full"), default="sqrt")
    ip.add_argument("--out", required=True, help="output flow (.flo)")
    ip.add_argument("--png", help="optional color-wheel rendering")
    ip.add_argument("--png-max", type=float, default=1.0)

    cv = sub.add_parser("costvol", help="cost volumes, argmin flow, likelihoods")
    cv.add_argument("--feat0", required=True, help="reference features (F32M)")
    cv.add_argument("--feat1", required=True, help="target features (F32M)")
    cv.add_argument("--range", type=int, default=DEFAULTS["range"])
    cv.add_argument("--out-flow", required=True, help="argmin flow (.flo)")
    cv.add_argument("--out-flow-bw", help="backward-direction argmin flow (.flo)")
    cv.add_argument("--out-prob0", help="likelihood volume, x axis (F32M)")
    cv.add_argument("--out-prob1", help="likelihood volume, y axis (F32M)")
    cv.add_argument("--refine", action="store_true")
    cv.add_argument("--hres0", help="full-resolution features (F32M), with --refine")
    cv.add_argument("--hres1", help="full-resolution features (F32M), with --refine")
    cv.add_argument("--out-refined", help="refined flow (.flo), with --refine")
    cv.add_argument("--out-cost", help="fit costs (F32M), with --refine")
    cv.add_argument("--out-fail", help="failure mask (F32M), with --refine")

    qf = sub.add_parser("quadfit", help="sub-pixel refinement of a coarse flow")
    qf.add_argument("--hres0", required=True)
    qf.add_argument("--hres1", required=True)
    qf.add_argument("--ubar", required=True, help="coarse integer flow (.flo)")
    qf.add_argument("--out", required=True, help="refined flow (.flo)")
    qf.add_argument("--out-cost")
    qf.add_argument("--out-fail")

    gc = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    gc.add_argument("--model", choices=("tv", "tgv"), default="tv")
    gc.add_argument("--grid", default="8x8", help="WxH")
    gc.add_argument("--iters", type=int, default=50)
    gc.add_argument("--fd-step", type=float, default=1e-5)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--seed", type=int, default=0)

    en = sub.add_parser("energy", help="evaluate the inpainting energy of a flow")
    en.add_argument("--model", choices=("tv", "tgv"), default="tv")
    en.add_argument("--flow", required=True)
    en.add_argument("--uhat", required=True)
    en.add_argument("--conf", required=True)
    en.add_argument("--tensor")
    en.add_argument("--image")
    en.add_argument("--gamma", type=float, default=DEFAULTS["gamma"])
    en.add_argument("--delta", type=float, default=DEFAULTS["delta"])
    en.add_argument("--beta", type=float, default=DEFAULTS["beta"])
    en.add_argument("--w0", help="auxiliary field (F32M), tgv only; default zero")
    en.add_argument("--w1", help="auxiliary field (F32M), tgv only; default zero")
    return p


def _load_conf(path, like):
    m = read_map(path)
    if m.channels != 1:
        raise DimMismatch(f"confidence must have 1 channel, got {m.channels}")
    if (m.width, m.height) != (like.width, like.height):
        raise DimMismatch(
            f"confidence {m.width}x{m.height} vs flow {like.width}x{like.height}"
        )
    return ConfidenceMap(np.clip(m.values[:, :, 0].astype(np.float64), 0.0, 1.0))


def _load_tensor(args, like):
    if args.tensor and args.image:
        raise DataError("pass either --tensor or --image, not both")
    if args.tensor:
        m = read_map(args.tensor)
        if m.channels != 2:
            raise DimMismatch(f"tensor must have 2 channels, got {m.channels}")
        if (m.width, m.height) != (like.width, like.height):
            raise DimMismatch(
                f"tensor {m.width}x{m.height} vs flow {like.width}x{like.height}"
            )
        vals = np.clip(m.values.astype(np.float64), 0.0, 1.0)
        return DiffusionTensor(vals[:, :, 0], vals[:, :, 1])
    if args.image:
        img = read_png_gray(args.image)
        if (img.width, img.height) != (like.width, like.height):
            raise DimMismatch(
                f"image {img.width}x{img.height} vs flow {like.width}x{like.height}"
            )
        return edge_tensor(img, args.gamma)
    return DiffusionTensor.ones(like.width, like.height)


def _parse_level_iters(spec, levels):
    try:
        iters = tuple(int(s) for s in spec.split(","))
    except ValueError as exc:
        raise DataError(f"bad --level-iters {spec!r}") from exc
    if len(iters) != levels:
        raise DataError(f"--level-iters lists {len(iters)} counts for {levels} levels")
    return iters


def cmd_inpaint(args):
    uhat = read_flo(args.uhat)
    conf = _load_conf(args.conf, uhat)
    tensor = _load_tensor(args, uhat)
    config = PyramidConfig(
        levels=args.levels,
        iters_per_level=_parse_level_iters(args.level_iters, args.levels),
        model=args.model,
        solver=SolverConfig(
            delta=args.delta,
            iters=1,  # per-level counts are set by the pyramid driver
            checkpoint_mode=args.checkpoint,
            precision=args.precision,
        ),
        beta=args.beta,
    )
    result = solve_pyramid(uhat, conf, tensor, config)
    write_flo(result, args.out)
    if args.png:
        with open(args.png, "wb") as fh:
            fh.write(flow_to_png(result, args.png_max))
    print(f"out={args.out}")
    return 0


def cmd_costvol(args):
    f0 = read_map(args.feat0)
    f1 = read_map(args.feat1)
    cor00, cor01, cor10, cor11 = correlate(f0, f1, args.range)
    flow = argmin_flow(cor00, cor01)
    write_flo(flow, args.out_flow)
    print(f"out_flow={args.out_flow}")
    if args.out_flow_bw:
        write_flo(argmin_flow(cor10, cor11), args.out_flow_bw)
        print(f"out_flow_bw={args.out_flow_bw}")
    if args.out_prob0:
        write_map(softmax_prob(cor00), args.out_prob0)
        print(f"out_prob0={args.out_prob0}")
    if args.out_prob1:
        write_map(softmax_prob(cor01), args.out_prob1)
        print(f"out_prob1={args.out_prob1}")
    if args.refine:
        if not (args.hres0 and args.hres1 and args.out_refined):
            raise DataError("--refine needs --hres0, --hres1 and --out-refined")
        res = quadfit_refine(read_map(args.hres0), read_map(args.hres1), flow)
        write_flo(res.flow, args.out_refined)
        print(f"out_refined={args.out_refined}")
        if args.out_cost:
            write_map(res.cost, args.out_cost)
            print(f"out_cost={args.out_cost}")
        if args.out_fail:
            write_map(ScalarMap(res.failed.astype(np.float32)), args.out_fail)
            print(f"out_fail={args.out_fail}")
    return 0


def cmd_quadfit(args):
    res = quadfit_refine(read_map(args.hres0), read_map(args.hres1), read_flo(args.ubar))
    write_flo(res.flow, args.out)
    print(f"out={args.out}")
    print(f"failed_pixels={int(res.failed.sum())}")
    if args.out_cost:
        write_map(res.cost, args.out_cost)
        print(f"out_cost={args.out_cost}")
    if args.out_fail:
        write_map(ScalarMap(res.failed.astype(np.float32)), args.out_fail)
        print(f"out_fail={args.out_fail}")
    return 0


def _gradcheck_instance(model, width, height, seed):
    rng = np.random.default_rng(seed)
    shape = (height, width)
    inst = {
        "uhat": rng.standard_normal(shape),
        "c": rng.uniform(0.0, 1.0, shape),
        "tw0": rng.uniform(0.0, 1.0, shape),
        "tw1": rng.uniform(0.0, 1.0, shape),
        "u0": None,
    }
    inst["u0"] = inst["uhat"] + 0.3 * rng.standard_normal(shape)
    if model == "tgv":
        inst["beta"] = float(rng.uniform(0.6, 1.2))
        inst["w0"] = 0.2 * rng.standard_normal(shape)
        inst["w1"] = 0.2 * rng.standard_normal(shape)
    return inst


def _rel_err(a, fd):
    return abs(a - fd) / max(abs(a), abs(fd), 1.0)


def cmd_gradcheck(args):
    try:
        ws, hs = args.grid.lower().split("x")
        width, height = int(ws), int(hs)
    except ValueError as exc:
        raise DataError(f"bad --grid {args.grid!r}, expected WxH") from exc
    if width < 1 or height < 1:
        raise DataError(f"empty grid {args.grid!r}")
    cfg = SolverConfig(delta=DEFAULTS["delta"], iters=args.iters, checkpoint_mode="sqrt", precision="f64")
    inst = _gradcheck_instance(args.model, width, height, args.seed)
    h = args.fd_step

    if args.model == "tv":
        uK, store = tv_forward(inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg, u0=inst["u0"])
        g = tv_backward(uK.copy(), store, inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg)
        analytic = {
            "uhat": g.d_uhat, "c": g.d_c, "tw0": g.d_tw0, "tw1": g.d_tw1, "u0": g.d_u0,
        }

        def run(ov):
            fields = {k: inst[k] for k in ("uhat", "c", "tw0", "tw1", "u0")}
            fields.update(ov)
            u, _ = tv_forward(fields["uhat"], fields["c"], fields["tw0"], fields["tw1"], cfg, u0=fields["u0"])
            return 0.5 * float(np.sum(u * u))

        families = ["uhat", "c", "tw0", "tw1", "u0"]
    else:
        uK, w0K, w1K, store = tgv_forward(
            inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], inst["beta"], cfg,
            u0=inst["u0"], w_init=(inst["w0"], inst["w1"]),
        )
        g = tgv_backward(
            uK.copy(), w0K.copy(), w1K.copy(), store,
            inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], inst["beta"], cfg,
        )
        analytic = {
            "uhat": g.d_uhat, "c": g.d_c, "tw0": g.d_tw0, "tw1": g.d_tw1,
            "u0": g.d_u0, "w0": g.d_w0, "w1": g.d_w1, "beta": g.d_beta,
        }

        def run(ov):
            keys = ("uhat", "c", "tw0", "tw1", "u0", "w0", "w1", "beta")
            fields = {k: inst[k] for k in keys}
            fields.update(ov)
            u, a0, a1, _ = tgv_forward(
                fields["uhat"], fields["c"], fields["tw0"], fields["tw1"],
                fields["beta"], cfg, u0=fields["u0"], w_init=(fields["w0"], fields["w1"]),
            )
            return 0.5 * float(np.sum(u * u) + np.sum(a0 * a0) + np.sum(a1 * a1))

        families = ["uhat", "c", "tw0", "tw1", "u0", "w0", "w1", "beta"]

    failures = []
    for fam in families:
        if fam == "beta":
            fd = (run({"beta": inst["beta"] + h}) - run({"beta": inst["beta"] - h})) / (2 * h)
            err = _rel_err(analytic["beta"], fd)
            worst = (err, "beta", "-", analytic["beta"], fd)
        else:
            base = inst[fam]
            worst = (0.0, fam, "-", 0.0, 0.0)
            for idx in np.ndindex(base.shape):
                bp = base.copy()
                bp[idx] += h
                bm = base.copy()
                bm[idx] -= h
                fd = (run({fam: bp}) - run({fam: bm})) / (2 * h)
                a = float(analytic[fam][idx])
                err = _rel_err(a, fd)
                if err > worst[0]:
                    worst = (err, fam, f"{idx[1]},{idx[0]}", a, fd)
        print(f"{fam}_max_rel_err={worst[0]:.6e}")
        if worst[0] >= args.tol:
            failures.append(worst)
    print(f"tol={args.tol:.6e}")
    if failures:
        worst = max(failures)
        print(
            f"result=fail family={worst[1]} coord={worst[2]} "
            f"analytic={worst[3]:.10e} fd={worst[4]:.10e}"
        )
        raise NumericalError("gradient check failed")
    print("result=pass")
    return 0


def cmd_energy(args):
    flow = read_flo(args.flow)
    uhat = read_flo(args.uhat)
    if (flow.width, flow.height) != (uhat.width, uhat.height):
        raise DimMismatch(
            f"flow {flow.width}x{flow.height} vs uhat {uhat.width}x{uhat.height}"
        )
    conf = _load_conf(args.conf, uhat)
    tensor = _load_tensor(args, uhat)
    total = 0.0
    if args.model == "tv":
        for fc, hc in ((flow.u0, uhat.u0), (flow.u1, uhat.u1)):
            total += tv_energy(fc, hc, conf.c, tensor.w0, tensor.w1, args.delta)
    else:
        shape = (flow.height, flow.width)
        aux = []
        for path in (args.w0, args.w1):
            if path:
                m = read_map(path)
                if m.channels != 2 or (m.width, m.height) != (flow.width, flow.height):
                    raise DimMismatch(f"auxiliary field {path} has wrong extent")
                aux.append(m.values.astype(np.float64))
            else:
                aux.append(np.zeros(shape + (2,)))
        for ch, (fc, hc) in enumerate(((flow.u0, uhat.u0), (flow.u1, uhat.u1))):
            total += tgv_energy(
                fc, aux[0][:, :, ch], aux[1][:, :, ch], hc, conf.c,
                tensor.w0, tensor.w1, args.beta, args.delta,
            )
    print(f"energy={total:.12g}")
    return 0


_COMMANDS = {
    "inpaint": cmd_inpaint,
    "costvol": cmd_costvol,
    "quadfit": cmd_quadfit,
    "gradcheck": cmd_gradcheck,
    "energy": cmd_energy,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"error={exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error={exc}", file=sys.stderr)
        return 3


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
