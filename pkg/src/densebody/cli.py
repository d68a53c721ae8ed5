"""Command-line entry point: ``densebody <subcommand> ...``.

Every subcommand prints a JSON report to stdout (or ``--report PATH``).
Exit codes: 0 success, 2 usage error, 3 invalid input file, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bodymodel import SMPL_TREE, WeakPerspectiveCamera, project_weak_perspective, skin, toy_model
from .errors import FormatError, NumericalError, ShapeError
from .losses import COMPONENTS, LossWeights, total_loss
from .maps import DropConfig, IuvMap, apply_drop, dropped_fraction, foreground_bbox
from .rasterizer import RasterConfig, render_iuv
from .refine import VARIANTS
from .roipool import RoiConfig, crop_resample, roi_params, simplify_partial
from .tensorio import load_body_model, read_tensor, save_body_model, write_ppm_iuv, write_tensor

EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 2, 3, 4
METRICS = ("pve", "pve-s", "pve-p", "mpjpe", "mpjpe-pa", "oks-ap")


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _floats(text: str, n: int | None = None, what: str = "value") -> list[float]:
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise UsageError(f"bad {what} {text!r}: expected comma-separated numbers") from None
    if n is not None and len(vals) != n:
        raise UsageError(f"bad {what} {text!r}: expected {n} numbers")
    return vals


def _camera(text: str) -> WeakPerspectiveCamera:
    s, tx, ty = _floats(text, 3, "camera")
    try:
        return WeakPerspectiveCamera(s, (tx, ty))
    except NumericalError as e:
        raise UsageError(str(e)) from None


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"bad size {text!r}: expected HxW") from None
    return h, w


def _read(path) -> np.ndarray:
    try:
        return read_tensor(path)
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror or e}") from None
    except FormatError as e:
        raise InputError(f"{path}: {e}") from None


def _read_map(path) -> IuvMap:
    data = _read(path)
    try:
        return IuvMap(data)
    except ShapeError as e:
        raise InputError(f"{path}: {e}") from None


def _load_model(path):
    try:
        return load_body_model(path)
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror or e}") from None
    except (FormatError, ValueError) as e:
        raise InputError(f"{path}: {e}") from None


def _write_map(m: IuvMap, out, ppm) -> dict:
    write_tensor(m.data, out)
    files = {"map": str(out)}
    if ppm:
        write_ppm_iuv(m, ppm)
        files["ppm"] = str(ppm)
    return files


def _upright_rest(K: int) -> np.ndarray:
    # images are y-down and the model is y-up: a half turn of the root about x stands it upright
    theta = np.zeros((K, 3))
    theta[0, 0] = np.pi
    return theta


def _fig_path(args, name: str) -> Path | None:
    if getattr(args, "fig_dir", None) is None:
        return None
    d = Path(args.fig_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_model(args) -> dict:
    model = toy_model(args.seed, args.segments)
    save_body_model(model, args.out)
    return {
        "command": "gen-model", "seed": args.seed, "out": str(args.out),
        "vertices": model.num_vertices, "faces": int(len(model.faces)),
        "joints": model.num_joints, "parts": model.num_parts, "betas": model.num_betas,
    }


def cmd_render_iuv(args) -> dict:
    model = _load_model(args.model)
    K, S = model.num_joints, model.num_betas
    theta = _read(args.theta) if args.theta else _upright_rest(K)
    beta = _read(args.beta) if args.beta else np.zeros(S)
    if theta.size != 3 * K or beta.size != S:
        raise InputError(f"pose needs {3 * K} values and shape {S}; got {theta.size} and {beta.size}")
    cam = _camera(args.cam)
    h, w = _size(args.size)
    cfg = RasterConfig(h, w)
    m = render_iuv(model, theta.reshape(K, 3), beta.reshape(S), cam, cfg, workers=args.threads)
    files = _write_map(m, args.out, args.ppm)
    _, joints = skin(model, theta.reshape(K, 3), beta.reshape(S), return_joints=True)
    if args.joints2d_out:
        write_tensor(project_weak_perspective(joints, cam), args.joints2d_out)
        files["joints2d"] = str(args.joints2d_out)
    fig = _fig_path(args, "iuv.png")
    if fig:
        from .plotting import plot_iuv

        plot_iuv(m, fig)
        files["figure"] = str(fig)
    box = foreground_bbox(m)
    return {
        "command": "render-iuv", "size": [h, w], "files": files,
        "foreground_pixels": int((m.data[0, ..., 0] == 0).sum()),
        "bbox": None if box is None else {"w": box[0], "h": box[1], "center": list(box[2])},
    }


def cmd_drop(args) -> dict:
    m = _read_map(args.input)
    cfg = DropConfig(args.gamma, args.strategy, args.block_size, args.seed)
    out = apply_drop(m, cfg)
    files = _write_map(out, args.out, args.ppm)
    return {
        "command": "drop", "strategy": cfg.strategy.value, "gamma": cfg.gamma, "seed": args.seed,
        "block_size": cfg.block_size, "dropped_fraction": dropped_fraction(m, out), "files": files,
    }


def cmd_pool(args) -> dict:
    m = _read_map(args.input)
    j2d = _read(args.joints2d).reshape(-1, 2)
    if not 0 <= args.joint < len(j2d):
        raise UsageError(f"joint {args.joint} out of range for {len(j2d)} joints")
    cfg = RoiConfig(alpha=(args.alpha,) * len(j2d), delta=args.delta, out_res=args.res)
    box = foreground_bbox(m)
    extents = (0.0, 0.0) if box is None else box[:2]
    win = roi_params(j2d[args.joint], extents, cfg, args.joint)
    part = crop_resample(m, win, cfg.out_res, fill="background")
    if args.simplify:
        if len(j2d) != m.num_parts:
            raise InputError(f"--simplify expects one part per joint ({len(j2d)} joints, {m.num_parts} parts)")
        if args.model:
            tree = _load_model(args.model).tree
        elif len(j2d) == len(SMPL_TREE):
            tree = SMPL_TREE
        else:
            raise UsageError("--simplify on a non-SMPL skeleton needs --model")
        if len(tree) != len(j2d):
            raise InputError(f"model has {len(tree)} joints, joints2d has {len(j2d)}")
        part = simplify_partial(part, args.joint, tree)
    files = _write_map(part, args.out, args.ppm)
    return {
        "command": "pool", "joint": args.joint, "window": {"center": list(win.center), "side": win.side},
        "res": cfg.out_res, "files": files,
    }


def cmd_refine_demo(args) -> dict:
    from .demo import DemoConfig, run_refine_demo

    variants = VARIANTS if args.variant == "all" else (args.variant,)
    orth_weight = _weights(args).lambda_orth if args.loss_weights else args.orth_weight
    runs, masks = {}, {}
    for v in variants:
        cfg = DemoConfig(seed=args.seed, steps=args.steps, variant=v, channels=args.channels,
                         layers=args.layers, batch=args.batch, lr=args.lr, orth_weight=orth_weight)
        runs[v], masks[v] = run_refine_demo(cfg)
    files = {}
    stem = Path(args.out)
    for v, mask in masks.items():
        if mask is not None:
            p = stem.with_name(f"{stem.stem}_{v}_mask.dnt")
            write_tensor(mask, p)
            files[f"mask_{v}"] = str(p)
            runs[v]["edge_mask_file"] = str(p)
    if args.fig_dir:
        from .plotting import plot_loss_curves, plot_matrix

        curves = {v: r["loss_curve"] for v, r in runs.items() if r["loss_curve"]}
        if curves:
            p = _fig_path(args, "loss_curves.png")
            plot_loss_curves(curves, p, "refinement loss")
            files["loss_figure"] = str(p)
            csv_path = _fig_path(args, "loss_curves.csv")
            with open(csv_path, "w", newline="", encoding="utf-8") as fh:
                wr = csv.writer(fh)
                wr.writerow(["step", *curves])
                for i in range(max(len(c) for c in curves.values())):
                    wr.writerow([i, *(repr(c[i]) if i < len(c) else "" for c in curves.values())])
            files["loss_csv"] = str(csv_path)
        for v, mask in masks.items():
            if mask is not None:
                p = _fig_path(args, f"edge_mask_{v}.png")
                plot_matrix(mask, p, f"edge mask ({v})", 0.0, 1.0)
                files[f"mask_figure_{v}"] = str(p)
    report = {"command": "refine-demo", "seed": args.seed, "steps": args.steps, "files": files}
    if len(runs) == 1:
        report.update(next(iter(runs.values())))
    else:
        report["variants"] = runs
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return report


def _batched(a: np.ndarray, trailing: int) -> np.ndarray:
    if a.ndim == trailing:
        return a[None]
    if a.ndim == trailing + 1:
        return a
    raise InputError(f"expected rank {trailing} or {trailing + 1} tensor, got shape {a.shape}")


def _eval_oks_ap(pred: np.ndarray, gt: np.ndarray, kappa) -> tuple[dict, int]:
    from .metrics import Detection, GroundTruth, keypoint_ap

    if pred.ndim != 2 or gt.ndim != 2 or (pred.shape[1] - 2) % 2 or (gt.shape[1] - 2) % 3:
        raise InputError("oks-ap expects detection rows [image, score, x, y, ...] "
                         "and ground-truth rows [image, area, x, y, v, ...]")
    J = (pred.shape[1] - 2) // 2
    if (gt.shape[1] - 2) // 3 != J:
        raise InputError("detections and ground truths have different keypoint counts")
    dets = [Detection(int(r[0]), float(r[1]), r[2:].reshape(J, 2)) for r in pred]
    gts = [GroundTruth(int(r[0]), r[2:].reshape(J, 3)[:, :2], r[2:].reshape(J, 3)[:, 2], float(r[1]))
           for r in gt]
    return keypoint_ap(dets, gts, kappa=kappa), len(gts)


def cmd_eval(args) -> dict:
    from . import metrics as mt

    pred, gt = _read(args.pred), _read(args.gt)
    report = {"command": "eval", "metric": args.metric}
    if args.metric == "oks-ap":
        kappa = _floats(args.kappa, what="kappa") if args.kappa else None
        value, count = _eval_oks_ap(pred, gt, kappa)
        report.update(value=value, count=count, units="AP")
        return report
    if pred.shape != gt.shape:
        raise InputError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    if args.metric in ("pve-s", "pve-p"):
        if not args.model:
            raise UsageError(f"{args.metric} needs --model")
        model = _load_model(args.model)
        K3, S = 3 * model.num_joints, model.num_betas
        P, G = _batched(pred, 1), _batched(gt, 1)
        if P.shape[1] != K3 + S:
            raise InputError(f"parameter rows need {K3} pose + {S} shape values, got {P.shape[1]}")
        fn = mt.pve_s if args.metric == "pve-s" else mt.pve_p
        vals = [fn(model, (p[:K3], p[K3:]), (g[:K3], g[K3:])) for p, g in zip(P, G)]
    else:
        P, G = _batched(pred, 2), _batched(gt, 2)
        if args.metric == "pve":
            vals = [mt.pve(p, g) for p, g in zip(P, G)]
        elif args.metric == "mpjpe":
            vals = [mt.mpjpe(p, g, args.root) for p, g in zip(P, G)]
        else:
            vals = [mt.mpjpe_pa(p, g) for p, g in zip(P, G)]
    report.update(value=float(np.mean(vals)), count=len(vals), units="mm")
    return report


def cmd_gradcheck(args) -> dict:
    from .gradsuite import TOLERANCE, run_suite

    results = run_suite(args.seed, args.epsilon, args.only or None)
    worst = max(r.max_rel_error for r in results)
    report = {
        "command": "gradcheck", "tolerance": TOLERANCE, "epsilon": args.epsilon,
        "max_rel_error": worst, "passed": all(r.passed for r in results),
        "checks": [r.to_dict() for r in results],
    }
    if not report["passed"]:
        _emit(report, args.report)
        raise NumericalError(f"gradient check failed: max relative error {worst:.3e}")
    return report


def cmd_drop_sweep(args) -> dict:
    model = _load_model(args.model) if args.model else toy_model(0)
    cam = _camera(args.cam)
    h, w = _size(args.size)
    m = render_iuv(model, _upright_rest(model.num_joints), np.zeros(model.num_betas), cam,
                   RasterConfig(h, w), workers=args.threads)
    gammas = _floats(args.gammas, what="gammas")
    measured = {}
    for strat in args.strategies.split(","):
        fr = []
        for g in gammas:
            vals = [dropped_fraction(m, apply_drop(m, DropConfig(g, strat, args.block_size, args.seed * 100003 + t)))
                    for t in range(args.trials)]
            fr.append(float(np.mean(vals)))
        measured[strat] = fr
    files = {}
    p = _fig_path(args, "drop_sweep.png")
    if p:
        from .plotting import plot_drop_sweep

        plot_drop_sweep(gammas, measured, p)
        files["figure"] = str(p)
    return {"command": "drop-sweep", "gammas": gammas, "trials": args.trials, "measured": measured, "files": files}


def cmd_loss(args) -> dict:
    try:
        with open(args.components, encoding="utf-8") as fh:
            comps = json.load(fh)
    except OSError as e:
        raise InputError(f"cannot read {args.components}: {e.strerror or e}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{args.components}: {e}") from None
    if not isinstance(comps, dict):
        raise InputError("component file must hold a JSON object")
    weights = _weights(args)
    try:
        total, terms = total_loss(comps, weights)
    except KeyError as e:
        raise InputError(str(e.args[0])) from None
    return {"command": "loss", "weights": weights.to_dict(), "total": total, "terms": terms}


def _weights(args) -> LossWeights:
    if not args.loss_weights:
        return LossWeights()
    try:
        return LossWeights.from_json(args.loss_weights)
    except OSError as e:
        raise InputError(f"cannot read {args.loss_weights}: {e.strerror or e}") from None
    except (json.JSONDecodeError, ValueError, TypeError) as e:
        raise InputError(f"{args.loss_weights}: {e}") from None


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="densebody", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.set_defaults(func=fn)
        p.add_argument("--report", type=Path, help="write the JSON report here instead of stdout")
        return p

    p = add("gen-model", cmd_gen_model, "write the procedural toy body model as JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--segments", type=int, default=4, help="tube segments per bone")
    p.add_argument("--out", type=Path, required=True)

    p = add("render-iuv", cmd_render_iuv, "rasterize a posed model into an IUV map")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--theta", type=Path, help="K x 3 axis-angle tensor (default: upright rest pose)")
    p.add_argument("--beta", type=Path, help="shape coefficients tensor (default: zeros)")
    p.add_argument("--cam", default="0.5,0.5,0.5", help="weak-perspective camera s,tx,ty")
    p.add_argument("--size", default="56x56", help="output HxW")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--ppm", type=Path)
    p.add_argument("--joints2d-out", type=Path, help="also write the projected joints")
    p.add_argument("--threads", type=int, help="raster workers (default: DENSEBODY_THREADS or CPU count)")
    p.add_argument("--fig-dir", type=Path)

    p = add("drop", cmd_drop, "apply PartDrop, DropBlock or unit dropout to an IUV map")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--strategy", choices=("part", "block", "unit"), default="part")
    p.add_argument("--gamma", type=float, default=0.3)
    p.add_argument("--block-size", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--ppm", type=Path)

    p = add("pool", cmd_pool, "crop the joint-centred partial IUV map")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--joint", type=int, required=True)
    p.add_argument("--joints2d", type=Path, required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--res", type=int, default=56)
    p.add_argument("--simplify", action="store_true", help="keep only the parts around the joint")
    p.add_argument("--model", type=Path, help="model whose tree drives --simplify (default: SMPL tree)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--ppm", type=Path)

    p = add("refine-demo", cmd_refine_demo, "train a refinement variant on the synthetic rotation task")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--variant", choices=(*VARIANTS, "all"), default="position-aided")
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--orth-weight", type=float, default=0.0)
    p.add_argument("--loss-weights", type=Path, help="JSON weights; lambda_orth overrides --orth-weight")
    p.add_argument("--out", type=Path, required=True, help="report JSON; learned masks go alongside")
    p.add_argument("--fig-dir", type=Path)

    p = add("eval", cmd_eval, "evaluate predictions against ground truth")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--metric", choices=METRICS, required=True)
    p.add_argument("--model", type=Path, help="body model, needed by pve-s and pve-p")
    p.add_argument("--root", type=int, default=0, help="root joint for mpjpe")
    p.add_argument("--kappa", help="comma-separated per-keypoint OKS constants")

    p = add("gradcheck", cmd_gradcheck, "run the finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--only", nargs="*", help="subset of check names")

    p = add("drop-sweep", cmd_drop_sweep, "measure dropped foreground share against gamma")
    p.add_argument("--model", type=Path)
    p.add_argument("--cam", default="0.5,0.5,0.5")
    p.add_argument("--size", default="56x56")
    p.add_argument("--gammas", default="0.1,0.2,0.3,0.4,0.5")
    p.add_argument("--strategies", default="part,block,unit")
    p.add_argument("--block-size", type=int, default=7)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int)
    p.add_argument("--fig-dir", type=Path)

    p = add("loss", cmd_loss, "combine loss components with weights")
    p.add_argument("--components", type=Path, required=True,
                   help=f"JSON object with keys {', '.join(COMPONENTS)}")
    p.add_argument("--loss-weights", type=Path, help="JSON object of lambda_* weights")
    return ap


def _emit(report: dict, path) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        report = args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"densebody: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, FormatError, ShapeError) as e:
        print(f"densebody: invalid input: {e}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as e:
        print(f"densebody: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"densebody: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"densebody: cannot write output: {e}", file=sys.stderr)
        return EXIT_INPUT
    _emit(report, args.report)
    return 0


if __name__ == "__main__":
    sys.exit(main())
