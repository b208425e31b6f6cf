"""Command-line interface.

Exit codes: 0 success, 2 parse/domain error, 3 empty mask, 4 degenerate
geometry, 5 checkpoint mismatch.  All randomness funnels through --seed;
PANOLAYOUT_THREADS caps internal parallelism.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from .errors import (
    CameraOutsideError,
    CheckpointError,
    DegenerateGeometryError,
    DimensionError,
    DisconnectedCellsError,
    DomainError,
    EmptyMaskError,
    InvalidLayoutError,
)

EXIT_PARSE = 2
EXIT_EMPTY_MASK = 3
EXIT_DEGENERATE = 4
EXIT_CHECKPOINT = 5


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_PARSE
    try:
        return args.func(args)
    except (DomainError, DimensionError, InvalidLayoutError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except EmptyMaskError as exc:
        print(f"error: empty mask: {exc}", file=sys.stderr)
        return EXIT_EMPTY_MASK
    except (DegenerateGeometryError, DisconnectedCellsError, CameraOutsideError) as exc:
        print(f"error: degenerate geometry: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except CheckpointError as exc:
        print(f"error: checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="panolayout", description=__doc__)
    p.add_argument("--seed", type=int, default=0, help="global random seed")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("synth-gen", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--pano-w", type=int, default=128)
    g.add_argument("--pano-h", type=int, default=64)
    g.add_argument("--classes", default="4,6,8,10,12")
    g.set_defaults(func=cmd_synth_gen)

    r = sub.add_parser("render-gt", help="render ground-truth maps for a layout")
    r.add_argument("--layout", required=True)
    r.add_argument("--out-dir", required=True)
    r.add_argument("--pano-w", type=int, default=1024)
    r.add_argument("--fp-size", type=int, default=512)
    r.add_argument("--texture", action="store_true", help="also render an RGB panorama")
    r.set_defaults(func=cmd_render_gt)

    e = sub.add_parser("e2p", help="warp an equirect image/map to a perspective view")
    e.add_argument("--input", required=True, help="PNG image or PLPM map")
    e.add_argument("--output", required=True)
    e.add_argument("--fov", type=float, default=160.0)
    e.add_argument("--size", type=int, default=512)
    e.add_argument("--direction", choices=("up", "down"), default="up")
    e.set_defaults(func=cmd_e2p)

    f = sub.add_parser("fit", help="fit a Manhattan layout to probability maps")
    f.add_argument("--fp", required=True, help="floor-plan map (PLPM)")
    f.add_argument("--fc", required=True, help="floor-ceiling map (PLPM)")
    f.add_argument("--height", type=float, required=True)
    f.add_argument("--out", default="layout.json")
    f.add_argument("--debug-dir", default=None, help="dump per-stage figures")
    f.set_defaults(func=cmd_fit)

    i = sub.add_parser("infer", help="network inference + fitting on a panorama")
    i.add_argument("--pano", required=True)
    i.add_argument("--ckpt", required=True)
    i.add_argument("--out-dir", required=True)
    i.add_argument("--variant", default="full")
    i.set_defaults(func=cmd_infer)

    t = sub.add_parser("train", help="train the dual-projection network")
    t.add_argument("--dataset", required=True, help="dataset directory (synth-gen output)")
    t.add_argument("--out", required=True, help="checkpoint path (.plck)")
    t.add_argument("--config", default=None, help="TOML training config")
    t.add_argument("--curve", default=None, help="loss-curve CSV path")
    t.add_argument("--curve-figure", default=None, help="loss-curve PNG path")
    t.add_argument("--variant", default="full",
                   choices=("full", "no-fusion", "pano-only", "ceiling-only"))
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--val-frac", type=float, default=0.2)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("eval", help="evaluate predictions against GT layouts")
    v.add_argument("--dataset", required=True, help="manifest.json of the dataset")
    v.add_argument("--mode", choices=("gt-maps", "net"), default="gt-maps")
    v.add_argument("--ckpt", default=None)
    v.add_argument("--variant", default="full")
    v.add_argument("--out", default="report.csv")
    v.add_argument("--figures-dir", default=None)
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("serve", help="run the annotation service")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--data-dir", default="./sessions")
    s.add_argument("--frontend", default=None, help="built UI directory to serve at /")
    s.set_defaults(func=cmd_serve)

    return p


def cmd_synth_gen(args) -> int:
    from . import synthdata
    from .metrics import thread_count

    classes = tuple(int(c) for c in args.classes.split(","))
    records = synthdata.generate_dataset(
        args.out, args.count, seed=args.seed,
        pano_w=args.pano_w, pano_h=args.pano_h,
        classes=classes, workers=thread_count(),
    )
    print(f"wrote {len(records)} samples to {args.out}")
    return 0


def cmd_render_gt(args) -> int:
    from . import io as pio
    from .layout import default_frame, render_fc_map, render_fp_map, synth_texture

    layout = pio.load_layout(args.layout)
    os.makedirs(args.out_dir, exist_ok=True)
    pano_h = args.pano_w // 2
    fc = render_fc_map(layout, args.pano_w, pano_h)
    fp = render_fp_map(layout, default_frame(args.fp_size))
    pio.write_plpm(os.path.join(args.out_dir, "fc.plpm"), fc)
    pio.write_plpm(os.path.join(args.out_dir, "fp.plpm"), fp)
    pio.write_map_png(os.path.join(args.out_dir, "fc.png"), fc)
    pio.write_map_png(os.path.join(args.out_dir, "fp.png"), fp)
    if args.texture:
        pano = synth_texture(layout, args.pano_w, pano_h, seed=args.seed)
        pio.write_rgb_png(os.path.join(args.out_dir, "pano.png"), pano)
    print(f"wrote ground-truth maps to {args.out_dir}")
    return 0


def cmd_e2p(args) -> int:
    from . import io as pio
    from . import projection

    cfg = projection.E2PConfig(args.fov, args.size, args.direction)
    if args.input.endswith(".plpm"):
        src = pio.read_plpm(args.input)
        out = projection.e2p(src, cfg)
        pio.write_plpm(args.output, out.astype(np.float32))
    else:
        src = pio.read_png(args.input).astype(np.float64) / 255.0
        out = projection.e2p(src, cfg)
        pio.write_rgb_png(args.output, (np.clip(out, 0, 1) * 255 + 0.5).astype(np.uint8))
    print(f"wrote {args.output}")
    return 0


def cmd_fit(args) -> int:
    from . import fitting
    from . import io as pio
    from .layout import default_frame

    m_fp = pio.read_plpm(args.fp)
    m_fc = pio.read_plpm(args.fc)
    debug = fitting.FitDebug() if args.debug_dir else None
    layout = fitting.fit(m_fp, m_fc, args.height, default_frame(m_fp.shape[0]), debug=debug)
    pio.save_layout(args.out, layout)
    if args.debug_dir:
        from .report import save_fit_debug

        save_fit_debug(args.debug_dir, debug, layout)
    print(f"fitted {layout.n_corners}-corner layout -> {args.out}")
    return 0


def _load_pano_for_net(path):
    from PIL import Image

    from .network import PANO_H, PANO_W

    with Image.open(path) as img:
        rgb = img.convert("RGB")
        if rgb.width != 2 * rgb.height:
            raise DimensionError(
                f"panorama must be 2:1, got {rgb.width}x{rgb.height}"
            )
        resized = rgb.resize((PANO_W, PANO_H), Image.BILINEAR)
    return np.asarray(resized).astype(np.float32) / 255.0


def cmd_infer(args) -> int:
    from . import io as pio
    from .layout import default_frame
    from .network import CEIL_W, DualViewNet, fit_from_outputs, load_checkpoint

    pano = _load_pano_for_net(args.pano)
    net = DualViewNet(variant=args.variant, seed=0)
    net.load_state(load_checkpoint(args.ckpt))
    m_fc, m_fp, height = net.forward(pano)
    os.makedirs(args.out_dir, exist_ok=True)
    h = height.item() if height is not None else 3.2
    if m_fc is not None:
        pio.write_plpm(os.path.join(args.out_dir, "fc.plpm"), m_fc.data[..., 0])
    if m_fp is not None:
        pio.write_plpm(os.path.join(args.out_dir, "fp.plpm"), m_fp.data[..., 0])
    layout = fit_from_outputs(m_fc, m_fp, h, default_frame(CEIL_W))
    pio.save_layout(os.path.join(args.out_dir, "layout.json"), layout)
    print(f"inferred {layout.n_corners}-corner layout (H={h:.2f} m) -> {args.out_dir}")
    return 0


def cmd_train(args) -> int:
    from . import synthdata
    from .network import (
        TrainConfig,
        load_train_config,
        save_checkpoint,
        train,
        write_curve_csv,
    )

    cfg = load_train_config(args.config) if args.config else TrainConfig(seed=args.seed)
    if args.epochs is not None:
        from dataclasses import replace

        cfg = replace(cfg, epochs=args.epochs)
    samples = synthdata.load_dataset(args.dataset)
    n_val = max(1, int(len(samples) * args.val_frac))
    train_set, val_set = samples[:-n_val], samples[-n_val:]
    result = train(train_set, cfg, val_set=val_set, variant=args.variant,
                   iou_every=5, log=print)
    save_checkpoint(args.out, result.net)
    if args.curve:
        write_curve_csv(args.curve, result.curve)
    if args.curve_figure:
        from .report import save_loss_curves

        save_loss_curves(args.curve_figure, result.curve)
    print(f"trained {result.steps} steps in {result.wall_time_s:.0f}s -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    from . import io as pio
    from .layout import default_frame
    from .metrics import evaluate, thread_count

    root = os.path.dirname(os.path.abspath(args.dataset))
    records = pio.load_json(args.dataset)

    if args.mode == "gt-maps":
        from . import fitting

        def make_payload(rec, gt):
            fp = pio.read_plpm(os.path.join(root, rec["fp_map_path"]))
            fc = pio.read_plpm(os.path.join(root, rec["fc_map_path"]))
            return (fp, fc, gt.height_m)

        def predictor(payload):
            fp, fc, h = payload
            return fitting.fit(fp, fc, h, default_frame(fp.shape[0]))

    else:
        if not args.ckpt:
            raise DomainError("--ckpt is required in net mode")
        from .network import CEIL_W, DualViewNet, fit_from_outputs, load_checkpoint

        net = DualViewNet(variant=args.variant, seed=0)
        net.load_state(load_checkpoint(args.ckpt))
        frame = default_frame(CEIL_W)

        def make_payload(rec, gt):
            return _load_pano_for_net(os.path.join(root, rec["panorama_path"]))

        def predictor(pano):
            m_fc, m_fp, height = net.forward(pano)
            h = height.item() if height is not None else 3.2
            return fit_from_outputs(m_fc, m_fp, h, frame)

    items = []
    for rec in records:
        try:
            gt = pio.load_layout(os.path.join(root, rec["layout_path"]))
            items.append((rec["id"], gt, make_payload(rec, gt)))
        except (OSError, KeyError, ValueError) as exc:
            print(f"skipping {rec.get('id', '?')}: {exc}", file=sys.stderr)

    workers = thread_count() if args.mode == "gt-maps" else 1
    report = evaluate(items, predictor, workers=workers)
    report.to_csv(args.out)
    print(report.format_table())
    if args.figures_dir:
        from .report import save_eval_figures

        save_eval_figures(args.figures_dir, report)
    print(f"wrote {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    if args.frontend:
        os.environ["PANOLAYOUT_FRONTEND"] = args.frontend
    app = build_app(args.data_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
