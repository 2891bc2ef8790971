"""Command-line surface: dataset synthesis, training, streaming inference,
evaluation, rendering, and benchmarking.

Every failure exits nonzero after printing a single line of the form
`EE3D-ERR <CODE>: <message>` on stderr, so callers can dispatch on the
code without scraping prose.
"""

from __future__ import annotations

import argparse
import hashlib
import socket
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import eventio, metrics, modelio, pipeline, render, training
from .augment import AugmentSource
from .events import window_events
from .lnes import encode_lnes
from .network import PoseNet, estimate_flops, paper_config, toy_config
from .scene import (DatasetConfig, MOTION_CATEGORY, load_dataset,
                    load_sequence, make_dataset)
from .simulator import SimulatorConfig
from .smoothing import OneEuroParams

ERR_USAGE = "USAGE"
ERR_IO = "IO"
ERR_FORMAT = "FORMAT"
ERR_CONFIG = "CONFIG"
ERR_DATA = "DATA"
ERR_NET = "NET"


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(ERR_USAGE, message)


def _fail(code: str, exc: BaseException) -> CliError:
    return CliError(code, " ".join(str(exc).split()))


def _parse_addr(text: str):
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise CliError(ERR_USAGE, f"address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def _load_net(path: str, dtype=np.float32) -> PoseNet:
    try:
        net, _meta, _extra = modelio.load_model(path, dtype=dtype)
    except FileNotFoundError as e:
        raise _fail(ERR_IO, e)
    except modelio.ModelFileError as e:
        raise _fail(ERR_FORMAT, e)
    return net


def _smooth_params(flag: str):
    return OneEuroParams() if flag == "on" else None


# -- synth -------------------------------------------------------------------

def cmd_synth(args) -> int:
    window_ms = args.window_ms
    duration_s = args.seq_len * window_ms / 1000.0
    cfg = DatasetConfig(
        motions=tuple(args.motions.split(",")),
        sequences_per_motion=args.seqs_per_motion,
        duration_s=duration_s, window_ms=window_ms, seed=args.seed,
        sim=SimulatorConfig(seed=args.seed))
    for motion in cfg.motions:
        if motion not in MOTION_CATEGORY:
            raise CliError(ERR_USAGE, f"unknown motion {motion!r}; choices: "
                           + ", ".join(sorted(MOTION_CATEGORY)))
    out = Path(args.out)
    try:
        seqs = make_dataset(cfg, out)
    except OSError as e:
        raise _fail(ERR_IO, e)
    windows = sum(len(s.records) for s in seqs)
    events = sum(len(s.events) for s in seqs)
    print(f"dataset {out} sequences {len(seqs)} windows {windows} "
          f"events {events}")
    return 0


# -- train -------------------------------------------------------------------

def _read_bg_events(path_arg: str):
    """Load background events from a file or a sequence directory."""
    path = Path(path_arg)
    if path.is_dir():
        path = path / "events.bin"
    try:
        return eventio.read_events(path)
    except OSError as e:
        raise _fail(ERR_IO, e)
    except ValueError as e:
        raise _fail(ERR_FORMAT, e)


def _resolve_settings(args) -> training.TrainSettings:
    if args.config:
        try:
            settings = training.TrainSettings.from_text(
                Path(args.config).read_text())
        except FileNotFoundError as e:
            raise _fail(ERR_IO, e)
        except (ValueError, TypeError) as e:
            raise _fail(ERR_CONFIG, e)
    else:
        settings = training.TrainSettings()
    overrides = {"iters": args.iters, "batch": args.batch,
                 "seq_len": args.seq_len, "lr": args.lr, "seed": args.seed,
                 "checkpoint_every": args.checkpoint_every}
    for key, val in overrides.items():
        if val is not None:
            setattr(settings, key, val)
    if args.fine_tune and args.lr is None:
        settings.lr = training.FINETUNE_LR
    return settings


def cmd_train(args) -> int:
    settings = _resolve_settings(args)
    if args.overfit_smoke and args.iters is None:
        settings.iters = 2000
    try:
        dataset = load_dataset(args.data)
    except FileNotFoundError as e:
        raise _fail(ERR_IO, e)
    except ValueError as e:
        raise _fail(ERR_DATA, e)
    if not dataset:
        raise CliError(ERR_DATA, f"dataset {args.data} has no sequences")

    out = Path(args.out)
    log_path = Path(args.loss_log) if args.loss_log else \
        out.with_suffix(out.suffix + ".loss.txt")
    log_lines: list = []

    def log_fn(step, vals):
        log_lines.append(training.format_loss_line(step, vals))

    augment_fn = None
    if args.augment_bg:
        bg = _read_bg_events(args.augment_bg)
        window_us = dataset[0][1].records[0].window.duration \
            if dataset[0][1].records else int(settings.window_ms * 1000)
        try:
            source = AugmentSource(bg, window_us)
        except ValueError as e:
            raise _fail(ERR_DATA, e)
        augment_fn = source.augment

    try:
        if args.resume:
            net, opt, meta = training.load_checkpoint(args.resume)
            start_iter = int(meta.get("iteration", 0))
            opt.lr = settings.lr if args.lr is not None else opt.lr
        else:
            net = PoseNet(settings.net_config(), seed=settings.seed,
                          dtype=np.float32)
            opt = training.Adam(net.params, lr=settings.lr)
            start_iter = 0
    except modelio.ModelFileError as e:
        raise _fail(ERR_FORMAT, e)

    ckpt_path = out.with_suffix(out.suffix + ".ckpt")

    if args.overfit_smoke:
        records = [rec for _, seq in dataset for rec in seq.records]
        if len(records) < args.overfit_smoke:
            raise CliError(ERR_DATA, f"dataset has {len(records)} windows, "
                           f"need {args.overfit_smoke} for the smoke run")
        records = records[:args.overfit_smoke]
        net, opt, history = training.overfit_smoke(
            records, net=net, max_steps=settings.iters, lr=settings.lr,
            seed=settings.seed, weights=settings.weights(), log_fn=log_fn)
        final = history[-1]
        iters_run = len(history)
    else:
        sequences = [seq for _, seq in dataset]
        history = training.train_on_dataset(
            sequences, net, opt, settings, start_iter=start_iter,
            log_fn=log_fn, augment_fn=augment_fn,
            checkpoint_fn=lambda it: training.save_checkpoint(
                ckpt_path, net, opt, it, settings))
        final = history[-1] if history else {"l_total": float("nan")}
        iters_run = start_iter + len(history)

    try:
        log_path.write_text("\n".join(log_lines) + "\n")
        modelio.save_model(out, net,
                           extra={"iterations": iters_run,
                                  "settings_hash": hashlib.sha256(
                                      settings.to_text().encode()).hexdigest()})
        if settings.checkpoint_every or args.resume:
            training.save_checkpoint(ckpt_path, net, opt, iters_run, settings)
    except OSError as e:
        raise _fail(ERR_IO, e)
    print(f"trained iters {iters_run} final_l_total {final['l_total']:.9e} "
          f"model {out} loss_log {log_path}")
    return 0


# -- infer -------------------------------------------------------------------

def cmd_infer(args) -> int:
    if bool(args.events) == bool(args.connect):
        raise CliError(ERR_USAGE,
                       "need exactly one event source: a file or --connect")
    net = _load_net(args.model)
    window_us = int(round(args.window_ms * 1000))
    smooth = _smooth_params(args.smooth)

    broadcaster = None
    if args.listen:
        host, port = _parse_addr(args.listen)
        try:
            broadcaster = pipeline.PoseBroadcaster(host, port)
        except OSError as e:
            raise _fail(ERR_NET, e)

    def on_record(rec):
        print(pipeline.format_record_text(rec))
        if broadcaster is not None:
            broadcaster.send(rec)

    try:
        if args.events:
            try:
                events = eventio.read_events(args.events)
            except FileNotFoundError as e:
                raise _fail(ERR_IO, e)
            except ValueError as e:
                raise _fail(ERR_FORMAT, e)
            counters = pipeline.run_file(events, net, window_us,
                                         smooth=smooth, on_record=on_record)
        else:
            host, port = _parse_addr(args.connect)
            try:
                conn = socket.create_connection((host, port), timeout=10.0)
            except OSError as e:
                raise _fail(ERR_NET, e)
            reader = pipeline.SocketEventReader(conn)
            try:
                counters = pipeline.run_live(reader, net, window_us,
                                             smooth=smooth,
                                             on_record=on_record,
                                             max_windows=args.max_windows)
            except ValueError as e:
                raise _fail(ERR_FORMAT, e)
            except OSError as e:
                raise _fail(ERR_NET, e)
            finally:
                conn.close()
    finally:
        if broadcaster is not None:
            broadcaster.close()
        sys.stdout.flush()
    print(f"windows {counters.windows} events {counters.events} "
          f"dropped {counters.dropped} wall_s {counters.wall_time_s:.3f}",
          file=sys.stderr)
    return 0


# -- eval --------------------------------------------------------------------

def cmd_eval(args) -> int:
    net = _load_net(args.model)
    try:
        dataset = load_dataset(args.data)
    except FileNotFoundError as e:
        raise _fail(ERR_IO, e)
    except ValueError as e:
        raise _fail(ERR_DATA, e)
    if not dataset:
        raise CliError(ERR_DATA, f"dataset {args.data} has no sequences")
    smooth = _smooth_params(args.smooth)
    with_scale = not args.pa_no_scale
    rows = []
    for name, seq in dataset:
        if not seq.records:
            continue
        session = pipeline.StreamSession(net, seq.records[0].window.duration,
                                         smooth=smooth)
        preds, gts = [], []
        for rec in seq.records:
            out = session.process(rec.lnes, rec.t_pose)
            preds.append(out.pose.astype(np.float64))
            gts.append(rec.joints_gt.joints)
        label = seq.meta.get("category") or \
            MOTION_CATEGORY.get(seq.meta.get("motion", ""), "Inter. with env.")
        try:
            mp = metrics.mpjpe(preds, gts)
            pa = metrics.pa_mpjpe(preds, gts, with_scale=with_scale)
        except ValueError as e:
            raise _fail(ERR_DATA, e)
        rows.append((label, mp, pa))
    try:
        report = metrics.aggregate(rows)
    except ValueError as e:
        raise _fail(ERR_DATA, e)
    sys.stdout.write(metrics.format_report(report))
    if args.out:
        try:
            Path(args.out).write_text(metrics.format_records(report))
        except OSError as e:
            raise _fail(ERR_IO, e)
    return 0


# -- bench -------------------------------------------------------------------

FLOP_FORMULA = ("2*sum(kh*kw*c_in*c_out*h_out*w_out) over conv layers plus "
                "2*in*out over dense layers (multiply-accumulates x2)")


def cmd_bench(args) -> int:
    if args.model:
        net = _load_net(args.model)
    elif args.paper_config:
        net = PoseNet(paper_config(), seed=args.seed, dtype=np.float32)
    else:
        net = PoseNet(toy_config(), seed=args.seed, dtype=np.float32)
    try:
        events = eventio.read_events(args.events)
    except FileNotFoundError as e:
        raise _fail(ERR_IO, e)
    except ValueError as e:
        raise _fail(ERR_FORMAT, e)
    window_us = int(round(args.window_ms * 1000))

    # one untimed pass so kernel warm-up does not skew the first repetition
    pipeline.run_file(events, net, window_us)
    rates = []
    windows = 0
    for _ in range(args.repetitions):
        counters = pipeline.run_file(events, net, window_us)
        windows = counters.windows
        rates.append(counters.windows / counters.wall_time_s
                     if counters.wall_time_s > 0 else float("inf"))

    wins = window_events(events, window_us)
    lnes_rates = []
    for _ in range(args.repetitions):
        t0 = time.perf_counter()
        n_events = 0
        for window, evs in wins:
            encode_lnes(evs, window, events.height, events.width)
            n_events += len(evs)
        dt = time.perf_counter() - t0
        lnes_rates.append(n_events / dt if dt > 0 else float("inf"))

    flops = estimate_flops(net.cfg)
    print(f"poses_per_s_median {statistics.median(rates):.2f}")
    print("poses_per_s " + " ".join(f"{r:.2f}" for r in rates))
    print(f"lnes_events_per_s {statistics.median(lnes_rates):.3e}")
    print(f"params {net.num_params()}")
    print(f"flops_per_frame {flops}")
    print(f"flop_formula {FLOP_FORMULA}")
    print(f"windows {windows}")
    print(f"events {len(events)}")
    return 0


# -- render ------------------------------------------------------------------

def _dataset_record(args):
    try:
        dataset_root = Path(args.data)
        names = [line.split()[0] for line in
                 (dataset_root / "manifest.txt").read_text().splitlines()
                 if line.strip() and not line.startswith("#")]
    except FileNotFoundError as e:
        raise _fail(ERR_IO, e)
    if not 0 <= args.seq < len(names):
        raise CliError(ERR_DATA, f"sequence index {args.seq} out of range "
                       f"(dataset has {len(names)})")
    seq = load_sequence(dataset_root / names[args.seq])
    if not 0 <= args.frame < len(seq.records):
        raise CliError(ERR_DATA, f"frame index {args.frame} out of range "
                       f"(sequence has {len(seq.records)})")
    return seq, seq.records[args.frame]


def cmd_render(args) -> int:
    mode = args.mode
    if args.events:
        if mode != "lnes":
            raise CliError(ERR_USAGE,
                           f"--events input supports only lnes, not {mode}")
        try:
            events = eventio.read_events(args.events)
        except FileNotFoundError as e:
            raise _fail(ERR_IO, e)
        except ValueError as e:
            raise _fail(ERR_FORMAT, e)
        wins = window_events(events, int(round(args.window_ms * 1000)))
        if not 0 <= args.frame < len(wins):
            raise CliError(ERR_DATA, f"window index {args.frame} out of "
                           f"range (stream has {len(wins)})")
        window, evs = wins[args.frame]
        img = render.render_lnes(encode_lnes(evs, window, events.height,
                                             events.width))
    else:
        if not args.data:
            raise CliError(ERR_USAGE, "render needs --data or --events")
        seq, rec = _dataset_record(args)
        if mode == "lnes":
            img = render.render_lnes(rec.lnes)
        elif mode == "heatmaps":
            img = render.render_heatmaps(rec.heatmaps_gt,
                                         base=render.render_mask(rec.mask_gt))
        elif mode == "mask":
            img = render.render_mask(rec.mask_gt)
        else:
            img = render.render_skeleton(rec.joints_gt, seq.intrinsics,
                                         base=render.render_lnes(rec.lnes))
    try:
        render.save_png(args.out, img)
    except OSError as e:
        raise _fail(ERR_IO, e)
    print(f"wrote {args.out}")
    return 0


def cmd_augment_preview(args) -> int:
    seq, rec = _dataset_record(args)
    bg = _read_bg_events(args.augment_bg)
    try:
        source = AugmentSource(bg, rec.window.duration)
        augmented = source.augment(rec.lnes, rec.mask_gt)
    except ValueError as e:
        raise _fail(ERR_DATA, e)
    try:
        render.save_png(args.out, render.render_lnes(augmented))
    except OSError as e:
        raise _fail(ERR_IO, e)
    print(f"wrote {args.out}")
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eventpose",
                description="event-stream 3D human pose pipeline")
    sub = p.add_subparsers(dest="command", required=True,
                           parser_class=_Parser)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--window-ms", type=float, default=15.0)
    sp.add_argument("--seq-len", type=int, default=20,
                    help="windows per sequence")
    sp.add_argument("--motions", default="wave,box,squat,walk-in-place")
    sp.add_argument("--seqs-per-motion", type=int, default=1)
    sp.set_defaults(func=cmd_synth)

    tp = sub.add_parser("train", help="train or fine-tune a model")
    tp.add_argument("--data", required=True)
    tp.add_argument("--out", required=True)
    tp.add_argument("--config", help="plain-text training config file")
    tp.add_argument("--iters", type=int)
    tp.add_argument("--batch", type=int)
    tp.add_argument("--seq-len", type=int)
    tp.add_argument("--lr", type=float)
    tp.add_argument("--seed", type=int)
    tp.add_argument("--fine-tune", action="store_true",
                    help="default the learning rate to 1e-4")
    tp.add_argument("--resume", help="training checkpoint to continue from")
    tp.add_argument("--checkpoint-every", type=int)
    tp.add_argument("--loss-log")
    tp.add_argument("--overfit-smoke", type=int, default=0, metavar="N",
                    help="batched overfit on the first N dataset windows")
    tp.add_argument("--augment-bg", help="background event file")
    tp.set_defaults(func=cmd_train)

    ip = sub.add_parser("infer", help="stream poses from events")
    ip.add_argument("events", nargs="?", help="event file (EVT1)")
    ip.add_argument("--model", required=True)
    ip.add_argument("--window-ms", type=float, default=15.0)
    ip.add_argument("--smooth", choices=("on", "off"), default="off")
    ip.add_argument("--listen", metavar="ADDR",
                    help="broadcast pose records on host:port")
    ip.add_argument("--connect", metavar="ADDR",
                    help="read live events from host:port")
    ip.add_argument("--max-windows", type=int)
    ip.set_defaults(func=cmd_infer)

    ep = sub.add_parser("eval", help="evaluate a model on a dataset")
    ep.add_argument("--data", required=True)
    ep.add_argument("--model", required=True)
    ep.add_argument("--pa-no-scale", action="store_true",
                    help="exclude uniform scale from Procrustes alignment")
    ep.add_argument("--smooth", choices=("on", "off"), default="off")
    ep.add_argument("--out", help="write line-delimited metric records here")
    ep.set_defaults(func=cmd_eval)

    bp = sub.add_parser("bench", help="throughput and model-size report")
    bp.add_argument("events", help="event file (EVT1)")
    bp.add_argument("--model")
    bp.add_argument("--paper-config", action="store_true")
    bp.add_argument("--repetitions", type=int, default=5)
    bp.add_argument("--window-ms", type=float, default=15.0)
    bp.add_argument("--seed", type=int, default=0)
    bp.set_defaults(func=cmd_bench)

    rp = sub.add_parser("render", help="write PNG panels")
    rp.add_argument("mode", choices=("lnes", "heatmaps", "mask", "pose"))
    rp.add_argument("--out", required=True)
    rp.add_argument("--data")
    rp.add_argument("--seq", type=int, default=0)
    rp.add_argument("--frame", type=int, default=0)
    rp.add_argument("--events")
    rp.add_argument("--window-ms", type=float, default=15.0)
    rp.set_defaults(func=cmd_render)

    ap = sub.add_parser("augment-preview",
                        help="render an augmented LNES window")
    ap.add_argument("--data", required=True)
    ap.add_argument("--seq", type=int, default=0)
    ap.add_argument("--frame", type=int, default=0)
    ap.add_argument("--augment-bg", required=True)
    ap.add_argument("--out", required=True)
    ap.set_defaults(func=cmd_augment_preview)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as e:
        print(f"EE3D-ERR {e.code}: {e}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 0
    except OSError as e:
        print(f"EE3D-ERR {ERR_IO}: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("EE3D-ERR INTERRUPTED: stopped by signal", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
