"""Command-line interface: ``cqitestbed <subcommand> ...``.

Exit codes: 0 success, 1 other failure, 2 protocol error, 3 config mismatch.
Log verbosity comes from ``CQITESTBED_LOG`` (DEBUG, INFO, WARNING, ...).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from importlib import resources

import numpy as np

from . import chansim, cqimap, crnn, crsest, gridio, runtime
from .errors import ConfigMismatchError, ProtocolError, TestbedError

log = logging.getLogger("cqitestbed")

EXIT_OK, EXIT_FAIL, EXIT_PROTOCOL, EXIT_CONFIG = 0, 1, 2, 3


def _table(path):
    return cqimap.load_table(path) if path else cqimap.DEFAULT_TABLE


def _scenario(args):
    if args.scenario:
        cfg = chansim.load_scenario(args.scenario)
    else:
        cfg = chansim.preset(args.preset)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _load_any(path):
    """Grid file by extension: ``.csv`` imports SINR, anything else is binary."""
    if str(path).lower().endswith(".csv"):
        return gridio.load_grid(path, "csv")
    return gridio.load_grid(path)


def _as_cqi(grid, table):
    return grid if isinstance(grid, gridio.CqiGrid) else cqimap.map_grid(grid, table)


def cmd_synth(args):
    cfg = _scenario(args)
    H = chansim.channel_series(cfg, args.duration_ms)
    grid = gridio.SinrGrid(
        data=cfg.mean_snr_db + chansim.rb_gain_db(H), meta=cfg.meta(), dt_ms=cfg.dt_ms
    )
    gridio.save_grid(grid, args.output, args.format)
    if args.channel_out:
        m = cfg.meta()
        np.savez(
            args.channel_out, H=H.astype(np.complex64), mean_snr_db=cfg.mean_snr_db,
            dt_ms=cfg.dt_ms, name=m.name, speed_kmh=m.speed_kmh, carrier_hz=m.carrier_hz,
        )
    log.info("wrote %s (%d x %d, fd=%.1f Hz)", args.output, *grid.data.shape, cfg.doppler_hz)
    return EXIT_OK


def cmd_estimate(args):
    ch = np.load(args.channel)
    H = ch["H"].astype(np.complex128)
    snr_db = float(ch["mean_snr_db"]) if args.snr_db is None else args.snr_db
    sinr = crsest.estimate_grid(H, 10.0 ** (-snr_db / 10.0), cell_id=args.cell_id, seed=args.seed)
    meta = gridio.ScenarioMeta(
        name=str(ch["name"]), n_rb=sinr.shape[1], speed_kmh=float(ch["speed_kmh"]),
        carrier_hz=float(ch["carrier_hz"]), source="synthetic",
    )
    grid = gridio.SinrGrid(data=sinr, meta=meta, dt_ms=float(ch["dt_ms"]))
    gridio.save_grid(grid, args.output, args.format)
    return EXIT_OK


def cmd_map(args):
    grid = _load_any(args.grid)
    if isinstance(grid, gridio.CqiGrid):
        raise ConfigMismatchError(f"{args.grid} already holds CQI values")
    gridio.save_grid(cqimap.map_grid(grid, _table(args.table)), args.output)
    return EXIT_OK


def _model_config(args, n_rb):
    return crnn.ModelConfig(
        window_w=args.window, n_rb=n_rb, conv_filters=args.filters, conv_kernel=args.kernel,
        hidden=args.hidden, horizon=args.horizon, loss_alpha=args.alpha, seed=args.seed,
        residual=not args.no_residual,
    )


def cmd_train(args):
    grid = _as_cqi(_load_any(args.grid), _table(args.table))
    train_part, _ = gridio.split(grid, args.split) if args.split < 1 else (grid, None)
    cfg = _model_config(args, grid.n_rb)
    params, history = crnn.train(
        crnn.init_model(cfg), train_part, epochs=args.epochs, batch_size=args.batch_size,
        lr=args.lr, max_windows=args.max_windows,
        log=lambda e, v: log.info("epoch %d loss %.5f", e, v),
    )
    crnn.save_model(params, args.output)
    if args.history:
        with open(args.history, "w") as fh:
            fh.write("epoch,loss\n")
            fh.writelines(f"{i},{v!r}\n" for i, v in enumerate(history))
    if args.figure:
        from .plotting import plot_loss_history

        plot_loss_history(history, args.figure)
    print(f"final_loss={history[-1]:.6g}")
    return EXIT_OK


def cmd_predict(args):
    table = _table(args.table)
    grid = _as_cqi(_load_any(args.grid), table)
    params = crnn.load_model(args.model)
    cfg = params.config
    if grid.n_rb != cfg.n_rb:
        raise ConfigMismatchError(f"grid has {grid.n_rb} RBs, model expects {cfg.n_rb}")
    X, _ = gridio.window_arrays(grid.data, cfg.window_w, cfg.horizon)
    pred = crnn.quantize(crnn.crnn_predictor(params)(X))
    gridio.save_grid(gridio.CqiGrid(data=pred, meta=grid.meta, dt_ms=grid.dt_ms), args.output)
    return EXIT_OK


def cmd_eval(args):
    table = _table(args.table)
    grid = _as_cqi(_load_any(args.grid), table)
    params = crnn.load_model(args.model)
    cfg = params.config
    if grid.n_rb != cfg.n_rb:
        raise ConfigMismatchError(f"grid has {grid.n_rb} RBs, model expects {cfg.n_rb}")
    test = gridio.split(grid, args.split)[1] if 0 < args.split < 1 else grid
    metrics = crnn.evaluate(params, test, cfg, trace_path=args.trace)
    base = crnn.evaluate(crnn.persistence_predictor, test, cfg)
    text = metrics.to_kv() + "".join(
        f"persistence_{k}\n" for k in base.to_kv().splitlines()[:5]
    )
    if args.metrics:
        with open(args.metrics, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    if args.figure:
        from .plotting import plot_prediction_trace

        X, Y = gridio.window_arrays(test.data, cfg.window_w, cfg.horizon)
        pred = crnn.crnn_predictor(params)(X)
        t = np.arange(Y.shape[0]) + cfg.window_w + cfg.horizon - 1
        plot_prediction_trace(t, Y[:, args.rb], pred[:, args.rb], args.figure,
                              baseline=X[:, -1, args.rb], rb=args.rb)
    return EXIT_OK


def _parse_addr(text):
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host, int(port)


def cmd_stream(args):
    kind, *rest = args.source
    if kind == "replay" and len(rest) == 1:
        source = runtime.ReplaySource(rest[0], realtime=args.realtime)
    elif kind == "listen" and len(rest) == 1 and rest[0].isdigit():
        source = runtime.DatagramSource(int(rest[0]), idle_timeout_s=args.idle_timeout)
    else:
        raise SystemExit("--source must be 'replay <file>' or 'listen <port>'")
    skind, *srest = args.sink
    if skind == "file" and len(srest) == 1:
        sink = runtime.FileSink(srest[0])
    elif skind == "send" and len(srest) == 1:
        sink = runtime.DatagramSink(*_parse_addr(srest[0]))
    else:
        raise SystemExit("--sink must be 'file <path>' or 'send <host:port>'")
    params = crnn.load_model(args.model)
    stats = runtime.run_stream(
        source, params, _table(args.table), sink, deadline_us=args.deadline_us,
        threaded=args.threaded,
    )
    text = stats.to_kv()
    if args.stats_out:
        with open(args.stats_out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_stats(args):
    out = []
    if args.stream_stats:
        with open(args.stream_stats) as fh:
            st = runtime.StreamStats.from_kv(fh.read())
        out.append(st.to_kv())
    cdfs = {}
    for path in args.grids:
        g = _load_any(path)
        name = g.meta.name if g.meta.name not in cdfs else os.path.basename(path)
        cdfs[name] = gridio.delta_cdf(g, signed=args.signed)
    if cdfs:
        out.append("scenario,delta_db,cdf\n")
        for name, cdf in cdfs.items():
            x, p = cdf.curve(args.points)
            out.extend(f"{name},{xi:.6g},{pi:.6g}\n" for xi, pi in zip(x, p))
        for name, cdf in cdfs.items():
            log.info("%s: median %.4f dB, p90 %.4f dB", name, cdf.median(), cdf.quantile(0.9))
    text = "".join(out)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.figure and cdfs:
        from .plotting import plot_delta_cdf

        plot_delta_cdf(cdfs, args.figure, signed=args.signed)
    return EXIT_OK


def cmd_presets(args):
    for name in chansim.PRESETS:
        if args.dump == name:
            sys.stdout.write(resources.files("cqitestbed.presets").joinpath(f"{name}.ini").read_text())
            return EXIT_OK
    if args.dump == "cqi_table":
        sys.stdout.write(resources.files("cqitestbed.presets").joinpath("cqi_table.ini").read_text())
        return EXIT_OK
    for name in chansim.PRESETS:
        cfg = chansim.preset(name)
        print(f"{name}: {cfg.speed_kmh:g} km/h, fd={cfg.doppler_hz:.1f} Hz, "
              f"{len(cfg.delay_profile)} taps, mean SNR {cfg.mean_snr_db:g} dB")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cqitestbed", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize a SINR grid for a mobility scenario")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--preset", choices=chansim.PRESETS, default="pedestrian")
    g.add_argument("--scenario", help="scenario INI file")
    s.add_argument("--seed", type=int)
    s.add_argument("--duration-ms", type=int, default=60_000)
    s.add_argument("--format", choices=("binary", "csv"), default="binary")
    s.add_argument("--channel-out", help="also store the channel realization (.npz)")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("estimate", help="CRS pilot SINR estimation over a stored channel")
    s.add_argument("channel", help=".npz written by synth --channel-out")
    s.add_argument("--snr-db", type=float, help="override the stored mean SNR")
    s.add_argument("--cell-id", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=("binary", "csv"), default="binary")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("map", help="convert a SINR grid to a CQI grid")
    s.add_argument("grid")
    s.add_argument("--table")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_map)

    s = sub.add_parser("train", help="train the CRNN predictor")
    s.add_argument("grid", help="SINR or CQI grid (SINR is mapped with --table)")
    s.add_argument("--table")
    s.add_argument("--split", type=float, default=0.8, help="train fraction (1 = all rows)")
    s.add_argument("--window", type=int, default=32)
    s.add_argument("--filters", type=int, default=16)
    s.add_argument("--kernel", type=int, default=3)
    s.add_argument("--hidden", type=int, default=64)
    s.add_argument("--horizon", type=int, default=1)
    s.add_argument("--alpha", type=float, default=4.0)
    s.add_argument("--no-residual", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--lr", type=float, default=3e-3)
    s.add_argument("--max-windows", type=int, help="windows drawn per epoch")
    s.add_argument("--history", help="per-epoch loss CSV")
    s.add_argument("--figure", help="loss curve image")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="predict next-subframe CQI for every window")
    s.add_argument("grid")
    s.add_argument("--model", required=True)
    s.add_argument("--table")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="metrics and prediction trace on the test split")
    s.add_argument("grid")
    s.add_argument("--model", required=True)
    s.add_argument("--table")
    s.add_argument("--split", type=float, default=0.8, help="evaluate rows after this fraction")
    s.add_argument("--metrics", help="key=value metrics file")
    s.add_argument("--trace", help="per-RB prediction vs truth CSV")
    s.add_argument("--figure", help="prediction trace image for --rb")
    s.add_argument("--rb", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("stream", help="real-time streaming prediction")
    s.add_argument("--source", nargs="+", required=True, metavar="ARG",
                   help="'replay <file>' or 'listen <port>'")
    s.add_argument("--realtime", action="store_true", help="pace replay at dt_ms")
    s.add_argument("--model", required=True)
    s.add_argument("--table")
    s.add_argument("--sink", nargs="+", required=True, metavar="ARG",
                   help="'file <path>' or 'send <host:port>'")
    s.add_argument("--deadline-us", type=float, default=1000.0)
    s.add_argument("--threaded", action="store_true", help="separate ingest thread")
    s.add_argument("--idle-timeout", type=float, default=2.0)
    s.add_argument("--stats-out")
    s.set_defaults(func=cmd_stream)

    s = sub.add_parser("stats", help="stream statistics and delta-SINR CDFs")
    s.add_argument("grids", nargs="*")
    s.add_argument("--stream-stats", help="stats file written by stream --stats-out")
    s.add_argument("--signed", action="store_true")
    s.add_argument("--points", type=int, default=1000)
    s.add_argument("--figure", help="CDF plot image")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("presets", help="list or dump bundled scenario presets")
    s.add_argument("--dump", metavar="NAME")
    s.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CQITESTBED_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ProtocolError as exc:
        log.error("protocol error: %s", exc)
        return EXIT_PROTOCOL
    except ConfigMismatchError as exc:
        log.error("config mismatch: %s", exc)
        return EXIT_CONFIG
    except (TestbedError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
