"""soilnet command line: gateway, simulator, calibration, export, reports.

Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
stderr, data to stdout, so output can be piped.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import signal
import sys
import threading
import time

from soilnet import core, sim
from soilnet.analytics import (
    Channel,
    plot_series_csv,
    render_report,
    report_to_json,
    validation_report,
)
from soilnet.gateway import DEFAULT_PORT, BindFailure, Gateway, GatewayClient
from soilnet.store import (
    Store,
    StoredRow,
    export,
    iso_utc,
    parse_iso_utc,
    rows_with_vwc,
)

ENV_PREFIX = "SOILNET_"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _env_default(name: str, fallback=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), fallback)


def parse_duration(text: str) -> int:
    """'48h', '2d', '900s', '30m' or bare seconds -> seconds."""
    text = text.strip()
    mult = {"s": 1, "m": 60, "h": 3600, "d": 86400}
    if text and text[-1] in mult:
        return int(float(text[:-1]) * mult[text[-1]])
    return int(text)


def parse_instant(text: str) -> int:
    """ISO-8601 UTC ('2024-01-01T00:00:00Z') or unix seconds."""
    text = text.strip()
    if text.isdigit():
        return int(text)
    return parse_iso_utc(text)


def parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise UsageError(f"bad address {text!r}, want host:port")
    return host, int(port)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as f:
        return json.load(f)


def _load_model(path: str) -> core.CalibrationModel:
    with open(path) as f:
        return core.CalibrationModel.from_dict(json.load(f))


def _field_model_from_config(cfg: dict, depths: tuple[int, ...]) -> sim.SoilFieldModel:
    fcfg = cfg.get("field", {})
    base = sim.default_field_model(depths)
    if not fcfg:
        return base
    kwargs = {}
    for key in ("vwc_surface_range", "temp_range"):
        if key in fcfg:
            kwargs[key] = tuple(fcfg[key])
    for key in ("rain_event_rate_per_day", "diurnal_temp_amplitude_c",
                "noise_sigma_voltage", "noise_sigma_temp_c"):
        if key in fcfg:
            kwargs[key] = float(fcfg[key])
    return sim.SoilFieldModel(depth_responses=base.depth_responses, **kwargs)


def _cal_from_config(cfg: dict, model_path: str | None) -> core.CalibrationModel:
    if model_path:
        return _load_model(model_path)
    if "calibration" in cfg:
        return core.CalibrationModel.from_dict(cfg["calibration"])
    return core.FIELD_CALIBRATION


def cmd_serve(args) -> int:
    store = Store(args.data_root)
    if args.model:
        store.register_model(_load_model(args.model))
    try:
        gw = Gateway(parse_addr(args.listen), store, site=args.site)
    except BindFailure as e:
        print(f"bind failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    stop = threading.Event()
    for signum in (signal.SIGINT, signal.SIGTERM):
        signal.signal(signum, lambda *_: stop.set())
    host, port = gw.bound_addr
    print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
    t = threading.Thread(target=gw.serve_forever, daemon=True)
    t.start()
    try:
        while not stop.is_set():
            stop.wait(0.2)
    finally:
        gw.shutdown()
        gw.server_close()
    print(f"shutdown, counters={gw.counters()}", file=sys.stderr)
    return EXIT_OK


def _profiles_from_config(cfg: dict, args) -> list[sim.ProfileConfig]:
    if cfg.get("profiles"):
        return [
            sim.ProfileConfig(
                profile_id=p["profile_id"],
                depths_cm=tuple(p.get("depths_cm", (5, 15, 50, 100))),
                cadence_s=int(p.get("cadence_s", args.cadence)),
                seed=int(p.get("seed", args.seed)),
                clock_scale=float(p.get("clock_scale", args.clock_scale)),
            )
            for p in cfg["profiles"]
        ]
    return [
        sim.ProfileConfig(
            profile_id=f"p{i + 1}",
            cadence_s=args.cadence,
            seed=args.seed + i,
            clock_scale=args.clock_scale,
        )
        for i in range(args.nodes)
    ]


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    profiles = _profiles_from_config(cfg, args)
    cal = _cal_from_config(cfg, args.model)
    duration_s = parse_duration(args.duration)
    start_ts = parse_instant(args.start) if args.start else int(time.time()) // 86400 * 86400
    site = cfg.get("site", args.site)

    if args.offline:
        store = Store(args.data_root)
        for prof in profiles:
            fieldm = _field_model_from_config(cfg, prof.depths_cm)
            for t_s in sim.tick_times(duration_s, prof.cadence_s):
                for reading in sim.step(prof, fieldm, cal, t_s, start_ts):
                    store.append_reading(reading, recv_timestamp=reading.timestamp)
        print(f"offline run complete: {len(profiles)} profile(s)", file=sys.stderr)
        return EXIT_OK

    addr = parse_addr(args.connect or cfg.get("gateway", f"127.0.0.1:{DEFAULT_PORT}"))
    sleeper = None if math.isinf(args.clock_scale) else time.sleep
    failures = []

    def run_one(prof: sim.ProfileConfig):
        fieldm = _field_model_from_config(cfg, prof.depths_cm)
        client = GatewayClient(addr, node_id=prof.profile_id, site=site,
                               backoff_base_s=args.backoff_base,
                               max_attempts=args.max_attempts)
        try:
            client.connect()
        except OSError as e:
            failures.append(f"{prof.profile_id}: cannot reach gateway: {e}")
            return
        try:
            counters = sim.run_node(prof, fieldm, cal, client, duration_s, start_ts, sleep=sleeper)
        finally:
            client.close()
        if client.buffer or counters.get("dropped_overflow"):
            failures.append(f"{prof.profile_id}: {len(client.buffer)} unsent readings")
        print(f"{prof.profile_id}: {counters}", file=sys.stderr)

    threads = [threading.Thread(target=run_one, args=(p,)) for p in profiles]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for msg in failures:
        print(msg, file=sys.stderr)
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_calibrate(args) -> int:
    with open(args.pairs, newline="") as f:
        reader = csv.reader(f)
        pairs = []
        for i, row in enumerate(reader):
            if not row or (i == 0 and not _is_number(row[0])):
                continue  # header or blank
            pairs.append((float(row[0]), float(row[1])))
    transform = core.Transform.RECIPROCAL if args.transform == "reciprocal" else core.Transform.IDENTITY
    try:
        model = core.fit_calibration(pairs, transform)
    except (core.InsufficientPoints, core.SingularSystem, core.ZeroVoltage) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    doc = json.dumps(model.to_dict(), indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(doc)
    else:
        sys.stdout.write(doc)
    print(f"fit: rmse={model.fit_rmse:.4f} r2={model.fit_r2:.6f} n={model.n_points}",
          file=sys.stderr)
    return EXIT_OK


def _is_number(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _query_args(store: Store, args) -> list[StoredRow]:
    start = parse_instant(args.start) if args.start else None
    end = parse_instant(args.end) if args.end else None
    return store.query(profile_id=args.profile, start_ts=start, end_ts=end)


def cmd_apply(args) -> int:
    model = _load_model(args.model)
    store = Store(args.data_root)
    rows = rows_with_vwc(_query_args(store, args), model)
    data = export(rows, args.format)
    _write_out(data, args.out)
    return EXIT_OK


def cmd_export(args) -> int:
    store = Store(args.data_root)
    rows = _query_args(store, args)
    data = export(rows, args.format)
    _write_out(data, args.out)
    return EXIT_OK


def _write_out(data: bytes, out: str | None) -> None:
    if out:
        with open(out, "wb") as f:
            f.write(data)
    else:
        sys.stdout.buffer.write(data)


def _read_reference_csv(path: str) -> list[tuple[int, float]]:
    series = []
    with open(path, newline="") as f:
        for i, row in enumerate(csv.reader(f)):
            if not row or (i == 0 and not _is_number(row[1])):
                continue
            series.append((parse_instant(row[0]), float(row[1])))
    return series


def cmd_report(args) -> int:
    store = Store(args.data_root)
    rows = _query_args(store, args)
    if not rows:
        print("no rows in range", file=sys.stderr)
        return EXIT_RUNTIME
    model = _load_model(args.model) if args.model else core.FIELD_CALIBRATION
    rows = rows_with_vwc(rows, model)

    # Sensor VWC series for reference comparison: calibrated moisture at the
    # shallowest depth present (gravimetric sampling is near-surface).
    depth = min(r.depth_cm for r in rows if r.channel is Channel.MOISTURE_VOLTAGE)
    sensor_series = [
        (r.timestamp, r.vwc_percent)
        for r in rows
        if r.channel is Channel.MOISTURE_VOLTAGE and r.depth_cm == depth
    ]
    references = []
    for spec_arg in args.reference or []:
        label, _, path = spec_arg.partition("=")
        if not path:
            raise UsageError(f"--reference wants label=path, got {spec_arg!r}")
        references.append((label, _read_reference_csv(path)))

    report = validation_report(rows, sensor_series, references, cadence_s=args.cadence)
    sys.stdout.write(render_report(report))
    if args.out_json:
        with open(args.out_json, "wb") as f:
            f.write(report_to_json(report))
    if args.plot_csv_dir:
        os.makedirs(args.plot_csv_dir, exist_ok=True)
        for ch in (Channel.MOISTURE_VOLTAGE, Channel.TEMPERATURE_C):
            path = os.path.join(args.plot_csv_dir, f"{ch.value}.csv")
            with open(path, "wb") as f:
                f.write(plot_series_csv(rows, ch))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="soilnet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--data-root", default=_env_default("data-root", "data"))
        sp.add_argument("--config", default=_env_default("config"))

    sp = sub.add_parser("serve", help="run the ingestion gateway")
    common(sp)
    sp.add_argument("--listen", default=_env_default("listen", f"127.0.0.1:{DEFAULT_PORT}"))
    sp.add_argument("--site", default=_env_default("site", "site"))
    sp.add_argument("--model", default=_env_default("model"))
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("simulate", help="run simulated sensor nodes")
    common(sp)
    sp.add_argument("--nodes", type=int, default=1)
    sp.add_argument("--duration", default="48h")
    sp.add_argument("--cadence", type=int, default=900)
    sp.add_argument("--seed", type=int, default=int(_env_default("seed", "0")))
    sp.add_argument("--clock-scale", type=float, default=math.inf)
    sp.add_argument("--connect", default=_env_default("connect"))
    sp.add_argument("--offline", action="store_true")
    sp.add_argument("--start", default=_env_default("start"))
    sp.add_argument("--site", default=_env_default("site", "site"))
    sp.add_argument("--model", default=_env_default("model"))
    sp.add_argument("--backoff-base", type=float, default=1.0)
    sp.add_argument("--max-attempts", type=int, default=8)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("calibrate", help="fit a calibration model from (voltage,vwc) pairs")
    sp.add_argument("--pairs", required=True)
    sp.add_argument("--transform", choices=["reciprocal", "identity"], default="reciprocal")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_calibrate)

    def range_args(sp):
        sp.add_argument("--profile")
        sp.add_argument("--start")
        sp.add_argument("--end")

    sp = sub.add_parser("apply", help="export with vwc filled from a model")
    common(sp)
    range_args(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--format", choices=["csv", "json", "xml"], default="csv")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_apply)

    sp = sub.add_parser("export", help="export stored rows")
    common(sp)
    range_args(sp)
    sp.add_argument("--format", choices=["csv", "json", "xml"], default="csv")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_export)

    sp = sub.add_parser("report", help="validation report (RMSE/correlation, extrema, variability)")
    common(sp)
    range_args(sp)
    sp.add_argument("--model", default=_env_default("model"))
    sp.add_argument("--cadence", type=int, default=900)
    sp.add_argument("--reference", action="append", metavar="LABEL=CSV")
    sp.add_argument("--out-json")
    sp.add_argument("--plot-csv-dir")
    sp.set_defaults(func=cmd_report)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
