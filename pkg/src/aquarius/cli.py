"""Command-line entry point: ``python3 -m aquarius <command> ...``.

Every command writes a manifest next to its outputs recording the command
line, the resolved options, input digests and output digests. ``rerun``
replays a manifest into a scratch directory and checks the outputs come
back byte for byte.

Exit status: 0 success, 2 usage or configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import __version__
from . import catalog as C
from .store import RegionConfig, RegionError, VipRegion
from .traffic import ConfigError, WorkloadSpec, gen_trace, iter_trace, write_trace

log = logging.getLogger("aquarius")

SUMMARY_SCHEMA = 1
LB_POLICY_NAMES = ("ecmp", "wcmp", "wcmp_misconfigured", "awcmp", "rlb")

# options naming files a command writes (remapped by rerun) or reads (digested)
OUTPUT_OPTS = {"gen": ("out",), "extract": ("region", "features"), "corpus": ("out",), "classify": ("out",),
               "autoscale": ("out",), "lbsim": ("out",)}
INPUT_OPTS = {"extract": ("trace",), "classify": ("features", "labels")}


class UsageError(Exception):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def _summary(command: str, body: dict) -> dict:
    return _jsonable({"schema": SUMMARY_SCHEMA, "version": __version__, "command": command, **body})


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive(kind):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return parse


def _ensure_dir(path) -> None:
    os.makedirs(path, exist_ok=True)


def _ensure_parent(path) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# -- commands --------------------------------------------------------------

def cmd_gen(args) -> dict:
    caps = args.capacities or (1.0,) * (args.servers or 1)
    n = args.servers or len(caps)
    spec = WorkloadSpec(args.rate, args.mean_duration, args.mean_size, n_servers=n, server_capacities=caps,
                        duration_s=args.duration, seed=args.seed, flood_rate=args.flood_rate,
                        io_fraction=args.io_fraction)
    events = [ev for ev in gen_trace(spec) if ev.ts < spec.duration_s] if spec.duration_s > 0 else []
    _ensure_parent(args.out)
    write_trace(events, args.out)
    log.info("wrote %d packets to %s", len(events), args.out)
    return {"trace": args.out}


def cmd_extract(args) -> dict:
    from .apps.features import extract

    signals = None
    if args.signals:
        signals = tuple(s.strip() for s in args.signals.split(",") if s.strip())
        unknown = sorted(set(signals) - set(C.SIGNALS))
        if unknown:
            raise ConfigError(f"unknown signals {unknown}; known: {', '.join(C.SIGNALS)}")
    features = args.features or os.path.splitext(args.region)[0] + ".features.csv"
    _ensure_parent(args.region)
    _ensure_parent(features)
    if os.path.exists(args.region):
        os.remove(args.region)
    region = VipRegion.create(RegionConfig(), args.region, seed=args.seed)
    try:
        fm, frames, dp = extract(iter_trace(args.trace), region, args.window, args.publish_interval)
        last = {e: [int(v) for v in lst[-1].counters] for e, lst in sorted(frames.items())}
        n_packets = dp.n_packets
    finally:
        region.close()
    if signals is not None:
        fm = fm.select_signals(signals)
    fm.to_csv(features)
    summary = {"rows": len(fm), "columns": len(fm.columns), "packets": n_packets,
               "final_counters": {str(e): dict(zip(C.COUNTERS, v)) for e, v in last.items()}}
    out = os.path.splitext(features)[0] + ".summary.json"
    _dump_json(_summary("extract", summary), out)
    return {"region": args.region, "features": features, "summary": out}


def cmd_corpus(args) -> dict:
    from .apps.classify import CLASS_NAMES, build_corpus

    _ensure_dir(args.out)
    fm, labels = build_corpus(args.seed, args.rows_per_class, window=args.window, warmup=args.warmup,
                              flood_rate=args.flood_rate)
    path = os.path.join(args.out, "features.csv")
    fm.to_csv(path, labels=[CLASS_NAMES[c] for c in labels])
    counts = {name: int(np.count_nonzero(labels == c)) for c, name in enumerate(CLASS_NAMES)}
    summary = os.path.join(args.out, "summary.json")
    _dump_json(_summary("corpus", {"rows": len(fm), "per_class": counts}), summary)
    return {"features": path, "summary": summary}


def _read_truth(path, n_rows):
    import csv
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty label file")
    head = rows[0]
    col = next((head.index(c) for c in ("label", "truth") if c in head), None)
    if col is None:
        raise ConfigError(f"{path}: no 'label' or 'truth' column")
    truth = [r[col] for r in rows[1:]]
    if len(truth) != n_rows:
        raise ConfigError(f"{path}: {len(truth)} labels for {n_rows} feature rows")
    return truth


def cmd_classify(args) -> dict:
    from .apps.classify import classify, isolation, write_labels
    from .apps.features import FeatureMatrix

    if not args.eps > 0:
        raise ConfigError("--eps must be positive")
    fm, _ = FeatureMatrix.from_csv(args.features)
    if len(fm) == 0:
        raise ConfigError(f"{args.features}: no feature rows")
    truth = _read_truth(args.labels, len(fm)) if args.labels else None
    labels, report = classify(fm, args.method, args.seed, truth, args.eps, args.min_pts, args.components)
    if truth is not None:
        report["isolation"] = {t: isolation(labels, truth, t) for t in sorted(set(truth))}
    _ensure_dir(args.out)
    path = os.path.join(args.out, "labels.csv")
    write_labels(path, fm, labels, truth)
    summary = os.path.join(args.out, "summary.json")
    _dump_json(_summary("classify", report), summary)
    return {"labels": path, "summary": summary}


def _autoscale_cfg(path):
    from .apps.autoscale import AutoscaleConfig
    if path in (None, "defaults"):
        return AutoscaleConfig()
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        return AutoscaleConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_autoscale(args) -> dict:
    from .apps.autoscale import run_autoscaler, step_load_spec, train_linreg, training_spec

    cfg = _autoscale_cfg(args.cfg)
    spec = step_load_spec(args.seed) if args.workload == "standard" else training_spec(args.seed)
    extra = {}
    predictor = args.predictor
    if predictor == "linreg":
        predictor, extra["training"] = train_linreg(training_spec(100 + args.seed), cfg)
    res = run_autoscaler(spec, predictor, cfg)
    _ensure_dir(args.out)
    path = os.path.join(args.out, "timeline.csv")
    res.to_csv(path)
    body = {**res.summary(), "workload": args.workload, "seed": args.seed, **extra}
    summary = os.path.join(args.out, "summary.json")
    _dump_json(_summary("autoscale", body), summary)
    return {"timeline": path, "summary": summary}


def _lb_policies(names, caps):
    from .apps.lb import LbPolicy, default_policies
    by_label = {p.label: p for p in default_policies(caps)}
    alias = {"ecmp": "ecmp", "wcmp": "wcmp_static", "wcmp_misconfigured": "wcmp_misconfigured",
             "awcmp": "wcmp_active", "rlb": "rlb"}
    out = []
    for n in names:
        if n not in alias:
            raise ConfigError(f"unknown policy {n!r}; expected some of {', '.join(LB_POLICY_NAMES)}")
        p = by_label[alias[n]]
        out.append(LbPolicy(p.variant, p.weights, p.poll_interval, p.refresh, p.tau, name=n))
    if len(set(names)) != len(names):
        raise ConfigError("policies listed twice")
    return out


def cmd_lbsim(args) -> dict:
    from .apps.lb import bench_spec, run_lb_bench, write_fct_csv

    names = [s.strip() for s in args.policies.split(",") if s.strip()]
    if not names:
        raise ConfigError("--policies is empty")
    caps = args.capacities or (2.0, 2.0, 1.0, 1.0)
    spec = bench_spec(args.seed, args.load, caps, args.mean_work, args.duration)
    summary, rows = run_lb_bench(spec, _lb_policies(names, caps), args.warmup)
    _ensure_dir(args.out)
    outputs = {}
    for n in names:
        path = os.path.join(args.out, f"fct_{n}.csv")
        write_fct_csv(path, [r for r in rows if r[0] == n])
        outputs[f"fct_{n}"] = path
    outputs["summary"] = os.path.join(args.out, "summary.json")
    body = {"policies": summary, "load": args.load, "capacities": list(caps), "seed": args.seed,
            "warmup": args.warmup}
    _dump_json(_summary("lbsim", body), outputs["summary"])
    return outputs


def shm_dump(path) -> dict:
    """Decoded view of a region file."""
    with VipRegion.open(path) as r:
        cfg = r.config
        out = {"path": os.fspath(path), "magic": "AQRS", "size": r.size,
               "config": {"N": cfg.N, "n_counters": cfg.n_counters, "n_signals": cfg.n_signals, "m": cfg.m,
                          "k": cfg.k, "n_action_slots": cfg.n_action_slots},
               "bit_index": format(r.bit_index, f"0{cfg.bitindex_bytes * 2}x"),
               "active": r.active_egresses(), "egress": {}}
        for i in r.active_egresses():
            seq, counters = r.read_counters(i)
            fr = r.read_latest(i)
            digests = {}
            for s in range(cfg.n_signals):
                res = fr.samples[s]
                name = C.SIGNALS[s] if s < len(C.SIGNALS) else str(s)
                filled = int(np.count_nonzero(res.any(axis=1)))
                digests[name] = {"filled": filled, "sha256": hashlib.sha256(res.tobytes()).hexdigest()[:16]}
            act = r.read_action(i)
            out["egress"][str(i)] = {
                "counter_seqs": r.counter_seqs(i), "action_seqs": r.action_seqs(i),
                "published_seq": seq, "counters": dict(zip(C.COUNTERS, (int(v) for v in counters))),
                "cache": dict(zip(C.COUNTERS, (int(v) for v in r.counter_cache(i)))),
                "action": {"weight": act.weight_value, "aux": act.aux}, "samples": digests}
    return out


def cmd_shm_dump(args) -> dict:
    view = shm_dump(args.region)
    if args.json:
        print(json.dumps(view, indent=2, sort_keys=True))
        return {}
    print(f"region {view['path']}  {view['size']} B  " + " ".join(f"{k}={v}" for k, v in view["config"].items()))
    print(f"bit index {view['bit_index']}  active {view['active']}")
    for i, e in view["egress"].items():
        print(f"egress {i}: counter seqs {e['counter_seqs']} action seqs {e['action_seqs']} "
              f"weight {e['action']['weight']:.4f}")
        print("  counters " + " ".join(f"{k}={v}" for k, v in e["counters"].items()))
        for name, d in e["samples"].items():
            print(f"  {name:<28} {d['filled']:>4} filled  {d['sha256']}")
    return {}


def cmd_rerun(args) -> dict:
    with open(args.manifest, encoding="utf-8") as fh:
        man = json.load(fh)
    command = man.get("command")
    if command not in OUTPUT_OPTS:
        raise ConfigError(f"{args.manifest}: cannot rerun command {command!r}")
    for name, rec in man.get("inputs", {}).items():
        if sha256_file(rec["path"]) != rec["sha256"]:
            raise RuntimeError(f"input {name} ({rec['path']}) changed since the recorded run")
    parser = build_parser()
    ns = parser.parse_args([command] + _required_stub(command))
    for k, v in man["config"].items():
        setattr(ns, k, tuple(v) if isinstance(v, list) else v)
    into = args.into or tempfile.mkdtemp(prefix="aquarius-rerun-")
    _ensure_dir(into)
    for opt in OUTPUT_OPTS[command]:
        v = getattr(ns, opt)
        if v is not None:
            setattr(ns, opt, os.path.join(into, os.path.basename(os.path.normpath(v))))
    outputs = ns.func(ns)
    result = {"manifest": args.manifest, "into": into, "files": {}}
    ok = True
    for name, rec in man["outputs"].items():
        new = outputs.get(name)
        same = new is not None and sha256_file(new) == rec["sha256"]
        ok &= same
        result["files"][name] = {"path": new, "identical": same}
    result["identical"] = ok
    print(json.dumps(result, indent=2, sort_keys=True))
    if not ok:
        raise RuntimeError("rerun outputs differ from the manifest")
    return {}


def _required_stub(command):
    # placeholder values for required options; overwritten from the manifest
    return {"gen": ["--out", "x"], "extract": ["--trace", "x", "--region", "x"],
            "classify": ["--features", "x"]}.get(command, [])


def write_manifest(args, argv, outputs: dict) -> str:
    command = args.command
    config = {k: _jsonable(v) for k, v in sorted(vars(args).items())
              if k not in ("func", "command", "stress_io", "stress_publishes", "stress_chunk")}
    inputs = {}
    for opt in INPUT_OPTS.get(command, ()):
        p = getattr(args, opt)
        if p:
            config[opt] = os.path.abspath(p)
            inputs[opt] = {"path": os.path.abspath(p), "sha256": sha256_file(p)}
    files = {name: {"path": p, "sha256": sha256_file(p)} for name, p in sorted(outputs.items())}
    if command in ("gen", "extract"):
        anchor = outputs["trace" if command == "gen" else "features"]
        path = os.path.splitext(anchor)[0] + ".manifest.json"
    else:
        path = os.path.join(args.out, "manifest.json")
    man = {"command": command, "argv": list(argv), "config": config, "seed": getattr(args, "seed", None),
           "inputs": inputs, "outputs": files, "version": __version__}
    _dump_json(man, path)
    return path


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aquarius", description="Flow telemetry pipeline and its applications.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--stress-io", action="store_true",
                   help="run the two-thread publish/read stress test and exit")
    p.add_argument("--stress-publishes", type=_positive(int), default=1_000_000)
    p.add_argument("--stress-chunk", type=int, default=1,
                   help="words per copy step in the publisher (0 = single copy)")
    sub = p.add_subparsers(dest="command", metavar="command")

    g = sub.add_parser("gen", help="generate a packet trace")
    g.add_argument("--rate", type=float, default=100.0, help="flow arrivals per second")
    g.add_argument("--duration", type=float, default=10.0)
    g.add_argument("--servers", type=int)
    g.add_argument("--capacities", type=_floats)
    g.add_argument("--flood-rate", type=float)
    g.add_argument("--io-fraction", type=float, default=0.0)
    g.add_argument("--mean-duration", type=float, default=0.02)
    g.add_argument("--mean-size", type=float, default=500.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("extract", help="run a trace through the flow table into a region file")
    e.add_argument("--trace", required=True)
    e.add_argument("--region", required=True)
    e.add_argument("--features", help="feature CSV (default: next to the region)")
    e.add_argument("--window", type=_positive(float), default=1.0)
    e.add_argument("--publish-interval", type=_positive(float), default=0.25)
    e.add_argument("--signals", help="comma-separated subset of signals to keep")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_extract)

    c = sub.add_parser("corpus", help="build the labelled four-class feature corpus")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--rows-per-class", type=_positive(int), default=200)
    c.add_argument("--window", type=_positive(float), default=2.0)
    c.add_argument("--warmup", type=float, default=30.0)
    c.add_argument("--flood-rate", type=_positive(float), default=5000.0)
    c.add_argument("--out", default="corpus")
    c.set_defaults(func=cmd_corpus)

    k = sub.add_parser("classify", help="cluster a feature CSV")
    k.add_argument("--features", required=True)
    k.add_argument("--method", choices=("kmeans4", "gmm4", "dbscan"), default="kmeans4")
    k.add_argument("--eps", type=float, default=0.1)
    k.add_argument("--min-pts", type=_positive(int), default=5)
    k.add_argument("--components", type=_positive(int), default=25)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--labels", help="ground-truth CSV with a 'label' or 'truth' column")
    k.add_argument("--out", default="classify")
    k.set_defaults(func=cmd_classify)

    a = sub.add_parser("autoscale", help="simulate threshold autoscaling")
    a.add_argument("--workload", choices=("standard", "training"), default="standard")
    a.add_argument("--predictor", choices=("oracle", "reactive", "linreg"), default="oracle")
    a.add_argument("--cfg", default="defaults", help="'defaults' or a JSON file of controller settings")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", default="autoscale")
    a.set_defaults(func=cmd_autoscale)

    b = sub.add_parser("lbsim", help="paired load-balancing replay")
    b.add_argument("--policies", default=",".join(LB_POLICY_NAMES))
    b.add_argument("--workload", choices=("bench",), default="bench")
    b.add_argument("--load", type=_positive(float), default=0.6)
    b.add_argument("--capacities", type=_floats)
    b.add_argument("--mean-work", type=_positive(float), default=0.05)
    b.add_argument("--duration", type=_positive(float), default=120.0)
    b.add_argument("--warmup", type=float, default=5.0)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="lbsim")
    b.set_defaults(func=cmd_lbsim)

    d = sub.add_parser("shm-dump", help="print a decoded region file")
    d.add_argument("--region", required=True)
    d.add_argument("--json", action="store_true")
    d.set_defaults(func=cmd_shm_dump)

    r = sub.add_parser("rerun", help="replay a manifest and compare outputs")
    r.add_argument("manifest")
    r.add_argument("--into", help="directory for the replayed outputs (default: a temp dir)")
    r.set_defaults(func=cmd_rerun)
    return p


def _setup_logging() -> None:
    raw = os.environ.get("AQUARIUS_LOG", "WARNING").strip().upper()
    level = int(raw) if raw.isdigit() else logging.getLevelName(raw)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.stress_io:
        from .stress import run_stress
        rep = run_stress(args.stress_publishes, chunk=args.stress_chunk)
        print(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
        return 0 if rep.torn == 0 else 1
    if not args.command:
        parser.print_usage(sys.stderr)
        print("aquarius: error: a command is required", file=sys.stderr)
        return 2
    try:
        outputs = args.func(args)
        if args.command in OUTPUT_OPTS and outputs:
            path = write_manifest(args, argv, outputs)
            log.info("manifest %s", path)
    except (ConfigError, UsageError) as exc:
        print(f"aquarius: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, RegionError, RuntimeError, ValueError, KeyError) as exc:
        print(f"aquarius: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    return 0
