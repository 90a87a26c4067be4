"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 resource limit, 4 some jobs failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from nuflavor import analysis
from nuflavor.ensemble import build_hamiltonian
from nuflavor.errors import (
    ConfigError,
    InvalidParameterError,
    InvalidSeriesError,
    ResourceLimitError,
)
from nuflavor.experiment import read_series_csv, run_experiment, validate_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESOURCE = 3
EXIT_PARTIAL = 4

_SUBCOMMAND_BACKEND = {
    "protocol-a": "protocol_a",
    "protocol-b": "protocol_b",
    "psa": "psa",
    "mps": "mps",
}


def _run_flags(p):
    p.add_argument("--config", help="YAML config or run manifest")
    p.add_argument("--n", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--realizations", type=int)
    p.add_argument("--permutations", type=int)
    p.add_argument("--initial")
    p.add_argument("--observables", nargs="+")
    p.add_argument("--t-start", type=float)
    p.add_argument("--t-stop", type=float)
    p.add_argument("--t-step", type=float)
    p.add_argument("--layers", type=int, help="protocol A depth")
    p.add_argument("--delta-t", type=float, help="protocol B or Trotter step")
    p.add_argument("--max-layers", type=int, help="protocol B maximum depth")
    p.add_argument("--order", type=int, help="Trotter order (1 or 2)")
    p.add_argument("--n-events", type=int)
    p.add_argument("--step", type=float, help="PSA integration step")
    p.add_argument("--chi", type=int, nargs="+")
    p.add_argument("--output", "-o")
    p.add_argument("--workers", type=int, help="overrides NUFLAVOR_WORKERS")


def _build_config(args, backend):
    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw = yaml.safe_load(fh) or {}
        if "config" in raw and "jobs" in raw:
            raw = raw["config"]
    if backend is not None:
        raw["backend"] = backend
    for key in ("n", "mu", "sigma", "seed", "realizations", "permutations", "initial",
                "observables", "output"):
        val = getattr(args, key)
        if val is not None:
            raw[key] = val
    times = dict(raw.get("times") or {})
    for flag, key in (("t_start", "start"), ("t_stop", "stop"), ("t_step", "step")):
        if getattr(args, flag) is not None:
            times[key] = getattr(args, flag)
    if times:
        raw["times"] = times
    section = "trotter" if raw.get("backend") == "trotter" else "protocol"
    overrides = {
        "protocol": {"layers": args.layers, "max_layers": args.max_layers},
        "trotter": {"order": args.order},
        "psa": {"n_events": args.n_events, "step": args.step},
        "mps": {"chi": args.chi},
    }
    overrides[section]["delta_t"] = args.delta_t
    for name, vals in overrides.items():
        vals = {k: v for k, v in vals.items() if v is not None}
        if vals:
            raw[name] = dict(raw.get(name) or {}, **vals)
    return raw


def _cmd_run(args, backend):
    raw = _build_config(args, backend)
    cfg = validate_config(raw)
    res = run_experiment(cfg, workers=args.workers)
    print(f"wrote {', '.join(sorted(res.manifest['outputs']))} to {res.output_dir}")
    if res.failures:
        for f in res.failures:
            print(f"job k={f['k']} s={f['s']} failed: {f['error']['message']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _cmd_sample(args):
    if args.n < 2 or args.n % 2:
        raise ConfigError("n", f"must be an even integer >= 2, got {args.n}")
    docs = [
        json.loads(build_hamiltonian(args.n, args.mu, args.seed, args.sigma, realization_id=k).to_json())
        for k in range(args.realizations)
    ]
    text = json.dumps(docs if len(docs) > 1 else docs[0], indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_analyze(args):
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    per_size = {}
    for path in args.inputs:
        for sr in read_series_csv(path):
            if sr.kind != args.kind:
                continue
            if args.neutrino is not None and sr.meta.get("neutrino") not in ("", str(args.neutrino)):
                continue
            per_size.setdefault(sr.meta.get("n") or "?", []).append(sr)
    if not per_size:
        raise InvalidSeriesError(f"no {args.kind} series in the inputs")
    summary = {"criterion": args.criterion, "gamma": args.gamma, "sizes": {}}
    for n, series in sorted(per_size.items(), key=lambda kv: (len(kv[0]), kv[0])):
        stats = analysis.ensemble_stats(series)
        analysis.stats_to_csv(stats, out / f"bands_n{n}.csv")
        taus = np.array([
            np.nan if (e := analysis.characteristic_time(sr, args.criterion, args.gamma)).tau_th is None
            else e.tau_th
            for sr in series
        ])
        ok = taus[np.isfinite(taus)]
        summary["sizes"][n] = {
            "realizations": len(series),
            "defined": int(ok.size),
            "median": float(np.median(ok)) if ok.size else None,
            "p10": float(np.percentile(ok, 10)) if ok.size else None,
            "p90": float(np.percentile(ok, 90)) if ok.size else None,
        }
    sized = [(int(n), v) for n, v in summary["sizes"].items() if n.isdigit() and v["median"] is not None]
    if len(sized) >= 3:
        spreads = [max(0.5 * (v["p90"] - v["p10"]), 1e-3) for _, v in sized]
        fits = analysis.scaling_fit([n for n, _ in sized], [v["median"] for _, v in sized], spreads)
        summary["fit"] = analysis.fit_summary(fits)
    (out / "analysis.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary.get("fit", summary["sizes"]), indent=2))
    return EXIT_OK


def _cmd_reproduce(args):
    from nuflavor.figures import reproduce_figure

    info = reproduce_figure(args.tag, args.scale, args.output, seed=args.seed, workers=args.workers)
    print(json.dumps(info))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="nuflavor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw Hamiltonian realizations as JSON")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--realizations", type=int, default=1)
    p.add_argument("--output", "-o")

    p = sub.add_parser("evolve", help="exact or Trotter dynamics")
    _run_flags(p)
    p.add_argument("--backend", choices=("exact_dense", "trotter"))
    for name in _SUBCOMMAND_BACKEND:
        _run_flags(sub.add_parser(name, help=f"{name} ensemble run"))

    p = sub.add_parser("analyze", help="bands, thermalization times and scaling fits")
    p.add_argument("inputs", nargs="+", help="result CSVs")
    p.add_argument("--kind", default="variance")
    p.add_argument("--criterion", default="variance_threshold", choices=analysis.CRITERIA)
    p.add_argument("--gamma", type=float, default=analysis.GAMMA)
    p.add_argument("--neutrino", type=int)
    p.add_argument("--output", "-o", default="analysis")

    p = sub.add_parser("reproduce", help="regenerate a figure's data and plot")
    p.add_argument("tag")
    p.add_argument("--scale", default="desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", default="figures")
    p.add_argument("--workers", type=int)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "sample":
            return _cmd_sample(args)
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "reproduce":
            return _cmd_reproduce(args)
        backend = _SUBCOMMAND_BACKEND.get(args.command)
        if args.command == "evolve":
            backend = args.backend
        return _cmd_run(args, backend)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (InvalidParameterError, InvalidSeriesError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
