"""Preset recipes that regenerate each figure's data and a static plot."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from nuflavor import analysis
from nuflavor.ensemble import build_hamiltonian, rng_for
from nuflavor.errors import InvalidParameterError
from nuflavor.experiment import run_experiment, validate_config
from nuflavor.randomized import average_hamiltonian_variance, draw_matched_schedule
from nuflavor.statevector import InitialState

FIGURES = ("fig1", "fig2", "fig3", "fig4", "fig5", "fig7")
SCALES = ("desk", "paper")
DESK_MAX_EXACT = 22

_PRESETS = {
    "desk": {
        "fig1": {"sizes": [4, 6, 8, 10], "realizations": 10, "t_stop": 20.0},
        "fig2": {"sizes": [8, 12, 16], "draws": 100, "layers": list(range(2, 21))},
        "fig3": {"n": 8, "layers": [4, 16, 64], "realizations": 20, "t_stop": 10.0},
        "fig4": {"n": 10, "max_layers": 15, "realizations": 50},
        "fig5": {"n": 12, "chi": [2, 4, 8, 16, 32, 64], "max_layers": 12, "realizations": 5},
        "fig7": {"exact": [8, 12, 16, 20], "psa": [32, 48, 64], "realizations": 20,
                 "psa_realizations": 10, "n_events": 2000},
    },
    "paper": {
        "fig1": {"sizes": [8, 12, 16, 20, 24, 28], "realizations": 50, "t_stop": 20.0},
        "fig2": {"sizes": [8, 16, 32], "draws": 1000, "layers": list(range(2, 21))},
        "fig3": {"n": 22, "layers": [4, 16, 64], "realizations": 100, "t_stop": 10.0},
        "fig4": {"n": 22, "max_layers": 15, "realizations": 100},
        "fig5": {"n": 20, "chi": [8, 16, 32, 64, 128, 256, 512, 1024, 2048], "max_layers": 15,
                 "realizations": 10},
        "fig7": {"exact": [8, 12, 16, 20, 24], "psa": [32, 48, 64, 80, 96, 112],
                 "realizations": 100, "psa_realizations": 50, "n_events": 10000},
    },
}


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _variance_by_job(series):
    return [sr for sr in series if sr.kind == "variance"]


def _band(series):
    return analysis.ensemble_stats(series)


def _plot_band(ax, stats, label, color=None):
    line = ax.plot(stats["time"], stats["median"], label=label, color=color)[0]
    lo, hi = (stats["p25"], stats["p75"])
    ax.fill_between(stats["time"], lo, hi, alpha=0.25, color=line.get_color())


def _taus(series, criterion="variance_threshold"):
    taus = []
    for sr in series:
        est = analysis.characteristic_time(sr, criterion)
        taus.append(np.nan if est.tau_th is None else est.tau_th)
    return np.array(taus)


def _tau_summary(taus):
    ok = taus[np.isfinite(taus)]
    if ok.size == 0:
        return {"median": np.nan, "p10": np.nan, "p90": np.nan, "defined": 0}
    return {
        "median": float(np.median(ok)),
        "p10": float(np.percentile(ok, 10)),
        "p90": float(np.percentile(ok, 90)),
        "defined": int(ok.size),
    }


def _half_width(summary):
    return max(0.5 * (summary["p90"] - summary["p10"]), 1e-3)


def _run(cfg, out, workers):
    return run_experiment(cfg, output=str(out), workers=workers)


def _check_scale(configs, scale):
    # validation also refuses exact backends beyond memory
    for cfg in configs:
        if scale == "desk" and cfg["backend"] != "psa" and cfg["n"] > DESK_MAX_EXACT:
            raise InvalidParameterError(f"desk scale caps exact backends at n <= {DESK_MAX_EXACT}")
        validate_config(cfg)


def _fig1(p, out, seed, workers, scale):
    cfgs = [
        {"backend": "trotter", "n": n, "seed": seed, "realizations": p["realizations"],
         "times": {"stop": p["t_stop"], "step": 0.25}, "trotter": {"delta_t": 0.5, "order": 2},
         "observables": ["variance", "z_single", "loschmidt", "entropy"]}
        for n in p["sizes"]
    ]
    _check_scale(cfgs, scale)
    rows = []
    for cfg in cfgs:
        res = _run(cfg, out / f"n{cfg['n']}", workers)
        for crit, kind in (("variance_threshold", "variance"), ("loschmidt_minimum", "loschmidt"),
                           ("z_inversion", "z_single"), ("entropy_saturation", "entropy")):
            subset = [sr for sr in res.series if sr.kind == kind]
            if kind in ("z_single", "entropy"):
                subset = [sr for sr in subset if sr.meta.get("neutrino") == 0]
            rows.append(dict(n=cfg["n"], criterion=crit, **_tau_summary(_taus(subset, crit))))
    _write_rows(out / "fig1_tau.csv", rows)
    var = [r for r in rows if r["criterion"] == "variance_threshold" and np.isfinite(r["median"])]
    fits = None
    if len(var) >= 3:
        fits = analysis.scaling_fit([r["n"] for r in var], [r["median"] for r in var],
                                    [_half_width(r) for r in var])
        (out / "fig1_fits.json").write_text(_dumps(analysis.fit_summary(fits)))
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 4))
    for crit in analysis.CRITERIA:
        sel = [r for r in rows if r["criterion"] == crit]
        ns = [r["n"] for r in sel]
        med = np.array([r["median"] for r in sel])
        err = np.array([[r["median"] - r["p10"], r["p90"] - r["median"]] for r in sel]).T
        ax.errorbar(ns, med, yerr=err, marker="o", capsize=3, label=crit)
    ax.set_xlabel("N")
    ax.set_ylabel("characteristic time")
    ax.legend(fontsize=7)
    return _save(fig, out / "fig1.png", plt)


def _fig2(p, out, seed, workers, scale):
    rows = []
    for n in p["sizes"]:
        initial = InitialState.domain_wall(n)
        for L in p["layers"]:
            vals = []
            for d in range(p["draws"]):
                sample = build_hamiltonian(n, seed=seed, realization_id=d)
                rng = rng_for(seed, d, L)
                phi_s = initial.random_permutation(rng)
                _, rec = draw_matched_schedule(sample, initial, phi_s, L, rng)
                vals.append(rec.alpha * np.sqrt(L / n))
            vals = np.array(vals)
            rows.append({"n": n, "layers": L, "mean": float(vals.mean()),
                         "std": float(vals.std()), "draws": int(vals.size)})
    _write_rows(out / "fig2_alpha.csv", rows)
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 4))
    for n in p["sizes"]:
        sel = [r for r in rows if r["n"] == n]
        ax.errorbar([r["layers"] for r in sel], [r["mean"] for r in sel],
                    yerr=[r["std"] for r in sel], marker="o", capsize=2, label=f"N={n}")
    ax.set_xlabel("L")
    ax.set_ylabel(r"$\alpha\sqrt{L/N}$")
    ax.legend()
    return _save(fig, out / "fig2.png", plt)


def _exact_reference(n, realizations, seed, times, out, workers):
    backend = "exact_dense" if n <= 14 else "trotter"
    cfg = {"backend": backend, "n": n, "seed": seed, "realizations": realizations,
           "times": {"values": [float(t) for t in times]}}
    return _run(cfg, out / "exact", workers).series


def _fig3(p, out, seed, workers, scale):
    n = p["n"]
    times = np.arange(0.0, p["t_stop"] + 1e-9, 0.5)
    cfgs = [{"backend": "protocol_a", "n": n, "seed": seed, "realizations": p["realizations"],
             "protocol": {"layers": L}, "times": {"values": [float(t) for t in times]}}
            for L in p["layers"]]
    _check_scale(cfgs, scale)
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 4))
    for cfg in cfgs:
        res = _run(cfg, out / f"L{cfg['protocol']['layers']}", workers)
        _plot_band(ax, _band(_variance_by_job(res.series)), f"L={cfg['protocol']['layers']}")
    exact = _exact_reference(n, p["realizations"], seed, times, out, workers)
    _plot_band(ax, _band(exact), "exact", "k")
    if n <= 14:
        initial = InitialState.domain_wall(n)
        avg = np.array([
            average_hamiltonian_variance(build_hamiltonian(n, seed=seed, realization_id=k), initial, times)
            for k in range(p["realizations"])
        ])
        ax.plot(times, np.median(avg, axis=0), "k--", label="average H")
    ax.set_xlabel("t")
    ax.set_ylabel("V(t)")
    ax.legend()
    return _save(fig, out / "fig3.png", plt)


def _fig4(p, out, seed, workers, scale):
    n = p["n"]
    cfg = {"backend": "protocol_b", "n": n, "seed": seed, "realizations": p["realizations"],
           "protocol": {"delta_t": 1.0, "max_layers": p["max_layers"]}}
    _check_scale([cfg], scale)
    res = _run(cfg, out / "protocol_b", workers)
    times = np.arange(p["max_layers"] + 1, dtype=float)
    exact = _exact_reference(n, p["realizations"], seed, times, out, workers)
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 4))
    _plot_band(ax, _band(res.series), "protocol B")
    _plot_band(ax, _band(exact), "exact", "k")
    ax.set_xlabel("t")
    ax.set_ylabel("V(t)")
    ax.legend()
    return _save(fig, out / "fig4.png", plt)


def _fig5(p, out, seed, workers, scale):
    cfg = {"backend": "mps", "n": p["n"], "seed": seed, "realizations": p["realizations"],
           "protocol": {"delta_t": 1.0, "max_layers": p["max_layers"]}, "mps": {"chi": p["chi"]}}
    _check_scale([cfg], scale)
    res = _run(cfg, out / "mps", workers)
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 4))
    for chi in p["chi"]:
        sel = [sr for sr in res.series if sr.meta.get("chi") == chi]
        stats = _band(sel)
        ax.plot(stats["time"], stats["median"], label=rf"$\chi$={chi}")
    ext_path = res.output_dir / "extrapolation.json"
    if ext_path.exists():
        ext = json.loads(ext_path.read_text())
        pts = [f for f in ext["fits"] if "a_mean" in f]
        ax.errorbar([f["time"] for f in pts], [f["a_mean"] for f in pts],
                    yerr=[f["a_std"] for f in pts], fmt="k:", label="extrapolated")
    ax.set_xlabel("t")
    ax.set_ylabel("V(t)")
    ax.legend(fontsize=7)
    return _save(fig, out / "fig5.png", plt)


def _fig7(p, out, seed, workers, scale):
    cfgs = [{"backend": "protocol_b", "n": n, "seed": seed, "realizations": p["realizations"],
             "protocol": {"delta_t": 1.0, "max_layers": 15}} for n in p["exact"]]
    cfgs += [{"backend": "psa", "n": n, "seed": seed, "realizations": p["psa_realizations"],
              "times": {"stop": 30.0, "step": 0.25},
              "psa": {"n_events": p["n_events"], "step": 0.05}} for n in p["psa"]]
    _check_scale(cfgs, scale)
    rows = []
    for cfg in cfgs:
        res = _run(cfg, out / f"{cfg['backend']}_n{cfg['n']}", workers)
        rows.append(dict(n=cfg["n"], backend=cfg["backend"], **_tau_summary(_taus(res.series))))
    _write_rows(out / "fig7_tau.csv", rows)
    ok = [r for r in rows if np.isfinite(r["median"])]
    summary = {}
    for label, sel in (("all", ok), ("exact_only", [r for r in ok if r["backend"] != "psa"])):
        if len(sel) >= 3:
            fits = analysis.scaling_fit([r["n"] for r in sel], [r["median"] for r in sel],
                                        [_half_width(r) for r in sel])
            summary[label] = analysis.fit_summary(fits)
    (out / "fig7_fits.json").write_text(_dumps(summary))
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 4))
    for backend, color in (("protocol_b", "k"), ("psa", "tab:orange")):
        sel = [r for r in rows if r["backend"] == backend]
        if sel:
            err = np.array([[r["median"] - r["p10"], r["p90"] - r["median"]] for r in sel]).T
            ax.errorbar([r["n"] for r in sel], [r["median"] for r in sel], yerr=err, fmt="o",
                        color=color, capsize=3, label=backend)
    if "all" in summary:
        grid = np.linspace(min(r["n"] for r in ok), max(r["n"] for r in ok), 200)
        f = summary["all"]
        ax.plot(grid, f["sqrt"]["a"] * np.sqrt(grid) + f["sqrt"]["b"], ":", label=r"$a\sqrt{N}+b$")
        ax.plot(grid, f["log"]["a"] * np.log(grid) + f["log"]["b"], "--", label=r"$a\log N+b$")
    ax.set_xlabel("N")
    ax.set_ylabel(r"$\tau_{th}$")
    ax.legend(fontsize=7)
    return _save(fig, out / "fig7.png", plt)


_RECIPES = {"fig1": _fig1, "fig2": _fig2, "fig3": _fig3, "fig4": _fig4, "fig5": _fig5, "fig7": _fig7}


def reproduce_figure(tag, scale="desk", output="figures", seed=0, workers=None):
    """Run the preset configs for ``tag`` and write data plus a PNG under ``output/tag``."""
    if tag not in FIGURES:
        raise InvalidParameterError(f"unknown figure {tag!r}; valid tags: {', '.join(FIGURES)}")
    if scale not in SCALES:
        raise InvalidParameterError(f"unknown scale {scale!r}; choose from {SCALES}")
    out = Path(output) / tag
    out.mkdir(parents=True, exist_ok=True)
    plot = _RECIPES[tag](_PRESETS[scale][tag], out, seed, workers, scale)
    return {"tag": tag, "scale": scale, "output": str(out), "plot": str(plot)}


def _write_rows(path, rows):
    cols = list(rows[0])
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols) + "\n")


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"


def _save(fig, path, plt):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
