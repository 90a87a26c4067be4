"""Configured ensemble runs: validation, seeded jobs, CSV and manifest output.

A run enumerates jobs ``(k, s)``: ``k`` picks the Hamiltonian realization
(stream ``(seed, k)``) and ``s`` the permutation/schedule/event draw
(stream ``(seed, k, s)``). Job results depend only on the config and the
key, so outputs are independent of worker count and completion order.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from nuflavor import __version__, kernels
from nuflavor.ensemble import build_hamiltonian, hamiltonian_from_couplings, rng_for
from nuflavor.errors import ConfigError, NuFlavorError, ResourceLimitError
from nuflavor.series import KINDS, ObservableSeries, write_csv
from nuflavor.statevector import (
    MAX_DENSE_QUBITS,
    MAX_STATEVECTOR_QUBITS,
    DenseOracle,
    InitialState,
    exact_dynamics,
    trotter_dynamics,
)

BACKENDS = ("exact_dense", "trotter", "protocol_a", "protocol_b", "psa", "mps")
INITIAL_STATES = ("domain_wall", "polarized", "alternating")
EXTRA_COLUMNS = (
    "n", "neutrino", "protocol", "chi", "truncation_weight", "alpha", "g", "g_R", "schedule_seed",
    "n_events", "step",
)
WORKERS_ENV = "NUFLAVOR_WORKERS"

_TOP_KEYS = {
    "backend", "n", "mu", "sigma", "seed", "realizations", "permutations", "initial",
    "observables", "times", "protocol", "trotter", "psa", "mps", "output", "couplings",
}
_SECTIONS = {
    "times": {"start": 0.0, "stop": 10.0, "step": 0.5},
    "protocol": {"layers": 16, "delta_t": 1.0, "max_layers": 15},
    "trotter": {"delta_t": 0.5, "order": 2},
    "psa": {"n_events": 10000, "step": 0.01},
    "mps": {"chi": [4, 8, 16, 32]},
}


@dataclass(frozen=True)
class ExperimentConfig:
    backend: str
    n: int
    mu: float = 1.0
    sigma: float = 0.5
    seed: int = 0
    realizations: int = 1
    permutations: int = 1
    initial: str = "domain_wall"
    observables: tuple = ("variance",)
    times: dict = field(default_factory=lambda: dict(_SECTIONS["times"]))
    protocol: dict = field(default_factory=lambda: dict(_SECTIONS["protocol"]))
    trotter: dict = field(default_factory=lambda: dict(_SECTIONS["trotter"]))
    psa: dict = field(default_factory=lambda: dict(_SECTIONS["psa"]))
    mps: dict = field(default_factory=lambda: dict(_SECTIONS["mps"]))
    output: str = "results"
    couplings: tuple | None = None

    def to_dict(self):
        d = asdict(self)
        d["observables"] = list(self.observables)
        d["couplings"] = None if self.couplings is None else [list(r) for r in self.couplings]
        return d

    def time_grid(self):
        if self.backend in ("protocol_b", "mps"):
            p = self.protocol
            return p["delta_t"] * np.arange(p["max_layers"] + 1)
        t = self.times
        if "values" in t:
            return np.asarray(t["values"], dtype=float)
        count = int(round((t["stop"] - t["start"]) / t["step"]))
        return t["start"] + t["step"] * np.arange(count + 1)

    def jobs(self):
        return [(k, s) for k in range(self.realizations) for s in range(self.permutations)]


def _is_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)


def _positive(key, v, integer=False):
    ok = _is_int(v) if integer else _is_num(v)
    if not ok or not v > 0:
        kind = "a positive integer" if integer else "a positive number"
        raise ConfigError(key, f"must be {kind}, got {v!r}")
    return int(v) if integer else float(v)


def _section(raw, name):
    given = raw.get(name, {}) or {}
    if not isinstance(given, dict):
        raise ConfigError(name, "must be a mapping")
    merged = dict(_SECTIONS[name])
    for key in given:
        if key not in merged and not (name == "times" and key == "values"):
            raise ConfigError(f"{name}.{key}", "unknown key")
    merged.update(given)
    return merged


def physical_memory():
    try:
        return os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError, AttributeError):
        return 8 << 30


def check_resources(backend, n):
    """Refuse sizes the exact backends cannot hold in memory."""
    if backend == "exact_dense" and n > MAX_DENSE_QUBITS:
        raise ResourceLimitError(
            f"exact_dense is limited to n <= {MAX_DENSE_QUBITS}; use trotter, protocol_b or psa"
        )
    if backend in ("trotter", "protocol_a", "protocol_b"):
        need = 4 * 16 * (1 << n)
        if n > MAX_STATEVECTOR_QUBITS or need > physical_memory():
            raise ResourceLimitError(
                f"statevector at n={n} needs ~{need / 2**30:.1f} GiB; use the psa backend"
            )


def validate_config(raw):
    """Check every field before any compute; errors name the offending key."""
    if isinstance(raw, ExperimentConfig):
        raw = raw.to_dict()
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(key, "unknown key")
    backend = raw.get("backend")
    if backend not in BACKENDS:
        raise ConfigError("backend", f"must be one of {BACKENDS}, got {backend!r}")
    n = raw.get("n")
    if not _is_int(n) or n < 2 or n % 2:
        raise ConfigError("n", f"must be an even integer >= 2, got {n!r}")
    mu = raw.get("mu", 1.0)
    if not _is_num(mu):
        raise ConfigError("mu", f"must be a number, got {mu!r}")
    sigma = _positive("sigma", raw.get("sigma", 0.5))
    seed = raw.get("seed", 0)
    if not _is_int(seed) or seed < 0:
        raise ConfigError("seed", f"must be a non-negative integer, got {seed!r}")
    realizations = _positive("realizations", raw.get("realizations", 1), integer=True)
    permutations = _positive("permutations", raw.get("permutations", 1), integer=True)
    if backend in ("exact_dense", "trotter") and permutations != 1:
        raise ConfigError("permutations", "deterministic backends take permutations = 1")
    initial = raw.get("initial", "domain_wall")
    if initial not in INITIAL_STATES:
        raise ConfigError("initial", f"must be one of {INITIAL_STATES}, got {initial!r}")
    obs = raw.get("observables", ["variance"])
    if isinstance(obs, str):
        obs = [obs]
    if not isinstance(obs, (list, tuple)) or not obs:
        raise ConfigError("observables", "must be a non-empty list")
    for o in obs:
        if o not in KINDS:
            raise ConfigError("observables", f"unknown observable {o!r}; choose from {KINDS}")
    if backend not in ("exact_dense", "trotter") and set(obs) != {"variance"}:
        raise ConfigError("observables", f"backend {backend} only produces variance")

    times = _section(raw, "times")
    if "values" in times:
        vals = np.asarray(times["values"], dtype=float)
        if vals.ndim != 1 or vals.size == 0 or vals[0] < 0 or np.any(np.diff(vals) <= 0):
            raise ConfigError("times.values", "must be non-negative and strictly increasing")
        times["values"] = [float(v) for v in vals]
    else:
        if not _is_num(times["start"]) or times["start"] < 0:
            raise ConfigError("times.start", "must be a non-negative number")
        _positive("times.step", times["step"])
        if not _is_num(times["stop"]) or times["stop"] < times["start"]:
            raise ConfigError("times.stop", "must be >= times.start")
        times = {k: float(v) for k, v in times.items()}
    protocol = _section(raw, "protocol")
    protocol["layers"] = _positive("protocol.layers", protocol["layers"], integer=True)
    protocol["delta_t"] = _positive("protocol.delta_t", protocol["delta_t"])
    protocol["max_layers"] = _positive("protocol.max_layers", protocol["max_layers"], integer=True)
    trotter = _section(raw, "trotter")
    trotter["delta_t"] = _positive("trotter.delta_t", trotter["delta_t"])
    if trotter["order"] not in (1, 2):
        raise ConfigError("trotter.order", f"must be 1 or 2, got {trotter['order']!r}")
    psa = _section(raw, "psa")
    psa["n_events"] = _positive("psa.n_events", psa["n_events"], integer=True)
    psa["step"] = _positive("psa.step", psa["step"])
    mps = _section(raw, "mps")
    chis = mps["chi"]
    if isinstance(chis, int):
        chis = [chis]
    if not isinstance(chis, (list, tuple)) or not chis:
        raise ConfigError("mps.chi", "must be a non-empty list of positive integers")
    mps["chi"] = sorted({_positive("mps.chi", c, integer=True) for c in chis})
    output = raw.get("output", "results")
    if not isinstance(output, str) or not output:
        raise ConfigError("output", "must be a directory path")
    couplings = raw.get("couplings")
    if couplings is not None:
        try:
            c = np.asarray(couplings, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("couplings", "must be an n x n numeric matrix") from None
        if c.shape != (n, n) or not np.array_equal(c, c.T) or np.any(np.diag(c) != 0):
            raise ConfigError("couplings", "must be a symmetric n x n matrix with zero diagonal")
        couplings = tuple(tuple(float(x) for x in row) for row in c)
    check_resources(backend, n)
    return ExperimentConfig(
        backend=backend, n=int(n), mu=float(mu), sigma=sigma, seed=int(seed),
        realizations=realizations, permutations=permutations, initial=initial,
        observables=tuple(obs), times=times, protocol=protocol, trotter=trotter,
        psa=psa, mps=mps, output=output, couplings=couplings,
    )


def load_config(path):
    """Read a YAML config, or the ``config`` block of a run manifest."""
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if isinstance(doc, dict) and "config" in doc and "jobs" in doc:
        doc = doc["config"]
    return validate_config(doc)


# -- jobs -------------------------------------------------------------------------------


def _initial(cfg):
    return getattr(InitialState, cfg.initial)(cfg.n)


def _meta(cfg, k, s, **extra):
    m = {"k": k, "s": s, "backend": cfg.backend, "seed": cfg.seed, "n": cfg.n}
    m.update(extra)
    return m


def _dynamics_series(cfg, k, s, times, out):
    series = []
    base = _meta(cfg, k, s)
    if cfg.backend == "trotter":
        base["layers"] = ""
    if "variance" in cfg.observables:
        series.append(ObservableSeries(times, out["variance"], "variance", dict(base)))
    if "loschmidt" in cfg.observables:
        series.append(ObservableSeries(times, out["loschmidt"], "loschmidt", dict(base)))
    for kind, key in (("z_single", "z"), ("entropy", "entropies")):
        if kind in cfg.observables:
            for j in range(cfg.n):
                series.append(ObservableSeries(times, out[key][:, j], kind, dict(base, neutrino=j)))
    return series


def job_sample(cfg, k):
    """Realization ``k``; an explicit ``couplings`` matrix replaces sampling."""
    if cfg.couplings is not None:
        sample = hamiltonian_from_couplings(np.array(cfg.couplings), cfg.mu)
        sample.realization_id = k
        return sample
    return build_hamiltonian(cfg.n, cfg.mu, cfg.seed, cfg.sigma, realization_id=k)


def run_job(cfg, k, s):
    """Series produced by job ``(k, s)``; pure function of its arguments."""
    from nuflavor import psa as psa_mod
    from nuflavor import randomized

    sample = job_sample(cfg, k)
    initial = _initial(cfg)
    times = cfg.time_grid()
    entropies = "entropy" in cfg.observables
    if cfg.backend == "exact_dense":
        out = exact_dynamics(sample.couplings, initial, times, entropies, DenseOracle(sample.couplings))
        return _dynamics_series(cfg, k, s, times, out)
    if cfg.backend == "trotter":
        out = trotter_dynamics(
            sample.couplings, initial, times, cfg.trotter["delta_t"], cfg.trotter["order"], entropies
        )
        return _dynamics_series(cfg, k, s, times, out)
    if cfg.backend == "psa":
        rng = rng_for(cfg.seed, k, s)
        return [
            psa_mod.run_psa(
                sample.couplings, initial, times, cfg.psa["n_events"], rng,
                step=cfg.psa["step"], meta=_meta(cfg, k, s),
            )
        ]
    p = cfg.protocol
    if cfg.backend == "protocol_a":
        rng = rng_for(cfg.seed, k, s)
        phi_s = initial.random_permutation(rng)
        return [
            randomized.run_protocol_a(
                sample, initial, p["layers"], times, rng=rng, circuit_initial=phi_s,
                meta=_meta(cfg, k, s),
            )
        ]
    if cfg.backend == "protocol_b":
        rng = rng_for(cfg.seed, k, s)
        phi_s = initial.random_permutation(rng)
        return [
            randomized.run_protocol_b(
                sample, initial, p["delta_t"], p["max_layers"], rng=rng, circuit_initial=phi_s,
                meta=_meta(cfg, k, s),
            )
        ]
    # mps: the same permutation and schedules at every chi
    series = []
    for chi in cfg.mps["chi"]:
        rng = rng_for(cfg.seed, k, s)
        phi_s = initial.random_permutation(rng)
        series.append(
            randomized.run_protocol_b(
                sample, initial, p["delta_t"], p["max_layers"], backend="mps", rng=rng,
                circuit_initial=phi_s, chi_max=chi, meta=_meta(cfg, k, s, chi=chi),
            )
        )
    for sr in series:
        sr.meta["backend"] = "mps"
    return series


def _safe_job(cfg, k, s):
    try:
        return k, s, run_job(cfg, k, s), None
    except (NuFlavorError, MemoryError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return k, s, None, {"type": type(exc).__name__, "message": str(exc)}


def worker_count():
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            w = int(raw)
        except ValueError:
            raise ConfigError(WORKERS_ENV, f"must be a positive integer, got {raw!r}") from None
        if w < 1:
            raise ConfigError(WORKERS_ENV, f"must be a positive integer, got {raw!r}")
        return w
    return os.cpu_count() or 1


def execute_jobs(cfg, jobs, workers):
    """Run ``jobs`` and return ``{(k, s): (series, error)}``."""
    results = {}
    if workers <= 1 or len(jobs) <= 1:
        for k, s in jobs:
            k, s, series, err = _safe_job(cfg, k, s)
            results[(k, s)] = (series, err)
        return results
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_safe_job, cfg, k, s) for k, s in jobs]
        for fut in futures:
            k, s, series, err = fut.result()
            results[(k, s)] = (series, err)
    return results


@dataclass
class RunResult:
    manifest: dict
    output_dir: Path
    series: list
    failures: list

    @property
    def ok(self):
        return not self.failures


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _extrapolation(cfg, series):
    from nuflavor.mps import extrapolate_chi

    chis = cfg.mps["chi"]
    if len(chis) < 4 or not series:
        return None
    by_chi = {c: [sr.values for sr in series if sr.meta.get("chi") == c] for c in chis}
    means = np.array([np.mean(by_chi[c], axis=0) for c in chis])
    times = series[0].times
    fits = []
    for i, t in enumerate(times):
        rng = rng_for(cfg.seed, 1 << 20, i)
        try:
            fit = extrapolate_chi(chis, means[:, i], rng=rng).to_dict()
        except NuFlavorError as exc:
            fit = {"error": str(exc)}
        fits.append(dict(time=float(t), values=[float(v) for v in means[:, i]], **fit))
    return {"chi": list(chis), "fits": fits}


def run_experiment(config, output=None, workers=None, job_order=None):
    """Execute every ``(k, s)`` job and write CSVs plus ``manifest.json``.

    ``job_order`` permutes submission order (for determinism checks); outputs
    are always merged in ``(k, s)`` order.
    """
    cfg = validate_config(config)
    out_dir = Path(output or cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = worker_count() if workers is None else int(workers)
    jobs = cfg.jobs()
    submit = [jobs[i] for i in job_order] if job_order is not None else jobs
    results = execute_jobs(cfg, submit, workers)

    merged, failures, job_log = [], [], []
    for k, s in jobs:
        series, err = results[(k, s)]
        entry = {"k": k, "s": s, "hamiltonian_key": [cfg.seed, k], "stream_key": [cfg.seed, k, s]}
        if err is None:
            entry["status"] = "ok"
            merged.extend(series)
        else:
            entry["status"] = "failed"
            entry["error"] = err
            failures.append(entry)
        job_log.append(entry)

    outputs = {}
    for kind in cfg.observables:
        subset = [sr for sr in merged if sr.kind == kind]
        path = out_dir / f"{kind}.csv"
        write_csv(subset, path, extra=EXTRA_COLUMNS)
        outputs[path.name] = _sha256(path)
    if cfg.backend == "mps":
        ext = _extrapolation(cfg, merged)
        if ext is not None:
            path = out_dir / "extrapolation.json"
            path.write_text(json.dumps(ext, indent=2, sort_keys=True) + "\n")
            outputs[path.name] = _sha256(path)

    manifest = {
        "config": cfg.to_dict(),
        "code_version": __version__,
        "kernels": kernels.IMPLEMENTATION,
        "workers": workers,
        "jobs": job_log,
        "outputs": outputs,
        "failed_jobs": len(failures),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RunResult(manifest=manifest, output_dir=out_dir, series=merged, failures=failures)


def read_series_csv(path):
    """Group a result CSV back into ``ObservableSeries`` (one per job and neutrino/chi)."""
    import csv

    groups = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["kind"], row["k"], row["s"], row["backend"], row.get("n", ""),
                   row.get("neutrino", ""), row.get("chi", ""))
            groups.setdefault(key, []).append(row)
    out = []
    for key in sorted(groups, key=lambda kk: tuple((len(x), x) for x in kk)):
        rows = groups[key]
        kind, k, s, backend, n, neutrino, chi = key
        meta = {"k": k, "s": s, "backend": backend, "n": n, "neutrino": neutrino, "chi": chi}
        out.append(ObservableSeries(
            [float(r["time"]) for r in rows], [float(r["value"]) for r in rows], kind, meta,
        ))
    return out
