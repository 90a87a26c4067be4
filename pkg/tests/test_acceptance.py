"""Exit criteria. Each test prints one PASS/FAIL line through the ``report`` fixture."""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from nuflavor.analysis import characteristic_time, scaling_fit
from nuflavor.ensemble import build_hamiltonian, hamiltonian_from_couplings, rng_for
from nuflavor.experiment import load_config, read_series_csv, run_experiment
from nuflavor.psa import (
    PSAEnsemble,
    classical_energy,
    integrate_psa,
    run_psa,
    sample_psa_initial,
)
from nuflavor.randomized import (
    average_hamiltonian_variance,
    curvature_g,
    draw_matched_schedule,
    rho_rnd_distance,
    run_protocol_a,
    run_protocol_b,
)
from nuflavor.statevector import (
    DenseOracle,
    InitialState,
    exact_dynamics,
    flavor_variance,
    trotter_dynamics,
)

pytestmark = pytest.mark.acceptance

FIXTURES = Path(__file__).parent / "fixtures"


def exact_variance(couplings, initial, times):
    return exact_dynamics(couplings, initial, times, entropies=False)["variance"]


def tau_or_nan(series):
    tau = characteristic_time(series).tau_th
    return np.nan if tau is None else tau


def test_1_two_spin_oracle(report, tmp_path):
    start = time.perf_counter()
    cfg = {"backend": "exact_dense", "n": 2, "couplings": [[0.0, 1.0], [1.0, 0.0]],
           "times": {"start": 0.0, "stop": 5.0, "step": 0.01}, "output": str(tmp_path)}
    res = run_experiment(cfg, workers=1)
    (ser,) = read_series_csv(res.output_dir / "variance.csv")
    elapsed = time.perf_counter() - start
    t = np.array(ser.times)
    err = np.max(np.abs(np.array(ser.values) - np.cos(2 * t) ** 2))
    tau = characteristic_time(ser).tau_th
    off = abs(tau - np.arccos(np.sqrt(0.1)) / 2)
    report(1, "two-spin oracle", err < 1e-8 and off < 0.01 and elapsed < 1.0,
           f"max|V-cos^2(2t)|={err:.1e}, crossing off by {off:.1e}, {elapsed:.2f}s")


def test_2_trotter_convergence(report):
    start = time.perf_counter()
    times = np.arange(0.0, 20.0 + 1e-9, 0.5)
    worst_median, worst_single, slopes = 0.0, 0.0, []
    steps = np.array([0.5, 0.25, 0.125])
    for n in (4, 6, 8):
        init = InitialState.domain_wall(n)
        errs = {dt: [] for dt in steps}
        for k in range(10):
            c = build_hamiltonian(n, seed=202, realization_id=k).couplings
            ex = exact_variance(c, init, times)
            for dt in steps:
                tr = trotter_dynamics(c, init, times, dt, 2, entropies=False)["variance"]
                errs[dt].append(np.abs(tr - ex))
        med = np.median(errs[0.5], axis=0)
        worst_median = max(worst_median, float(med.max()))
        worst_single = max(worst_single, float(np.max(errs[0.5])))
        mean_max = [np.mean(np.max(errs[dt], axis=1)) for dt in steps]
        # error against number of steps per unit time
        slopes.append(np.polyfit(np.log(1 / steps), np.log(mean_max), 1)[0])
    elapsed = time.perf_counter() - start
    ok = worst_median < 1e-2 and all(abs(s + 2) <= 0.3 for s in slopes) and elapsed < 60
    report(2, "Trotter convergence", ok,
           f"max_t median|dV| at dt=0.5: {worst_median:.1e} (worst single run {worst_single:.1e}), "
           f"slopes {', '.join(f'{s:.2f}' for s in slopes)}, {elapsed:.1f}s")


def test_3_curvature_formula(report):
    start = time.perf_counter()
    h = 1e-3
    worst = 0.0
    for n in (4, 6, 8):
        init = InitialState.domain_wall(n)
        psi0 = init.statevector()
        for k in range(10):
            s = build_hamiltonian(n, seed=303, realization_id=k)
            oracle = DenseOracle(s.couplings)
            vp = exact_variance(s.couplings, init, [h])[0]
            # backward step: exp(iHh) psi0 = conj(exp(-iHh) conj(psi0)) for real H
            vm = flavor_variance(np.conj(oracle.evolve(psi0.conj(), h)))
            fd = (vp + vm - 2.0) / h**2
            g = curvature_g(s.couplings, init.m)
            worst = max(worst, abs(fd - g) / abs(g))
    two = curvature_g([[0.0, 1.0], [1.0, 0.0]], [1, -1])
    elapsed = time.perf_counter() - start
    report(3, "curvature formula", worst < 1e-4 and two == -8.0 and elapsed < 60,
           f"worst relative FD error {worst:.1e}, n=2 g={two}, {elapsed:.1f}s")


def test_4_rescaling_constancy(report):
    start = time.perf_counter()
    layers = range(2, 21)
    spreads = {}
    for n in (8, 16, 32):
        init = InitialState.domain_wall(n)
        means = []
        for L in layers:
            vals = []
            for d in range(100):
                sample = build_hamiltonian(n, seed=404, realization_id=d)
                rng = rng_for(404, d, L)
                phi = init.random_permutation(rng)
                _, rec = draw_matched_schedule(sample, init, phi, L, rng)
                vals.append(rec.alpha * np.sqrt(L / n))
            means.append(np.mean(vals))
        spreads[n] = max(means) / min(means) - 1.0
    elapsed = time.perf_counter() - start
    ok = all(v < 0.2 for v in spreads.values()) and elapsed < 600
    report(4, "rescaling constancy", ok,
           "max/min - 1 of mean alpha*sqrt(L/N) over L=2..20: "
           + ", ".join(f"N={n}: {v:.2f}" for n, v in spreads.items()) + f", {elapsed:.0f}s")


def test_5_protocol_a_average_limit(report):
    start = time.perf_counter()
    n, L = 8, 64
    init = InitialState.domain_wall(n)
    times = np.arange(0.0, 10.0 + 1e-9, 0.5)
    diffs = []
    for k in range(50):
        s = build_hamiltonian(n, seed=505, realization_id=k)
        phi = init.random_permutation(rng_for(505, k, 1))
        va = run_protocol_a(s, init, L, times, rng=rng_for(505, k, 0), circuit_initial=phi).values
        diffs.append(np.abs(va - average_hamiltonian_variance(s, init, times)))
    worst = float(np.median(diffs, axis=0).max())
    elapsed = time.perf_counter() - start
    report(5, "protocol A average-Hamiltonian limit", worst < 0.05 and elapsed < 600,
           f"max_t median|V_A - V_avg| = {worst:.3f} over 50 realizations, {elapsed:.0f}s")


def test_6_protocol_b_window(report):
    start = time.perf_counter()
    times = np.arange(16.0)
    upto = times <= 10
    worst = {}
    for n in (10, 16):
        init = InitialState.domain_wall(n)
        diffs = []
        for k in range(20):
            s = build_hamiltonian(n, seed=606, realization_id=k)
            if n <= 14:
                ref = exact_variance(s.couplings, init, times)
            else:
                ref = trotter_dynamics(s.couplings, init, times, 0.25, 2, entropies=False)["variance"]
            for j in range(5):
                vb = run_protocol_b(s, init, 1.0, 15, rng=rng_for(606, k, j)).values
                diffs.append(np.abs(vb - ref))
        worst[n] = float(np.median(diffs, axis=0)[upto].max())
    elapsed = time.perf_counter() - start
    report(6, "protocol B fidelity window", all(v < 0.1 for v in worst.values()) and elapsed < 1800,
           "max_{t<=10} median|V_B - V_ref| over 100 draws: "
           + ", ".join(f"n={n}: {v:.3f}" for n, v in worst.items())
           + f" (n=16 reference: Trotter dt=0.25), {elapsed:.0f}s")


def test_7_psa(report):
    start = time.perf_counter()
    times = np.linspace(0.0, 20.0, 21)
    cases = [(hamiltonian_from_couplings([[0.0, 1.0], [1.0, 0.0]]).couplings,
              np.array([[[1.0, -1.0, 1.0], [1.0, 1.0, -1.0]]]))]
    s8 = build_hamiltonian(8, seed=707)
    cases.append((s8.couplings,
                  sample_psa_initial(InitialState.domain_wall(8), 10, rng_for(707)).spins))
    drift = 0.0
    for c, spins in cases:
        snaps = integrate_psa(PSAEnsemble(spins=spins, couplings=c), times, step=1e-3)
        norms = np.linalg.norm(snaps, axis=-1)
        total = snaps.sum(axis=2)
        energy = np.array([classical_energy(x, c) for x in snaps])
        drift = max(drift, np.abs(norms - norms[0]).max(), np.abs(total - total[0]).max(),
                    np.abs(energy - energy[0]).max())
    grid = np.arange(0.0, 8.0 + 1e-9, 0.25)
    worst = 0.0
    init = InitialState.domain_wall(10)
    for k in range(3):
        s = build_hamiltonian(10, seed=717, realization_id=k)
        ex = exact_variance(s.couplings, init, grid)
        tau = characteristic_time((grid, ex)).tau_th
        upto = grid <= (grid[-1] if tau is None else tau)
        approx = run_psa(s.couplings, init, grid, 10000, rng_for(717, k)).values
        worst = max(worst, float(np.abs(approx - ex)[upto].max()))
    elapsed = time.perf_counter() - start
    report(7, "PSA conservation and accuracy", drift < 1e-8 and worst < 0.1 and elapsed < 600,
           f"max conservation drift {drift:.1e}, max|V_psa - V_exact| to crossing {worst:.3f}, "
           f"{elapsed:.0f}s")


def test_8_mps_saturation(report):
    start = time.perf_counter()
    n = 12
    init = InitialState.domain_wall(n)
    chis = [2, 4, 8, 16, 32]
    full_err = 0.0
    err = {c: np.zeros(16) for c in chis}
    for k in range(5):
        s = build_hamiltonian(n, seed=808, realization_id=k)
        sv = run_protocol_b(s, init, 1.0, 15, rng=rng_for(808, k, 0)).values
        ref = run_protocol_b(s, init, 1.0, 15, rng=rng_for(808, k, 0), backend="mps",
                             chi_max=2 ** (n // 2)).values
        full_err = max(full_err, float(np.abs(ref - sv).max()))
        for c in chis:
            v = run_protocol_b(s, init, 1.0, 15, rng=rng_for(808, k, 0), backend="mps", chi_max=c).values
            err[c] += np.abs(v - ref) / 5
    at10 = [err[c][10] for c in chis]
    monotone = all(a >= b for a, b in zip(at10, at10[1:]))
    grows = err[8][10] > err[8][2]
    elapsed = time.perf_counter() - start
    report(8, "MPS saturation", full_err < 1e-6 and grows and monotone and elapsed < 600,
           f"full-chi error {full_err:.1e}; chi=8 error layer 2 {err[8][2]:.1e} -> layer 10 "
           f"{err[8][10]:.1e}; layer-10 error over chi {[f'{e:.1e}' for e in at10]}, {elapsed:.0f}s")


def _tau_stats(taus):
    taus = np.asarray(taus, float)
    ok = taus[np.isfinite(taus)]
    return float(np.median(ok)), max(0.5 * float(np.percentile(ok, 90) - np.percentile(ok, 10)), 1e-3)


@pytest.mark.slow
def test_9_thermalization_scaling(report):
    start = time.perf_counter()
    seed = 909
    med, spread = {}, {}
    for n in (8, 12, 16, 20):
        init = InitialState.domain_wall(n)
        taus = [
            tau_or_nan(run_protocol_b(build_hamiltonian(n, seed=seed, realization_id=k), init, 1.0, 15,
                                      rng=rng_for(seed, k, 0)))
            for k in range(40)
        ]
        med[n], spread[n] = _tau_stats(taus)
    grid = np.arange(0.0, 20.0 + 1e-9, 0.5)
    for n in (32, 48, 64):
        init = InitialState.domain_wall(n)
        taus = [
            tau_or_nan(run_psa(build_hamiltonian(n, seed=seed, realization_id=k).couplings, init, grid,
                               2000, rng_for(seed, k, 0)))
            for k in range(10)
        ]
        med[n], spread[n] = _tau_stats(taus)
    sizes = sorted(med)
    full = scaling_fit(sizes, [med[n] for n in sizes], [spread[n] for n in sizes])
    small = [n for n in sizes if n <= 22]
    low = scaling_fit(small, [med[n] for n in small], [spread[n] for n in small])
    elapsed = time.perf_counter() - start
    ok = full["preferred"] == "sqrt" and low["close"] and elapsed < 7200
    report(9, "thermalization scaling", ok,
           f"medians {', '.join(f'{n}:{med[n]:.2f}' for n in sizes)}; all sizes prefer "
           f"{full['preferred']} (rss sqrt {full['sqrt'].rss:.2f}, log {full['log'].rss:.2f}); "
           f"N<=22 |drss|={low['delta_rss']:.2f} close={low['close']}, {elapsed:.0f}s")


def test_10_rho_rnd_envelope(report):
    import sys

    sys.path.insert(0, str(FIXTURES))
    from make_rho_rnd_envelope import PERMUTATIONS, SEED, TEST_REALIZATIONS, distances

    start = time.perf_counter()
    env = json.loads((FIXTURES / "rho_rnd_envelope.json").read_text())
    test_seed = 1010
    assert test_seed != SEED
    d = distances(test_seed, TEST_REALIZATIONS, PERMUTATIONS)
    mean = d.mean(axis=0)
    under = bool(np.all(mean <= np.array(env["envelope"])))
    zero = bool(np.all(d[:, 0] == 0.0))
    s = build_hamiltonian(6, seed=test_seed)
    zero = zero and rho_rnd_distance(s, InitialState.domain_wall(6), 0.0, rng_for(0)) == 0.0
    elapsed = time.perf_counter() - start
    margin = float(np.min(np.array(env["envelope"])[1:] - mean[1:]))
    report(10, "rho_rnd diagnostic", under and zero and elapsed < 600,
           f"mean distance t=0..8 {[round(float(x), 3) for x in mean]}, min headroom {margin:.3f}, "
           f"zero at t=0: {zero}, {elapsed:.0f}s")


def test_11_determinism(report, tmp_path):
    configs = {
        "protocol_b": {"backend": "protocol_b", "n": 6, "seed": 11, "realizations": 3, "permutations": 2,
                       "protocol": {"max_layers": 6}},
        "psa": {"backend": "psa", "n": 6, "seed": 11, "realizations": 3, "permutations": 2,
                "psa": {"n_events": 200}, "times": {"stop": 2.0, "step": 0.5}},
        "mps": {"backend": "mps", "n": 6, "seed": 11, "realizations": 2, "permutations": 2,
                "protocol": {"max_layers": 4}, "mps": {"chi": [1, 2, 4, 8]}},
        "trotter": {"backend": "trotter", "n": 6, "seed": 11, "realizations": 2,
                    "observables": ["variance", "z_single", "entropy", "loschmidt"],
                    "times": {"stop": 2.0, "step": 0.5}},
    }
    same = {}
    for name, cfg in configs.items():
        first = run_experiment(dict(cfg, output=str(tmp_path / name / "a")), workers=2)
        replay = run_experiment(load_config(first.output_dir / "manifest.json"),
                                output=tmp_path / name / "b", workers=2)
        n_jobs = len(first.manifest["jobs"])
        order = list(np.random.default_rng(11).permutation(n_jobs))
        shuffled = run_experiment(dict(cfg, output=str(tmp_path / name / "c")), workers=2,
                                  job_order=order)
        files = sorted(first.manifest["outputs"])
        same[name] = all(
            (first.output_dir / f).read_bytes()
            == (replay.output_dir / f).read_bytes()
            == (shuffled.output_dir / f).read_bytes()
            for f in files
        )
    report(11, "determinism", all(same.values()),
           "byte-identical replay and shuffled order: "
           + ", ".join(f"{k}={v}" for k, v in same.items()))
