"""Exit criteria 1-11.  Each test prints one PASS/FAIL line.

The model-quality criteria (6-9) share a desk-scale model: 512 training
frames at 64x64, 30 epochs.  It is trained once and kept in pytest's cache
directory (or in $NEUCACHE_CACHE_DIR when set), so later runs reuse it.
"""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from neucache.bench import (evaluate_generator, evaluate_offline, evaluate_protocol, flop_ratio, linear_fit,
                            model_latencies, warp_distance_sweep)
from neucache.scene import Dataset, build_split
from neucache.scheduler import (SchedulerConfig, SleepWorkload, cache_assignments, measure_sync_overhead,
                                run_parallel, run_sequential, simulate_schedule)
from neucache.training import Models

pytestmark = pytest.mark.acceptance

TG, TW, TSYNC = 47.02, 14.62, 0.25
ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        line = f"CRITERION {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        with capsys.disabled():   # shown even without -s
            print("\n" + line, flush=True)
        assert ok, line
    return emit


# ---------------------------------------------------------------- 1-5: timing and cost

def test_c01_sequential_rates_match_table(report):
    t0 = time.perf_counter()
    got = {}
    for nw in (1, 2):
        cfg = SchedulerConfig(n_workers=1, num_warps=nw, mode="simulated", tg_ms=TG, tw_ms=TW, tsync_ms=TSYNC)
        got[nw] = simulate_schedule(cfg, 300)[1].fps
    dt = time.perf_counter() - t0
    ok = abs(got[1] / 16.3 - 1) <= 0.05 and abs(got[2] / 26.3 - 1) <= 0.05 and dt < 1.0
    report(1, ok, f"1x {got[1]:.2f} FPS (16.3), 2x {got[2]:.2f} FPS (26.3), {dt:.3f}s")


def test_c02_sync_overhead(report):
    t0 = time.perf_counter()
    cfg = SchedulerConfig(n_workers=1, num_warps=2, mode="simulated", tg_ms=TG, tw_ms=TW, tsync_ms=TSYNC)
    ov = measure_sync_overhead(None, 200, cfg)
    dt = time.perf_counter() - t0
    report(2, abs(ov - 0.25) <= 0.02 and dt < 10.0, f"sync overhead {ov:.4f} ms/frame, {dt:.2f}s")


def test_c03_parallel_speedup_with_sleep_workloads(report):
    t0 = time.perf_counter()
    n = 160
    par_cfg = SchedulerConfig(n_workers=2, num_warps=2, tg_ms=TG, tw_ms=TW)
    seq_cfg = SchedulerConfig(n_workers=1, num_warps=2, mode="sequential", tg_ms=TG, tw_ms=TW)
    _, par = run_parallel(range(n), SleepWorkload(TG, TW), par_cfg)
    _, seq = run_sequential(range(n), SleepWorkload(TG, TW), seq_cfg)
    sim_par = simulate_schedule(par_cfg, n, harness=False)[1].fps
    sim_seq = simulate_schedule(seq_cfg, n)[1].fps
    dt = time.perf_counter() - t0
    speedup = par.fps / seq.fps
    match = max(abs(par.fps / sim_par - 1), abs(seq.fps / sim_seq - 1))
    ok = speedup >= 1.8 and match <= 0.10 and dt < 60 and par.order_violations == 0
    report(3, ok, f"parallel {par.fps:.1f} vs sequential {seq.fps:.1f} FPS = {speedup:.2f}x; "
                  f"max deviation from simulation {100 * match:.1f}%; {dt:.1f}s")


def test_c04_flop_ratio(report):
    m = Models.build()
    ratio = flop_ratio(m.generator, m.warp, (64, 64))
    report(4, ratio >= 3.0, f"generator/warp MACs = {ratio:.2f}")


def test_c05_latency_ratio_at_128(report):
    t0 = time.perf_counter()
    frames = build_split(seed=7, n_frames=2, fps=30, h=128, w=128)
    lat = model_latencies(Models.build(), frames[0].params, frames[1].params, reps=5)
    dt = time.perf_counter() - t0
    ok = lat["warp_ms"] <= lat["generator_ms"] / 2.5 and dt < 60
    report(5, ok, f"generator {lat['generator_ms']:.1f} ms, warp {lat['warp_ms']:.1f} ms, "
                  f"ratio {lat['ratio']:.2f}; {dt:.1f}s")


# ---------------------------------------------------------------- 6-9: trained-model properties

def test_c06_quality_gap(trained, report):
    g = evaluate_generator(trained.models, trained.test, trained.test_bank)
    w = evaluate_offline(trained.models, trained.test, 1, trained.test_bank)
    gap = abs(w.psnr - g.psnr) / g.psnr
    report(6, gap <= 0.03, f"generator {g.psnr:.2f} dB, 1x warp {w.psnr:.2f} dB, gap {100 * gap:.2f}%")


def test_c07_warp_distance_degradation(trained, report):
    t0 = time.perf_counter()
    sweep = warp_distance_sweep(trained.models, trained.test, d_max=5, bank=trained.test_bank, d_min=1)
    ds = sorted(sweep)
    ps = [sweep[d].psnr for d in ds]
    monotone = all(b <= a + 0.15 for a, b in zip(ps, ps[1:]))
    slope, _, r2 = linear_fit(ds, ps)
    dt = time.perf_counter() - t0
    ok = monotone and r2 >= 0.8 and dt <= 900
    report(7, ok, "PSNR d=1..5 " + " ".join(f"{p:.2f}" for p in ps) + f"; slope {slope:.3f} dB/frame, R2 {r2:.3f}")


def test_c08_high_fps_property(trained, report):
    t0 = time.perf_counter()
    n30 = len(trained.test)
    frames = build_split(seed=7, n_frames=2 * n30, fps=60, h=64, w=64, start_frame=2 * trained.test.start_frame)
    data60 = Dataset(frames, 60, 7, 2 * trained.test.start_frame)
    hi = evaluate_protocol("online-60", trained.models, data60, num_warps=2)
    lo = evaluate_protocol("online-30", trained.models, data60, num_warps=1)
    dt = time.perf_counter() - t0
    ok = hi.metrics.psnr >= lo.metrics.psnr - 0.1 and dt <= 900
    report(8, ok, f"online-60 2x {hi.metrics.psnr:.2f} dB ({hi.dropped} dropped) vs "
                  f"online-30 1x {lo.metrics.psnr:.2f} dB ({lo.dropped} dropped); {dt:.0f}s")


def test_c09_ablation_directions(ablation, report):
    t0 = time.perf_counter()
    res = dict(ablation.rows)
    res["C3+C4+C5"] = res["full"]
    dt = time.perf_counter() - t0 + ablation.seconds
    full = res["full"].metrics.psnr
    worst = max((r.metrics.psnr - full, n) for n, r in res.items() if n not in ("full", "C3+C4+C5"))
    ex_lat = res["+exwarp"].latency_ms - res["+sh_skips"].latency_ms
    c34 = res["C3+C4"].metrics.psnr - res["C3"].metrics.psnr
    ok = worst[0] <= 0.05 and ex_lat > 0 and c34 >= 0 and dt <= 7200
    table = ", ".join(f"{n} {r.metrics.psnr:.2f}" for n, r in res.items())
    report(9, ok, f"{table}; best reduced row vs full {worst[0]:+.3f} dB ({worst[1]}); "
                  f"ExWarp +{ex_lat:.2f} ms; C3+C4 - C3 {c34:+.3f} dB; {dt:.0f}s")


# ---------------------------------------------------------------- 10-11: suites

NUMERICS_SUITE = [
    "tests/test_numerics.py",
    "tests/test_renderer.py::test_texture_sampling_grads",
    "tests/test_renderer.py::test_sh_pass_through_channels",
    "tests/test_renderer.py::test_sh_constant_channel_scale",
    "tests/test_renderer.py::test_sh_axis_zeros",
    "tests/test_warp.py::test_pose_embed_weight_grads",
    "tests/test_warp.py::test_warp_head_grads_finite_differences",
    "tests/test_training.py::test_loss_grads_finite_differences",
    "tests/test_bench.py::test_metrics_match_loop_oracles",
    "tests/test_bench.py::test_ssim_matches_skimage",
]


def test_c10_numerics_suite(report):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *NUMERICS_SUITE],
                          cwd=ROOT, capture_output=True, text=True)
    dt = time.perf_counter() - t0
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    report(10, proc.returncode == 0 and dt < 120, f"{tail}; {dt:.1f}s")


def _scenario(rng: np.random.Generator) -> dict:
    return {"n_workers": int(rng.integers(1, 5)), "num_warps": int(rng.integers(1, 6)),
            "tg": float(rng.uniform(1, 120)), "tw": float(rng.uniform(0.5, 40)), "tsync": float(rng.uniform(0, 2)),
            "n": int(rng.integers(1, 150)), "fps": None if rng.random() < 0.5 else float(rng.uniform(5, 200)),
            "bound": None if rng.random() < 0.5 else int(rng.integers(1, 9))}


def _scenario_ok(s: dict) -> bool:
    nw, nwk = s["num_warps"], s["n_workers"]
    cfg = SchedulerConfig(n_workers=nwk, num_warps=nw, mode="simulated", tg_ms=s["tg"], tw_ms=s["tw"],
                          tsync_ms=s["tsync"], queue_bound=s["bound"])
    trace, rep = simulate_schedule(cfg, s["n"], input_fps=s["fps"])
    frames = [r.frame for r in rep.records]
    in_order = frames == list(range(s["n"])) and rep.order_violations == 0
    caches = cache_assignments(trace)
    if nwk > 1:
        roles = [f for f, _ in caches] == list(range(0, s["n"], nw)) and \
            [w for _, w in caches] == [k % nwk for k in range(len(caches))]
    else:
        roles = all((f + 1) % nw == 0 for f, _ in caches)
    idx = [r.cache_frame for r in rep.records]
    mono = all(b >= a for a, b in zip(idx, idx[1:]))
    gap = all(r.cache_frame < r.frame and (r.cache_frame < 0 or r.frame - r.cache_frame <= 2 * nw)
              for r in rep.records)
    return in_order and roles and mono and gap


def test_c11_scheduler_scenarios(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    results = [_scenario_ok(_scenario(rng)) for _ in range(20)]
    dt = time.perf_counter() - t0
    report(11, all(results) and dt < 30, f"{sum(results)}/20 scenarios hold; {dt:.2f}s")
