"""The eight acceptance criteria, one test each; every test prints a PASS/FAIL line."""
import os
import subprocess
import sys
import time
from itertools import product
from pathlib import Path

import numpy as np
import pytest

from netmpg import environments as E
from netmpg import evaluation as ev
from netmpg import learning as L
from netmpg.core import rollout
from netmpg.harness import load_config, sweep_kappa
from netmpg.harness.runner import read_csv
from netmpg.network import complete_graph, diameter, line_graph, ring_graph

ROOT = Path(__file__).resolve().parents[1]
N_MODELS = N_POLICIES = 20
KAPPAS = (0, 1, 2)


def report(capsys, number, title, ok, detail, started):
    with capsys.disabled():
        print(f"\nACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {title} | {detail} "
              f"| {time.perf_counter() - started:.1f}s")
    assert ok, detail


def line3_instances():
    """20 random 3-agent line models x 20 random policies (radius cycles through 0..2)."""
    for ms in range(N_MODELS):
        m = E.random_networked_mpg(3, line_graph(3), 2, 2, seed=1000 + ms)
        for ps in range(N_POLICIES):
            pol = L.random_policy(m, ps % 3, np.random.SeedSequence(ms, spawn_key=(ps,)), scale=2.0)
            yield m, pol, ev.exact_evaluate(m, pol)


@pytest.fixture(scope="module")
def instances():
    return list(line3_instances())


def coord_game(seed):
    return E.random_networked_mpg(2, complete_graph(2), 2, 2, seed=seed, identical_interest=True)


# --------------------------------------------------------------------------


def test_1_decay_certificate(instances, capsys):
    t0 = time.perf_counter()
    worst, bad = 0.0, []
    for m, pol, t in instances:
        assert m.r_max == 1.0 and m.gamma == 0.9
        for k, i in product(KAPPAS, range(3)):
            c = ev.certify_decay(m, pol, i, k, t)
            assert c.bound == pytest.approx(10 * 0.9 ** (k + 1))
            worst = max(worst, c.max_gap / c.bound)
            if not c.passed:
                bad.append(c.record())
    report(capsys, 1, "decay certificate", not bad,
           f"{len(instances) * 9} checks, worst gap/bound={worst:.3f}, violations={len(bad)}", t0)


def test_2_truncated_q_certificate(instances, capsys):
    t0 = time.perf_counter()
    worst, bad, n = {"visitation": 0.0, "uniform": 0.0}, [], 0
    for m, pol, t in instances:
        for k, i, scheme in product(KAPPAS, range(3), ("visitation", "uniform")):
            c = ev.truncation_error(m, pol, i, k, scheme, t)
            n += 1
            worst[scheme] = max(worst[scheme], c.max_gap / c.bound)
            if not c.passed:
                bad.append(c.record())
    report(capsys, 2, "truncated-Q certificate", not bad,
           f"{n} checks, worst gap/bound visitation={worst['visitation']:.3f} "
           f"uniform={worst['uniform']:.3f}, violations={len(bad)}", t0)


def test_3_gradient_step_certificate(instances, capsys):
    t0 = time.perf_counter()
    worst, bad, n = 0.0, [], 0
    for m, pol, t in instances:
        for k, i, scheme in product(KAPPAS, range(3), ("visitation", "uniform")):
            c = ev.gradient_step_gap(m, pol, i, k, scheme, t)
            loose = ev.gradient_step_gap_loose(c, m.r_max, m.gamma)
            assert c.bound == pytest.approx(200 * 0.9 ** (k + 1)) and loose.bound == pytest.approx(200)
            n += 1
            worst = max(worst, c.max_gap / c.bound)
            bad += [x.record() for x in (c, loose) if not x.passed]
    report(capsys, 3, "gradient-step certificate", not bad,
           f"{n} checks (proof form + loose 200), worst gap/bound={worst:.3f}, violations={len(bad)}", t0)


def test_4_potential_monotone(capsys):
    t0 = time.perf_counter()
    drops = []
    for seed in range(5):
        m = coord_game(seed)
        _, rec = L.train(m, 1, eta=0.1, iterations=200, exact=True, track_nash=False,
                         stop_on_convergence=False)
        assert len(rec.potential) == 200
        drops.append(max(0.0, -float(np.diff(rec.potential).min())))
    ok = max(drops) <= 1e-10
    report(capsys, 4, "potential monotonicity", ok,
           f"5 seeds x 200 iterations, largest per-step decrease={max(drops):.3g} (tol 1e-10)", t0)


def test_5_epsilon_equilibrium(capsys):
    t0 = time.perf_counter()
    full, local = [], []
    for seed in range(5):
        m = coord_game(seed)
        d = diameter(m.graph)
        pol, rec = L.train(m, d, eta=0.1, iterations=5000, exact=True, track_nash=False)
        full.append(ev.nash_gap(m, pol))
        pol0, _ = L.train(m, 0, eta=0.1, iterations=5000, exact=True, track_nash=False)
        local.append(ev.nash_gap(m, pol0))
    eps0 = L.epsilon_for_kappa(1.0, 0.9, 0)
    ok = max(full) <= 1e-3 and max(local) <= eps0 + 1e-3
    report(capsys, 5, "epsilon-equilibrium", ok,
           f"kappa=diameter max gap={max(full):.3g} (<=1e-3); kappa=0 max gap={max(local):.3g} "
           f"(<= {eps0 + 1e-3:.4f})", t0)


def _monotone(values):
    return all(b <= a for a, b in zip(values, values[1:]))


def test_6_kappa_trend(tmp_path, capsys):
    t0 = time.perf_counter()
    lines, ok = [], True
    for name in ("sweep_job_balancing.yaml", "sweep_sensor_coverage.yaml"):
        cfg = load_config(ROOT / "configs" / name).with_overrides(output_dir=str(tmp_path / name))
        assert cfg.kappas == (0, 1, 2, 3) and cfg.num_seeds == 5
        art = sweep_kappa(cfg)
        table = read_csv(art.epsilon_csv)
        err = [float(r["relative_error_pct"]) for r in table]
        good = [int(r["kappa"]) for r in table] == [0, 1, 2, 3] and err[-1] == 0.0 and _monotone(err)
        ok &= good
        lines.append(f"{cfg.environment['name']}: median err%={['%.2f' % e for e in err]} "
                     f"{'monotone' if good else 'NOT monotone'}")
        with capsys.disabled():
            for r in read_csv(art.extra[0]):
                print(f"  {cfg.environment['name']} seed={r['seed']} kappa={r['kappa']} "
                      f"J={float(r['eval_return']):.4f} err%={float(r['relative_error_pct']):.2f}")
    report(capsys, 6, "relative error non-increasing in kappa", ok, "; ".join(lines), t0)


def test_7_environment_fidelity(capsys):
    t0 = time.perf_counter()
    problems = []
    m = E.sensor_coverage_model(E.SensorCoverageSpec(n=4, grid_side=5))
    for cell, a in product(range(25), range(4)):
        row = m.transition_row(0, (cell, 0, 0, 0), (a, 0, 0, 0))
        if abs(row.sum() - 1) > 1e-12:
            problems.append(f"sensor row ({cell},{a}) sums to {row.sum()!r}")
        r, c = divmod(cell, 5)
        if 0 < r < 4 and 0 < c < 4:
            nz = row[row > 0]
            target = E.grid_move(cell, a, 5)
            adjacent = {E.grid_move(cell, mv, 5) for mv in range(4)}
            if sorted(nz) != [0.05, 0.05, 0.05, 0.85] or row[target] != 0.85 or \
                    set(np.flatnonzero(row)) != adjacent:
                problems.append(f"interior row ({cell},{a}) = {row}")
    spec = E.JobBalancingSpec(n=4, total_jobs=8, graph=ring_graph(4), max_jobs_per_node=8)
    jb = E.job_balancing_model(spec)
    states, actions, _ = rollout(jb, L.random_policy(jb, 1, 0), 1, 10_000, 0)
    totals = states[0].sum(axis=1)
    if not (totals == 8).all():
        problems.append(f"job total left 8: {sorted(set(totals.tolist()))}")
    clamps = E.count_clamping(jb.graph, states[0], actions[0], 8)
    if clamps:
        problems.append(f"clamping triggered {clamps} times")
    sweep = E.job_balancing_model(E.JobBalancingSpec(n=4, total_jobs=8, max_jobs_per_node=4))
    for s in product(range(5), repeat=4):
        for i in range(4):
            nb = [s[j] for j in sweep.graph.closed_neighbors(i)]
            mean = sum(nb) / len(nb)
            expect = 1.0 if s[i] == mean else 1.0 / abs(s[i] - mean)
            if sweep.reward(i, s, (0,) * 4) != expect:
                problems.append(f"reward mismatch at agent {i} state {s}")
    report(capsys, 7, "environment fidelity", not problems,
           "100 sensor rows, 10^4-step job rollout, 625x4 reward sweep; "
           + (problems[0] if problems else "no discrepancies"), t0)


DET_CONFIG = """
environment: {{name: job_balancing, n: 6, total_jobs: 12}}
kappa: {kappa}
iterations: 5
episodes: 200
horizon: 20
seed: 11
num_seeds: 2
eval_episodes: 500
threads: {threads}
workers: {workers}
output_dir: {out}
"""


def _cli(args, threads_env):
    env = dict(os.environ, NUMBA_NUM_THREADS=str(threads_env))
    return subprocess.run([sys.executable, "-m", "netmpg"] + args, env=env, capture_output=True,
                          text=True, cwd=ROOT)


def test_8_determinism(tmp_path, capsys):
    t0 = time.perf_counter()
    outputs = {}
    for tag, threads, workers, kappa in (("a", 1, 1, 1), ("b", 4, 1, 1), ("c", 1, 1, 1),
                                         ("sa", 1, 1, "[0, 2]"), ("sb", 4, 2, "[0, 2]")):
        cfg = tmp_path / f"{tag}.yaml"
        out = tmp_path / tag
        cfg.write_text(DET_CONFIG.format(kappa=kappa, threads=threads, workers=workers, out=out))
        cmd = "sweep" if tag.startswith("s") else "run"
        res = _cli([cmd, str(cfg)], 4)
        assert res.returncode == 0, res.stderr
        outputs[tag] = {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*.csv"))}
    same_run = outputs["a"] == outputs["b"] == outputs["c"]
    same_sweep = outputs["sa"] == outputs["sb"]
    ok = same_run and same_sweep and len(outputs["sa"]) == 2 + 4
    report(capsys, 8, "determinism", ok,
           f"run x3 (1 and 4 numba threads) identical={same_run}; sweep (1 worker/1 thread vs "
           f"2 workers/4 threads) identical={same_sweep}", t0)
