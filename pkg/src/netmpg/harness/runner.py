"""Seeded runs, κ-sweeps and the certification driver."""
import csv
import multiprocessing
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import evaluation as ev
from .. import learning as L
from .._accel import set_threads
from ..environments import random_networked_mpg
from ..network import diameter
from .config import ConfigError, build_model, write_snapshot

CONVERGENCE_COLUMNS = ("iteration", "mean_return_per_agent", "max_theta_delta", "nash_gap",
                       "potential_estimate")
SWEEP_COLUMNS = ("kappa", "relative_error_pct", "theoretical_bound")
SEED_COLUMNS = ("seed", "kappa", "eval_return", "relative_error_pct", "status", "iterations")
EVAL_TAIL_TOL = 1e-4
NASH_SLACK = 1e-3
POTENTIAL_TOL = 1e-10
REQUIRED_LEMMAS = ("decay", "truncated_q", "gradient_step", "gradient_step_loose",
                   "potential_monotone", "nash_gap")


@dataclass
class RunArtifacts:
    output_dir: Path
    convergence_csv: Path = None
    epsilon_csv: Path = None
    report: Path = None
    config_snapshot: Path = None
    extra: list = field(default_factory=list)


def _num(x):
    return "" if x is None else repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_convergence(path, record):
    rows = [(it, _num(ret), _num(dth), _num(gap), _num(pot))
            for it, ret, dth, gap, pot in record.rows()]
    _write_csv(path, CONVERGENCE_COLUMNS, rows)


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _prepare(cfg):
    set_threads(cfg.threads)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    snap = out / "config.yaml"
    write_snapshot(cfg, snap)
    return out, snap


def _train(model, cfg, kappa, seed, track_nash=True):
    return L.train(model, kappa, eta=cfg.eta, iterations=cfg.iterations, episodes=cfg.episodes,
                   horizon=cfg.horizon, seed=seed, exact=cfg.exact_advantages,
                   oracle_cap=cfg.oracle_cap, eta_decay=cfg.eta_decay, track_nash=track_nash,
                   nash_every=cfg.nash_every, stop_on_convergence=cfg.stop_on_convergence)


# --------------------------------------------------------------------------
# single run


def run_experiment(cfg):
    """Train once at a single κ; writes convergence.csv and the config snapshot."""
    if cfg.is_sweep:
        raise ConfigError("run needs a single kappa; use sweep for a list")
    out, snap = _prepare(cfg)
    model = build_model(cfg)
    conv = out / "convergence.csv"
    try:
        _, rec = _train(model, cfg, cfg.kappa, cfg.seed)
    except L.TrainingDiverged as exc:
        write_convergence(conv, exc.args[1])
        raise
    write_convergence(conv, rec)
    return RunArtifacts(out, convergence_csv=conv, config_snapshot=snap)


# --------------------------------------------------------------------------
# κ sweep


def eval_seed(seed):
    """Evaluation stream shared by every κ of one training seed."""
    return np.random.SeedSequence(int(seed), spawn_key=(2 ** 32 - 1,))


def evaluate_return(model, policy, seed, episodes, oracle_cap=ev.DEFAULT_ORACLE_CAP):
    """J: mean over agents of the discounted return from μ (exact when the oracle fits)."""
    if ev.is_feasible(model, oracle_cap):
        return float(np.mean(ev.exact_evaluate(model, policy, oracle_cap).mean_value()))
    tail = ev.tail_steps(model, EVAL_TAIL_TOL)
    _, _, G, _ = ev.sample_returns(model, policy, episodes, 1, eval_seed(seed), tail)
    return float(G[:, 0, :].mean())


_MODELS = {}


def _sweep_task(args):
    cfg, kappa, seed = args
    set_threads(cfg.threads)
    key = repr(cfg.to_dict())
    if key not in _MODELS:
        _MODELS.clear()
        _MODELS[key] = build_model(cfg)
    model = _MODELS[key]
    pol, rec = _train(model, cfg, kappa, seed, track_nash=False)
    return rec, evaluate_return(model, pol, seed, cfg.eval_episodes, cfg.oracle_cap)


def sweep_kappa(cfg):
    """One training per (seed, κ); relative error of J(κ) against the largest κ."""
    if len(cfg.kappas) < 2:
        raise ConfigError("a sweep needs at least two kappa values")
    out, snap = _prepare(cfg)
    model = build_model(cfg)
    d = diameter(model.graph)
    kappas = sorted({min(k, d) for k in cfg.kappas})
    ref = kappas[-1]
    seeds = [cfg.seed + s for s in range(cfg.num_seeds)]
    tasks = [(cfg, k, s) for s in seeds for k in kappas]
    _MODELS.clear()
    _MODELS[repr(cfg.to_dict())] = model
    if cfg.workers > 1:
        # spawn, not fork: forking after the OpenMP runtime has started is unsafe
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(cfg.workers, mp_context=ctx) as pool:
            results = list(pool.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]
    runs = out / "runs"
    runs.mkdir(exist_ok=True)
    J = {}
    extra = []
    for (_, k, s), (rec, j) in zip(tasks, results):
        J[s, k] = (j, rec)
        path = runs / f"convergence_kappa{k}_seed{s}.csv"
        write_convergence(path, rec)
        extra.append(path)
    detail, errors = [], {k: [] for k in kappas}
    for s in seeds:
        jref = J[s, ref][0]
        for k in kappas:
            j, rec = J[s, k]
            err = 0.0 if k == ref else 100.0 * abs(j - jref) / abs(jref)
            errors[k].append(err)
            detail.append((s, k, _num(j), _num(err), rec.status, len(rec.iteration)))
    rows = [(k, _num(statistics.median(errors[k])),
             _num(L.epsilon_for_kappa(model.r_max, model.gamma, k))) for k in kappas]
    eps_csv = out / "epsilon_vs_kappa.csv"
    _write_csv(eps_csv, SWEEP_COLUMNS, rows)
    seeds_csv = out / "epsilon_vs_kappa_seeds.csv"
    _write_csv(seeds_csv, SEED_COLUMNS, detail)
    return RunArtifacts(out, epsilon_csv=eps_csv, config_snapshot=snap, extra=[seeds_csv] + extra)


# --------------------------------------------------------------------------
# certification


@dataclass
class VerifyReport:
    path: Path
    certificates: list
    passed: bool
    missing: tuple = ()

    @property
    def failures(self):
        return [c for c in self.certificates if not c.passed]


def _identical_companion(model, seed):
    """Identical-interest game on the same graph and spaces, for the potential check."""
    if model.identical_interest:
        return model
    return random_networked_mpg(model.n, model.graph, list(model.state_sizes),
                                list(model.action_sizes), seed=seed, identical_interest=True,
                                gamma=model.gamma, cap=float("inf"))


def certify(model, cfg):
    """All lemma certificates for ``model``; the model must fit the oracle."""
    ev.check_feasible(model, cfg.oracle_cap)
    d = diameter(model.graph)
    certs = []
    for p in range(cfg.verify_policies):
        for k in range(d + 1):
            pol = L.random_policy(model, k, np.random.SeedSequence(cfg.seed, spawn_key=(p, k)))
            tables = ev.exact_evaluate(model, pol, cfg.oracle_cap)
            for i in range(model.n):
                certs.append(ev.certify_decay(model, pol, i, k, tables))
                for scheme in ("visitation", "uniform"):
                    certs.append(ev.truncation_error(model, pol, i, k, scheme, tables))
                    step = ev.gradient_step_gap(model, pol, i, k, scheme, tables)
                    certs += [step, ev.gradient_step_gap_loose(step, model.r_max, model.gamma)]
    train_kw = dict(eta=cfg.eta, iterations=cfg.iterations, exact=True, oracle_cap=cfg.oracle_cap,
                    eta_decay=cfg.eta_decay, track_nash=False)
    companion = _identical_companion(model, cfg.seed)
    for k in sorted({min(k, d) for k in cfg.kappas}):
        _, rec = L.train(companion, k, stop_on_convergence=False, **train_kw)
        drop = max(0.0, -float(np.min(np.diff(rec.potential)))) if len(rec.potential) > 1 else 0.0
        certs.append(ev.Certificate("potential_monotone", 0, k, drop, POTENTIAL_TOL,
                                    drop <= POTENTIAL_TOL))
        pol, _ = L.train(model, k, stop_on_convergence=True, **train_kw)
        gaps = ev.nash_gap(model, pol, per_agent=True)
        bound = L.epsilon_for_kappa(model.r_max, model.gamma, k) + NASH_SLACK
        if k == d and model.identical_interest:
            bound = NASH_SLACK      # full information in a potential game: an exact NE
        worst = int(np.argmax(gaps))
        certs.append(ev.Certificate("nash_gap", worst, k, gaps[worst], bound, gaps[worst] <= bound))
    return certs


def verify(cfg):
    """Write certification.txt (one key=value record per certificate) and return the report."""
    out, _ = _prepare(cfg)
    model = build_model(cfg)
    certs = certify(model, cfg)
    seen = {c.lemma for c in certs}
    schemes = {c.scheme for c in certs if c.lemma == "truncated_q"}
    missing = tuple(x for x in REQUIRED_LEMMAS if x not in seen)
    missing += tuple(f"truncated_q/{s}" for s in ("visitation", "uniform") if s not in schemes)
    failed = sum(not c.passed for c in certs)
    passed = failed == 0 and not missing
    lines = [c.record() for c in certs]
    lines.append(f"check=coverage lemmas={','.join(REQUIRED_LEMMAS)} missing={','.join(missing) or 'none'} "
                 f"pass={'true' if not missing else 'false'}")
    lines.append(f"check=summary certificates={len(certs)} failed={failed} pass={'true' if passed else 'false'}")
    path = out / "certification.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return VerifyReport(path, certs, passed, missing)
