"""Experiment orchestration: validation, seeded replications, metrics and output files."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import baselines, debo, extensions, hdebo
from .config import ExperimentConfig, _user, build_environment
from .env import HETEROGENEOUS, HOMOGENEOUS, MECEnvironment
from .errors import ConfigError, MECBanditError, SimulationError
from .oracle import compute_gaps, solve_fair_oap, solve_gap_2approx, solve_gap_exact, solve_oap
from .trace import PHASE_NAMES, RunTrace

HOMOGENEOUS_REGRET = "homogeneous"
HETEROGENEOUS_REGRET = "heterogeneous"
FAIRNESS_REGRET = "fairness"

METRIC_COLUMNS = (
    "t", "accumulated_reward", "accumulated_noisy_reward", "regret", "average_regret",
    "time_average_reward", "reward_ratio", "fairness_regret", "fairness_gap",
)


# -- preparation -------------------------------------------------------------

@dataclass
class Prepared:
    config: ExperimentConfig
    env: MECEnvironment
    capacities: np.ndarray
    demands: Optional[np.ndarray] = None
    events: list = field(default_factory=list)
    params: object = None
    oracle: dict = field(default_factory=dict)
    derived: dict = field(default_factory=dict)


def _events(cfg: ExperimentConfig) -> list:
    out = []
    for k, e in enumerate(cfg.events or []):
        where = f"experiment.events[{k}]"
        if not isinstance(e, dict) or not {"epoch", "kind", "user"} <= set(e):
            raise ConfigError("needs epoch, kind and user", where)
        user = e["user"]
        if e["kind"] == extensions.ENTER:
            if not isinstance(user, dict):
                raise ConfigError("entering user needs a profile mapping", where)
            missing = {"id", "task_size_kb", "cycles_per_bit", "task_value", "latency_sensitivity"} - set(user)
            if missing:
                raise ConfigError(f"missing {sorted(missing)}", where)
            user = _user({"resource_demand": None, **user})
        out.append(extensions.PopulationEvent(int(e["epoch"]), str(e["kind"]), user))
    return out


def prepare(cfg: ExperimentConfig) -> Prepared:
    """Build and validate the environment and derive every algorithm input."""
    env = build_environment(cfg.environment)
    p = cfg.params
    algo = cfg.algorithm
    if algo == "hdebo" and env.capacity_model != HETEROGENEOUS:
        raise ConfigError("hdebo needs capacity_model: heterogeneous", "environment.capacity_model")
    if algo in ("debo", "udebo", "ddebo", "fdebo") and env.capacity_model != HOMOGENEOUS:
        raise ConfigError(f"{algo} needs capacity_model: homogeneous", "environment.capacity_model")

    prep = Prepared(cfg, env, env.task_capacities)
    d = prep.derived
    d["mu"] = env.mu.tolist()
    d["user_ids"] = [u.id for u in env.users]
    if env.capacity_model == HOMOGENEOUS:
        caps = env.task_capacities
        if np.any(caps < 1) and algo not in ("mucb", "mexp3", "dmnon0"):
            raise ConfigError("every server needs at least one task slot", "environment.servers.task_capacity")
        M = int(caps.sum())
        if env.n_users > M:
            raise ConfigError(f"{env.n_users} users exceed {M} task slots", "environment.servers.task_capacity")
        if algo == "ddebo":
            prep.events = _events(cfg)
            extensions.population_schedule(d["user_ids"], prep.events, M, cfg.horizon, p["zeta"])
            full = extensions.ddebo_environment(env, prep.events)
            d["mu_all_users"] = full.mu.tolist()
        elif cfg.events:
            raise ConfigError("events are only used by ddebo", "experiment.events")
        a, v = solve_oap(env.mu, caps)
        prep.oracle.update(assignment=a.tolist(), value=v)
        try:
            gaps = compute_gaps(env.mu, caps, p["delta_min_override"])
            d["gaps"] = gaps.as_dict()
        except MECBanditError as e:
            # Only the gap-aware schedules need positive gaps.
            if algo in ("debo", "ddebo"):
                raise
            gaps = None
            d["gaps_error"] = str(e)
        if algo == "fdebo":
            af, vf = solve_fair_oap(env.mu, caps, p["beta"])
            prep.oracle.update(fair_assignment=af.tolist(), fair_value=vf)
            fair = compute_gaps(extensions.fairness_transform(env.mu, p["beta"]), caps,
                                p["delta_min_override"])
            d["fair_gaps"] = fair.as_dict()
            prep.params = extensions.theorem4_params(
                fair.delta_min, fair.delta_user_min, env.n_users, M, int(caps.min()), len(caps),
                env.reward_upper, env.reward_lower, p["beta"], p["t1_cap"])
        elif algo == "udebo":
            prep.params = extensions.UDeboSchedule(p["c0"], p["c1"], p["vartheta"])
        elif algo == "debo":
            prep.params = debo.theorem1_params(gaps, env.n_users, M, int(caps.min()), len(caps),
                                               env.reward_upper, env.reward_lower, p["t1_cap"])
    else:
        prep.capacities = env.resource_capacities
        prep.demands = env.demands
        exact = solve_gap_exact(env.mu, prep.demands, prep.capacities)
        approx = solve_gap_2approx(env.mu, prep.demands, prep.capacities)
        prep.oracle.update(assignment=exact.assignment.tolist(), value=exact.value,
                           approx_assignment=approx.assignment.tolist(), approx_value=approx.value)
        if algo == "hdebo":
            prep.params = hdebo.hetero_params(env.mu, prep.demands, prep.capacities, env.reward_upper,
                                              env.reward_lower, p["t1_cap"], p["delta_min_override"])
        elif algo in ("debo", "udebo", "ddebo", "fdebo"):
            raise ConfigError(f"{algo} needs the homogeneous model", "environment.capacity_model")
    if prep.params is not None:
        d["params"] = {k: (float(v) if isinstance(v, float) else v)
                       for k, v in prep.params.__dict__.items()}
    return prep


# -- running -----------------------------------------------------------------

def run_replica(prep: Prepared, replica: int) -> RunTrace:
    cfg = prep.config
    rng = np.random.default_rng(cfg.seed + replica)
    env, caps, T, p = prep.env, prep.capacities, cfg.horizon, cfg.params
    algo = cfg.algorithm
    try:
        if algo == "debo":
            return debo.run_debo(env, caps, T, prep.params, rng, match_full_budget=p["match_full_budget"])
        if algo == "udebo":
            return extensions.run_udebo(env, caps, T, prep.params, rng, match_full_budget=p["match_full_budget"])
        if algo == "ddebo":
            return extensions.run_ddebo(env, caps, T, prep.events, rng, zeta=p["zeta"], t1_cap=p["t1_cap"],
                                        delta_min_override=p["delta_min_override"],
                                        match_full_budget=p["match_full_budget"])
        if algo == "fdebo":
            return extensions.run_fdebo(env, caps, T, p["beta"], rng, params=prep.params,
                                        match_full_budget=p["match_full_budget"])
        if algo == "hdebo":
            return hdebo.run_hdebo(env, prep.demands, caps, T, rng, params=prep.params)
        if algo == "mucb":
            return baselines.run_mucb(env, caps, T, rng)
        if algo == "mexp3":
            return baselines.run_mexp3(env, caps, T, p["gamma_exp"], rng)
        if algo == "dmnon0":
            return baselines.run_dmnon0(env, caps, T, rng)
    except MECBanditError:
        raise
    except Exception as e:  # noqa: BLE001 - reraised with replica context
        raise SimulationError(f"replica {replica} (seed {cfg.seed + replica}) failed: {e!r}") from e
    raise ConfigError(f"unknown algorithm {algo!r}", "experiment.algorithm")


# -- metrics -----------------------------------------------------------------

def checkpoints(horizon: int) -> np.ndarray:
    """Slots 2^0 ... 2^floor(log2 T) plus T."""
    pts = [2 ** k for k in range(int(math.floor(math.log2(horizon))) + 1)]
    if pts[-1] != horizon:
        pts.append(horizon)
    return np.array(pts, dtype=np.int64)


def per_slot_optimum(trace: RunTrace, capacities, solver=None) -> np.ndarray:
    """Oracle compound reward of the users present in each slot."""
    solver = solver or (lambda mu: solve_oap(mu, capacities)[1])
    present = trace.present
    masks, inverse = np.unique(present, axis=0, return_inverse=True)
    values = np.array([solver(trace.mu[m]) if m.any() else 0.0 for m in masks])
    return values[np.asarray(inverse).reshape(-1)]


def compute_regret(trace: RunTrace, opt_per_slot, kind: str = HOMOGENEOUS_REGRET,
                   beta: float = 1.0, capacity_model: Optional[str] = None) -> np.ndarray:
    """Cumulative regret series over every slot of the trace.

    ``opt_per_slot`` is the oracle compound value per slot (scalar or array);
    it must be the log-utility optimum for the fairness kind.
    """
    if kind not in (HOMOGENEOUS_REGRET, HETEROGENEOUS_REGRET, FAIRNESS_REGRET):
        raise ValueError(f"unknown regret kind {kind!r}")
    if capacity_model is not None:
        expected = HETEROGENEOUS if kind == HETEROGENEOUS_REGRET else HOMOGENEOUS
        if capacity_model != expected:
            raise ValueError(f"{kind} regret does not apply to the {capacity_model} model")
    opt = np.broadcast_to(np.asarray(opt_per_slot, dtype=float), (trace.horizon,))
    er = trace.expected_rewards()
    if kind == FAIRNESS_REGRET:
        gained = np.log1p(beta * er).sum(axis=1)
    else:
        gained = er.sum(axis=1)
    if kind == HETEROGENEOUS_REGRET:
        opt = opt / 2
    return np.cumsum(opt) - np.cumsum(gained)


def metrics_table(trace: RunTrace, prep: Prepared) -> dict:
    """Metric columns at the checkpoint slots, plus final per-user averages."""
    cfg = prep.config
    env = prep.env
    beta = cfg.params["beta"]
    hetero = env.capacity_model == HETEROGENEOUS
    if hetero:
        opt = np.full(trace.horizon, prep.oracle["value"])
        kind = HETEROGENEOUS_REGRET
    else:
        caps = prep.capacities
        opt = per_slot_optimum(trace, caps)
        kind = HOMOGENEOUS_REGRET
    regret = compute_regret(trace, opt, kind)
    if hetero:
        # The log-utility benchmark is only defined for slot capacities.
        fregret = np.full(trace.horizon, np.nan)
    else:
        fair_opt = per_slot_optimum(trace, prep.capacities,
                                    lambda mu: solve_fair_oap(mu, prep.capacities, beta)[1])
        fregret = compute_regret(trace, fair_opt, FAIRNESS_REGRET, beta)
    er = trace.expected_rewards()
    acc = np.cumsum(er.sum(axis=1))
    noisy = np.cumsum(trace.rewards.sum(axis=1))
    cum_opt = np.cumsum(opt)
    pts = checkpoints(trace.horizon)
    idx = pts - 1
    user_cum = np.cumsum(er, axis=0)[idx]
    present_cum = np.cumsum(trace.present, axis=0)[idx]
    with np.errstate(invalid="ignore", divide="ignore"):
        user_avg = np.where(present_cum > 0, user_cum / np.maximum(present_cum, 1), np.nan)
        gap = np.nanmax(user_avg, axis=1) - np.nanmin(user_avg, axis=1)
    cols = {
        "t": pts,
        "accumulated_reward": acc[idx],
        "accumulated_noisy_reward": noisy[idx],
        "regret": regret[idx],
        "average_regret": regret[idx] / pts,
        "time_average_reward": acc[idx] / pts,
        "reward_ratio": acc[idx] / cum_opt[idx],
        "fairness_regret": fregret[idx],
        "fairness_gap": gap,
    }
    return {"columns": cols, "user_average": user_avg[-1]}


def epoch_rows(trace: RunTrace, prep: Prepared) -> list[dict]:
    """Per-epoch summaries with a flag for agreement with the relevant oracle."""
    algo = prep.config.algorithm
    rows = []
    target_cache: dict = {}
    for rec in trace.epochs:
        match = None
        if rec.assignment is not None:
            a = np.array(rec.assignment)
            if algo == "hdebo":
                target = np.array(prep.oracle["approx_assignment"])
            elif algo == "fdebo":
                target = np.array(prep.oracle["fair_assignment"])
            else:
                s = trace.present[rec.start] if rec.start < trace.horizon else np.ones(trace.n_users, bool)
                key = tuple(s)
                if key not in target_cache:
                    sub, _ = solve_oap(trace.mu[s], prep.capacities)
                    full = np.zeros(trace.n_users, dtype=np.int64)
                    full[s] = sub
                    target_cache[key] = full
                target = target_cache[key]
            match = bool(np.array_equal(a, target))
        rows.append({
            "n": rec.n, "start": rec.start, "t1": rec.t1, "epsilon": rec.epsilon, "t2": rec.t2,
            "match_slots": rec.match_slots, "exploit_slots": rec.exploit_slots,
            "terminated": rec.terminated, "holes": rec.holes,
            "assignment": " ".join(map(str, rec.assignment)) if rec.assignment is not None else "",
            "matches_oracle": "" if match is None else match,
        })
    return rows


def final_assignment_matches(trace: RunTrace, prep: Prepared) -> bool:
    rows = epoch_rows(trace, prep)
    flagged = [r for r in rows if r["matches_oracle"] != ""]
    return bool(flagged) and flagged[-1]["matches_oracle"] is True


# -- output ------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    path.write_text(buf.getvalue())


def write_trace_csv(path: Path, trace: RunTrace):
    N = trace.n_users
    header = ["t", "epoch", "phase"] + [f"server_{u}" for u in trace.user_ids] + \
             [f"reward_{u}" for u in trace.user_ids]
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for s in range(trace.t):
            row = [str(s + 1), str(int(trace.epoch[s])), PHASE_NAMES[trace.phase[s]]]
            row += [str(int(c)) for c in trace.choices[s]]
            row += [repr(float(r)) for r in trace.rewards[s]]
            f.write(",".join(row) + "\n")
    return N


def config_hash(text: str) -> str:
    """Git-style blob hash of the configuration text."""
    data = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class ExperimentResult:
    output_dir: Path
    traces: list
    metrics: list
    final_match: list


def run_experiment(cfg: ExperimentConfig, keep_traces: bool = False, progress: bool = False) -> ExperimentResult:
    """Run every replication and write per-replica and aggregate files."""
    prep = prepare(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    traces, tables, matches = [], [], []
    for r in range(cfg.replications):
        if progress:
            print(f"\r{cfg.algorithm}: replica {r + 1}/{cfg.replications}", end="", file=sys.stderr, flush=True)
        trace = run_replica(prep, r)
        table = metrics_table(trace, prep)
        cols = table["columns"]
        _write_csv(out / f"replica_{r:03d}_metrics.csv", METRIC_COLUMNS,
                   zip(*(cols[c] for c in METRIC_COLUMNS)))
        erows = epoch_rows(trace, prep)
        if erows:
            keys = list(erows[0])
            _write_csv(out / f"replica_{r:03d}_epochs.csv", keys, ([e[k] for k in keys] for e in erows))
        if cfg.full_trace:
            write_trace_csv(out / f"replica_{r:03d}_trace.csv", trace)
        tables.append(table)
        matches.append(final_assignment_matches(trace, prep) if erows else None)
        if keep_traces:
            traces.append(trace)
    if progress:
        print(file=sys.stderr)
    _write_aggregate(out / "aggregate.csv", tables)
    meta = {
        "config": cfg.resolved(),
        "config_sha1": config_hash(cfg.source if cfg.source is not None else json.dumps(cfg.resolved(), sort_keys=True)),
        "oracle": prep.oracle,
        "derived": prep.derived,
        "replica_seeds": [cfg.seed + r for r in range(cfg.replications)],
        "final_assignment_matches_oracle": matches,
    }
    if cfg.algorithm == "dmnon0":
        meta["variant"] = baselines.DMNON0_LABEL
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")
    return ExperimentResult(out, traces, tables, matches)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def _write_aggregate(path: Path, tables: list):
    metric_names = METRIC_COLUMNS[1:]
    header = ("t", "row", "replica") + metric_names
    rows = []
    t = tables[0]["columns"]["t"]
    stack = {m: np.array([tb["columns"][m] for tb in tables]) for m in metric_names}
    for k, tk in enumerate(t):
        for r in range(len(tables)):
            rows.append([int(tk), "replica", r] + [stack[m][r, k] for m in metric_names])
        rows.append([int(tk), "mean", ""] + [stack[m][:, k].mean() for m in metric_names])
        rows.append([int(tk), "std", ""] + [stack[m][:, k].std(ddof=1) if len(tables) > 1 else 0.0
                                             for m in metric_names])
    _write_csv(path, header, rows)


def oracle_report(cfg: ExperimentConfig) -> dict:
    prep = prepare(cfg)
    return {"oracle": prep.oracle, "derived": {k: v for k, v in prep.derived.items() if k != "mu"},
            "mu": prep.derived["mu"]}
