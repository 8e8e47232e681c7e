"""``bmrl`` command line: solve, simulate, fit, equiv, suite and policy-dump."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .chainworld import AiAction, ChainworldParams
from .estimators import (FitConfig, FixedAgent, RandomAgent, TrajectoryLog, always_burden, always_gamma,
                         fit_chainworld, oracle_agent)
from .harness import ESTIMATORS, ExperimentConfig, default_jobs, run_episode, run_suite, top_baseline
from .instances import FAMILIES, random_instance
from .planner import (ACTION_LABELS, AiConfig, ai_equivalent, build_ai_mdp, policy_dump, solve_ai,
                      three_window_policy, threshold_summary)
from .worlds import ChainWorld

log = logging.getLogger("bmrl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
POLICIES = ("oracle", "noop", "always_gamma", "always_burden", "random")


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------- config loading

def bundled_configs() -> list[str]:
    root = resources.files("bmrl") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(ref: str) -> tuple[dict, Path | None]:
    """JSON config from a path, or from a bundled config name (with or without ``.json``)."""
    path = Path(ref)
    if path.is_file():
        text, base = path.read_text(), path.parent
    else:
        name = ref[:-5] if ref.endswith(".json") else ref
        res = resources.files("bmrl") / "configs" / f"{name}.json"
        if not res.is_file():
            raise ConfigError(f"config: no file {ref!r} and no bundled config of that name "
                              f"(bundled: {', '.join(bundled_configs())})")
        text, base = res.read_text(), None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: invalid JSON ({e})") from None
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a JSON object")
    return data, base


def _prefixed(prefix: str, err: Exception) -> ConfigError:
    parts = [p.strip() for p in str(err).split(";")]
    return ConfigError("; ".join(f"{prefix}.{p}" if ":" in p.split(" ")[0] else f"{prefix}: {p}"
                                 for p in parts))


def _ai_config(data: dict) -> AiConfig:
    try:
        return AiConfig(**data.get("ai", {}))
    except (TypeError, ValueError) as e:
        raise _prefixed("ai", e) from None


def _human(data: dict) -> ChainworldParams:
    if "human" not in data:
        raise ConfigError("human: required (chainworld parameter object)")
    try:
        return ChainworldParams.from_dict(data["human"]).validate()
    except (TypeError, ValueError) as e:
        raise _prefixed("human", e) from None


def _tau(data: dict):
    tau = data.get("tau")
    if tau is not None and not (isinstance(tau, (int, float)) and tau > 0):
        raise ConfigError(f"tau: must be a positive number or null, got {tau!r}")
    return tau


def _experiment(data: dict, args) -> ExperimentConfig:
    data = dict(data)
    for key, val in (("seed", args.seed), ("n_trials", args.n_trials), ("n_episodes", args.n_episodes)):
        if val is not None:
            data[key] = val
    if args.estimators:
        data["estimators"] = [e.strip() for e in args.estimators.split(",") if e.strip()]
    try:
        return ExperimentConfig.from_dict(data)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


# --------------------------------------------------------------------------- output

def config_digest(data: dict) -> str:
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


class Output:
    """Collects files for one run and writes them plus a manifest into ``--out``."""

    def __init__(self, out: str, fmt: str):
        self.dir = Path(out)
        self.fmt = fmt
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str):
        self.files[name] = text

    def table(self, stem: str, rows: list[dict], meta: dict | None = None):
        if self.fmt == "csv":
            buf = io.StringIO()
            w = csv.DictWriter(buf, fieldnames=list(rows[0]) if rows else [], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
            self.add(f"{stem}.csv", buf.getvalue())
            if meta is not None:
                self.add(f"{stem}.meta.json", dump_json(meta))
        else:
            body = {"rows": rows} if meta is None else {**meta, "rows": rows}
            self.add(f"{stem}.json", dump_json(body))

    def write(self, command: str, config: dict, seed):
        self.dir.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            (self.dir / name).write_text(text)
        manifest = {"command": command, "config_sha256": config_digest(config), "seed": seed,
                    "version": __version__, "format": self.fmt, "outputs": sorted(self.files)}
        (self.dir / "manifest.json").write_text(dump_json(manifest))
        for name in sorted(self.files):
            print(self.dir / name)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _fmt(x: float) -> str:
    return f"{x:.6f}"


# --------------------------------------------------------------------------- subcommands

def _plan(theta: ChainworldParams, tau, ai: AiConfig):
    """Per-chain-state actions, thresholds and the full AI table for one human."""
    summary = threshold_summary(theta, ai)
    if tau is None:
        table, _ = three_window_policy(theta, ai)
        _, exact = solve_ai(build_ai_mdp(ChainWorld(theta), ai))
        values = exact.values
    else:
        _, table = solve_ai(build_ai_mdp(ChainWorld(theta, tau=tau), ai))
        values = table.values
    return table.by_human_state()[: theta.n_states], summary, table, values


def cmd_solve(data, args, out: Output):
    theta, tau, ai = _human(data), _tau(data), _ai_config(data)
    per_state, summary, table, values = _plan(theta, tau, ai)
    A = table.n_human_actions
    rows = []
    for i, a in enumerate(table.actions):
        sentinel = i == len(table.actions) - 1
        rows.append({"ai_state": i, "human_state": 0 if sentinel else i // A,
                     "prev_action": "" if sentinel else i % A,
                     "action": ACTION_LABELS[int(a)], "value": _fmt(values[i])})
    meta = {"thresholds": summary.to_dict(), "tau": tau,
            "chain_actions": [ACTION_LABELS[int(a)] for a in per_state]}
    out.table("policy", rows, meta)


def cmd_policy_dump(data, args, out: Output):
    theta, tau, ai = _human(data), _tau(data), _ai_config(data)
    per_state, summary, _, _ = _plan(theta, tau, ai)
    dump = policy_dump(per_state, summary)
    out.table("policy_dump", dump["states"], {"thresholds": dump["thresholds"]})


def _policy_agent(name: str, world, ai: AiConfig):
    if name == "oracle":
        return oracle_agent(world, ai)
    if name == "noop":
        return FixedAgent(AiAction.NOOP, "noop")
    return {"always_gamma": always_gamma, "always_burden": always_burden, "random": RandomAgent}[name]()


def cmd_simulate(data, args, out: Output):
    theta, tau, ai = _human(data), _tau(data), _ai_config(data)
    policy = data.get("policy", "oracle")
    if policy not in POLICIES:
        raise ConfigError(f"policy: must be one of {POLICIES}, got {policy!r}")
    n_episodes = args.n_episodes if args.n_episodes is not None else data.get("n_episodes", 10)
    if not isinstance(n_episodes, int) or n_episodes < 1:
        raise ConfigError(f"n_episodes: must be a positive integer, got {n_episodes!r}")
    seed = args.seed if args.seed is not None else data.get("seed", 0)
    world = ChainWorld(theta, tau=tau)
    agent = _policy_agent(policy, world, ai)
    env_rng, agent_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    tlog = TrajectoryLog(world.n_states, world.n_actions, world.start)
    rows = []
    for e in range(n_episodes):
        total = run_episode(world, agent, ai, tlog, e, env_rng, agent_rng)
        steps = [r for r in tlog.records if r[0] == e]
        end = tlog.human_state(steps[-1][5])
        outcome = "goal" if world.goal_mask[end] else "disengaged" if world.dis_mask[end] else "truncated"
        rows.append({"episode": e + 1, "reward": _fmt(total), "steps": len(steps), "outcome": outcome})
    out.add("trajectories.jsonl", tlog.to_jsonl())
    out.table("episodes", rows, {"policy": policy, "n_human": world.n_states,
                                  "n_human_actions": world.n_actions})


def cmd_fit(data, args, out: Output, base: Path | None):
    n_states = data.get("n_states")
    if not isinstance(n_states, int) or n_states < 1:
        raise ConfigError(f"n_states: must be a positive integer, got {n_states!r}")
    src = args.data or data.get("data")
    if not src:
        raise ConfigError("data: required (trajectories.jsonl path, or --data)")
    path = Path(src)
    if not path.is_absolute() and base is not None and not args.data:
        path = base / path
    if not path.is_file():
        raise ConfigError(f"data: no such file {str(path)!r}")
    ai = _ai_config(data)
    seed = args.seed if args.seed is not None else data.get("seed", 0)
    try:
        fcfg = FitConfig(n_candidates=data.get("n_candidates", 5000), seed=seed)
    except ValueError as e:
        raise ConfigError(f"n_candidates: {e}") from None
    S, A = n_states + 2, 2
    tlog = TrajectoryLog.from_jsonl(path.read_text(), S, A)
    mapping = ChainWorld(ChainworldParams(n_states=n_states, r_b=0, r_l=0, r_g=0, r_d=0, p_g=1, p_l=0,
                                          p_d=0, p_d0=0, gamma=0.5)).identity_mapping()
    res = fit_chainworld(tlog, fcfg, mapping)
    per_state, summary, _, _ = _plan(res.theta, res.tau, ai)
    body = res.to_dict()
    body.update(n_records=len(tlog), thresholds=summary.to_dict(),
                chain_actions=[ACTION_LABELS[int(a)] for a in per_state])
    if out.fmt == "csv":
        row = {k: v for k, v in res.theta.to_dict().items()}
        row.update(tau=res.tau, log_likelihood=res.log_likelihood, index=res.index)
        out.table("fit", [row], {k: body[k] for k in ("n_records", "thresholds", "chain_actions")})
    else:
        out.add("fit.json", dump_json(body))


def cmd_equiv(data, args, out: Output):
    family = data.get("family")
    if family not in FAMILIES:
        raise ConfigError(f"family: must be one of {sorted(FAMILIES)}, got {family!r}")
    n = data.get("n_instances", 50)
    if not isinstance(n, int) or n < 1:
        raise ConfigError(f"n_instances: must be a positive integer, got {n!r}")
    kwargs = data.get("options", {})
    ai = _ai_config(data)
    tol = data.get("tol", 1e-6)
    seed = args.seed if args.seed is not None else data.get("seed", 0)
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n):
        try:
            world, m = random_instance(family, rng, **kwargs)
        except TypeError as e:
            raise ConfigError(f"options: {e}") from None
        rep = ai_equivalent(world, m.chain_world(), m.f, m.g, ai, tol=tol)
        rows.append({"instance": k, "equivalent": rep.equivalent, "compared": rep.compared,
                     "mismatches": len(rep.mismatches), "near_ties": len(rep.near_ties)})
    passed = sum(r["equivalent"] for r in rows)
    out.table("equivalence", rows, {"family": family, "passed": passed, "n_instances": n})
    log.info("%s: %d/%d equivalent", family, passed, n)


def cmd_suite(data, args, out: Output):
    cfg = _experiment(data, args)
    jobs = args.jobs or default_jobs()
    res = run_suite(cfg, jobs=jobs)
    stem = cfg.condition
    out.add(f"{stem}.{out.fmt}", res.to_csv() if out.fmt == "csv" else res.to_json())
    ep = min(6, cfg.n_episodes)
    if "chainworld" in cfg.estimators and any(b in cfg.estimators for b in
                                              ("model_based", "model_free", "always_gamma",
                                               "always_burden", "random")):
        name, (m, se, n) = top_baseline(res, ep)
        cm, cse, _ = res.summary("chainworld", ep)
        log.info("episode %d: chainworld %.2f (se %.2f), top baseline %s %.2f (se %.2f), n=%d",
                 ep, cm, cse, name, m, se, n)
    return cfg.to_dict(), cfg.seed


# --------------------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bmrl", description="Chainworld humans, AI intervention planning "
                                "and online personalization experiments.")
    p.add_argument("--version", action="version", version=f"bmrl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {"solve": "optimal AI policy table and thresholds for one chainworld human",
             "policy-dump": "per-chain-state intervention labels (none / a_gamma / a_b)",
             "simulate": "roll out episodes of one human under a fixed AI policy",
             "fit": "likelihood fit of a chainworld to logged trajectories",
             "equiv": "check AI equivalence on random instances of a world family",
             "suite": "run an experiment condition; writes the aggregated result table"}
    for name, text in helps.items():
        s = sub.add_parser(name, help=text, description=text)
        s.add_argument("--config", required=True, help="JSON config path or bundled config name")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", default="bmrl-out", help="output directory (default: bmrl-out)")
        s.add_argument("--format", choices=("csv", "json"), default="csv")
        s.add_argument("-v", "--verbose", action="store_true")
        if name in ("suite", "simulate"):
            s.add_argument("--n-episodes", type=int)
        if name == "suite":
            s.add_argument("--n-trials", type=int)
            s.add_argument("--estimators", help=f"comma list from {','.join(ESTIMATORS)}")
            s.add_argument("--jobs", type=int, help="worker processes (default: available CPUs)")
        else:
            s.set_defaults(n_trials=None, estimators=None, jobs=None)
        if name == "fit":
            s.add_argument("--data", help="trajectories.jsonl (overrides the config's data field)")
        else:
            s.set_defaults(data=None)
        if name != "suite" and name != "simulate":
            s.set_defaults(n_episodes=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    out = Output(args.out, args.format)
    try:
        data, base = load_config(args.config)
        for flag in ("n_trials", "n_episodes", "jobs"):
            v = getattr(args, flag, None)
            if v is not None and v < 1:
                raise ConfigError(f"--{flag.replace('_', '-')}: must be >= 1, got {v}")
        seed = args.seed if args.seed is not None else data.get("seed", 0)
        manifest_cfg = data
        if args.command == "solve":
            cmd_solve(data, args, out)
        elif args.command == "policy-dump":
            cmd_policy_dump(data, args, out)
        elif args.command == "simulate":
            cmd_simulate(data, args, out)
        elif args.command == "fit":
            cmd_fit(data, args, out, base)
        elif args.command == "equiv":
            cmd_equiv(data, args, out)
        else:
            manifest_cfg, seed = cmd_suite(data, args, out)
        out.write(args.command, manifest_cfg, seed)
    except ConfigError as e:
        print(f"bmrl: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - any failure after validation is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"bmrl: {args.command} failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
