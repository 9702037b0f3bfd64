"""Seeded experiment runs with exact pseudo-regret accounting.

Each episode the agent commits to a policy; that policy is evaluated exactly
against the simulator (no Monte-Carlo noise) and ``V*(start) - V^pi(start)``
is appended to a :class:`RegretLedger`.
"""

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .agents import (
    BdqnLiteAgent,
    BoltzmannAgent,
    EpsilonGreedyAgent,
    LinPsrlAgent,
    LinUcbAgent,
    Transition,
    state_one_hot,
)
from .env import EnvSpec, build_environment, noise_sigma, optimal_q, policy_value
from .rng import make_stream

LEDGER_COLUMNS = ("episode", "regret", "cumulative_regret", "wall_time")
AGENT_KINDS = ("linucb", "linpsrl", "bdqn", "epsilon_greedy", "boltzmann", "optimal", "uniform")


class ConfigError(ValueError):
    pass


# -- configuration -------------------------------------------------------------------------


@dataclass
class AgentSpec:
    """Agent kind plus keyword hyperparameters.

    Unset confidence parameters default to simulator knowledge: ``sigma`` to
    the environment's noise parameter, ``weight_bound`` to the realised
    ``max_h ||w*_h||`` and the empirical rho to the optimal policy.
    """

    kind: str = "linucb"
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "AgentSpec":
        data = dict(data)
        kind = data.pop("kind", "linucb")
        if kind not in AGENT_KINDS:
            raise ConfigError(f"unknown agent kind {kind!r}; expected one of {AGENT_KINDS}")
        params = dict(data.pop("params", {}))
        params.update(data)
        return cls(kind, params)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


@dataclass
class RunConfig:
    """One experiment: environment, agent, episode count and seeds.

    ``delta``, ``lam`` and ``sigma`` override the corresponding agent
    hyperparameters when set.
    """

    env: EnvSpec = field(default_factory=EnvSpec)
    agent: AgentSpec = field(default_factory=AgentSpec)
    episodes: int = 1000
    seeds: list[int] = field(default_factory=lambda: [0])
    delta: float | None = None
    lam: float | None = None
    sigma: float | None = None
    output: str | None = None

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        known = {"env", "agent", "episodes", "seeds", "delta", "lam", "sigma", "output"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        env = EnvSpec.from_dict(data.pop("env", {}))
        agent = AgentSpec.from_dict(data.pop("agent", {}))
        seeds = data.pop("seeds", [0])
        if isinstance(seeds, int):
            seeds = [seeds]
        return cls(env=env, agent=agent, seeds=[int(s) for s in seeds], **data)

    def to_dict(self) -> dict:
        out = {
            "env": self.env.to_dict(),
            "agent": self.agent.to_dict(),
            "episodes": self.episodes,
            "seeds": list(self.seeds),
        }
        for key in ("delta", "lam", "sigma", "output"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out

    def digest(self) -> str:
        blob = json.dumps({k: v for k, v in self.to_dict().items() if k != "output"}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_document(path) -> dict:
    """Read a YAML or JSON config document."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return data


def load_config(path) -> RunConfig:
    return RunConfig.from_dict(load_document(path))


# -- agents ------------------------------------------------------------------------------


class FixedPolicyAgent:
    """Plays a fixed ``(H, S, A)`` action distribution (oracle and random baselines)."""

    def __init__(self, probs: np.ndarray, rng: np.random.Generator):
        self.probs = np.asarray(probs, dtype=float)
        self.rng = rng
        self._cum = np.cumsum(self.probs, axis=-1)

    def begin_episode(self):
        pass

    def act(self, x, h):
        i = int(np.searchsorted(self._cum[h, x], self.rng.random() * self._cum[h, x, -1], side="right"))
        return min(i, self.probs.shape[-1] - 1)

    def observe(self, tr):
        pass

    def end_episode(self):
        pass

    def episode_policy(self):
        return self.probs

    def greedy_policy(self):
        return np.argmax(self.probs, axis=-1)


def make_agent(config: RunConfig, bundle, rng: np.random.Generator):
    mdp, features, realization = bundle
    kind, params = config.agent.kind, dict(config.agent.params)
    for key in ("delta", "lam", "sigma"):
        if getattr(config, key) is not None:
            params[key] = getattr(config, key)
    gamma = mdp.gamma
    if kind in ("linucb", "linpsrl"):
        values = optimal_q(mdp)
        params.setdefault("sigma", max(noise_sigma(mdp, values), 1e-3))
        params.setdefault("weight_bound", realization.weight_bound)
        rho = params.setdefault("rho", "empirical")
        if rho == "empirical":
            params["optimal_policy"] = values.greedy_policy()
        cls = LinUcbAgent if kind == "linucb" else LinPsrlAgent
        if kind == "linpsrl":
            params.pop("lam", None)
        return cls(features, rng, gamma=gamma, **params)
    if kind == "epsilon_greedy":
        params.pop("delta", None), params.pop("sigma", None)
        return EpsilonGreedyAgent(features, rng, gamma=gamma, **params)
    if kind == "boltzmann":
        params.pop("delta", None), params.pop("sigma", None)
        return BoltzmannAgent(features, rng, gamma=gamma, **params)
    if kind == "bdqn":
        params.pop("delta", None), params.pop("lam", None)
        phi = state_one_hot(mdp.n_states, mdp.horizon)
        return BdqnLiteAgent(phi, mdp.n_actions, rng, gamma=gamma, **params)
    if kind == "optimal":
        pi = optimal_q(mdp).greedy_policy()
        probs = np.zeros(pi.shape + (mdp.n_actions,))
        np.put_along_axis(probs, pi[..., None], 1.0, axis=-1)
        return FixedPolicyAgent(probs, rng)
    if kind == "uniform":
        return FixedPolicyAgent(np.full((mdp.horizon, mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions), rng)
    raise ConfigError(f"unknown agent kind {kind!r}")


# -- ledger -------------------------------------------------------------------------------


@dataclass
class RegretLedger:
    regret: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def append(self, regret: float, wall_time: float = 0.0) -> None:
        self.regret.append(float(regret))
        self.wall_time.append(float(wall_time))

    def __len__(self) -> int:
        return len(self.regret)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(np.asarray(self.regret, dtype=float))

    @property
    def total(self) -> float:
        return float(self.cumulative[-1]) if self.regret else 0.0


def run_single(config: RunConfig, seed: int, bundle=None, on_episode=None) -> RegretLedger:
    """Run ``config.episodes`` episodes for one seed and return the ledger.

    ``on_episode(t, agent, ledger)`` is called after every episode when given.
    """
    bundle = bundle if bundle is not None else build_environment(config.env)
    mdp = bundle[0]
    agent = make_agent(config, bundle, make_stream(seed, "agent"))
    env_rng = make_stream(seed, "environment")
    v_star = float(mdp.initial_dist @ optimal_q(mdp).V[0])
    ledger = RegretLedger(metadata=run_metadata(config, seed))
    for t in range(config.episodes):
        start = time.perf_counter()
        agent.begin_episode()
        regret = v_star - policy_value(mdp, agent.episode_policy())
        x = mdp.reset(env_rng)
        for h in range(mdp.horizon):
            a = agent.act(x, h)
            x_next, r = mdp.step(h, x, a, env_rng)
            agent.observe(Transition(x, a, r, x_next, h, h == mdp.horizon - 1))
            x = x_next
        agent.end_episode()
        ledger.append(regret, time.perf_counter() - start)
        if on_episode is not None:
            on_episode(t, agent, ledger)
    return ledger


def run_metadata(config: RunConfig, seed: int) -> dict:
    return {
        "config_hash": config.digest(),
        "seed": int(seed),
        "library_version": __version__,
        "agent": config.agent.kind,
        "environment": config.env.kind,
        "episodes": config.episodes,
    }


def _run_job(args):
    config, seed = args
    return run_single(config, seed)


def run_experiment(config: RunConfig, workers: int = 1) -> dict[int, RegretLedger]:
    """Run every seed (optionally in parallel) and write outputs if requested."""
    jobs = [(config, s) for s in config.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            ledgers = list(pool.map(_run_job, jobs))
    else:
        ledgers = [_run_job(j) for j in jobs]
    out = dict(zip(config.seeds, ledgers))
    if config.output:
        base = Path(config.output)
        for seed, ledger in out.items():
            emit_outputs(ledger, base.parent / f"{base.name}-seed{seed}.csv")
    return out


# -- outputs -----------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def ledger_to_text(ledger: RegretLedger) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LEDGER_COLUMNS)
    for i, (reg, cum, wall) in enumerate(zip(ledger.regret, ledger.cumulative, ledger.wall_time), start=1):
        writer.writerow((i, _fmt(reg), _fmt(cum), _fmt(wall)))
    return buf.getvalue()


def emit_outputs(ledger: RegretLedger, path) -> tuple[Path, Path]:
    """Write ``path`` (one CSV row per episode) and ``<path>.meta.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(ledger_to_text(ledger))
    meta = path.with_name(path.name + ".meta.json")
    meta.write_text(json.dumps(ledger.metadata, sort_keys=True, indent=2) + "\n")
    return path, meta


def read_ledger(path) -> RegretLedger:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != LEDGER_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        ledger = RegretLedger()
        for row in reader:
            ledger.append(float(row[1]), float(row[3]))
    meta = path.with_name(path.name + ".meta.json")
    if meta.exists():
        ledger.metadata = json.loads(meta.read_text())
    return ledger


# -- diagnostics ----------------------------------------------------------------------


@dataclass(frozen=True)
class SublinearityFit:
    alpha: float
    r2: float
    zero_regret: bool = False


def sublinearity_diagnostic(ledger, min_episodes: int = 100) -> SublinearityFit:
    """Fit ``log cumulative regret = log c + alpha log t`` over the second half.

    Accepts a :class:`RegretLedger` or an array of per-episode regrets.
    """
    regret = np.asarray(ledger.regret if isinstance(ledger, RegretLedger) else ledger, dtype=float)
    T = regret.shape[0]
    if T < min_episodes:
        raise ValueError(f"need at least {min_episodes} episodes, got {T}")
    cum = np.cumsum(regret)
    t = np.arange(1, T + 1)
    half = slice(T // 2, T)
    cum_h, t_h = cum[half], t[half]
    keep = cum_h > 0.0
    if not np.any(keep):
        return SublinearityFit(float("nan"), float("nan"), zero_regret=True)
    x, y = np.log(t_h[keep]), np.log(cum_h[keep])
    if x.shape[0] < 2:
        return SublinearityFit(float("nan"), float("nan"), zero_regret=True)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return SublinearityFit(float(slope), r2)


@dataclass(frozen=True)
class BayesRegretEstimate:
    mean: float
    stderr: float
    totals: tuple[float, ...]


def _bayes_job(args):
    config, env_spec, seed = args
    cfg = RunConfig(env=env_spec, agent=config.agent, episodes=config.episodes, seeds=[seed],
                    delta=config.delta, lam=config.lam, sigma=config.sigma)
    return run_single(cfg, seed).total


def estimate_bayes_regret(config: RunConfig, draws: int, seed_stride: int = 1, seed_offset: int = 0, workers: int = 1) -> BayesRegretEstimate:
    """Mean and standard error of cumulative regret over prior draws.

    The prior is ``config.env``: for ``kind: random`` draw ``m`` uses
    environment seed ``env.seed + m``; any other kind is a point-mass prior.
    Draw ``m`` runs the agent with seed ``seeds[0] + seed_offset + seed_stride * m``.
    """
    if draws < 2:
        raise ValueError("need at least two prior draws")
    jobs = []
    for m in range(draws):
        spec = EnvSpec.from_dict(config.env.to_dict())
        if spec.kind == "random":
            spec.seed = config.env.seed + m
        jobs.append((config, spec, config.seeds[0] + seed_offset + seed_stride * m))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            totals = list(pool.map(_bayes_job, jobs))
    else:
        totals = [_bayes_job(j) for j in jobs]
    arr = np.asarray(totals)
    return BayesRegretEstimate(float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(draws)), tuple(totals))


# -- sweeps ----------------------------------------------------------------------------

SWEEP_COLUMNS = ("agent", "agent_index", "seed", "total_regret", "alpha", "r2")


def sweep_configs(doc: dict) -> list[RunConfig]:
    """Expand a sweep document (a run config whose ``agents`` key lists agent specs)."""
    doc = dict(doc)
    agents = doc.pop("agents", None)
    if not agents:
        raise ConfigError("a sweep needs a non-empty 'agents' list")
    output = doc.pop("output", None)
    configs = []
    for i, agent in enumerate(agents):
        cfg = RunConfig.from_dict({**doc, "agent": agent})
        if output:
            cfg.output = str(Path(output) / f"{i:02d}-{cfg.agent.kind}")
        configs.append(cfg)
    return configs


def run_sweep(doc: dict, workers: int = 1) -> list[dict]:
    """Run every agent over every seed; writes ``summary.csv`` next to the per-run tables."""
    rows = []
    for i, cfg in enumerate(sweep_configs(doc)):
        for seed, ledger in run_experiment(cfg, workers=workers).items():
            try:
                fit = sublinearity_diagnostic(ledger)
                alpha, r2 = fit.alpha, fit.r2
            except ValueError:
                alpha = r2 = float("nan")
            rows.append({"agent": cfg.agent.kind, "agent_index": i, "seed": seed,
                         "total_regret": ledger.total, "alpha": alpha, "r2": r2})
    if doc.get("output"):
        path = Path(doc["output"]) / "summary.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    return rows
