"""End-to-end pipeline steps used by the command line: BC, training, evaluation.

Run directories hold ``config.yaml``, ``metrics.jsonl`` (one JSON object per
iteration), ``ckpt_XXXXX.lfck`` every ``run.checkpoint_every`` iterations and
``final.lfck``.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import checkpoint as ckpt
from .acppo import K_COSTS, TRACE_COLUMNS, Networks, Trainer, evaluate
from .approximator import NetSpec
from .bc import collect_demos, config_digest, pretrain_actor
from .config import RunConfig, dump_config
from .task import ACT_DIM, OBS_DIM, VecEnv, layout_hash

log = logging.getLogger("locoforge")

ABLATIONS = ("no-constraints", "no-curriculum", "no-bc")


def thread_count(default: Optional[int] = None) -> int:
    """Rollout threads: ``LOCOFORGE_THREADS`` caps the CPU count."""
    n = default or os.cpu_count() or 1
    cap = os.environ.get("LOCOFORGE_THREADS")
    if cap:
        try:
            c = int(cap)
        except ValueError:
            raise ValueError(f"LOCOFORGE_THREADS must be a positive integer, got {cap!r}") from None
        if c < 1:
            raise ValueError(f"LOCOFORGE_THREADS must be a positive integer, got {cap!r}")
        n = min(n, c)
    return max(1, n)


def seeds(seed: int) -> Tuple[int, int, int]:
    """(env seed, trainer seed, bc seed) derived from the run seed."""
    ss = np.random.SeedSequence(seed).spawn(3)
    return tuple(int(s.generate_state(1, np.uint64)[0]) for s in ss)


def apply_ablation(cfg: RunConfig, ablate: Optional[str]) -> Tuple[RunConfig, bool, bool]:
    """Returns ``(config, constraints_on, use_warm_start)``."""
    if ablate is None:
        return cfg, True, True
    if ablate not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablate!r}; choose from {', '.join(ABLATIONS)}")
    if ablate == "no-curriculum":
        return cfg.replace(curriculum=replace(cfg.curriculum, enabled=False)), True, True
    if ablate == "no-constraints":
        return cfg, False, True
    return cfg, True, False


# ----------------------------------------------------------------------------
# actor / trainer persistence


def load_actor(path, task_cfg) -> dict:
    meta, arrays = ckpt.load(path)
    if meta.get("layout_hash") != layout_hash(task_cfg):
        raise ckpt.CheckpointError(f"{path}: observation/action layout does not match this build")
    actor = ckpt.unpack_params("actor", arrays)
    if not actor:
        raise ckpt.CheckpointError(f"{path}: no actor parameters")
    return actor


def save_actor(path, params: dict, hidden_dims, task_cfg, extra: Optional[dict] = None) -> None:
    arrays = {}
    ckpt.pack_params("actor", params, arrays)
    meta = {"kind": "actor", "layout_hash": layout_hash(task_cfg), "hidden_dims": list(hidden_dims)}
    meta.update(extra or {})
    ckpt.save(path, meta, arrays)


def trainer_to_checkpoint(tr: Trainer, cfg: RunConfig, ablate: Optional[str]) -> Tuple[dict, dict]:
    st = tr.state
    env_state = tr.env.get_state()
    arrays = {}
    ckpt.pack_params("actor", st.nets.actor, arrays)
    ckpt.pack_params("critic", st.nets.critic, arrays)
    for k, p in enumerate(st.nets.cost_critics):
        ckpt.pack_params(f"cost{k}", p, arrays)
    for name, o in [("actor", st.opts.actor), ("critic", st.opts.critic)] + \
            [(f"cost{k}", o) for k, o in enumerate(st.opts.costs)]:
        ckpt.pack_params(f"opt_m/{name}", o.m, arrays)
        ckpt.pack_params(f"opt_v/{name}", o.v, arrays)
    for k in VecEnv._ARRAYS:
        arrays[f"env/{k}"] = env_state[k]
    arrays["obs"] = tr.obs
    meta = {
        "kind": "trainer",
        "layout_hash": layout_hash(cfg.task),
        "config": cfg.to_dict(),
        "ablate": ablate,
        "constraints": tr.constraints,
        "iteration": st.iteration,
        "beta": st.beta,
        "rng": st.rng.bit_generator.state,
        "env_rng": env_state["rng"],
        "curriculum": env_state["curriculum"],
        "counters": env_state["counters"],
        "opt_steps": [o.step for o in [st.opts.actor, st.opts.critic, *st.opts.costs]],
        "elapsed": tr.last_wallclock,
    }
    return meta, arrays


def save_trainer(path, tr: Trainer, cfg: RunConfig, ablate: Optional[str]) -> None:
    meta, arrays = trainer_to_checkpoint(tr, cfg, ablate)
    ckpt.save(path, meta, arrays)


def trainer_from_checkpoint(meta: dict, arrays: dict, threads: int = 1,
                            cfg: Optional[RunConfig] = None) -> Tuple[Trainer, RunConfig]:
    from .config import config_from_dict

    if meta.get("kind") != "trainer":
        raise ckpt.CheckpointError("not a trainer checkpoint")
    cfg = cfg or config_from_dict(meta["config"])
    if meta.get("layout_hash") != layout_hash(cfg.task):
        raise ckpt.CheckpointError("observation/action layout does not match this build")
    tr = build_trainer(cfg, ablate=meta["ablate"], threads=threads, reset=False)
    st = tr.state
    st.nets.actor = ckpt.unpack_params("actor", arrays)
    st.nets.critic = ckpt.unpack_params("critic", arrays)
    st.nets.cost_critics = [ckpt.unpack_params(f"cost{k}", arrays) for k in range(K_COSTS)]
    opts = [st.opts.actor, st.opts.critic, *st.opts.costs]
    names = ["actor", "critic"] + [f"cost{k}" for k in range(K_COSTS)]
    for o, name, step in zip(opts, names, meta["opt_steps"]):
        o.m = ckpt.unpack_params(f"opt_m/{name}", arrays)
        o.v = ckpt.unpack_params(f"opt_v/{name}", arrays)
        o.step = int(step)
    st.iteration = int(meta["iteration"])
    st.beta = float(meta["beta"])
    st.rng.bit_generator.state = meta["rng"]
    env_state = {k: arrays[f"env/{k}"] for k in VecEnv._ARRAYS}
    env_state.update(rng=meta["env_rng"], curriculum=meta["curriculum"], counters=meta["counters"])
    tr.env.set_state(env_state)
    tr.obs = arrays["obs"].copy()
    tr.last_wallclock = float(meta.get("elapsed", 0.0))
    tr.t0 = time.perf_counter() - tr.last_wallclock
    return tr, cfg


def load_trainer(path, threads: int = 1, cfg: Optional[RunConfig] = None) -> Tuple[Trainer, RunConfig]:
    meta, arrays = ckpt.load(path)
    try:
        return trainer_from_checkpoint(meta, arrays, threads, cfg)
    except ckpt.CheckpointError as exc:
        raise ckpt.CheckpointError(f"{path}: {exc}") from None


# ----------------------------------------------------------------------------
# pipeline steps


def build_trainer(config: Optional[RunConfig] = None, ablate: Optional[str] = None, warm_start=None,
                  threads: int = 1, reset: bool = True) -> Trainer:
    """Trainer for ``config``; ``warm_start`` is an actor parameter dict or checkpoint path."""
    cfg, constraints, use_ws = apply_ablation(config or RunConfig(), ablate)
    env_seed, tr_seed, _ = seeds(cfg.run.seed)
    env = VecEnv(cfg.model, cfg.task, cfg.curriculum, cfg.run.n_envs, env_seed, threads)
    actor = None
    if warm_start is not None and use_ws:
        actor = load_actor(warm_start, cfg.task) if isinstance(warm_start, (str, os.PathLike)) else warm_start
    return Trainer(env, cfg.acppo, seed=tr_seed, horizon=cfg.run.horizon, constraints=constraints,
                   actor_init=actor, reset=reset)


def _read_metrics(path: Path, upto: int) -> List[str]:
    if not path.exists():
        return []
    keep = []
    for line in path.read_text().splitlines():
        if line.strip() and json.loads(line)["iter"] <= upto:
            keep.append(line)
    return keep


def train(cfg: RunConfig, out_dir, ablate: Optional[str] = None, warm_start=None, threads: int = 1,
          resume=None, on_iteration: Optional[Callable[[dict], None]] = None) -> Trainer:
    """Run (or resume) training; returns the trainer after the last iteration."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.jsonl"
    if resume is not None:
        meta, _ = ckpt.load(resume)
        snap = meta.get("config", {})
        if cfg is None:
            from .config import config_from_dict
            cfg = config_from_dict(snap)
        else:
            mine = cfg.to_dict()
            for sec in mine:
                if sec != "run" and mine[sec] != snap.get(sec):
                    raise ValueError(f"{sec}: config differs from the resumed checkpoint")
        tr, cfg = load_trainer(resume, threads, cfg)
        ablate = meta.get("ablate")
        lines = _read_metrics(metrics_path, tr.state.iteration)
        metrics_path.write_text("".join(l + "\n" for l in lines))
    else:
        tr = build_trainer(cfg, ablate=ablate, warm_start=warm_start, threads=threads)
        metrics_path.write_text("")
    dump_config(cfg, out / "config.yaml")
    with metrics_path.open("a") as fh:
        while tr.state.iteration < cfg.run.iterations:
            m = tr.train_iteration()
            fh.write(json.dumps(m, sort_keys=True) + "\n")
            fh.flush()
            if m["rolled_back"]:
                log.warning("iteration %d: non-finite loss, update rolled back", m["iter"])
            log.info("iter %d reward %.3f level %d", m["iter"], m["mean_reward"], m["sigma_level"])
            if on_iteration is not None:
                on_iteration(m)
            if m["iter"] % cfg.run.checkpoint_every == 0:
                save_trainer(out / f"ckpt_{m['iter']:05d}.lfck", tr, cfg, ablate)
    save_trainer(out / "final.lfck", tr, cfg, ablate)
    return tr


def run_bc(cfg: RunConfig, out_dir, threads: int = 1) -> dict:
    """Collect expert demos, clone them into a fresh actor and write the results."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, tr_seed, bc_seed = seeds(cfg.run.seed)
    env = VecEnv(cfg.model, cfg.task, cfg.curriculum, cfg.run.n_envs, bc_seed, threads)
    rng = np.random.Generator(np.random.PCG64(bc_seed))
    # the output location does not change what gets produced
    digest = config_digest(cfg.with_overrides({"run.output_dir": "-"}).to_dict())
    demos = collect_demos(env, cfg.bc.expert, cfg.bc.n_demo_steps, rng, config_hash=digest, seed=cfg.run.seed)
    nets = Networks.create(cfg.acppo, tr_seed)
    params, curve = pretrain_actor(nets.actor_spec, nets.actor, demos, cfg.bc, rng)
    demos.save(out / "demos.lfdm")
    save_actor(out / "actor.lfck", params, cfg.acppo.hidden_dims, cfg.task,
               {"demo_count": demos.count, "discarded": demos.discarded, "config_hash": digest})
    with (out / "bc_curve.jsonl").open("w") as fh:
        for rec in curve:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    dump_config(cfg, out / "config.yaml")
    return {"demo_count": demos.count, "discarded": demos.discarded,
            "final_val_loss": curve[-1]["val_loss"] if curve else float("nan")}


def actor_policy(spec: NetSpec, params: dict):
    from .approximator import net_forward

    return lambda obs: net_forward(spec, params, obs)


def run_eval(path, out_dir, cfg: Optional[RunConfig] = None, threads: int = 1) -> dict:
    """Evaluate the actor stored in ``path`` (trainer or actor checkpoint)."""
    meta, arrays = ckpt.load(path)
    if cfg is None:
        from .config import config_from_dict
        cfg = config_from_dict(meta["config"]) if "config" in meta else RunConfig()
    if meta.get("layout_hash") != layout_hash(cfg.task):
        raise ckpt.CheckpointError(f"{path}: observation/action layout does not match this build")
    actor = ckpt.unpack_params("actor", arrays)
    hidden = tuple(meta.get("hidden_dims", cfg.acppo.hidden_dims))
    spec = NetSpec(OBS_DIM, hidden, ACT_DIM)
    r = cfg.run
    reports = evaluate(actor_policy(spec, actor), cfg.model, cfg.task, cfg.curriculum, r.eval_episodes,
                       r.eval_steps, r.eval_vx, r.eval_ee_step, seed=r.seed, budgets=cfg.acppo.budgets,
                       threads=threads)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"checkpoint": str(path), "episodes": r.eval_episodes, "steps": r.eval_steps,
               "cases": [rep.summary() for rep in reports]}
    (out / "eval_report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for i, rep in enumerate(reports):
        write_trace(out / f"trace_case{i + 1}.csv", rep.trace)
    return summary


def write_trace(path, trace: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        n = len(trace[TRACE_COLUMNS[0]])
        for i in range(n):
            w.writerow([repr(float(trace[c][i])) for c in TRACE_COLUMNS])
