import json
import subprocess
import sys

import numpy as np
import pytest
import yaml
from hypothesis import HealthCheck, given, settings, strategies as st

from locoforge import checkpoint as ckpt
from locoforge.cli import main
from locoforge.config import ConfigError, RunConfig, config_from_dict, dump_config, load_config
from locoforge.runner import thread_count

TINY = {
    "run": {"n_envs": 4, "horizon": 8, "iterations": 2, "checkpoint_every": 1,
            "eval_episodes": 2, "eval_steps": 20, "eval_vx": [0.5]},
    "acppo": {"hidden_dims": [8], "critic_warmup": 0},
    "bc": {"n_demo_steps": 200, "epochs": 2},
}
METRIC_KEYS = {"iter", "mean_reward", "J_c_arm", "J_c_gripper", "J_c_force", "kl", "entropy", "sigma_level",
               "wallclock", "action_std", "beta"}


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump(TINY))
    return p


def _metrics(path):
    return [json.loads(l) for l in path.read_text().splitlines()]


# -- checkpoint format ------------------------------------------------------------


def test_checkpoint_round_trip_is_byte_identical():
    arrays = {"a": np.arange(6, dtype=float).reshape(2, 3), "i": np.array([1, -2], dtype=np.int64),
              "b": np.array([True, False]), "s": np.array(3.5)}
    raw = ckpt.dumps({"k": [1, 2], "x": 0.1}, arrays)
    meta, back = ckpt.loads(raw)
    assert meta == {"k": [1, 2], "x": 0.1}
    assert all(np.array_equal(arrays[k], back[k]) and back[k].shape == arrays[k].shape for k in arrays)
    assert ckpt.dumps(meta, back) == raw


def test_checkpoint_errors(tmp_path):
    raw = ckpt.dumps({}, {"a": np.zeros(3)})
    with pytest.raises(ckpt.CheckpointError, match="not a checkpoint"):
        ckpt.loads(b"NOPE" + raw[4:])
    bad_version = raw[:4] + (99).to_bytes(2, "little") + raw[6:]
    with pytest.raises(ckpt.CheckpointError, match="version 99"):
        ckpt.loads(bad_version)
    with pytest.raises(ckpt.CheckpointError, match="truncated"):
        ckpt.loads(raw[:-1])
    with pytest.raises(ckpt.CheckpointError, match="trailing"):
        ckpt.loads(raw + b"\0")
    with pytest.raises(ckpt.CheckpointError, match="cannot read"):
        ckpt.load(tmp_path / "missing.lfck")


# -- configuration ----------------------------------------------------------------


def test_config_round_trip(tmp_path):
    cfg = config_from_dict(TINY)
    dump_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg
    assert cfg.run.n_envs == 4 and cfg.acppo.hidden_dims == (8,)


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match=r"^acppo\.learning_rate: unknown key"):
        config_from_dict({"acppo": {"learning_rate": 1e-3}})
    with pytest.raises(ConfigError, match=r"^bogus: unknown key"):
        config_from_dict({"bogus": 1})


def test_bad_values_name_their_key():
    with pytest.raises(ConfigError, match=r"^run\.n_envs"):
        config_from_dict({"run": {"n_envs": 0}})
    with pytest.raises(ConfigError, match=r"^acppo\.gamma"):
        config_from_dict({"acppo": {"gamma": "high"}})
    with pytest.raises(ConfigError, match=r"^run\.seed"):
        RunConfig().with_overrides({"run.seed": -1})


_junk = st.recursive(st.none() | st.booleans() | st.integers() | st.floats() | st.text(max_size=5),
                     lambda c: st.lists(c, max_size=3) | st.dictionaries(st.text(max_size=5), c, max_size=3),
                     max_leaves=6)


@settings(max_examples=80, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(section=st.sampled_from(["run", "acppo", "task", "curriculum", "bc", "model"]), key=st.text(max_size=12),
       value=_junk)
def test_config_fuzz_only_raises_config_error(section, key, value):
    try:
        cfg = config_from_dict({section: {key: value}})
    except ConfigError:
        return
    assert isinstance(cfg, RunConfig)


# -- threads ------------------------------------------------------------------------


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("LOCOFORGE_THREADS", "1")
    assert thread_count(8) == 1
    monkeypatch.setenv("LOCOFORGE_THREADS", "16")
    assert thread_count(8) == 8
    monkeypatch.delenv("LOCOFORGE_THREADS")
    assert thread_count(3) == 3
    monkeypatch.setenv("LOCOFORGE_THREADS", "zero")
    with pytest.raises(ValueError, match="LOCOFORGE_THREADS"):
        thread_count(2)


def test_bad_thread_env_exits_2(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("LOCOFORGE_THREADS", "0")
    assert main(["plot", str(tmp_path / "x.jsonl")]) == 2
    assert "LOCOFORGE_THREADS" in capsys.readouterr().err


# -- commands -----------------------------------------------------------------------


def test_usage_errors_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["train", "--ablate", "no-everything"])
    assert e.value.code == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("acppo:\n  gama: 0.9\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "r")]) == 2
    assert "acppo.gama" in capsys.readouterr().err


def test_train_smoke(tiny_cfg, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_cfg), "--ablate", "no-bc", "--out", str(out)]) == 0
    ms = _metrics(out / "metrics.jsonl")
    assert [m["iter"] for m in ms] == [1, 2]
    assert all(METRIC_KEYS <= set(m) and "barrier_c_arm" in m for m in ms)
    assert (out / "final.lfck").exists() and (out / "ckpt_00002.lfck").exists()
    assert (out / "config.yaml").exists()


def test_no_constraints_logs_no_barrier(tiny_cfg, tmp_path):
    out = tmp_path / "nc"
    assert main(["train", "--config", str(tiny_cfg), "--ablate", "no-constraints", "--out", str(out),
                 "--seed", "3"]) == 0
    ms = _metrics(out / "metrics.jsonl")
    assert all(not any(k.startswith("barrier_") for k in m) for m in ms)


def test_bc_then_warm_started_train_then_eval_then_plot(tiny_cfg, tmp_path, capsys):
    bc_out = tmp_path / "bc"
    assert main(["bc", "--config", str(tiny_cfg), "--out", str(bc_out)]) == 0
    res = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert res["demo_count"] + res["discarded"] == 200
    assert (bc_out / "actor.lfck").exists() and (bc_out / "demos.lfdm").exists()

    run = tmp_path / "run"
    assert main(["train", "--config", str(tiny_cfg), "--warm-start", str(bc_out / "actor.lfck"),
                 "--out", str(run)]) == 0
    capsys.readouterr()

    ev = tmp_path / "eval"
    assert main(["eval", str(run / "final.lfck"), "--out", str(ev)]) == 0
    assert "v_x_cmd=+0.50" in capsys.readouterr().out
    report = json.loads((ev / "eval_report.json").read_text())
    case = report["cases"][0]
    assert all(0.0 <= v <= 1.0 for v in case["violation"].values())
    trace = np.genfromtxt(ev / "trace_case1.csv", delimiter=",", names=True)
    assert np.all(trace["v_x_cmd"] == 0.5)

    figs = tmp_path / "figs"
    assert main(["plot", str(run / "metrics.jsonl"), str(ev / "eval_report.json"),
                 str(ev / "trace_case1.csv"), "--out", str(figs)]) == 0
    assert {p.name for p in figs.iterdir()} == {"training.png", "joint_violation.png", "tracking_trace_case1.png"}


def test_bc_is_deterministic(tiny_cfg, tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["bc", "--config", str(tiny_cfg), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "demos.lfdm").read_bytes() == (tmp_path / "b" / "demos.lfdm").read_bytes()
    assert (tmp_path / "a" / "actor.lfck").read_bytes() == (tmp_path / "b" / "actor.lfck").read_bytes()


def test_eval_rejects_non_checkpoint(tmp_path, capsys):
    junk = tmp_path / "junk.lfck"
    junk.write_bytes(b"hello world, not a checkpoint")
    assert main(["eval", str(junk)]) == 1
    assert "not a checkpoint" in capsys.readouterr().err


def test_plot_rejects_malformed_metrics(tmp_path, capsys):
    bad = tmp_path / "m.jsonl"
    bad.write_text('{"iter": 1, "mean_reward": 0.1}\nnot json\n')
    assert main(["plot", str(bad), "--out", str(tmp_path / "f")]) == 1
    assert "m.jsonl:2" in capsys.readouterr().err
    missing = tmp_path / "n.jsonl"
    missing.write_text('{"iter": 1}\n')
    assert main(["plot", str(missing), "--out", str(tmp_path / "f")]) == 1
    assert main(["plot", str(tmp_path / "x.txt"), "--out", str(tmp_path / "f")]) == 1


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "locoforge", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("bc", "train", "eval", "plot"):
        assert sub in out.stdout
