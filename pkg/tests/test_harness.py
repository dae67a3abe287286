import json
from dataclasses import replace

import numpy as np
import pytest

from schedguard import cli
from schedguard.agents import params_fingerprint
from schedguard.env import ConflictGraph, EnvConfig, reset
from schedguard.harness import (Agent, AGENT_KINDS, ExperimentConfig,
                                build_config, calibrate_density,
                                parse_config_file, run_cell, run_episode,
                                run_experiment, run_slot, train_policy)
from schedguard.safety import BudgetConfig, BudgetState
from schedguard.seeding import cell_stream, episode_seed


def greedy_agent(seed=0):
    return Agent(kind="greedy", rng=np.random.default_rng(seed))


def fixed_state(queues, edges, n_channels=2, arrival=0.0):
    cfg = EnvConfig(n_devices=len(queues), n_channels=n_channels,
                    arrival_prob=arrival, slots_per_episode=100)
    state = reset(cfg, 1)
    state.queues[:] = queues
    state.graph = ConflictGraph.from_edges(len(queues), edges)
    return state


class TestRunSlot:
    BUDGET = BudgetConfig()

    def test_proactive_safe_singleton_passes(self):
        state = fixed_state([1, 0, 0, 0], edges=[(0, 1)])
        d, out, budget = run_slot("proactive", greedy_agent(), state,
                                  BudgetState(8.0), self.BUDGET)
        assert d.proposal == (0,) and d.executed == (0,)
        assert not d.eb_blocked and out.served == 1
        assert budget.beta == 7.0  # neutral charge

    def test_proactive_unsafe_pair_corrected_not_gated(self):
        # Corrected to a singleton, and singletons bypass the budget gate
        # even below the threshold; the interception is still recorded.
        state = fixed_state([5, 4, 0, 0], edges=[(0, 1)])
        d, out, budget = run_slot("proactive", greedy_agent(), state,
                                  BudgetState(4.0), self.BUDGET)
        assert d.certificate.verdict == "corrected"
        assert d.executed == (0,) and not d.eb_blocked
        assert d.action_class == "risky"
        assert budget.beta == 0.0  # 4 - 4, no recovery off the gate

    def test_unconstrained_executes_conflicts(self):
        state = fixed_state([5, 4, 0, 0], edges=[(0, 1)])
        d, out, budget = run_slot("unconstrained", greedy_agent(), state,
                                  BudgetState(8.0), self.BUDGET)
        assert d.executed == (0, 1)
        assert out.violation
        assert d.certificate is None and budget.beta == 8.0

    def test_reactive_projects_before_execution(self):
        state = fixed_state([5, 4, 0, 0], edges=[(0, 1)])
        d, out, _ = run_slot("reactive", greedy_agent(), state,
                             BudgetState(8.0), self.BUDGET)
        assert d.certificate.verdict == "corrected"
        assert d.executed == (0,) and not out.violation

    def test_unknown_system_rejected(self):
        state = fixed_state([1, 0], edges=[], n_channels=1)
        with pytest.raises(ValueError):
            run_slot("hybrid", greedy_agent(), state, BudgetState(8.0),
                     self.BUDGET)


def small_config(**kw):
    env = EnvConfig(slots_per_episode=kw.pop("slots", 200))
    return ExperimentConfig(env=env, **kw)


class TestRunEpisode:
    def test_no_arrivals_no_throughput(self):
        cfg = ExperimentConfig(env=EnvConfig(arrival_prob=0.0,
                                             slots_per_episode=50))
        for system in ("unconstrained", "reactive", "proactive"):
            m, _ = run_episode(cfg, system, greedy_agent(), 4)
            assert m.throughput == 0
            assert m.n_decisions == 50

    def test_unconstrained_saturates_at_full_load(self):
        cfg = ExperimentConfig(env=EnvConfig(arrival_prob=1.0))
        es = episode_seed(cfg.env.seed, "unconstrained", 1.0, 11, "eval", 0)
        m, _ = run_episode(cfg, "unconstrained", greedy_agent(), es)
        assert 3900 <= m.throughput <= 4000

    def test_proactive_tight_budget_near_slot_count(self):
        cfg = ExperimentConfig(env=EnvConfig(arrival_prob=1.0))
        es = episode_seed(cfg.env.seed, "proactive", 1.0, 11, "eval", 0)
        m, _ = run_episode(cfg, "proactive", greedy_agent(), es)
        assert 1000 <= m.throughput <= 1012
        assert m.violations == 0

    def test_trace_dump_is_line_delimited_json(self, tmp_path):
        cfg = small_config(slots=20)
        path = tmp_path / "trace.jsonl"
        with open(path, "w") as fh:
            run_episode(cfg, "proactive", greedy_agent(), 9, trace=fh)
        lines = path.read_text().splitlines()
        assert len(lines) == 20
        first = json.loads(lines[0])
        assert first["slot"] == 0 and "executed" in first and "beta_after" in first

    def test_transitions_collected_for_learner(self):
        cfg = small_config(slots=30, agent_kind="ppo", train_updates=0)
        params = train_policy(cfg, "unconstrained", 11)
        agent = Agent(kind="ppo", rng=np.random.default_rng(0), params=params)
        m, transitions = run_episode(cfg, "unconstrained", agent, 5,
                                     collect_transitions=True)
        assert len(transitions) == 30
        assert transitions[-1].done and not transitions[0].done
        assert all(t.log_prob <= 0.0 for t in transitions)


class TestRunExperiment:
    def test_single_cell_shape(self, tmp_path):
        cfg = ExperimentConfig(systems=("unconstrained",), lambdas=(1.0,),
                               seeds=(11,))
        (cells_path, agg_path), failures = run_experiment(cfg, tmp_path)
        assert failures == []
        lines = cells_path.read_text().splitlines()
        assert len(lines) == 1 + 5  # header + 5 evaluation episodes
        agg_lines = agg_path.read_text().splitlines()
        assert len(agg_lines) == 1 + 5  # one group, one row per metric

    def test_repeat_runs_byte_identical(self, tmp_path):
        cfg = ExperimentConfig(systems=("proactive",), lambdas=(0.4,),
                               seeds=(11, 23), eval_episodes=2,
                               env=EnvConfig(slots_per_episode=150))
        (a_cells, a_agg), _ = run_experiment(cfg, tmp_path / "a")
        (b_cells, b_agg), _ = run_experiment(cfg, tmp_path / "b")
        assert a_cells.read_bytes() == b_cells.read_bytes()
        assert a_agg.read_bytes() == b_agg.read_bytes()

    def test_cells_are_order_independent(self, tmp_path):
        env = EnvConfig(slots_per_episode=120)
        full = ExperimentConfig(env=env, systems=("reactive", "proactive"),
                                lambdas=(0.4,), seeds=(11, 23), eval_episodes=2)
        sub = ExperimentConfig(env=env, systems=("proactive",),
                               lambdas=(0.4,), seeds=(23,), eval_episodes=2)
        (full_cells, _), _ = run_experiment(full, tmp_path / "full")
        (sub_cells, _), _ = run_experiment(sub, tmp_path / "sub")
        full_rows = set(full_cells.read_text().splitlines()[1:])
        sub_rows = sub_cells.read_text().splitlines()[1:]
        assert sub_rows and all(row in full_rows for row in sub_rows)

    def test_evaluation_does_not_mutate_policy(self):
        cfg = small_config(slots=50, agent_kind="ppo", train_updates=0)
        params = train_policy(cfg, "unconstrained", 11)
        before = params_fingerprint(params)
        agent = Agent(kind="ppo",
                      rng=cell_stream(cfg.env.seed, "unconstrained", 1.0, 11,
                                      "policy-eval"),
                      params=params)
        for ep in range(3):
            run_episode(cfg, "unconstrained", agent,
                        episode_seed(cfg.env.seed, "unconstrained", 1.0, 11,
                                     "eval", ep))
        assert params_fingerprint(params) == before

    def test_random_agent_runs_all_systems(self, tmp_path):
        cfg = ExperimentConfig(env=EnvConfig(slots_per_episode=100),
                               lambdas=(0.7,), seeds=(11,), eval_episodes=1,
                               agent_kind="random")
        (_, agg_path), failures = run_experiment(cfg, tmp_path)
        assert failures == []
        assert len(agg_path.read_text().splitlines()) == 1 + 3 * 5


class TestCalibrate:
    def test_density_estimate_close(self):
        assert abs(calibrate_density(samples=200) - 0.34) <= 0.03

    def test_deterministic(self):
        assert calibrate_density(samples=50) == calibrate_density(samples=50)


class TestConfigFile:
    def test_parse_and_build(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(
            "# comment\n"
            "systems = proactive, reactive\n"
            "lambdas = 0.4, 1.0\n"
            "seeds = 5\n"
            "slots = 250     # inline comment\n"
            "agent = random\n"
            "beta_max = 12\n"
            "drop_on_violation = true\n")
        cfg = build_config(parse_config_file(path))
        assert cfg.systems == ("proactive", "reactive")
        assert cfg.lambdas == (0.4, 1.0)
        assert cfg.env.slots_per_episode == 250
        assert cfg.budget.beta_max == 12.0
        assert cfg.env.drop_on_violation is True
        assert cfg.agent_kind == "random"

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("jitter = 3\n")
        with pytest.raises(ValueError, match="unknown key"):
            parse_config_file(path)

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("slots 250\n")
        with pytest.raises(ValueError, match="key = value"):
            parse_config_file(path)

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("slots = many\n")
        with pytest.raises(ValueError, match="bad value"):
            parse_config_file(path)


class TestCli:
    def test_run_with_flags(self, tmp_path, capsys):
        rc = cli.main(["run", "--systems", "unconstrained", "--lambdas", "1.0",
                       "--seeds", "11", "--slots", "100", "--out",
                       str(tmp_path / "out"), "--quiet"])
        assert rc == 0
        assert (tmp_path / "out" / "cells.csv").exists()
        assert (tmp_path / "out" / "aggregate.csv").exists()

    def test_flags_override_config_file(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("slots = 100\nlambdas = 0.2\nsystems = reactive\n")
        rc = cli.main(["run", "--config", str(path), "--lambdas", "1.0",
                       "--seeds", "11", "--out", str(tmp_path / "out"),
                       "--quiet"])
        assert rc == 0
        rows = (tmp_path / "out" / "cells.csv").read_text().splitlines()[1:]
        assert all(",1," in r for r in rows)

    def test_unknown_flag_rejected_before_work(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            cli.main(["run", "--frobnicate", "--out", str(tmp_path)])
        assert err.value.code == 2
        assert not (tmp_path / "cells.csv").exists()

    def test_malformed_config_exits_nonzero(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("slots = banana\n")
        rc = cli.main(["run", "--config", str(path), "--out", str(tmp_path)])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_episode_trace(self, tmp_path, capsys):
        trace = tmp_path / "trace.jsonl"
        rc = cli.main(["episode", "--system", "proactive", "--arrival", "1.0",
                       "--seed", "11", "--slots", "50", "--trace", str(trace)])
        assert rc == 0
        assert len(trace.read_text().splitlines()) == 50
        assert "throughput=" in capsys.readouterr().out

    def test_calibrate(self, capsys):
        rc = cli.main(["calibrate", "--samples", "100"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "measured density" in out

    def test_gradcheck(self, capsys):
        rc = cli.main(["gradcheck"])
        assert rc == 0
        assert "gradient error" in capsys.readouterr().out
