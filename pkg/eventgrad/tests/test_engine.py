#!/usr/bin/env python3
"""
test_engine.py — Regular and event-triggered training loops

Tests:
- Zero thresholds reproduce the regular trajectory
- Error bound ||x_hat - x|| < delta on every untriggered check
- Loss parity with fewer messages on least squares
- Top-K volume accounting and capped thresholds
- Consensus contraction, determinism, message counts
"""

from __future__ import annotations

import math
import sys
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np

REPO_ROOT = Path(__file__).resolve().parents[2]
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from eventgrad.sim.engine import (
    Algorithm,
    CSV_FIELDS,
    InitSpec,
    RunConfig,
    Simulation,
    StepSizeRule,
    TRACE_FIELDS,
    compare,
    disagreement,
    init_eventgrad,
    run,
    step_eventgrad,
    step_regular,
)
from eventgrad.sim.comm import SendMode
from eventgrad.sim.errors import DimensionError, RunConfigError, TopologyError
from eventgrad.sim.mixing import MixingMatrix, build_ring_mixing
from eventgrad.sim.objectives import LeastSquaresObjective, ObjectiveKind, ObjectiveSpec, make_objectives
from eventgrad.sim.trigger import ScheduleKind, ThresholdPolicy, ThresholdSchedule, TriggerConfig

LS_SPEC = ObjectiveSpec(kind=ObjectiveKind.LEAST_SQUARES, dim=5, samples_per_pe=100, batch_size=16, noise=1.0)
ZERO_TRIGGER = TriggerConfig(policy=ThresholdPolicy.STATIC, delta0=0.0)
SILENT_TRIGGER = TriggerConfig(policy=ThresholdPolicy.STATIC, delta0=math.inf)


def _config(**overrides):
    base = dict(
        n=8,
        objective=LS_SPEC,
        gamma=0.1,
        iterations=100,
        seed=7,
        step_size_rule=StepSizeRule.INVERSE_LIPSCHITZ,
        init=InitSpec(scale=1.0),
    )
    base.update(overrides)
    return RunConfig(**base)


class TestZeroThresholdEquivalence(unittest.TestCase):
    """Every block fires every iteration -> same trajectory as regular."""

    def test_matches_regular(self):
        for n in (4, 8):
            for trigger in (ZERO_TRIGGER, TriggerConfig(schedule=ThresholdSchedule(kind=ScheduleKind.ZERO))):
                with self.subTest(n=n, trigger=trigger.policy.value):
                    cfg = _config(n=n, algorithm=Algorithm.EVENTGRAD, trigger=trigger)
                    event = run(cfg)
                    regular = run(cfg.as_regular())
                    np.testing.assert_allclose(
                        event.final_model.values, regular.final_model.values, rtol=0, atol=1e-12
                    )
                    for a, b in zip(event.rows, regular.rows):
                        self.assertLessEqual(abs(a.loss - b.loss), 1e-12 * max(1.0, abs(b.loss)))
                    self.assertEqual(event.stats.messages_sent, regular.stats.messages_sent)
                    self.assertEqual(event.stats.messages_sent, 100 * 2 * n * 1)

    def test_mlp_blocks(self):
        spec = ObjectiveSpec(kind=ObjectiveKind.MLP, dim=4, samples_per_pe=20, batch_size=5, classes=3, hidden=6)
        cfg = _config(n=4, objective=spec, gamma=0.05, iterations=30,
                      step_size_rule=StepSizeRule.CONSTANT, init=InitSpec(scale=0.1),
                      algorithm=Algorithm.EVENTGRAD, trigger=ZERO_TRIGGER)
        event, regular = run(cfg), run(cfg.as_regular())
        np.testing.assert_array_equal(event.final_model.values, regular.final_model.values)
        self.assertEqual(regular.stats.messages_sent, 30 * 4 * 2 * 4)
        self.assertEqual(event.stats.messages_sent, regular.stats.messages_sent)

    def test_compare_reports_full_traffic(self):
        report = compare(_config(n=4, iterations=20, algorithm=Algorithm.EVENTGRAD, trigger=ZERO_TRIGGER))
        self.assertEqual(report.message_pct, 100.0)
        self.assertEqual(report.volume_pct, 100.0)
        self.assertLessEqual(report.loss_gap_max, 1e-12)


class TestErrorBound(unittest.TestCase):

    def test_full_run_keeps_bound(self):
        cfg = _config(iterations=2000, algorithm=Algorithm.EVENTGRAD, trigger=TriggerConfig(horizon=1.0))
        metrics = run(cfg)
        self.assertEqual(len(metrics.rows), 2000)
        self.assertGreater(metrics.untriggered_checks, 0)
        self.assertLess(metrics.stats.messages_sent, 2000 * 2 * 8)

    def test_windows_hold_last_sent(self):
        sim = Simulation.build(_config(n=4, algorithm=Algorithm.EVENTGRAD, trigger=TriggerConfig()))
        state = init_eventgrad(sim.X0, sim.mixing, sim.layout, sim.config.trigger, SendMode())
        for k in range(40):
            step_eventgrad(state, sim.mixing, sim.objectives, sim.gamma, sim.rngs,
                           sim.config.trigger.schedule, SendMode(), k)
            for i in range(4):
                for j in sim.mixing.neighbors(i):
                    np.testing.assert_array_equal(state.windows[i].read(j), state.X_hat[j])
            for i in range(4):
                st = state.triggers[i][0]
                np.testing.assert_array_equal(st.last_sent_value, state.X_hat[i])


class TestStepByStep(unittest.TestCase):

    def test_zero_threshold_matches_every_iteration(self):
        cfg = _config(n=4, iterations=30, algorithm=Algorithm.EVENTGRAD, trigger=ZERO_TRIGGER)
        reg, evt = Simulation.build(cfg), Simulation.build(cfg)
        X = reg.X0.copy()
        state = init_eventgrad(evt.X0, evt.mixing, evt.layout, ZERO_TRIGGER, SendMode())
        for k in range(30):
            X = step_regular(X, reg.mixing, reg.objectives, reg.gamma, reg.rngs)
            fired = step_eventgrad(state, evt.mixing, evt.objectives, evt.gamma, evt.rngs,
                                   ZERO_TRIGGER.schedule, SendMode(), k)
            with self.subTest(k=k):
                np.testing.assert_array_equal(state.X, X)
                self.assertEqual(fired, 0 if k == 0 else 4)

    def test_two_pe_trace(self):
        # x -> 1/2 (x_hat_0 + x_hat_1) - 1/2 (x_hat_i - 1); the model freezes at 0.5
        # until the cap sqrt(0.75^k) drops under the drift 0.5, first at k = 5
        mixing = MixingMatrix.from_weights([[0.5, 0.5], [0.5, 0.5]])
        objectives = [LeastSquaresObjective(np.array([[1.0]]), np.array([1.0]), batch_size=1)] * 2
        rngs = [np.random.default_rng(0), np.random.default_rng(1)]
        schedule = ThresholdSchedule(kind=ScheduleKind.GEOMETRIC_CAP, alpha=1.0, beta=0.75)
        trigger = TriggerConfig(delta0=10.0, horizon=2.0, schedule=schedule)
        state = init_eventgrad(np.zeros((2, 1)), mixing, objectives[0].layout, trigger, SendMode())
        self.assertEqual(mixing.rho, 0.0)
        self.assertEqual(state.stats.messages_sent, 2)

        fired = [step_eventgrad(state, mixing, objectives, 0.5, rngs, schedule, SendMode(), k) for k in range(5)]
        self.assertEqual(fired, [0, 0, 0, 0, 0])
        np.testing.assert_array_equal(state.X, [[0.5], [0.5]])
        np.testing.assert_array_equal(state.windows[0].read(1), [0.0])
        self.assertEqual(state.untriggered_checks, 8)
        self.assertAlmostEqual(state.triggers[0][0].threshold, math.sqrt(0.75 ** 4), places=12)

        self.assertEqual(step_eventgrad(state, mixing, objectives, 0.5, rngs, schedule, SendMode(), 5), 2)
        for i, j in ((0, 1), (1, 0)):
            np.testing.assert_array_equal(state.windows[i].read(j), [0.5])
            self.assertEqual(state.windows[i].written_iter(j, 0), 5)
            st = state.triggers[i][0]
            self.assertEqual(st.last_sent_iter, 5)
            # slope 0.5 / (5 - 0), times horizon 2
            self.assertAlmostEqual(st.threshold, 0.1 * 2.0, places=15)
        np.testing.assert_array_equal(state.X, [[0.75], [0.75]])
        self.assertEqual(state.stats.messages_sent, 4)

    def test_topk_seed_broadcast_keeps_initial_models(self):
        spec = replace(LS_SPEC, dim=20)
        sim = Simulation.build(_config(n=4, objective=spec, algorithm=Algorithm.EVENTGRAD, trigger=TriggerConfig()))
        state = init_eventgrad(sim.X0, sim.mixing, sim.layout, TriggerConfig(), SendMode(topk_percent=10.0))
        for i in range(4):
            self.assertTrue(state.windows[i].is_seeded())
            for j in sim.mixing.neighbors(i):
                np.testing.assert_array_equal(state.windows[i].read(j), sim.X0[j])
        self.assertEqual(state.stats.scalar_volume, 4 * 2 * 2 * 2)


class TestTracesAndAccuracy(unittest.TestCase):

    MLP_SPEC = ObjectiveSpec(kind=ObjectiveKind.MLP, dim=4, samples_per_pe=20, batch_size=5, classes=3, hidden=6)

    def test_event_traces(self):
        cfg = _config(n=4, objective=self.MLP_SPEC, gamma=0.05, iterations=25, step_size_rule=StepSizeRule.CONSTANT,
                      init=InitSpec(), algorithm=Algorithm.EVENTGRAD, trigger=TriggerConfig(horizon=1.0))
        metrics = run(cfg, record_traces=True)
        self.assertEqual(len(metrics.traces), 25 * 4 * 4)
        self.assertEqual(sum(t.sent for t in metrics.traces), sum(r.events for r in metrics.rows))
        self.assertEqual(set(metrics.trace_records()[0]), set(TRACE_FIELDS))
        for row in metrics.rows:
            thresholds = [t.threshold for t in metrics.traces if t.iter == row.iter]
            self.assertEqual(max(thresholds), row.max_threshold)
        last = metrics.traces[-1]
        self.assertEqual((last.iter, last.pe, last.block), (25, 3, 3))
        self.assertGreaterEqual(metrics.final_accuracy, 0.0)
        self.assertLessEqual(metrics.final_accuracy, 1.0)

    def test_regular_traces(self):
        metrics = run(_config(n=4, iterations=5), record_traces=True)
        self.assertEqual(len(metrics.traces), 5 * 4)
        self.assertTrue(all(t.sent == 1 and t.threshold == 0.0 for t in metrics.traces))
        self.assertIsNone(metrics.final_accuracy)

    def test_traces_off_by_default(self):
        self.assertEqual(run(_config(n=4, iterations=3)).traces, [])

    def test_report_carries_accuracy(self):
        spec = ObjectiveSpec(kind=ObjectiveKind.LOGISTIC, dim=3, samples_per_pe=20, batch_size=5, classes=2)
        report = compare(_config(n=4, objective=spec, iterations=20, algorithm=Algorithm.EVENTGRAD,
                                 trigger=ZERO_TRIGGER)).to_dict()
        self.assertEqual(report["accuracy_regular"], report["accuracy_event"])
        self.assertIsNotNone(report["accuracy_regular"])


class TestParity(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cfg = _config(iterations=2000, algorithm=Algorithm.EVENTGRAD,
                      trigger=TriggerConfig(horizon=1.0, history_len=1))
        cls.report = compare(cfg)

    def test_fewer_messages(self):
        self.assertLess(self.report.message_pct, 100.0)
        self.assertGreater(self.report.message_pct, 0.0)

    def test_final_loss_within_five_percent(self):
        reg = self.report.regular.final_loss
        evt = self.report.event.final_loss
        self.assertLessEqual(abs(evt - reg) / abs(reg), 0.05)

    def test_report_fields(self):
        d = self.report.to_dict()
        self.assertEqual(d["messages_regular"], 2000 * 8 * 2)
        self.assertEqual(d["message_pct"], 100.0 * d["messages_event"] / d["messages_regular"])


class TestTopK(unittest.TestCase):

    def test_volume_is_fifth_of_messages(self):
        spec = replace(LS_SPEC, dim=20)
        cfg = _config(objective=spec, iterations=200, algorithm=Algorithm.EVENTGRAD,
                      trigger=TriggerConfig(), sparsify=10.0)
        report = compare(cfg)
        self.assertAlmostEqual(report.volume_pct, report.message_pct * 0.2, places=9)
        self.assertEqual(report.event.stats.scalar_volume, report.event.stats.messages_sent * 4)

    def test_full_topk_equals_dense(self):
        cfg = _config(n=4, iterations=50, algorithm=Algorithm.EVENTGRAD, trigger=TriggerConfig())
        dense = run(cfg)
        full = run(replace(cfg, sparsify=100.0))
        np.testing.assert_array_equal(dense.final_model.values, full.final_model.values)
        self.assertEqual(dense.stats.messages_sent, full.stats.messages_sent)
        self.assertEqual(full.stats.scalar_volume, 2 * dense.stats.scalar_volume)


class TestCappedThresholds(unittest.TestCase):

    def test_geometric_cap_holds_every_iteration(self):
        alpha, beta = 1.0, 0.9
        trigger = TriggerConfig(delta0=5.0, schedule=ThresholdSchedule(
            kind=ScheduleKind.GEOMETRIC_CAP, alpha=alpha, beta=beta))
        metrics = run(_config(iterations=150, algorithm=Algorithm.EVENTGRAD, trigger=trigger))
        for k, row in enumerate(metrics.rows):
            with self.subTest(k=k):
                self.assertLessEqual(row.max_threshold ** 2, alpha * beta ** k * (1.0 + 1e-12))

    def test_constant_cap(self):
        trigger = TriggerConfig(delta0=5.0, schedule=ThresholdSchedule(kind=ScheduleKind.CONSTANT_CAP, c=0.01))
        metrics = run(_config(iterations=50, algorithm=Algorithm.EVENTGRAD, trigger=trigger))
        self.assertTrue(all(r.max_threshold <= 0.01 for r in metrics.rows))


class TestRegularStep(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.mixing = build_ring_mixing(8)
        cls.objectives = make_objectives(LS_SPEC, 8, np.random.default_rng(0))

    def _rngs(self):
        return [np.random.default_rng(100 + i) for i in range(8)]

    def test_zero_step_equal_states_fixed(self):
        X = np.tile(np.arange(5.0), (8, 1))
        out = step_regular(X, self.mixing, self.objectives, 0.0, self._rngs())
        np.testing.assert_allclose(out, X, atol=1e-12)

    def test_zero_step_consensus_contraction(self):
        X = np.random.default_rng(1).standard_normal((8, 5))
        rngs = self._rngs()
        rho = self.mixing.rho
        for _ in range(30):
            before = disagreement(X)
            X = step_regular(X, self.mixing, self.objectives, 0.0, rngs)
            self.assertLessEqual(disagreement(X), rho ** 2 * before + 1e-12)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            step_regular(np.zeros((8, 4)), self.mixing, self.objectives, 0.1, self._rngs())
        with self.assertRaises(DimensionError):
            step_regular(np.zeros((7, 5)), self.mixing, self.objectives, 0.1, self._rngs())


class TestRuns(unittest.TestCase):

    def test_deterministic(self):
        cfg = _config(iterations=60, algorithm=Algorithm.EVENTGRAD, trigger=TriggerConfig())
        a, b = run(cfg), run(cfg)
        self.assertEqual(a.records(), b.records())
        np.testing.assert_array_equal(a.final_model.values, b.final_model.values)

    def test_workers_do_not_change_results(self):
        cfg = _config(iterations=40, algorithm=Algorithm.EVENTGRAD, trigger=TriggerConfig())
        self.assertEqual(run(cfg).records(), run(replace(cfg, workers=4)).records())

    def test_single_iteration(self):
        metrics = run(_config(n=4, iterations=1))
        self.assertEqual(len(metrics.rows), 1)
        self.assertEqual(metrics.rows[0].iter, 1)
        self.assertEqual(set(metrics.rows[0].as_record()), set(CSV_FIELDS))

    def test_regular_message_count(self):
        metrics = run(_config(iterations=100))
        self.assertEqual(metrics.stats.messages_sent, 100 * 8 * 2 * 1)
        self.assertEqual(metrics.stats.scalar_volume, 100 * 8 * 2 * 5)
        self.assertEqual(metrics.messages(), sorted(metrics.messages()))

    def test_infinite_threshold_only_initial_broadcast(self):
        metrics = run(_config(iterations=50, algorithm=Algorithm.EVENTGRAD, trigger=SILENT_TRIGGER))
        self.assertEqual(metrics.stats.messages_sent, 2 * 8 * 1)
        self.assertEqual([r.events for r in metrics.rows[1:]], [0] * 49)

    def test_eventgrad_never_exceeds_regular(self):
        for trigger in (TriggerConfig(horizon=0.5), TriggerConfig(horizon=2.0, history_len=5)):
            cfg = _config(iterations=200, algorithm=Algorithm.EVENTGRAD, trigger=trigger)
            with self.subTest(horizon=trigger.horizon):
                self.assertLessEqual(run(cfg).stats.messages_sent, run(cfg.as_regular()).stats.messages_sent)

    def test_staleness_keeps_accounting(self):
        cfg = _config(n=4, iterations=30, algorithm=Algorithm.EVENTGRAD, trigger=ZERO_TRIGGER)
        fresh, stale = run(cfg), run(replace(cfg, staleness=1))
        self.assertEqual(fresh.stats.messages_sent, stale.stats.messages_sent)
        self.assertFalse(np.array_equal(fresh.final_model.values, stale.final_model.values))

    def test_self_fresh_variant_runs(self):
        cfg = _config(n=4, iterations=50, algorithm=Algorithm.EVENTGRAD, trigger=TriggerConfig(), self_fresh=True)
        metrics = run(cfg)
        self.assertLess(metrics.final_loss, metrics.initial_loss)

    def test_single_pe_is_sgd(self):
        spec = replace(LS_SPEC, batch_size=LS_SPEC.samples_per_pe)
        metrics = run(_config(n=1, objective=spec, gamma=0.5, iterations=50))
        losses = [metrics.initial_loss] + metrics.losses()
        for prev, cur in zip(losses, losses[1:]):
            self.assertLessEqual(cur, prev + 1e-12)
        self.assertEqual(metrics.stats.messages_sent, 0)

    def test_loss_decreases(self):
        metrics = run(_config(iterations=300))
        self.assertLess(metrics.final_loss, metrics.initial_loss)
        self.assertAlmostEqual(metrics.epochs, 300 / (100 / 16))


class TestRunConfig(unittest.TestCase):

    def test_validation(self):
        bad = [
            dict(gamma=0.0),
            dict(iterations=0),
            dict(n=0),
            dict(staleness=-1),
            dict(workers=0),
            dict(trigger=TriggerConfig()),
            dict(algorithm=Algorithm.EVENTGRAD, sparsify=0.0),
        ]
        for overrides in bad:
            with self.subTest(overrides=overrides):
                with self.assertRaises(RunConfigError):
                    _config(**overrides)

    def test_eventgrad_default_trigger(self):
        cfg = _config(algorithm=Algorithm.EVENTGRAD)
        self.assertEqual(cfg.trigger, TriggerConfig())
        self.assertIsNone(cfg.as_regular().trigger)

    def test_compare_needs_eventgrad(self):
        with self.assertRaises(RunConfigError):
            compare(_config())

    def test_two_pe_ring_rejected(self):
        with self.assertRaises(TopologyError):
            run(_config(n=2, iterations=1))


if __name__ == "__main__":
    unittest.main(verbosity=2)
