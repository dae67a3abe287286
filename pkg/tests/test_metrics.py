import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from schedguard.metrics import (AGGREGATE_HEADER, CELLS_HEADER, CellResult,
                                EpisodeMetrics, SlotRecord, aggregate,
                                emit_csv, finalize_episode)


def slot(unmodified=False, unsafe=False, blocked=False, served=0,
         violation=False, idx=0):
    return SlotRecord(slot_index=idx, proposal_size=2,
                      was_unsafe_proposal=unsafe, eb_blocked=blocked,
                      executed_size=1, served=served, violation=violation,
                      beta_after=None, unmodified=unmodified)


def cell(system, lam, seed, ep, thr, aix=0.001):
    m = EpisodeMetrics(throughput=thr, prevented_unsafe=900, eb_blocks=950,
                       aix=aix, violations=0, n_decisions=1000)
    return CellResult(system, lam, seed, ep, m)


class TestFinalizeEpisode:
    def test_single_unmodified_slot_in_thousand(self):
        records = [slot(unmodified=(i == 17), idx=i) for i in range(1000)]
        m = finalize_episode(records)
        assert m.aix == pytest.approx(0.001)
        assert m.n_decisions == 1000

    def test_every_slot_unmodified(self):
        records = [slot(unmodified=True, idx=i) for i in range(50)]
        assert finalize_episode(records).aix == 1.0

    def test_throughput_sums_served(self):
        records = [slot(served=1, idx=i) for i in range(1000)]
        assert finalize_episode(records).throughput == 1000

    def test_counters(self):
        records = [slot(unsafe=True, blocked=True, violation=False, idx=0),
                   slot(unsafe=True, idx=1),
                   slot(violation=True, idx=2)]
        m = finalize_episode(records)
        assert (m.prevented_unsafe, m.eb_blocks, m.violations) == (2, 1, 1)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            finalize_episode([])

    @given(st.lists(st.tuples(st.booleans(), st.booleans(), st.booleans()),
                    min_size=1, max_size=200))
    def test_aix_times_decisions_is_integral(self, flags):
        records = [slot(unmodified=u, unsafe=p, blocked=b, idx=i)
                   for i, (u, p, b) in enumerate(flags)]
        m = finalize_episode(records)
        assert m.aix * m.n_decisions == pytest.approx(round(m.aix * m.n_decisions))
        assert 0.0 <= m.aix <= 1.0
        assert m.prevented_unsafe <= m.n_decisions
        assert m.eb_blocks <= m.n_decisions


class TestAggregate:
    def test_single_cell_zero_std(self):
        stats = aggregate([cell("proactive", 0.4, 11, 0, 1000)])
        s = stats[0]
        assert s.means["throughput"] == 1000.0
        assert s.stds["throughput"] == 0.0
        assert s.n == 1

    def test_sample_std_of_two(self):
        stats = aggregate([cell("reactive", 1.0, 11, 0, 900),
                           cell("reactive", 1.0, 11, 1, 1100)])
        s = stats[0]
        assert s.means["throughput"] == 1000.0
        assert s.stds["throughput"] == pytest.approx(141.42, abs=0.01)

    def test_identical_cells_zero_std(self):
        stats = aggregate([cell("proactive", 0.2, s, e, 1000)
                           for s in (11, 23) for e in range(3)])
        assert all(v == 0.0 for v in stats[0].stds.values())

    def test_groups_sorted_by_system_then_lambda(self):
        stats = aggregate([cell("reactive", 0.4, 11, 0, 1),
                           cell("proactive", 1.0, 11, 0, 1),
                           cell("proactive", 0.2, 11, 0, 1)])
        keys = [(s.system, s.lam) for s in stats]
        assert keys == [("proactive", 0.2), ("proactive", 1.0), ("reactive", 0.4)]

    @given(st.lists(st.integers(0, 4000), min_size=1, max_size=30))
    def test_mean_within_cell_range(self, throughputs):
        cells = [cell("reactive", 0.7, 11, e, t) for e, t in enumerate(throughputs)]
        s = aggregate(cells)[0]
        assert min(throughputs) <= s.means["throughput"] <= max(throughputs)
        assert all(v >= 0.0 for v in s.stds.values())


class TestEmitCsv:
    def test_empty_inputs_give_header_only(self, tmp_path):
        cells_path, agg_path = emit_csv([], [], tmp_path)
        assert cells_path.read_text() == CELLS_HEADER + "\n"
        assert agg_path.read_text() == AGGREGATE_HEADER + "\n"

    def test_one_cell_row_counts(self, tmp_path):
        cells = [cell("proactive", 0.4, 11, 0, 1000)]
        cells_path, agg_path = emit_csv(cells, aggregate(cells), tmp_path)
        assert len(cells_path.read_text().splitlines()) == 2
        # one aggregate row per metric
        assert len(agg_path.read_text().splitlines()) == 1 + 5

    def test_rows_sorted_and_formatted(self, tmp_path):
        cells = [cell("reactive", 1.0, 23, 1, 2500, aix=0.0123456789),
                 cell("proactive", 0.2, 11, 0, 1000)]
        cells_path, _ = emit_csv(cells, aggregate(cells), tmp_path)
        lines = cells_path.read_text().splitlines()
        assert lines[0] == CELLS_HEADER
        assert lines[1].startswith("proactive,0.2,11,0,1000,")
        assert ",0.0123457," in lines[2]  # 6 significant digits

    def test_rerun_is_byte_identical(self, tmp_path):
        cells = [cell("proactive", lam, seed, ep, 1000 + ep)
                 for lam in (0.2, 1.0) for seed in (11, 23) for ep in range(3)]
        stats = aggregate(cells)
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            emit_csv(cells, stats, out)
        assert (a / "cells.csv").read_bytes() == (b / "cells.csv").read_bytes()
        assert (a / "aggregate.csv").read_bytes() == (b / "aggregate.csv").read_bytes()

    def test_write_failure_reports_path(self, tmp_path):
        target = tmp_path / "out"
        target.mkdir()
        (target / "cells.csv").mkdir()  # collide with the output file
        with pytest.raises(OSError, match="cells.csv"):
            emit_csv([], [], target)
