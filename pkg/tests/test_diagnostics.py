import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from contentinject.denoiser import DenoiserConfig, init_params
from contentinject.diagnostics import (
    FeatureTrace,
    homo_hetero,
    pearson,
    read_trace_csv,
    record_trace,
    write_report_csv,
    write_trace_csv,
)
from contentinject.errors import ContractError, DegenerateInputError
from contentinject.schedule import make_plan, make_schedule


class TestPearson:
    def test_hand_computed(self):
        # cov = 1.0, var_x = var_y = 1.25 (population) -> 0.8
        assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)

    def test_perfect_linear(self):
        xs = [0.3, 1.7, -2.0, 5.5]
        assert pearson(xs, [2 * x + 1 for x in xs]) == 1.0
        assert pearson(xs, [-x for x in xs]) == -1.0

    def test_zero_variance(self):
        with pytest.raises(DegenerateInputError):
            pearson([1, 2, 3], [4, 4, 4])

    def test_too_short(self):
        with pytest.raises(ContractError):
            pearson([1, 2], [2, 1])

    @given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=3, max_size=40))
    @settings(max_examples=200, deadline=None)
    def test_matches_scipy(self, pts):
        x, y = np.array(pts).T
        if np.ptp(x) < 1e-6 or np.ptp(y) < 1e-6:
            return
        r = pearson(x, y)
        assert -1.0 <= r <= 1.0
        assert r == pytest.approx(stats.pearsonr(x, y)[0], abs=1e-9)


def _trace(h, g):
    tr = FeatureTrace()
    for t in (900, 500):
        for i, (hv, gv) in enumerate(zip(h, g)):
            tr.add(i, t, hv, gv)
    return tr


class TestFeatureTrace:
    def test_duplicate_rejected(self):
        tr = FeatureTrace()
        tr.add(0, 10, 1.0, [1.0])
        with pytest.raises(ContractError, match="duplicate"):
            tr.add(0, 10, 2.0, [1.0])

    def test_negative_norm_rejected(self):
        with pytest.raises(ContractError):
            FeatureTrace().add(0, 10, -1.0, [1.0])


class TestHomoHetero:
    def test_g_equals_h(self):
        h = [1.0, 2.5, 0.7, 3.1, 2.2]
        rep = homo_hetero(_trace(h, [[v, v] for v in h]))
        assert len(rep.rows) == 4
        assert all(r.r_homo == 1.0 for r in rep.rows)

    def test_independent_norms_500(self):
        rng = np.random.default_rng(123)
        h = rng.gamma(4.0, size=500)
        g = rng.gamma(4.0, size=500)
        rep = homo_hetero(_trace(h, g[:, None]))
        oracle = np.corrcoef(np.roll(h, -1), g)[0, 1]
        for r in rep.rows:
            assert r.r_hetero == pytest.approx(oracle, abs=1e-12)
            assert abs(r.r_hetero) < 0.15
            assert r.n == 500

    def test_shift_zero_degenerates_with_warning(self):
        rng = np.random.default_rng(0)
        h, g = rng.random(6), rng.random((6, 2))
        with pytest.warns(RuntimeWarning, match="pairing_shift=0"):
            rep = homo_hetero(_trace(h, g), pairing_shift=0)
        assert all(r.r_hetero == r.r_homo for r in rep.rows)

    def test_needs_three_samples(self):
        with pytest.raises(ContractError, match="at least 3"):
            homo_hetero(_trace([1.0, 2.0], [[1.0], [2.0]]))

    def test_custom_shift(self):
        rng = np.random.default_rng(4)
        h, g = rng.random(9), rng.random(9)
        rep = homo_hetero(_trace(h, g[:, None]), pairing_shift=3)
        assert rep.rows[0].r_hetero == pytest.approx(np.corrcoef(np.roll(h, -3), g)[0, 1], abs=1e-12)

    def test_insertion_order_irrelevant(self):
        rng = np.random.default_rng(5)
        h, g = rng.random(8), rng.random((8, 3))
        a = homo_hetero(_trace(h, g))
        tr = FeatureTrace()
        for i in rng.permutation(8):
            tr.add(int(i), 900, h[i], g[i])
        b = homo_hetero(tr)
        assert [(r.r_homo, r.r_hetero) for r in b.rows] == [
            (r.r_homo, r.r_hetero) for r in a.rows if r.t == 900
        ]

    def test_cyclic_relabelling_invariant(self):
        rng = np.random.default_rng(6)
        h, g = rng.random(7), rng.random((7, 1))
        a = homo_hetero(_trace(h, g))
        b = homo_hetero(_trace(np.roll(h, 2), np.roll(g, 2, axis=0)))
        for ra, rb in zip(a.rows, b.rows):
            assert ra.r_homo == pytest.approx(rb.r_homo, abs=1e-12)
            assert ra.r_hetero == pytest.approx(rb.r_hetero, abs=1e-12)

    def test_gap_window(self):
        h = [1.0, 2.5, 0.7, 3.1, 2.2]
        rep = homo_hetero(_trace(h, [[v] for v in h]))
        r_het = pearson(np.roll(h, -1), h)
        assert rep.gap(800) == pytest.approx(1.0 - r_het, abs=1e-12)
        with pytest.raises(ContractError):
            rep.gap(950)


TINY = DenoiserConfig(resolution=8, widths=(8, 16), bottleneck_channels=16, temb_dim=16)


class TestRecordAndFiles:
    @pytest.fixture(scope="class")
    @staticmethod
    def trace():
        model = init_params(TINY, seed=1)
        x_T = np.random.default_rng(0).standard_normal((5,) + TINY.image_shape).astype(np.float32)
        return record_trace(x_T, model, make_schedule(), make_plan(1000, 5), batch_size=2)

    def test_one_row_per_step_and_level(self, trace):
        assert trace.timesteps() == [1000, 800, 600, 400, 200]
        assert trace.n_levels() == 2
        rep = homo_hetero(trace)
        assert sorted((r.t, r.level) for r in rep.rows) == sorted(
            (t, lv) for t in trace.timesteps() for lv in range(2)
        )
        assert all(-1 <= r.r_homo <= 1 and r.n == 5 for r in rep.rows)

    def test_batching_does_not_change_norms(self, trace):
        model = init_params(TINY, seed=1)
        x_T = np.random.default_rng(0).standard_normal((5,) + TINY.image_shape).astype(np.float32)
        full = record_trace(x_T, model, make_schedule(), make_plan(1000, 5), batch_size=32)
        for key, (h, g) in trace.entries.items():
            assert full.entries[key][0] == pytest.approx(h, rel=1e-5)

    def test_trace_csv_round_trip(self, trace, tmp_path):
        path = tmp_path / "trace.csv"
        write_trace_csv(trace, path)
        assert path.read_text().splitlines()[0] == "sample_id,t,level,h_norm,g_norm"
        assert read_trace_csv(path).entries == trace.entries

    def test_report_csv(self, trace, tmp_path):
        path = tmp_path / "report.csv"
        rep = homo_hetero(trace)
        write_report_csv(rep, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,level,r_homo,r_hetero,n"
        assert len(lines) == 1 + len(rep.rows)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ContractError, match="header"):
            read_trace_csv(path)
