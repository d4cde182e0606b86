import json
import math

import numpy as np
import pytest

from bablr.analysis import summarize
from bablr.diagnostics import diagnose
from bablr.io import (
    DataFormatError,
    atomic_write,
    fmt,
    read_dataset_csv,
    read_draws_csv,
    read_heldout_csv,
    read_key_values,
    write_dataset_csv,
    write_diagnostics_json,
    write_draws_csv,
    write_key_values,
    write_summary_csv,
    write_truth_csv,
)
from bablr.sampler import DrawsStore
from bablr.simulate import SIM2_TRUTH, simulate_dataset

pytestmark = pytest.mark.filterwarnings("ignore:.*fewer than 3 observations")


def write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestFmt:
    @pytest.mark.parametrize("x,s", [(True, "1"), (np.bool_(False), "0"), (3, "3"),
                                     (np.int64(-2), "-2"), (0.1, "0.1"), (math.nan, "nan")])
    def test_cases(self, x, s):
        assert fmt(x) == s

    def test_round_trip(self, rng):
        for v in rng.normal(size=100) * 10.0 ** rng.integers(-10, 10, 100):
            assert float(fmt(v)) == v


class TestIngest:
    def test_two_rows_one_subject(self, tmp_path):
        data = read_dataset_csv(write(tmp_path, "subject_id,time,outcome\na,1,0.5\na,2,0.4\n"))
        assert data.n_subjects == 1 and data.subjects[0].n_obs == 2

    def test_unsorted_times_sorted_with_warning(self, tmp_path):
        p = write(tmp_path, "subject_id,time,outcome\na,3,0.3\na,1,0.1\nb,0,0\nb,1,1\nb,2,2\n")
        with pytest.warns(UserWarning, match="sorted within 1 subject"):
            data = read_dataset_csv(p)
        np.testing.assert_array_equal(data.subjects[0].times, [1.0, 3.0])
        np.testing.assert_array_equal(data.subjects[0].outcomes, [0.1, 0.3])

    def test_header_only(self, tmp_path):
        with pytest.raises(DataFormatError, match="empty dataset"):
            read_dataset_csv(write(tmp_path, "subject_id,time,outcome\n"))

    def test_no_header(self, tmp_path):
        with pytest.raises(DataFormatError, match="no header"):
            read_dataset_csv(write(tmp_path, ""))

    def test_missing_column(self, tmp_path):
        with pytest.raises(DataFormatError, match="outcome"):
            read_dataset_csv(write(tmp_path, "subject_id,time\na,1\n"))

    def test_malformed_rows_reported_with_line_numbers(self, tmp_path):
        p = write(tmp_path, "subject_id,time,outcome\na,1,0.5\na,x,0.4\n,2,1\nb,3\nb,1,inf\n")
        with pytest.raises(DataFormatError) as err:
            read_dataset_csv(p)
        msg = str(err.value)
        for line in (3, 4, 5, 6):
            assert f"line {line}:" in msg
        assert "line 2:" not in msg

    def test_extra_columns_and_order(self, tmp_path):
        p = write(tmp_path, "site,outcome,subject_id,time\nx,1.5,b,0\nx,2.5,a,0\nx,3.5,b,1\n")
        data = read_dataset_csv(p)
        assert data.ids == ["b", "a"]
        np.testing.assert_array_equal(data.subjects[0].outcomes, [1.5, 3.5])

    def test_dataset_round_trip(self, tmp_path):
        data, _ = simulate_dataset(SIM2_TRUTH, 12, seed=3)
        p = tmp_path / "d.csv"
        write_dataset_csv(p, data)
        back = read_dataset_csv(p)
        assert back.ids == data.ids
        for a, b in zip(data.subjects, back.subjects):
            np.testing.assert_array_equal(a.times, b.times)
            np.testing.assert_array_equal(a.outcomes, b.outcomes)
        held = read_heldout_csv(p)
        assert len(held) == data.n_obs and held[0][0] == data.ids[0]


class TestDraws:
    def _store(self, rng):
        stats = {
            "divergent": rng.random((2, 5)) < 0.3,
            "treedepth": rng.integers(1, 6, (2, 5)),
            "accept_stat": rng.random((2, 5)),
            "n_leapfrog": rng.integers(1, 60, (2, 5)),
        }
        return DrawsStore(rng.normal(size=(2, 5, 3)), ["beta1_0", "u1[a,b]", "u1[c]"], stats)

    def test_round_trip(self, tmp_path, rng):
        store = self._store(rng)
        p = tmp_path / "draws.csv"
        write_draws_csv(p, store)
        back = read_draws_csv(p)
        assert back.names == store.names
        np.testing.assert_array_equal(back.draws, store.draws)
        for k, v in store.stats.items():
            np.testing.assert_array_equal(back.stats[k], v)
        assert back.stats["divergent"].dtype == bool

    def test_layout(self, tmp_path, rng):
        p = tmp_path / "draws.csv"
        write_draws_csv(p, self._store(rng))
        lines = p.read_text().splitlines()
        assert lines[0] == "# bablr-draws/1"
        assert lines[1].startswith('chain,iteration,beta1_0,"u1[a,b]",u1[c],')
        assert len(lines) == 2 + 10

    def test_schema_mismatch(self, tmp_path):
        p = write(tmp_path, "# bablr-draws/0\nchain,iteration,a\n0,0,1\n", "d.csv")
        with pytest.raises(DataFormatError, match="schema"):
            read_draws_csv(p)

    @pytest.mark.parametrize("body", [
        "x,y,a\n0,0,1\n",
        "chain,iteration,a\n",
        "chain,iteration,a\n0,0,q\n",
        "chain,iteration,a\n0,0,1\n1,0,1\n1,1,1\n",
    ])
    def test_bad_bodies(self, tmp_path, body):
        with pytest.raises(DataFormatError):
            read_draws_csv(write(tmp_path, "# bablr-draws/1\n" + body, "d.csv"))


class TestReports:
    def test_summary_and_diagnostics(self, tmp_path, rng):
        store = DrawsStore(rng.normal(size=(2, 20, 2)), ["a", "b"],
                           {"divergent": np.zeros((2, 20), bool)})
        write_summary_csv(tmp_path / "s.csv", summarize(store))
        rows = (tmp_path / "s.csv").read_text().splitlines()
        assert rows[0] == "parameter,median,lower95,upper95,mean,sd" and len(rows) == 3
        write_diagnostics_json(tmp_path / "d.json", diagnose(store))
        d = json.loads((tmp_path / "d.json").read_text())
        assert set(d["rhat"]) == {"a", "b"} and d["divergences"] == 0

    def test_truth(self, tmp_path):
        _, truth = simulate_dataset(SIM2_TRUTH, 3, seed=1)
        write_truth_csv(tmp_path / "t.csv", truth)
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[1].startswith("beta1_0,")
        assert sum(line.startswith("rho_") for line in lines) == 6
        assert sum(line.startswith("u") for line in lines) == 12


class TestKeyValues:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "c.txt"
        write_key_values(p, [("chains", 2), ("prior.sigma_u2", "lognormal(0,0.2)")])
        assert dict(read_key_values(p)) == {"chains": "2", "prior.sigma_u2": "lognormal(0,0.2)"}

    @pytest.mark.parametrize("text,match", [
        ("version = 2\n", "version 2"),
        ("chains = 1\n", "missing 'version'"),
        ("version = 1\na = 1\na = 2\n", "duplicate"),
        ("version = 1\njunk\n", "key = value"),
        ("version = 1\n= 3\n", "empty key"),
    ])
    def test_rejects(self, tmp_path, text, match):
        with pytest.raises(DataFormatError, match=match):
            read_key_values(write(tmp_path, text, "c.txt"))

    def test_multiline_value(self, tmp_path):
        with pytest.raises(ValueError):
            write_key_values(tmp_path / "c.txt", [("a", "x\ny")])

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        atomic_write(tmp_path / "f.txt", "hello")
        assert [p.name for p in tmp_path.iterdir()] == ["f.txt"]
