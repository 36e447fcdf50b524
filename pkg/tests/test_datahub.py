import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from equilcast import datahub
from equilcast.datahub import Corpus, MinMaxStats, ResponseCurve
from equilcast.errors import (
    CorpusFormatError,
    DegenerateRange,
    DuplicateId,
    EmptyCorpus,
    MissingCurveFile,
)

T = np.arange(6) * 10.0


def curve(cid, conc=1.0, resp=None, source="simulated"):
    resp = np.linspace(0, 0.01, 6) if resp is None else resp
    return ResponseCurve(cid, T, resp, conc, source)


def corpus_with_strata(sizes, seed=0):
    rng = np.random.default_rng(seed)
    curves = []
    for conc, n in sizes.items():
        for j in range(n):
            curves.append(curve(f"c{conc}_{j}", conc, np.r_[0, rng.uniform(0, 0.05, 5)]))
    return Corpus(curves)


class TestCurve:
    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            curve("x", resp=np.array([0, 1, np.nan, 0, 0, 0.0]))

    def test_rejects_unsorted_times(self):
        with pytest.raises(ValueError):
            ResponseCurve("x", [0.0, 2.0, 1.0], [0.0, 0.0, 0.0])

    def test_prefix(self):
        c = curve("a").prefix(3)
        assert len(c) == 3 and c.times_s[-1] == 20.0


class TestSplit:
    def test_standard_corpus_shape(self):
        # 387 curves over 13 strata of 26-40
        sizes = dict(zip(datahub.STANDARD_CONCENTRATIONS,
                         [26, 27, 28, 29, 30, 30, 30, 30, 30, 31, 32, 24 + 10, 30]))
        assert sum(sizes.values()) == 387
        c = corpus_with_strata(sizes)
        got = Counter(datahub.stratified_split(c, seed=1).values())
        # largest remainder per stratum, computed independently
        want = Counter()
        for n in sizes.values():
            q = [3 * n / 5, n / 5, n / 5]
            base = [int(x) for x in q]
            rem = sorted(range(3), key=lambda i: (-(q[i] - base[i]), i))
            for i in rem[:n - sum(base)]:
                base[i] += 1
            want.update(dict(zip(datahub.SPLITS, base)))
        assert got == want
        assert abs(got["train"] - 232) <= 13 and abs(got["test"] - 78) <= 13

    def test_stratum_of_five(self):
        c = corpus_with_strata({1.0: 5})
        assert Counter(datahub.stratified_split(c).values()) == {"train": 3, "validation": 1, "test": 1}

    def test_determinism(self):
        c = corpus_with_strata({1.0: 20, 2.0: 20})
        assert datahub.stratified_split(c, seed=3) == datahub.stratified_split(c, seed=3)
        assert datahub.stratified_split(c, seed=3) != datahub.stratified_split(c, seed=4)

    def test_empty(self):
        with pytest.raises(EmptyCorpus):
            datahub.stratified_split(Corpus([]))

    def test_small_stratum_warns(self, caplog):
        datahub.stratified_split(corpus_with_strata({1.0: 3}))
        assert "only 3 curves" in caplog.text

    @given(st.lists(st.integers(1, 40), min_size=1, max_size=6), st.integers(0, 1000))
    def test_proportions_per_stratum(self, ns, seed):
        c = corpus_with_strata({float(i + 1): n for i, n in enumerate(ns)})
        s = datahub.stratified_split(c, seed=seed)
        assert set(s) == {x.id for x in c.curves}
        for i, n in enumerate(ns):
            n_train = sum(1 for x in c.curves if x.concentration_mg_per_ml == i + 1 and s[x.id] == "train")
            assert abs(n_train - 0.6 * n) <= 1


class TestNormalizer:
    def make(self):
        c = Corpus([curve("a", resp=np.linspace(0, 0.04, 6)), curve("b", resp=np.linspace(0, 0.02, 6)),
                    curve("t", resp=np.linspace(0, 0.09, 6))],
                   {"a": "train", "b": "train", "t": "test"})
        return c

    def test_train_only(self):
        s = datahub.fit_normalizer(self.make())
        assert (s.min_response, s.max_response) == (0.0, 0.04)

    def test_test_values_not_clipped(self):
        c = self.make()
        s = datahub.fit_normalizer(c)
        out = datahub.apply_normalizer(c.split("test")[0], s)
        assert out.response.max() == pytest.approx(0.09 / 0.04)

    def test_adding_test_curve_keeps_stats(self):
        c = self.make()
        s1 = datahub.fit_normalizer(c)
        c.curves.append(curve("u", resp=np.linspace(-5, 5, 6)))
        c.splits["u"] = "test"
        assert datahub.fit_normalizer(c) == s1

    @given(st.floats(-10, 10), st.floats(0.1, 10))
    def test_mutating_non_train_is_invisible(self, shift, scale):
        c = self.make()
        s1 = datahub.fit_normalizer(c)
        c.curves[2] = curve("t", resp=np.linspace(0, 0.09, 6) * scale + shift)
        assert datahub.fit_normalizer(c) == s1

    def test_degenerate(self):
        c = Corpus([curve("a", resp=np.zeros(6))], {"a": "train"})
        with pytest.raises(DegenerateRange):
            datahub.fit_normalizer(c)

    def test_forward_inverse(self):
        s = MinMaxStats(-0.01, 0.03)
        assert s.forward(-0.01) == 0 and s.forward(0.03) == 1
        assert s.forward(0.01) == pytest.approx(0.5)
        x = np.random.default_rng(0).normal(0, 1, 100)
        np.testing.assert_allclose(s.inverse(s.forward(x)), x, rtol=0, atol=1e-12)

    def test_bad_direction(self):
        with pytest.raises(ValueError):
            datahub.apply_normalizer(curve("a"), MinMaxStats(0, 1), "sideways")


class TestIO:
    def test_round_trip(self, tmp_path, rng):
        curves = [curve(f"k{i}", c, np.r_[0, rng.normal(0, 1, 5)]) for i, c in enumerate([0.002, 40.0, 0.1])]
        c = Corpus(curves, {"k0": "train", "k1": "test"})
        datahub.save_corpus(c, tmp_path)
        back = datahub.load_corpus(tmp_path)
        assert back.curves == c.curves
        assert back.splits == c.splits

    def test_missing_file_names_id(self, tmp_path):
        datahub.save_corpus(Corpus([curve("gone")]), tmp_path)
        (tmp_path / "gone.csv").unlink()
        with pytest.raises(MissingCurveFile, match="gone"):
            datahub.load_corpus(tmp_path)

    def test_duplicate_ids(self, tmp_path):
        datahub.save_corpus(Corpus([curve("a")]), tmp_path)
        m = json.loads((tmp_path / "manifest.json").read_text())
        (tmp_path / "manifest.json").write_text(json.dumps(m + m))
        with pytest.raises(DuplicateId):
            datahub.load_corpus(tmp_path)
        with pytest.raises(DuplicateId):
            Corpus([curve("a"), curve("a")])

    def test_bad_row_reports_line(self, tmp_path):
        datahub.save_corpus(Corpus([curve("a")]), tmp_path)
        p = tmp_path / "a.csv"
        lines = p.read_text().splitlines()
        lines[3] = "20.0,oops"
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(CorpusFormatError, match=r"a\.csv:4"):
            datahub.load_corpus(tmp_path)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("time,resp\n0,0\n")
        with pytest.raises(CorpusFormatError, match=":1"):
            datahub.read_curve_csv(p)

    def test_manifest_schema(self, tmp_path):
        (tmp_path / "manifest.json").write_text('[{"id": "a"}]')
        with pytest.raises(CorpusFormatError, match="missing key"):
            datahub.load_corpus(tmp_path)

    def test_ragged_stack_rejected(self):
        with pytest.raises(CorpusFormatError):
            datahub.stack_curves([curve("a"), curve("b").prefix(4)])


def test_concentration_labels_are_exact_strings():
    assert datahub.concentration_label(0.002) == "0.002"
    assert datahub.concentration_label(40) == "40.0"
    assert len({datahub.concentration_label(c) for c in datahub.STANDARD_CONCENTRATIONS}) == 13
