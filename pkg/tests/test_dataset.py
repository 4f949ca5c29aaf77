import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lls.dataset import (
    DataFormatError,
    InestimableCombination,
    NoEligibleRespondents,
    PatternCounter,
    SurveyDesign,
    load_dataset,
    loads_dataset,
    missing_as_category,
    pattern_frequency,
    pattern_order,
    pattern_sum,
    unique_patterns,
    write_dataset,
)

FOUR = np.array([[1, 1], [1, 2], [2, 1], [1, 1]])


def test_design_layout():
    d = SurveyDesign((2, 3, 2))
    assert d.n_questions == 3 and d.n_cells == 7
    assert d.offsets.tolist() == [0, 2, 5]
    assert d.question_of_cell.tolist() == [0, 0, 1, 1, 1, 2, 2]
    assert d.level_of_cell.tolist() == [1, 2, 1, 2, 3, 1, 2]
    assert d.cell(1, 3) == 4


@pytest.mark.parametrize("levels", [(), (2, 1), (0,)])
def test_design_rejects_bad_levels(levels):
    with pytest.raises(ValueError):
        SurveyDesign(levels)


def test_load_two_rows():
    design, rec = loads_dataset("1,2\n2,1\n", SurveyDesign((2, 2)))
    assert rec.tolist() == [[1, 2], [2, 1]]
    assert design.levels == (2, 2)


def test_missing_token_maps_to_zero():
    _, rec = loads_dataset("1,.\n")
    assert rec.tolist() == [[1, 0]]
    _, rec = loads_dataset("1;NA\n", missing_token="NA", delimiter=";")
    assert rec.tolist() == [[1, 0]]


def test_code_out_of_range():
    with pytest.raises(DataFormatError, match="code 3 exceeds L_1=2"):
        loads_dataset("3,1\n", SurveyDesign((2, 2)))


def test_ragged_row():
    with pytest.raises(DataFormatError, match="row 2"):
        loads_dataset("1,2\n1\n")


def test_empty_input():
    with pytest.raises(DataFormatError, match="no records"):
        loads_dataset("")


def test_design_inferred_and_header(tmp_path):
    _, rec = loads_dataset("a,b\n1,3\n2,1\n", header=True)
    assert rec.shape == (2, 2)
    design, _ = loads_dataset("1,3\n1,1\n")
    assert design.levels == (2, 3)


def test_roundtrip_file(tmp_path):
    rec = np.array([[1, 0, 2], [2, 1, 1]])
    path = tmp_path / "d.csv"
    write_dataset(rec, path)
    assert path.read_text() == "1,.,2\n2,1,1\n"
    _, back = load_dataset(path, SurveyDesign((2, 2, 2)))
    assert np.array_equal(back, rec)


def test_pattern_frequency_examples():
    assert pattern_frequency(FOUR, (1, 0)).frequency == 0.75
    assert pattern_frequency(FOUR, (0, 0)).frequency == 1.0
    f = pattern_frequency(np.array([[1, 0], [1, 2], [2, 1]]), (1, 2))
    assert (f.count, f.available, f.frequency) == (1, 2, 0.5)


def test_no_eligible_respondents():
    with pytest.raises(NoEligibleRespondents) as info:
        pattern_frequency(np.array([[1, 0], [2, 0]]), (0, 1))
    assert tuple(info.value.pattern) == (0, 1)


def test_pattern_sum():
    assert pattern_sum((1, 0, 0), (0, 2, 2)).tolist() == [1, 2, 2]
    assert pattern_sum((1, 2, 0), (0, 0, 0)).tolist() == [1, 2, 0]
    with pytest.raises(InestimableCombination):
        pattern_sum((1, 0, 0), (1, 0, 2))


def test_pattern_order():
    assert pattern_order((1, 0, 2)) == 2
    assert pattern_order((0, 0)) == 0


def test_unique_patterns_first_seen_order():
    u, c = unique_patterns(FOUR)
    assert u.tolist() == [[1, 1], [1, 2], [2, 1]]
    assert c.tolist() == [2, 1, 1]


def test_missing_as_category():
    d, rec = missing_as_category(SurveyDesign((2, 3)), np.array([[0, 1], [2, 0]]))
    assert d.levels == (3, 4)
    assert rec.tolist() == [[3, 1], [2, 4]]


records_strategy = st.integers(1, 40).flatmap(
    lambda n: st.lists(st.lists(st.integers(0, 3), min_size=3, max_size=3), min_size=n, max_size=n)
)


@settings(max_examples=60, deadline=None)
@given(records_strategy, st.lists(st.integers(0, 3), min_size=3, max_size=3), st.randoms())
def test_frequency_properties(rows, pattern, rnd):
    rec = np.array(rows)
    p = np.array(pattern)
    try:
        f = pattern_frequency(rec, p)
    except NoEligibleRespondents:
        return
    assert 0 <= f.frequency <= 1
    # record order does not matter
    perm = list(range(len(rows)))
    rnd.shuffle(perm)
    assert pattern_frequency(rec[perm], p) == f
    # adding a nonzero entry never increases the match count
    zeros = np.flatnonzero(p == 0)
    if zeros.size:
        q = p.copy()
        q[zeros[0]] = 1
        try:
            assert pattern_frequency(rec, q).count <= f.count
        except NoEligibleRespondents:
            pass


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(1, 3), min_size=3, max_size=3), min_size=1, max_size=30))
def test_single_cell_frequencies_sum_to_one(rows):
    rec = np.array(rows)
    for j in range(3):
        total = 0.0
        for l in (1, 2, 3):
            p = np.zeros(3, dtype=int)
            p[j] = l
            total += pattern_frequency(rec, p).frequency
        assert abs(total - 1) < 1e-12


def test_counter_batched_queries_match_direct_counts():
    rng = np.random.default_rng(3)
    design = SurveyDesign((2, 3, 2, 2))
    rec = np.column_stack([rng.integers(0, L + 1, size=200) for L in design.levels])
    pc = PatternCounter(rec, design)
    p = np.array([1, 0, 2, 0])
    ext, avail = pc.extension_frequencies(p)
    for j in (1, 3):
        for level in range(1, design.levels[j] + 1):
            q = p.copy()
            q[j] = level
            f = pattern_frequency(rec, q)
            c = design.cell(j, level)
            assert ext[c] == pytest.approx(f.frequency)
            assert avail[c] == f.available
    assert np.isnan(ext[design.block(0)]).all()
    full = np.array([1, 2, 2, 1])
    dele, avail = pc.deletion_frequencies(full)
    for j in range(4):
        q = full.copy()
        q[j] = 0
        f = pattern_frequency(rec, q)
        assert dele[j] == pytest.approx(f.frequency)
        assert avail[j] == f.available
