import io

import numpy as np
import pytest

from hmmdrop.errors import InconsistentRow, InvalidDropout, InvalidInput, ParseError
from hmmdrop.panel import (PanelDataset, SubjectRecord, missingness_summary, parse_long_csv,
                           to_long_csv)
from hmmdrop.simulate import default_scenario, generate_panel

from oracles import random_panel

SCHEMA = {"id": "id", "time": "t", "drop": "d", "y": ["y"]}


def parse(text, schema=SCHEMA):
    return parse_long_csv(io.StringIO(text), schema)


def test_minimal_panel():
    data = parse("id,t,d,y\na,1,0,1.0\na,2,1,NA\n")
    assert data.n == 1 and data.r == 1
    assert data[0].dropout.tolist() == [False, True]
    assert data[0].y[0, 0] == 1.0 and np.isnan(data[0].y[1, 0])


def test_rows_sorted_by_time_and_empty_token_missing():
    data = parse("id,t,d,y\na,2,0,\na,1,0,3\n")
    assert data[0].y[0, 0] == 3.0 and np.isnan(data[0].y[1, 0])


def test_inconsistent_row():
    with pytest.raises(InconsistentRow):
        parse("id,t,d,y\na,1,0,1\na,2,1,3.2\n")


def test_dropout_errors():
    with pytest.raises(InvalidDropout):
        parse("id,t,d,y\na,1,1,NA\n")
    with pytest.raises(InvalidDropout) as err:
        parse("id,t,d,y\na,1,0,1\na,2,1,NA\na,3,0,2\n")
    assert err.value.t == 3 and err.value.subject == "a"


def test_parse_errors_carry_line():
    with pytest.raises(ParseError) as err:
        parse("id,t,d,y\na,1,0,1\na,2,0,abc\n")
    assert err.value.line == 3
    with pytest.raises(ParseError):
        parse("id,t,d,y\na,1,2,1\n")


def test_missing_covariate_rejected():
    schema = dict(SCHEMA, x=["x"])
    with pytest.raises(InvalidInput):
        parse("id,t,d,y,x\na,1,0,1,NA\n", schema)


def test_time_gaps_rejected():
    with pytest.raises(InvalidInput):
        parse("id,t,d,y\na,1,0,1\na,3,0,2\n")


def test_unbalanced_panel_preserved():
    rows = ["id,t,d,y"]
    rows += [f"a,{t},0,{t}" for t in range(1, 4)]
    rows += [f"b,{t},0,{t}" for t in range(1, 6)]
    data = parse("\n".join(rows) + "\n")
    assert data.n == 2
    assert [s.T for s in data.subjects] == [3, 5]
    pad = data.padded
    assert pad.Y.shape == (2, 5, 1)
    assert pad.present.sum(axis=1).tolist() == [3, 5]


def test_round_trip_is_exact():
    rng = np.random.default_rng(2)
    data = random_panel(rng, 8, 5, 3, p=2, vary_T=True)
    text = to_long_csv(data)
    back = parse_long_csv(io.StringIO(text), {"y": "y1|y2|y3", "x": ["x1", "x2"]})
    assert to_long_csv(back) == text
    for a, b in zip(data.subjects, back.subjects):
        assert np.array_equal(a.y, b.y, equal_nan=True)
        assert np.array_equal(a.dropout, b.dropout)
        assert np.array_equal(a.x, b.x)


def test_record_invariants():
    with pytest.raises(InvalidInput):
        SubjectRecord("a", np.zeros((2, 1)), [False])
    with pytest.raises(InvalidInput):
        SubjectRecord("a", [[np.inf]], [False])
    with pytest.raises(InvalidInput):
        SubjectRecord("a", [[1.0]], [False], x=[[np.nan]])
    with pytest.raises(InvalidInput):
        PanelDataset((SubjectRecord("a", [[1.0]], [False]),
                      SubjectRecord("b", [[1.0, 2.0]], [False])))
    with pytest.raises(InvalidInput):
        PanelDataset(())


def test_subset_repeats_subjects():
    rng = np.random.default_rng(0)
    data = random_panel(rng, 4, 3, 2)
    sub = data.subset([1, 1, 3])
    assert sub.n == 3 and sub[0] is sub[1] is data[1]


def test_missingness_summary_examples():
    full = PanelDataset((SubjectRecord("a", [[1.0, 2.0], [3.0, 4.0]], [False, False]),))
    s = missingness_summary(full)
    assert not s.dropout_rate.any() and not s.intermittent_rate.any()
    assert s.fully_missing_occasions == 0

    one = PanelDataset((SubjectRecord("a", [[1.0], [np.nan]], [False, True]),))
    assert missingness_summary(one).dropout_rate.tolist() == [0.0, 1.0]

    gap = PanelDataset((SubjectRecord("a", [[np.nan, np.nan], [1.0, np.nan]], [False, False]),))
    s = missingness_summary(gap)
    assert s.fully_missing_occasions == 1
    assert s.intermittent_rate.tolist() == [0.5, 1.0]


def test_missingness_rate_of_generator():
    spec = default_scenario(3, 1000, 0.25)
    data = generate_panel(spec, 0)
    s = missingness_summary(data)
    pad = data.padded
    # oracle: count the masked cells on substantive occasions directly
    subst = pad.substantive
    counted = (~pad.obs & subst[..., None]).sum() / (subst.sum() * data.r)
    assert s.intermittent_rate.mean() == pytest.approx(counted, abs=1e-12)
    assert np.all(np.abs(s.intermittent_rate - 0.25) < 0.02)
