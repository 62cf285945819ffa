import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stagetime.io import DataError, csv_text, dump_lines, parse_dataset, parse_lines, write_dataset
from stagetime.model import END_LABEL


def test_end_is_appended():
    ds = parse_lines(['{"id":"p1","actions":["SURG","RTER"],"times":[0,12]}'])
    assert ds.vocab.names == ("SURG", "RTER", END_LABEL)
    seq = ds.sequences[0]
    assert seq.actions.tolist() == [0, 1, 2]
    assert seq.times.tolist() == [0.0, 12.0, 0.0]
    assert seq.id == "p1" and not seq.complete


def test_labels_map_by_first_occurrence():
    ds = parse_lines([
        '{"actions":["B","A"],"times":[0,1]}',
        '{"actions":["C","B"],"times":[0,1],"complete":true}',
    ])
    assert ds.vocab.names == ("B", "A", "C", END_LABEL)
    assert ds.sequences[1].complete
    assert [s.id for s in ds.sequences] == ["0", "1"]


@pytest.mark.parametrize("line,message", [
    ('{"actions":["A"],"times":[3]}', "first interval must be 0"),
    ('{"actions":["A","B"],"times":[0,-1]}', "negative"),
    ('{"actions":["A","B"],"times":[0]}', "2 actions but 1 times"),
    ('{"actions":["A","__END__"],"times":[0,1]}', "reserved"),
    ('{"actions":["A"]}', "missing field"),
    ('{"actions":["A"],"times":[0],"class_hint":-1}', "class_hint"),
    ('{"actions":["A"],"times":[0],"stage_truth":[1]}', "stage_truth"),
    ('not json', "invalid JSON"),
    ('[1, 2]', "JSON object"),
])
def test_parse_errors_carry_line_numbers(line, message):
    with pytest.raises(DataError, match=message) as info:
        parse_lines(['{"actions":["A"],"times":[0]}', line])
    assert str(info.value).startswith("line 2:")


def test_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("\n\n")
    with pytest.raises(DataError, match="empty dataset"):
        parse_dataset(path)


def test_vocabulary_checks():
    ds = parse_lines(['{"actions":["A","B"],"times":[0,1]}'])
    with pytest.raises(DataError, match="unknown action label 'C'"):
        parse_lines(['{"actions":["C"],"times":[0]}'], vocab=ds.vocab)
    ext = parse_lines(['{"actions":["C","A"],"times":[0,2]}'], vocab=ds.vocab, extend_vocab=True)
    assert ext.vocab.names == ("A", "B", "C", END_LABEL)
    assert ext.sequences[0].actions.tolist() == [2, 0, 3]


def test_ground_truth_columns():
    ds = parse_lines(['{"actions":["A","B"],"times":[0,1],"class_hint":1,"stage_truth":[1,2,2]}',
                      '{"actions":["A"],"times":[0],"class_hint":0}'])
    assert ds.labels.tolist() == [1, 0]
    assert ds.stage_truth[0].tolist() == [1, 2, 2] and ds.stage_truth[1] is None
    sub = ds.subset([1])
    assert sub.labels.tolist() == [0] and len(sub) == 1
    assert parse_lines(['{"actions":["A"],"times":[0]}']).labels is None


records = st.lists(
    st.tuples(
        st.lists(st.sampled_from(["x", "y", "z w", "ü"]), min_size=1, max_size=6),
        st.booleans(),
        st.lists(st.one_of(st.integers(0, 50), st.floats(0, 50, allow_nan=False)), min_size=6, max_size=6),
    ),
    min_size=1, max_size=5,
)


@settings(max_examples=40, deadline=None)
@given(recs=records)
def test_ingest_serialize_ingest_is_idempotent(recs):
    lines = []
    for n, (acts, complete, times) in enumerate(recs):
        t = [0] + times[: len(acts) - 1]
        lines.append(json.dumps({"id": f"r{n}", "actions": acts, "times": t, "complete": complete}))
    first = parse_lines(lines)
    text = dump_lines(first.vocab, first.sequences)
    second = parse_lines(text.splitlines())
    assert second.vocab == first.vocab
    assert second.sequences == first.sequences
    assert [s.id for s in second.sequences] == [s.id for s in first.sequences]
    assert dump_lines(second.vocab, second.sequences) == text


def test_write_dataset_round_trip_with_truth(tmp_path):
    ds = parse_lines(['{"id":"a","actions":["A","B"],"times":[0,1.5]}'])
    path = tmp_path / "d.jsonl"
    write_dataset(path, ds.vocab, ds.sequences, classes=[1], stages=[np.array([1, 1, 2])])
    rec = json.loads(path.read_text())
    assert rec == {"id": "a", "actions": ["A", "B"], "times": [0, 1.5], "complete": False,
                   "class_hint": 1, "stage_truth": [1, 1, 2]}
    back = parse_dataset(path)
    assert back.labels.tolist() == [1]


def test_csv_formatting():
    text = csv_text(["a", "b", "c"], [[0.1, np.int64(3), "x"], [np.float64(1 / 3), 2, ""]])
    assert text == "a,b,c\n0.10000000000000001,3,x\n0.33333333333333331,2,\n"
