import numpy as np
import pytest

import scenemix.dataio as dio
import scenemix.features as ft
from scenemix.errors import DataError


def _random_record(rng) -> dio.InteractionRecord:
    n_ev = int(rng.integers(0, 6))
    behavior = tuple(
        (f"i{rng.integers(0, 9)}", f"c{rng.integers(0, 4)}", f"d{rng.integers(0, 4)}",
         f"s{rng.integers(0, 5)}", f"t{rng.integers(0, 3)}", str(rng.integers(0, 8)))
        for _ in range(n_ev))
    return dio.InteractionRecord(
        label=int(rng.integers(0, 2)),
        scenario_id=f"s{rng.integers(0, 5)}",
        user_id=f"u{rng.integers(0, 20)}",
        item_id=f"i{rng.integers(0, 9)}",
        category_id=f"c{rng.integers(0, 4)}",
        destination_id=f"d{rng.integers(0, 4)}",
        timestamp=int(rng.integers(0, 100000)),
        behavior=behavior)


def test_line_roundtrip():
    rng = np.random.default_rng(17)
    for _ in range(200):
        r = _random_record(rng)
        back = dio.parse_record_line(dio.format_record_line(r))
        assert back.label == r.label
        assert back.scenario_id == r.scenario_id
        assert back.user_id == r.user_id
        assert back.item_id == r.item_id
        assert back.category_id == r.category_id
        assert back.destination_id == r.destination_id
        assert back.timestamp == r.timestamp
        assert back.behavior == r.behavior


def test_parse_rejects_wrong_column_count():
    with pytest.raises(DataError, match="8 tab-separated"):
        dio.parse_record_line("1\ts1\tu1\ti1\tc1\td1\t3", 4, "f.tsv")


def test_parse_rejects_bad_label():
    with pytest.raises(DataError, match="label"):
        dio.parse_record_line("2\ts1\tu1\ti1\tc1\td1\t3\t", 1, "f.tsv")


def test_parse_rejects_bad_timestamp():
    with pytest.raises(DataError, match="timestamp"):
        dio.parse_record_line("1\ts1\tu1\ti1\tc1\td1\tnoon\t", 1, "f.tsv")


def test_parse_rejects_short_event():
    with pytest.raises(DataError, match="6 fields"):
        dio.parse_record_line("1\ts1\tu1\ti1\tc1\td1\t3\ti1,c1,d1", 1, "f.tsv")


def test_parse_error_carries_location():
    with pytest.raises(DataError, match=r"logs\.tsv:12"):
        dio.parse_record_line("bad line", 12, "logs.tsv")


def test_empty_behavior_roundtrip():
    r = dio.InteractionRecord(0, "s1", "u1", "i1", "c1", "d1", 9, ())
    line = dio.format_record_line(r)
    assert line.endswith("\t")
    assert dio.parse_record_line(line).behavior == ()


def test_file_roundtrip_and_type_join(tmp_path):
    rng = np.random.default_rng(23)
    records = [_random_record(rng) for _ in range(50)]
    p = tmp_path / "logs.tsv"
    dio.write_records(p, records)
    types = {f"s{k}": f"t{k % 3}" for k in range(5)}
    back = dio.read_records(p, types)
    assert len(back) == len(records)
    for a, b in zip(records, back):
        assert dio.format_record_line(a) == dio.format_record_line(b)
        assert b.scenario_type == types[b.scenario_id]


def test_scenario_types_roundtrip(tmp_path):
    types = {f"s{k}": f"t{k % 4}" for k in range(12)}
    p = tmp_path / "types.tsv"
    dio.write_scenario_types(p, types)
    assert dio.read_scenario_types(p) == types


def _vocab_for(records):
    vals = {
        "user_id": [], "item_id": [], "category_id": [], "destination_id": [],
        "scenario_id": [], "scenario_type": [], "time_bucket": [str(b) for b in range(8)],
    }
    for r in records:
        vals["user_id"].append(r.user_id)
        vals["item_id"].append(r.item_id)
        vals["category_id"].append(r.category_id)
        vals["destination_id"].append(r.destination_id)
        vals["scenario_id"].append(r.scenario_id)
        vals["scenario_type"].append(r.scenario_type or "t0")
        for ev in r.behavior:
            vals["item_id"].append(ev[0])
            vals["category_id"].append(ev[1])
            vals["destination_id"].append(ev[2])
            vals["scenario_id"].append(ev[3])
            vals["scenario_type"].append(ev[4])
    return ft.FeatureVocab.build(vals)


def test_dataset_batch_matches_per_record_reference():
    rng = np.random.default_rng(31)
    for trial in range(10):
        records = [_random_record(rng) for _ in range(40)]
        for r in records:
            r.scenario_type = "t" + r.scenario_id[1:]
        vocab = _vocab_for(records)
        ds = dio.Dataset(records, vocab, limit=10)
        idx = rng.permutation(40)[:17]
        b = ds.batch(idx)
        assert b.size == 17
        for row, i in enumerate(idx):
            r = records[i]
            assert b.labels[row] == r.label
            assert b.user_idx[row] == vocab.encode("user_id", r.user_id)
            assert b.item_idx[row, 0] == vocab.encode("item_id", r.item_id)
            assert b.item_idx[row, 1] == vocab.encode("category_id", r.category_id)
            assert b.item_idx[row, 2] == vocab.encode("destination_id", r.destination_id)
            assert b.scen_ctx_idx[row, 0] == vocab.encode("scenario_id", r.scenario_id)
            assert b.scen_ctx_idx[row, 1] == vocab.encode("scenario_type", r.scenario_type)
            assert b.scen_ctx_idx[row, 2] == vocab.encode("time_bucket", "0")
            assert b.scenario_key[row] == b.scen_ctx_idx[row, 0]
            n_ev = len(r.behavior)
            assert int(b.mask[row].sum()) == n_ev
            assert np.all(b.mask[row, :n_ev] == 1.0)
            for k, ev in enumerate(r.behavior):
                assert b.beh_item_idx[row, k, 0] == vocab.encode("item_id", ev[0])
                assert b.beh_item_idx[row, k, 1] == vocab.encode("category_id", ev[1])
                assert b.beh_item_idx[row, k, 2] == vocab.encode("destination_id", ev[2])
                assert b.beh_scen_idx[row, k, 0] == vocab.encode("scenario_id", ev[3])
                assert b.beh_scen_idx[row, k, 1] == vocab.encode("scenario_type", ev[4])
                assert b.beh_scen_idx[row, k, 2] == vocab.encode("time_bucket", ev[5])
            # padding beyond the real events is index 0
            assert np.all(b.beh_item_idx[row, n_ev:] == 0)
            assert np.all(b.beh_scen_idx[row, n_ev:] == 0)


def test_dataset_truncation_keeps_most_recent():
    events = tuple((f"i{k}", "c1", "d1", "s1", "t1", "0") for k in range(7))
    r = dio.InteractionRecord(1, "s1", "u1", "i1", "c1", "d1", 5, events, "t1")
    vocab = _vocab_for([r])
    ds = dio.Dataset([r], vocab, limit=3)
    b = ds.all_batch()
    assert b.mask.shape == (1, 3)
    assert np.all(b.mask == 1.0)
    want = [vocab.encode("item_id", f"i{k}") for k in (4, 5, 6)]
    assert list(b.beh_item_idx[0, :, 0]) == want


def test_dataset_pad_width_is_batch_local():
    r0 = dio.InteractionRecord(0, "s1", "u1", "i1", "c1", "d1", 0, (), "t1")
    ev = (("i1", "c1", "d1", "s1", "t1", "0"),) * 4
    r1 = dio.InteractionRecord(1, "s1", "u1", "i1", "c1", "d1", 1, ev, "t1")
    ds = dio.Dataset([r0, r1], _vocab_for([r0, r1]), limit=10)
    assert ds.batch(np.array([0])).mask.shape == (1, 1)
    assert ds.batch(np.array([1])).mask.shape == (1, 4)
    assert ds.batch(np.array([0, 1])).mask.shape == (2, 4)


def test_dataset_empty_behavior_batch():
    r = dio.InteractionRecord(0, "s1", "u1", "i1", "c1", "d1", 0, (), "t1")
    ds = dio.Dataset([r], _vocab_for([r]), limit=5)
    b = ds.all_batch()
    assert b.mask.shape == (1, 1)
    assert np.all(b.mask == 0.0)


def test_dataset_set_fc():
    rng = np.random.default_rng(5)
    records = [_random_record(rng) for _ in range(8)]
    for r in records:
        r.scenario_type = "t0"
    ds = dio.Dataset(records, _vocab_for(records), limit=10)
    assert np.all(ds.fc == 1.0)
    ds.set_fc(np.linspace(0.5, 2.0, 8))
    assert ds.batch(np.array([3])).fc[0] == np.linspace(0.5, 2.0, 8)[3]
    with pytest.raises(DataError):
        ds.set_fc(np.ones(9))
