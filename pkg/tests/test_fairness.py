import numpy as np
import pytest

import scenemix.fairness as fa
import scenemix.numerics as nx
from scenemix.errors import ContractViolation, DataError


def test_accumulate_counts_and_sums():
    stats = fa.accumulate_stats([0.2, 0.3, 0.5], ["1", "1", "1"], ["A", "A", "A"])
    assert stats.pv[("1", "A")] == 3
    assert stats.f[("1", "A")] == 1.0


def test_accumulate_is_order_independent():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = 60
        scores = rng.integers(1, 64, size=n) / 64.0  # dyadic, sums are exact
        scen = [str(rng.integers(1, 4)) for _ in range(n)]
        item = [f"i{rng.integers(1, 6)}" for _ in range(n)]
        a = fa.accumulate_stats(scores, scen, item)
        perm = rng.permutation(n)
        b = fa.accumulate_stats(scores[perm], [scen[j] for j in perm], [item[j] for j in perm])
        assert a.pv == b.pv
        assert a.f == b.f


def test_split_then_merge_equals_single_pass():
    rng = np.random.default_rng(3)
    n = 80
    scores = rng.integers(1, 128, size=n) / 128.0
    scen = [str(rng.integers(1, 3)) for _ in range(n)]
    item = [f"i{rng.integers(1, 5)}" for _ in range(n)]
    whole = fa.accumulate_stats(scores, scen, item)
    cut = 33
    merged = fa.accumulate_stats(scores[:cut], scen[:cut], item[:cut]).merge(
        fa.accumulate_stats(scores[cut:], scen[cut:], item[cut:]))
    assert whole.pv == merged.pv
    assert whole.f == merged.f


def test_accumulate_rejects_degenerate_scores():
    for bad in (0.0, 1.0, -0.1, 1.3):
        with pytest.raises(ContractViolation):
            fa.ExposureStats().add("1", "A", bad)


def test_accumulate_rejects_misaligned_inputs():
    with pytest.raises(ContractViolation):
        fa.accumulate_stats([0.5], ["1", "2"], ["A"])


def _stats(rows):
    stats = fa.ExposureStats()
    for s, i, pv, f in rows:
        stats.pv[(s, i)] = pv
        stats.f[(s, i)] = f
    return stats


def test_two_item_worked_example():
    stats = _stats([("1", "A", 80, 40.0), ("1", "B", 20, 20.0)])
    table = fa.compute_fairness(stats)
    assert abs(table.get("1", "A") - 5.0 / 6.0) < 1e-15
    assert abs(table.get("1", "B") - 5.0 / 3.0) < 1e-15


def test_single_item_scenario_is_exactly_one():
    stats = _stats([("1", "A", 37, 11.25), ("2", "B", 4, 0.5)])
    table = fa.compute_fairness(stats)
    assert table.get("1", "A") == 1.0
    assert table.get("2", "B") == 1.0


def test_proportional_exposure_gives_ones():
    rng = np.random.default_rng(5)
    for _ in range(20):
        rows = []
        c = rng.uniform(0.1, 0.9)
        for j in range(int(rng.integers(2, 7))):
            pv = int(rng.integers(1, 500))
            rows.append(("1", f"i{j}", pv, c * pv))
        table = fa.compute_fairness(_stats(rows))
        for _, i, _, _ in rows:
            assert abs(table.get("1", i) - 1.0) < 1e-12


def test_clipping_applies():
    stats = _stats([("1", "A", 10000, 0.0001), ("1", "B", 1, 900.0)])
    table = fa.compute_fairness(stats, (0.2, 5.0))
    assert table.get("1", "A") == 0.2
    assert table.get("1", "B") == 5.0
    wide = fa.compute_fairness(stats, (1e-12, 1e12))
    assert wide.get("1", "A") < 0.2
    assert wide.get("1", "B") > 5.0


def test_scenarios_normalize_independently():
    stats = _stats([("1", "A", 80, 40.0), ("1", "B", 20, 20.0),
                    ("2", "A", 50, 25.0)])
    table = fa.compute_fairness(stats)
    # scenario 2 has one item, unaffected by scenario 1's skew
    assert table.get("2", "A") == 1.0
    assert abs(table.get("1", "A") - 5.0 / 6.0) < 1e-15


def test_empty_stats_rejected():
    with pytest.raises(ContractViolation):
        fa.compute_fairness(fa.ExposureStats())


def test_scale_invariance():
    rng = np.random.default_rng(7)
    for _ in range(50):
        rows = [("1", f"i{j}", int(rng.integers(1, 400)), float(rng.uniform(0.5, 80)))
                for j in range(int(rng.integers(2, 8)))]
        base = fa.compute_fairness(_stats(rows), (1e-12, 1e12))
        c = rng.uniform(0.05, 0.9)
        scaled = fa.compute_fairness(
            _stats([(s, i, pv, c * f) for s, i, pv, f in rows]), (1e-12, 1e12))
        for _, i, _, _ in rows:
            assert abs(scaled.get("1", i) - base.get("1", i)) < 1e-12 * base.get("1", i)


def test_exposure_monotonicity():
    rng = np.random.default_rng(9)
    for _ in range(50):
        rows = [("1", f"i{j}", int(rng.integers(1, 300)), float(rng.uniform(0.5, 50)))
                for j in range(int(rng.integers(2, 8)))]
        j = int(rng.integers(0, len(rows)))
        s, i, pv, f = rows[j]
        base = fa.compute_fairness(_stats(rows), (1e-12, 1e12)).get(s, i)
        rows[j] = (s, i, pv + int(rng.integers(1, 200)), f)
        bumped = fa.compute_fairness(_stats(rows), (1e-12, 1e12)).get(s, i)
        assert bumped < base


def test_pv_weighted_mean_of_unclipped_coefficients_is_one():
    rng = np.random.default_rng(11)
    for _ in range(50):
        rows = [("1", f"i{j}", int(rng.integers(1, 300)), float(rng.uniform(0.5, 50)))
                for j in range(int(rng.integers(2, 8)))]
        table = fa.compute_fairness(_stats(rows), (1e-12, 1e12))
        total_pv = sum(pv for _, _, pv, _ in rows)
        mean = sum(pv * table.get("1", i) for _, i, pv, _ in rows) / total_pv
        assert abs(mean - 1.0) < 1e-12


def test_table_defaults_and_validation():
    table = fa.FairnessTable({("1", "A"): 0.5})
    assert table.get("1", "A") == 0.5
    assert table.get("1", "B") == 1.0
    assert table.get("9", "A") == 1.0
    assert np.array_equal(table.weights_for(["1", "1"], ["A", "B"]), [0.5, 1.0])
    assert fa.FairnessTable.all_ones().get("1", "A") == 1.0
    with pytest.raises(ContractViolation):
        fa.FairnessTable({("1", "A"): 0.1}, (0.2, 5.0))
    with pytest.raises(ContractViolation):
        fa.FairnessTable({("1", "A"): 6.0}, (0.2, 5.0))


def test_table_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(13)
    values = {(str(rng.integers(1, 9)), f"i{j}"): float(rng.uniform(0.2, 5.0))
              for j in range(40)}
    table = fa.FairnessTable(values)
    p = tmp_path / "fc.csv"
    table.save(p)
    back = fa.FairnessTable.load(p)
    assert back.values == table.values


def test_table_load_checks_header(tmp_path):
    p = tmp_path / "fc.csv"
    p.write_text("item_id,scenario_id,fc\n")
    with pytest.raises(DataError):
        fa.FairnessTable.load(p)


def test_stats_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(15)
    stats = fa.ExposureStats()
    for j in range(30):
        key = (str(rng.integers(1, 5)), f"i{j}")
        stats.pv[key] = int(rng.integers(1, 999))
        stats.f[key] = float(rng.uniform(0.01, 400))
    p = tmp_path / "stats.csv"
    stats.save(p)
    back = fa.ExposureStats.load(p)
    assert back.pv == stats.pv
    assert back.f == stats.f


def test_weighted_bce_half_point():
    pred = nx.Tensor(np.array([0.5]))
    loss = fa.weighted_bce(pred, np.array([1.0]), np.array([1.0]))
    assert abs(float(loss.data) - np.log(2.0)) < 1e-15


def test_weighted_bce_uniform_weights_match_plain_mean():
    rng = np.random.default_rng(17)
    for _ in range(20):
        n = 30
        p = rng.uniform(0.05, 0.95, size=n)
        y = rng.integers(0, 2, size=n).astype(np.float64)
        loss = fa.weighted_bce(nx.Tensor(p), y, np.ones(n))
        want = np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p)))
        assert abs(float(loss.data) - want) < 1e-12


def test_weighted_bce_gradient_scales_with_weight():
    with nx.Tape() as tape:
        pred = nx.Tensor(np.array([0.5, 0.5]), requires_grad=True, name="p")
        loss = fa.weighted_bce(pred, np.array([1.0, 1.0]), np.array([1.0, 3.0]))
    assert abs(float(loss.data) - np.log(2.0)) < 1e-15
    g = tape.gradients(loss, {"p": pred})["p"]
    assert g[1] == 3.0 * g[0]


def test_weighted_bce_clamps_extreme_predictions():
    pred = nx.Tensor(np.array([0.0, 1.0]))
    loss = fa.weighted_bce(pred, np.array([1.0, 0.0]), np.ones(2))
    assert np.isfinite(float(loss.data))
    assert abs(float(loss.data) - (-np.log(1e-7))) < 1e-9


def test_weighted_bce_validation():
    pred = nx.Tensor(np.array([0.5, 0.5]))
    with pytest.raises(ContractViolation):
        fa.weighted_bce(pred, np.array([1.0, 2.0]), np.ones(2))
    with pytest.raises(ContractViolation):
        fa.weighted_bce(pred, np.array([1.0, 0.0]), np.ones(3))


def test_bias_adapting_loss_uses_pair_weights():
    table = fa.FairnessTable({("1", "A"): 2.0, ("1", "B"): 0.5})
    pred = nx.Tensor(np.array([0.3, 0.7, 0.5]))
    labels = np.array([1.0, 0.0, 1.0])
    got = fa.bias_adapting_loss(pred, labels, ["1", "1", "2"], ["A", "B", "A"], table)
    want = fa.weighted_bce(pred, labels, np.array([2.0, 0.5, 1.0]))
    assert float(got.data) == float(want.data)
    plain = fa.bias_adapting_loss(pred, labels, ["1", "1", "2"], ["A", "B", "A"], None)
    uniform = fa.weighted_bce(pred, labels, np.ones(3))
    assert float(plain.data) == float(uniform.data)


def test_two_pass_schedule_order():
    calls = []

    def train_pass(table):
        calls.append(table)
        return ("model", table)

    def score_final(model):
        return [0.5, 0.25, 0.25, 0.5], ["1", "1", "1", "1"], ["A", "A", "B", "B"]

    table, first, second = fa.two_pass_schedule(train_pass, score_final)
    assert calls[0] is None
    assert calls[1] is table
    assert first == ("model", None)
    assert second == ("model", table)
    # PV=(2,2), F=(0.75, 0.75) -> both coefficients exactly 1
    assert table.get("1", "A") == 1.0
    assert table.get("1", "B") == 1.0


class _Rec:
    def __init__(self, s, i):
        self.scenario_id = s
        self.item_id = i


def test_sub_sample_behavior():
    records = [_Rec("1", "A") for _ in range(4000)] + [_Rec("1", "B") for _ in range(1000)]
    intervened = {("1", "A")}
    kept_all = fa.sub_sample(records, intervened, 1.0, seed=0)
    assert len(kept_all) == 5000
    kept = fa.sub_sample(records, intervened, 0.7, seed=0)
    n_a = sum(1 for r in kept if r.item_id == "A")
    n_b = sum(1 for r in kept if r.item_id == "B")
    assert n_b == 1000  # untouched pairs always survive
    assert abs(n_a - 2800) < 4 * np.sqrt(4000 * 0.7 * 0.3)
    again = fa.sub_sample(records, intervened, 0.7, seed=0)
    assert [id(r) for r in again] == [id(r) for r in kept]
    with pytest.raises(ContractViolation):
        fa.sub_sample(records, intervened, 0.0)
    with pytest.raises(ContractViolation):
        fa.sub_sample(records, intervened, 1.5)
