import math

import pytest

import adaptok


def test_weight_forms():
    e = math.e
    assert adaptok.exponential_weight(0.0, e - 1, 1.0) == pytest.approx(e)
    assert adaptok.exponential_weight(1.0, e - 1, 1.0) == pytest.approx(1.6321205588285577, abs=1e-12)
    a = adaptok.calibrate_amplitude("chi_square", 2.0)
    assert adaptok.chi_square_weight(1.0, a, 2.0) == pytest.approx(e)


def test_frequency_and_criteria():
    table = adaptok.FrequencyTable.from_sentences([["a", "b", "a"], ["a", "c"]])
    assert table.ranked() == [("a", 3), ("b", 1), ("c", 1)]
    assert table.median == 1
    uniform = adaptok.build_weights(table, "uniform")
    report = adaptok.validate_criteria(uniform)
    assert report["min_ok"] and report["delta"] == 0.0
    rows = adaptok.search_temperature(table, "exponential", [0.5, 1.0, 2.0])
    assert len(rows) == 3
    assert all(r["min_ok"] for r in rows)


def test_loss_gradient_matches_finite_differences():
    logits = [[0.3, -1.2, 0.8, 0.1]]
    targets = [2]
    kwargs = dict(mode="focal", gamma=2.0, plus_one=True, label_smoothing=0.1)
    grad = adaptok.loss_gradient(logits, targets, **kwargs)[0]
    h = 1e-6
    for j in range(4):
        up = [list(logits[0])]
        down = [list(logits[0])]
        up[0][j] += h
        down[0][j] -= h
        fd = (adaptok.objective(up, targets, **kwargs) - adaptok.objective(down, targets, **kwargs)) / (2 * h)
        assert grad[j] == pytest.approx(fd, abs=1e-7)


def test_bpe_round_trip():
    text = [["low", "lower", "lowest"], ["newer", "wider"]]
    merges = adaptok.learn_merges(text, 10)
    assert merges
    for sentence in text:
        assert adaptok.detokenize(adaptok.apply_merges(sentence, merges)) == sentence


def test_metrics():
    result = adaptok.bleu([["a", "b", "c", "d", "e"]], [["a", "b", "c", "d", "f"]])
    assert result["score"] == pytest.approx(66.87403049764220, abs=0.01)
    assert adaptok.ttr(["a", "a", "b", "b"]) == 0.5
    assert adaptok.hdd(["a"] * 42) == pytest.approx(1 / 42)
    assert adaptok.mtld(["a", "b"] * 20) == pytest.approx(40 / 13, abs=1e-6)


def test_rarity_and_zipf():
    src, tgt, mapping = adaptok.generate_zipf(vocab_size=20, pairs=60, seed=3)
    assert len(src) == len(tgt) == 60
    assert len(mapping) == 20
    table = adaptok.FrequencyTable.from_sentences(tgt)
    strata = adaptok.stratify(tgt, table)
    assert sorted(strata["high"] + strata["middle"] + strata["low"]) == list(range(60))
    assert adaptok.sentence_rarity(tgt[0], table) > 0


def test_errors_surface_as_value_error():
    with pytest.raises(ValueError):
        adaptok.calibrate_amplitude("cubic", 1.0)


def test_run_cli():
    status, out, _ = adaptok.run_cli(["--version"])
    assert status == 0
    assert out.strip() == adaptok.__version__
    status, _, err = adaptok.run_cli(["nope"])
    assert status == 1
