# SPDX-License-Identifier: Apache-2.0
import math

import pytest

import mtml


@pytest.fixture(scope="module")
def corpus():
    return mtml.generate_synthetic(personas=6, dialogues=14, seed=11, valid_fraction=1 / 6, test_fraction=2 / 6)


@pytest.fixture(scope="module")
def vocab(corpus):
    return mtml.Vocabulary.build(corpus.texts("train"))


def small_config(vocab):
    cfg = mtml.ModelConfig()
    cfg.vocab_size = len(vocab)
    cfg.embed_dim = 8
    cfg.num_heads = 2
    cfg.feedforward_dim = 16
    return cfg


def test_tokenize_and_vocabulary_round_trip(vocab):
    assert mtml.tokenize("I love green, don't you?")[:2] == ["i", "love"]
    ids = vocab.encode("i like")
    assert all(isinstance(i, int) for i in ids)
    assert vocab.decode(ids).startswith("i")
    assert vocab.word(vocab.id("i")) == "i"


def test_corpus_splits(corpus):
    total = sum(len(corpus.persona_ids(s)) for s in ("train", "valid", "test"))
    assert total == 6
    assert corpus.statements("train", 0)
    with pytest.raises(mtml.ConfigError):
        corpus.persona_ids("bogus")


def test_model_parameters_and_perplexity(vocab):
    model = mtml.Model("transformer", small_config(vocab), seed=3)
    params = model.parameters()
    assert "output.weight" in params
    ppl = model.perplexity([(vocab.encode("i like"), vocab.encode("green"))])
    assert ppl > 1.0


def test_training_reduces_validation_loss_and_is_deterministic(corpus, vocab):
    meta = mtml.MetaConfig()
    meta.mode = "mtml"
    meta.alpha = 0.8
    meta.tasks_per_batch = 2
    meta.max_iterations = 20
    meta.eval_every = 10
    runs = []
    for _ in range(2):
        model = mtml.Model("transformer", small_config(vocab), seed=1)
        summary = mtml.train(model, corpus, vocab, meta, seed=1)
        runs.append((summary, model.parameters()))
    (a, pa), (b, pb) = runs
    assert a["best_valid_loss"] < a["initial_valid_loss"]
    assert a["log"] == b["log"]
    assert pa == pb


def test_kshot_evaluation_report(corpus, vocab):
    model = mtml.Model("transformer", small_config(vocab), seed=2)
    protocol = mtml.KShotProtocol()
    protocol.k = 3
    protocol.finetune_steps = 1
    protocol.reserve_shots = 3
    report = mtml.kshot_evaluate(model, corpus, vocab, protocol, seed=5)
    assert report["k"] == 3
    assert math.isfinite(report["ppl"])
    assert 0.0 <= report["bleu"] <= 1.0
    assert report["generations"]


def test_checkpoint_round_trip(tmp_path, vocab):
    model = mtml.Model("transformer", small_config(vocab), seed=4)
    path = tmp_path / "model.mtml"
    model.save(path, vocab)
    loaded, loaded_vocab = mtml.Model.load(path)
    assert loaded.parameters() == model.parameters()
    assert loaded_vocab.words == vocab.words
    context = vocab.encode("what do you like")
    assert loaded.generate(context, max_len=6) == model.generate(context, max_len=6)


def test_metrics():
    assert mtml.bleu([["a", "b", "c", "d"]], [["a", "b", "c", "d"]]) == pytest.approx(1.0)
    assert mtml.bleu([["x"]], [["y"]]) == 0.0
    assert mtml.consistency_proxy(["i", "love", "green", "apples"], ["i love green apples"]) == 1
    assert mtml.consistency_proxy(["i", "do", "not", "love", "green", "apples"], ["i love green apples"]) == -1
    with pytest.raises(mtml.ContractError):
        mtml.bleu([], [])


def test_gradcheck_tiny_preset():
    report = mtml.gradcheck("tiny", False, False)
    assert report["passed"]
    assert report["checks"]
    faulty = mtml.gradcheck("tiny", False, True)
    assert not faulty["passed"]


def test_invalid_mode_raises_config_error():
    meta = mtml.MetaConfig()
    with pytest.raises(mtml.ConfigError):
        meta.mode = "unknown"
