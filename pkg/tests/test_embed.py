import numpy as np
import pytest

from mtlcoder import tensor as tn
from mtlcoder.corpus import Corpus, LabelSpace, Session, Turn, build_vocab
from mtlcoder.embed import (
    DESK_DIM,
    SgnsConfig,
    draw_negatives,
    noise_distribution,
    pretrain_embeddings,
    sgns_gradients,
    sgns_loss,
    sgns_update,
    skipgram_pairs,
)
from mtlcoder.encoders import PAD_INDEX
from mtlcoder.errors import UsageError
from mtlcoder.tensor import Tensor
from mtlcoder.trainer import embedding_from_checkpoint, embedding_to_checkpoint, load_checkpoint, save_checkpoint

SPACE = LabelSpace("toy", ("x",))


def make_corpus(sentences):
    turns = tuple(Turn("T", tuple(s), np.zeros(1, dtype=np.int8)) for s in sentences)
    return Corpus(SPACE, (Session("s0", "toy", turns),))


def cooccurrence_corpus(seed):
    """``a b`` always adjacent; ``c`` and ``d`` each in their own filler pool, never together."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(50):
        if i % 3 == 0:
            w = list(rng.choice([f"p{k}" for k in range(8)], 6))
            w[2:2] = ["a", "b"]
        elif i % 3 == 1:
            w = list(rng.choice([f"q{k}" for k in range(8)], 6))
            w.insert(3, "c")
        else:
            w = list(rng.choice([f"r{k}" for k in range(8)], 6))
            w.insert(3, "d")
        out.append(w)
    return make_corpus(out)


def cosine(table, x, y):
    u, v = table.matrix.data[table.index(x)], table.matrix.data[table.index(y)]
    return float(u @ v / np.linalg.norm(u) / np.linalg.norm(v))


def test_defaults():
    c = SgnsConfig()
    assert (c.dim, c.window, c.negatives, c.unigram_power) == (300, 5, 5, 0.75)
    assert DESK_DIM == 32


@pytest.mark.parametrize("field", ["dim", "window", "negatives", "learning_rate", "unigram_power"])
def test_invalid_config(field):
    with pytest.raises(UsageError):
        pretrain_embeddings(make_corpus([["a", "b"]]), SgnsConfig(**{field: 0}))


def test_skipgram_pairs():
    pairs = skipgram_pairs([np.array([2, 3, 4])], window=1)
    assert sorted(map(tuple, pairs.tolist())) == [(2, 3), (3, 2), (3, 4), (4, 3)]
    assert len(skipgram_pairs([np.array([5, 5, 5])], window=2)) == 0
    assert len(skipgram_pairs([np.array([7])], window=3)) == 0


def test_noise_distribution():
    q = noise_distribution(np.array([0, 0, 16, 1]), 0.75)
    np.testing.assert_allclose(q, np.array([0, 0, 8, 1]) / 9, rtol=1e-14)
    assert q.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(UsageError):
        noise_distribution(np.zeros(3), 0.75)


def test_single_token_corpus_stays_at_initialization():
    corpus = make_corpus([["hey"] * 5] * 4)
    cfg = SgnsConfig(dim=8, epochs=3, seed=2)
    table = pretrain_embeddings(corpus, cfg)
    V = len(build_vocab(corpus))
    init = np.random.default_rng(2).uniform(-0.5 / 8, 0.5 / 8, size=(V, 8))
    init[PAD_INDEX] = 0.0
    np.testing.assert_array_equal(table.matrix.data, init)


def test_cooccurring_pair_is_more_similar():
    for seed in range(3):
        table = pretrain_embeddings(cooccurrence_corpus(seed), SgnsConfig(dim=16, epochs=10, seed=seed))
        assert cosine(table, "a", "b") > cosine(table, "c", "d")


def test_same_seed_identical_tables():
    corpus = cooccurrence_corpus(0)
    cfg = SgnsConfig(dim=8, epochs=2, seed=4)
    a = pretrain_embeddings(corpus, cfg).matrix.data
    assert a.tobytes() == pretrain_embeddings(corpus, cfg).matrix.data.tobytes()
    assert a.tobytes() != pretrain_embeddings(corpus, SgnsConfig(dim=8, epochs=2, seed=5)).matrix.data.tobytes()


def test_padding_row_zero():
    table = pretrain_embeddings(cooccurrence_corpus(1), SgnsConfig(dim=8, epochs=2))
    assert not table.matrix.data[PAD_INDEX].any()


def test_update_never_touches_padding_row():
    rng = np.random.default_rng(0)
    W_in, W_out = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    W_in[PAD_INDEX] = W_out[PAD_INDEX] = 0.0
    centers, contexts = np.array([2, 3, 4]), np.array([3, 4, 5])
    noise = noise_distribution(np.array([0, 0, 1, 1, 1, 1]), 0.75)
    neg, mask = draw_negatives(rng, noise, contexts, 5)
    sgns_update(W_in, W_out, centers, contexts, neg, 0.025, mask)
    assert not W_in[PAD_INDEX].any() and not W_out[PAD_INDEX].any()


def test_negatives_equal_to_context_are_masked():
    rng = np.random.default_rng(1)
    contexts = np.array([2, 2, 3])
    neg, mask = draw_negatives(rng, np.array([0, 0, 0.5, 0.5]), contexts, 6)
    np.testing.assert_array_equal(mask == 0, neg == contexts[:, None])


def test_loss_decreases_over_five_updates():
    corpus = cooccurrence_corpus(0)
    vocab = build_vocab(corpus)
    rng = np.random.default_rng(0)
    sentences = [np.array([vocab[w] for w in t.words]) for t in corpus.sessions[0].turns]
    pairs = skipgram_pairs(sentences, 5)[:128]
    W_in = rng.uniform(-0.5 / 16, 0.5 / 16, size=(len(vocab), 16))
    W_in[PAD_INDEX] = 0.0
    W_out = np.zeros_like(W_in)
    counts = np.bincount(np.concatenate(sentences), minlength=len(vocab))
    neg, mask = draw_negatives(rng, noise_distribution(counts, 0.75), pairs[:, 1], 5)
    losses = [sgns_update(W_in, W_out, pairs[:, 0], pairs[:, 1], neg, 0.025, mask) for _ in range(5)]
    losses.append(sgns_loss(W_in, W_out, pairs[:, 0], pairs[:, 1], neg, mask))
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_gradients_match_autodiff():
    rng = np.random.default_rng(3)
    W_in, W_out = rng.normal(size=(7, 3)), rng.normal(size=(7, 3))
    centers, contexts = np.array([2, 3, 3, 6]), np.array([4, 2, 5, 2])
    neg = rng.integers(2, 7, size=(4, 2))
    mask = (neg != contexts[:, None]).astype(float)
    d_in, d_pos, d_neg = sgns_gradients(W_in, W_out, centers, contexts, neg, mask)

    Ti, To = Tensor(W_in, requires_grad=True), Tensor(W_out, requires_grad=True)
    v = tn.gather_rows(Ti, centers)
    pos = tn.sum(v * tn.gather_rows(To, contexts), axis=1)
    loss = tn.sum(tn.neg(tn.log(tn.sigmoid(pos))))
    for k in range(neg.shape[1]):
        s = tn.sum(v * tn.gather_rows(To, neg[:, k]), axis=1)
        loss = loss + tn.sum(tn.neg(tn.log(tn.sigmoid(tn.neg(s)))) * mask[:, k])
    grads = tn.backward(loss, {"in": Ti, "out": To})

    dense_in = np.zeros_like(W_in)
    np.add.at(dense_in, centers, d_in)
    dense_out = np.zeros_like(W_out)
    np.add.at(dense_out, contexts, d_pos)
    np.add.at(dense_out, neg.ravel(), d_neg.reshape(-1, 3))
    np.testing.assert_allclose(dense_in, grads["in"], atol=1e-12)
    np.testing.assert_allclose(dense_out, grads["out"], atol=1e-12)
    assert loss.item() == pytest.approx(sgns_loss(W_in, W_out, centers, contexts, neg, mask), rel=1e-12)


def test_empty_corpus_rejected():
    with pytest.raises(UsageError):
        pretrain_embeddings(Corpus(SPACE, ()))


def test_unknown_tokens_skipped_with_fixed_vocab():
    corpus = make_corpus([["a", "b", "zz"]])
    vocab = {"<pad>": 0, "<unk>": 1, "a": 2, "b": 3}
    table = pretrain_embeddings(corpus, SgnsConfig(dim=4, epochs=1), token_to_index=vocab)
    assert table.token_to_index == vocab and table.matrix.shape == (4, 4)


def test_embedding_archive_round_trip():
    table = pretrain_embeddings(cooccurrence_corpus(2), SgnsConfig(dim=8, epochs=1))
    blob = save_checkpoint(embedding_to_checkpoint(table, {"sgns": SgnsConfig(dim=8).to_json()}))
    again = embedding_from_checkpoint(load_checkpoint(blob))
    assert again.token_to_index == table.token_to_index
    assert again.matrix.data.tobytes() == table.matrix.data.tobytes()
