import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import finite_difference_check, random_batch, random_params
from model1ir.index import retrieve_many, build_index
from model1ir.neural import (PARAM_ORDER, AdamState, NeuralM1Params, TrainConfig, adamw_step, all_token_log_score,
                             compute_gradients, hinge_loss, init_params, layer_normalize, load_checkpoint, lr_at_step,
                             mix_self_translation, negative_pools, read_embedding_matrix, sample_pairs, save_checkpoint,
                             score_embedding_seqs, score_neural, t_network_forward, train, write_embedding_matrix)
from model1ir.pipeline import load_corpus
from model1ir.synth import SynthConfig, generate, write_synth


def zero_params(vocab=5, p_self=0.1):
    params = init_params(vocab, 4, 3, 5, p_self)
    for t in params.tensors().values():
        t[...] = 0.0
    return params


def loop_score(params, query, doc, use_self_mix=True):
    """Direct evaluation with one network call per (query position, document position)."""
    total = 0.0
    for q in query:
        inner = 0.0
        for d in doc:
            raw = t_network_forward(params, q, d)
            inner += mix_self_translation(raw, q == d, params.p_self) if use_self_mix else raw
        total += math.log(inner / len(doc))
    return total / len(query)


class TestForward:
    def test_layer_norm_pair(self):
        np.testing.assert_allclose(layer_normalize([1.0, -1.0]), [0.999995, -0.999995], atol=1e-6)

    def test_layer_norm_constant(self):
        assert layer_normalize([3.0, 3.0, 3.0]).tolist() == [0.0, 0.0, 0.0]

    def test_layer_norm_too_short(self):
        with pytest.raises(ValueError):
            layer_normalize([1.0])

    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=20))
    def test_layer_norm_centered(self, v):
        assert abs(layer_normalize(v).mean()) <= 1e-12 * max(1.0, np.abs(v).max())

    def test_zero_network_is_half(self):
        params = zero_params()
        assert t_network_forward(params, 1, 3) == 0.5
        assert t_network_forward(params, np.ones(4), np.arange(4.0)) == 0.5

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 30.0))
    @settings(max_examples=30)
    def test_output_strictly_inside_unit_interval(self, seed, scale):
        rng = np.random.default_rng(seed)
        params = random_params(rng, scale=scale)
        for q, d in rng.integers(0, 7, (5, 2)):
            raw = t_network_forward(params, q, d)
            assert 0.0 < raw < 1.0
            assert 0.0 < mix_self_translation(raw, q == d, params.p_self) < 1.0

    def test_deterministic(self, rng):
        params = random_params(rng)
        assert t_network_forward(params, 2, 5) == t_network_forward(params, 2, 5)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            t_network_forward(random_params(rng), np.ones(3), 1)

    def test_mix_examples(self):
        assert mix_self_translation(0.7, True, 0.1) == 0.1
        assert mix_self_translation(0.5, False, 0.1) == pytest.approx(0.45)
        assert mix_self_translation(0.5, False, 1e-12) == pytest.approx(0.5)


class TestScoring:
    def test_all_token_worked_example(self):
        table = {(0, 1): 0.6, (0, 2): 0.3}
        lookup = np.vectorize(lambda q, d: table[(int(q), int(d))])
        assert all_token_log_score([0], [1, 1, 2], lookup) == pytest.approx(math.log(0.5), abs=1e-12)

    def test_zero_network(self):
        params = zero_params()
        assert score_neural(params, [0, 1], [2, 3, 3], use_self_mix=False) == pytest.approx(math.log(0.5))
        # with mixing, non-identical pairs carry (1 - p_self) * 0.5
        assert score_neural(params, [0], [2, 3]) == pytest.approx(math.log(0.45))

    def test_empty_inputs(self, rng):
        params = random_params(rng)
        with pytest.raises(ValueError):
            score_neural(params, [], [1])
        with pytest.raises(ValueError):
            score_neural(params, [1], [])

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25)
    def test_matches_loop_oracle_and_invariances(self, seed):
        rng = np.random.default_rng(seed)
        params = random_params(rng)
        query = rng.integers(0, 7, int(rng.integers(1, 4)))
        doc = rng.integers(0, 7, int(rng.integers(1, 8)))
        got = score_neural(params, query, doc)
        assert got == pytest.approx(loop_score(params, query, doc), rel=1e-12)
        assert score_neural(params, rng.permutation(query), rng.permutation(doc)) == pytest.approx(got, rel=1e-12)
        assert score_neural(params, query, np.concatenate([doc, doc])) == pytest.approx(got, rel=1e-12)

    def test_embedding_path_single_pair(self, rng):
        params = random_params(rng)
        q, d = rng.normal(size=4), rng.normal(size=4)
        assert score_embedding_seqs(params, [q], [d]) == pytest.approx(math.log(t_network_forward(params, q, d)),
                                                                       rel=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25)
    def test_embedding_path_matches_token_path(self, seed):
        rng = np.random.default_rng(seed)
        params = random_params(rng)
        query = rng.integers(0, 7, 3)
        doc = rng.integers(0, 7, 5)
        via_rows = score_embedding_seqs(params, params.embed_q[query], params.embed_d[doc])
        assert via_rows == pytest.approx(score_neural(params, query, doc, use_self_mix=False), rel=1e-12)
        doubled = score_embedding_seqs(params, params.embed_q[query], np.vstack([params.embed_d[doc]] * 2))
        assert doubled == pytest.approx(via_rows, rel=1e-12)

    def test_embedding_path_errors(self, rng):
        params = random_params(rng)
        with pytest.raises(ValueError):
            score_embedding_seqs(params, np.ones((1, 3)), np.ones((1, 4)))
        with pytest.raises(ValueError):
            score_embedding_seqs(params, np.ones((0, 4)), np.ones((1, 4)))


class TestLossAndGradients:
    def test_hinge_examples(self):
        assert hinge_loss(2.0, 0.5, 1.0) == 0.0
        assert hinge_loss(0.2, 0.0, 1.0) == pytest.approx(0.8)
        assert hinge_loss(0.3, 0.3, 1.5) == 1.5
        with pytest.raises(ValueError):
            hinge_loss(0, 0, -1)

    def test_satisfied_margin_gives_zero_gradient(self, rng):
        params = random_params(rng)
        q, pos, neg = np.array([1]), np.array([1]), np.array([4])
        loss, grads = compute_gradients(params, [(q, pos, neg)], margin=0.0)
        if loss > 0:  # choose the ordering that satisfies the margin
            loss, grads = compute_gradients(params, [(q, neg, pos)], margin=0.0)
        assert loss == 0.0
        assert all(not g.any() for g in grads.values())

    def test_repeated_pair_doubles_gradient(self, rng):
        params = random_params(rng, scale=0.5)
        batch = random_batch(rng, 7, 1)
        loss1, g1 = compute_gradients(params, batch, margin=10.0)
        loss2, g2 = compute_gradients(params, batch * 2, margin=10.0)
        assert loss2 == pytest.approx(2 * loss1, rel=1e-12)
        for name in PARAM_ORDER:
            np.testing.assert_allclose(g2[name], 2 * g1[name], rtol=1e-10, atol=1e-14)

    def test_loss_matches_scores(self, rng):
        params = random_params(rng, scale=0.5)
        batch = random_batch(rng, 7, 3)
        loss, _ = compute_gradients(params, batch, margin=1.0)
        expected = sum(hinge_loss(score_neural(params, q, p), score_neural(params, q, n), 1.0) for q, p, n in batch)
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_untouched_embedding_rows_are_zero(self, rng):
        params = random_params(rng, vocab=10, scale=0.5)
        batch = [(np.array([1, 2]), np.array([3]), np.array([4, 5]))]
        _, grads = compute_gradients(params, batch, margin=10.0)
        assert not grads["embed_q"][[0, 3, 4, 5, 6, 7, 8, 9]].any()
        assert not grads["embed_d"][[0, 1, 2, 6, 7, 8, 9]].any()

    @pytest.mark.parametrize("seed", range(3))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        params = random_params(rng, scale=0.7)
        worst = finite_difference_check(params, random_batch(rng, 7, 2))
        assert max(worst.values()) < 1e-4, worst

    def test_empty_batch(self, rng):
        with pytest.raises(ValueError):
            compute_gradients(random_params(rng), [])


class TestOptimizer:
    def _single(self, value=1.0):
        params = init_params(2, 2, 2, 2)
        for t in params.tensors().values():
            t[...] = value
        return params

    def test_decay_only(self):
        params = self._single()
        grads = {k: np.zeros_like(v) for k, v in params.tensors().items()}
        adamw_step(params, grads, AdamState.zeros_like(params), lr=0.1, weight_decay=0.01)
        assert all(np.allclose(t, 0.999, rtol=0, atol=1e-15) for t in params.tensors().values())

    def test_no_decay_no_gradient(self):
        params = self._single(0.3)
        grads = {k: np.zeros_like(v) for k, v in params.tensors().items()}
        adamw_step(params, grads, AdamState.zeros_like(params), lr=0.1, weight_decay=0.0)
        assert all(np.all(t == 0.3) for t in params.tensors().values())

    def test_first_step_is_signed_lr(self, rng):
        params = self._single(0.0)
        grads = {k: rng.normal(size=v.shape) for k, v in params.tensors().items()}
        adamw_step(params, grads, AdamState.zeros_like(params), lr=0.01, weight_decay=0.0)
        for name, t in params.tensors().items():
            np.testing.assert_allclose(t, -0.01 * np.sign(grads[name]), rtol=1e-6)
            assert np.all(np.abs(t) <= 0.01 * (1 + 1e-12))

    def test_shape_mismatch(self):
        params = self._single()
        grads = {k: np.zeros(1) for k in params.tensors()}
        with pytest.raises(ValueError):
            adamw_step(params, grads, AdamState.zeros_like(params), 0.1, 0.0)


class TestSchedule:
    config = TrainConfig(lr=3e-3, warmup=0.1, lr_decay=0.9)

    def test_warmup_midpoint(self):
        assert lr_at_step(5, 100, 0, self.config) == pytest.approx(1.5e-3)

    def test_ramp_starts_at_zero(self):
        assert lr_at_step(0, 100, 0, self.config) == 0.0

    def test_decay_after_warmup(self):
        assert lr_at_step(50, 100, 2, self.config) == pytest.approx(2.43e-3)
        # warm-up applies to the first epoch only
        assert lr_at_step(0, 100, 1, self.config) == pytest.approx(2.7e-3)

    def test_negative_step(self):
        with pytest.raises(ValueError):
            lr_at_step(-1, 10, 0, self.config)

    @pytest.mark.parametrize("kwargs", [{"warmup": 0.6}, {"lr": 0}, {"epochs": -1}, {"dtype": "int8"}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestSampling:
    def test_one_pair_per_query(self):
        cands = {"q": [f"n{i}" for i in range(30)] + ["p"]}
        triples, skipped = sample_pairs({"q": {"p": 1}}, cands, n_neg=20, seed=1, epoch=0)
        assert len(triples) == 1 and skipped == 0
        q, pos, neg = triples[0]
        assert (q, pos) == ("q", "p") and neg.startswith("n")

    def test_deterministic(self):
        cands = {f"q{i}": [f"d{j}" for j in range(40)] for i in range(10)}
        qrels = {f"q{i}": {f"d{i}": 1} for i in range(10)}
        assert sample_pairs(qrels, cands, seed=3, epoch=2) == sample_pairs(qrels, cands, seed=3, epoch=2)
        assert sample_pairs(qrels, cands, seed=3, epoch=2) != sample_pairs(qrels, cands, seed=3, epoch=3)

    def test_all_relevant_is_skipped(self):
        triples, skipped = sample_pairs({"q": {"a": 1, "b": 2}}, {"q": ["a", "b"]})
        assert triples == [] and skipped == 1

    def test_pool_is_epoch_independent_and_bounded(self):
        cands = {"q": [f"d{j}" for j in range(600)]}
        pools = negative_pools({"q": {"d0": 1}}, cands, n_neg=20, pool_depth=500, seed=5)
        assert len(pools["q"]) == 20
        assert all(int(d[1:]) < 500 and d != "d0" for d in pools["q"])
        negs = {sample_pairs({"q": {"d0": 1}}, cands, seed=5, epoch=e)[0][0][2] for e in range(30)}
        assert negs <= set(pools["q"])


@pytest.fixture(scope="module")
def small_task(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    config = SynthConfig(vocab_size=120, synonym_pairs=15, n_queries=50, n_docs=300, seed=1)
    paths = write_synth(generate(config), out, config)
    vocab, store, queries = load_corpus(paths["collection"], paths["queries"])
    from model1ir.corpus import read_qrels
    qrels = read_qrels(paths["qrels"])
    index = build_index(store, vocab)
    cands = {q: c.doc_ids for q, c in retrieve_many(index, queries, 100).items()}
    return queries, qrels, cands, store, len(vocab)


class TestTrain:
    config = TrainConfig(epochs=8, batch_size=8, n_neg=10, emb_dim=8, proj_dim=8, hidden_dim=16, lr=1e-2,
                         lr_decay=0.95, seed=3)

    def test_loss_decreases(self, small_task):
        result = train(*small_task, self.config)
        assert result.epoch_losses[-1] < result.epoch_losses[0]
        assert result.params.all_finite()

    def test_bit_identical_reruns(self, small_task):
        a = train(*small_task, self.config).params
        b = train(*small_task, self.config).params
        assert all(np.array_equal(a.tensors()[k], b.tensors()[k]) for k in PARAM_ORDER)

    def test_zero_epochs_returns_initialization(self, small_task):
        config = TrainConfig(epochs=0, emb_dim=8, proj_dim=8, hidden_dim=16, seed=3)
        got = train(*small_task, config).params
        want = init_params(small_task[-1], 8, 8, 16, config.p_self, 3)
        assert all(np.array_equal(got.tensors()[k], want.tensors()[k]) for k in PARAM_ORDER)


class TestPersistence:
    def test_checkpoint_round_trip(self, tmp_path, rng):
        params = random_params(rng)
        save_checkpoint(params, tmp_path / "m.ckpt", TrainConfig(seed=9))
        back, header = load_checkpoint(tmp_path / "m.ckpt")
        assert all(np.array_equal(back.tensors()[k], params.tensors()[k]) for k in PARAM_ORDER)
        assert back.p_self == params.p_self and header["seed"] == 9
        assert header["dims"] == params.dims

    def test_truncated_checkpoint(self, tmp_path, rng):
        from model1ir.corpus import DataError
        save_checkpoint(random_params(rng), tmp_path / "m.ckpt")
        raw = (tmp_path / "m.ckpt").read_bytes()
        (tmp_path / "m.ckpt").write_bytes(raw[:-8])
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "m.ckpt")

    def test_embedding_matrix_formats(self, tmp_path, rng):
        m = rng.normal(size=(3, 4))
        write_embedding_matrix(tmp_path / "e.bin", m)
        assert np.array_equal(read_embedding_matrix(tmp_path / "e.bin"), m)
        (tmp_path / "e.txt").write_text("\n".join(" ".join(repr(x) for x in row) for row in m.tolist()))
        assert np.array_equal(read_embedding_matrix(tmp_path / "e.txt"), m)

    def test_shape_validation(self):
        params = init_params(3, 2, 2, 2)
        tensors = params.tensors()
        tensors["f1_w"] = np.zeros((2, 5))
        with pytest.raises(ValueError):
            NeuralM1Params(**tensors)
