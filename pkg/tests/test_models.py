import numpy as np
import pytest

from modules.evaluation import EvalCase, RankingConfig, evaluate
from modules.models import (
    CheckpointScorer, ScorerCheckpoint, ScorerSpec, TrainConfig, TrainingError,
    fit_markov, fit_pop, forward_attn, forward_gru, gradient_check, init_parameters,
    score, score_batch, train,
)
from modules.networks import (
    ScorerError, attn_forward, gru_forward, pad_prefixes, tied_logits,
)
from modules.numerics import Rng
from modules.processors import SessionStore, split_leave_one_out


def case(case_id, prefix, gt):
    return EvalCase(case_id=case_id, prefix=tuple(prefix), gt=gt, last=prefix[-1])


def network_checkpoint(kind, n_items=6, embed_dim=4, hidden_dim=6, n_heads=1, max_len=5, seed=1, dtype=np.float64):
    spec = ScorerSpec(kind=kind, embed_dim=embed_dim, hidden_dim=hidden_dim, n_heads=n_heads,
                      dropout=0.0, max_len=max_len)
    params = init_parameters(spec, n_items, Rng(seed), dtype=dtype)
    return ScorerCheckpoint(spec=spec, parameters=params, catalog_size=n_items, seed=seed)


@pytest.fixture
def toy_split():
    """5 usuários, cada um repetindo um ciclo próprio de 4 itens: o próximo item é função do último."""
    sessions = {u: [4 * u + (t % 4) for t in range(10)] for u in range(5)}
    return split_leave_one_out(SessionStore(sessions), max_len=50, n_items=20)


class TestSpecs:
    """Testes das especificações de modelo e treino"""

    def test_aliases(self):
        assert ScorerSpec(kind="gru").kind == "gru_mini"
        assert ScorerSpec(kind="attn").kind == "attn_mini"

    @pytest.mark.parametrize("kwargs", [
        {"kind": "stamp"},
        {"kind": "attn", "embed_dim": 6, "n_heads": 4},
        {"kind": "gru", "dropout": 1.0},
        {"kind": "markov", "markov_alpha": 0.0},
        {"kind": "gru", "embed_dim": 0},
    ])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(ScorerError):
            ScorerSpec(**kwargs)

    def test_invalid_train_config(self):
        with pytest.raises(ScorerError):
            TrainConfig(patience=0)
        with pytest.raises(ScorerError):
            TrainConfig(batch_size=0)

    def test_spec_round_trip(self):
        spec = ScorerSpec(kind="attn", embed_dim=8, n_heads=2)
        assert ScorerSpec.from_dict(spec.to_dict()) == spec


class TestPopularity:
    """Testes do modelo de popularidade"""

    def test_counts_order(self):
        cases = [case(0, [2], 0), case(1, [2], 0), case(2, [3], 0), case(3, [0], 1)]
        checkpoint = fit_pop(cases, catalog_size=4)
        scores = score(checkpoint, [3])
        assert scores[0] > scores[1], "Item mais frequente deveria ter escore maior"
        assert scores[2] == 0.0, "Item nunca visto como gt deveria ter escore 0"

    def test_prefix_independent(self):
        checkpoint = fit_pop([case(0, [1], 2), case(1, [2], 1)], catalog_size=3)
        assert np.array_equal(score(checkpoint, [0]), score(checkpoint, [2, 1]))

    def test_equal_counts_fall_to_tie_break(self):
        checkpoint = fit_pop([case(i, [0], i) for i in range(4)], catalog_size=4)
        report = evaluate(CheckpointScorer(checkpoint), [case(0, [3], 2)], RankingConfig(ks=(2, 3)))
        assert report.metrics[2].hit == 0.0 and report.metrics[3].hit == 1.0

    def test_empty_train(self):
        with pytest.raises(ScorerError):
            fit_pop([])


class TestMarkov:
    """Testes do modelo de Markov"""

    def test_maximum_likelihood_limit(self):
        cases = [case(0, [0], 1), case(1, [0], 1), case(2, [0], 2)]
        checkpoint = fit_markov(cases, alpha=1e-9, catalog_size=4)
        scores = score(checkpoint, [3, 0])
        assert scores[1] == pytest.approx(2 / 3, rel=1e-6)
        assert scores[2] == pytest.approx(1 / 3, rel=1e-6)

    def test_unseen_last_uniform(self):
        checkpoint = fit_markov([case(0, [0], 1)], alpha=0.01, catalog_size=5)
        assert np.allclose(score(checkpoint, [3]), 0.2)

    def test_smoothing_formula(self):
        checkpoint = fit_markov([case(0, [0], 1)], alpha=0.01, catalog_size=4)
        scores = score(checkpoint, [0])
        assert scores[1] == pytest.approx(1.01 / 1.04, rel=1e-6)
        assert scores[2] == pytest.approx(0.01 / 1.04, rel=1e-6)

    def test_counts_cover_session_transitions(self):
        split = split_leave_one_out(SessionStore({0: [0, 1, 2, 0, 1, 3]}), n_items=4)
        checkpoint = fit_markov(split.train_cases, alpha=0.01, catalog_size=4)
        assert checkpoint.parameters["row_totals"].tolist() == [1.0, 1.0, 1.0, 0.0]


class TestNetworks:
    """Testes das redes (GRU e autoatenção)"""

    @pytest.mark.parametrize("kind", ["gru", "attn"])
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_gradient_check(self, kind, seed):
        report = gradient_check(kind, seed=seed)
        assert report.max_relative_error < 1e-4, \
            f"{kind}: erro relativo {report.max_relative_error:.2e} em {report.worst_parameter}"

    def test_gradient_check_five_items(self):
        assert gradient_check("gru", seed=4, n_items=5).max_relative_error < 1e-4

    def test_zero_parameters_give_zero_logits(self):
        checkpoint = network_checkpoint("gru")
        checkpoint.parameters = {k: np.zeros_like(v) for k, v in checkpoint.parameters.items()}
        assert np.all(forward_gru(checkpoint, [1, 2]) == 0.0)

    def test_saturated_gru_only_sees_last_item(self):
        checkpoint = network_checkpoint("gru")
        checkpoint.parameters["b_z"][:] = -100.0
        checkpoint.parameters["U_h"][:] = 0.0
        assert np.array_equal(forward_gru(checkpoint, [3]), forward_gru(checkpoint, [1, 3]))
        assert not np.array_equal(forward_gru(checkpoint, [3]), forward_gru(checkpoint, [1]))

    def test_tied_logits_perturbation(self):
        checkpoint = network_checkpoint("attn")
        batch = pad_prefixes([[0, 1, 2]], 6)
        hidden, _ = attn_forward(checkpoint.parameters, batch, n_heads=1)
        before = tied_logits(checkpoint.parameters, hidden)
        perturbed = dict(checkpoint.parameters)
        perturbed["item_emb"] = checkpoint.parameters["item_emb"].copy()
        perturbed["item_emb"][4] += 0.5
        after = tied_logits(perturbed, hidden)
        changed = np.flatnonzero(before[0] != after[0]).tolist()
        assert changed == [4], "Perturbar um embedding deveria alterar apenas o logit do item"

    def test_causal_mask(self):
        params = network_checkpoint("attn", n_heads=2).parameters
        _, a = attn_forward(params, pad_prefixes([[0, 1, 2, 3, 4]], 6), n_heads=2)
        _, b = attn_forward(params, pad_prefixes([[0, 1, 5, 3, 4]], 6), n_heads=2)
        assert np.allclose(a["states"][:, :2], b["states"][:, :2], rtol=0, atol=1e-12)
        assert not np.allclose(a["states"][:, 2], b["states"][:, 2])

    def test_attention_rows_normalized(self):
        params = network_checkpoint("attn").parameters
        _, cache = attn_forward(params, pad_prefixes([[0], [1, 2, 3]], 6), n_heads=1)
        assert cache["attn"][0, 0, 0, 0] == pytest.approx(1.0), "Prefixo de um item deve atender só a si mesmo"
        sums = cache["attn"].sum(axis=-1)
        assert np.allclose(sums, 1.0)

    def test_padding_does_not_change_representation(self):
        params = network_checkpoint("gru").parameters
        alone, _ = gru_forward(params, pad_prefixes([[1, 2]], 6))
        padded, _ = gru_forward(params, pad_prefixes([[1, 2], [0, 3, 4, 5]], 6))
        assert np.allclose(alone[0], padded[0], rtol=0, atol=1e-12)

    def test_prefix_longer_than_positions(self):
        checkpoint = network_checkpoint("attn", max_len=3)
        with pytest.raises(ScorerError):
            forward_attn(checkpoint, [0, 1, 2, 3])

    def test_invalid_index(self):
        with pytest.raises(ScorerError):
            score(network_checkpoint("gru"), [0, 9])


class TestScore:
    """Testes do contrato de pontuação"""

    @pytest.mark.parametrize("kind", ["pop", "markov", "gru", "attn"])
    def test_output_length(self, kind):
        if kind == "pop":
            checkpoint = fit_pop([case(0, [0], 1)], catalog_size=6)
        elif kind == "markov":
            checkpoint = fit_markov([case(0, [0], 1)], catalog_size=6)
        else:
            checkpoint = network_checkpoint(kind, dtype=np.float32)
        scores = score(checkpoint, [0, 1])
        assert scores.shape == (6,) and scores.dtype == np.float32
        assert np.all(np.isfinite(scores))
        assert np.array_equal(scores, score(checkpoint, [0, 1])), "Pontuação não determinística"

    def test_truncation_before_forward(self):
        checkpoint = network_checkpoint("gru", max_len=3, dtype=np.float32)
        assert np.array_equal(score(checkpoint, [5, 4, 1, 2, 3]), score(checkpoint, [1, 2, 3]))

    def test_batch_matches_single(self):
        checkpoint = network_checkpoint("attn", dtype=np.float32)
        prefixes = [[0], [1, 2, 3], [4, 5]]
        batch = score_batch(checkpoint, prefixes)
        for row, prefix in zip(batch, prefixes):
            assert np.allclose(row, score(checkpoint, prefix), atol=1e-6)

    def test_validate_rejects_bad_shape(self):
        checkpoint = network_checkpoint("gru")
        checkpoint.parameters["W_z"] = np.zeros((2, 2))
        with pytest.raises(ScorerError):
            checkpoint.validate()

    def test_validate_rejects_non_finite(self):
        checkpoint = network_checkpoint("gru")
        checkpoint.parameters["b_h"][0] = np.inf
        with pytest.raises(ScorerError):
            checkpoint.validate()


class TestTrain:
    """Testes do laço de treino"""

    def test_patience_one_stops_after_second_epoch(self, toy_split):
        spec = ScorerSpec(kind="gru", embed_dim=8, hidden_dim=8, dropout=0.0)
        config = TrainConfig(patience=1, max_epochs=50, batch_size=8, seed=3)
        calls = []

        def constant_evaluator(checkpoint):
            calls.append({k: v.copy() for k, v in checkpoint.parameters.items()})
            return 0.5

        checkpoint = train(spec, toy_split, config, evaluator=constant_evaluator)
        assert checkpoint.epochs_run == 2, "Deveria parar após a época 2"
        assert len(calls) == 2
        for name, value in calls[0].items():
            assert np.array_equal(checkpoint.parameters[name], value), "Deveria devolver os parâmetros da época 1"

    def test_deterministic(self, toy_split):
        spec = ScorerSpec(kind="attn", embed_dim=8, hidden_dim=8)
        config = TrainConfig(max_epochs=3, batch_size=8, seed=7)
        a = train(spec, toy_split, config)
        b = train(spec, toy_split, config)
        for name in a.parameters:
            assert np.array_equal(a.parameters[name], b.parameters[name]), f"{name} difere entre execuções"
        assert a.history == b.history

    @pytest.mark.parametrize("kind", ["gru", "attn"])
    def test_memorizes_toy_data(self, toy_split, kind):
        spec = ScorerSpec(kind=kind, embed_dim=16, hidden_dim=16, dropout=0.0)
        config = TrainConfig(lr=0.01, batch_size=4, max_epochs=200, patience=200, seed=2024, eval_k_for_stopping=1)
        checkpoint = train(spec, toy_split, config)
        assert min(h["loss"] for h in checkpoint.history) < 0.1, "Perda de treino não caiu abaixo de 0.1"
        assert checkpoint.best_valid_hit == 1.0
        report = evaluate(CheckpointScorer(checkpoint), toy_split.valid_cases, RankingConfig(ks=(1,)))
        assert report.metrics[1].hit == 1.0

    def test_pop_and_markov_have_no_epochs(self, toy_split):
        for kind in ("pop", "markov"):
            checkpoint = train(ScorerSpec(kind=kind), toy_split, TrainConfig())
            assert checkpoint.epochs_run == 0
            assert checkpoint.catalog_size == 20
            assert 0.0 <= checkpoint.best_valid_hit <= 1.0

    def test_markov_memorizes_toy_data(self, toy_split):
        checkpoint = train(ScorerSpec(kind="markov"), toy_split, TrainConfig(eval_k_for_stopping=1))
        assert checkpoint.best_valid_hit == 1.0

    def test_divergence_reports_epoch(self, toy_split):
        spec = ScorerSpec(kind="gru", embed_dim=8, hidden_dim=8, dropout=0.0)
        with np.errstate(all="ignore"):
            with pytest.raises(TrainingError) as info:
                train(spec, toy_split, TrainConfig(lr=1e30, max_epochs=5, batch_size=4))
        assert info.value.epoch >= 1

    def test_empty_split(self, toy_split):
        toy_split.valid_cases = []
        with pytest.raises(ScorerError):
            train(ScorerSpec(kind="pop"), toy_split, TrainConfig())
