import numpy as np
import pytest

from modules.dumps import (
    DumpError, ScoreDump, build_score_dump, evaluate_dump, read_score_dump, write_score_dump,
)
from modules.evaluation import EvalCase, MetricError, RankingConfig, evaluate
from modules.models import CheckpointScorer, ScorerCheckpoint, ScorerSpec, init_parameters
from modules.numerics import Rng


N_ITEMS = 12


@pytest.fixture
def blocked_dump():
    """Cada caso tem o último item em 1º e o gt em 11º."""
    rows, gts, lasts = [], [], []
    for case_id in range(3):
        last, gt = case_id, case_id + 5
        scores = np.arange(N_ITEMS, 0, -1, dtype=np.float32) / N_ITEMS
        order = [last] + [j for j in range(N_ITEMS) if j not in (last, gt)][:9] + [gt]
        order += [j for j in range(N_ITEMS) if j not in order]
        row = np.empty(N_ITEMS, dtype=np.float32)
        row[order] = scores
        rows.append(row)
        gts.append(gt)
        lasts.append(last)
    return ScoreDump(
        catalog_size=N_ITEMS, mode="scores", case_ids=np.arange(3), gts=np.array(gts),
        lasts=np.array(lasts), values=np.vstack(rows),
    )


@pytest.fixture
def gru_setup():
    spec = ScorerSpec(kind="gru", embed_dim=4, hidden_dim=4, dropout=0.0, max_len=5)
    checkpoint = ScorerCheckpoint(
        spec=spec, parameters=init_parameters(spec, N_ITEMS, Rng(5)), catalog_size=N_ITEMS, seed=5,
    )
    rng = Rng(6)
    cases = []
    for case_id in range(40):
        prefix = tuple(rng.integer(N_ITEMS) for _ in range(1 + rng.integer(5)))
        gt = prefix[-1] if case_id % 10 == 0 else rng.integer(N_ITEMS)
        cases.append(EvalCase(case_id=case_id, prefix=prefix, gt=gt, last=prefix[-1]))
    return checkpoint, cases


class TestScoreDumpFormat:
    """Testes do formato de troca de escores"""

    def test_write_read_preserves_scores(self, blocked_dump, tmp_path):
        path = str(tmp_path / "dump.tsv")
        write_score_dump(blocked_dump, path)
        loaded = read_score_dump(path)
        assert loaded.mode == "scores" and loaded.catalog_size == N_ITEMS
        assert np.array_equal(loaded.values, blocked_dump.values), "Escores mudaram na releitura"
        assert loaded.values.dtype == np.float32

    def test_magic_line(self, blocked_dump, tmp_path):
        path = tmp_path / "dump.tsv"
        write_score_dump(blocked_dump, str(path))
        assert path.read_text(encoding="utf-8").splitlines()[0] == "#recency-scoredump v1"

    def test_topm_header(self, gru_setup, tmp_path):
        checkpoint, cases = gru_setup
        dump = build_score_dump(CheckpointScorer(checkpoint), cases, N_ITEMS, mode="topm", m=6)
        path = tmp_path / "topm.tsv"
        write_score_dump(dump, str(path))
        assert path.read_text(encoding="utf-8").splitlines()[1] == f"catalog_size={N_ITEMS}\tmode=topm\tm=6"
        assert np.array_equal(read_score_dump(str(path)).values, dump.values)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "ruim.tsv"
        path.write_text("case_id\tgt\tlast\tvalues\n", encoding="utf-8")
        with pytest.raises(DumpError):
            read_score_dump(str(path))

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "ruim.tsv"
        path.write_text(
            "#recency-scoredump v1\ncatalog_size=2\tmode=scores\ncase_id\tgt\tlast\tvalues\n"
            "0\t1\t0\t0.5,0.1\n1\tx\t0\t0.5,0.1\n",
            encoding="utf-8",
        )
        with pytest.raises(DumpError, match="linha 5"):
            read_score_dump(str(path))

    def test_wrong_width(self, tmp_path):
        path = tmp_path / "ruim.tsv"
        path.write_text(
            "#recency-scoredump v1\ncatalog_size=3\tmode=scores\ncase_id\tgt\tlast\tvalues\n0\t1\t0\t0.5,0.1\n",
            encoding="utf-8",
        )
        with pytest.raises(DumpError, match="linha 4"):
            read_score_dump(str(path))

    def test_non_finite_score(self, tmp_path):
        path = tmp_path / "ruim.tsv"
        path.write_text(
            "#recency-scoredump v1\ncatalog_size=2\tmode=scores\ncase_id\tgt\tlast\tvalues\n0\t1\t0\tnan,0.1\n",
            encoding="utf-8",
        )
        with pytest.raises(DumpError):
            read_score_dump(str(path))

    def test_score_beyond_float32_range(self, tmp_path):
        path = tmp_path / "ruim.tsv"
        path.write_text(
            "#recency-scoredump v1\ncatalog_size=2\tmode=scores\ncase_id\tgt\tlast\tvalues\n"
            "0\t1\t0\t0.5,0.1\n1\t0\t1\t1e39,-2e39\n",
            encoding="utf-8",
        )
        # -inf seria lido como a sentinela de mascaramento
        with pytest.raises(DumpError, match="linha 5"):
            read_score_dump(str(path))

    def test_index_outside_catalog(self):
        with pytest.raises(DumpError):
            ScoreDump(catalog_size=2, mode="scores", case_ids=np.arange(1), gts=np.array([5]),
                      lasts=np.array([0]), values=np.zeros((1, 2)))


class TestEvaluateDump:
    """Testes da avaliação a partir de dumps"""

    def test_last_item_blocks_gt(self, blocked_dump):
        report = evaluate_dump(blocked_dump, RankingConfig(ks=(10,), mask_last=True))
        m = report.metrics[10]
        assert (m.hit, m.hrli, m.hit_star, m.hrli_star) == (0.0, 1.0, 1.0, 0.0)
        assert report.n_eval == 3

    def test_scores_dump_equals_direct_evaluation(self, gru_setup, tmp_path):
        checkpoint, cases = gru_setup
        config = RankingConfig(ks=(1, 5, 10), mask_last=True)
        direct = evaluate(CheckpointScorer(checkpoint), cases, config, label="gru", seed=5)
        path = str(tmp_path / "dump.tsv")
        write_score_dump(build_score_dump(CheckpointScorer(checkpoint), cases, N_ITEMS), path)
        via_dump = evaluate_dump(read_score_dump(path), config, cases=cases, catalog_size=N_ITEMS,
                                 label="gru", seed=5)
        assert via_dump.to_dict() == direct.to_dict(), "Dump scores e avaliação direta divergem"

    def test_topm_full_list_equals_scores(self, gru_setup):
        checkpoint, cases = gru_setup
        config = RankingConfig(ks=(1, 5, 10), mask_last=True)
        scores = build_score_dump(CheckpointScorer(checkpoint), cases, N_ITEMS)
        topm = build_score_dump(CheckpointScorer(checkpoint), cases, N_ITEMS, mode="topm", m=50)
        assert topm.m == N_ITEMS
        assert evaluate_dump(topm, config).to_dict() == evaluate_dump(scores, config).to_dict()

    def test_topm_short_list_agrees_on_hits(self, gru_setup):
        checkpoint, cases = gru_setup
        config = RankingConfig(ks=(1, 3, 5), mask_last=True)
        scores = evaluate_dump(build_score_dump(CheckpointScorer(checkpoint), cases, N_ITEMS), config)
        topm = evaluate_dump(
            build_score_dump(CheckpointScorer(checkpoint), cases, N_ITEMS, mode="topm", m=6), config
        )
        for k in config.ks:
            assert topm.metrics[k].hit == scores.metrics[k].hit
            assert topm.metrics[k].hrli == scores.metrics[k].hrli
            assert topm.metrics[k].hit_star == scores.metrics[k].hit_star
            assert topm.metrics[k].hrli_star == 0.0

    def test_topm_requires_m_above_max_k(self, gru_setup):
        checkpoint, cases = gru_setup
        topm = build_score_dump(CheckpointScorer(checkpoint), cases, N_ITEMS, mode="topm", m=5)
        with pytest.raises(DumpError):
            evaluate_dump(topm, RankingConfig(ks=(5,)))

    def test_topm_rejects_mask_history(self, gru_setup):
        checkpoint, cases = gru_setup
        topm = build_score_dump(CheckpointScorer(checkpoint), cases, N_ITEMS, mode="topm", m=6)
        with pytest.raises(DumpError):
            evaluate_dump(topm, RankingConfig(ks=(1,), mask_history=True))

    def test_catalog_mismatch(self, blocked_dump):
        with pytest.raises(DumpError):
            evaluate_dump(blocked_dump, RankingConfig(), catalog_size=N_ITEMS + 1)

    def test_cases_mismatch(self, blocked_dump):
        cases = [EvalCase(case_id=i, prefix=(i,), gt=(i + 1) % N_ITEMS, last=i) for i in range(3)]
        with pytest.raises(DumpError):
            evaluate_dump(blocked_dump, RankingConfig(), cases=cases)

    def test_empty_dump(self):
        dump = ScoreDump(catalog_size=2, mode="scores", case_ids=np.zeros(0), gts=np.zeros(0, dtype=int),
                         lasts=np.zeros(0, dtype=int), values=np.zeros((0, 2)))
        with pytest.raises(MetricError):
            evaluate_dump(dump, RankingConfig())
