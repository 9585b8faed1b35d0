import io
import json

import numpy as np
import pytest

from modules.extractors import (
    ExtractionError,
    decode_array,
    ingest,
    load_catalog,
    load_checkpoint,
    load_manifest,
    load_split,
    load_stats,
    read_magic,
    read_report,
)
from modules.evaluation import KMetrics, MetricReport
from modules.exporters import encode_array, write_checkpoint, write_json, write_split
from modules.manifest import RunManifest
from modules.models import ScorerCheckpoint, ScorerSpec, fit_pop, init_parameters
from modules.numerics import Rng
from modules.processors import build_sessions, split_leave_one_out, stats


class TestIngest:
    """Testes de leitura do log bruto"""

    @pytest.fixture
    def write(self, tmp_path):
        def _write(text, name="log.tsv"):
            path = tmp_path / name
            path.write_text(text, encoding="utf-8")
            return str(path)
        return _write

    def test_three_rows(self, write):
        log = ingest(write("u1\ti1\t100\nu1\ti2\t200\nu2\ti1\t150\n"))
        assert list(log.columns) == ["user", "item", "timestamp"]
        assert len(log) == 3
        assert log["timestamp"].dtype == np.int64
        assert log.loc[2, "user"] == "u2" and log.loc[2, "timestamp"] == 150

    def test_duplicates_removed_order_kept(self, write):
        log = ingest(write("u1\ti2\t5\nu1\ti1\t3\nu1\ti2\t5\nu1\ti2\t6\n"))
        assert list(zip(log["item"], log["timestamp"])) == [("i2", 5), ("i1", 3), ("i2", 6)]

    def test_bad_timestamp_reports_line(self, write):
        path = write("u1\ti1\t100\n\nu2\ti2\tabc\n")
        with pytest.raises(ExtractionError, match="linha 3"):
            ingest(path)

    def test_header_shifts_line_numbers(self, write):
        path = write("user\titem\tts\nu1\ti1\tx\n")
        with pytest.raises(ExtractionError, match="linha 2"):
            ingest(path, has_header=True)

    def test_header_skipped(self, write):
        log = ingest(write("user\titem\tts\nu1\ti1\t7\n"), has_header=True)
        assert len(log) == 1 and log.loc[0, "item"] == "i1"

    def test_multichar_delimiter_and_columns(self, write):
        text = "1::10::5::978300760\n1::20::3::978300761\n2::10::4::978300762\n"
        log = ingest(write(text, "ratings.dat"), delimiter="::", time_col=3)
        assert list(log["item"]) == ["10", "20", "10"]
        assert list(log["timestamp"]) == [978300760, 978300761, 978300762]

    def test_csv_format(self, write):
        log = ingest(write("u1,i1,1\nu1,i2,2\n", "log.csv"), fmt="csv")
        assert list(log["item"]) == ["i1", "i2"]

    def test_binary_stream(self):
        log = ingest(io.BytesIO(b"u1\ti1\t1\nu1\ti2\t2\n"))
        assert len(log) == 2

    def test_empty_file(self, write):
        log = ingest(write(""))
        assert log.empty
        assert list(log.columns) == ["user", "item", "timestamp"]

    def test_missing_column(self, write):
        with pytest.raises(ExtractionError, match="colunas"):
            ingest(write("u1\ti1\nu2\ti2\n"))

    def test_unknown_format(self, write):
        with pytest.raises(ExtractionError):
            ingest(write("u1\ti1\t1\n"), fmt="parquet")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ExtractionError):
            ingest(str(tmp_path / "nao_existe.tsv"))


class TestArtifacts:
    """Testes de leitura dos artefatos gravados pelo prep e pelo train"""

    @pytest.fixture
    def prepared(self, tmp_path):
        rows = []
        for u, items in enumerate([["a", "b", "c", "d"], ["b", "c", "a"], ["c", "a", "b", "a", "c"]]):
            rows += [(f"u{u}", item, t) for t, item in enumerate(items)]
        path = tmp_path / "log.tsv"
        path.write_text("".join(f"{u}\t{i}\t{t}\n" for u, i, t in rows), encoding="utf-8")
        log = ingest(str(path))
        store, catalog = build_sessions(log)
        split = split_leave_one_out(store, max_len=3, n_items=catalog.n_items)
        manifest = RunManifest(command="prep", dataset_id="toy", preprocessing={"max_len": 3})
        directory = str(tmp_path / "split")
        write_split(split, catalog, stats(log, catalog), manifest, directory)
        return split, catalog, directory

    def test_split_reloads_identically(self, prepared):
        split, catalog, directory = prepared
        loaded, loaded_catalog = load_split(directory)
        assert loaded.train_cases == split.train_cases
        assert loaded.valid_cases == split.valid_cases
        assert loaded.test_cases == split.test_cases
        assert loaded.max_len == 3 and loaded.n_items == catalog.n_items
        assert loaded_catalog.item_ids == catalog.item_ids == ["a", "b", "c", "d"]

    def test_split_magic_lines(self, prepared):
        _, _, directory = prepared
        with open(f"{directory}/train.tsv", encoding="utf-8") as handle:
            assert handle.readline() == "#recency-cases v1\n"
        with open(f"{directory}/stats.json", encoding="utf-8") as handle:
            data = json.load(handle)
        assert data["format"] == "recency-stats" and data["n_interactions"] == 12

    def test_stats_reload(self, prepared):
        _, catalog, directory = prepared
        loaded = load_stats(f"{directory}/stats.json")
        assert (loaded.n_users, loaded.n_items, loaded.n_interactions) == (3, catalog.n_items, 12)
        assert loaded.avg_length == pytest.approx(4.0)
        assert loaded.sparsity == pytest.approx(100 * (1 - 10 / (3 * 4)))

    def test_manifest_reloads(self, prepared):
        _, _, directory = prepared
        manifest = load_manifest(f"{directory}/manifest.json")
        assert manifest == RunManifest(command="prep", dataset_id="toy", preprocessing={"max_len": 3})

    def test_manifest_without_command(self, tmp_path):
        path = str(tmp_path / "manifest.json")
        write_json({"format": "recency-manifest", "version": 1, "dataset_id": "toy"}, path)
        with pytest.raises(ExtractionError, match="manifesto inválido"):
            load_manifest(path)

    def test_missing_split_directory(self, tmp_path):
        with pytest.raises(ExtractionError, match="não encontrado"):
            load_split(str(tmp_path / "vazio"))

    def test_catalog_wrong_magic(self, tmp_path):
        path = tmp_path / "catalog.tsv"
        path.write_text("#recency-cases v1\nkind\tindex\texternal_id\n", encoding="utf-8")
        with pytest.raises(ExtractionError, match="linha mágica"):
            load_catalog(str(path))

    def test_read_magic_version(self):
        assert read_magic("#recency-cases v1\n", "recency-cases", "x") == 1
        with pytest.raises(ExtractionError):
            read_magic("recency-cases v1", "recency-cases", "x")

    def test_checkpoint_reloads_bit_identical(self, tmp_path):
        spec = ScorerSpec(kind="attn", embed_dim=4, hidden_dim=4, max_len=3)
        checkpoint = ScorerCheckpoint(
            spec=spec, parameters=init_parameters(spec, 5, Rng(1)), catalog_size=5, seed=1,
        )
        path = str(tmp_path / "modelo.json")
        write_checkpoint(checkpoint, path)
        loaded = load_checkpoint(path)
        assert loaded.spec == spec
        for name, value in checkpoint.parameters.items():
            assert np.array_equal(loaded.parameters[name], value), f"Parâmetro {name} mudou"
            assert loaded.parameters[name].dtype == np.float32

    def test_pop_checkpoint_reloads(self, prepared, tmp_path):
        split, catalog, _ = prepared
        checkpoint = fit_pop(split.train_cases, catalog.n_items)
        path = str(tmp_path / "pop.json")
        write_checkpoint(checkpoint, path)
        assert np.array_equal(load_checkpoint(path).parameters["counts"], checkpoint.parameters["counts"])

    def test_checkpoint_wrong_shape(self, tmp_path):
        spec = ScorerSpec(kind="gru", embed_dim=4, hidden_dim=4, max_len=3)
        checkpoint = ScorerCheckpoint(
            spec=spec, parameters=init_parameters(spec, 5, Rng(1)), catalog_size=5, seed=1,
        )
        path = str(tmp_path / "modelo.json")
        write_checkpoint(checkpoint, path)
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
        data["catalog_size"] = 6
        write_json(data, path)
        with pytest.raises(ExtractionError, match="checkpoint inválido"):
            load_checkpoint(path)

    def test_checkpoint_wrong_format(self, tmp_path):
        path = str(tmp_path / "modelo.json")
        write_json({"format": "recency-report", "version": 1}, path)
        with pytest.raises(ExtractionError, match="formato esperado"):
            load_checkpoint(path)

    def test_decode_array_little_endian(self):
        value = np.array([[1, -2], [3, 4]], dtype=np.int32)
        assert np.array_equal(decode_array(encode_array(value)), value)

    def test_report_reloads(self, tmp_path):
        report = MetricReport(
            ks=(5,), metrics={5: KMetrics(hit=0.5, ndcg=0.25, hrli=0.75)}, n_eval=4, n_gt_equals_last=1,
        )
        path = str(tmp_path / "relatorio.json")
        write_json(report.to_dict(), path)
        assert read_report(path) == report
