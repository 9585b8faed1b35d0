# Arquivo: modules/extractors.py

import base64
import csv
import json
import logging
import os
import re
from typing import BinaryIO, Optional, Tuple, Union

import numpy as np
import pandas as pd

from modules.evaluation import EvalCase, MetricError, MetricReport
from modules.manifest import MANIFEST_FORMAT, RunManifest
from modules.models import ScorerCheckpoint, ScorerSpec
from modules.networks import ScorerError
from modules.processors import LOG_COLUMNS, Catalog, CorpusError, DatasetStats, SplitDataset


class ExtractionError(Exception):
    """Exceção personalizada para erros de leitura de dados e artefatos"""
    pass


DELIMITERS = {"tsv": "\t", "csv": ","}
CASES_FORMAT = "recency-cases"
CATALOG_FORMAT = "recency-catalog"
SPLIT_FILES = ("train", "valid", "test")


def _raise(message: str) -> None:
    logging.error(message)
    raise ExtractionError(message)


def _empty_log() -> pd.DataFrame:
    return pd.DataFrame({
        "user": pd.Series(dtype=str),
        "item": pd.Series(dtype=str),
        "timestamp": pd.Series(dtype="int64"),
    })


def ingest(
    source: Union[str, BinaryIO],
    fmt: str = "tsv",
    has_header: bool = False,
    delimiter: Optional[str] = None,
    user_col: int = 0,
    item_col: int = 1,
    time_col: int = 2,
    encoding: str = "utf-8",
) -> pd.DataFrame:
    """
    Lê um log bruto de interações (user, item, timestamp).

    Linhas em branco são ignoradas sem deslocar a numeração. Triplas exatamente
    duplicadas são removidas; as demais mantêm a ordem do arquivo.

    Args:
        source: Caminho ou fluxo de bytes
        fmt: 'tsv' ou 'csv' (define o delimitador padrão)
        has_header: A primeira linha é cabeçalho
        delimiter: Delimitador explícito (ex.: '::' para ratings.dat)
        user_col, item_col, time_col: Posições das colunas (base 0)
        encoding: Codificação do arquivo

    Returns:
        pd.DataFrame: Colunas user, item (texto) e timestamp (int64)

    Raises:
        ExtractionError: Formato desconhecido, linha malformada ou timestamp não inteiro (com número da linha)
    """
    if fmt not in DELIMITERS:
        _raise(f"Formato desconhecido: {fmt!r}. Opções: {list(DELIMITERS)}")
    sep = delimiter or DELIMITERS[fmt]
    name = source if isinstance(source, str) else getattr(source, "name", "<fluxo>")
    logging.info(f"📥 Lendo interações de {name}...")

    try:
        raw = pd.read_csv(
            source,
            sep=re.escape(sep) if len(sep) > 1 else sep,
            header=None,
            dtype=str,
            keep_default_na=False,
            na_values=[],
            skip_blank_lines=False,
            skiprows=1 if has_header else 0,
            engine="python" if len(sep) > 1 else "c",
            encoding=encoding,
            quoting=csv.QUOTE_NONE,
        )
    except pd.errors.EmptyDataError:
        logging.warning(f"⚠️ Arquivo sem dados: {name}")
        return _empty_log()
    except pd.errors.ParserError as e:
        _raise(f"Linha malformada em {name}: {e}")
    except OSError as e:
        _raise(f"Erro ao abrir {name}: {e}")

    first_line = 2 if has_header else 1
    raw.index = raw.index + first_line
    raw = raw.fillna("")
    raw = raw[(raw.apply(lambda col: col.str.strip()) != "").any(axis=1)]
    if raw.empty:
        logging.warning(f"⚠️ Arquivo sem dados: {name}")
        return _empty_log()

    needed = max(user_col, item_col, time_col) + 1
    if raw.shape[1] < needed:
        line = int(raw.index[0]) if len(raw) else first_line
        _raise(f"{name}, linha {line}: esperadas ao menos {needed} colunas, encontradas {raw.shape[1]}")

    log = pd.DataFrame({
        "user": raw[user_col].str.strip(),
        "item": raw[item_col].str.strip(),
        "timestamp": raw[time_col].str.strip(),
    })
    empty = (log["user"] == "") | (log["item"] == "") | (log["timestamp"] == "")
    if empty.any():
        _raise(f"{name}, linha {int(log.index[empty.argmax()])}: linha malformada (campo vazio ou ausente)")
    bad_time = ~log["timestamp"].str.fullmatch(r"[+-]?\d+")
    if bad_time.any():
        line = int(log.index[bad_time.argmax()])
        _raise(f"{name}, linha {line}: timestamp não inteiro {log.loc[line, 'timestamp']!r}")
    log["timestamp"] = log["timestamp"].astype("int64")

    before = len(log)
    log = log.drop_duplicates(subset=LOG_COLUMNS, keep="first").reset_index(drop=True)
    logging.info(f"✅ Leitura concluída: {len(log)} interações ({before - len(log)} duplicatas removidas)")
    return log


def read_magic(line: str, expected_format: str, path: str) -> int:
    """
    Confere a linha mágica ``#<formato> v<versão>`` de um artefato TSV.

    Returns:
        int: Versão encontrada
    """
    parts = line.strip().lstrip("#").split()
    if not line.startswith("#") or len(parts) != 2 or parts[0] != expected_format or not parts[1].startswith("v"):
        _raise(f"{path}: linha mágica inválida (esperado '#{expected_format} v<versão>')")
    try:
        return int(parts[1][1:])
    except ValueError:
        _raise(f"{path}: versão inválida na linha mágica: {parts[1]!r}")


def _read_tsv_artifact(path: str, expected_format: str, encoding: str) -> pd.DataFrame:
    if not os.path.exists(path):
        _raise(f"Arquivo não encontrado: {path}")
    with open(path, encoding=encoding) as handle:
        read_magic(handle.readline(), expected_format, path)
        return pd.read_csv(handle, sep="\t", dtype=str, keep_default_na=False)


def load_cases(path: str, encoding: str = "utf-8") -> list:
    """
    Lê um arquivo de casos (case_id, prefix, gt, last).

    Raises:
        ExtractionError: Arquivo ausente, linha mágica inválida ou caso malformado
    """
    frame = _read_tsv_artifact(path, CASES_FORMAT, encoding)
    cases = []
    for row_no, row in enumerate(frame.itertuples(index=False), start=3):
        try:
            cases.append(EvalCase(
                case_id=int(row.case_id),
                prefix=tuple(int(i) for i in row.prefix.split(",")),
                gt=int(row.gt),
                last=int(row.last),
            ))
        except (ValueError, AttributeError, MetricError) as e:
            _raise(f"{path}, linha {row_no}: caso malformado ({e})")
    return cases


def load_catalog(path: str, encoding: str = "utf-8") -> Catalog:
    """Lê o mapeamento id externo <-> índice denso gravado pelo prep."""
    frame = _read_tsv_artifact(path, CATALOG_FORMAT, encoding)
    try:
        items = frame[frame["kind"] == "item"].assign(index=lambda f: f["index"].astype(int)).sort_values("index")
        users = frame[frame["kind"] == "user"].assign(index=lambda f: f["index"].astype(int)).sort_values("index")
        if list(items["index"]) != list(range(len(items))) or list(users["index"]) != list(range(len(users))):
            raise ValueError("índices densos não contíguos")
        return Catalog(item_ids=list(items["external_id"]), user_ids=list(users["external_id"]))
    except (KeyError, ValueError, CorpusError) as e:
        _raise(f"{path}: catálogo inválido ({e})")


def read_json_artifact(path: str, expected_format: str, encoding: str = "utf-8") -> dict:
    """Lê um artefato JSON e confere as chaves ``format`` e ``version``."""
    if not os.path.exists(path):
        _raise(f"Arquivo não encontrado: {path}")
    try:
        with open(path, encoding=encoding) as handle:
            data = json.load(handle)
    except json.JSONDecodeError as e:
        _raise(f"{path}: JSON inválido ({e})")
    if not isinstance(data, dict) or data.get("format") != expected_format:
        _raise(f"{path}: formato esperado {expected_format!r}, encontrado {data.get('format') if isinstance(data, dict) else None!r}")
    if data.get("version") != 1:
        _raise(f"{path}: versão não suportada {data.get('version')!r}")
    return data


def load_stats(path: str, encoding: str = "utf-8") -> DatasetStats:
    data = read_json_artifact(path, "recency-stats", encoding)
    return DatasetStats(
        n_users=int(data["n_users"]),
        n_items=int(data["n_items"]),
        n_interactions=int(data["n_interactions"]),
        avg_length=float(data["avg_length"]),
        sparsity=float(data["sparsity"]),
    )


def load_manifest(path: str, encoding: str = "utf-8") -> RunManifest:
    data = read_json_artifact(path, MANIFEST_FORMAT, encoding)
    try:
        return RunManifest.from_dict(data)
    except (KeyError, ValueError) as e:
        _raise(f"{path}: manifesto inválido ({e})")


def load_split(directory: str, encoding: str = "utf-8") -> Tuple[SplitDataset, Catalog]:
    """
    Lê o diretório gravado pelo prep: train/valid/test.tsv, catalog.tsv e manifest.json.

    Raises:
        ExtractionError: Diretório ou arquivos ausentes
    """
    if not os.path.isdir(directory):
        _raise(f"Diretório do conjunto não encontrado: {directory}")
    catalog = load_catalog(os.path.join(directory, "catalog.tsv"), encoding)
    cases = {name: load_cases(os.path.join(directory, f"{name}.tsv"), encoding) for name in SPLIT_FILES}
    manifest_path = os.path.join(directory, "manifest.json")
    max_len = None
    if os.path.exists(manifest_path):
        max_len = load_manifest(manifest_path, encoding).preprocessing.get("max_len")
    if max_len is None:
        max_len = max((len(c.prefix) for group in cases.values() for c in group), default=1)

    for name, group in cases.items():
        for case in group:
            if case.gt >= catalog.n_items or max(case.prefix) >= catalog.n_items:
                _raise(f"{directory}/{name}.tsv: caso {case.case_id} com item fora do catálogo")
    split = SplitDataset(
        train_cases=cases["train"], valid_cases=cases["valid"], test_cases=cases["test"],
        max_len=int(max_len), n_items=catalog.n_items,
    )
    logging.info(
        f"✅ Conjunto carregado de {directory}: treino={len(split.train_cases)}, "
        f"validação={len(split.valid_cases)}, teste={len(split.test_cases)}, itens={catalog.n_items}"
    )
    return split, catalog


def decode_array(payload: dict) -> np.ndarray:
    """Inverso de ``exporters.encode_array``: base64 de bytes little-endian em ordem de linha."""
    dtype = np.dtype(payload["dtype"]).newbyteorder("<")
    raw = base64.b64decode(payload["data"])
    return np.frombuffer(raw, dtype=dtype).reshape(payload["shape"]).astype(dtype.newbyteorder("="))


def load_checkpoint(path: str, encoding: str = "utf-8") -> ScorerCheckpoint:
    """
    Lê um checkpoint JSON e valida formas e finitude dos parâmetros.
    """
    data = read_json_artifact(path, "recency-checkpoint", encoding)
    try:
        checkpoint = ScorerCheckpoint(
            spec=ScorerSpec.from_dict(data["spec"]),
            parameters={name: decode_array(p) for name, p in data["parameters"].items()},
            catalog_size=int(data["catalog_size"]),
            seed=int(data["seed"]),
            best_valid_hit=float(data["best_valid_hit"]),
            epochs_run=int(data["epochs_run"]),
            history=data.get("history", []),
        )
        return checkpoint.validate()
    except (KeyError, TypeError, ValueError, ScorerError) as e:
        _raise(f"{path}: checkpoint inválido ({e})")


def read_report(path: str, encoding: str = "utf-8") -> MetricReport:
    data = read_json_artifact(path, "recency-report", encoding)
    try:
        return MetricReport.from_dict(data)
    except (KeyError, TypeError, ValueError, MetricError) as e:
        _raise(f"{path}: relatório inválido ({e})")
