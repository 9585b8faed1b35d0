# Arquivo: modules/dumps.py

"""
Troca de escores com modelos externos (ScoreDump).

Modo ``scores``: vetor completo de escores (float32) por caso.
Modo ``topm``: os M primeiros índices na ordem do ranking. No modo topm as
métricas estreladas são obtidas apagando o último item da lista, o que equivale
a rebaixá-lo ao sentinela pela identidade de deslocamento de rank.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from modules.evaluation import (
    CaseRanks,
    EvalCase,
    MetricError,
    MetricReport,
    RankingConfig,
    rank_score_matrix,
    report_from_ranks,
    select_cases,
    top_k,
)
from modules.extractors import ExtractionError

DUMP_MODES = ("scores", "topm")
DUMP_FORMAT = "recency-scoredump"
DUMP_VERSION = 1


class DumpError(ExtractionError):
    """Exceção personalizada para arquivos de escores inválidos ou incompatíveis"""
    pass


@dataclass
class ScoreDump:
    catalog_size: int
    mode: str
    case_ids: np.ndarray
    gts: np.ndarray
    lasts: np.ndarray
    values: np.ndarray
    m: Optional[int] = None

    def __post_init__(self):
        if self.mode not in DUMP_MODES:
            raise DumpError(f"Modo de dump desconhecido: {self.mode!r}")
        n_rows = len(self.case_ids)
        if not (len(self.gts) == len(self.lasts) == n_rows == self.values.shape[0]):
            raise DumpError("Dump com colunas de tamanhos diferentes")
        width = self.catalog_size if self.mode == "scores" else self.m
        if self.mode == "topm" and (self.m is None or self.m < 1):
            raise DumpError("Dump topm exige M >= 1")
        if n_rows and self.values.shape[1] != width:
            raise DumpError(f"Dump com {self.values.shape[1]} colunas de valores, esperado {width}")
        for name, column in (("gt", self.gts), ("last", self.lasts)):
            if n_rows and (column.min() < 0 or column.max() >= self.catalog_size):
                raise DumpError(f"Índice {name} fora do catálogo de {self.catalog_size} itens")

    @property
    def n_rows(self) -> int:
        return len(self.case_ids)


def build_score_dump(
    scorer: Callable,
    cases: Sequence[EvalCase],
    catalog_size: int,
    mode: str = "scores",
    m: Optional[int] = None,
    batch_size: int = 256,
) -> ScoreDump:
    """
    Pontua os casos com um modelo e monta o dump no modo pedido.

    Usa ``scorer.score_batch`` nos mesmos blocos da avaliação direta, para que
    os escores gravados coincidam com os avaliados.
    """
    if mode not in DUMP_MODES:
        raise DumpError(f"Modo de dump desconhecido: {mode!r}")
    if mode == "topm" and (m is None or m < 1):
        raise DumpError("Modo topm exige M >= 1")
    if mode == "topm" and m > catalog_size:
        logging.warning(f"⚠️ M={m} maior que o catálogo; usando M={catalog_size}")
        m = catalog_size

    blocks = []
    for start in range(0, len(cases), batch_size):
        block = cases[start:start + batch_size]
        scores = np.asarray(scorer.score_batch([c.prefix for c in block]), dtype=np.float32)
        if scores.shape != (len(block), catalog_size):
            raise DumpError(f"Escores com forma {scores.shape}, esperado ({len(block)}, {catalog_size})")
        if mode == "scores":
            blocks.append(scores)
        else:
            blocks.append(np.vstack([top_k(row, m) for row in scores]))

    values = np.vstack(blocks) if blocks else np.zeros((0, catalog_size if mode == "scores" else m))
    logging.info(f"✅ Dump {mode} montado: {len(cases)} casos")
    return ScoreDump(
        catalog_size=catalog_size,
        mode=mode,
        case_ids=np.array([c.case_id for c in cases], dtype=np.int64),
        gts=np.array([c.gt for c in cases], dtype=np.int64),
        lasts=np.array([c.last for c in cases], dtype=np.int64),
        values=values,
        m=m if mode == "topm" else None,
    )


def _format_scores(row: np.ndarray) -> str:
    return ",".join(map(repr, row.astype(np.float64).tolist()))


def _format_items(row: np.ndarray) -> str:
    return ",".join(map(str, row.tolist()))


def write_score_dump(dump: ScoreDump, path: str, encoding: str = "utf-8") -> str:
    """
    Grava o dump em TSV versionado.

    Linha 1: ``#recency-scoredump v1``; linha 2: ``catalog_size=N<TAB>mode=...``
    (mais ``m=M`` no modo topm); depois cabeçalho e uma linha por caso com os
    valores separados por vírgula. Escores saem com repr de float64 do valor
    float32, o que preserva os bits na releitura.
    """
    header = f"catalog_size={dump.catalog_size}\tmode={dump.mode}"
    if dump.mode == "topm":
        header += f"\tm={dump.m}"
    as_text = _format_scores if dump.mode == "scores" else _format_items
    with open(path, "w", encoding=encoding, newline="\n") as handle:
        handle.write(f"#{DUMP_FORMAT} v{DUMP_VERSION}\n{header}\ncase_id\tgt\tlast\tvalues\n")
        for cid, gt, last, row in zip(dump.case_ids, dump.gts, dump.lasts, dump.values):
            handle.write(f"{int(cid)}\t{int(gt)}\t{int(last)}\t{as_text(row)}\n")
    logging.info(f"✅ Dump gravado: {path} ({dump.n_rows} linhas)")
    return path


def read_score_dump(path: str, encoding: str = "utf-8") -> ScoreDump:
    """
    Lê um dump gravado por ``write_score_dump`` (ou por um modelo externo).

    Raises:
        DumpError: Cabeçalho inválido, linha malformada (com número) ou escore não finito
    """
    try:
        with open(path, encoding=encoding) as handle:
            lines = handle.read().splitlines()
    except OSError as e:
        logging.error(f"Erro ao ler dump {path}: {e}")
        raise DumpError(f"Erro ao ler dump {path}: {e}")

    if not lines or lines[0].strip() != f"#{DUMP_FORMAT} v{DUMP_VERSION}":
        raise DumpError(f"{path}: linha mágica ausente ou versão não suportada")
    try:
        header = dict(part.split("=", 1) for part in lines[1].strip().split("\t"))
        catalog_size = int(header["catalog_size"])
        mode = header["mode"]
        m = int(header["m"]) if mode == "topm" else None
    except (IndexError, KeyError, ValueError):
        raise DumpError(f"{path}: cabeçalho inválido na linha 2")

    width = catalog_size if mode == "scores" else (m or 0)
    case_ids, gts, lasts, values = [], [], [], []
    value_type = np.float64 if mode == "scores" else np.int64
    for line_no, line in enumerate(lines[3:], start=4):
        if not line.strip():
            continue
        fields = line.split("\t")
        try:
            if len(fields) != 4:
                raise ValueError(f"{len(fields)} campos")
            row = np.array(fields[3].split(","), dtype=value_type)
            case_ids.append(int(fields[0]))
            gts.append(int(fields[1]))
            lasts.append(int(fields[2]))
        except ValueError as e:
            logging.error(f"{path}: linha {line_no} malformada ({e})")
            raise DumpError(f"{path}: linha {line_no} malformada ({e})")
        if row.size != width:
            raise DumpError(f"{path}: linha {line_no} com {row.size} valores, esperado {width}")
        if mode == "scores":
            # fora da faixa do float32 o escore vira inf e se confunde com a sentinela
            with np.errstate(over="ignore"):
                row = row.astype(np.float32)
            if not np.all(np.isfinite(row)):
                logging.error(f"{path}: escore não finito ou fora da faixa float32 na linha {line_no}")
                raise DumpError(f"{path}: escore não finito ou fora da faixa float32 na linha {line_no}")
        values.append(row)

    empty_type = np.float32 if mode == "scores" else np.int64
    matrix = np.vstack(values) if values else np.zeros((0, width), dtype=empty_type)
    return ScoreDump(
        catalog_size=catalog_size,
        mode=mode,
        case_ids=np.array(case_ids, dtype=np.int64),
        gts=np.array(gts, dtype=np.int64),
        lasts=np.array(lasts, dtype=np.int64),
        values=matrix,
        m=m,
    )


def _dump_cases(dump: ScoreDump, cases: Optional[Sequence[EvalCase]]) -> list:
    """Casos na ordem do dump; sem o split, o prefixo é apenas (last,)."""
    if cases is None:
        return [
            EvalCase(case_id=int(cid), prefix=(int(last),), gt=int(gt), last=int(last))
            for cid, gt, last in zip(dump.case_ids, dump.gts, dump.lasts)
        ]
    by_id = {c.case_id: c for c in cases}
    if len(by_id) != dump.n_rows:
        raise DumpError(f"Dump com {dump.n_rows} linhas, conjunto de avaliação com {len(by_id)} casos")
    ordered = []
    for cid, gt, last in zip(dump.case_ids, dump.gts, dump.lasts):
        case = by_id.get(int(cid))
        if case is None or case.gt != gt or case.last != last:
            raise DumpError(f"Caso {int(cid)} do dump não confere com o conjunto de avaliação")
        ordered.append(case)
    return ordered


def _topm_ranks(dump: ScoreDump, rows: np.ndarray, mask_last: bool) -> CaseRanks:
    lists = dump.values[rows]
    gts, lasts = dump.gts[rows], dump.lasts[rows]

    def positions(items: np.ndarray) -> np.ndarray:
        # rank 1-based dentro da lista; ausente = np.inf (erro para qualquer K <= M - 1)
        found = lists == items[:, None]
        ranks = np.full(len(items), np.inf)
        present = found.any(axis=1)
        ranks[present] = np.argmax(found[present], axis=1) + 1.0
        return ranks

    rank_gt, rank_last = positions(gts), positions(lasts)
    ranks = CaseRanks(gt=rank_gt, last=rank_last)
    if mask_last:
        gt_star = rank_gt - (rank_last < rank_gt)
        gt_star[gts == lasts] = np.inf
        ranks.gt_star = gt_star
        ranks.last_star = np.full(len(rows), np.inf)
    return ranks


def evaluate_dump(
    dump: ScoreDump,
    config: RankingConfig,
    cases: Optional[Sequence[EvalCase]] = None,
    catalog_size: Optional[int] = None,
    label: str = "",
    seed: Optional[int] = None,
    batch_size: int = 256,
) -> MetricReport:
    """
    Avalia um dump de escores com as mesmas regras de ``evaluate``.

    Args:
        dump: Dump lido do disco
        config: Cortes K e opções de mascaramento
        cases: Casos do split (confere gt/last e fornece o histórico para mask_history)
        catalog_size: Tamanho do catálogo do split, conferido contra o dump

    Raises:
        DumpError: Catálogo divergente, casos divergentes ou M < max(K) + 1 no modo topm
        MetricError: Dump vazio
    """
    if catalog_size is not None and catalog_size != dump.catalog_size:
        raise DumpError(f"Catálogo do dump ({dump.catalog_size}) difere do split ({catalog_size})")
    if dump.n_rows == 0:
        raise MetricError("Dump sem casos de avaliação")
    if dump.mode == "topm":
        if dump.m < max(config.ks) + 1:
            raise DumpError(f"Dump topm com M={dump.m}; é preciso M >= max(K) + 1 = {max(config.ks) + 1}")
        if config.mask_history:
            raise DumpError("mask_history exige dump no modo scores")

    ordered = _dump_cases(dump, cases)
    selected, n_gt_equals_last = select_cases(ordered, config)
    row_of = {c.case_id: row for row, c in enumerate(ordered)}
    rows = np.array([row_of[c.case_id] for c in selected], dtype=np.int64)

    if dump.mode == "topm":
        ranks = _topm_ranks(dump, rows, config.mask_last)
    else:
        parts = []
        for start in range(0, len(rows), batch_size):
            block_rows = rows[start:start + batch_size]
            block = [selected[i] for i in range(start, start + len(block_rows))]
            parts.append(rank_score_matrix(dump.values[block_rows], block, config))
        ranks = CaseRanks.concat(parts)

    report = report_from_ranks(ranks, config.ks, n_gt_equals_last, config.mask_last, label=label, seed=seed)
    logging.info(f"📊 Dump {dump.mode} avaliado: {report.n_eval} casos")
    return report
