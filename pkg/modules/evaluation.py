# Arquivo: modules/evaluation.py

"""
Ranqueamento sobre o catálogo completo e métricas de avaliação:
Hit@K, NDCG@K, HRLI@K (taxa de acerto do último item) e as variantes
estreladas obtidas ao atribuir escore "menos infinito" ao último item.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np


class MetricError(Exception):
    """Exceção personalizada para erros de avaliação e métricas"""
    pass


class ImprovementUndefinedError(MetricError):
    """Melhoria percentual indefinida (base zero com valor estrelado positivo)"""
    pass


# Escore sentinela: fica abaixo de qualquer escore finito
SENTINEL = -np.inf


@dataclass(frozen=True)
class EvalCase:
    """Um caso de avaliação: prefixo de entrada, item correto (gt) e último item do prefixo."""
    case_id: int
    prefix: tuple
    gt: int
    last: int

    def __post_init__(self):
        if len(self.prefix) == 0:
            raise MetricError(f"Caso {self.case_id}: prefixo vazio")
        if self.prefix[-1] != self.last:
            raise MetricError(
                f"Caso {self.case_id}: last={self.last} difere do último item do prefixo {self.prefix[-1]}"
            )


@dataclass(frozen=True)
class RankingConfig:
    ks: tuple = (5, 10)
    mask_last: bool = False
    exclude_gt_equals_last: bool = False
    mask_history: bool = False

    def __post_init__(self):
        ks = tuple(sorted({int(k) for k in self.ks}))
        if not ks or ks[0] < 1:
            raise MetricError(f"Todo corte K deve ser >= 1, recebido: {self.ks}")
        object.__setattr__(self, "ks", ks)


@dataclass(frozen=True)
class RankedResult:
    rank_gt: int
    rank_last: int
    in_top_k: dict


@dataclass
class KMetrics:
    hit: float
    ndcg: float
    hrli: float
    hit_star: Optional[float] = None
    ndcg_star: Optional[float] = None
    hrli_star: Optional[float] = None
    improvement_hit_pct: Optional[float] = None
    improvement_ndcg_pct: Optional[float] = None


@dataclass
class MetricReport:
    """Métricas agregadas por K, com denominador n_eval e contagem de casos gt == last."""
    ks: tuple
    metrics: dict
    n_eval: int
    n_gt_equals_last: int
    mask_last: bool = False
    label: str = ""
    seed: Optional[int] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": "recency-report",
            "version": 1,
            "label": self.label,
            "seed": self.seed,
            "ks": list(self.ks),
            "mask_last": self.mask_last,
            "n_eval": self.n_eval,
            "n_gt_equals_last": self.n_gt_equals_last,
            "metrics": {
                str(k): {
                    "hit": m.hit,
                    "ndcg": m.ndcg,
                    "hrli": m.hrli,
                    "hit_star": m.hit_star,
                    "ndcg_star": m.ndcg_star,
                    "hrli_star": m.hrli_star,
                    "improvement_hit_pct": m.improvement_hit_pct,
                    "improvement_ndcg_pct": m.improvement_ndcg_pct,
                }
                for k, m in self.metrics.items()
            },
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        if data.get("format") != "recency-report":
            raise MetricError(f"Formato de relatório desconhecido: {data.get('format')!r}")
        metrics = {int(k): KMetrics(**values) for k, values in data["metrics"].items()}
        return cls(
            ks=tuple(int(k) for k in data["ks"]),
            metrics=metrics,
            n_eval=int(data["n_eval"]),
            n_gt_equals_last=int(data["n_gt_equals_last"]),
            mask_last=bool(data.get("mask_last", False)),
            label=data.get("label", ""),
            seed=data.get("seed"),
            extra=data.get("extra", {}),
        )


def rank_of(scores: np.ndarray, item: int) -> int:
    """
    Posição (1 = topo) de um item na ordem total: escore maior primeiro,
    empates resolvidos pelo menor índice.

    Args:
        scores: Escores de todo o catálogo
        item: Índice do item

    Returns:
        int: Rank em [1, |I|]
    """
    scores = np.asarray(scores)
    target = scores[item]
    above = int(np.count_nonzero(scores > target))
    ties_before = int(np.count_nonzero(scores[:item] == target))
    return 1 + above + ties_before


def rank_rows(scores: np.ndarray, items: np.ndarray) -> np.ndarray:
    """rank_of aplicado linha a linha: scores (B, |I|), items (B,)."""
    rows = np.arange(scores.shape[0])
    target = scores[rows, items][:, None]
    columns = np.arange(scores.shape[1])[None, :]
    above = np.count_nonzero(scores > target, axis=1)
    ties_before = np.count_nonzero((scores == target) & (columns < items[:, None]), axis=1)
    return 1 + above + ties_before


def mask_last(scores: np.ndarray, last: int) -> np.ndarray:
    """Cópia dos escores com o último item rebaixado ao sentinela."""
    masked = np.array(scores, copy=True)
    masked[last] = SENTINEL
    return masked


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """
    Índices dos K primeiros na mesma ordem total de rank_of; itens com escore
    sentinela nunca entram na lista.
    """
    scores = np.asarray(scores)
    candidates = np.flatnonzero(scores != SENTINEL)
    order = candidates[np.lexsort((candidates, -scores[candidates]))]
    return order[:k]


def hit_at_k(rank_gt: int, k: int) -> int:
    if rank_gt < 1:
        raise MetricError(f"Rank deve ser >= 1, recebido {rank_gt}")
    return 1 if rank_gt <= k else 0


def ndcg_at_k(rank_gt: int, k: int) -> float:
    # IDCG = 1 com um único item relevante
    if rank_gt < 1:
        raise MetricError(f"Rank deve ser >= 1, recebido {rank_gt}")
    return 1.0 / math.log2(1 + rank_gt) if rank_gt <= k else 0.0


def improvement_pct(base: float, starred: float) -> float:
    """
    Melhoria percentual 100·(estrelado − base)/base.

    Raises:
        MetricError: base negativa
        ImprovementUndefinedError: base zero com estrelado positivo
    """
    if base < 0:
        raise MetricError(f"Base negativa: {base}")
    if base == 0:
        if starred == 0:
            return 0.0
        raise ImprovementUndefinedError(f"Melhoria indefinida: base 0 e estrelado {starred}")
    return 100.0 * (starred - base) / base


def rank_case(scores: np.ndarray, case: EvalCase, ks: Iterable[int]) -> RankedResult:
    """Ranks do gt e do último item para um caso isolado."""
    rank_gt = rank_of(scores, case.gt)
    rank_last = rank_of(scores, case.last)
    return RankedResult(
        rank_gt=rank_gt,
        rank_last=rank_last,
        in_top_k={k: bool(rank_gt <= k and scores[case.gt] != SENTINEL) for k in ks},
    )


def _effective_ranks(scores: np.ndarray, items: np.ndarray) -> np.ndarray:
    """Ranks com np.inf para itens sentinela (nunca pertencem ao Top-K)."""
    ranks = rank_rows(scores, items).astype(np.float64)
    masked = scores[np.arange(scores.shape[0]), items] == SENTINEL
    ranks[masked] = np.inf
    return ranks


def _mask_history(scores: np.ndarray, cases: Sequence[EvalCase]) -> None:
    for row, case in enumerate(cases):
        history = [item for item in set(case.prefix) if item != case.last]
        if history:
            scores[row, history] = SENTINEL


@dataclass
class CaseRanks:
    """Ranks efetivos por caso (np.inf = fora de qualquer Top-K) nas duas passagens."""
    gt: np.ndarray
    last: np.ndarray
    gt_star: Optional[np.ndarray] = None
    last_star: Optional[np.ndarray] = None

    @classmethod
    def concat(cls, parts: Sequence["CaseRanks"]) -> "CaseRanks":
        starred = parts[0].gt_star is not None
        return cls(
            gt=np.concatenate([p.gt for p in parts]),
            last=np.concatenate([p.last for p in parts]),
            gt_star=np.concatenate([p.gt_star for p in parts]) if starred else None,
            last_star=np.concatenate([p.last_star for p in parts]) if starred else None,
        )


def rank_score_matrix(scores: np.ndarray, cases: Sequence[EvalCase], config: RankingConfig) -> CaseRanks:
    """
    Calcula os ranks do gt e do último item para um bloco de casos e, com
    mask_last, repete após rebaixar o último item ao sentinela.

    Raises:
        MetricError: Se a identidade de deslocamento de rank for violada
    """
    scores = np.array(scores, copy=True)
    if scores.ndim != 2 or scores.shape[0] != len(cases):
        raise MetricError(f"Matriz de escores {scores.shape} incompatível com {len(cases)} casos")
    if config.mask_history:
        _mask_history(scores, cases)

    gts = np.array([c.gt for c in cases], dtype=np.int64)
    lasts = np.array([c.last for c in cases], dtype=np.int64)
    ranks = CaseRanks(gt=_effective_ranks(scores, gts), last=_effective_ranks(scores, lasts))
    if not config.mask_last:
        return ranks

    raw_gt = rank_rows(scores, gts)
    raw_last = rank_rows(scores, lasts)
    scores[np.arange(len(cases)), lasts] = SENTINEL
    raw_gt_star = rank_rows(scores, gts)

    # identidade: rank*(gt) = rank(gt) - 1{last acima do gt}, para gt != last com escore finito
    check = (gts != lasts) & (scores[np.arange(len(cases)), gts] != SENTINEL)
    expected = raw_gt - (raw_last < raw_gt).astype(raw_gt.dtype)
    if np.any(raw_gt_star[check] != expected[check]):
        bad = [cases[i].case_id for i in np.flatnonzero(check & (raw_gt_star != expected))[:5]]
        logging.error(f"Identidade de deslocamento de rank violada nos casos {bad}")
        raise MetricError(f"Identidade de deslocamento de rank violada nos casos {bad}")

    ranks.gt_star = _effective_ranks(scores, gts)
    ranks.last_star = _effective_ranks(scores, lasts)
    return ranks


def _mean(values: np.ndarray) -> float:
    # fsum é exata: o resultado não depende da ordem dos casos
    return math.fsum(values.tolist()) / len(values)


def _safe_improvement(base: float, starred: float, name: str) -> Optional[float]:
    try:
        return improvement_pct(base, starred)
    except ImprovementUndefinedError as e:
        logging.warning(f"⚠️ {name}: {e}")
        return None


def report_from_ranks(
    ranks: CaseRanks,
    ks: Sequence[int],
    n_gt_equals_last: int,
    mask_last: bool,
    label: str = "",
    seed: Optional[int] = None,
) -> MetricReport:
    """Agrega ranks efetivos em médias aritméticas sobre N(conjunto de avaliação)."""
    n_eval = len(ranks.gt)
    if n_eval == 0:
        raise MetricError("Conjunto de avaliação vazio")

    def hits(rank_array: np.ndarray, k: int) -> np.ndarray:
        return (rank_array <= k).astype(np.float64)

    def ndcgs(rank_array: np.ndarray, k: int) -> np.ndarray:
        inside = rank_array <= k
        values = np.zeros(len(rank_array))
        values[inside] = 1.0 / np.log2(1.0 + rank_array[inside])
        return values

    metrics = {}
    for k in ks:
        m = KMetrics(
            hit=_mean(hits(ranks.gt, k)),
            ndcg=_mean(ndcgs(ranks.gt, k)),
            hrli=_mean(hits(ranks.last, k)),
        )
        if mask_last:
            m.hit_star = _mean(hits(ranks.gt_star, k))
            m.ndcg_star = _mean(ndcgs(ranks.gt_star, k))
            m.hrli_star = _mean(hits(ranks.last_star, k))
            m.improvement_hit_pct = _safe_improvement(m.hit, m.hit_star, f"Hit@{k}")
            m.improvement_ndcg_pct = _safe_improvement(m.ndcg, m.ndcg_star, f"NDCG@{k}")
        metrics[k] = m

    return MetricReport(
        ks=tuple(ks),
        metrics=metrics,
        n_eval=n_eval,
        n_gt_equals_last=n_gt_equals_last,
        mask_last=mask_last,
        label=label,
        seed=seed,
    )


def select_cases(cases: Sequence[EvalCase], config: RankingConfig) -> tuple:
    """
    Aplica o modo de exclusão gt == last.

    Returns:
        tuple: (casos_selecionados, n_gt_equals_last) com a contagem feita antes da exclusão
    """
    if not cases:
        raise MetricError("Nenhum caso de avaliação")
    n_gt_equals_last = sum(1 for c in cases if c.gt == c.last)
    if config.exclude_gt_equals_last:
        cases = [c for c in cases if c.gt != c.last]
        if not cases:
            raise MetricError("Todos os casos têm gt == last; nada a avaliar com a exclusão ativa")
    return list(cases), n_gt_equals_last


def _check_finite(scores: np.ndarray, block: Sequence[EvalCase]) -> np.ndarray:
    bad_rows = np.flatnonzero(~np.isfinite(scores).all(axis=1))
    if bad_rows.size:
        case_id = block[int(bad_rows[0])].case_id
        logging.error(f"Escore não finito no caso {case_id}")
        raise MetricError(f"Escore não finito no caso {case_id}")
    return scores


def _score_block(scorer: Any, block: Sequence[EvalCase]) -> np.ndarray:
    if hasattr(scorer, "score_batch"):
        try:
            scores = np.asarray(scorer.score_batch([c.prefix for c in block]))
            if scores.ndim == 2 and scores.shape[0] == len(block):
                return _check_finite(scores, block)
        except Exception:
            # refaz caso a caso para identificar o caso com falha
            pass
    rows = []
    for case in block:
        try:
            row = np.asarray(scorer(case.prefix))
        except Exception as e:
            logging.error(f"Falha do modelo no caso {case.case_id}: {e}")
            raise MetricError(f"Falha do modelo no caso {case.case_id}: {e}")
        if row.ndim != 1 or (rows and row.shape != rows[0].shape):
            raise MetricError(f"Vetor de escores com forma inválida {row.shape} no caso {case.case_id}")
        rows.append(row)
    return _check_finite(np.vstack(rows), block)


def evaluate(
    scorer: Callable,
    cases: Sequence[EvalCase],
    config: RankingConfig,
    batch_size: int = 256,
    label: str = "",
    seed: Optional[int] = None,
) -> MetricReport:
    """
    Avalia um modelo sobre os casos, pontuando o catálogo inteiro.

    Args:
        scorer: Função prefixo -> vetor de escores (com score_batch opcional)
        cases: Casos de avaliação
        config: Cortes K e opções de mascaramento
        batch_size: Casos pontuados por bloco

    Returns:
        MetricReport: Hit/NDCG/HRLI e, com mask_last, as variantes estreladas

    Raises:
        MetricError: Conjunto vazio ou falha do modelo em algum caso (com case_id)
    """
    cases, n_gt_equals_last = select_cases(cases, config)
    parts = []
    for start in range(0, len(cases), batch_size):
        block = cases[start:start + batch_size]
        scores = _score_block(scorer, block)
        parts.append(rank_score_matrix(scores, block, config))

    report = report_from_ranks(
        CaseRanks.concat(parts), config.ks, n_gt_equals_last, config.mask_last, label=label, seed=seed
    )
    logging.info(
        f"📊 Avaliação concluída: {report.n_eval} casos, {n_gt_equals_last} com gt == last"
    )
    return report
