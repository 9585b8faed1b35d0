import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import pandas as pd

from modules.evaluation import EvalCase


class CorpusError(Exception):
    """Exceção personalizada para erros no preparo do corpus"""
    pass


# Colunas do log de interações
LOG_COLUMNS = ["user", "item", "timestamp"]

# Estatísticas publicadas após o pré-processamento (5-core, sessão máx. 50)
PUBLISHED_STATS = {
    "beauty": {"n_users": 22364, "n_items": 12102, "n_interactions": 198502, "avg_length": 8.87, "sparsity": 99.92},
    "clothing": {"n_users": 39388, "n_items": 23034, "n_interactions": 278677, "avg_length": 7.07, "sparsity": 99.96},
    "sports": {"n_users": 35599, "n_items": 18358, "n_interactions": 296337, "avg_length": 8.32, "sparsity": 99.95},
    "ml-1m": {"n_users": 6041, "n_items": 3417, "n_interactions": 999611, "avg_length": 165.49, "sparsity": 95.15},
}

# Tolerância relativa para contagens (filtragem pode diferir levemente)
PUBLISHED_TOLERANCE = 0.005


@dataclass
class Catalog:
    """Bijeção id externo <-> índice denso para itens e usuários."""
    item_ids: list
    user_ids: list
    item_index: dict = field(init=False, repr=False)
    user_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.item_index = {item: idx for idx, item in enumerate(self.item_ids)}
        self.user_index = {user: idx for idx, user in enumerate(self.user_ids)}
        if len(self.item_index) != len(self.item_ids) or len(self.user_index) != len(self.user_ids):
            raise CorpusError("Catálogo com ids externos duplicados")

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    def encode_item(self, item: str) -> int:
        try:
            return self.item_index[item]
        except KeyError:
            raise CorpusError(f"Item desconhecido no catálogo: {item!r}")

    def decode_item(self, index: int) -> str:
        return self.item_ids[index]

    def encode_user(self, user: str) -> int:
        try:
            return self.user_index[user]
        except KeyError:
            raise CorpusError(f"Usuário desconhecido no catálogo: {user!r}")

    def decode_user(self, index: int) -> str:
        return self.user_ids[index]


@dataclass
class SessionStore:
    """Sequências cronológicas de índices de itens, por índice de usuário."""
    sessions: dict

    @property
    def n_interactions(self) -> int:
        return sum(len(seq) for seq in self.sessions.values())


@dataclass
class SplitDataset:
    train_cases: list
    valid_cases: list
    test_cases: list
    max_len: int = 50
    n_items: int = 0


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_items: int
    n_interactions: int
    avg_length: float
    sparsity: float

    def to_dict(self) -> dict:
        return {
            "format": "recency-stats",
            "version": 1,
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_interactions": self.n_interactions,
            "avg_length": self.avg_length,
            "sparsity": self.sparsity,
        }

    def display(self) -> dict:
        """Valores arredondados apenas para exibição."""
        return {
            "# Users": f"{self.n_users:,}",
            "# Items": f"{self.n_items:,}",
            "# Inters": f"{self.n_interactions:,}",
            "Avg. Length": f"{self.avg_length:.2f}",
            "Sparsity": f"{self.sparsity:.2f}%",
        }


def k_core_filter(log: pd.DataFrame, min_count: int = 5, single_pass: bool = False) -> pd.DataFrame:
    """
    Remove usuários e itens com menos de ``min_count`` interações, repetindo até
    o ponto fixo (ou uma única rodada com ``single_pass``).

    Args:
        log: Log de interações (user, item, timestamp)
        min_count: Limite mínimo de interações
        single_pass: Apenas uma rodada de remoção, com as contagens da entrada

    Returns:
        pd.DataFrame: Subconjunto do log; vazio (com aviso) se nada sobrar

    Raises:
        CorpusError: Se min_count < 1
    """
    if min_count < 1:
        raise CorpusError(f"min_count deve ser >= 1, recebido {min_count}")

    logging.info(f"🧹 Filtro {min_count}-core ({'passagem única' if single_pass else 'até ponto fixo'})...")
    filtered = log
    rounds = 0
    while len(filtered):
        rounds += 1
        user_counts = filtered["user"].map(filtered["user"].value_counts())
        item_counts = filtered["item"].map(filtered["item"].value_counts())
        keep = (user_counts >= min_count) & (item_counts >= min_count)
        if keep.all():
            break
        logging.debug(f"   rodada {rounds}: removendo {int((~keep).sum())} interações")
        filtered = filtered[keep]
        if single_pass:
            break

    filtered = filtered.reset_index(drop=True)
    if filtered.empty:
        logging.warning(f"⚠️ Filtro {min_count}-core removeu todas as interações")
    else:
        logging.info(
            f"✅ {min_count}-core: {len(log)} -> {len(filtered)} interações em {rounds} rodada(s)"
        )
    return filtered


def build_sessions(log: pd.DataFrame, min_length: int = 3) -> Tuple[SessionStore, Catalog]:
    """
    Monta as sessões cronológicas por usuário e o catálogo denso.

    Empates de timestamp mantêm a ordem do arquivo (ordenação estável). Usuários
    com menos de ``min_length`` itens são descartados. Índices densos seguem a
    ordem de primeira aparição no log.

    Args:
        log: Log filtrado

    Returns:
        tuple: (SessionStore, Catalog)
    """
    logging.info("📋 Montando sessões por usuário...")
    df = log.reset_index(drop=True).copy()
    df["user"] = df["user"].astype(str)
    df["item"] = df["item"].astype(str)
    df["_ordem"] = range(len(df))

    lengths = df.groupby("user", sort=False)["item"].transform("size")
    dropped_users = int(df.loc[lengths < min_length, "user"].nunique())
    df = df[lengths >= min_length]
    if dropped_users:
        logging.info(f"   {dropped_users} usuários com menos de {min_length} interações descartados")

    catalog = Catalog(
        item_ids=[str(i) for i in pd.unique(df["item"])],
        user_ids=[str(u) for u in pd.unique(df["user"])],
    )
    df = df.assign(
        user_idx=df["user"].map(catalog.user_index),
        item_idx=df["item"].map(catalog.item_index),
    )
    df = df.sort_values(["user_idx", "timestamp", "_ordem"], kind="mergesort")

    sessions = {
        int(user): [int(i) for i in items]
        for user, items in df.groupby("user_idx", sort=True)["item_idx"]
    }
    store = SessionStore(sessions=sessions)
    logging.info(f"✅ {len(sessions)} sessões, {catalog.n_items} itens no catálogo")
    return store, catalog


def _truncate(prefix: list, max_len: int) -> tuple:
    return tuple(prefix[-max_len:])


def split_leave_one_out(store: SessionStore, max_len: int = 50, n_items: int = 0) -> SplitDataset:
    """
    Divisão leave-one-out: teste = último item, validação = penúltimo, treino =
    todo prefixo anterior. Prefixos mantêm os ``max_len`` itens mais recentes.

    Args:
        store: Sessões com pelo menos 3 itens
        max_len: Comprimento máximo do prefixo
        n_items: Tamanho do catálogo (registrado no SplitDataset)

    Returns:
        SplitDataset

    Raises:
        CorpusError: max_len < 1 ou sessão curta demais
    """
    if max_len < 1:
        raise CorpusError(f"max_len deve ser >= 1, recebido {max_len}")

    train, valid, test = [], [], []
    for user, seq in store.sessions.items():
        n = len(seq)
        if n < 3:
            raise CorpusError(f"Sessão do usuário {user} tem {n} itens; mínimo é 3")
        # gt nas posições 2..n-2 (1-based); sessões de 3 itens ainda geram ([i1], i2)
        for k in range(2, max(2, n - 2) + 1):
            prefix = _truncate(seq[:k - 1], max_len)
            train.append(EvalCase(case_id=len(train), prefix=prefix, gt=seq[k - 1], last=prefix[-1]))
        prefix = _truncate(seq[:n - 2], max_len)
        valid.append(EvalCase(case_id=len(valid), prefix=prefix, gt=seq[n - 2], last=prefix[-1]))
        prefix = _truncate(seq[:n - 1], max_len)
        test.append(EvalCase(case_id=len(test), prefix=prefix, gt=seq[n - 1], last=prefix[-1]))

    logging.info(f"✂️ Divisão leave-one-out: treino={len(train)}, validação={len(valid)}, teste={len(test)}")
    return SplitDataset(train_cases=train, valid_cases=valid, test_cases=test, max_len=max_len, n_items=n_items)


def stats(log: pd.DataFrame, catalog: Catalog) -> DatasetStats:
    """
    Estatísticas do conjunto: usuários, itens, interações, comprimento médio e esparsidade.

    Considera apenas as interações dos usuários mantidos no catálogo. A esparsidade
    usa pares (usuário, item) distintos; interações e comprimento médio contam repetições.

    Raises:
        CorpusError: Log vazio
    """
    if log.empty or catalog.n_users == 0 or catalog.n_items == 0:
        raise CorpusError("Não há interações para calcular estatísticas")
    retained = log["user"].astype(str).isin(catalog.user_ids)
    n_interactions = int(retained.sum())
    # repetições do mesmo par contam uma vez na densidade da matriz
    n_pairs = len(log.loc[retained, ["user", "item"]].drop_duplicates())
    n_users, n_items = catalog.n_users, catalog.n_items
    result = DatasetStats(
        n_users=n_users,
        n_items=n_items,
        n_interactions=n_interactions,
        avg_length=n_interactions / n_users,
        sparsity=100.0 * (1.0 - n_pairs / (n_users * n_items)),
    )
    logging.info(f"📊 Estatísticas: {result.display()}")
    return result


def compare_with_published(result: DatasetStats, dataset_id: str) -> Optional[dict]:
    """
    Compara as estatísticas com a tabela publicada do conjunto, se conhecido.

    Returns:
        dict: Desvio relativo por campo, ou None se o conjunto não for conhecido
    """
    reference = PUBLISHED_STATS.get(dataset_id.lower())
    if reference is None:
        return None
    observed = result.to_dict()
    deviations = {
        name: (observed[name] - expected) / expected
        for name, expected in reference.items()
    }
    for name in ("n_users", "n_items", "n_interactions"):
        if abs(deviations[name]) > PUBLISHED_TOLERANCE:
            logging.warning(
                f"⚠️ {dataset_id}: {name}={observed[name]} difere do publicado "
                f"({reference[name]}) em {100 * deviations[name]:+.2f}%"
            )
        elif deviations[name] != 0:
            logging.info(f"   {dataset_id}: {name} difere do publicado em {observed[name] - reference[name]:+d}")
    return deviations
