# Arquivo: modules/models.py

"""
Modelos sequenciais com contrato comum ``score(prefixo) -> escores do catálogo``:
popularidade, Markov de primeira ordem, mini-GRU e mini-autoatenção, além do
laço de treino com parada antecipada pelo Hit@K de validação.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from modules.evaluation import EvalCase, RankingConfig, evaluate
from modules.networks import (
    ScorerError,
    init_attn,
    init_gru,
    loss_and_grads,
    pad_prefixes,
    represent,
    tied_logits,
)
from modules.numerics import (
    AdamState,
    GradCheckReport,
    NumericError,
    Rng,
    adam_step,
    finite_diff_check,
)


class TrainingError(NumericError):
    """Exceção personalizada para divergência do treino (perda não finita)"""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


MODEL_KINDS = ("pop", "markov", "gru_mini", "attn_mini")
TRAINABLE_KINDS = ("gru_mini", "attn_mini")

# Nomes curtos aceitos na linha de comando
CLI_ALIASES = {
    "pop": "pop",
    "markov": "markov",
    "gru": "gru_mini",
    "attn": "attn_mini",
}


@dataclass(frozen=True)
class ScorerSpec:
    kind: str
    embed_dim: int = 64
    hidden_dim: int = 64
    n_heads: int = 1
    dropout: float = 0.2
    markov_alpha: float = 0.01
    max_len: int = 50

    def __post_init__(self):
        kind = CLI_ALIASES.get(self.kind, self.kind)
        if kind not in MODEL_KINDS:
            raise ScorerError(f"Modelo desconhecido: {self.kind!r}. Opções: {list(CLI_ALIASES)}")
        object.__setattr__(self, "kind", kind)
        if min(self.embed_dim, self.hidden_dim, self.n_heads, self.max_len) < 1:
            raise ScorerError("embed_dim, hidden_dim, n_heads e max_len devem ser >= 1")
        if self.embed_dim % self.n_heads:
            raise ScorerError(f"embed_dim={self.embed_dim} não é divisível por n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ScorerError(f"dropout deve estar em [0, 1), recebido {self.dropout}")
        if self.markov_alpha <= 0:
            raise ScorerError(f"markov_alpha deve ser > 0, recebido {self.markov_alpha}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScorerSpec":
        return cls(**data)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    seed: int = 2024
    eval_k_for_stopping: int = 10

    def __post_init__(self):
        if self.patience < 1:
            raise ScorerError(f"patience deve ser >= 1, recebido {self.patience}")
        if self.batch_size < 1:
            raise ScorerError(f"batch_size deve ser >= 1, recebido {self.batch_size}")
        if self.max_epochs < 1:
            raise ScorerError(f"max_epochs deve ser >= 1, recebido {self.max_epochs}")
        if self.eval_k_for_stopping < 1:
            raise ScorerError(f"eval_k_for_stopping deve ser >= 1, recebido {self.eval_k_for_stopping}")
        if not self.lr > 0:
            raise ScorerError(f"lr deve ser > 0, recebido {self.lr}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ScorerCheckpoint:
    """Parâmetros treinados + hiperparâmetros + semente de qualquer modelo."""
    spec: ScorerSpec
    parameters: dict
    catalog_size: int
    seed: int
    best_valid_hit: float = 0.0
    epochs_run: int = 0
    history: list = field(default_factory=list)

    def validate(self) -> "ScorerCheckpoint":
        """
        Confere formas contra (spec, catalog_size) e finitude de todos os valores.

        Raises:
            ScorerError: Parâmetro ausente, forma inconsistente ou valor não finito
        """
        expected = expected_shapes(self.spec, self.catalog_size)
        for name, shape in expected.items():
            if name not in self.parameters:
                raise ScorerError(f"Parâmetro ausente no checkpoint: {name}")
            value = self.parameters[name]
            if shape is not None and value.shape != shape:
                raise ScorerError(f"Parâmetro {name} com forma {value.shape}, esperado {shape}")
            if value.dtype.kind == "f" and not np.all(np.isfinite(value)):
                raise ScorerError(f"Parâmetro {name} contém valores não finitos")
        extra = set(self.parameters) - set(expected)
        if extra:
            raise ScorerError(f"Parâmetros inesperados no checkpoint: {sorted(extra)}")
        return self


def expected_shapes(spec: ScorerSpec, catalog_size: int) -> dict:
    """Formas dos parâmetros por tipo de modelo; None = comprimento livre."""
    n, e, h = catalog_size, spec.embed_dim, spec.hidden_dim
    if spec.kind == "pop":
        return {"counts": (n,)}
    if spec.kind == "markov":
        return {"prev": None, "next": None, "counts": None, "row_totals": (n,)}
    if spec.kind == "gru_mini":
        shapes = {"item_emb": (n, e)}
        for gate in ("z", "r", "h"):
            shapes.update({f"W_{gate}": (e, h), f"U_{gate}": (h, h), f"b_{gate}": (h,)})
        if h != e:
            shapes["W_out"] = (h, e)
        return shapes
    return {
        "item_emb": (n, e), "pos_emb": (spec.max_len, e),
        "W_q": (e, e), "W_k": (e, e), "W_v": (e, e), "W_o": (e, e),
        "ln1_g": (e,), "ln1_b": (e,), "W_1": (e, h), "b_1": (h,),
        "W_2": (h, e), "b_2": (e,), "ln2_g": (e,), "ln2_b": (e,),
    }


def _catalog_size(cases: Sequence[EvalCase], catalog_size: Optional[int]) -> int:
    if catalog_size:
        return int(catalog_size)
    return 1 + max(max(max(c.prefix), c.gt) for c in cases)


def fit_pop(train_cases: Sequence[EvalCase], catalog_size: Optional[int] = None, seed: int = 0) -> ScorerCheckpoint:
    """
    Popularidade: escore de cada item = contagem global como gt no treino.

    Raises:
        ScorerError: Conjunto de treino vazio
    """
    if not train_cases:
        raise ScorerError("fit_pop exige conjunto de treino não vazio")
    n_items = _catalog_size(train_cases, catalog_size)
    counts = np.bincount([c.gt for c in train_cases], minlength=n_items).astype(np.float32)
    logging.info(f"✅ Popularidade ajustada: {len(train_cases)} casos, {int((counts > 0).sum())} itens vistos")
    return ScorerCheckpoint(
        spec=ScorerSpec(kind="pop"), parameters={"counts": counts},
        catalog_size=n_items, seed=seed,
    )


def fit_markov(
    train_cases: Sequence[EvalCase],
    alpha: float = 0.01,
    catalog_size: Optional[int] = None,
    seed: int = 0,
    max_len: int = 50,
) -> ScorerCheckpoint:
    """
    Markov de primeira ordem com suavização aditiva.

    Cada caso de treino contribui com a transição (last -> gt); somadas, cobrem
    cada par consecutivo do trecho de treino de cada usuário. As contagens ficam
    esparsas, ordenadas por (prev, next).

    Args:
        train_cases: Casos de treino
        alpha: Suavização (> 0)
        catalog_size: Tamanho do catálogo (inferido se None)

    Returns:
        ScorerCheckpoint: Parâmetros prev, next, counts e row_totals
    """
    spec = ScorerSpec(kind="markov", markov_alpha=alpha, max_len=max_len)
    if not train_cases:
        raise ScorerError("fit_markov exige conjunto de treino não vazio")
    n_items = _catalog_size(train_cases, catalog_size)

    pairs = np.array([(c.last, c.gt) for c in train_cases], dtype=np.int64)
    keys, counts = np.unique(pairs[:, 0] * n_items + pairs[:, 1], return_counts=True)
    prev, nxt = np.divmod(keys, n_items)
    row_totals = np.bincount(prev, weights=counts, minlength=n_items)

    logging.info(f"✅ Markov ajustado: {len(keys)} transições distintas, alpha={alpha}")
    return ScorerCheckpoint(
        spec=spec,
        parameters={
            "prev": prev.astype(np.int32),
            "next": nxt.astype(np.int32),
            "counts": counts.astype(np.float32),
            "row_totals": row_totals.astype(np.float32),
        },
        catalog_size=n_items,
        seed=seed,
    )


def _markov_row(checkpoint: ScorerCheckpoint, last: int) -> np.ndarray:
    p = checkpoint.parameters
    alpha = checkpoint.spec.markov_alpha
    n_items = checkpoint.catalog_size
    denominator = float(p["row_totals"][last]) + alpha * n_items
    scores = np.full(n_items, alpha, dtype=np.float64)
    lo, hi = np.searchsorted(p["prev"], [last, last + 1])
    scores[p["next"][lo:hi]] += p["counts"][lo:hi]
    return scores / denominator


def _check_prefix(checkpoint: ScorerCheckpoint, prefix: Sequence[int]) -> None:
    if len(prefix) == 0:
        raise ScorerError("Prefixo vazio")
    for item in prefix:
        if not 0 <= item < checkpoint.catalog_size:
            raise ScorerError(f"Índice de item inválido {item} para catálogo de {checkpoint.catalog_size} itens")


def _network_logits(checkpoint: ScorerCheckpoint, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
    params = checkpoint.parameters
    batch = pad_prefixes(prefixes, checkpoint.catalog_size)
    out, _ = represent(checkpoint.spec.kind, params, batch, n_heads=checkpoint.spec.n_heads)
    return tied_logits(params, out)


def forward_gru(checkpoint: ScorerCheckpoint, prefix: Sequence[int]) -> np.ndarray:
    """Logits da mini-GRU para um prefixo (sem dropout)."""
    if checkpoint.spec.kind != "gru_mini":
        raise ScorerError(f"forward_gru recebeu checkpoint de {checkpoint.spec.kind}")
    return _network_logits(checkpoint, [list(prefix)])[0]


def forward_attn(checkpoint: ScorerCheckpoint, prefix: Sequence[int]) -> np.ndarray:
    """
    Logits do bloco de autoatenção para um prefixo (sem dropout).

    Raises:
        ScorerError: Prefixo mais longo que a tabela de posições
    """
    if checkpoint.spec.kind != "attn_mini":
        raise ScorerError(f"forward_attn recebeu checkpoint de {checkpoint.spec.kind}")
    return _network_logits(checkpoint, [list(prefix)])[0]


def score(checkpoint: ScorerCheckpoint, prefix: Sequence[int]) -> np.ndarray:
    """
    Escores de todo o catálogo (float32) para um prefixo.

    O prefixo é truncado aos ``max_len`` itens mais recentes antes do forward.
    """
    return score_batch(checkpoint, [prefix])[0]


def score_batch(checkpoint: ScorerCheckpoint, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
    """Versão em lote de ``score``: matriz (B, catalog_size) em float32."""
    max_len = checkpoint.spec.max_len
    prefixes = [list(p)[-max_len:] for p in prefixes]
    for prefix in prefixes:
        _check_prefix(checkpoint, prefix)

    kind = checkpoint.spec.kind
    if kind == "pop":
        scores = np.tile(checkpoint.parameters["counts"], (len(prefixes), 1))
    elif kind == "markov":
        scores = np.vstack([_markov_row(checkpoint, p[-1]) for p in prefixes])
    else:
        scores = _network_logits(checkpoint, prefixes)
    return scores.astype(np.float32)


class CheckpointScorer:
    """Adaptador de um checkpoint para o contrato de avaliação (chamável + score_batch)."""

    def __init__(self, checkpoint: ScorerCheckpoint):
        self.checkpoint = checkpoint

    def __call__(self, prefix: Sequence[int]) -> np.ndarray:
        return score(self.checkpoint, prefix)

    def score_batch(self, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        return score_batch(self.checkpoint, prefixes)


def valid_hit_evaluator(valid_cases: Sequence[EvalCase], k: int = 10, batch_size: int = 256) -> Callable:
    """Avaliador padrão do treino: Hit@k da validação via ``evaluate``."""
    config = RankingConfig(ks=(k,))

    def evaluator(checkpoint: ScorerCheckpoint) -> float:
        report = evaluate(CheckpointScorer(checkpoint), valid_cases, config, batch_size=batch_size)
        return report.metrics[k].hit

    return evaluator


def init_parameters(spec: ScorerSpec, n_items: int, rng: Rng, dtype=np.float32) -> dict:
    if spec.kind == "gru_mini":
        return init_gru(n_items, spec.embed_dim, spec.hidden_dim, rng, dtype=dtype)
    if spec.kind == "attn_mini":
        return init_attn(n_items, spec.embed_dim, spec.hidden_dim, spec.max_len, rng, dtype=dtype)
    raise ScorerError(f"Modelo sem parâmetros treináveis: {spec.kind}")


def train(
    spec: ScorerSpec,
    split,
    config: TrainConfig,
    evaluator: Optional[Callable[[ScorerCheckpoint], float]] = None,
) -> ScorerCheckpoint:
    """
    Treina um modelo com entropia cruzada sobre o catálogo completo e Adam,
    mantendo os parâmetros da melhor época de validação.

    pop e markov são ajustados por contagem, sem épocas. Para as redes, cada
    época embaralha os casos de treino, percorre mini-lotes com dropout ativo e
    avalia a validação com dropout desligado. O treino para quando o melhor
    Hit@K de validação não melhora por ``patience`` épocas seguidas ou ao
    atingir ``max_epochs``.

    Args:
        spec: Especificação do modelo
        split: SplitDataset com treino e validação não vazios
        config: Hiperparâmetros do treino
        evaluator: Função checkpoint -> Hit@K de validação (padrão: valid_hit_evaluator)

    Returns:
        ScorerCheckpoint: Melhores parâmetros, com histórico por época

    Raises:
        ScorerError: Treino ou validação vazios
        TrainingError: Perda ou gradiente não finito (com o número da época)
    """
    if not split.train_cases or not split.valid_cases:
        raise ScorerError("train exige conjuntos de treino e validação não vazios")
    n_items = _catalog_size(split.train_cases + split.valid_cases, split.n_items)
    if evaluator is None:
        evaluator = valid_hit_evaluator(split.valid_cases, config.eval_k_for_stopping)

    if spec.kind == "pop":
        checkpoint = fit_pop(split.train_cases, n_items, seed=config.seed)
        checkpoint.spec = spec
    elif spec.kind == "markov":
        checkpoint = fit_markov(split.train_cases, spec.markov_alpha, n_items, seed=config.seed, max_len=spec.max_len)
    else:
        return _train_network(spec, split, config, evaluator, n_items)

    checkpoint.best_valid_hit = evaluator(checkpoint)
    logging.info(f"📊 {spec.kind}: hit@{config.eval_k_for_stopping}(valid)={checkpoint.best_valid_hit:.4f}")
    return checkpoint


def _train_network(spec, split, config, evaluator, n_items) -> ScorerCheckpoint:
    rng = Rng(config.seed)
    params = init_parameters(spec, n_items, rng.spawn(0))
    state = AdamState.fresh(params, lr=config.lr)
    prefixes = [list(c.prefix)[-spec.max_len:] for c in split.train_cases]
    targets = np.array([c.gt for c in split.train_cases], dtype=np.int64)
    k = config.eval_k_for_stopping

    logging.info(
        f"🏋️ Treinando {spec.kind}: {len(prefixes)} casos, {n_items} itens, "
        f"lote={config.batch_size}, lr={config.lr}, semente={config.seed}"
    )
    best_hit, best_params, waited = -1.0, params, 0
    history = []
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(prefixes))
        total_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = pad_prefixes([prefixes[i] for i in idx], n_items)
            loss, grads = loss_and_grads(
                spec.kind, params, batch, targets[idx],
                n_heads=spec.n_heads, dropout=spec.dropout, rng=rng,
            )
            if not math.isfinite(loss):
                logging.error(f"Perda não finita na época {epoch}")
                raise TrainingError(f"Perda não finita na época {epoch}", epoch)
            try:
                params, state = adam_step(params, grads, state)
            except NumericError as e:
                raise TrainingError(f"Época {epoch}: {e}", epoch) from e
            total_loss += loss * len(idx)

        mean_loss = total_loss / len(prefixes)
        candidate = ScorerCheckpoint(spec=spec, parameters=params, catalog_size=n_items, seed=config.seed)
        valid_hit = float(evaluator(candidate))
        history.append({"epoch": epoch, "loss": mean_loss, "valid_hit": valid_hit})
        logging.info(f"   época {epoch}: loss={mean_loss:.4f} hit@{k}(valid)={valid_hit:.4f}")

        if valid_hit > best_hit:
            best_hit, best_params, waited = valid_hit, params, 0
        else:
            waited += 1
            if waited >= config.patience:
                logging.info(f"⏹️ Parada antecipada na época {epoch} (melhor hit@{k}={best_hit:.4f})")
                break

    return ScorerCheckpoint(
        spec=spec,
        parameters=best_params,
        catalog_size=n_items,
        seed=config.seed,
        best_valid_hit=best_hit,
        epochs_run=epoch,
        history=history,
    ).validate()


def gradient_check(
    kind: str,
    seed: int = 2024,
    n_items: int = 6,
    prefix_len: int = 4,
    embed_dim: int = 4,
    hidden_dim: int = 6,
    n_heads: int = 2,
    batch_size: int = 3,
    eps: float = 1e-5,
) -> GradCheckReport:
    """
    Verificação por diferenças finitas da perda de uma rede treinável em 64 bits,
    sobre um lote aleatório de prefixos de comprimentos variados.
    """
    spec = ScorerSpec(
        kind=kind, embed_dim=embed_dim, hidden_dim=hidden_dim,
        n_heads=n_heads if CLI_ALIASES.get(kind, kind) == "attn_mini" else 1,
        dropout=0.0, max_len=prefix_len,
    )
    rng = Rng(seed)
    params = init_parameters(spec, n_items, rng.spawn(0), dtype=np.float64)
    # afasta ganhos e vieses dos valores iniciais (1 e 0)
    for name in ("ln1_g", "ln2_g", "ln1_b", "ln2_b", "b_1", "b_2", "b_z", "b_r", "b_h"):
        if name in params:
            params[name] = params[name] + rng.normal(params[name].shape, scale=0.1)
    prefixes = [
        [rng.integer(n_items) for _ in range(max(1, prefix_len - row))]
        for row in range(batch_size)
    ]
    targets = np.array([rng.integer(n_items) for _ in range(batch_size)], dtype=np.int64)
    batch = pad_prefixes(prefixes, n_items)

    def f(p):
        return loss_and_grads(spec.kind, p, batch, targets, n_heads=spec.n_heads)

    report = finite_diff_check(f, params, eps=eps)
    logging.info(
        f"🔍 Gradiente {spec.kind} (semente {seed}): erro relativo máximo "
        f"{report.max_relative_error:.2e} em {report.worst_parameter}"
    )
    return report
