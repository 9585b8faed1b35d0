# Arquivo: modules/synth.py

"""
Gerador de logs sintéticos com nível de recência controlado: cada próximo item
repete o anterior com probabilidade ``p_repeat``; caso contrário é sorteado da
popularidade Zipf (reamostrado se coincidir com o anterior).
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from modules.numerics import Rng
from modules.processors import CorpusError


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 1000
    n_items: int = 200
    session_len_min: int = 5
    session_len_max: int = 20
    p_repeat: float = 0.0
    zipf_s: float = 1.0
    seed: int = 2024

    def __post_init__(self):
        if self.n_users < 1:
            raise CorpusError(f"n_users deve ser >= 1, recebido {self.n_users}")
        if self.n_items < 2:
            raise CorpusError(f"n_items deve ser >= 2, recebido {self.n_items}")
        if self.session_len_min < 3:
            raise CorpusError(f"session_len_min deve ser >= 3, recebido {self.session_len_min}")
        if self.session_len_max < self.session_len_min:
            raise CorpusError("session_len_max deve ser >= session_len_min")
        if not 0.0 <= self.p_repeat <= 1.0:
            raise CorpusError(f"p_repeat deve estar em [0, 1], recebido {self.p_repeat}")
        if self.zipf_s < 0:
            raise CorpusError(f"zipf_s deve ser >= 0, recebido {self.zipf_s}")

    def to_dict(self) -> dict:
        return asdict(self)


def zipf_cdf(n_items: int, s: float) -> np.ndarray:
    """CDF da Zipf truncada nos ranks 1..n (uniforme com s = 0)."""
    weights = np.arange(1, n_items + 1, dtype=np.float64) ** (-s)
    cdf = np.cumsum(weights)
    return cdf / cdf[-1]


def _draw(rng: Rng, cdf: np.ndarray) -> int:
    return min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)


def generate_session(rng: Rng, config: SynthConfig, cdf: np.ndarray) -> list:
    """Sequência de ranks (base 0) de uma sessão."""
    span = config.session_len_max - config.session_len_min + 1
    length = config.session_len_min + rng.integer(span)
    items = [_draw(rng, cdf)]
    while len(items) < length:
        previous = items[-1]
        if rng.random() < config.p_repeat:
            items.append(previous)
            continue
        item = _draw(rng, cdf)
        while item == previous:
            item = _draw(rng, cdf)
        items.append(item)
    return items


def generate(config: SynthConfig) -> pd.DataFrame:
    """
    Gera o log de interações (user, item, timestamp).

    Cada usuário usa um sub-gerador derivado de (semente, índice do usuário),
    então o resultado não depende da ordem de geração. Timestamps são inteiros
    estritamente crescentes dentro de cada usuário.

    Returns:
        pd.DataFrame: Usuários ``u{índice}``, itens ``i{rank}``
    """
    logging.info(
        f"🎲 Gerando log sintético: {config.n_users} usuários, {config.n_items} itens, "
        f"p_repeat={config.p_repeat}, zipf_s={config.zipf_s}, semente={config.seed}"
    )
    root = Rng(config.seed)
    cdf = zipf_cdf(config.n_items, config.zipf_s)
    users, items, timestamps = [], [], []
    for user in range(config.n_users):
        rng = root.spawn(user)
        session = generate_session(rng, config, cdf)
        clock = rng.integer(1_000_000)
        for rank in session:
            clock += 1 + rng.integer(3600)
            users.append(f"u{user}")
            items.append(f"i{rank + 1}")
            timestamps.append(clock)

    log = pd.DataFrame({"user": users, "item": items, "timestamp": np.array(timestamps, dtype=np.int64)})
    logging.info(f"✅ {len(log)} interações sintéticas geradas")
    return log
