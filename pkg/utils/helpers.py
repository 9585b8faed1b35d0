# Arquivo: utils/helpers.py

import os
from typing import Optional


def ensure_dir(path: str) -> str:
    """Cria o diretório (e os intermediários) se não existir."""
    if path:
        os.makedirs(path, exist_ok=True)
    return path


def format_improvement(value: Optional[float]) -> str:
    """
    Melhoria percentual com sinal e duas casas ("+43.02%").

    None (melhoria indefinida) vira "n/a"; valores que arredondam para zero
    saem como "+0.00%".
    """
    if value is None:
        return "n/a"
    rounded = round(value, 2)
    if rounded == 0:
        rounded = 0.0
    return f"{rounded:+.2f}%"


def format_metric(value: Optional[float], decimals: int = 4) -> str:
    if value is None:
        return "n/a"
    return f"{value:.{decimals}f}"
