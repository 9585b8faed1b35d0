# Arquivo: config.py

import os
from dotenv import load_dotenv, dotenv_values
from typing import Any, Callable, Mapping, Optional


class ConfigError(Exception):
    """Exceção personalizada para erros de configuração"""
    pass


def get_env_var(var_name: str, default: Optional[str] = None) -> Optional[str]:
    """
    Obtém uma variável de ambiente com valor padrão opcional

    Args:
        var_name: Nome da variável de ambiente
        default: Valor padrão se a variável não existir

    Returns:
        str: Valor da variável ou valor padrão
    """
    return os.getenv(var_name, default)


def parse_int(var_name: str, value: Any) -> int:
    """Converte um valor de configuração para inteiro, com erro legível."""
    try:
        return int(str(value).strip())
    except (TypeError, ValueError):
        raise ConfigError(f"'{var_name}' deve ser um inteiro, recebido: {value!r}")


def parse_float(var_name: str, value: Any) -> float:
    try:
        return float(str(value).strip())
    except (TypeError, ValueError):
        raise ConfigError(f"'{var_name}' deve ser um número real, recebido: {value!r}")


def parse_bool(var_name: str, value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "sim", "yes", "on"):
        return True
    if text in ("0", "false", "nao", "não", "no", "off", ""):
        return False
    raise ConfigError(f"'{var_name}' deve ser booleano (true/false), recebido: {value!r}")


def parse_ks(var_name: str, value: Any) -> list[int]:
    """
    Converte "5,10" (ou uma lista) em uma lista ordenada de cortes K.

    Raises:
        ConfigError: Se algum K não for inteiro >= 1
    """
    if isinstance(value, (list, tuple, set)):
        parts = list(value)
    else:
        parts = [p for p in str(value).replace(" ", "").split(",") if p]
    if not parts:
        raise ConfigError(f"'{var_name}' precisa de pelo menos um corte K")
    ks = sorted({parse_int(var_name, p) for p in parts})
    if ks[0] < 1:
        raise ConfigError(f"'{var_name}': todo K deve ser >= 1, recebido: {ks}")
    return ks


def load_config_file(path: Optional[str]) -> dict[str, str]:
    """
    Lê um arquivo de configuração em texto puro no formato key=value.

    Args:
        path: Caminho do arquivo (ou None)

    Returns:
        dict: Pares chave/valor com chaves normalizadas (minúsculas, '-' vira '_')

    Raises:
        ConfigError: Se o arquivo não existir
    """
    if not path:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"Arquivo de configuração não encontrado: {path}")
    values = dotenv_values(path, encoding=FILE_ENCODING)
    return {
        key.strip().lower().replace("-", "_"): (value if value is not None else "")
        for key, value in values.items()
    }


def resolve_setting(
    name: str,
    flag_value: Any,
    file_values: Mapping[str, str],
    default: Any,
    cast: Callable[[str, Any], Any] = lambda _name, value: value,
) -> Any:
    """
    Resolve um parâmetro seguindo a precedência:
    flag de linha de comando > arquivo de configuração > ambiente/.env > padrão.

    Args:
        name: Nome do parâmetro (ex.: 'batch_size')
        flag_value: Valor vindo da linha de comando (None se ausente)
        file_values: Valores lidos por load_config_file
        default: Valor padrão embutido
        cast: Função de conversão (ex.: parse_int)

    Returns:
        Valor resolvido e convertido
    """
    if flag_value is not None:
        return cast(name, flag_value)
    if name in file_values:
        return cast(name, file_values[name])
    env_value = get_env_var(f"BANCADA_{name.upper()}")
    if env_value is not None:
        return cast(name, env_value)
    return cast(name, default) if default is not None else None


# Carrega variáveis de ambiente do arquivo .env
load_dotenv()

# === CONFIGURAÇÕES OPCIONAIS ===
# Diretório de saída padrão para artefatos
OUTPUT_DIR = get_env_var("OUTPUT_DIR", "saidas")

# Nível de log (DEBUG, INFO, WARNING, ERROR)
LOG_LEVEL = get_env_var("LOG_LEVEL", "INFO")

# Arquivo de log
LOG_FILE = get_env_var("LOG_FILE", "bancada.log")

# Encoding para arquivos
FILE_ENCODING = get_env_var("FILE_ENCODING", "utf-8")

# Semente padrão (registrada em todo checkpoint e relatório)
DEFAULT_SEED = parse_int("DEFAULT_SEED", get_env_var("DEFAULT_SEED", "2024"))

# Comprimento máximo de sessão
DEFAULT_MAX_LEN = parse_int("DEFAULT_MAX_LEN", get_env_var("DEFAULT_MAX_LEN", "50"))

# Limite do filtro k-core
DEFAULT_MIN_COUNT = parse_int("DEFAULT_MIN_COUNT", get_env_var("DEFAULT_MIN_COUNT", "5"))

# Cortes K das métricas
DEFAULT_KS = parse_ks("DEFAULT_KS", get_env_var("DEFAULT_KS", "5,10"))

# Tema do relatório XLSX (ver style_config.py)
REPORT_THEME = get_env_var("REPORT_THEME", "default")

# Tamanho do lote de pontuação na avaliação
EVAL_BATCH_SIZE = parse_int("EVAL_BATCH_SIZE", get_env_var("EVAL_BATCH_SIZE", "256"))

# Formatos aceitos
REPORT_FORMATS = ("tsv", "markdown", "json", "xlsx")


def validate_config() -> None:
    """
    Valida todas as configurações carregadas

    Raises:
        ConfigError: Se alguma configuração for inválida
    """
    if DEFAULT_MAX_LEN < 1:
        raise ConfigError("DEFAULT_MAX_LEN deve ser maior que 0")

    if DEFAULT_MIN_COUNT < 1:
        raise ConfigError("DEFAULT_MIN_COUNT deve ser maior ou igual a 1")

    if EVAL_BATCH_SIZE < 1:
        raise ConfigError("EVAL_BATCH_SIZE deve ser maior que 0")

    valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR"]
    if LOG_LEVEL.upper() not in valid_levels:
        raise ConfigError(f"LOG_LEVEL deve ser um dos valores: {valid_levels}")


def get_config_summary() -> dict:
    """
    Retorna um resumo das configurações atuais

    Returns:
        dict: Dicionário com as configurações principais
    """
    return {
        "output": {
            "directory": OUTPUT_DIR,
            "encoding": FILE_ENCODING
        },
        "defaults": {
            "seed": DEFAULT_SEED,
            "max_len": DEFAULT_MAX_LEN,
            "min_count": DEFAULT_MIN_COUNT,
            "ks": DEFAULT_KS,
            "eval_batch_size": EVAL_BATCH_SIZE
        },
        "logging": {
            "level": LOG_LEVEL,
            "file": LOG_FILE
        },
        "report": {
            "theme": REPORT_THEME
        }
    }


# Valida configurações na importação
try:
    validate_config()
except ConfigError as e:
    print(f"❌ Erro na validação de configurações: {e}")
    raise
