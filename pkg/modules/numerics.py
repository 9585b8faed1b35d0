# Arquivo: modules/numerics.py

"""
Núcleos numéricos determinísticos compartilhados por todos os modelos:
gerador pseudoaleatório com semente, otimizador Adam, entropia cruzada
softmax estável e verificador de gradiente por diferenças finitas.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Tuple, Union

import numpy as np


class NumericError(Exception):
    """Exceção personalizada para falhas numéricas (valores não finitos, formas incompatíveis)"""
    pass


_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_XORSHIFT_MULT = 0x2545F4914F6CDD1D
_TWO_POW_MINUS_53 = 1.0 / (1 << 53)


def _splitmix64_mix(z: int) -> int:
    """Finalizador do splitmix64 sobre um inteiro de 64 bits."""
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def splitmix64(state: int) -> Tuple[int, int]:
    """
    Um passo do splitmix64.

    Args:
        state: Estado atual (64 bits)

    Returns:
        tuple: (novo_estado, saída)
    """
    state = (state + _GOLDEN_GAMMA) & _MASK64
    return state, _splitmix64_mix(state)


def _splitmix64_mix_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


class Rng:
    """
    Gerador xorshift64* com estado inicial derivado da semente via splitmix64.

    Sorteios escalares avançam o xorshift64*. Sorteios em bloco (``uniform`` com
    ``size``) consomem uma saída do xorshift64* como chave e geram o bloco com o
    splitmix64 em modo contador: saída k = mix(chave + k * gamma), k = 1..n.
    Reais uniformes usam os 53 bits altos: (x >> 11) * 2^-53, em [0, 1).
    O fluxo depende apenas da semente (independe de plataforma).
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        _, state = splitmix64(self.seed & _MASK64)
        # xorshift não aceita estado zero
        self.state = state or _GOLDEN_GAMMA

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * _XORSHIFT_MULT) & _MASK64

    def random(self) -> float:
        """Um real uniforme em [0, 1)."""
        return (self.next_u64() >> 11) * _TWO_POW_MINUS_53

    def uniform(self, size: Union[int, Tuple[int, ...]]) -> np.ndarray:
        """Bloco de reais uniformes em [0, 1) com a forma pedida."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        key = np.uint64(self.next_u64())
        with np.errstate(over="ignore"):
            counters = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GOLDEN_GAMMA) + key
        bits = _splitmix64_mix_array(counters)
        values = (bits >> np.uint64(11)).astype(np.float64) * _TWO_POW_MINUS_53
        return values.reshape(shape)

    def gauss(self) -> float:
        """Normal padrão escalar via Box–Muller."""
        u1 = self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def normal(self, size: Union[int, Tuple[int, ...]], scale: float = 1.0) -> np.ndarray:
        """Bloco de normais via Box–Muller sobre dois blocos uniformes."""
        u1 = self.uniform(size)
        u2 = self.uniform(size)
        return scale * np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)

    def integer(self, high: int) -> int:
        """Inteiro uniforme em [0, high)."""
        if high < 1:
            raise NumericError(f"integer(high) exige high >= 1, recebido {high}")
        return min(int(self.random() * high), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        # ordenação estável das chaves uniformes
        return np.argsort(self.uniform(n), kind="stable")

    def spawn(self, key: int) -> "Rng":
        """Sub-gerador independente derivado de (semente, chave)."""
        return Rng(_splitmix64_mix((self.seed * _GOLDEN_GAMMA + int(key) + 1) & _MASK64))


def seeded_rng(seed: int) -> Rng:
    return Rng(seed)


@dataclass
class AdamState:
    """Estado do Adam: momentos por parâmetro, contador de passos e hiperparâmetros."""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, params: Mapping[str, np.ndarray], lr: float = 1e-3) -> "AdamState":
        return cls(
            lr=lr,
            m={name: np.zeros_like(value) for name, value in params.items()},
            v={name: np.zeros_like(value) for name, value in params.items()},
        )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> Tuple[dict, AdamState]:
    """
    Passo padrão do Adam com correção de viés.

    Args:
        params: Parâmetros nomeados
        grads: Gradientes com as mesmas chaves e formas
        state: Estado atual (não é modificado)

    Returns:
        tuple: (novos_parametros, novo_estado) com t incrementado

    Raises:
        NumericError: Gradiente não finito ou formas incompatíveis
    """
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, value in params.items():
        if name not in grads:
            raise NumericError(f"Gradiente ausente para o parâmetro '{name}'")
        g = grads[name]
        if g.shape != value.shape:
            raise NumericError(
                f"Forma do gradiente {g.shape} difere do parâmetro '{name}' {value.shape}"
            )
        if not np.all(np.isfinite(g)):
            logging.error(f"Gradiente não finito no parâmetro '{name}' (passo {t})")
            raise NumericError(f"Gradiente não finito no parâmetro '{name}' (passo {t})")
        m = state.beta1 * state.m.get(name, np.zeros_like(value)) + (1 - state.beta1) * g
        v = state.beta2 * state.v.get(name, np.zeros_like(value)) + (1 - state.beta2) * (g * g)
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        new_params[name] = (value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(value.dtype)
        new_m[name] = m.astype(value.dtype)
        new_v[name] = v.astype(value.dtype)
    new_state = AdamState(
        lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps,
        t=t, m=new_m, v=new_v,
    )
    return new_params, new_state


def softmax_cross_entropy(logits: np.ndarray, target: int) -> Tuple[float, np.ndarray]:
    """
    Entropia cruzada softmax sobre o catálogo inteiro, estável por subtração do máximo.

    Args:
        logits: Vetor de logits (um por item)
        target: Índice do item correto

    Returns:
        tuple: (loss, dlogits) com dlogits = softmax(logits) - onehot(target)

    Raises:
        NumericError: Vetor vazio ou alvo fora do intervalo
    """
    logits = np.asarray(logits)
    if logits.ndim != 1 or logits.size == 0:
        raise NumericError("softmax_cross_entropy exige um vetor de logits não vazio")
    if not 0 <= target < logits.size:
        raise NumericError(f"Alvo {target} fora do intervalo [0, {logits.size})")
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    total = exp.sum()
    loss = float(np.log(total) - shifted[target])
    dlogits = exp / total
    dlogits[target] -= 1.0
    return max(loss, 0.0), dlogits


def softmax_cross_entropy_batch(logits: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Versão em lote: perda média e gradiente já dividido pelo tamanho do lote.

    Args:
        logits: Matriz (B, |I|)
        targets: Vetor (B,) de índices

    Returns:
        tuple: (loss_media, dlogits)
    """
    if logits.ndim != 2 or logits.shape[1] == 0:
        raise NumericError("softmax_cross_entropy_batch exige matriz (B, |I|) não vazia")
    rows = np.arange(logits.shape[0])
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    losses = np.log(total[:, 0]) - shifted[rows, targets]
    dlogits = exp / total
    dlogits[rows, targets] -= 1.0
    batch = logits.shape[0]
    return float(losses.mean()), dlogits / batch


@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    worst_parameter: str
    eps: float
    n_checked: int = 0


def numeric_gradient(
    f_value: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
) -> dict:
    """
    Gradiente por diferença central em cada coordenada.

    Os arrays de ``params`` são perturbados no lugar e restaurados em seguida.
    """
    numeric = {}
    for name, value in params.items():
        grad = np.zeros_like(value, dtype=np.float64)
        flat = value.reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + eps
            plus = f_value(params)
            flat[idx] = original - eps
            minus = f_value(params)
            flat[idx] = original
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise NumericError(f"Função não finita ao perturbar {name}[{idx}]")
            grad.reshape(-1)[idx] = (plus - minus) / (2.0 * eps)
        numeric[name] = grad
    return numeric


def finite_diff_check(
    f: Callable[[Mapping[str, np.ndarray]], Tuple[float, Mapping[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
) -> GradCheckReport:
    """
    Compara o gradiente analítico de ``f`` com diferenças centrais.

    Args:
        f: Função que devolve (valor, gradientes_por_nome)
        params: Parâmetros nomeados (use float64)
        eps: Passo da diferença central

    Returns:
        GradCheckReport: maior erro relativo |a-n| / max(1e-12, |a|+|n|) e onde ocorreu

    Raises:
        NumericError: Se f não for finita
    """
    value, analytic = f(params)
    if not math.isfinite(value):
        raise NumericError("Função não finita no ponto avaliado")

    numeric = numeric_gradient(lambda p: f(p)[0], params, eps)

    worst_error, worst_name, checked = 0.0, "", 0
    for name, num in numeric.items():
        ana = np.asarray(analytic[name], dtype=np.float64)
        errors = np.abs(ana - num) / np.maximum(1e-12, np.abs(ana) + np.abs(num))
        checked += errors.size
        if not errors.size:
            continue
        idx = int(np.argmax(errors))
        if errors.flat[idx] > worst_error or not worst_name:
            worst_error = float(errors.flat[idx])
            worst_name = f"{name}[{idx}]"

    logging.debug(f"Verificação de gradiente: erro relativo máximo {worst_error:.3e} em {worst_name}")
    return GradCheckReport(max_relative_error=worst_error, worst_parameter=worst_name, eps=eps, n_checked=checked)
