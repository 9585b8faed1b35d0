# Arquivo: modules/networks.py

"""
Redes sequenciais pequenas implementadas do zero em numpy, com retropropagação
manual: uma célula GRU e um bloco de autoatenção causal. Em ambas os logits
saem do produto com a tabela de embeddings de itens (embeddings amarrados).

Lotes são preenchidos à direita: passos de preenchimento não alteram o estado
da GRU e não são chaves visíveis na atenção.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from modules.numerics import Rng, softmax_cross_entropy_batch


class ScorerError(Exception):
    """Exceção personalizada para entradas inválidas dos modelos (índice, prefixo)"""
    pass


LN_EPS = 1e-6


@dataclass
class PaddedBatch:
    items: np.ndarray    # (B, T) índices, preenchimento com 0
    mask: np.ndarray     # (B, T) 1.0 nas posições reais
    lengths: np.ndarray  # (B,)


def pad_prefixes(prefixes: Sequence[Sequence[int]], n_items: int) -> PaddedBatch:
    """
    Empacota prefixos de tamanhos variados em um lote preenchido à direita.

    Raises:
        ScorerError: Prefixo vazio ou índice fora do catálogo
    """
    if not prefixes:
        raise ScorerError("Lote sem prefixos")
    lengths = np.array([len(p) for p in prefixes], dtype=np.int64)
    if lengths.min() < 1:
        raise ScorerError("Prefixo vazio")
    width = int(lengths.max())
    items = np.zeros((len(prefixes), width), dtype=np.int64)
    mask = np.zeros((len(prefixes), width), dtype=np.float64)
    for row, prefix in enumerate(prefixes):
        items[row, :len(prefix)] = prefix
        mask[row, :len(prefix)] = 1.0
    if items.min() < 0 or items.max() >= n_items:
        bad = int(items.max()) if items.max() >= n_items else int(items.min())
        raise ScorerError(f"Índice de item inválido {bad} para catálogo de {n_items} itens")
    return PaddedBatch(items=items, mask=mask, lengths=lengths)


def dropout_mask(rng: Optional[Rng], shape: tuple, rate: float, dtype) -> Optional[np.ndarray]:
    """Máscara de dropout invertido; None quando desligado (avaliação ou taxa 0)."""
    if rng is None or rate <= 0.0:
        return None
    keep = rng.uniform(shape) >= rate
    return (keep / (1.0 - rate)).astype(dtype)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _uniform(rng: Rng, shape: tuple, bound: float) -> np.ndarray:
    return (rng.uniform(shape) * 2.0 - 1.0) * bound


# === GRU ===

def init_gru(n_items: int, embed_dim: int, hidden_dim: int, rng: Rng, dtype=np.float32) -> dict:
    bound = 1.0 / np.sqrt(hidden_dim)
    params = {"item_emb": rng.normal((n_items, embed_dim), scale=1.0 / np.sqrt(embed_dim))}
    for gate in ("z", "r", "h"):
        params[f"W_{gate}"] = _uniform(rng, (embed_dim, hidden_dim), bound)
        params[f"U_{gate}"] = _uniform(rng, (hidden_dim, hidden_dim), bound)
        params[f"b_{gate}"] = np.zeros(hidden_dim)
    if hidden_dim != embed_dim:
        params["W_out"] = _uniform(rng, (hidden_dim, embed_dim), bound)
    return {name: value.astype(dtype) for name, value in params.items()}


def gru_forward(params: dict, batch: PaddedBatch, dropout: float = 0.0, rng: Optional[Rng] = None):
    """
    Estado final da GRU (padrão de portas z/r/candidato) sobre cada prefixo.

    Returns:
        tuple: (representação (B, d_e), cache para a retropropagação)
    """
    emb = params["item_emb"]
    dtype = emb.dtype
    x_all = emb[batch.items]
    drop = dropout_mask(rng, x_all.shape, dropout, dtype)
    if drop is not None:
        x_all = x_all * drop
    mask = batch.mask.astype(dtype)

    h = np.zeros((batch.items.shape[0], params["U_z"].shape[0]), dtype=dtype)
    steps = []
    for t in range(batch.items.shape[1]):
        x = x_all[:, t, :]
        m = mask[:, t:t + 1]
        z = _sigmoid(x @ params["W_z"] + h @ params["U_z"] + params["b_z"])
        r = _sigmoid(x @ params["W_r"] + h @ params["U_r"] + params["b_r"])
        c = np.tanh(x @ params["W_h"] + (r * h) @ params["U_h"] + params["b_h"])
        steps.append((x, h, z, r, c, m))
        h = m * ((1.0 - z) * c + z * h) + (1.0 - m) * h

    out = h @ params["W_out"] if "W_out" in params else h
    return out, {"batch": batch, "drop": drop, "steps": steps, "h_final": h}


def gru_backward(params: dict, cache: dict, dout: np.ndarray) -> dict:
    """Gradientes da GRU dado d(perda)/d(representação final); sem o termo de saída amarrada."""
    grads = {name: np.zeros_like(value) for name, value in params.items()}
    batch, steps = cache["batch"], cache["steps"]

    if "W_out" in params:
        grads["W_out"] = cache["h_final"].T @ dout
        dh = dout @ params["W_out"].T
    else:
        dh = dout.copy()

    dx_all = np.zeros(batch.items.shape + (params["item_emb"].shape[1],), dtype=dout.dtype)
    for t in reversed(range(len(steps))):
        x, h_prev, z, r, c, m = steps[t]
        dh_new = m * dh
        dh_prev = (1.0 - m) * dh + dh_new * z

        da_h = dh_new * (1.0 - z) * (1.0 - c * c)
        grads["W_h"] += x.T @ da_h
        grads["U_h"] += (r * h_prev).T @ da_h
        grads["b_h"] += da_h.sum(axis=0)
        d_rh = da_h @ params["U_h"].T
        dh_prev += d_rh * r

        da_r = d_rh * h_prev * r * (1.0 - r)
        grads["W_r"] += x.T @ da_r
        grads["U_r"] += h_prev.T @ da_r
        grads["b_r"] += da_r.sum(axis=0)

        da_z = dh_new * (h_prev - c) * z * (1.0 - z)
        grads["W_z"] += x.T @ da_z
        grads["U_z"] += h_prev.T @ da_z
        grads["b_z"] += da_z.sum(axis=0)

        dh_prev += da_r @ params["U_r"].T + da_z @ params["U_z"].T
        dx_all[:, t, :] = da_h @ params["W_h"].T + da_r @ params["W_r"].T + da_z @ params["W_z"].T
        dh = dh_prev

    if cache["drop"] is not None:
        dx_all *= cache["drop"]
    np.add.at(grads["item_emb"], batch.items.reshape(-1), dx_all.reshape(-1, dx_all.shape[-1]))
    return grads


# === Autoatenção causal ===

def init_attn(n_items: int, embed_dim: int, hidden_dim: int, max_len: int, rng: Rng, dtype=np.float32) -> dict:
    bound = 1.0 / np.sqrt(embed_dim)
    params = {
        "item_emb": rng.normal((n_items, embed_dim), scale=1.0 / np.sqrt(embed_dim)),
        "pos_emb": rng.normal((max_len, embed_dim), scale=1.0 / np.sqrt(embed_dim)),
        "W_q": _uniform(rng, (embed_dim, embed_dim), bound),
        "W_k": _uniform(rng, (embed_dim, embed_dim), bound),
        "W_v": _uniform(rng, (embed_dim, embed_dim), bound),
        "W_o": _uniform(rng, (embed_dim, embed_dim), bound),
        "ln1_g": np.ones(embed_dim),
        "ln1_b": np.zeros(embed_dim),
        "W_1": _uniform(rng, (embed_dim, hidden_dim), bound),
        "b_1": np.zeros(hidden_dim),
        "W_2": _uniform(rng, (hidden_dim, embed_dim), 1.0 / np.sqrt(hidden_dim)),
        "b_2": np.zeros(embed_dim),
        "ln2_g": np.ones(embed_dim),
        "ln2_b": np.zeros(embed_dim),
    }
    return {name: value.astype(dtype) for name, value in params.items()}


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    centered = x - x.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + LN_EPS)
    normed = centered * inv_std
    return normed * gain + bias, (normed, inv_std)


def _layer_norm_backward(dy: np.ndarray, gain: np.ndarray, cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    normed, inv_std = cache
    width = dy.shape[-1]
    dgain = (dy * normed).reshape(-1, width).sum(axis=0)
    dbias = dy.reshape(-1, width).sum(axis=0)
    dnormed = dy * gain
    dx = inv_std * (
        dnormed
        - dnormed.mean(axis=-1, keepdims=True)
        - normed * (dnormed * normed).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def causal_mask(lengths: np.ndarray, width: int) -> np.ndarray:
    """(B, 1, T, T): consulta q enxerga chaves k <= q que não são preenchimento."""
    lower = np.tril(np.ones((width, width), dtype=bool))
    valid_keys = np.arange(width)[None, :] < lengths[:, None]
    return lower[None, None, :, :] & valid_keys[:, None, None, :]


def attn_forward(
    params: dict,
    batch: PaddedBatch,
    n_heads: int,
    dropout: float = 0.0,
    rng: Optional[Rng] = None,
):
    """
    Embeddings de item + posição -> autoatenção causal -> FFN pontual, com
    conexões residuais e normalização de camada; devolve a representação na
    última posição real de cada prefixo.

    Raises:
        ScorerError: Prefixo mais longo que a tabela de posições
    """
    emb, pos = params["item_emb"], params["pos_emb"]
    n_rows, width = batch.items.shape
    if width > pos.shape[0]:
        raise ScorerError(f"Prefixo de {width} itens excede a tabela de posições ({pos.shape[0]})")
    dim = emb.shape[1]
    head_dim = dim // n_heads
    dtype = emb.dtype

    def split(a):
        return a.reshape(n_rows, width, n_heads, head_dim).transpose(0, 2, 1, 3)

    x0 = emb[batch.items] + pos[:width][None, :, :]
    drop_emb = dropout_mask(rng, x0.shape, dropout, dtype)
    x = x0 * drop_emb if drop_emb is not None else x0

    q, k, v = split(x @ params["W_q"]), split(x @ params["W_k"]), split(x @ params["W_v"])
    scale = dtype.type(1.0 / np.sqrt(head_dim))
    allowed = causal_mask(batch.lengths, width)
    logits = np.where(allowed, (q @ k.transpose(0, 1, 3, 2)) * scale, -np.inf)
    logits = logits - logits.max(axis=-1, keepdims=True)
    attn = np.exp(logits)
    attn = attn / attn.sum(axis=-1, keepdims=True)

    heads = (attn @ v).transpose(0, 2, 1, 3).reshape(n_rows, width, dim)
    attn_out = heads @ params["W_o"]
    drop_attn = dropout_mask(rng, attn_out.shape, dropout, dtype)
    if drop_attn is not None:
        attn_out = attn_out * drop_attn
    h1, ln1 = _layer_norm(x + attn_out, params["ln1_g"], params["ln1_b"])

    pre = h1 @ params["W_1"] + params["b_1"]
    act = np.maximum(pre, 0.0)
    ffn = act @ params["W_2"] + params["b_2"]
    drop_ffn = dropout_mask(rng, ffn.shape, dropout, dtype)
    if drop_ffn is not None:
        ffn = ffn * drop_ffn
    h2, ln2 = _layer_norm(h1 + ffn, params["ln2_g"], params["ln2_b"])

    rows = np.arange(n_rows)
    out = h2[rows, batch.lengths - 1]
    cache = {
        "batch": batch, "n_heads": n_heads, "scale": scale, "x": x, "q": q, "k": k, "v": v,
        "attn": attn, "heads": heads, "h1": h1, "pre": pre, "act": act,
        "ln1": ln1, "ln2": ln2, "drop_emb": drop_emb, "drop_attn": drop_attn, "drop_ffn": drop_ffn,
        "states": h2,
    }
    return out, cache


def attn_backward(params: dict, cache: dict, dout: np.ndarray) -> dict:
    """Gradientes do bloco de atenção dado d(perda)/d(representação final); sem o termo de saída amarrada."""
    grads = {name: np.zeros_like(value) for name, value in params.items()}
    batch = cache["batch"]
    n_rows, width = batch.items.shape
    dim = params["item_emb"].shape[1]
    n_heads = cache["n_heads"]
    head_dim = dim // n_heads
    hidden = params["W_1"].shape[1]

    def split(a):
        return a.reshape(n_rows, width, n_heads, head_dim).transpose(0, 2, 1, 3)

    def merge(a):
        return a.transpose(0, 2, 1, 3).reshape(n_rows, width, dim)

    dh2 = np.zeros((n_rows, width, dim), dtype=dout.dtype)
    dh2[np.arange(n_rows), batch.lengths - 1] = dout
    dr2, grads["ln2_g"], grads["ln2_b"] = _layer_norm_backward(dh2, params["ln2_g"], cache["ln2"])

    dffn = dr2 * cache["drop_ffn"] if cache["drop_ffn"] is not None else dr2
    grads["W_2"] = cache["act"].reshape(-1, hidden).T @ dffn.reshape(-1, dim)
    grads["b_2"] = dffn.reshape(-1, dim).sum(axis=0)
    dpre = (dffn @ params["W_2"].T) * (cache["pre"] > 0)
    grads["W_1"] = cache["h1"].reshape(-1, dim).T @ dpre.reshape(-1, hidden)
    grads["b_1"] = dpre.reshape(-1, hidden).sum(axis=0)
    dh1 = dr2 + dpre @ params["W_1"].T

    dr1, grads["ln1_g"], grads["ln1_b"] = _layer_norm_backward(dh1, params["ln1_g"], cache["ln1"])
    dattn_out = dr1 * cache["drop_attn"] if cache["drop_attn"] is not None else dr1
    grads["W_o"] = cache["heads"].reshape(-1, dim).T @ dattn_out.reshape(-1, dim)
    dheads = split(dattn_out @ params["W_o"].T)

    attn = cache["attn"]
    dattn = dheads @ cache["v"].transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dheads
    dlogits = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * cache["scale"]
    dq = dlogits @ cache["k"]
    dk = dlogits.transpose(0, 1, 3, 2) @ cache["q"]

    x = cache["x"].reshape(-1, dim)
    dq, dk, dv = merge(dq), merge(dk), merge(dv)
    grads["W_q"] = x.T @ dq.reshape(-1, dim)
    grads["W_k"] = x.T @ dk.reshape(-1, dim)
    grads["W_v"] = x.T @ dv.reshape(-1, dim)
    dx = dr1 + dq @ params["W_q"].T + dk @ params["W_k"].T + dv @ params["W_v"].T

    if cache["drop_emb"] is not None:
        dx = dx * cache["drop_emb"]
    grads["pos_emb"][:width] += dx.sum(axis=0)
    np.add.at(grads["item_emb"], batch.items.reshape(-1), dx.reshape(-1, dim))
    return grads


# === Perda com saída amarrada ===

def represent(kind: str, params: dict, batch: PaddedBatch, n_heads: int = 1,
              dropout: float = 0.0, rng: Optional[Rng] = None):
    if kind == "gru_mini":
        return gru_forward(params, batch, dropout=dropout, rng=rng)
    if kind == "attn_mini":
        return attn_forward(params, batch, n_heads, dropout=dropout, rng=rng)
    raise ScorerError(f"Modelo sem rede treinável: {kind}")


def tied_logits(params: dict, representation: np.ndarray) -> np.ndarray:
    """logits = H · Eᵀ com a tabela de embeddings de itens."""
    return representation @ params["item_emb"].T


def loss_and_grads(
    kind: str,
    params: dict,
    batch: PaddedBatch,
    targets: np.ndarray,
    n_heads: int = 1,
    dropout: float = 0.0,
    rng: Optional[Rng] = None,
) -> Tuple[float, dict]:
    """
    Entropia cruzada média sobre o catálogo completo e gradientes de todos os parâmetros.
    """
    out, cache = represent(kind, params, batch, n_heads=n_heads, dropout=dropout, rng=rng)
    logits = tied_logits(params, out)
    loss, dlogits = softmax_cross_entropy_batch(logits, targets)
    dout = dlogits @ params["item_emb"]
    if kind == "gru_mini":
        grads = gru_backward(params, cache, dout)
    else:
        grads = attn_backward(params, cache, dout)
    grads["item_emb"] += dlogits.T @ out
    return loss, grads
