# src/attention.py
"""Scaled dot-product attention с масштабирующей матрицей запросов W^S."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FixedLengthError
from .tensor import Tensor, matmul, scale, softmax_rows, transpose


@dataclass
class AttentionParams:
    """Веса одного блока: проекции W^Q, W^K, W^V и матрица длины W^S."""
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_s: Tensor

    @property
    def n_in(self) -> int:
        return self.w_s.shape[1]

    @property
    def n_out(self) -> int:
        return self.w_s.shape[0]

    @property
    def d_in(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_attn(self) -> int:
        return self.w_q.shape[1]

    def named_parameters(self) -> dict[str, Tensor]:
        return {'w_q': self.w_q, 'w_k': self.w_k, 'w_v': self.w_v, 'w_s': self.w_s}


def uniform_init(rng: np.random.Generator, shape: tuple[int, int], fan_in: int, dtype) -> Tensor:
    """uniform(−1/√fan_in, +1/√fan_in)."""
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def init_attention(
    rng: np.random.Generator,
    d_in: int,
    d_attn: int,
    n_in: int,
    n_out: int,
    dtype=np.float64,
) -> AttentionParams:
    """Инициализирует блок в порядке w_q, w_k, w_v, w_s."""
    return AttentionParams(
        w_q=uniform_init(rng, (d_in, d_attn), d_in, dtype),
        w_k=uniform_init(rng, (d_in, d_attn), d_in, dtype),
        w_v=uniform_init(rng, (d_in, d_attn), d_in, dtype),
        w_s=uniform_init(rng, (n_out, n_in), n_in, dtype),
    )


def _check_input(x: Tensor, p: AttentionParams):
    if x.ndim not in (2, 3):
        raise DimensionError(f"Вход attention должен быть n×d или batch×n×d, форма {x.shape}")
    if x.shape[-2] != p.n_in:
        raise FixedLengthError(
            f"Длина последовательности {x.shape[-2]} не совпадает с W^S {p.w_s.shape}: "
            f"блок принимает ровно {p.n_in} токенов"
        )
    if x.shape[-1] != p.d_in:
        raise DimensionError(f"Ширина токена {x.shape[-1]} не совпадает с W^Q {p.w_q.shape}")


def project_qkv(x: Tensor, p: AttentionParams) -> tuple[Tensor, Tensor, Tensor]:
    """k = x·W^K, v = x·W^V, q = W^S·(x·W^Q)."""
    _check_input(x, p)
    q = matmul(p.w_s, matmul(x, p.w_q))
    k = matmul(x, p.w_k)
    v = matmul(x, p.w_v)
    return q, k, v


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """softmax(QKᵀ/√d_k) по ключевым позициям."""
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"Q и K должны иметь одинаковую ширину: {q.shape} и {k.shape}")
    d_k = q.shape[-1]
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_k))
    return softmax_rows(scores)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """A(Q, K, V) = softmax(QKᵀ/√d_k)·V; число строк результата задаёт Q."""
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"K и V должны иметь одинаковое число строк: {k.shape} и {v.shape}")
    return matmul(attention_weights(q, k), v)


def reduce_attention(x: Tensor, p: AttentionParams) -> Tensor:
    """Attention, меняющее длину последовательности с n_in на n_out."""
    q, k, v = project_qkv(x, p)
    return scaled_dot_attention(q, k, v)
