# src/model.py
"""Автоэнкодер: N токенов → L латентных токенов → N токенов."""

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attention import AttentionParams, init_attention, reduce_attention, uniform_init
from .config import ModelConfig
from .errors import DimensionError, FixedLengthError, UsageError
from .tensor import Tensor, add, dropout, embedding_lookup, matmul, no_grad


@dataclass
class AutoencoderParams:
    config: ModelConfig
    embedding: Tensor
    positional: Tensor | None
    encoder: list[AttentionParams] = field(default_factory=list)
    decoder: list[AttentionParams] = field(default_factory=list)
    out_proj: Tensor | None = None

    def named_parameters(self) -> dict[str, Tensor]:
        """Параметры в порядке объявления (он же порядок в чекпоинте)."""
        params: dict[str, Tensor] = {'embedding': self.embedding}
        if self.positional is not None:
            params['positional'] = self.positional
        for prefix, blocks in (('encoder', self.encoder), ('decoder', self.decoder)):
            for i, block in enumerate(blocks):
                for name, tensor in block.named_parameters().items():
                    params[f'{prefix}.{i}.{name}'] = tensor
        assert self.out_proj is not None
        params['out_proj'] = self.out_proj
        return params

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def copy(self) -> 'AutoencoderParams':
        """Снимок весов (без градиентов)."""
        return params_from_arrays(
            self.config,
            {name: t.data.copy() for name, t in self.named_parameters().items()},
        )


def _dtype(config: ModelConfig):
    return np.float32 if config.dtype == 'float32' else np.float64


def block_layout(config: ModelConfig) -> tuple[list[tuple[int, int, int]], list[tuple[int, int, int]]]:
    """(d_in, n_in, n_out) для каждого блока энкодера и декодера.

    Промежуточные блоки энкодера сохраняют длину N, последний сокращает до L.
    Промежуточные блоки декодера сохраняют длину L, последний расширяет до N.
    """
    n, l = config.input_len, config.latent_len
    encoder = []
    for i in range(config.encoder_depth):
        d_in = config.d_model if i == 0 else config.d_attn
        n_out = l if i == config.encoder_depth - 1 else n
        encoder.append((d_in, n, n_out))
    decoder = []
    for i in range(config.decoder_depth):
        n_out = n if i == config.decoder_depth - 1 else l
        decoder.append((config.d_attn, l, n_out))
    return encoder, decoder


def init_model(config: ModelConfig, seed: int) -> AutoencoderParams:
    """Детерминированная инициализация: одинаковый seed → побитово одинаковые веса."""
    config.validate()
    rng = np.random.default_rng(seed)
    dtype = _dtype(config)

    # Таблицы: fan_in = ширина токена
    embedding = uniform_init(rng, (config.vocab_size, config.d_model), config.d_model, dtype)
    positional = None
    if config.use_positional:
        positional = uniform_init(rng, (config.input_len, config.d_model), config.d_model, dtype)

    encoder_layout, decoder_layout = block_layout(config)
    encoder = [init_attention(rng, d_in, config.d_attn, n_in, n_out, dtype)
               for d_in, n_in, n_out in encoder_layout]
    decoder = [init_attention(rng, d_in, config.d_attn, n_in, n_out, dtype)
               for d_in, n_in, n_out in decoder_layout]
    out_proj = uniform_init(rng, (config.d_attn, config.vocab_size), config.d_attn, dtype)

    return AutoencoderParams(
        config=config,
        embedding=embedding,
        positional=positional,
        encoder=encoder,
        decoder=decoder,
        out_proj=out_proj,
    )


def params_from_arrays(config: ModelConfig, arrays: dict[str, np.ndarray]) -> AutoencoderParams:
    """Собирает параметры из именованных массивов (загрузка чекпоинта, снимки)."""
    dtype = _dtype(config)
    encoder_layout, decoder_layout = block_layout(config)

    def take(name: str, shape: tuple[int, int]) -> Tensor:
        if name not in arrays:
            raise UsageError(f"Нет параметра '{name}'")
        array = np.asarray(arrays[name])
        if array.shape != shape:
            raise DimensionError(f"Параметр '{name}': ожидалась форма {shape}, получена {array.shape}")
        return Tensor(array.astype(dtype, copy=False), requires_grad=True)

    def blocks(prefix: str, layout) -> list[AttentionParams]:
        result = []
        for i, (d_in, n_in, n_out) in enumerate(layout):
            result.append(AttentionParams(
                w_q=take(f'{prefix}.{i}.w_q', (d_in, config.d_attn)),
                w_k=take(f'{prefix}.{i}.w_k', (d_in, config.d_attn)),
                w_v=take(f'{prefix}.{i}.w_v', (d_in, config.d_attn)),
                w_s=take(f'{prefix}.{i}.w_s', (n_out, n_in)),
            ))
        return result

    return AutoencoderParams(
        config=config,
        embedding=take('embedding', (config.vocab_size, config.d_model)),
        positional=take('positional', (config.input_len, config.d_model)) if config.use_positional else None,
        encoder=blocks('encoder', encoder_layout),
        decoder=blocks('decoder', decoder_layout),
        out_proj=take('out_proj', (config.d_attn, config.vocab_size)),
    )


def _check_ids(params: AutoencoderParams, ids) -> np.ndarray:
    array = np.asarray(ids, dtype=np.int64)
    if array.ndim not in (1, 2):
        raise DimensionError(f"ids должны быть последовательностью или батчем, форма {array.shape}")
    if array.shape[-1] != params.config.input_len:
        raise FixedLengthError(
            f"Длина входа {array.shape[-1]}, а модель зафиксирована на N={params.config.input_len}"
        )
    return array


def embed(params: AutoencoderParams, ids) -> Tensor:
    """Эмбеддинги токенов (+ позиционные)."""
    x = embedding_lookup(params.embedding, _check_ids(params, ids))
    if params.positional is not None:
        x = add(x, params.positional)
    return x


def encode(params: AutoencoderParams, x: Tensor) -> Tensor:
    """N×d_model → L×d_attn."""
    for block in params.encoder:
        x = reduce_attention(x, block)
    return x


def decode(params: AutoencoderParams, z: Tensor) -> Tensor:
    """L×d_attn → N×d_attn."""
    if z.ndim < 2 or z.shape[-2] != params.config.latent_len:
        raise FixedLengthError(
            f"Латентная длина {z.shape[-2] if z.ndim >= 2 else z.shape}, ожидалось L={params.config.latent_len}"
        )
    for block in params.decoder:
        z = reduce_attention(z, block)
    return z


def forward(
    params: AutoencoderParams,
    ids,
    dropout_p: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Логиты N×V (или batch×N×V для батча ids)."""
    assert params.out_proj is not None
    x = dropout(embed(params, ids), dropout_p, rng)
    z = dropout(encode(params, x), dropout_p, rng)
    return matmul(decode(params, z), params.out_proj)


def argmax_lowest(logits: np.ndarray) -> np.ndarray:
    """argmax по последней оси; при равенстве побеждает меньший id."""
    # np.argmax возвращает первое вхождение максимума
    return np.argmax(logits, axis=-1)


def reconstruct(params: AutoencoderParams, ids) -> np.ndarray:
    """Восстановленная последовательность (или батч) id."""
    with no_grad():
        logits = forward(params, ids)
    return argmax_lowest(logits.data)


def token_accuracy(pred: Sequence[int], target: Sequence[int]) -> float:
    """Доля позиций, где восстановленный токен совпал с исходным."""
    pred_array = np.asarray(pred)
    target_array = np.asarray(target)
    if pred_array.shape != target_array.shape:
        raise UsageError(f"Длины последовательностей различаются: {pred_array.shape} и {target_array.shape}")
    if pred_array.size == 0:
        raise UsageError("Пустые последовательности")
    return float(np.count_nonzero(pred_array == target_array)) / pred_array.size


def parameter_count(params: AutoencoderParams) -> int:
    return sum(math.prod(t.shape) for t in params.parameters())
