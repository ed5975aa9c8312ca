# src/checkpoint.py
"""Формат чекпоинта redattn-ckpt-v1.

Файл состоит из текстового заголовка и бинарных блобов:

    format: redattn-ckpt-v1
    seed: 0
    input_len: 32
    ...                           # остальные поля ModelConfig
    param: embedding 64 256       # имя, строки, столбцы, в порядке объявления
    param: positional 32 256
    ...
    ---
    <блобы little-endian float32 в том же порядке, без разделителей>

Заголовок — UTF-8, строки `ключ: значение`, завершается строкой `---`.
"""

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import CheckpointError, RedAttnError
from .model import AutoencoderParams, params_from_arrays

FORMAT_VERSION = 'redattn-ckpt-v1'
HEADER_END = b'\n---\n'
BLOB_DTYPE = np.dtype('<f4')


@dataclass
class CheckpointInfo:
    config: ModelConfig
    seed: int
    params: list[tuple[str, int, int]]
    extra: dict[str, str]


def save_checkpoint(path: Path, params: AutoencoderParams, seed: int, extra: dict[str, str] | None = None):
    """Сохраняет параметры модели."""
    lines = [f"format: {FORMAT_VERSION}", f"seed: {seed}"]
    for f in fields(ModelConfig):
        lines.append(f"{f.name}: {getattr(params.config, f.name)}")
    for key, value in sorted((extra or {}).items()):
        lines.append(f"extra.{key}: {value}")

    named = params.named_parameters()
    for name, tensor in named.items():
        rows, cols = tensor.shape
        lines.append(f"param: {name} {rows} {cols}")

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write('\n'.join(lines).encode('utf-8'))
        f.write(HEADER_END)
        for tensor in named.values():
            f.write(np.ascontiguousarray(tensor.data, dtype=BLOB_DTYPE).tobytes())


def read_header(raw: bytes) -> tuple[CheckpointInfo, int]:
    """Разбирает заголовок; возвращает описание и смещение первого блоба."""
    end = raw.find(HEADER_END)
    if end < 0:
        raise CheckpointError("Чекпоинт без конца заголовка")
    try:
        header = raw[:end].decode('utf-8')
    except UnicodeDecodeError:
        raise CheckpointError("Заголовок чекпоинта не в UTF-8")

    values: dict[str, str] = {}
    param_specs: list[tuple[str, int, int]] = []
    for line in header.splitlines():
        key, sep, value = line.partition(': ')
        if not sep:
            raise CheckpointError(f"Неверная строка заголовка: {line!r}")
        if key == 'param':
            parts = value.split()
            if len(parts) != 3:
                raise CheckpointError(f"Неверное описание параметра: {value!r}")
            param_specs.append((parts[0], int(parts[1]), int(parts[2])))
        else:
            values[key] = value

    if values.get('format') != FORMAT_VERSION:
        raise CheckpointError(f"Неподдерживаемый формат чекпоинта: {values.get('format')!r}")

    config_kwargs = {}
    for f in fields(ModelConfig):
        if f.name not in values:
            raise CheckpointError(f"В заголовке нет поля '{f.name}'")
        config_kwargs[f.name] = _parse_field(f.name, values[f.name])
    extra = {k[len('extra.'):]: v for k, v in values.items() if k.startswith('extra.')}
    info = CheckpointInfo(
        config=ModelConfig(**config_kwargs),
        seed=int(values.get('seed', 0)),
        params=param_specs,
        extra=extra,
    )
    return info, end + len(HEADER_END)


def _parse_field(name: str, value: str):
    if name == 'use_positional':
        if value not in ('True', 'False'):
            raise CheckpointError(f"Неверное значение {name}: {value!r}")
        return value == 'True'
    if name == 'dtype':
        return value
    try:
        return int(value)
    except ValueError:
        raise CheckpointError(f"Неверное значение {name}: {value!r}")


def load_checkpoint(path: Path) -> tuple[AutoencoderParams, CheckpointInfo]:
    """Загружает параметры; размеры блобов сверяются с заголовком."""
    raw = Path(path).read_bytes()
    info, offset = read_header(raw)

    arrays: dict[str, np.ndarray] = {}
    for name, rows, cols in info.params:
        nbytes = rows * cols * BLOB_DTYPE.itemsize
        if offset + nbytes > len(raw):
            raise CheckpointError(f"Блоб '{name}' обрезан")
        arrays[name] = np.frombuffer(raw, dtype=BLOB_DTYPE, count=rows * cols, offset=offset).reshape(rows, cols)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"Лишние {len(raw) - offset} байт после блобов")

    try:
        params = params_from_arrays(info.config, {k: v.copy() for k, v in arrays.items()})
    except RedAttnError as e:
        raise CheckpointError(f"Чекпоинт не соответствует конфигурации: {e}")
    return params, info


def describe_checkpoint(path: Path) -> str:
    """Текстовое описание заголовка и таблицы параметров."""
    raw = Path(path).read_bytes()
    info, _ = read_header(raw)
    lines = [f"format: {FORMAT_VERSION}", f"seed: {info.seed}"]
    for f in fields(ModelConfig):
        lines.append(f"{f.name}: {getattr(info.config, f.name)}")
    for key, value in sorted(info.extra.items()):
        lines.append(f"{key}: {value}")
    total = 0
    lines.append("parameters:")
    for name, rows, cols in info.params:
        lines.append(f"  {name:<24} {rows}×{cols}")
        total += rows * cols
    lines.append(f"total: {total}")
    return '\n'.join(lines)
