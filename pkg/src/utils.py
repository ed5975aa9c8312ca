# src/utils.py
"""Вспомогательные функции."""

import hashlib
import json
import re
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np
from slugify import slugify

from .errors import UsageError

SEED_RANGE_PATTERN = re.compile(r'^(?P<start>\d+)-(?P<end>\d+)$')


def derive_seed(seed: int, *keys: int) -> int:
    """Детерминированный производный seed, например (seed, epoch) → seed перемешивания."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def format_number(value: float) -> str:
    """6 значащих цифр для CSV."""
    return f"{value:.6g}"


def cell_slug(input_len: int, latent_len: int, seed: int, schedule: str) -> str:
    """Имя файла для ячейки эксперимента."""
    return slugify(f"n{input_len}-l{latent_len}-seed{seed}-{schedule}", lowercase=True, max_length=80)


def parse_seeds(text: str) -> list[int]:
    """
    Разбирает список seed'ов.

    Примеры:
        "0,1,2" → [0, 1, 2]
        "0-9"   → [0, 1, ..., 9]
        "3"     → [3]
    """
    seeds: list[int] = []
    for part in text.split(','):
        part = part.strip()
        if not part:
            continue
        match = SEED_RANGE_PATTERN.match(part)
        if match:
            start, end = int(match.group('start')), int(match.group('end'))
            if end < start:
                raise UsageError(f"Неверный диапазон seed'ов: {part}")
            seeds.extend(range(start, end + 1))
        elif part.isdigit():
            seeds.append(int(part))
        else:
            raise UsageError(f"Неверный seed: {part!r}")
    if not seeds:
        raise UsageError("Список seed'ов пуст")
    return seeds


def config_fingerprint(*objects) -> str:
    """Короткий хеш конфигурации для индекса прогонов."""
    def normalize(obj):
        if is_dataclass(obj) and not isinstance(obj, type):
            return normalize(asdict(obj))
        if isinstance(obj, dict):
            return {str(k): normalize(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [normalize(v) for v in obj]
        if isinstance(obj, Path):
            return str(obj)
        return obj

    payload = json.dumps([normalize(o) for o in objects], sort_keys=True, ensure_ascii=False)
    return hashlib.md5(payload.encode('utf-8')).hexdigest()[:12]
