# src/errors.py
"""Иерархия исключений."""


class RedAttnError(Exception):
    """Базовое исключение проекта."""


class DimensionError(RedAttnError, ValueError):
    """Несовместимые формы тензоров."""


class FixedLengthError(DimensionError):
    """Длина последовательности не совпадает с зафиксированной матрицей W^S."""


class TokenIndexError(RedAttnError, IndexError):
    """Id токена или цель вне диапазона словаря."""


class UsageError(RedAttnError):
    """Неверное использование API или недостаточные данные."""


class ConfigError(UsageError):
    """Некорректная конфигурация."""


class CheckpointError(RedAttnError):
    """Повреждённый или несовместимый чекпоинт."""
