# src/train.py
"""AdamW, линейное снижение learning rate, эпохи и ранняя остановка."""

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import AdamWConfig, TrainConfig
from .data import Sample, ids_matrix
from .errors import UsageError
from .model import AutoencoderParams, forward, reconstruct, token_accuracy
from .tensor import Tape, Tensor, cross_entropy
from .utils import derive_seed, format_number

logger = logging.getLogger(__name__)

RECORD_FIELDS = ('epoch', 'lr', 'train_loss', 'val_accuracy', 'seconds')


@dataclass
class AdamWState:
    hp: AdamWConfig = field(default_factory=AdamWConfig)
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_accuracy: float
    seconds: float


@dataclass
class FitResult:
    records: list[EpochRecord]
    best_params: AutoencoderParams
    best_epoch: int
    best_accuracy: float

    @property
    def stopped_epoch(self) -> int:
        return self.records[-1].epoch if self.records else 0

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].val_accuracy if self.records else 0.0


def lr_at(epoch: int, cfg: TrainConfig, input_len: int | None = None) -> float:
    """
    Learning rate для эпохи (0 — первая эпоха).

    Линейно от lr_start до lr_end за warmdown_epochs эпох, дальше lr_end.
    Статичный lr_end при static_lr или при input_len > static_lr_above.
    """
    if epoch < 0:
        raise UsageError(f"Номер эпохи должен быть >= 0, получено {epoch}")
    static = cfg.static_lr or (
        input_len is not None and cfg.static_lr_above is not None and input_len > cfg.static_lr_above
    )
    if static or cfg.warmdown_epochs == 0 or epoch >= cfg.warmdown_epochs:
        return cfg.lr_end
    return cfg.lr_start + (epoch / cfg.warmdown_epochs) * (cfg.lr_end - cfg.lr_start)


def adamw_step(params: dict[str, Tensor], state: AdamWState, lr: float):
    """Шаг AdamW с decoupled weight decay. Градиенты не обнуляются."""
    if not params or all(p.grad is None for p in params.values()):
        raise UsageError("adamw_step: градиенты не заполнены")

    hp = state.hp
    state.step += 1
    bias1 = 1.0 - hp.beta1 ** state.step
    bias2 = 1.0 - hp.beta2 ** state.step

    for name, param in params.items():
        grad = param.grad
        if grad is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        m, v = state.m[name], state.v[name]
        m *= hp.beta1
        m += (1.0 - hp.beta1) * grad
        v *= hp.beta2
        v += (1.0 - hp.beta2) * grad * grad

        if hp.weight_decay:
            param.data *= (1.0 - lr * hp.weight_decay)
        param.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + hp.eps)


def batch_order(count: int, cfg: TrainConfig, epoch: int) -> np.ndarray:
    """Порядок выборок в эпохе: перемешивание от seed'а, производного от (seed, epoch)."""
    if not cfg.shuffle:
        return np.arange(count)
    return np.random.default_rng(derive_seed(cfg.seed, epoch)).permutation(count)


def train_epoch(
    params: AutoencoderParams,
    data: Sequence[Sample],
    cfg: TrainConfig,
    state: AdamWState,
    epoch: int = 0,
    lr: float | None = None,
) -> float:
    """Одна эпоха: цель автоэнкодера — сам вход. Возвращает средний loss по батчам."""
    if not data:
        raise UsageError("Пустой набор для обучения")
    if lr is None:
        lr = lr_at(epoch, cfg, params.config.input_len)

    ids = ids_matrix(data)
    order = batch_order(len(data), cfg, epoch)
    dropout_rng = np.random.default_rng(derive_seed(cfg.seed, epoch, 1)) if cfg.dropout > 0 else None
    named = params.named_parameters()

    losses = []
    for start in range(0, len(order), cfg.batch_size):
        batch = ids[order[start:start + cfg.batch_size]]
        with Tape() as tape:
            logits = forward(params, batch, cfg.dropout, dropout_rng)
            loss = cross_entropy(logits, batch)
            tape.backward(loss)
        adamw_step(named, state, lr)
        params.zero_grad()
        losses.append(loss.item())
        logger.debug(f"    batch {start // cfg.batch_size}: loss {loss.item():.6f}")

    return float(np.mean(losses))


def evaluate(params: AutoencoderParams, dataset: Sequence[Sample], batch_size: int = 256) -> float:
    """Средняя по выборкам token-wise точность восстановления."""
    if not dataset:
        raise UsageError("Пустой набор для оценки")
    ids = ids_matrix(dataset)
    accuracies: list[float] = []
    for start in range(0, len(ids), batch_size):
        batch = ids[start:start + batch_size]
        predicted = reconstruct(params, batch)
        accuracies.extend(token_accuracy(p, t) for p, t in zip(predicted, batch))
    # Суммирование строго в порядке выборок
    total = 0.0
    for acc in accuracies:
        total += acc
    return total / len(accuracies)


def fit(
    params: AutoencoderParams,
    train: Sequence[Sample],
    test: Sequence[Sample],
    cfg: TrainConfig,
    evaluate_fn: Callable[[AutoencoderParams, Sequence[Sample]], float] = evaluate,
    label: str = '',
) -> FitResult:
    """
    Обучает до max_epochs или пока точность на валидации не растёт patience эпох подряд.

    Возвращает записи каждой завершённой эпохи и веса лучшей эпохи.
    Эпохи в записях нумеруются с 1.
    """
    cfg.validate()
    if not train or not test:
        raise UsageError("Нужны непустые train и test")

    state = AdamWState(hp=cfg.adamw)
    records: list[EpochRecord] = []
    best_accuracy = -math.inf
    best_epoch = 0
    best_params = params.copy()
    # Отсчёт patience ведётся от последнего улучшения больше min_improvement
    reference = -math.inf
    stale = 0
    prefix = f"[{label}] " if label else ''

    for epoch in range(cfg.max_epochs):
        started = time.perf_counter()
        lr = lr_at(epoch, cfg, params.config.input_len)
        loss = train_epoch(params, train, cfg, state, epoch, lr)
        accuracy = evaluate_fn(params, test)
        record = EpochRecord(
            epoch=epoch + 1,
            lr=lr,
            train_loss=loss,
            val_accuracy=accuracy,
            seconds=time.perf_counter() - started,
        )
        records.append(record)

        marker = ''
        if accuracy > best_accuracy:
            best_accuracy = accuracy
            best_epoch = record.epoch
            best_params = params.copy()
            marker = ' ✓'
        if accuracy > reference + cfg.min_improvement:
            reference = accuracy
            stale = 0
        else:
            stale += 1
        logger.info(
            f"{prefix}epoch {record.epoch}: lr {lr:.6g}, loss {loss:.4f}, "
            f"accuracy {accuracy:.4f}{marker}"
        )
        if stale >= cfg.patience:
            logger.info(f"{prefix}  Ранняя остановка: нет улучшения {cfg.patience} эпох")
            break

    return FitResult(
        records=records,
        best_params=best_params,
        best_epoch=best_epoch,
        best_accuracy=best_accuracy,
    )


def write_records_csv(records: Sequence[EpochRecord], path: Path):
    """CSV `epoch,lr,train_loss,val_accuracy,seconds`, 6 значащих цифр."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(RECORD_FIELDS)
        for r in records:
            writer.writerow([
                r.epoch,
                format_number(r.lr),
                format_number(r.train_loss),
                format_number(r.val_accuracy),
                format_number(r.seconds),
            ])


def read_records_csv(path: Path) -> list[EpochRecord]:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return [
            EpochRecord(
                epoch=int(row['epoch']),
                lr=float(row['lr']),
                train_loss=float(row['train_loss']),
                val_accuracy=float(row['val_accuracy']),
                seconds=float(row['seconds']),
            )
            for row in csv.DictReader(f)
        ]
