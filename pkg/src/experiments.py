# src/experiments.py
"""Серии экспериментов: перебор латентных длин и seed'ов, сводки и графики."""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .charts import Chart, Series, write_chart
from .checkpoint import save_checkpoint
from .config import CorpusSource, SweepSpec, SyntheticSpec, TrainConfig, dump_sweep_spec
from .data import Dataset, build_dataset
from .database import CellRecord, RunIndex
from .errors import UsageError
from .model import init_model
from .train import EpochRecord, fit, read_records_csv, write_records_csv
from .utils import cell_slug, config_fingerprint, format_number

logger = logging.getLogger(__name__)

RESULT_FIELDS = (
    'input_len', 'latent_len', 'reduction_ratio', 'seed', 'schedule',
    'best_accuracy', 'final_accuracy', 'best_epoch', 'stopped_epoch',
)
TRAIL_FIELDS = ('input_len', 'latent_len', 'seed', 'schedule', 'epoch', 'lr', 'train_loss', 'val_accuracy')
SUMMARY_FIELDS = (
    'input_len', 'latent_len', 'reduction_ratio', 'schedule', 'seeds',
    'mean', 'std', 'min', 'max', 'stderr',
)
PRESETS = ('default', 'identity', 'variance', 'lr-remedy', 'ratio')
CHART_KINDS = ('epochs', 'ratio', 'band', 'range')


@dataclass(frozen=True)
class CellKey:
    input_len: int
    latent_len: int
    seed: int
    schedule: str

    @property
    def label(self) -> str:
        suffix = '' if self.schedule == 'auto' else f" {self.schedule}"
        return f"N={self.input_len} L={self.latent_len} seed={self.seed}{suffix}"

    @property
    def slug(self) -> str:
        return cell_slug(self.input_len, self.latent_len, self.seed, self.schedule)


@dataclass
class CellResult:
    key: CellKey
    records: list[EpochRecord]

    @property
    def reduction_ratio(self) -> float:
        return self.key.latent_len / self.key.input_len

    @property
    def best_accuracy(self) -> float:
        return max(r.val_accuracy for r in self.records)

    @property
    def best_epoch(self) -> int:
        best = self.records[0]
        for r in self.records[1:]:
            if r.val_accuracy > best.val_accuracy:
                best = r
        return best.epoch

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].val_accuracy

    @property
    def stopped_epoch(self) -> int:
        return self.records[-1].epoch


@dataclass
class SweepResult:
    cells: list[CellResult] = field(default_factory=list)
    failures: list[tuple[CellKey, Exception]] = field(default_factory=list)


@dataclass
class GroupStats:
    input_len: int
    latent_len: int
    schedule: str
    seeds: int
    mean: float
    std: float
    min: float
    max: float
    stderr: float

    @property
    def reduction_ratio(self) -> float:
        return self.latent_len / self.input_len


@dataclass
class BandPoint:
    input_len: int
    latent_len: int
    schedule: str
    epoch: int
    mean: float
    stderr: float
    min: float
    max: float
    seeds: int


@dataclass
class Summary:
    groups: list[GroupStats]
    bands: list[BandPoint]


def desk_train_config(**overrides) -> TrainConfig:
    """
    Обучение для настольных пресетов. Короткие входы застревают при lr 1e-4,
    поэтому скорость в 10 раз выше: 3e-3 с линейным снижением до 1e-3.
    """
    values = dict(lr_start=0.003, lr_end=0.001, warmdown_epochs=5, max_epochs=30, patience=8)
    values.update(overrides)
    return TrainConfig(**values)


# Пары (N, L) с той же долей L/N = 0.5625, что и 128 → 72
VARIANCE_INPUT_LENS = [16, 32, 64]
VARIANCE_RATIO = 0.5625


def preset_spec(name: str) -> SweepSpec:
    """Готовые конфигурации экспериментов в настольном масштабе."""
    if name == 'default':
        return SweepSpec(train=desk_train_config())
    if name == 'identity':
        return SweepSpec(
            corpus=CorpusSource(synthetic=SyntheticSpec(kind='uniform-random', vocab_size=50, sample_count=2000)),
            input_lens=[16],
            latent_lens=[16],
            seeds=[0],
            train=desk_train_config(),
        )
    # Исследование разброса идёт на исходных lr (1e-3 → 1e-4), как в эксперименте со статичным 1e-4
    if name == 'variance':
        return SweepSpec(input_lens=list(VARIANCE_INPUT_LENS), latent_lens=[], latent_ratios=[VARIANCE_RATIO],
                         seeds=list(range(10)), schedules=['static'])
    if name == 'lr-remedy':
        return SweepSpec(input_lens=list(VARIANCE_INPUT_LENS), latent_lens=[], latent_ratios=[VARIANCE_RATIO],
                         seeds=list(range(10)), schedules=['static', 'warmdown'])
    if name == 'ratio':
        return SweepSpec(input_lens=[16, 32, 64], latent_lens=[], latent_ratios=[1.0, 0.75, 0.5, 0.25, 0.125],
                         train=desk_train_config())
    raise UsageError(f"Неизвестный пресет: {name}. Доступны: {', '.join(PRESETS)}")


def _cell_keys(spec: SweepSpec) -> list[CellKey]:
    keys = []
    for input_len in spec.input_lens:
        for latent_len in spec.latent_lens_for(input_len):
            for seed in spec.seeds:
                for schedule in spec.schedules:
                    keys.append(CellKey(input_len, latent_len, seed, schedule))
    return keys


def _sort_key(spec: SweepSpec):
    order = {s: i for i, s in enumerate(spec.schedules)}
    return lambda cell: (cell.key.input_len, -cell.key.latent_len, cell.key.seed, order.get(cell.key.schedule, 0))


def _cell_train_config(spec: SweepSpec, key: CellKey) -> TrainConfig:
    return replace(spec.train.with_schedule(key.schedule), seed=key.seed)  # type: ignore[arg-type]


def _check_dataset(dataset: Dataset, spec: SweepSpec):
    shortfall = spec.train.batch_size - len(dataset.train)
    if shortfall > 0:
        raise UsageError(
            f"Корпус слишком мал для N={dataset.input_len}: {len(dataset.train)} обучающих выборок, "
            f"нужно не меньше batch_size={spec.train.batch_size} (не хватает {shortfall})"
        )
    if not dataset.test:
        raise UsageError(f"Корпус слишком мал для N={dataset.input_len}: нет выборок для валидации")


def run_cell(spec: SweepSpec, key: CellKey, dataset: Dataset, cells_dir: Path | None = None) -> CellResult:
    """Обучает одну модель для ячейки (N, L, seed, schedule)."""
    model_config = spec.model_config(key.input_len, key.latent_len, dataset.vocab.size)
    train_config = _cell_train_config(spec, key)
    params = init_model(model_config, key.seed)
    result = fit(params, dataset.train, dataset.test, train_config, label=key.label)
    if cells_dir is not None:
        write_records_csv(result.records, cells_dir / f"{key.slug}.csv")
        if spec.save_checkpoints:
            save_checkpoint(cells_dir / f"{key.slug}.ckpt", result.best_params, key.seed,
                            extra={'best_epoch': str(result.best_epoch)})
    return CellResult(key=key, records=result.records)


def run_sweep(spec: SweepSpec, index: RunIndex | None = None, force: bool = False) -> SweepResult:
    """
    Обучает по модели на каждую ячейку. Ячейки независимы и выполняются
    параллельно (spec.threads); результат упорядочен так же, как при
    последовательном запуске.

    С index уже завершённые ячейки той же конфигурации не пересчитываются.
    """
    spec.validate()
    cells_dir = spec.output_dir / 'cells'
    cells_dir.mkdir(parents=True, exist_ok=True)

    datasets: dict[int, Dataset] = {}
    for input_len in spec.input_lens:
        logger.info(f"[sweep] Корпус {spec.corpus.describe()}, N={input_len}")
        dataset = build_dataset(spec.corpus, input_len)
        _check_dataset(dataset, spec)
        datasets[input_len] = dataset

    result = SweepResult()
    pending: list[tuple[CellKey, str]] = []
    for key in _cell_keys(spec):
        dataset = datasets[key.input_len]
        fingerprint = config_fingerprint(
            spec.model_config(key.input_len, key.latent_len, dataset.vocab.size),
            _cell_train_config(spec, key),
            spec.corpus,
        )
        if index is not None and not force:
            existing = index.get_cell(key.input_len, key.latent_len, key.seed, key.schedule, fingerprint)
            if existing and Path(existing.trail_path).exists():
                logger.info(f"[sweep] {key.label}: уже посчитана, пропуск")
                result.cells.append(CellResult(key=key, records=read_records_csv(Path(existing.trail_path))))
                continue
        pending.append((key, fingerprint))

    logger.info(f"[sweep] Ячеек: {len(pending) + len(result.cells)}, к обучению: {len(pending)}, потоков: {spec.threads}")

    with ThreadPoolExecutor(max_workers=spec.threads) as executor:
        futures = {
            executor.submit(run_cell, spec, key, datasets[key.input_len], cells_dir): (key, fingerprint)
            for key, fingerprint in pending
        }
        for future in as_completed(futures):
            key, fingerprint = futures[future]
            try:
                cell = future.result()
            except Exception as e:
                logger.error(f"[sweep] {key.label}: ошибка: {e}")
                result.failures.append((key, e))
                continue
            result.cells.append(cell)
            logger.info(f"  ✓ {key.label}: best {cell.best_accuracy:.4f} (epoch {cell.best_epoch})")
            if index is not None:
                index.add_cell(CellRecord(
                    input_len=key.input_len,
                    latent_len=key.latent_len,
                    seed=key.seed,
                    schedule=key.schedule,
                    fingerprint=fingerprint,
                    best_accuracy=cell.best_accuracy,
                    stopped_epoch=cell.stopped_epoch,
                    trail_path=str(cells_dir / f"{key.slug}.csv"),
                ))

    result.cells.sort(key=_sort_key(spec))
    result.failures.sort(key=lambda item: (item[0].input_len, -item[0].latent_len, item[0].seed))
    return result


def write_sweep_csv(result: SweepResult, out_dir: Path) -> tuple[Path, Path]:
    """results.csv и trails.csv; без времени выполнения, поэтому побайтно воспроизводимы."""
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / 'results.csv'
    trails_path = out_dir / 'trails.csv'

    with open(results_path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(RESULT_FIELDS)
        for cell in result.cells:
            writer.writerow([
                cell.key.input_len,
                cell.key.latent_len,
                format_number(cell.reduction_ratio),
                cell.key.seed,
                cell.key.schedule,
                format_number(cell.best_accuracy),
                format_number(cell.final_accuracy),
                cell.best_epoch,
                cell.stopped_epoch,
            ])

    with open(trails_path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(TRAIL_FIELDS)
        for cell in result.cells:
            for r in cell.records:
                writer.writerow([
                    cell.key.input_len,
                    cell.key.latent_len,
                    cell.key.seed,
                    cell.key.schedule,
                    r.epoch,
                    format_number(r.lr),
                    format_number(r.train_loss),
                    format_number(r.val_accuracy),
                ])
    return results_path, trails_path


def write_spec(spec: SweepSpec, out_dir: Path) -> Path:
    path = out_dir / 'spec.yaml'
    path.write_text(dump_sweep_spec(spec), encoding='utf-8')
    return path


def load_sweep_result(out_dir: Path) -> SweepResult:
    """Восстанавливает результат из trails.csv (CSV — источник истины)."""
    trails_path = out_dir / 'trails.csv'
    if not trails_path.exists():
        raise UsageError(f"Не найден {trails_path}: сначала запустите sweep")

    cells: dict[CellKey, list[EpochRecord]] = {}
    with open(trails_path, 'r', encoding='utf-8', newline='') as f:
        for row in csv.DictReader(f):
            key = CellKey(int(row['input_len']), int(row['latent_len']), int(row['seed']), row['schedule'])
            cells.setdefault(key, []).append(EpochRecord(
                epoch=int(row['epoch']),
                lr=float(row['lr']),
                train_loss=float(row['train_loss']),
                val_accuracy=float(row['val_accuracy']),
                seconds=0.0,
            ))
    if not cells:
        raise UsageError(f"{trails_path} не содержит ни одной эпохи")
    # Порядок файла сохраняется: он уже отсортирован при записи
    return SweepResult(cells=[CellResult(key=k, records=v) for k, v in cells.items()])


def _stats(values: list[float]) -> tuple[float, float, float]:
    """(mean, выборочное std, stderr); для одного значения std = 0."""
    array = np.asarray(values, dtype=np.float64)
    mean = float(np.mean(array))
    if array.size < 2:
        return mean, 0.0, 0.0
    std = float(np.std(array, ddof=1))
    return mean, std, std / math.sqrt(array.size)


def summarize(result: SweepResult) -> Summary:
    """Статистика по seed'ам: по лучшей точности и по каждой эпохе."""
    if not result.cells:
        raise UsageError("Нет результатов для сводки")

    grouped: dict[tuple[int, int, str], list[CellResult]] = {}
    for cell in result.cells:
        grouped.setdefault((cell.key.input_len, cell.key.latent_len, cell.key.schedule), []).append(cell)

    groups: list[GroupStats] = []
    bands: list[BandPoint] = []
    for (input_len, latent_len, schedule), cells in grouped.items():
        best = [c.best_accuracy for c in cells]
        mean, std, stderr = _stats(best)
        groups.append(GroupStats(
            input_len=input_len,
            latent_len=latent_len,
            schedule=schedule,
            seeds=len(cells),
            mean=mean,
            std=std,
            min=min(best),
            max=max(best),
            stderr=stderr,
        ))

        # В полосе эпохи участвуют только seed'ы, дошедшие до неё
        max_epoch = max(c.stopped_epoch for c in cells)
        for epoch in range(1, max_epoch + 1):
            values = [r.val_accuracy for c in cells for r in c.records if r.epoch == epoch]
            if not values:
                continue
            epoch_mean, _, epoch_stderr = _stats(values)
            bands.append(BandPoint(
                input_len=input_len,
                latent_len=latent_len,
                schedule=schedule,
                epoch=epoch,
                mean=epoch_mean,
                stderr=epoch_stderr,
                min=min(values),
                max=max(values),
                seeds=len(values),
            ))

    return Summary(groups=groups, bands=bands)


def write_summary_csv(summary: Summary, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(SUMMARY_FIELDS)
        for g in summary.groups:
            writer.writerow([
                g.input_len,
                g.latent_len,
                format_number(g.reduction_ratio),
                g.schedule,
                g.seeds,
                format_number(g.mean),
                format_number(g.std),
                format_number(g.min),
                format_number(g.max),
                format_number(g.stderr),
            ])
    return path


def _schedule_suffix(schedule: str) -> str:
    return '' if schedule == 'auto' else f" ({schedule})"


def render_charts(result: SweepResult, out_dir: Path, kinds: tuple[str, ...] = CHART_KINDS) -> list[Path]:
    """
    SVG-графики:
        epochs — точность по эпохам для каждого L (среднее по seed'ам);
        ratio  — лучшая точность от доли L/N, по серии на N;
        band   — среднее ± стандартная ошибка по эпохам для каждой ячейки (N, L);
        range  — размах min..max по seed'ам на каждой эпохе.
    """
    summary = summarize(result)
    written: list[Path] = []

    input_lens = sorted({g.input_len for g in summary.groups})
    schedules = list(dict.fromkeys(g.schedule for g in summary.groups))

    if 'epochs' in kinds:
        for input_len in input_lens:
            for schedule in schedules:
                series = []
                latent_lens = sorted({b.latent_len for b in summary.bands
                                      if b.input_len == input_len and b.schedule == schedule}, reverse=True)
                for latent_len in latent_lens:
                    points = [(float(b.epoch), b.mean) for b in summary.bands
                              if b.input_len == input_len and b.latent_len == latent_len and b.schedule == schedule]
                    series.append(Series(label=f"{input_len}to{latent_len}", points=points))
                if not series:
                    continue
                name = f"accuracy_vs_epoch_n{input_len}" + ('' if schedule == 'auto' else f"_{schedule}")
                written.append(write_chart(Chart(
                    title=f"Точность восстановления по эпохам, N={input_len}{_schedule_suffix(schedule)}",
                    x_label='Эпоха',
                    y_label='Точность',
                    series=series,
                ), out_dir / f"{name}.svg"))

    if 'ratio' in kinds:
        series = []
        for input_len in input_lens:
            for schedule in schedules:
                points = [(g.reduction_ratio, g.mean) for g in summary.groups
                          if g.input_len == input_len and g.schedule == schedule]
                if points:
                    series.append(Series(label=f"N={input_len}{_schedule_suffix(schedule)}", points=points))
        written.append(write_chart(Chart(
            title='Лучшая точность от доли латентных токенов',
            x_label='L / N',
            y_label='Точность',
            series=series,
        ), out_dir / 'accuracy_vs_ratio.svg'))

    if 'band' in kinds:
        series = []
        for g in summary.groups:
            cell_bands = [b for b in summary.bands
                          if b.input_len == g.input_len and b.latent_len == g.latent_len and b.schedule == g.schedule]
            series.append(Series(
                label=f"{g.input_len}to{g.latent_len}" + ('*' if g.schedule == 'warmdown' else ''),
                points=[(float(b.epoch), b.mean) for b in cell_bands],
                band=[b.stderr for b in cell_bands],
            ))
        written.append(write_chart(Chart(
            title='Разброс точности по seed\'ам (среднее ± ст. ошибка)',
            x_label='Эпоха',
            y_label='Точность',
            series=series,
        ), out_dir / 'variance_band.svg'))

    if 'range' in kinds:
        series = []
        for g in summary.groups:
            cell_bands = [b for b in summary.bands
                          if b.input_len == g.input_len and b.latent_len == g.latent_len and b.schedule == g.schedule]
            series.append(Series(
                label=f"{g.input_len}to{g.latent_len}" + ('*' if g.schedule == 'warmdown' else ''),
                points=[(float(b.epoch), b.mean) for b in cell_bands],
                ranges=[(b.min, b.max) for b in cell_bands],
            ))
        written.append(write_chart(Chart(
            title='Размах точности по seed\'ам (min..max по эпохам)',
            x_label='Эпоха',
            y_label='Точность',
            series=series,
        ), out_dir / 'variance_range.svg'))

    return written
