# src/config.py
"""Загрузка и валидация конфигурации."""

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from types import UnionType
from typing import Any, Literal, Union, get_args, get_origin, get_type_hints

import yaml

from .errors import ConfigError

SyntheticKind = Literal['uniform-random', 'markov-bigram', 'template-repetition']
TokenizerMode = Literal['char', 'word']
CorpusLayout = Literal['file', 'lines']
Schedule = Literal['auto', 'warmdown', 'static']

SYNTHETIC_KINDS = ('uniform-random', 'markov-bigram', 'template-repetition')
SCHEDULES = ('auto', 'warmdown', 'static')
MODEL_KEYS = ('d_model', 'd_attn', 'use_positional', 'depth')


@dataclass
class ModelConfig:
    input_len: int
    latent_len: int
    vocab_size: int
    d_model: int = 256
    d_attn: int = 512
    use_positional: bool = True
    encoder_depth: int = 1
    decoder_depth: int = 1
    dtype: str = 'float32'

    def validate(self):
        if self.input_len < 1:
            raise ConfigError(f"input_len должен быть >= 1, получено {self.input_len}")
        if self.latent_len < 1:
            raise ConfigError(f"latent_len должен быть >= 1, получено {self.latent_len}")
        if self.d_model < 1 or self.d_attn < 1:
            raise ConfigError("d_model и d_attn должны быть >= 1")
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size должен быть >= 2, получено {self.vocab_size}")
        if self.encoder_depth < 1 or self.decoder_depth < 1:
            raise ConfigError("Глубина энкодера и декодера должна быть >= 1")
        if self.dtype not in ('float32', 'float64'):
            raise ConfigError(f"Неподдерживаемый dtype: {self.dtype}")


@dataclass
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class TrainConfig:
    lr_start: float = 0.001
    lr_end: float = 0.0001
    warmdown_epochs: int = 5
    static_lr: bool = False
    # Длинные входы обучаются со статичным lr_end; None отключает правило
    static_lr_above: int | None = 256
    max_epochs: int = 20
    patience: int = 5
    batch_size: int = 16
    seed: int = 0
    shuffle: bool = True
    dropout: float = 0.0
    min_improvement: float = 1e-4
    adamw: AdamWConfig = field(default_factory=AdamWConfig)

    def validate(self):
        if self.lr_end > self.lr_start:
            raise ConfigError(f"lr_end ({self.lr_end}) больше lr_start ({self.lr_start})")
        if self.lr_end <= 0:
            raise ConfigError("lr_end должен быть > 0")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs должен быть >= 1")
        if self.patience < 1 or self.patience > self.max_epochs:
            raise ConfigError(f"patience должен быть в [1, max_epochs], получено {self.patience}")
        if self.batch_size < 1:
            raise ConfigError("batch_size должен быть >= 1")
        if self.warmdown_epochs < 0:
            raise ConfigError("warmdown_epochs должен быть >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout должен быть в [0, 1), получено {self.dropout}")

    def with_schedule(self, schedule: Schedule) -> 'TrainConfig':
        """Копия конфига с принудительным режимом learning rate."""
        if schedule not in SCHEDULES:
            raise ConfigError(f"Неизвестный режим learning rate: {schedule}")
        data = asdict(self)
        data['adamw'] = AdamWConfig(**data['adamw'])
        if schedule == 'static':
            data['static_lr'] = True
        elif schedule == 'warmdown':
            data['static_lr'] = False
            data['static_lr_above'] = None
        return TrainConfig(**data)


@dataclass
class SyntheticSpec:
    kind: SyntheticKind = 'template-repetition'
    vocab_size: int = 64
    length: int = 32
    sample_count: int = 5000
    seed: int = 0
    temperature: float = 1.0
    template_pool: int = 32
    template_len: int = 4
    repeat_prob: float = 0.3

    def validate(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ConfigError(f"Неизвестный тип синтетического корпуса: {self.kind}")
        if self.sample_count < 1:
            raise ConfigError("sample_count должен быть >= 1")
        if self.vocab_size < 3:
            raise ConfigError("vocab_size синтетического корпуса должен быть >= 3")
        if self.length < 1:
            raise ConfigError("length должен быть >= 1")
        if self.temperature < 0:
            raise ConfigError("temperature должна быть >= 0")
        if self.template_pool < 1 or self.template_len < 1:
            raise ConfigError("template_pool и template_len должны быть >= 1")
        if not 0.0 <= self.repeat_prob <= 1.0:
            raise ConfigError("repeat_prob должна быть в [0, 1]")


@dataclass
class CorpusSource:
    """Источник корпуса: текстовые файлы или синтетика."""
    paths: list[Path] = field(default_factory=list)
    layout: CorpusLayout = 'file'
    tokenizer: TokenizerMode = 'char'
    max_vocab: int = 128
    fraction: float = 1.0
    synthetic: SyntheticSpec | None = None
    split_ratio: float = 0.8
    split_seed: int = 0

    def validate(self):
        if not self.paths and self.synthetic is None:
            raise ConfigError("Корпус не задан: укажите paths или synthetic")
        if self.paths and self.synthetic is not None:
            raise ConfigError("Укажите либо paths, либо synthetic, но не оба")
        if self.layout not in ('file', 'lines'):
            raise ConfigError(f"Неизвестный layout корпуса: {self.layout}")
        if self.tokenizer not in ('char', 'word'):
            raise ConfigError(f"Неизвестный токенизатор: {self.tokenizer}")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError("fraction должна быть в (0, 1]")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio должна быть в (0, 1)")
        if self.max_vocab < 3:
            raise ConfigError("max_vocab должен быть >= 3")
        if self.synthetic is not None:
            self.synthetic.validate()

    def describe(self) -> str:
        if self.synthetic is not None:
            return f"synthetic:{self.synthetic.kind}"
        return ','.join(str(p) for p in self.paths)


@dataclass
class SweepSpec:
    corpus: CorpusSource = field(default_factory=lambda: CorpusSource(synthetic=SyntheticSpec()))
    input_lens: list[int] = field(default_factory=lambda: [32])
    latent_lens: list[int] = field(default_factory=lambda: [32, 24, 16, 8, 4])
    # Альтернатива latent_lens: доли L/N для каждого input_len
    latent_ratios: list[float] | None = None
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    schedules: list[str] = field(default_factory=lambda: ['auto'])
    d_model: int = 256
    d_attn: int = 512
    use_positional: bool = True
    depth: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: Path = Path('./runs')
    threads: int = 1
    save_checkpoints: bool = False

    def latent_lens_for(self, input_len: int) -> list[int]:
        """Латентные длины для конкретного input_len."""
        if self.latent_ratios is not None:
            lens = [max(1, round(r * input_len)) for r in self.latent_ratios]
        else:
            lens = list(self.latent_lens)
        # Порядок и уникальность фиксированы: по убыванию L
        return sorted(set(lens), reverse=True)

    def model_config(self, input_len: int, latent_len: int, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            input_len=input_len,
            latent_len=latent_len,
            vocab_size=vocab_size,
            d_model=self.d_model,
            d_attn=self.d_attn,
            use_positional=self.use_positional,
            encoder_depth=self.depth,
            decoder_depth=self.depth,
        )

    def validate(self):
        self.corpus.validate()
        self.train.validate()
        if not self.input_lens or any(n < 1 for n in self.input_lens):
            raise ConfigError("input_lens должен быть непустым списком положительных чисел")
        if self.latent_ratios is not None:
            if not self.latent_ratios or any(not 0.0 < r <= 1.0 for r in self.latent_ratios):
                raise ConfigError("latent_ratios должны лежать в (0, 1]")
        elif not self.latent_lens or any(l < 1 for l in self.latent_lens):
            raise ConfigError("Каждая латентная длина должна быть >= 1")
        if not self.seeds:
            raise ConfigError("Список seeds пуст")
        if not self.schedules or any(s not in SCHEDULES for s in self.schedules):
            raise ConfigError(f"schedules должны быть из {SCHEDULES}")
        if self.depth < 1:
            raise ConfigError("depth должен быть >= 1")
        if self.threads < 1:
            raise ConfigError("threads должен быть >= 1")


def load_sweep_spec(config_path: Path | None, base: SweepSpec | None = None) -> SweepSpec:
    """Загружает описание эксперимента из YAML-файла поверх base."""
    spec = base or SweepSpec()

    data: Any = {}
    if config_path is not None:
        with open(config_path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)

    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("Корень конфига должен быть объектом (mapping)")

    # corpus
    corpus_data = _section(data, 'corpus')
    if corpus_data:
        spec.corpus = _parse_corpus(corpus_data)

    # train
    train_data = _section(data, 'train')
    if train_data:
        adamw_data = _section(train_data, 'adamw')
        train_kwargs = {k: v for k, v in train_data.items() if k != 'adamw'}
        adamw = _build(AdamWConfig, adamw_data, 'train.adamw') if adamw_data else AdamWConfig()
        spec.train = _build(TrainConfig, {**train_kwargs, 'adamw': adamw}, 'train')

    # model
    model_data = _section(data, 'model')
    unknown = set(model_data) - set(MODEL_KEYS)
    if unknown:
        raise ConfigError(f"Неизвестные поля в секции 'model': {', '.join(sorted(unknown))}")
    hints = get_type_hints(SweepSpec)
    for key in MODEL_KEYS:
        if key in model_data:
            setattr(spec, key, _coerce(model_data[key], hints[key], key, 'model'))

    for key in ('input_lens', 'latent_lens', 'latent_ratios', 'seeds', 'schedules',
                'output_dir', 'threads', 'save_checkpoints'):
        if key in data:
            setattr(spec, key, _coerce(data[key], hints[key], key, 'корень'))
    if 'input_len' in data:
        spec.input_lens = [_coerce(data['input_len'], int, 'input_len', 'корень')]

    apply_env_overrides(spec)
    return spec


def apply_env_overrides(spec: SweepSpec):
    """Переменные окружения имеют приоритет над файлом."""
    env_output_dir = os.environ.get('REDATTN_OUTPUT_DIR')
    if env_output_dir:
        spec.output_dir = Path(env_output_dir)

    env_threads = os.environ.get('REDATTN_THREADS')
    if env_threads:
        try:
            threads = int(env_threads)
        except ValueError:
            raise ConfigError(f"REDATTN_THREADS должно быть целым числом: {env_threads!r}")
        if threads < 1:
            raise ConfigError("REDATTN_THREADS должно быть >= 1")
        spec.threads = min(spec.threads, threads) if spec.threads > 1 else threads


def _parse_corpus(corpus_data: dict) -> CorpusSource:
    synthetic_data = corpus_data.get('synthetic')
    if synthetic_data is not None and not isinstance(synthetic_data, dict):
        raise ConfigError("Секция 'corpus.synthetic' должна быть объектом")
    paths = corpus_data.get('paths') or []
    if isinstance(paths, str):
        paths = [paths]
    if not isinstance(paths, list):
        raise ConfigError("Поле 'corpus.paths' должно быть списком")
    kwargs = {k: v for k, v in corpus_data.items() if k not in ('synthetic', 'paths')}
    corpus = _build(CorpusSource, kwargs, 'corpus')
    corpus.paths = [Path(p) for p in paths]
    if synthetic_data is not None:
        corpus.synthetic = _build(SyntheticSpec, synthetic_data, 'corpus.synthetic')
    return corpus


def _section(data: dict, name: str) -> dict:
    value = data.get(name, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"Секция '{name}' должна быть объектом")
    return value


def _build(cls, values: dict, section: str):
    hints = get_type_hints(cls)
    unknown = set(values) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"Неизвестные поля в секции '{section}': {', '.join(sorted(unknown))}")
    kwargs = {key: _coerce(value, hints[key], key, section) for key, value in values.items()}
    return cls(**kwargs)


def _coerce(value: Any, hint: Any, key: str, section: str) -> Any:
    """Приводит значение из YAML к типу поля; иначе ConfigError с именем секции."""
    def fail():
        return ConfigError(f"Секция '{section}': поле '{key}' не может быть {value!r}")

    origin, args = get_origin(hint), get_args(hint)
    if origin in (Union, UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], key, section)
    if origin is Literal:
        if value not in args:
            raise ConfigError(f"Секция '{section}': поле '{key}' должно быть одним из {', '.join(args)}")
        return value
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"Секция '{section}': поле '{key}' должно быть списком")
        return [_coerce(item, args[0], key, section) for item in value]
    if hint is bool:
        if not isinstance(value, bool):
            raise fail()
        return value
    if hint in (int, float):
        if isinstance(value, bool):
            raise fail()
        if isinstance(value, float) and hint is int:
            if not value.is_integer():
                raise fail()
            return int(value)
        try:
            return hint(value)
        except (TypeError, ValueError):
            raise fail()
    if hint is Path:
        if not isinstance(value, (str, Path)):
            raise fail()
        return Path(value)
    if hint is str:
        if not isinstance(value, str):
            raise fail()
        return value
    if isinstance(hint, type) and not isinstance(value, hint):
        raise fail()
    return value


def dump_sweep_spec(spec: SweepSpec) -> str:
    """Сериализует спецификацию в YAML (для воспроизводимости прогона)."""
    data = asdict(spec)
    data['model'] = {key: data.pop(key) for key in MODEL_KEYS}
    data['output_dir'] = str(spec.output_dir)
    data['corpus']['paths'] = [str(p) for p in spec.corpus.paths]
    return yaml.safe_dump(data, sort_keys=True, allow_unicode=True)
