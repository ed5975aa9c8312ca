# src/data.py
"""Словарь, токенизация, выборки фиксированной длины и синтетические корпуса."""

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import CorpusLayout, CorpusSource, SyntheticSpec, TokenizerMode
from .errors import ConfigError, TokenIndexError, UsageError

logger = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = '<pad>'
UNK_TOKEN = '<unk>'
RESERVED = (PAD_TOKEN, UNK_TOKEN)


@dataclass
class Vocabulary:
    """Биекция токен ↔ id; 0 = PAD, 1 = UNK."""
    mode: TokenizerMode
    tokens: list[str]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:2]) != RESERVED:
            raise UsageError("Словарь должен начинаться с <pad>, <unk>")
        self._index = {token: i for i, token in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise UsageError("Токены словаря не уникальны")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)

    def token_to_id(self, token: str) -> int:
        """Id токена текста; служебные строки вроде `<pad>` в тексте считаются неизвестными."""
        if token in RESERVED:
            return UNK_ID
        return self._index.get(token, UNK_ID)

    def encode(self, text: str) -> list[int]:
        return [self.token_to_id(t) for t in tokenize(text, self.mode)]

    def decode(self, ids: Iterable[int]) -> str:
        pieces = []
        for i in ids:
            if not 0 <= int(i) < self.size:
                raise TokenIndexError(f"id {i} вне словаря размера {self.size}")
            pieces.append(self.tokens[int(i)])
        return ''.join(pieces) if self.mode == 'char' else ' '.join(pieces)

    def to_dict(self) -> dict:
        return {'mode': self.mode, 'tokens': self.tokens}

    @classmethod
    def from_dict(cls, data: dict) -> 'Vocabulary':
        return cls(mode=data['mode'], tokens=list(data['tokens']))

    def save(self, path: Path):
        path.write_text(json.dumps(self.to_dict(), ensure_ascii=False, indent=2), encoding='utf-8')

    @classmethod
    def load(cls, path: Path) -> 'Vocabulary':
        return cls.from_dict(json.loads(path.read_text(encoding='utf-8')))


@dataclass
class Sample:
    ids: list[int]
    source: str


@dataclass
class Dataset:
    vocab: Vocabulary
    train: list[Sample]
    test: list[Sample]
    input_len: int


def tokenize(text: str, mode: TokenizerMode) -> list[str]:
    if mode == 'char':
        return list(text)
    if mode == 'word':
        return text.split()
    raise ConfigError(f"Неизвестный режим токенизации: {mode}")


def build_vocab(texts: Iterable[str], mode: TokenizerMode = 'char', max_size: int | None = None) -> Vocabulary:
    """Частые токены (до max_size − 2), равные частоты — лексикографически."""
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(tokenize(text, mode))
    for reserved in RESERVED:
        counts.pop(reserved, None)
    if not counts:
        raise UsageError("Пустой корпус: не из чего строить словарь")
    if max_size is not None and max_size < 3:
        raise UsageError(f"max_size должен быть >= 3, получено {max_size}")

    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    if max_size is not None:
        ranked = ranked[:max_size - len(RESERVED)]
    return Vocabulary(mode=mode, tokens=[*RESERVED, *(token for token, _ in ranked)])


def synthetic_vocab(vocab_size: int) -> Vocabulary:
    """Словарь синтетического корпуса: t2 … t{V-1}."""
    return Vocabulary(mode='word', tokens=[*RESERVED, *(f"t{i}" for i in range(len(RESERVED), vocab_size))])


def extract_sample(doc_ids: Sequence[int], input_len: int, source: str = '') -> Sample | None:
    """Первые N токенов документа; короткие документы пропускаются (без паддинга)."""
    if len(doc_ids) < input_len:
        return None
    return Sample(ids=[int(i) for i in doc_ids[:input_len]], source=source)


def split_train_test(samples: Sequence[Sample], ratio: float = 0.8, seed: int = 0) -> tuple[list[Sample], list[Sample]]:
    """Детерминированное перемешивание и разбиение train/test."""
    if len(samples) < 2:
        raise UsageError(f"Для разбиения нужно хотя бы 2 выборки, есть {len(samples)}")
    if not 0.0 < ratio < 1.0:
        raise UsageError(f"ratio должна быть в (0, 1), получено {ratio}")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_train = min(max(int(round(ratio * len(samples))), 1), len(samples) - 1)
    train = [samples[i] for i in order[:n_train]]
    test = [samples[i] for i in order[n_train:]]
    return train, test


def bigram_logits(spec: SyntheticSpec) -> np.ndarray:
    """Таблица переходов markov-bigram (строка — предыдущий токен без резерва)."""
    rng = np.random.default_rng(spec.seed)
    n = spec.vocab_size - len(RESERVED)
    return rng.normal(size=(n, n))


def gen_synthetic(spec: SyntheticSpec) -> list[Sample]:
    """Синтетический корпус; id лежат в [2, V), детерминирован по seed."""
    spec.validate()
    offset = len(RESERVED)
    n_tokens = spec.vocab_size - offset
    shape = (spec.sample_count, spec.length)

    if spec.kind == 'uniform-random':
        rng = np.random.default_rng(spec.seed)
        matrix = rng.integers(offset, spec.vocab_size, size=shape)

    elif spec.kind == 'markov-bigram':
        logits = bigram_logits(spec)
        # Отдельный поток для выборки, таблица переходов не зависит от числа выборок
        rng = np.random.default_rng([spec.seed, 1])
        if spec.temperature == 0:
            probs = None
        else:
            scaled = logits / spec.temperature
            scaled -= scaled.max(axis=1, keepdims=True)
            probs = np.exp(scaled)
            probs /= probs.sum(axis=1, keepdims=True)
        matrix = np.empty(shape, dtype=np.int64)
        matrix[:, 0] = rng.integers(0, n_tokens, size=spec.sample_count)
        for t in range(1, spec.length):
            prev = matrix[:, t - 1]
            if probs is None:
                matrix[:, t] = np.argmax(logits[prev], axis=1)
            else:
                cumulative = probs[prev].cumsum(axis=1)
                draws = rng.random(spec.sample_count)[:, None]
                matrix[:, t] = np.minimum((cumulative < draws).sum(axis=1), n_tokens - 1)
        matrix += offset

    else:
        rng = np.random.default_rng(spec.seed)
        pool = rng.integers(offset, spec.vocab_size, size=(spec.template_pool, spec.template_len))
        matrix = np.empty(shape, dtype=np.int64)
        for row in range(spec.sample_count):
            tokens: list[int] = []
            phrase = None
            while len(tokens) < spec.length:
                if phrase is None or rng.random() >= spec.repeat_prob:
                    phrase = pool[rng.integers(spec.template_pool)]
                tokens.extend(phrase.tolist())
            matrix[row] = tokens[:spec.length]

    return [
        Sample(ids=[int(i) for i in matrix[row]], source=f"synthetic:{spec.kind}:{row}")
        for row in range(spec.sample_count)
    ]


def _collect_files(paths: Sequence[Path]) -> list[Path]:
    files: list[Path] = []
    for path in paths:
        if path.is_dir():
            files.extend(sorted(path.glob('*.txt')))
        elif path.exists():
            files.append(path)
        else:
            raise UsageError(f"Файл корпуса не найден: {path}")
    return files


def load_corpus(paths: Sequence[Path], layout: CorpusLayout = 'file', fraction: float = 1.0) -> list[tuple[str, str]]:
    """Документы (source, text) в порядке файлов; берётся первая доля fraction."""
    documents: list[tuple[str, str]] = []
    for path in _collect_files(paths):
        try:
            text = path.read_text(encoding='utf-8')
        except UnicodeDecodeError as e:
            raise UsageError(f"Файл корпуса {path} не в UTF-8: байт {e.start}")
        if layout == 'file':
            documents.append((str(path), text))
        elif layout == 'lines':
            for lineno, line in enumerate(text.splitlines(), start=1):
                if line.strip():
                    documents.append((f"{path}:{lineno}", line))
        else:
            raise ConfigError(f"Неизвестный layout корпуса: {layout}")

    if not documents:
        raise UsageError("Корпус пуст: нет ни одного документа")
    keep = max(1, math.floor(len(documents) * fraction))
    return documents[:keep]


def build_dataset(corpus: CorpusSource, input_len: int) -> Dataset:
    """Корпус → словарь → выборки длины N → train/test."""
    corpus.validate()
    if corpus.synthetic is not None:
        spec = replace(corpus.synthetic, length=input_len)
        samples = gen_synthetic(spec)
        vocab = synthetic_vocab(spec.vocab_size)
    else:
        documents = load_corpus(corpus.paths, corpus.layout, corpus.fraction)
        vocab = build_vocab((text for _, text in documents), corpus.tokenizer, corpus.max_vocab)
        samples = []
        skipped = 0
        for source, text in documents:
            sample = extract_sample(vocab.encode(text), input_len, source)
            if sample is None:
                skipped += 1
            else:
                samples.append(sample)
        logger.info(f"  Документов: {len(documents)}, выборок: {len(samples)}, короче N={input_len}: {skipped}")

    train, test = split_train_test(samples, corpus.split_ratio, corpus.split_seed)
    return Dataset(vocab=vocab, train=train, test=test, input_len=input_len)


def ids_matrix(samples: Sequence[Sample]) -> np.ndarray:
    return np.asarray([s.ids for s in samples], dtype=np.int64)


def save_samples_csv(samples: Sequence[Sample], path: Path):
    """Одна выборка на строку: source, затем id."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        for sample in samples:
            writer.writerow([sample.source, *sample.ids])


def load_samples_csv(path: Path) -> list[Sample]:
    samples = []
    with open(path, 'r', encoding='utf-8', newline='') as f:
        for row in csv.reader(f):
            if row:
                samples.append(Sample(ids=[int(v) for v in row[1:]], source=row[0]))
    return samples
