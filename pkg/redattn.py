#!/usr/bin/env python3
# redattn.py
"""CLI для обучения автоэнкодера с редуцирующим attention и серий экспериментов."""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from src.checkpoint import describe_checkpoint, save_checkpoint
from src.config import (
    SYNTHETIC_KINDS,
    CorpusSource,
    SweepSpec,
    SyntheticSpec,
    apply_env_overrides,
    load_sweep_spec,
)
from src.data import (
    build_dataset,
    build_vocab,
    extract_sample,
    gen_synthetic,
    load_corpus,
    save_samples_csv,
    synthetic_vocab,
)
from src.database import RunIndex
from src.errors import RedAttnError, UsageError
from src.experiments import (
    PRESETS,
    load_sweep_result,
    preset_spec,
    render_charts,
    run_sweep,
    summarize,
    write_spec,
    write_summary_csv,
    write_sweep_csv,
)
from src.model import init_model, parameter_count
from src.train import fit, write_records_csv
from src.utils import format_number, parse_seeds

logger = logging.getLogger('redattn')


class _Parser(argparse.ArgumentParser):
    """Ошибки аргументов — одной строкой."""

    def error(self, message):
        print(f"Ошибка: {message}", file=sys.stderr)
        sys.exit(2)


def add_corpus_args(parser: argparse.ArgumentParser):
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--corpus', type=Path, action='append', metavar='PATH',
                       help='Текстовый файл или каталог с *.txt (можно несколько)')
    group.add_argument('--synthetic', choices=SYNTHETIC_KINDS, help='Синтетический корпус')
    parser.add_argument('--layout', choices=('file', 'lines'), help='Документ = файл или строка')
    parser.add_argument('--tokenizer', choices=('char', 'word'), help='Токенизатор (по умолчанию char)')
    parser.add_argument('--fraction', type=float, help='Доля первых документов корпуса')
    parser.add_argument('--vocab-size', type=int, help='Размер словаря')
    parser.add_argument('--samples', type=int, help='Число синтетических выборок')
    parser.add_argument('--data-seed', type=int, help='Seed синтетики и разбиения train/test')


def add_run_args(parser: argparse.ArgumentParser):
    add_corpus_args(parser)
    parser.add_argument('-c', '--config', type=Path, help='YAML с описанием эксперимента')
    parser.add_argument('--input-len', type=int, action='append', help='Длина входа N')
    parser.add_argument('--latent-len', type=int, action='append', help='Латентная длина L (можно несколько)')
    parser.add_argument('--seeds', help='Seed\'ы: "0,1,2" или "0-9"')
    parser.add_argument('--epochs', type=int, help='Максимум эпох')
    parser.add_argument('--batch-size', type=int, help='Размер батча')
    parser.add_argument('--lr-start', type=float, help='Начальный learning rate')
    parser.add_argument('--lr-end', type=float, help='Конечный learning rate')
    parser.add_argument('--static-lr', action='store_true', help='Статичный learning rate = lr-end')
    parser.add_argument('--patience', type=int, help='Patience ранней остановки')
    parser.add_argument('--dropout', type=float, help='Dropout (по умолчанию 0)')
    parser.add_argument('--no-positional', action='store_true', help='Без позиционных эмбеддингов')
    parser.add_argument('--depth', type=int, help='Число блоков в энкодере и декодере')
    parser.add_argument('--d-model', type=int, help='Ширина эмбеддинга')
    parser.add_argument('--d-attn', type=int, help='Ширина attention')
    parser.add_argument('--out', type=Path, help='Каталог результатов')


def build_spec(args: argparse.Namespace, base: SweepSpec | None = None) -> SweepSpec:
    """Пресет → YAML → флаги командной строки."""
    spec = load_sweep_spec(args.config, base or SweepSpec())

    if args.corpus:
        spec.corpus = CorpusSource(paths=list(args.corpus), split_ratio=spec.corpus.split_ratio)
    elif args.synthetic:
        current = spec.corpus.synthetic or SyntheticSpec()
        spec.corpus = CorpusSource(synthetic=replace(current, kind=args.synthetic), split_ratio=spec.corpus.split_ratio)

    corpus = spec.corpus
    if args.layout:
        corpus.layout = args.layout
    if args.tokenizer:
        corpus.tokenizer = args.tokenizer
    if args.fraction is not None:
        corpus.fraction = args.fraction
    if args.data_seed is not None:
        corpus.split_seed = args.data_seed
        if corpus.synthetic is not None:
            corpus.synthetic.seed = args.data_seed
    if args.vocab_size is not None:
        if corpus.synthetic is not None:
            corpus.synthetic.vocab_size = args.vocab_size
        else:
            corpus.max_vocab = args.vocab_size
    if args.samples is not None:
        if corpus.synthetic is None:
            raise UsageError("--samples применим только к синтетическому корпусу")
        corpus.synthetic.sample_count = args.samples

    if args.input_len:
        spec.input_lens = list(args.input_len)
    if args.latent_len:
        spec.latent_lens = list(args.latent_len)
        spec.latent_ratios = None
    latent_ratio = getattr(args, 'latent_ratio', None)
    if latent_ratio:
        if args.latent_len:
            raise UsageError("Укажите либо --latent-len, либо --latent-ratio")
        spec.latent_ratios = list(latent_ratio)
    if args.seeds:
        spec.seeds = parse_seeds(args.seeds)

    train = spec.train
    if args.epochs is not None:
        train.max_epochs = args.epochs
        train.patience = min(train.patience, args.epochs)
    if args.batch_size is not None:
        train.batch_size = args.batch_size
    if args.lr_start is not None:
        train.lr_start = args.lr_start
    if args.lr_end is not None:
        train.lr_end = args.lr_end
    if args.static_lr:
        train.static_lr = True
    if args.patience is not None:
        train.patience = args.patience
    if args.dropout is not None:
        train.dropout = args.dropout

    if args.no_positional:
        spec.use_positional = False
    if args.depth is not None:
        spec.depth = args.depth
    if args.d_model is not None:
        spec.d_model = args.d_model
    if args.d_attn is not None:
        spec.d_attn = args.d_attn
    if args.out is not None:
        spec.output_dir = args.out

    threads = getattr(args, 'threads', None)
    if threads is not None:
        spec.threads = threads
    if getattr(args, 'save_checkpoints', False):
        spec.save_checkpoints = True
    apply_env_overrides(spec)
    spec.validate()
    return spec


def cmd_train(args: argparse.Namespace):
    """Один прогон: одна пара (N, L) и один seed."""
    spec = build_spec(args, SweepSpec(seeds=[0], latent_lens=[16]))
    if len(spec.input_lens) != 1 or len(spec.latent_lens_for(spec.input_lens[0])) != 1:
        raise UsageError("train принимает ровно один --input-len и один --latent-len")
    if len(spec.seeds) != 1:
        raise UsageError(f"train принимает ровно один seed, получено {len(spec.seeds)}; для серии используйте sweep")
    input_len = spec.input_lens[0]
    latent_len = spec.latent_lens_for(input_len)[0]
    seed = spec.seeds[0]

    logger.info(f"[train] Корпус {spec.corpus.describe()}, N={input_len}, L={latent_len}, seed={seed}")
    dataset = build_dataset(spec.corpus, input_len)
    logger.info(f"  Словарь: {dataset.vocab.size}, train: {len(dataset.train)}, test: {len(dataset.test)}")

    model_config = spec.model_config(input_len, latent_len, dataset.vocab.size)
    params = init_model(model_config, seed)
    logger.info(f"  Параметров: {parameter_count(params)}")

    train_config = replace(spec.train, seed=seed)
    result = fit(params, dataset.train, dataset.test, train_config, label=f"N={input_len} L={latent_len}")

    out_dir = spec.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    write_records_csv(result.records, out_dir / 'run.csv')
    save_checkpoint(out_dir / 'best.ckpt', result.best_params, seed, extra={'best_epoch': str(result.best_epoch)})
    dataset.vocab.save(out_dir / 'vocab.json')
    logger.info(
        f"  ✓ Лучшая точность {format_number(result.best_accuracy)} на эпохе {result.best_epoch}, "
        f"остановка на эпохе {result.stopped_epoch}"
    )
    logger.info(f"  Результаты: {out_dir}")


def cmd_sweep(args: argparse.Namespace):
    base = preset_spec(args.preset)
    spec = build_spec(args, base)
    out_dir = spec.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    write_spec(spec, out_dir)

    with RunIndex(out_dir / 'index.db') as index:
        result = run_sweep(spec, index=index, force=args.force)

    if result.cells:
        results_path, _ = write_sweep_csv(result, out_dir)
        write_summary_csv(summarize(result), out_dir / 'summary.csv')
        if not args.no_charts:
            render_charts(result, out_dir)
        print_summary(result)
        logger.info(f"\nРезультаты: {results_path}")

    if result.failures:
        logger.error(f"\nЗавершено с ошибками: {len(result.failures)}")
        for key, error in result.failures:
            logger.error(f"  - {key.label}: {error}")
        sys.exit(1)


def cmd_report(args: argparse.Namespace):
    result = load_sweep_result(args.out)
    summary_path = write_summary_csv(summarize(result), args.out / 'summary.csv')
    charts = [] if args.no_charts else render_charts(result, args.out)
    print_summary(result)
    logger.info(f"\nСводка: {summary_path}")
    for path in charts:
        logger.info(f"  {path}")


def print_summary(result):
    summary = summarize(result)
    logger.info(f"\n{'N':>5} {'L':>5} {'L/N':>7} {'schedule':>9} {'seeds':>5} {'mean':>8} {'std':>8} {'min':>8} {'max':>8}")
    for g in summary.groups:
        logger.info(
            f"{g.input_len:>5} {g.latent_len:>5} {g.reduction_ratio:>7.3f} {g.schedule:>9} {g.seeds:>5} "
            f"{g.mean:>8.4f} {g.std:>8.4f} {g.min:>8.4f} {g.max:>8.4f}"
        )


def cmd_gen_data(args: argparse.Namespace):
    """Выборки корпуса в CSV (аудит) и словарь рядом в JSON."""
    if args.corpus:
        documents = load_corpus(args.corpus, args.layout or 'file', args.fraction or 1.0)
        vocab = build_vocab((text for _, text in documents), args.tokenizer or 'char', args.vocab_size or 128)
        samples = []
        for source, text in documents:
            sample = extract_sample(vocab.encode(text), args.input_len, source)
            if sample is not None:
                samples.append(sample)
    else:
        spec = SyntheticSpec(
            kind=args.synthetic or 'template-repetition',
            vocab_size=args.vocab_size or 64,
            length=args.input_len,
            sample_count=args.samples or 5000,
            seed=args.data_seed or 0,
        )
        if args.temperature is not None:
            spec.temperature = args.temperature
        samples = gen_synthetic(spec)
        vocab = synthetic_vocab(spec.vocab_size)

    save_samples_csv(samples, args.out)
    vocab_path = args.out.with_suffix('.vocab.json')
    vocab.save(vocab_path)
    logger.info(f"  ✓ Выборок: {len(samples)}, словарь: {vocab.size} → {args.out}, {vocab_path}")


def cmd_inspect_ckpt(args: argparse.Namespace):
    print(describe_checkpoint(args.path))


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        description='Автоэнкодер с редуцирующим scaled dot-product attention',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='''
Примеры:
  %(prog)s train --synthetic template-repetition --input-len 32 --latent-len 16
  %(prog)s sweep --preset default --out runs/default
  %(prog)s sweep --preset lr-remedy --out runs/lr --seeds 0-9
  %(prog)s report --out runs/default
  %(prog)s gen-data --synthetic markov-bigram --input-len 32 --out data/bigram.csv
  %(prog)s inspect-ckpt runs/train/best.ckpt
        '''
    )
    parser.add_argument('-v', '--verbose', action='store_true', help='Подробный вывод')
    parser.add_argument('-q', '--quiet', action='store_true', help='Только ошибки и предупреждения')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)

    train = sub.add_parser('train', help='Один прогон обучения')
    add_run_args(train)
    train.set_defaults(func=cmd_train)

    sweep = sub.add_parser('sweep', help='Серия прогонов по L и seed\'ам')
    add_run_args(sweep)
    sweep.add_argument('--preset', choices=PRESETS, default='default', help='Готовая конфигурация')
    sweep.add_argument('--latent-ratio', type=float, action='append', help='Доля L/N вместо --latent-len')
    sweep.add_argument('--threads', type=int, help='Параллельных ячеек (ограничивается REDATTN_THREADS)')
    sweep.add_argument('--force', action='store_true', help='Пересчитать уже завершённые ячейки')
    sweep.add_argument('--save-checkpoints', action='store_true', help='Сохранять лучший чекпоинт каждой ячейки')
    sweep.add_argument('--no-charts', action='store_true', help='Не рисовать SVG')
    sweep.set_defaults(func=cmd_sweep)

    report = sub.add_parser('report', help='Сводка и графики по результатам sweep')
    report.add_argument('--out', type=Path, required=True, help='Каталог результатов sweep')
    report.add_argument('--no-charts', action='store_true', help='Не рисовать SVG')
    report.set_defaults(func=cmd_report)

    gen = sub.add_parser('gen-data', help='Сгенерировать/токенизировать корпус в CSV')
    add_corpus_args(gen)
    gen.add_argument('--input-len', type=int, required=True, help='Длина выборки N')
    gen.add_argument('--temperature', type=float, help='Температура markov-bigram')
    gen.add_argument('--out', type=Path, required=True, help='CSV-файл выборок')
    gen.set_defaults(func=cmd_gen_data)

    inspect = sub.add_parser('inspect-ckpt', help='Показать заголовок чекпоинта')
    inspect.add_argument('path', type=Path, help='Файл чекпоинта')
    inspect.set_defaults(func=cmd_inspect_ckpt)

    return parser


def main(argv: list[str] | None = None):
    parser = make_parser()
    args = parser.parse_args(argv)

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(message)s', stream=sys.stdout, force=True)

    try:
        args.func(args)
    except (RedAttnError, OSError, yaml.YAMLError) as e:
        print(f"Ошибка: {e}", file=sys.stderr)
        sys.exit(1)


if __name__ == '__main__':
    main()
