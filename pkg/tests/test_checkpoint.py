import tempfile
import unittest
from pathlib import Path

import numpy as np

from src.checkpoint import FORMAT_VERSION, describe_checkpoint, load_checkpoint, read_header, save_checkpoint
from src.config import ModelConfig
from src.errors import CheckpointError
from src.model import init_model, reconstruct


def small_config(**overrides) -> ModelConfig:
    values = dict(input_len=6, latent_len=3, vocab_size=7, d_model=4, d_attn=5)
    values.update(overrides)
    return ModelConfig(**values)


class CheckpointRoundTripTests(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'model.ckpt'

    def tearDown(self):
        self.tmp.cleanup()

    def test_float32_parameters_are_bitwise_equal(self):
        """Веса float32 после сохранения и загрузки совпадают побитно."""
        params = init_model(small_config(encoder_depth=2), seed=5)
        save_checkpoint(self.path, params, seed=5, extra={'epoch': '3'})
        loaded, info = load_checkpoint(self.path)

        self.assertEqual(info.config, params.config)
        self.assertEqual(info.seed, 5)
        self.assertEqual(info.extra, {'epoch': '3'})
        original = params.named_parameters()
        restored = loaded.named_parameters()
        self.assertEqual(list(original), list(restored))
        for name in original:
            self.assertEqual(original[name].data.tobytes(), restored[name].data.tobytes(), name)

    def test_loaded_model_reconstructs_identically(self):
        """Загруженная модель восстанавливает те же токены."""
        params = init_model(small_config(use_positional=False), seed=1)
        save_checkpoint(self.path, params, seed=1)
        loaded, _ = load_checkpoint(self.path)
        ids = [1, 2, 3, 4, 5, 6]
        np.testing.assert_array_equal(reconstruct(params, ids), reconstruct(loaded, ids))

    def test_header_is_readable_text(self):
        """Заголовок читается как текст `ключ: значение`."""
        save_checkpoint(self.path, init_model(small_config(), seed=0), seed=0)
        raw = self.path.read_bytes()
        header = raw[:raw.index(b'\n---\n')].decode('utf-8')
        self.assertTrue(header.startswith(f"format: {FORMAT_VERSION}\n"))
        self.assertIn("param: embedding 7 4", header)
        self.assertIn("param: encoder.0.w_s 3 6", header)

    def test_describe_lists_parameters(self):
        save_checkpoint(self.path, init_model(small_config(), seed=0), seed=0)
        text = describe_checkpoint(self.path)
        self.assertIn("input_len: 6", text)
        self.assertIn("decoder.0.w_s", text)
        self.assertIn("total:", text)


class CheckpointErrorTests(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'model.ckpt'
        save_checkpoint(self.path, init_model(small_config(), seed=0), seed=0)

    def tearDown(self):
        self.tmp.cleanup()

    def test_wrong_version(self):
        raw = self.path.read_bytes().replace(FORMAT_VERSION.encode(), b'redattn-ckpt-v0', 1)
        self.path.write_bytes(raw)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_truncated_blob(self):
        """Обрезанный файл не загружается."""
        raw = self.path.read_bytes()
        self.path.write_bytes(raw[:-8])
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_trailing_bytes(self):
        """Лишние байты после весов — ошибка."""
        self.path.write_bytes(self.path.read_bytes() + b'\x00' * 4)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_missing_header_end(self):
        with self.assertRaises(CheckpointError):
            read_header(b'format: redattn-ckpt-v1\nseed: 0')

    def test_shape_disagrees_with_config(self):
        """Форма веса в заголовке не сходится с конфигом модели."""
        raw = self.path.read_bytes().replace(b'param: out_proj 5 7', b'param: out_proj 7 5', 1)
        self.path.write_bytes(raw)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)


if __name__ == "__main__":
    unittest.main()
