import unittest

import numpy as np

from src.attention import scaled_dot_attention
from src.config import ModelConfig
from src.errors import ConfigError, FixedLengthError, TokenIndexError, UsageError
from src.model import (
    argmax_lowest,
    block_layout,
    decode,
    embed,
    encode,
    forward,
    init_model,
    params_from_arrays,
    parameter_count,
    reconstruct,
    token_accuracy,
)
from src.tensor import Tape, Tensor, cross_entropy, matmul, mul, numeric_gradient, sum_all


def tiny_config(**overrides) -> ModelConfig:
    values = dict(input_len=4, latent_len=2, vocab_size=5, d_model=3, d_attn=4, dtype='float64')
    values.update(overrides)
    return ModelConfig(**values)


def identity_params(ids_vocab: int, length: int, gain: float = 5.0):
    """Модель N=L, где все проекции и W^S единичные, а эмбеддинг gain·I."""
    config = ModelConfig(
        input_len=length, latent_len=length, vocab_size=ids_vocab,
        d_model=ids_vocab, d_attn=ids_vocab, use_positional=False, dtype='float64',
    )
    eye = np.eye(ids_vocab)
    arrays = {'embedding': gain * eye, 'out_proj': eye}
    for prefix in ('encoder', 'decoder'):
        arrays.update({f'{prefix}.0.w_q': eye, f'{prefix}.0.w_k': eye, f'{prefix}.0.w_v': eye,
                       f'{prefix}.0.w_s': np.eye(length)})
    return params_from_arrays(config, arrays)


class InitModelTests(unittest.TestCase):
    def test_same_seed_is_bitwise_identical(self):
        """Один seed — побитно одинаковые параметры."""
        config = tiny_config()
        first = init_model(config, seed=11).named_parameters()
        second = init_model(config, seed=11).named_parameters()
        self.assertEqual(list(first), list(second))
        for name in first:
            self.assertEqual(first[name].data.tobytes(), second[name].data.tobytes(), name)

    def test_different_seeds_differ(self):
        config = tiny_config()
        first = init_model(config, seed=0).named_parameters()
        second = init_model(config, seed=1).named_parameters()
        self.assertTrue(any(not np.array_equal(first[n].data, second[n].data) for n in first))

    def test_scaling_matrix_shapes(self):
        """W^S энкодера L×N, декодера N×L."""
        params = init_model(tiny_config(), seed=0)
        self.assertEqual(params.encoder[0].w_s.shape, (2, 4))
        self.assertEqual(params.decoder[0].w_s.shape, (4, 2))

    def test_deep_layout(self):
        """При depth > 1 внутренние блоки сохраняют длину, последний меняет её."""
        encoder, decoder = block_layout(tiny_config(encoder_depth=3, decoder_depth=2))
        self.assertEqual(encoder, [(3, 4, 4), (4, 4, 4), (4, 4, 2)])
        self.assertEqual(decoder, [(4, 2, 2), (4, 2, 4)])

    def test_parameter_order_and_count(self):
        """Порядок параметров фиксирован, число параметров tiny-конфига 147."""
        params = init_model(tiny_config(), seed=0)
        names = list(params.named_parameters())
        self.assertEqual(names[:2], ['embedding', 'positional'])
        self.assertEqual(names[-1], 'out_proj')
        # 15 + 12 + (3·4·3 + 8) + (4·4·3 + 8) + 20
        self.assertEqual(parameter_count(params), 15 + 12 + 44 + 56 + 20)

    def test_no_positional_table(self):
        params = init_model(tiny_config(use_positional=False), seed=0)
        self.assertIsNone(params.positional)
        self.assertNotIn('positional', params.named_parameters())

    def test_invalid_config(self):
        with self.assertRaises(ConfigError):
            init_model(tiny_config(latent_len=0), seed=0)

    def test_default_dtype_is_float32(self):
        params = init_model(ModelConfig(input_len=4, latent_len=2, vocab_size=5, d_model=3, d_attn=4), seed=0)
        self.assertEqual(params.embedding.dtype, np.float32)

    def test_copy_is_independent(self):
        """Копия параметров не разделяет память с оригиналом."""
        params = init_model(tiny_config(), seed=0)
        snapshot = params.copy()
        params.embedding.data += 1.0
        self.assertFalse(np.array_equal(params.embedding.data, snapshot.embedding.data))


class ForwardTests(unittest.TestCase):
    def test_logits_shape_and_finite(self):
        params = init_model(tiny_config(), seed=0)
        logits = forward(params, [0, 4, 2, 2])
        self.assertEqual(logits.shape, (4, 5))
        self.assertTrue(np.isfinite(logits.data).all())

    def test_batch_matches_single(self):
        """Батч выдаёт те же логиты, что поштучный проход."""
        params = init_model(tiny_config(), seed=3)
        batch = np.array([[0, 1, 2, 3], [4, 4, 0, 1]])
        logits = forward(params, batch).data
        for i in range(2):
            np.testing.assert_allclose(logits[i], forward(params, batch[i]).data, atol=1e-12)

    def test_identity_fixture_recovers_tokens(self):
        """Параметры тождественного отображения восстанавливают вход точно."""
        params = identity_params(ids_vocab=6, length=4)
        ids = [3, 0, 5, 2]
        np.testing.assert_array_equal(reconstruct(params, ids), ids)

    def test_short_input(self):
        """Вход короче N отклоняется."""
        params = init_model(tiny_config(), seed=0)
        with self.assertRaises(FixedLengthError):
            forward(params, [0, 1, 2])

    def test_id_out_of_vocabulary(self):
        params = init_model(tiny_config(), seed=0)
        with self.assertRaises(TokenIndexError):
            forward(params, [0, 1, 2, 5])


class EncodeDecodeTests(unittest.TestCase):
    def test_encode_shapes(self):
        for n, l in ((8, 8), (8, 4), (8, 2)):
            params = init_model(tiny_config(input_len=n, latent_len=l), seed=0)
            z = encode(params, embed(params, np.zeros(n, dtype=int)))
            self.assertEqual(z.shape, (l, 4))
            self.assertEqual(decode(params, z).shape, (n, 4))

    def test_encode_identity_scaling_is_self_attention(self):
        """encode при W^S = I равен обычному self-attention."""
        params = init_model(tiny_config(latent_len=4), seed=0)
        block = params.encoder[0]
        block.w_s = Tensor(np.eye(4), requires_grad=True)
        x = embed(params, [1, 2, 3, 0])
        expected = scaled_dot_attention(matmul(x, block.w_q), matmul(x, block.w_k), matmul(x, block.w_v))
        np.testing.assert_allclose(encode(params, x).data, expected.data, atol=1e-12)

    def test_decode_identity_scaling_is_self_attention(self):
        params = init_model(tiny_config(latent_len=4), seed=0)
        block = params.decoder[0]
        block.w_s = Tensor(np.eye(4), requires_grad=True)
        z = Tensor(np.random.default_rng(0).normal(size=(4, 4)))
        expected = scaled_dot_attention(matmul(z, block.w_q), matmul(z, block.w_k), matmul(z, block.w_v))
        np.testing.assert_allclose(decode(params, z).data, expected.data, atol=1e-12)

    def test_decode_wrong_latent_length(self):
        """decode принимает ровно L латентных токенов."""
        params = init_model(tiny_config(), seed=0)
        with self.assertRaises(FixedLengthError):
            decode(params, Tensor(np.zeros((3, 4))))

    def test_encode_gradient_wrt_embedding(self):
        params = init_model(tiny_config(), seed=1)
        weights = Tensor(np.random.default_rng(1).normal(size=(2, 4)))
        ids = [1, 3, 3, 0]

        def build():
            return sum_all(mul(encode(params, embed(params, ids)), weights))

        with Tape() as tape:
            loss = build()
        tape.backward(loss)
        np.testing.assert_allclose(params.embedding.grad, numeric_gradient(build, params.embedding),
                                   rtol=1e-4, atol=1e-7)

    def test_decode_gradient_wrt_scaling_matrix(self):
        params = init_model(tiny_config(), seed=2)
        z = Tensor(np.random.default_rng(2).normal(size=(2, 4)))
        weights = Tensor(np.random.default_rng(3).normal(size=(4, 4)))

        def build():
            return sum_all(mul(decode(params, z), weights))

        with Tape() as tape:
            loss = build()
        tape.backward(loss)
        w_s = params.decoder[0].w_s
        np.testing.assert_allclose(w_s.grad, numeric_gradient(build, w_s), rtol=1e-4, atol=1e-7)


class FullGradientTests(unittest.TestCase):
    def test_autoencoder_loss_matches_finite_differences(self):
        """Полная модель N=4, L=2, V=5: градиенты против конечных разностей."""
        rng = np.random.default_rng(99)
        for case in range(100):
            params = init_model(tiny_config(), seed=case)
            ids = rng.integers(0, 5, size=4)

            def build():
                return cross_entropy(forward(params, ids), ids)

            params.zero_grad()
            with Tape() as tape:
                loss = build()
            tape.backward(loss)
            for name, tensor in params.named_parameters().items():
                numeric = numeric_gradient(build, tensor)
                diff = np.abs(tensor.grad - numeric)
                bound = 1e-4 * np.maximum(np.abs(tensor.grad), np.abs(numeric)) + 1e-7
                self.assertTrue((diff <= bound).all(), f"case {case}, {name}: {diff.max()}")


class ReconstructTests(unittest.TestCase):
    def test_one_hot_row(self):
        logits = np.zeros((1, 10))
        logits[0, 7] = 1.0
        self.assertEqual(argmax_lowest(logits).tolist(), [7])

    def test_tie_goes_to_lowest_id(self):
        """При равных логитах выбирается меньший id."""
        logits = np.zeros((1, 6))
        logits[0, 2] = logits[0, 5] = 3.0
        self.assertEqual(argmax_lowest(logits).tolist(), [2])

    def test_reconstruct_does_not_record(self):
        """reconstruct не пишет операции на ленту."""
        params = init_model(tiny_config(), seed=0)
        with Tape() as tape:
            reconstruct(params, [0, 1, 2, 3])
        self.assertEqual(len(tape), 0)


class TokenAccuracyTests(unittest.TestCase):
    def test_values(self):
        self.assertEqual(token_accuracy([1, 2, 3, 4], [1, 2, 3, 4]), 1.0)
        self.assertEqual(token_accuracy([1, 2, 3, 4], [1, 2, 0, 0]), 0.5)
        self.assertEqual(token_accuracy([5], [6]), 0.0)

    def test_length_mismatch(self):
        with self.assertRaises(UsageError):
            token_accuracy([1, 2], [1, 2, 3])


if __name__ == "__main__":
    unittest.main()
