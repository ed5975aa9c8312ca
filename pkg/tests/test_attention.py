import math
import unittest

import numpy as np

from src.attention import (
    AttentionParams,
    attention_weights,
    init_attention,
    project_qkv,
    reduce_attention,
    scaled_dot_attention,
)
from src.errors import DimensionError, FixedLengthError
from src.tensor import Tape, Tensor, matmul, sum_all


def fixed_params(w_q, w_k, w_v, w_s) -> AttentionParams:
    return AttentionParams(
        w_q=Tensor(w_q, requires_grad=True),
        w_k=Tensor(w_k, requires_grad=True),
        w_v=Tensor(w_v, requires_grad=True),
        w_s=Tensor(w_s, requires_grad=True),
    )


class ProjectQKVTests(unittest.TestCase):
    def test_identity_scaling_matches_plain_projection(self):
        """При W^S = I запросы совпадают с X·W^Q."""
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(5, 3)))
        params = init_attention(rng, 3, 4, 5, 5)
        params.w_s = Tensor(np.eye(5), requires_grad=True)
        q, _, _ = project_qkv(x, params)
        np.testing.assert_array_equal(q.data, x.data @ params.w_q.data)

    def test_column_sums_as_single_token(self):
        """W^S из одной строки единиц суммирует все токены в один запрос."""
        x = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        params = fixed_params(np.eye(2), np.eye(2), np.eye(2), [[1.0, 1.0, 1.0]])
        q, k, v = project_qkv(Tensor(x), params)
        np.testing.assert_array_equal(q.data, [[9.0, 12.0]])
        np.testing.assert_array_equal(k.data, x)
        np.testing.assert_array_equal(v.data, x)

    def test_row_count_mismatch(self):
        """Число строк X не совпадает со столбцами W^S: ошибка фиксированной длины."""
        params = fixed_params(np.eye(2), np.eye(2), np.eye(2), np.ones((2, 3)))
        with self.assertRaises(FixedLengthError):
            project_qkv(Tensor(np.ones((4, 2))), params)

    def test_fixed_length_error_is_dimension_error(self):
        """Ошибка фиксированной длины ловится как ошибка размерности."""
        self.assertTrue(issubclass(FixedLengthError, DimensionError))


class ScaledDotAttentionTests(unittest.TestCase):
    def test_single_key_returns_value(self):
        """Один ключ: каждая строка выхода равна единственному значению."""
        out = scaled_dot_attention(Tensor([[3.0, -1.0]]), Tensor([[0.5, 7.0]]), Tensor([[2.0, 4.0, 8.0]]))
        np.testing.assert_allclose(out.data, [[2.0, 4.0, 8.0]])

    def test_zero_queries_average_values(self):
        """Нулевые запросы дают равные веса, выход — среднее значений."""
        rng = np.random.default_rng(1)
        v = rng.normal(size=(4, 3))
        out = scaled_dot_attention(Tensor(np.zeros((2, 5))), Tensor(rng.normal(size=(4, 5))), Tensor(v))
        np.testing.assert_allclose(out.data, np.tile(v.mean(axis=0), (2, 1)), atol=1e-12)

    def test_hand_example(self):
        """Пример, посчитанный вручную."""
        out = scaled_dot_attention(Tensor([[1.0]]), Tensor([[0.0], [math.log(4)]]), Tensor([[1.0], [3.0]]))
        self.assertAlmostEqual(out.item(), 2.6, places=12)

    def test_width_mismatch(self):
        with self.assertRaises(DimensionError):
            scaled_dot_attention(Tensor(np.ones((1, 2))), Tensor(np.ones((3, 3))), Tensor(np.ones((3, 1))))

    def test_row_mismatch(self):
        with self.assertRaises(DimensionError):
            scaled_dot_attention(Tensor(np.ones((1, 2))), Tensor(np.ones((3, 2))), Tensor(np.ones((2, 1))))

    def test_weight_rows_sum_to_one(self):
        """Веса attention по каждой строке запроса суммируются в 1."""
        rng = np.random.default_rng(2)
        weights = attention_weights(Tensor(rng.normal(size=(6, 4))), Tensor(rng.normal(size=(9, 4))))
        np.testing.assert_allclose(weights.data.sum(axis=1), np.ones(6), atol=1e-6)


class ReduceAttentionTests(unittest.TestCase):
    def test_shape_law_grid(self):
        """Длина выхода равна числу строк W^S на всей сетке (n_in, n_out) от 1 до 8."""
        rng = np.random.default_rng(3)
        for n_in in range(1, 9):
            for n_out in range(1, 9):
                params = init_attention(rng, 3, 5, n_in, n_out)
                out = reduce_attention(Tensor(rng.normal(size=(n_in, 3))), params)
                self.assertEqual(out.shape, (n_out, 5))

    def test_identity_scaling_equals_standard_attention(self):
        """W^S = I: результат совпадает с обычным attention до 1e-12."""
        rng = np.random.default_rng(4)
        for _ in range(50):
            n, d_in, d_attn = rng.integers(1, 9, size=3)
            x = Tensor(rng.normal(size=(n, d_in)))
            params = init_attention(rng, d_in, d_attn, n, n)
            params.w_s = Tensor(np.eye(n), requires_grad=True)
            reduced = reduce_attention(x, params).data
            standard = scaled_dot_attention(
                matmul(x, params.w_q), matmul(x, params.w_k), matmul(x, params.w_v)
            ).data
            np.testing.assert_allclose(reduced, standard, rtol=0, atol=1e-12)

    def test_two_to_one_against_direct_evaluation(self):
        """Сжатие 2 → 1 сверяется с прямым вычислением формулы."""
        x = np.array([[1.0, 0.0], [0.0, 2.0]])
        params = fixed_params(np.eye(2), np.eye(2), np.eye(2), [[0.5, 0.5]])
        out = reduce_attention(Tensor(x), params)

        q = [0.5 * 1.0 + 0.5 * 0.0, 0.5 * 0.0 + 0.5 * 2.0]
        scores = [(q[0] * row[0] + q[1] * row[1]) / math.sqrt(2) for row in x]
        exps = [math.exp(s) for s in scores]
        weights = [e / sum(exps) for e in exps]
        expected = [weights[0] * x[0][j] + weights[1] * x[1][j] for j in range(2)]
        np.testing.assert_allclose(out.data, [expected], atol=1e-12)

    def test_gradient_reaches_all_weights(self):
        """Градиент доходит до W^Q, W^K, W^V и W^S."""
        rng = np.random.default_rng(5)
        params = init_attention(rng, 4, 6, 5, 2)
        with Tape() as tape:
            loss = sum_all(reduce_attention(Tensor(rng.normal(size=(5, 4))), params))
        tape.backward(loss)
        for name, tensor in params.named_parameters().items():
            self.assertIsNotNone(tensor.grad, name)
            self.assertTrue((np.abs(tensor.grad) > 0).any(), name)

    def test_sensitive_to_row_order(self):
        """Перестановка строк входа меняет результат: W^S привязана к позициям."""
        rng = np.random.default_rng(6)
        params = init_attention(rng, 3, 4, 5, 2)
        x = rng.normal(size=(5, 3))
        permuted = x[[4, 2, 0, 3, 1]]
        out = reduce_attention(Tensor(x), params).data
        out_permuted = reduce_attention(Tensor(permuted), params).data
        self.assertFalse(np.allclose(out, out_permuted))

    def test_batched_input_matches_single(self):
        """Батч считается так же, как отдельные выборки."""
        rng = np.random.default_rng(7)
        params = init_attention(rng, 3, 4, 6, 3)
        batch = rng.normal(size=(4, 6, 3))
        out = reduce_attention(Tensor(batch), params).data
        for i in range(4):
            np.testing.assert_allclose(out[i], reduce_attention(Tensor(batch[i]), params).data, atol=1e-12)

    def test_init_bounds(self):
        """Инициализация лежит в ±1/√fan_in."""
        rng = np.random.default_rng(8)
        params = init_attention(rng, 16, 8, 9, 3)
        self.assertLessEqual(np.abs(params.w_q.data).max(), 1 / math.sqrt(16))
        self.assertLessEqual(np.abs(params.w_s.data).max(), 1 / math.sqrt(9))
        self.assertEqual(params.w_s.shape, (3, 9))


if __name__ == "__main__":
    unittest.main()
