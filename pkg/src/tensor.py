# src/tensor.py
"""Плотные тензоры на numpy и reverse-mode дифференцирование через ленту."""

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, TokenIndexError, UsageError

MAX_RANK = 3

_state = threading.local()


def _local():
    """Состояние ленты и режима градиентов, своё у каждого потока."""
    if not hasattr(_state, 'stack'):
        _state.stack = []
        _state.grad_enabled = True
    return _state


class Tensor:
    """Плотный массив с опциональным буфером градиента."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        array = np.asarray(data, dtype=dtype if dtype is not None else _infer_dtype(data))
        if array.ndim > MAX_RANK:
            raise DimensionError(f"Тензоры ранга выше {MAX_RANK} не поддерживаются: {array.shape}")
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._op: '_Op | None' = None
        self._tape: 'Tape | None' = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise UsageError(f"item() применим только к скаляру, форма {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def sum(self) -> 'Tensor':
        return sum_all(self)

    def __matmul__(self, other: 'Tensor') -> 'Tensor':
        return matmul(self, other)

    def __add__(self, other) -> 'Tensor':
        return add(self, other)

    def __radd__(self, other) -> 'Tensor':
        return add(self, other)

    def __sub__(self, other) -> 'Tensor':
        return sub(self, other)

    def __mul__(self, other) -> 'Tensor':
        return mul(self, other)

    def __rmul__(self, other) -> 'Tensor':
        return mul(self, other)

    def __neg__(self) -> 'Tensor':
        return scale(self, -1.0)

    def __repr__(self):
        grad = ', requires_grad=True' if self.requires_grad else ''
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad})"


def _infer_dtype(data):
    if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
        return data.dtype
    return np.float64


@dataclass
class _Op:
    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Упорядоченная запись выполненных операций.

    Операции добавляются в порядке выполнения, поэтому производитель входа
    всегда стоит раньше потребителя. Запись идёт только внутри `with Tape():`;
    вне контекста результат не дифференцируется и ничего не накапливается.
    """

    def __init__(self):
        self.ops: list[_Op] = []

    def __len__(self):
        return len(self.ops)

    def __enter__(self) -> 'Tape':
        _local().stack.append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        _local().stack.pop()

    def record(self, op: _Op):
        self.ops.append(op)

    def clear(self):
        self.ops.clear()

    def backward(self, loss: Tensor):
        """Проходит ленту в обратном порядке, каждая операция посещается один раз."""
        if loss.size != 1:
            raise UsageError(f"backward ожидает скаляр, получена форма {loss.shape}")
        if loss._op is None or loss._tape is not self:
            raise UsageError("backward: тензор не получен из записанной операции")

        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for op in reversed(self.ops):
            grad = pending.pop(id(op.output), None)
            if grad is None:
                continue
            for inp, inp_grad in zip(op.inputs, op.backward(grad)):
                if inp_grad is None or not inp.requires_grad:
                    continue
                if inp._op is not None and inp._tape is self:
                    key = id(inp)
                    pending[key] = pending[key] + inp_grad if key in pending else inp_grad
                else:
                    inp.accumulate_grad(inp_grad)


def current_tape() -> Tape | None:
    state = _local()
    return state.stack[-1] if state.stack else None


@contextmanager
def no_grad():
    """Вычисления без записи на ленту."""
    state = _local()
    previous = state.grad_enabled
    state.grad_enabled = False
    try:
        yield
    finally:
        state.grad_enabled = previous


def is_grad_enabled() -> bool:
    return _local().grad_enabled


def _result(name: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    tape = current_tape()
    if tape is not None and is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._op = _Op(name, inputs, out, backward_fn)
        out._tape = tape
        tape.record(out._op)
    return out


def backward(loss: Tensor):
    """Записывает d(loss)/d(t) в .grad каждого листового тензора с requires_grad.

    Градиенты накапливаются: между шагами их обнуляет вызывающий.
    """
    if loss._tape is None:
        raise UsageError("backward: у тензора нет ленты вычислений")
    loss._tape.backward(loss)


def zero_grad(params: Iterable[Tensor]):
    for p in params:
        p.zero_grad()


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Суммирует градиент по осям, размноженным при broadcast."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap_last(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Матричное произведение; ось батча (ранг 3) допускается у одного или обоих."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: несовместимые формы {a.shape} и {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"matmul: разный размер батча {a.shape} и {b.shape}")

    a_data, b_data = a.data, b.data

    def backward_fn(grad):
        grad_a = _unbroadcast(grad @ _swap_last(b_data), a_data.shape) if a.requires_grad else None
        grad_b = _unbroadcast(_swap_last(a_data) @ grad, b_data.shape) if b.requires_grad else None
        return grad_a, grad_b

    return _result('matmul', a_data @ b_data, (a, b), backward_fn)


def transpose(t: Tensor) -> Tensor:
    """Меняет местами две последние оси."""
    if t.ndim < 2:
        raise DimensionError(f"transpose: нужен ранг >= 2, форма {t.shape}")
    return _result('transpose', _swap_last(t.data), (t,), lambda grad: (_swap_last(grad),))


def _broadcast_shape(sa: tuple[int, ...], sb: tuple[int, ...]) -> tuple[int, ...]:
    """Допустимы равные формы, хвост формы и строка 1×n поверх матрицы."""
    if sa == sb:
        return sa
    big, small = (sa, sb) if len(sa) >= len(sb) and np.prod(sa) >= np.prod(sb) else (sb, sa)
    if len(small) == 0:
        return big
    if small == big[-len(small):]:
        return big
    if small[-1] == big[-1] and all(d == 1 for d in small[:-1]) and len(small) <= len(big):
        return big
    raise DimensionError(f"Несовместимые формы для поэлементной операции: {sa} и {sb}")


def _elementwise(name: str, a: Tensor, b, forward, grad_a_fn, grad_b_fn) -> Tensor:
    if not isinstance(b, Tensor):
        scalar = float(b)
        data = forward(a.data, scalar)
        return _result(name, data.astype(a.dtype, copy=False), (a,),
                       lambda grad: (grad_a_fn(grad, a.data, scalar),))

    _broadcast_shape(a.shape, b.shape)
    a_data, b_data = a.data, b.data

    def backward_fn(grad):
        grad_a = _unbroadcast(grad_a_fn(grad, a_data, b_data), a_data.shape) if a.requires_grad else None
        grad_b = _unbroadcast(grad_b_fn(grad, a_data, b_data), b_data.shape) if b.requires_grad else None
        return grad_a, grad_b

    return _result(name, forward(a_data, b_data), (a, b), backward_fn)


def add(a: Tensor, b) -> Tensor:
    return _elementwise(
        'add', a, b,
        lambda x, y: x + y,
        lambda g, x, y: g,
        lambda g, x, y: g,
    )


def sub(a: Tensor, b) -> Tensor:
    return _elementwise(
        'sub', a, b,
        lambda x, y: x - y,
        lambda g, x, y: g,
        lambda g, x, y: -g,
    )


def mul(a: Tensor, b) -> Tensor:
    return _elementwise(
        'mul', a, b,
        lambda x, y: x * y,
        lambda g, x, y: g * y,
        lambda g, x, y: g * x,
    )


def scale(a: Tensor, factor: float) -> Tensor:
    return mul(a, factor)


def sum_all(t: Tensor) -> Tensor:
    shape = t.shape
    return _result('sum', np.asarray(t.data.sum()), (t,),
                   lambda grad: (np.broadcast_to(grad, shape).copy(),))


def softmax_rows(t: Tensor) -> Tensor:
    """Softmax по последней оси с вычитанием максимума."""
    shifted = t.data - t.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=-1, keepdims=True)

    def backward_fn(grad):
        return (out * (grad - (grad * out).sum(axis=-1, keepdims=True)),)

    return _result('softmax', out, (t,), backward_fn)


def _as_ids(ids, name: str) -> np.ndarray:
    array = np.asarray(ids)
    if array.size and not np.issubdtype(array.dtype, np.integer):
        raise TokenIndexError(f"{name}: ожидаются целые id, получен {array.dtype}")
    return array.astype(np.int64, copy=False)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Средняя по позициям −log softmax(logits)[i, target_i] через log-sum-exp."""
    target_ids = _as_ids(targets, 'cross_entropy')
    vocab = logits.shape[-1]
    if target_ids.shape != logits.shape[:-1]:
        raise DimensionError(f"cross_entropy: формы logits {logits.shape} и targets {target_ids.shape}")
    if target_ids.size == 0:
        raise UsageError("cross_entropy: нужна хотя бы одна позиция")
    if target_ids.min() < 0 or target_ids.max() >= vocab:
        raise TokenIndexError(f"cross_entropy: цель вне диапазона [0, {vocab})")

    flat = logits.data.reshape(-1, vocab)
    flat_targets = target_ids.reshape(-1)
    rows = np.arange(flat.shape[0])
    shifted = flat - flat.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = np.mean(log_norm - shifted[rows, flat_targets])

    def backward_fn(grad):
        probs = np.exp(shifted - log_norm[:, None])
        probs[rows, flat_targets] -= 1.0
        return ((probs * (grad / flat.shape[0])).reshape(logits.shape),)

    return _result('cross_entropy', np.asarray(loss, dtype=logits.dtype), (logits,), backward_fn)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Строки таблицы по id; обратный проход раскладывает градиент по строкам."""
    id_array = _as_ids(ids, 'embedding_lookup')
    if table.ndim != 2:
        raise DimensionError(f"embedding_lookup: таблица должна быть матрицей, форма {table.shape}")
    vocab = table.shape[0]
    if id_array.size and (id_array.min() < 0 or id_array.max() >= vocab):
        raise TokenIndexError(f"embedding_lookup: id вне диапазона [0, {vocab})")

    def backward_fn(grad):
        table_grad = np.zeros_like(table.data)
        np.add.at(table_grad, id_array.reshape(-1), grad.reshape(-1, table.shape[1]))
        return (table_grad,)

    return _result('embedding', table.data[id_array], (table,), backward_fn)


def dropout(t: Tensor, p: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout; тождественен при p == 0 или вне обучения."""
    if not training or p <= 0.0:
        return t
    if rng is None:
        raise UsageError("dropout: нужен генератор случайных чисел")
    mask = ((rng.random(t.shape) >= p) / (1.0 - p)).astype(t.dtype)
    return _result('dropout', t.data * mask, (t,), lambda grad: (grad * mask,))


def numeric_gradient(fn: Callable[[], Tensor], t: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Центральные конечные разности d fn()/d t (t.data меняется на месте и восстанавливается)."""
    if not t.data.flags.c_contiguous:
        t.data = np.ascontiguousarray(t.data)
    grad = np.zeros_like(t.data, dtype=np.float64)
    flat = t.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            plus = fn().item()
            flat[i] = original - eps
            minus = fn().item()
            flat[i] = original
            grad.reshape(-1)[i] = (plus - minus) / (2 * eps)
    return grad
