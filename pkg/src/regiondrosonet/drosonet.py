"""Compact place classifier: sparse binary projection, winner-take-all, linear softmax layer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import InvalidInputError
from .imaging import INPUT_SIZE, as_pixel_bytes

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# rows per subset-sum group in the inference weight table (memory x 7/3 of W)
ROW_GROUP = 3


@dataclass(frozen=True)
class DrosoNetConfig:
    d_in: int = INPUT_SIZE
    d_hidden: int = 2048
    n_places: int = 1
    epochs: int = 200
    learning_rate: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.d_in < 1:
            raise InvalidInputError(f"d_in must be >= 1, got {self.d_in}")
        if self.d_hidden < 2 or self.d_hidden % 2:
            raise InvalidInputError(f"d_hidden must be even and >= 2, got {self.d_hidden}")
        if self.n_places < 1:
            raise InvalidInputError(f"n_places must be >= 1, got {self.n_places}")
        if self.epochs < 1:
            raise InvalidInputError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise InvalidInputError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError(f"seed must fit in 64 bits, got {self.seed}")

    @property
    def ones_per_column(self) -> int:
        # 10% of d_in, halves rounded up; at least one so tiny inputs still project
        return max(1, math.floor(0.1 * self.d_in + 0.5))

    @property
    def n_words(self) -> int:
        return (self.d_in + 63) // 64


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(hidden: np.ndarray, weights: np.ndarray, bias: np.ndarray, targets: np.ndarray):
    """Mean softmax cross-entropy of ``hidden @ weights + bias`` and its gradients.

    Works in the dtype of the inputs; training runs it in float32, the
    gradient check in float64.
    """
    logits = hidden @ weights + bias
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    total = e.sum(axis=1, keepdims=True)
    rows = np.arange(hidden.shape[0])
    loss = float(np.mean(np.log(total[:, 0]) - logits[rows, targets]))
    g = e / total
    g[rows, targets] -= 1
    g /= hidden.shape[0]
    return loss, hidden.T @ g, g.sum(axis=0)


@dataclass
class DrosoNet:
    """One classifier.

    ``h_bits`` holds H column-major as packed little-endian uint64 words: row
    ``j`` of the array is column ``j`` of H. ``weights`` is (d_hidden, N).
    """

    config: DrosoNetConfig
    h_bits: np.ndarray
    weights: np.ndarray
    bias: np.ndarray
    trained: bool = False
    loss_history: list[float] = field(default_factory=list, compare=False, repr=False)
    _table: np.ndarray | None = field(default=None, init=False, compare=False, repr=False)

    @classmethod
    def initialize(cls, config: DrosoNetConfig) -> "DrosoNet":
        rng = np.random.default_rng(config.seed)
        k = config.ones_per_column
        keys = rng.random((config.d_hidden, config.d_in))
        if k < config.d_in:
            ones = np.argpartition(keys, k - 1, axis=1)[:, :k]
        else:
            ones = np.broadcast_to(np.arange(config.d_in), keys.shape)
        dense = np.zeros((config.d_hidden, config.n_words * 64), dtype=bool)
        np.put_along_axis(dense, ones, True, axis=1)
        h_bits = np.packbits(dense, axis=1, bitorder="little").view("<u8")
        weights = rng.uniform(-0.01, 0.01, (config.d_hidden, config.n_places)).astype(np.float32)
        bias = rng.uniform(-0.01, 0.01, config.n_places).astype(np.float32)
        return cls(config, np.ascontiguousarray(h_bits), weights, bias)

    @property
    def n_places(self) -> int:
        return self.config.n_places

    def projection_matrix(self) -> np.ndarray:
        """H unpacked to a dense (d_in, d_hidden) 0/1 array."""
        bits = np.unpackbits(self.h_bits.view(np.uint8), axis=1, bitorder="little")
        return bits[:, : self.config.d_in].T.copy()

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != (self.config.d_in,):
            raise InvalidInputError(f"input must have shape ({self.config.d_in},), got {x.shape}")
        return x

    def projection(self, x: np.ndarray) -> np.ndarray:
        """F = x . H; exact for byte-derived inputs (returned as pixel-scale integers / 255)."""
        x = self._check_input(x)
        pixels = as_pixel_bytes(x)
        if pixels is None:
            return x.astype(np.float64) @ self.projection_matrix().astype(np.float64)
        planes = _kernels.pixel_planes(pixels, self.config.n_words)
        f = np.empty(self.config.d_hidden, np.int64)
        _kernels.project_planes(planes, self.h_bits, f)
        return f / 255.0

    def hidden(self, x: np.ndarray) -> np.ndarray:
        """Binary code O: ones at the d_hidden/2 largest projections, ties to lower indices."""
        x = self._check_input(x)
        mask = np.empty(self.config.d_hidden, np.uint8)
        pixels = as_pixel_bytes(x)
        if pixels is not None:
            _kernels.hidden_from_pixels(pixels, self.h_bits, mask)
        else:
            _kernels.winner_take_all(self.projection(x), mask)
        return mask

    def hidden_batch(self, inputs: np.ndarray) -> np.ndarray:
        """Binary codes for an (n, d_in) matrix of flattened inputs, as float32 0/1."""
        inputs = np.asarray(inputs)
        if inputs.ndim != 2 or inputs.shape[1] != self.config.d_in:
            raise InvalidInputError(f"inputs must have shape (n, {self.config.d_in}), got {inputs.shape}")
        pixels = as_pixel_bytes(inputs)
        if pixels is not None:
            return self.hidden_batch_from_pixels(pixels)
        out = np.empty(inputs.shape[0:1] + (self.config.d_hidden,), np.float32)
        for r, x in enumerate(inputs):
            out[r] = self.hidden(x)
        return out

    def hidden_batch_from_pixels(self, pixels: np.ndarray) -> np.ndarray:
        out = np.empty((pixels.shape[0], self.config.d_hidden), np.float32)
        _kernels.hidden_batch_from_pixels(np.ascontiguousarray(pixels, dtype=np.uint8), self.h_bits, out)
        return out

    @property
    def row_table(self) -> np.ndarray:
        """Grouped subset sums of ``weights`` used by inference; rebuilt after training."""
        if self._table is None:
            self._table = _kernels.build_row_table(self.weights, ROW_GROUP)
        return self._table

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = self._check_input(x)
        pixels = as_pixel_bytes(x)
        if pixels is not None:
            return self.logits_from_pixels(pixels)
        out = np.empty(self.n_places, np.float32)
        _kernels.table_row_sum(self.row_table, ROW_GROUP, self.hidden(x), self.bias, out)
        return out

    def logits_from_pixels(self, pixels: np.ndarray) -> np.ndarray:
        return self.logits_from_planes(_kernels.pixel_planes(pixels, self.config.n_words))

    def logits_from_planes(self, planes: np.ndarray) -> np.ndarray:
        out = np.empty(self.n_places, np.float32)
        _kernels.logits_from_planes(planes, self.h_bits, self.row_table, ROW_GROUP, self.bias, out)
        return out

    def scores(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x))

    def predict(self, x: np.ndarray) -> int:
        # np.argmax returns the first maximum
        return int(np.argmax(self.scores(x)))

    def train(self, subset: np.ndarray) -> list[float]:
        """Full-batch Adam on the output layer; item n of ``subset`` is place n.

        Returns the loss history: entry e is the mean training loss before
        update e + 1, and the last entry is the loss after the final update.
        """
        subset = np.asarray(subset)
        if subset.ndim != 2 or subset.shape[0] != self.n_places:
            raise InvalidInputError(
                f"training subset must hold exactly {self.n_places} inputs, got shape {subset.shape}"
            )
        hidden = self.hidden_batch(subset)
        self.loss_history = self.fit_hidden(hidden)
        self.trained = True
        return self.loss_history

    def fit_hidden(self, hidden: np.ndarray) -> list[float]:
        """Adam updates of weights and bias given precomputed binary codes (H stays fixed)."""
        cfg = self.config
        self._table = None
        targets = np.arange(self.n_places)
        hidden = np.ascontiguousarray(hidden, dtype=np.float32)
        m_w = np.zeros_like(self.weights)
        v_w = np.zeros_like(self.weights)
        m_b = np.zeros_like(self.bias)
        v_b = np.zeros_like(self.bias)
        history = []
        for step in range(1, cfg.epochs + 1):
            loss, g_w, g_b = loss_and_grad(hidden, self.weights, self.bias, targets)
            history.append(loss)
            _kernels.adam_step(self.weights, g_w, m_w, v_w, cfg.learning_rate,
                               ADAM_BETA1, ADAM_BETA2, ADAM_EPS, step)
            _kernels.adam_step(self.bias, g_b, m_b, v_b, cfg.learning_rate,
                               ADAM_BETA1, ADAM_BETA2, ADAM_EPS, step)
        history.append(loss_and_grad(hidden, self.weights, self.bias, targets)[0])
        return history
