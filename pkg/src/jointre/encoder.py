"""Self-attention encoder trained from scratch; its output feeds both heads."""
import numpy as np

from . import autodiff as ad
from .config import EncoderConfig
from .errors import SequenceLengthError
from .nn import LayerNorm, Linear, Module, parameter

_NEG = -1e9


def sinusoidal_positions(n, dim):
    pos = np.arange(n)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class SelfAttentionLayer(Module):
    """Multi-head attention and a position-wise feed-forward block, each with residual + layer norm."""

    def __init__(self, cfg: EncoderConfig, rng):
        d = cfg.model_dim
        self.n_heads = cfg.n_heads
        self.dropout_rate = cfg.dropout_rate
        self.query = Linear(d, d, rng)
        self.key = Linear(d, d, rng)
        self.value = Linear(d, d, rng)
        self.output = Linear(d, d, rng)
        self.norm1 = LayerNorm(d)
        self.ff_in = Linear(d, cfg.feedforward_dim, rng)
        self.ff_out = Linear(cfg.feedforward_dim, d, rng)
        self.norm2 = LayerNorm(d)
        self.last_attention = None

    def _heads(self, x, B, T):
        dk = x.shape[-1] // self.n_heads
        return ad.swapaxes(x.reshape(B, T, self.n_heads, dk), 1, 2)

    def __call__(self, x, key_mask=None, training=False, rng=None):
        """``x`` is ``[B, T, d]``; ``key_mask`` is ``[B, T]`` boolean, True on real tokens."""
        B, T, d = x.shape
        dk = d // self.n_heads
        q = self._heads(self.query(x), B, T)
        k = self._heads(self.key(x), B, T)
        v = self._heads(self.value(x), B, T)
        scores = (q @ ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dk))
        if key_mask is not None:
            scores = scores + np.where(key_mask, 0.0, _NEG)[:, None, None, :]
        attn = ad.softmax(scores, axis=-1)
        self.last_attention = attn.data
        ctx = ad.swapaxes(attn @ v, 1, 2).reshape(B, T, d)
        h = ad.dropout(self.output(ctx), self.dropout_rate, rng, training)
        x = self.norm1(x + h)
        f = self.ff_out(ad.relu(self.ff_in(x)))
        f = ad.dropout(f, self.dropout_rate, rng, training)
        return self.norm2(x + f)


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, vocab_size, rng):
        cfg.validate()
        self.cfg = cfg
        self.token_embedding = parameter(rng.uniform(-0.05, 0.05, size=(vocab_size, cfg.model_dim)))
        if cfg.positions == "learned":
            self.position_embedding = parameter(
                rng.uniform(-0.05, 0.05, size=(cfg.max_sequence_length, cfg.model_dim)))
        else:
            self.position_embedding = ad.Tensor(
                sinusoidal_positions(cfg.max_sequence_length, cfg.model_dim))
        self.layers = [SelfAttentionLayer(cfg, rng) for _ in range(cfg.n_layers)]

    def embed(self, token_ids):
        """Token plus position embedding for ``[T]`` or ``[B, T]`` ids."""
        ids = np.asarray(token_ids, dtype=np.int64)
        T = ids.shape[-1]
        if T > self.cfg.max_sequence_length:
            raise SequenceLengthError(
                f"sequence of {T} tokens exceeds max_sequence_length {self.cfg.max_sequence_length}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.token_embedding.shape[0]):
            raise IndexError("token id outside the vocabulary")
        return self.token_embedding[ids] + self.position_embedding[np.arange(T)]

    def __call__(self, token_ids, lengths=None, training=False, rng=None):
        """Contextual embeddings, ``[B, T, d]`` for batched ids or ``[T, d]`` for one sequence."""
        ids = np.asarray(token_ids, dtype=np.int64)
        single = ids.ndim == 1
        if single:
            ids = ids[None, :]
        B, T = ids.shape
        if lengths is None:
            lengths = np.full(B, T)
        mask = np.arange(T)[None, :] < np.asarray(lengths)[:, None]
        x = ad.dropout(self.embed(ids), self.cfg.dropout_rate, rng, training)
        for layer in self.layers:
            x = layer(x, mask, training, rng)
        return x.reshape(T, -1) if single else x

    encode = __call__
