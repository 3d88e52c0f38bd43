"""NER branch: stacked bidirectional RNN, per-token feed-forward classifier, BIO decoding."""
import numpy as np

from . import autodiff as ad
from .config import NerConfig
from .nn import Linear, Module, fan_in_normal, parameter
from .text import TagSet, decode_spans


def reverse_index(lengths, T):
    """Per-row gather index reversing the first ``lengths[b]`` positions, padding left in place."""
    t = np.arange(T)[None, :]
    L = np.asarray(lengths)[:, None]
    return np.where(t < L, L - 1 - t, t)


class ElmanDirection(Module):
    def __init__(self, n_in, hidden, rng):
        self.w_in = parameter(fan_in_normal(rng, n_in, hidden))
        self.w_rec = parameter(fan_in_normal(rng, hidden, hidden))
        self.bias = parameter(np.zeros(hidden))

    def __call__(self, x):
        pre = ad.linear(x, self.w_in, self.bias)
        # kernel computes h_{t-1} @ U^T, so hand it the transpose of the [in, out] weight
        return ad.rnn_scan(pre, ad.transpose(self.w_rec))


class GRUDirection(Module):
    def __init__(self, n_in, hidden, rng):
        self.hidden = hidden
        self.w_in = parameter(fan_in_normal(rng, n_in, 3 * hidden))
        self.w_rec = parameter(fan_in_normal(rng, hidden, 3 * hidden))
        self.bias = parameter(np.zeros(3 * hidden))

    def __call__(self, x):
        B, T, _ = x.shape
        H = self.hidden
        pre = ad.linear(x, self.w_in, self.bias)
        h = ad.Tensor(np.zeros((B, H)))
        outs = []
        for t in range(T):
            p = pre[:, t, :]
            r_ = h @ self.w_rec
            z = ad.sigmoid(p[:, :H] + r_[:, :H])
            r = ad.sigmoid(p[:, H:2 * H] + r_[:, H:2 * H])
            n = ad.tanh(p[:, 2 * H:] + r * r_[:, 2 * H:])
            h = (1.0 - z) * n + z * h
            outs.append(h)
        return ad.stack(outs, axis=1)


class BiRNN(Module):
    def __init__(self, n_in, cfg: NerConfig, rng):
        cell = ElmanDirection if cfg.cell == "elman" else GRUDirection
        h = cfg.rnn_hidden_dim
        self.forward_cells = [cell(n_in if i == 0 else 2 * h, h, rng) for i in range(cfg.rnn_layers)]
        self.backward_cells = [cell(n_in if i == 0 else 2 * h, h, rng) for i in range(cfg.rnn_layers)]

    def __call__(self, x, lengths=None):
        """``[B, T, d] -> [B, T, 2h]``; positions past ``lengths[b]`` never influence real ones."""
        single = x.ndim == 2
        if single:
            x = x.reshape(1, *x.shape)
        B, T, _ = x.shape
        if lengths is None:
            lengths = np.full(B, T)
        rev = (np.arange(B)[:, None], reverse_index(lengths, T))
        for fwd, bwd in zip(self.forward_cells, self.backward_cells):
            hf = fwd(x)
            # the reversal is its own inverse and a permutation, so no accumulation
            hb = ad.gather_unique(bwd(ad.gather_unique(x, rev)), rev)
            x = ad.concat([hf, hb], axis=-1)
        return x.reshape(T, -1) if single else x


class NerHead(Module):
    def __init__(self, n_in, cfg: NerConfig, rng, tagset: TagSet = None):
        cfg.validate()
        self.cfg = cfg
        self.tagset = tagset or TagSet()
        self.birnn = BiRNN(n_in, cfg, rng)
        self.hidden = Linear(2 * cfg.rnn_hidden_dim, cfg.classifier_hidden_dim, rng)
        self.logits = Linear(cfg.classifier_hidden_dim, len(self.tagset), rng)

    def classify_tokens(self, hidden):
        return self.logits(ad.relu(self.hidden(hidden)))

    def __call__(self, embeddings, lengths=None):
        return self.classify_tokens(self.birnn(embeddings, lengths))


def argmax_tags(logits, tagset: TagSet):
    """Per-token argmax over ``[T, C]`` logits; ties go to the lowest tag index."""
    return tagset.decode(np.argmax(np.asarray(logits), axis=-1).tolist())


def logits_to_spans(logits, tagset: TagSet):
    return decode_spans(argmax_tags(logits, tagset))
