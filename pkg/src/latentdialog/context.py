"""Multi-turn context encoding over the VAE's utterance representations.

Each context utterance is represented by its posterior mean under the
frozen VAE; the sequence of means runs through a bidirectional recurrent
net whose concatenated final states form the context vector. An empty
context maps to the zero vector.
"""

import numpy as np

from . import autodiff as ad
from . import nn


class ContextEncoder:
    def __init__(self, rng, d_z=128, hidden=512, cell="lstm"):
        self.d_z = d_z
        self.hidden = hidden
        self.d_ctx = 2 * hidden
        self.fw = nn.make_cell(cell, rng, d_z, hidden, "ctx_fw.")
        self.bw = nn.make_cell(cell, rng, d_z, hidden, "ctx_bw.")

    def parameters(self):
        return self.fw.parameters() + self.bw.parameters()

    def state_dict(self):
        return {p.name: p.data for p in self.parameters()}

    def load_state_dict(self, state):
        for p in self.parameters():
            p.data[...] = state[p.name]

    def _direction(self, cell, steps, lengths):
        bsz = lengths.shape[0]
        h, c = cell.initial_state(bsz)
        final = ad.Tensor(np.zeros((bsz, cell.d_hid)))
        for t, x in enumerate(steps):
            h, c = cell.step(x, h, c)
            pick = (lengths - 1 == t)
            if pick.any():
                ind = pick.astype(np.float64)[:, None]
                final = ad.add(final, ad.mul(h, ad.Tensor(ind)))
        return final

    def encode_batch(self, contexts, train=False):
        """Context vectors [B, d_ctx] for per-sample [L_i, d_z] mean arrays.

        Samples with empty contexts contribute no final-state indicator and
        come out as exact zeros. `train` is accepted for interface symmetry;
        the encoder has no mode-dependent parts.
        """
        del train
        bsz = len(contexts)
        lengths = np.array([0 if c is None else len(c) for c in contexts],
                           dtype=np.int64)
        width = int(lengths.max()) if bsz else 0
        if width == 0:
            return ad.Tensor(np.zeros((bsz, self.d_ctx)))
        fw_steps, bw_steps = [], []
        for t in range(width):
            fw_t = np.zeros((bsz, self.d_z))
            bw_t = np.zeros((bsz, self.d_z))
            for i, ctx in enumerate(contexts):
                ln = lengths[i]
                if t < ln:
                    fw_t[i] = ctx[t]
                    bw_t[i] = ctx[ln - 1 - t]
            fw_steps.append(ad.Tensor(fw_t))
            bw_steps.append(ad.Tensor(bw_t))
        fw = self._direction(self.fw, fw_steps, lengths)
        bw = self._direction(self.bw, bw_steps, lengths)
        return ad.concat([fw, bw], axis=1)

    def encode(self, context_utterances, vae):
        """One context of token-id utterances -> context vector [d_ctx]."""
        if not context_utterances:
            return np.zeros(self.d_ctx)
        mus, _ = vae.encode_many(list(context_utterances))
        return self.encode_batch([mus]).data[0].copy()


def condition(z_q, c):
    """[z_q ; c]: the conditioning vector fed to generator and discriminator."""
    z_q = np.asarray(z_q, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if z_q.ndim == 1:
        return np.concatenate([z_q, c])
    return np.concatenate([z_q, c], axis=1)


def context_means(contexts, vae, batch_size=256):
    """Posterior-mean arrays for many contexts under a frozen VAE.

    Deduplicates utterances so each is encoded once. Returns one
    [L_i, d_z] array per context (empty contexts give a [0, d_z] array).
    """
    unique = {}
    for ctx in contexts:
        for utt in ctx:
            unique.setdefault(utt, None)
    utts = list(unique)
    if utts:
        mus, _ = vae.encode_many(utts, batch_size=batch_size)
        lookup = {utt: mus[i] for i, utt in enumerate(utts)}
    else:
        lookup = {}
    out = []
    for ctx in contexts:
        if ctx:
            out.append(np.stack([lookup[u] for u in ctx]))
        else:
            out.append(np.zeros((0, vae.cfg.d_z)))
    return out
