"""Step 1: a recurrent sentence VAE over a diagonal-Gaussian latent space.

The encoder is a bidirectional recurrent net whose two final hidden states
feed linear heads for the posterior mean and log standard deviation; a
linear projection of the latent code initializes the decoder state. The
KL weight follows a sigmoid schedule clamped at its target, and decoder
inputs get word dropout so the code has to carry sentence content.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from . import autodiff as ad
from . import nn
from .corpus import BOS_ID, EOS_ID, PAD_ID, UNK_ID, pad_batch
from .metrics import bleu_smoothed


@dataclass
class VaeConfig:
    vocab_size: int
    emb_dim: int = 300
    hidden: int = 512
    d_z: int = 128
    cell: str = "lstm"


@dataclass
class AnnealSchedule:
    """Sigmoid ramp of the KL weight: midpoint at horizon/2, clamped after.

    The steepness is fixed so the ramp covers 99.9% of the target at the
    horizon (logistic(k * horizon/2) = 0.999).
    """

    lam_max: float = 0.15
    horizon: int = 4500

    def weight(self, t):
        if t < 0:
            raise ValueError("anneal weight: t must be >= 0")
        if self.horizon <= 0 or t >= self.horizon:
            return self.lam_max
        t0 = self.horizon / 2.0
        k = math.log(999.0) / t0
        return self.lam_max / (1.0 + math.exp(-k * (t - t0)))


class PosteriorParams(NamedTuple):
    mu: np.ndarray
    log_sigma: np.ndarray


def reparameterize(post, rng):
    """z = mu + sigma * eps with eps ~ N(0, I)."""
    eps = rng.standard_normal(post.mu.shape)
    return post.mu + np.exp(post.log_sigma) * eps


def kl_to_standard_normal(post):
    """Closed-form KL(N(mu, diag sigma^2) || N(0, I)), summed over dims."""
    mu, ls = post.mu, post.log_sigma
    return float(np.sum(0.5 * (mu * mu + np.exp(2.0 * ls) - 1.0 - 2.0 * ls)))


def kl_terms(mu, log_sigma):
    """Tape version: per-sample KL, shape [B]."""
    var = ad.exp(ad.mul(log_sigma, 2.0))
    mu2 = ad.mul(mu, mu)
    inner = ad.sub(ad.sub(ad.add(mu2, var), 1.0), ad.mul(log_sigma, 2.0))
    return ad.mul(ad.tsum(inner, axis=1), 0.5)


def word_dropout(ids, p, rng):
    """Replace eligible decoder-input tokens by UNK with probability p.

    PAD/BOS/EOS are never replaced. Operates on an int array of any shape
    and never touches reconstruction targets (callers pass a copy of the
    decoder inputs only).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("word dropout probability must be in [0, 1]")
    ids = np.array(ids, dtype=np.int64)
    if p == 0.0:
        return ids
    eligible = (ids != PAD_ID) & (ids != BOS_ID) & (ids != EOS_ID)
    hit = rng.random(ids.shape) < p
    ids[eligible & hit] = UNK_ID
    return ids


class SentenceVae:
    def __init__(self, cfg, rng):
        self.cfg = cfg
        e, h, dz = cfg.emb_dim, cfg.hidden, cfg.d_z
        self.emb = ad.Tensor(
            rng.uniform(-0.1, 0.1, size=(cfg.vocab_size, e)), name="emb"
        )
        self.enc_fw = nn.make_cell(cfg.cell, rng, e, h, "enc_fw.")
        self.enc_bw = nn.make_cell(cfg.cell, rng, e, h, "enc_bw.")
        self.head_mu = nn.Linear(rng, 2 * h, dz, "head_mu.")
        self.head_ls = nn.Linear(rng, 2 * h, dz, "head_ls.")
        self.latent_to_state = nn.Linear(rng, dz, 2 * h, "latent_to_state.")
        self.dec = nn.make_cell(cfg.cell, rng, e, h, "dec.")
        self.out_proj = nn.Linear(rng, h, cfg.vocab_size, "out_proj.")

    def parameters(self):
        params = [self.emb]
        for part in (self.enc_fw, self.enc_bw, self.head_mu, self.head_ls,
                     self.latent_to_state, self.dec, self.out_proj):
            params.extend(part.parameters())
        return params

    def state_dict(self):
        return {p.name: p.data for p in self.parameters()}

    def load_state_dict(self, state):
        for p in self.parameters():
            arr = state[p.name]
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"checkpoint tensor {p.name} has shape {arr.shape}, "
                    f"model expects {p.data.shape}"
                )
            p.data[...] = arr

    # -- encoding ----------------------------------------------------

    def _final_state(self, cell, ids, lengths):
        """Run one direction and pick h at each sample's last real token."""
        bsz, width = ids.shape
        h, c = cell.initial_state(bsz)
        final = ad.Tensor(np.zeros((bsz, cell.d_hid)))
        for t in range(width):
            x = ad.gather_rows(self.emb, ids[:, t])
            h, c = cell.step(x, h, c)
            pick = (lengths - 1 == t)
            if pick.any():
                ind = pick.astype(np.float64)[:, None]
                final = ad.add(final, ad.mul(h, ad.Tensor(ind)))
        return final

    def encode_batch(self, ids, lengths):
        """Posterior heads over a padded id batch; returns (mu, log_sigma)."""
        if ids.min() < 0 or ids.max() >= self.cfg.vocab_size:
            raise ad.ShapeError("encode: token id out of vocabulary range")
        rev = np.full_like(ids, PAD_ID)
        for i, ln in enumerate(lengths):
            rev[i, :ln] = ids[i, :ln][::-1]
        fw = self._final_state(self.enc_fw, ids, lengths)
        bw = self._final_state(self.enc_bw, rev, lengths)
        summary = ad.concat([fw, bw], axis=1)
        return self.head_mu(summary), self.head_ls(summary)

    def encode(self, utterance):
        """Single-utterance posterior as plain arrays."""
        if len(utterance) == 0:
            raise ValueError("encode: empty utterance")
        ids, lengths, _ = pad_batch([utterance])
        mu, ls = self.encode_batch(ids, lengths)
        return PosteriorParams(mu.data[0].copy(), ls.data[0].copy())

    def encode_many(self, utterances, batch_size=128):
        """Posterior means/log-sigmas for a list of utterances, [N, d_z]."""
        mus, lss = [], []
        for start in range(0, len(utterances), batch_size):
            chunk = utterances[start:start + batch_size]
            ids, lengths, _ = pad_batch(chunk)
            mu, ls = self.encode_batch(ids, lengths)
            mus.append(mu.data)
            lss.append(ls.data)
        return np.concatenate(mus, axis=0), np.concatenate(lss, axis=0)

    # -- decoding ----------------------------------------------------

    def _decoder_init(self, z):
        h = self.cfg.hidden
        init = self.latent_to_state(z)
        return (
            ad.tslice(init, (slice(None), slice(0, h))),
            ad.tslice(init, (slice(None), slice(h, 2 * h))),
        )

    def decode_teacher_forced(self, z, dec_input_ids):
        """Per-step logits [B, vocab] for each decoder input column."""
        h, c = self._decoder_init(z)
        logits = []
        for t in range(dec_input_ids.shape[1]):
            x = ad.gather_rows(self.emb, dec_input_ids[:, t])
            h, c = self.dec.step(x, h, c)
            logits.append(self.out_proj(h))
        return logits

    def reconstruction_nll(self, z, dec_input_ids, target_ids, target_mask):
        """Masked softmax cross-entropy summed over steps and batch."""
        h, c = self._decoder_init(z)
        total = ad.Tensor(0.0)
        for t in range(dec_input_ids.shape[1]):
            x = ad.gather_rows(self.emb, dec_input_ids[:, t])
            h, c = self.dec.step(x, h, c)
            step_losses = ad.softmax_xent(self.out_proj(h), target_ids[:, t])
            total = ad.add(total, ad.tsum(ad.mul(step_losses, ad.Tensor(target_mask[:, t]))))
        return total

    def greedy_decode(self, z, max_len=30, rng=None):
        """Decode latent codes [B, d_z] without recording; ids exclude BOS.

        Greedy argmax unless an rng is given, in which case each token is
        sampled from the softmax (the alternative stochasticity source).
        Stops each row at EOS; returns one id tuple per row.
        """
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z[None, :]
        bsz = z.shape[0]
        hid = self.cfg.hidden
        init = z @ self.latent_to_state.w.data + self.latent_to_state.b.data
        h, c = init[:, :hid], np.ascontiguousarray(init[:, hid:])
        tok = np.full(bsz, BOS_ID, dtype=np.int64)
        alive = np.ones(bsz, dtype=bool)
        rows = [[] for _ in range(bsz)]
        wd, bd = self.dec.w.data, self.dec.b.data
        for _ in range(max_len):
            x = self.emb.data[tok]
            if self.cfg.cell == "lstm":
                pre = np.concatenate([x, h], axis=1) @ wd + bd
                h, c, _ = _kernels.lstm_gates_forward(pre, c)
            else:
                ht, ct = self.dec.step(ad.Tensor(x), ad.Tensor(h), ad.Tensor(c))
                h, c = ht.data, ct.data
            logits = h @ self.out_proj.w.data + self.out_proj.b.data
            if rng is None:
                tok = logits.argmax(axis=1)
            else:
                shifted = logits - logits.max(axis=1, keepdims=True)
                probs = np.exp(shifted)
                probs /= probs.sum(axis=1, keepdims=True)
                tok = np.array(
                    [rng.choice(len(p), p=p) for p in probs], dtype=np.int64
                )
            for i in range(bsz):
                if alive[i]:
                    if tok[i] == EOS_ID:
                        alive[i] = False
                    else:
                        rows[i].append(int(tok[i]))
            if not alive.any():
                break
        return [tuple(r) for r in rows]

    # -- loss ----------------------------------------------------------

    def loss(self, ids, lengths, mask, lam, word_dropout_p, rng):
        """Single-sample ELBO estimate for one padded utterance batch.

        Returns (loss Tensor, stats dict). Loss is the batch mean of
        reconstruction NLL plus lam times the KL penalty.
        """
        if lam < 0.0:
            raise ValueError("KL weight must be >= 0")
        bsz = ids.shape[0]
        mu, log_sigma = self.encode_batch(ids, lengths)
        eps = rng.standard_normal(mu.data.shape)
        z = ad.add(mu, ad.mul(ad.exp(log_sigma), ad.Tensor(eps)))
        dec_in = word_dropout(ids[:, :-1], word_dropout_p, rng)
        targets = ids[:, 1:]
        tmask = mask[:, 1:]
        nll_sum = self.reconstruction_nll(z, dec_in, targets, tmask)
        kl_sum = ad.tsum(kl_terms(mu, log_sigma))
        loss = ad.mul(ad.add(nll_sum, ad.mul(kl_sum, lam)), 1.0 / bsz)
        stats = {
            "nll": float(nll_sum.data) / bsz,
            "kl": float(kl_sum.data) / bsz,
            "lam": lam,
        }
        return loss, stats


@dataclass
class VaeTrainConfig:
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    clip_norm: float = 5.0
    word_dropout: float = 0.5
    anneal: AnnealSchedule = field(default_factory=AnnealSchedule)
    stop_recon_bleu: float | None = None
    max_decode_len: int = 30


def _validate(model, valid_utts, lam, rng):
    """Deterministic validation pass: ELBO parts plus reconstruction BLEU."""
    ids, lengths, mask = pad_batch(valid_utts)
    mu, log_sigma = model.encode_batch(ids, lengths)
    eps = rng.standard_normal(mu.data.shape)
    z = mu.data + np.exp(log_sigma.data) * eps
    nll = model.reconstruction_nll(
        ad.Tensor(z), ids[:, :-1], ids[:, 1:], mask[:, 1:]
    )
    post = PosteriorParams(mu.data, log_sigma.data)
    kl = kl_to_standard_normal(post) / len(valid_utts)
    nll_mean = float(nll.data) / len(valid_utts)
    decoded = model.greedy_decode(mu.data, max_len=ids.shape[1] + 8)
    bleus = []
    for got, want in zip(decoded, valid_utts):
        ref = [t for t in want if t not in (PAD_ID, BOS_ID, EOS_ID)]
        hyp = [t for t in got if t != PAD_ID]
        bleus.append(bleu_smoothed(hyp, ref) if ref else 0.0)
    return {
        "val_nll": nll_mean,
        "val_kl": kl,
        "val_elbo": nll_mean + lam * kl,
        "val_recon_bleu": sum(bleus) / max(len(bleus), 1),
    }


def train_vae(train_utts, valid_utts, cfg, train_cfg, seed=0):
    """Train the sentence VAE; returns (model, per-epoch log).

    The model is left holding the best-validation-ELBO parameters. A
    non-finite loss aborts training and keeps the last good snapshot.
    """
    if not train_utts:
        raise ValueError("train_vae: empty training set")
    root = np.random.SeedSequence(seed)
    init_ss, data_ss = root.spawn(2)
    rng = np.random.default_rng(init_ss)
    model = SentenceVae(cfg, rng)
    data_rng = np.random.default_rng(data_ss)
    opt = nn.Adam(model.parameters(), lr=train_cfg.lr)
    params = model.parameters()
    log = []
    best = {"elbo": math.inf, "state": None, "epoch": -1}
    step = 0
    diverged = False
    for epoch in range(train_cfg.epochs):
        order = data_rng.permutation(len(train_utts))
        epoch_loss = 0.0
        epoch_kl = 0.0
        nbatches = 0
        try:
            for start in range(0, len(order), train_cfg.batch_size):
                chunk = [train_utts[i] for i in order[start:start + train_cfg.batch_size]]
                ids, lengths, mask = pad_batch(chunk)
                lam = train_cfg.anneal.weight(step)
                tape = ad.Tape()
                with tape:
                    loss, stats = model.loss(
                        ids, lengths, mask, lam, train_cfg.word_dropout, data_rng
                    )
                grads = tape.backward(loss, params=params)
                nn.clip_global_norm(grads, params, train_cfg.clip_norm)
                opt.step(grads)
                step += 1
                epoch_loss += float(loss.data)
                epoch_kl += stats["kl"]
                nbatches += 1
        except ad.NonFiniteError:
            diverged = True
        entry = {
            "epoch": epoch,
            "loss": epoch_loss / max(nbatches, 1),
            "kl": epoch_kl / max(nbatches, 1),
            "lam": train_cfg.anneal.weight(step),
            "diverged": diverged,
        }
        if diverged:
            log.append(entry)
            break
        val_rng = np.random.default_rng(np.random.SeedSequence([seed, 9001, epoch]))
        entry.update(_validate(model, valid_utts, train_cfg.anneal.lam_max, val_rng))
        log.append(entry)
        if entry["val_elbo"] < best["elbo"]:
            best = {
                "elbo": entry["val_elbo"],
                "state": {k: v.copy() for k, v in model.state_dict().items()},
                "epoch": epoch,
            }
        if (
            train_cfg.stop_recon_bleu is not None
            and entry["val_recon_bleu"] >= train_cfg.stop_recon_bleu
        ):
            break
    if best["state"] is not None:
        model.load_state_dict(best["state"])
    return model, log
