"""Step 2: conditional adversarial training on the frozen VAE latent space.

The generator maps a query code (optionally concatenated with a context
vector) to a predicted response code; the discriminator scores
(response code, conditioning) pairs. The generator objective combines the
adversarial term with a gamma-weighted mean squared error to the true
response code.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn

PRESETS = ("appendix", "relu", "logreg")


@dataclass
class GanConfig:
    d_z: int = 128
    d_ctx: int = 0
    g_hidden: int = 256
    d_hidden: int = 256
    # "appendix": LeakyReLU + batch-norm hidden layer in G, LeakyReLU in D.
    # "relu": plain ReLU hidden layers, no normalization.
    # "logreg": like "relu" for G, single logistic layer for D.
    preset: str = "appendix"
    # "nonsaturating" maximizes log D(fake); "minimax" minimizes
    # log(1 - D(fake)) literally.
    adv_form: str = "nonsaturating"
    leaky_slope: float = 0.01

    @property
    def d_cond(self):
        return self.d_z + self.d_ctx

    def validate(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}, want one of {PRESETS}")
        if self.adv_form not in ("nonsaturating", "minimax"):
            raise ValueError(f"unknown adversarial form {self.adv_form!r}")


class Generator:
    """Two-layer perceptron from conditioning vector to response code."""

    def __init__(self, cfg, rng):
        cfg.validate()
        self.cfg = cfg
        self.l1 = nn.Linear(rng, cfg.d_cond, cfg.g_hidden, "gen.l1.")
        self.l2 = nn.Linear(rng, cfg.g_hidden, cfg.d_z, "gen.l2.")
        self.bn = (
            nn.BatchNorm(cfg.g_hidden, prefix="gen.bn.")
            if cfg.preset == "appendix"
            else None
        )

    def __call__(self, cond, train=False):
        if cond.data.ndim != 2 or cond.data.shape[1] != self.cfg.d_cond:
            raise ad.ShapeError(
                f"generator: expected input [batch, {self.cfg.d_cond}], "
                f"got {cond.data.shape}"
            )
        hidden = self.l1(cond)
        if self.bn is not None:
            hidden = self.bn(hidden, train)
            hidden = ad.leaky_relu(hidden, self.cfg.leaky_slope)
        else:
            hidden = ad.relu(hidden)
        return self.l2(hidden)

    def forward_np(self, cond):
        """Frozen evaluation on a plain array (eval-mode normalization)."""
        out = self(ad.Tensor(np.atleast_2d(cond)), train=False)
        return out.data

    def parameters(self):
        params = self.l1.parameters() + self.l2.parameters()
        if self.bn is not None:
            params += self.bn.parameters()
        return params

    def state_dict(self):
        d = {p.name: p.data for p in self.parameters()}
        if self.bn is not None:
            d["gen.bn.running_mean"] = self.bn.running_mean
            d["gen.bn.running_var"] = self.bn.running_var
        return d

    def load_state_dict(self, state):
        for p in self.parameters():
            p.data[...] = state[p.name]
        if self.bn is not None:
            self.bn.running_mean[...] = state["gen.bn.running_mean"]
            self.bn.running_var[...] = state["gen.bn.running_var"]


class Discriminator:
    """Scores (response code, conditioning) pairs with one logit."""

    def __init__(self, cfg, rng):
        cfg.validate()
        self.cfg = cfg
        d_in = cfg.d_z + cfg.d_cond
        if cfg.preset == "logreg":
            self.l1 = None
            self.l2 = nn.Linear(rng, d_in, 1, "disc.out.")
        else:
            self.l1 = nn.Linear(rng, d_in, cfg.d_hidden, "disc.l1.")
            self.l2 = nn.Linear(rng, cfg.d_hidden, 1, "disc.out.")

    def logits(self, z_resp, cond):
        if z_resp.data.shape[1] != self.cfg.d_z:
            raise ad.ShapeError(
                f"discriminator: response code width {z_resp.data.shape[1]}, "
                f"expected {self.cfg.d_z}"
            )
        if cond.data.shape[1] != self.cfg.d_cond:
            raise ad.ShapeError(
                f"discriminator: conditioning width {cond.data.shape[1]}, "
                f"expected {self.cfg.d_cond}"
            )
        x = ad.concat([z_resp, cond], axis=1)
        if self.l1 is not None:
            if self.cfg.preset == "appendix":
                x = ad.leaky_relu(self.l1(x), self.cfg.leaky_slope)
            else:
                x = ad.relu(self.l1(x))
        return ad.reshape(self.l2(x), (-1,))

    def prob(self, z_resp, cond):
        """D(z_resp, cond) as a probability in (0, 1)."""
        return ad.sigmoid(self.logits(z_resp, cond))

    def parameters(self):
        params = self.l2.parameters()
        if self.l1 is not None:
            params = self.l1.parameters() + params
        return params

    def state_dict(self):
        return {p.name: p.data for p in self.parameters()}

    def load_state_dict(self, state):
        for p in self.parameters():
            p.data[...] = state[p.name]


def discriminator_loss(disc, z_real, z_fake, cond):
    """-mean[log D(real) + log(1 - D(fake))], in stable logit form.

    The fake codes are passed as plain arrays, so no gradient reaches the
    generator that produced them.
    """
    real_logits = disc.logits(ad.Tensor(z_real), ad.Tensor(cond))
    fake_logits = disc.logits(ad.Tensor(z_fake), ad.Tensor(cond))
    loss_real = ad.tmean(ad.bce_with_logits(real_logits, np.ones(real_logits.data.shape)))
    loss_fake = ad.tmean(ad.bce_with_logits(fake_logits, np.zeros(fake_logits.data.shape)))
    return ad.add(loss_real, loss_fake)


def generator_loss(gen, disc, cond, z_real, gamma, train=True, adv_weight=1.0):
    """Adversarial + gamma * MSE objective for the generator.

    Returns (total, parts) where parts holds the adversarial and MSE
    components as floats. The discriminator is evaluated inside the same
    tape, but only generator (and conditioning) parameters are stepped.
    Setting adv_weight to 0 turns the objective into pure least squares.
    """
    if gamma < 0.0:
        raise ValueError("gamma must be >= 0")
    bsz = cond.data.shape[0] if isinstance(cond, ad.Tensor) else cond.shape[0]
    cond_t = cond if isinstance(cond, ad.Tensor) else ad.Tensor(cond)
    z_fake = gen(cond_t, train=train)
    fake_logits = disc.logits(z_fake, cond_t)
    if gen.cfg.adv_form == "nonsaturating":
        adv = ad.tmean(ad.bce_with_logits(fake_logits, np.ones(fake_logits.data.shape)))
    else:
        # literal minimax: minimize log(1 - D(fake)) = -softplus(logit)
        adv = ad.neg(ad.tmean(ad.bce_with_logits(fake_logits, np.zeros(fake_logits.data.shape))))
    mse = ad.mul(ad.squared_error(ad.Tensor(z_real), z_fake), 1.0 / bsz)
    total = ad.add(ad.mul(adv, adv_weight), ad.mul(mse, gamma))
    parts = {"adv": float(adv.data), "mse": float(mse.data)}
    return total, parts


@dataclass
class LatentPairs:
    """Query/response codes (and optional context code sequences)."""

    z_q: np.ndarray
    z_r: np.ndarray
    contexts: list | None = None  # per-sample [L_i, d_z] arrays

    def __post_init__(self):
        if self.z_q.shape != self.z_r.shape:
            raise ValueError("latent pair arrays must have matching shapes")
        if self.contexts is not None and len(self.contexts) != len(self.z_q):
            raise ValueError("contexts must align with the pair arrays")

    def __len__(self):
        return self.z_q.shape[0]

    def subset(self, idx):
        ctx = None if self.contexts is None else [self.contexts[i] for i in idx]
        return LatentPairs(self.z_q[idx], self.z_r[idx], ctx)


@dataclass
class GanTrainConfig:
    gamma: float = 1.0
    adv_weight: float = 1.0
    d_steps_per_g: int = 1
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    clip_norm: float = 5.0
    mse_stop: float | None = None  # stop once held-out MSE falls below

    def validate(self):
        errors = []
        if self.gamma < 0:
            errors.append("gamma must be >= 0")
        if self.d_steps_per_g < 1:
            errors.append("d_steps_per_g must be >= 1")
        if self.lr_g <= 0 or self.lr_d <= 0:
            errors.append("learning rates must be positive")
        if self.batch_size < 2:
            errors.append("batch_size must be >= 2 (batch norm needs it)")
        if self.epochs < 1:
            errors.append("epochs must be >= 1")
        return errors


def _build_cond(z_q, contexts, ctx_encoder, train):
    """Conditioning tensor [B, d_cond]; context part on-tape if training."""
    zq_t = ad.Tensor(z_q)
    if ctx_encoder is None:
        return zq_t
    c = ctx_encoder.encode_batch(contexts, train=train)
    return ad.concat([zq_t, c], axis=1)


def heldout_stats(gen, disc, pairs, ctx_encoder=None):
    """Held-out MSE and discriminator accuracy with frozen everything."""
    cond = _build_cond(
        pairs.z_q,
        None if pairs.contexts is None else pairs.contexts,
        ctx_encoder,
        train=False,
    )
    z_fake = gen(cond, train=False).data
    mse = float(np.mean(np.sum((pairs.z_r - z_fake) ** 2, axis=1)))
    p_real = disc.prob(ad.Tensor(pairs.z_r), cond).data
    p_fake = disc.prob(ad.Tensor(z_fake), cond).data
    acc = 0.5 * (float(np.mean(p_real > 0.5)) + float(np.mean(p_fake < 0.5)))
    return {"heldout_mse": mse, "heldout_d_acc": acc}


def train_gan(train_pairs, valid_pairs, cfg, train_cfg, seed=0,
              ctx_encoder=None):
    """Alternating adversarial training; returns (gen, disc, log).

    Runs train_cfg.d_steps_per_g discriminator updates per generator
    update. The context encoder, when present, is trained by the
    generator objective only; discriminator updates see its output as a
    constant.
    """
    errors = train_cfg.validate()
    if errors:
        raise ValueError("invalid GAN training config: " + "; ".join(errors))
    root = np.random.SeedSequence(seed)
    g_ss, d_ss, order_ss = root.spawn(3)
    gen = Generator(cfg, np.random.default_rng(g_ss))
    disc = Discriminator(cfg, np.random.default_rng(d_ss))
    order_rng = np.random.default_rng(order_ss)

    g_params = gen.parameters()
    if ctx_encoder is not None:
        g_params = g_params + ctx_encoder.parameters()
    d_params = disc.parameters()
    opt_g = nn.Adam(g_params, lr=train_cfg.lr_g)
    opt_d = nn.Adam(d_params, lr=train_cfg.lr_d)

    log = []
    n = len(train_pairs)
    bsz = min(train_cfg.batch_size, n)
    for epoch in range(train_cfg.epochs):
        order = order_rng.permutation(n)
        d_losses, g_advs, g_mses = [], [], []
        cursor = 0

        def next_batch():
            nonlocal cursor, order
            if cursor + bsz > n:
                order = order_rng.permutation(n)
                cursor = 0
            idx = order[cursor:cursor + bsz]
            cursor += bsz
            return train_pairs.subset(idx)

        steps_per_epoch = max(1, n // bsz)
        try:
            for _ in range(steps_per_epoch):
                for _ in range(train_cfg.d_steps_per_g):
                    batch = next_batch()
                    cond = _build_cond(
                        batch.z_q, batch.contexts, ctx_encoder, train=False
                    )
                    z_fake = gen(cond, train=True).data
                    tape = ad.Tape()
                    with tape:
                        d_loss = discriminator_loss(
                            disc, batch.z_r, z_fake, cond.data
                        )
                    grads = tape.backward(d_loss, params=d_params)
                    nn.clip_global_norm(grads, d_params, train_cfg.clip_norm)
                    opt_d.step(grads)
                    d_losses.append(float(d_loss.data))

                batch = next_batch()
                tape = ad.Tape()
                with tape:
                    cond = _build_cond(
                        batch.z_q, batch.contexts, ctx_encoder, train=True
                    )
                    g_loss, parts = generator_loss(
                        gen, disc, cond, batch.z_r, train_cfg.gamma,
                        train=True, adv_weight=train_cfg.adv_weight,
                    )
                grads = tape.backward(g_loss, params=g_params)
                nn.clip_global_norm(grads, g_params, train_cfg.clip_norm)
                opt_g.step(grads)
                g_advs.append(parts["adv"])
                g_mses.append(parts["mse"])
        except ad.NonFiniteError:
            log.append({"epoch": epoch, "diverged": True})
            break

        entry = {
            "epoch": epoch,
            "d_loss": float(np.mean(d_losses)) if d_losses else math.nan,
            "g_adv": float(np.mean(g_advs)),
            "g_mse": float(np.mean(g_mses)),
            "diverged": False,
        }
        entry.update(heldout_stats(gen, disc, valid_pairs, ctx_encoder))
        log.append(entry)
        if (
            train_cfg.mse_stop is not None
            and entry["heldout_mse"] < train_cfg.mse_stop
        ):
            break
    return gen, disc, log
