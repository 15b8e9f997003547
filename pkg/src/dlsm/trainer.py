"""SGVB training loop with KL warm-up and early stopping on validation AUC."""

import copy
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .config import ModelConfig
from .decoder import DecoderStack, pair_logits
from .encoder import EncoderStack, normalize_adjacency, to_torch_sparse
from .errors import InvariantViolation, NumericError, TrainingDivergedError
from .metrics import auc as auc_score
from .objective import DenseTarget, SampledTarget, elbo_loss
from .rng import substream, torch_generator

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "kl_z", "kl_s", "kl_gamma", "kl_delta", "recon", "total", "val_auc")


@dataclass
class TrainedModel:
    """Best-validation snapshot of a training run.

    ``posterior`` holds numpy arrays from the deterministic posterior-mean pass:
    output-layer ``z, gamma, delta``, ``beta``, and per-layer ``mu_l, sigma_l,
    pi_l, xi_l, psi_l, s_l`` (hard memberships) for ``l = 1..L-1``.
    """

    config: ModelConfig
    state: dict
    posterior: dict
    history: list
    n: int
    labels: list
    split: dict
    in_dim: int
    best_epoch: int = -1
    best_val_auc: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def config_hash(self):
        return self.config.hash()

    def hard_memberships(self):
        return [self.posterior[f"s_{l}"] for l in range(1, len(self.config.decoder_sizes) + 1)]


def build_modules(config, in_dim, generator=None):
    hyper = dict(v=config.v, temperature=config.temperature, prior_var=config.prior_variance, xi=config.xi, psi=config.psi)
    encoder = EncoderStack(in_dim, config.encoder_sizes, config.activation, config.leaky_slope, generator)
    decoder = DecoderStack(
        config.encoder_sizes, config.decoder_sizes, config.latent_dim, hyper, config.undirected, config.leaky_slope, generator
    )
    return encoder, decoder


def prepare_inputs(g, train_edges):
    """Normalised training adjacency and feature matrix (None means identity)."""
    train_graph = g.with_edges(train_edges)
    adj = to_torch_sparse(normalize_adjacency(train_graph))
    features = None if g.attributes is None else torch.as_tensor(g.attributes, dtype=torch.float64)
    return adj, features


@torch.no_grad()
def posterior_means(encoder, decoder, adj, features):
    hidden = encoder(adj, features)
    out = decoder(hidden, sample=False)
    post = {
        "z": out.z.numpy().copy(),
        "gamma": out.gamma.numpy().copy(),
        "delta": out.delta.numpy().copy(),
        "beta": decoder.beta.detach().numpy().copy(),
        "W_out": decoder.W_out.detach().numpy().copy(),
    }
    for l, layer in enumerate(out.layers, start=1):
        for key in ("mu", "sigma", "pi", "xi", "psi"):
            if layer.post[key] is not None:
                post[f"{key}_{l}"] = layer.post[key].numpy().copy()
        post[f"s_{l}"] = layer.hard_memberships().numpy().copy()
    return post


def score_pairs(posterior, pairs, mode="distance", undirected=False):
    """Edge probabilities for ``(k, 2)`` index pairs from posterior-mean embeddings."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    t = lambda key: torch.as_tensor(posterior[key])
    with torch.no_grad():
        x = pair_logits(t("z"), t("gamma"), t("delta"), t("beta"), pairs[:, 0], pairs[:, 1], mode, undirected)
        return torch.sigmoid(x).numpy()


def _temperature(config, epoch):
    if config.temperature_final is None or config.epochs <= 1:
        return config.temperature
    frac = min(1.0, epoch / (config.epochs - 1))
    return config.temperature + frac * (config.temperature_final - config.temperature)


def train(g, split, config=None, progress=None):
    """Fit the model on the training edges of ``split``.

    Held-out edges are absent from both the encoder adjacency and the
    reconstruction target. Returns the snapshot with the best validation AUC.

    Args:
        g: preprocessed :class:`~dlsm.graph.DirectedGraph`.
        split: :class:`~dlsm.graph.EdgeSplit`.
        config: :class:`ModelConfig`; defaults apply when None.
        progress: optional callable receiving each history row.

    Raises:
        TrainingDivergedError: loss non-finite for three consecutive epochs.
    """
    config = (config or ModelConfig()).validate()
    torch.set_num_threads(1)
    n = g.n
    adj, features = prepare_inputs(g, split.train_pos)
    in_dim = n if features is None else features.shape[1]
    encoder, decoder = build_modules(config, in_dim, torch_generator(config.seed, "init"))
    params = list(encoder.parameters()) + list(decoder.parameters())
    opt = torch.optim.Adam(params, lr=config.learning_rate)

    if n <= config.dense_max_nodes:
        target = DenseTarget(n, split.train_pos, config.pos_weight)
    else:
        target = SampledTarget(n, split.train_pos, substream(config.seed, "negatives"), config.neg_sample_factor, config.pos_weight)
    noise_rng = substream(config.seed, "sampling")

    val_pairs = np.concatenate([split.val_pos, split.val_neg])
    val_labels = np.r_[np.ones(len(split.val_pos)), np.zeros(len(split.val_neg))]

    history = []
    best = None
    best_auc = -np.inf
    stale = 0
    bad_epochs = 0
    max_col_dev = 0.0
    for epoch in range(config.epochs):
        kl_weight = 1.0 if config.kl_warmup == 0 else min(1.0, (epoch + 1) / config.kl_warmup)
        decoder.set_temperature(_temperature(config, epoch))
        noise = decoder.draw_noise(n, noise_rng)
        try:
            hidden = encoder(adj, features)
            out = decoder(hidden, noise)
            loss = elbo_loss(out, target, decoder.beta, config.mode, config.undirected, decoder.hyper["temperature"], kl_weight)
            finite = bool(torch.isfinite(loss.total))
        except NumericError as exc:
            log.warning("epoch %d: %s", epoch, exc)
            finite = False
        if not finite:
            bad_epochs += 1
            if bad_epochs >= 3:
                raise TrainingDivergedError(f"loss not finite for 3 consecutive epochs (last epoch {epoch})")
            continue
        bad_epochs = 0
        opt.zero_grad()
        loss.total.backward()
        opt.step()

        col_dev = float((decoder.W_out.detach().sum(dim=0) - 1.0).abs().max())
        max_col_dev = max(max_col_dev, col_dev)
        if col_dev > 1e-6:
            raise InvariantViolation(f"W_out columns drifted from 1 by {col_dev:.3g} at epoch {epoch}")

        post = posterior_means(encoder, decoder, adj, features)
        val_auc = auc_score(score_pairs(post, val_pairs, config.mode, config.undirected), val_labels)
        row = {"epoch": epoch, **loss.row(), "val_auc": val_auc}
        history.append(row)
        if progress is not None:
            progress(row)
        if val_auc > best_auc:
            best_auc = val_auc
            best = (epoch, post, copy.deepcopy({"encoder": encoder.state_dict(), "decoder": decoder.state_dict()}))
            stale = 0
        elif epoch >= config.kl_warmup:
            # validation AUC often dips while the KL weight ramps up; patience starts after
            stale += 1
            if stale >= config.patience:
                break

    if best is None:
        raise TrainingDivergedError("no finite training epoch")
    epoch, post, state = best
    state = {f"{part}.{k}": v.detach().numpy().copy() for part, sd in state.items() for k, v in sd.items()}
    return TrainedModel(
        config=config,
        state=state,
        posterior=post,
        history=history,
        n=n,
        labels=list(g.labels),
        split={k: np.asarray(v) for k, v in split.arrays().items()},
        in_dim=in_dim,
        best_epoch=epoch,
        best_val_auc=float(best_auc),
        meta={"split_seed": split.seed, "split_id": split.split_id(), "epochs_run": len(history), "max_w_out_deviation": max_col_dev},
    )


def restore_modules(model):
    """Rebuild encoder/decoder modules carrying the snapshot's parameters."""
    encoder, decoder = build_modules(model.config, model.in_dim)
    for part, module in (("encoder", encoder), ("decoder", decoder)):
        sd = {k[len(part) + 1 :]: torch.as_tensor(v) for k, v in model.state.items() if k.startswith(part + ".")}
        module.load_state_dict(sd)
    return encoder, decoder
