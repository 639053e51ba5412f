"""Training objectives: the two latent cycles and every loss assembled from them.

All losses are scalar tape nodes.  Batch expectations are arithmetic means.
Sign conventions on the adversarial losses follow a convention in which the
critic drives REAL samples toward low scores and fakes toward high ones
(equivalent to the usual one up to a global sign); do not "fix" the signs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .chamfer import nearest_distances, nearest_distances_pair
from .networks import CompositeLatent, NetworkBundle, sample_missing_code


def _reduce_batch(d, reduction):
    """Batch mean of per-cloud reductions over (B, N) nearest distances."""
    if reduction == "mean":
        return ad.mean(d)  # mean over B*N == batch mean of per-cloud means
    if reduction == "sum":
        return ad.scalar_mul(ad.sum_(d), 1.0 / d.data.shape[0])
    raise ValueError(f"unknown reduction {reduction!r}")


def chamfer_batch(p, q, reduction="mean"):
    fwd, rev = nearest_distances_pair(p, q)
    return ad.add(_reduce_batch(fwd, reduction), _reduce_batch(rev, reduction))


def partial_chamfer_batch(p, q, reduction="mean"):
    return _reduce_batch(nearest_distances(p, q), reduction)


def _batched(cloud):
    t = ad.as_tensor(cloud)
    if t.data.ndim == 2:
        t = ad.reshape(t, (1,) + t.data.shape)
    return t


# ---------------------------------------------------------------------------
# cycles


@dataclass
class IncompleteCycle:
    """Incomplete -> complete -> incomplete round trip intermediates."""

    x: Tensor                      # incomplete latent (B, d_x)
    transferred: CompositeLatent   # rep + predicted missing code
    pred_complete: Tensor          # decoded completion (B, N, 3) -- the artifact's output
    x_hat: Tensor                  # back-projection to the incomplete domain (B, d_x)
    cycle_recon: Tensor            # decoded x_hat (B, N, 3)


@dataclass
class CompleteCycle:
    """Complete -> incomplete -> complete round trip intermediates."""

    y_rep: Tensor                  # complete latent (B, d_r)
    code: Tensor | None            # sampled missing code (B, d_z)
    y_full: Tensor                 # [rep : code] (B, d_r + d_z)
    y_x: Tensor                    # transferred incomplete latent (B, d_x)
    pred_incomplete: Tensor        # decoded fake incomplete cloud (B, N, 3)
    y_hat: CompositeLatent         # re-transfer; .code is the predicted missing code
    cycle_recon: Tensor            # decoded y_hat.rep (B, N, 3)


def incomplete_cycle(bundle: NetworkBundle, clouds, latent=None) -> IncompleteCycle:
    """``latent`` short-circuits the encoder (e.g. a precomputed constant)."""
    x = bundle.encoder_incomplete(_batched(clouds)) if latent is None else latent
    transferred = bundle.to_complete(x)
    pred_complete = bundle.decoder_complete(transferred.rep)
    x_hat = bundle.to_incomplete(transferred.full)
    cycle_recon = bundle.decoder_incomplete(x_hat)
    return IncompleteCycle(x, transferred, pred_complete, x_hat, cycle_recon)


def complete_cycle(bundle: NetworkBundle, clouds, rng=None, code=None,
                   latent=None) -> CompleteCycle:
    clouds = _batched(clouds)
    y_rep = bundle.encoder_complete(clouds) if latent is None else latent
    code_dim = bundle.dims.code_dim
    if code_dim == 0:
        code = None
        y_full = y_rep
    else:
        if code is None:
            code = sample_missing_code(rng, code_dim, batch=clouds.data.shape[0])
        else:
            code = ad.as_tensor(code)
        y_full = ad.concat_last(y_rep, code)
    y_x = bundle.to_incomplete(y_full)
    pred_incomplete = bundle.decoder_incomplete(y_x)
    y_hat = bundle.to_complete(y_x)
    cycle_recon = bundle.decoder_complete(y_hat.rep)
    return CompleteCycle(y_rep, code, y_full, y_x, pred_incomplete, y_hat, cycle_recon)


# ---------------------------------------------------------------------------
# losses


def loss_ae(bundle: NetworkBundle, clouds_incomplete, clouds_complete, reduction="mean"):
    """Reconstruction loss of both autoencoders."""
    px = _batched(clouds_incomplete)
    py = _batched(clouds_complete)
    recon_x = bundle.decoder_incomplete(bundle.encoder_incomplete(px))
    recon_y = bundle.decoder_complete(bundle.encoder_complete(py))
    return ad.add(chamfer_batch(px, recon_x, reduction), chamfer_batch(py, recon_y, reduction))


def loss_code(sampled, predicted):
    """Squared Euclidean distance between sampled and recovered missing codes."""
    sampled = ad.as_tensor(sampled)
    predicted = ad.as_tensor(predicted)
    if sampled.data.shape != predicted.data.shape:
        raise ad.ShapeError("loss-code", sampled.shape, predicted.shape)
    sq = ad.square(ad.sub(sampled, predicted))
    if sq.data.ndim == 1:
        return ad.sum_(sq)
    return ad.scalar_mul(ad.sum_(sq), 1.0 / sq.data.shape[0])  # batch mean of squared norms


def loss_cycle(clouds_incomplete, recon_incomplete, clouds_complete, recon_complete,
               reduction="mean"):
    """Round-trip shape consistency on both cycles."""
    a = chamfer_batch(_batched(clouds_incomplete), _batched(recon_incomplete), reduction)
    b = chamfer_batch(_batched(clouds_complete), _batched(recon_complete), reduction)
    return ad.add(a, b)


def loss_partial(clouds_incomplete, pred_complete, pred_incomplete, clouds_complete,
                 reduction="mean"):
    """One-directional containment, always pointing from incomplete to complete."""
    a = partial_chamfer_batch(_batched(clouds_incomplete), _batched(pred_complete), reduction)
    b = partial_chamfer_batch(_batched(pred_incomplete), _batched(clouds_complete), reduction)
    return ad.add(a, b)


def critic_loss(critic, real, fake, lambda_gp, gp_mode="real", rng=None):
    """Critic objective with gradient penalty; returns (loss, penalty_term).

    The penalty is evaluated at the real samples by default; ``interpolate``
    evaluates it at per-sample random mixtures of real and fake instead.
    """
    real = ad.as_tensor(real)
    fake = ad.as_tensor(fake)
    base = ad.sub(ad.mean(critic.score(real)), ad.mean(critic.score(fake)))
    if gp_mode == "real":
        at = real
    elif gp_mode == "interpolate":
        eps = rng.uniform(size=(real.data.shape[0], 1))
        at = ad.constant(eps * real.data + (1.0 - eps) * fake.data)
    else:
        raise ValueError(f"unknown gp_mode {gp_mode!r}")
    grad_norms = ad.l2_norm_rows(critic.input_gradient(at))
    penalty = ad.mean(ad.square(ad.sub(grad_norms, ad.constant(1.0))))
    return ad.add(base, ad.scalar_mul(penalty, lambda_gp)), penalty


def generator_adv_loss(critic_incomplete, fake_incomplete, critic_complete, fake_complete_rep):
    """Adversarial pressure on the transfer networks from both critics."""
    return ad.add(
        ad.mean(critic_incomplete.score(fake_incomplete)),
        ad.mean(critic_complete.score(fake_complete_rep)),
    )


# ---------------------------------------------------------------------------
# inference


def predict_complete(bundle: NetworkBundle, cloud):
    """Complete a partial cloud: encode, transfer, decode the representation."""
    x = bundle.encoder_incomplete(_batched(cloud))
    rep = bundle.to_complete(x).rep
    return bundle.decoder_complete(rep).data[0]


def predict_incomplete(bundle: NetworkBundle, cloud, code=None, rng=None):
    """Degrade a complete cloud using a sampled or supplied missing-region code."""
    y_rep = bundle.encoder_complete(_batched(cloud))
    code_dim = bundle.dims.code_dim
    if code_dim == 0:
        y_full = y_rep
    else:
        if code is None:
            code = sample_missing_code(rng, code_dim, batch=1)
        else:
            code = ad.constant(np.asarray(code, dtype=np.float64).reshape(1, -1))
        if code.data.shape[1] != code_dim:
            raise ValueError(
                f"missing code must have {code_dim} components, got {code.data.shape[1]}")
        y_full = ad.concat_last(y_rep, code)
    return bundle.decoder_incomplete(bundle.to_incomplete(y_full)).data[0]


def transferred_representation(bundle: NetworkBundle, cloud):
    """The complete-domain representation recovered from a partial cloud."""
    x = bundle.encoder_incomplete(_batched(cloud))
    return bundle.to_complete(x).rep.data[0]


def complete_representation(bundle: NetworkBundle, cloud):
    """The complete-domain representation of a complete cloud."""
    return bundle.encoder_complete(_batched(cloud)).data[0]
