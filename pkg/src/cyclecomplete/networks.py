"""The six networks and two critics of the completion engine.

Two point-cloud autoencoders (one per domain), two latent transfer networks
that move representations between the incomplete and complete domains, and
two scalar critics.  The incomplete-domain latent x (dim d_x = d_r + d_z)
decomposes under transfer into a complete-shape representation (d_r) plus a
missing-region code (d_z) squashed to (0, 1); the code is what lets a single
complete shape map to many distinct incomplete ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import autodiff as ad
from .autodiff import Parameter, ParamGroup, Tensor


@dataclass(frozen=True)
class ModelDims:
    """Latent sizes, cloud resolution, and stack widths.

    ``with_coding=False`` removes the missing-region code slot from the
    transfer networks (and the code matching loss upstream) while leaving
    the autoencoders untouched: the incomplete latent keeps dimension d_x.
    """

    d_r: int = 128
    d_z: int = 32
    n_points: int = 2048
    encoder_widths: tuple = (64, 128)
    decoder_widths: tuple = (256, 512)
    transfer_width: int = 256
    critic_width: int = 256
    with_coding: bool = True

    @property
    def d_x(self):
        return self.d_r + self.d_z

    @property
    def code_dim(self):
        return self.d_z if self.with_coding else 0


def _init(rng, fan_in, fan_out=None):
    """Uniform fan-in scaled init; biases start at zero."""
    bound = 1.0 / np.sqrt(fan_in)
    shape = (fan_in,) if fan_out is None else (fan_in, fan_out)
    return rng.uniform(-bound, bound, size=shape)


def _affine_raw(h, layer):
    out = h @ layer.W.data
    out += layer.b.data
    return out


def _dense_leaky_raw(h, layer):
    # fused leaky(h @ W + b); bit-identical to the tape op pair
    z = h @ layer.W.data
    flat = z.reshape(-1, z.shape[-1])
    return _kernels.bias_leaky(flat, layer.b.data).reshape(z.shape)


class Dense:
    def __init__(self, name, rng, fan_in, fan_out, group):
        self.W = Parameter(f"{name}/W", _init(rng, fan_in, fan_out), group)
        self.b = Parameter(f"{name}/b", np.zeros(fan_out), group)

    def __call__(self, h):
        return ad.affine(h, self.W, self.b)

    @property
    def params(self):
        return [self.W, self.b]


class PointEncoder:
    """Shared per-point feature layers followed by a max-pool over points.

    The pooling makes the output invariant to point order and to duplicated
    points, which is what lets padded clouds encode like their originals.
    """

    def __init__(self, name, rng, out_dim, n_points, widths, group):
        self.n_points = n_points
        self.out_dim = out_dim
        dims = [3, *widths, out_dim]
        self.layers = [
            Dense(f"{name}/point{i}", rng, dims[i], dims[i + 1], group)
            for i in range(len(dims) - 1)
        ]

    def __call__(self, cloud):
        cloud = ad.as_tensor(cloud)
        if cloud.data.ndim == 2:
            cloud = ad.reshape(cloud, (1,) + cloud.data.shape)
        if cloud.data.ndim != 3 or cloud.data.shape[1] != self.n_points or cloud.data.shape[2] != 3:
            raise ValueError(
                f"encoder expects (B, {self.n_points}, 3) clouds, got {cloud.data.shape}"
            )
        h = cloud
        for layer in self.layers[:-1]:
            h = ad.dense_leaky(h, layer.W, layer.b)
        h = self.layers[-1](h)  # linear features, pooled below
        return ad.max_axis(h, axis=1)

    def forward_data(self, cloud):
        """Tape-free forward; bit-identical values to the tape path."""
        h = cloud if cloud.ndim == 3 else cloud[None]
        for layer in self.layers[:-1]:
            h = _dense_leaky_raw(h, layer)
        h = _affine_raw(h, self.layers[-1])
        return h.max(axis=1)

    @property
    def params(self):
        return [p for l in self.layers for p in l.params]


class CloudDecoder:
    """Fully-connected stack emitting a fixed-resolution (B, N, 3) cloud."""

    def __init__(self, name, rng, latent_dim, n_points, widths, group):
        self.latent_dim = latent_dim
        self.n_points = n_points
        dims = [latent_dim, *widths, 3 * n_points]
        self.layers = [
            Dense(f"{name}/fc{i}", rng, dims[i], dims[i + 1], group)
            for i in range(len(dims) - 1)
        ]

    def __call__(self, latent):
        latent = ad.as_tensor(latent)
        if latent.data.ndim != 2 or latent.data.shape[1] != self.latent_dim:
            raise ValueError(
                f"decoder expects (B, {self.latent_dim}) latents, got {latent.data.shape}"
            )
        h = latent
        for layer in self.layers[:-1]:
            h = ad.dense_leaky(h, layer.W, layer.b)
        h = self.layers[-1](h)
        return ad.reshape(h, (h.data.shape[0], self.n_points, 3))

    @property
    def params(self):
        return [p for l in self.layers for p in l.params]


@dataclass
class CompositeLatent:
    """A complete-domain latent split into shape representation and missing code."""

    rep: Tensor
    code: Tensor | None
    full: Tensor


class TransferToComplete:
    """Maps incomplete-domain latents to (representation, missing code) pairs.

    The code head is sigmoid-squashed so predicted codes live in (0, 1),
    the same range the sampled codes are drawn from.  With the code slot
    removed the output is the bare representation.
    """

    def __init__(self, name, rng, d_x, d_r, code_dim, width, group):
        self.d_x = d_x
        self.d_r = d_r
        self.code_dim = code_dim
        dims = [d_x, width, width, d_r + code_dim]
        self.layers = [
            Dense(f"{name}/fc{i}", rng, dims[i], dims[i + 1], group)
            for i in range(len(dims) - 1)
        ]

    def __call__(self, x):
        x = ad.as_tensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.d_x:
            raise ValueError(f"transfer expects (B, {self.d_x}), got {x.data.shape}")
        h = x
        for layer in self.layers[:-1]:
            h = ad.dense_leaky(h, layer.W, layer.b)
        h = self.layers[-1](h)
        rep = ad.slice_last(h, 0, self.d_r)
        if self.code_dim == 0:
            return CompositeLatent(rep=rep, code=None, full=rep)
        code = ad.sigmoid(ad.slice_last(h, self.d_r, self.d_r + self.code_dim))
        return CompositeLatent(rep=rep, code=code, full=ad.concat_last(rep, code))

    def forward_data(self, x):
        """Tape-free (rep, code, full) arrays, bit-identical to the tape path."""
        h = x
        for layer in self.layers[:-1]:
            h = _dense_leaky_raw(h, layer)
        h = _affine_raw(h, self.layers[-1])
        rep = h[:, : self.d_r]
        if self.code_dim == 0:
            return rep, None, rep
        code = 1.0 / (1.0 + np.exp(-h[:, self.d_r:]))
        return rep, code, np.concatenate([rep, code], axis=1)

    @property
    def params(self):
        return [p for l in self.layers for p in l.params]


class TransferToIncomplete:
    """Maps a (representation : code) concatenation back to the incomplete domain."""

    def __init__(self, name, rng, d_x, d_r, code_dim, width, group):
        self.d_in = d_r + code_dim
        dims = [self.d_in, width, width, d_x]
        self.layers = [
            Dense(f"{name}/fc{i}", rng, dims[i], dims[i + 1], group)
            for i in range(len(dims) - 1)
        ]

    def __call__(self, y):
        y = ad.as_tensor(y)
        if y.data.ndim != 2 or y.data.shape[1] != self.d_in:
            raise ValueError(f"transfer expects (B, {self.d_in}), got {y.data.shape}")
        h = y
        for layer in self.layers[:-1]:
            h = ad.dense_leaky(h, layer.W, layer.b)
        return self.layers[-1](h)

    def forward_data(self, y):
        h = y
        for layer in self.layers[:-1]:
            h = _dense_leaky_raw(h, layer)
        return _affine_raw(h, self.layers[-1])

    @property
    def params(self):
        return [p for l in self.layers for p in l.params]


class Critic:
    """Affine + leaky-relu stack to a single score, no final nonlinearity.

    Keeping the stack affine/leaky-relu is what makes the analytic
    input-gradient (and therefore the gradient penalty) applicable.
    """

    def __init__(self, name, rng, in_dim, width, group, hidden=None):
        self.in_dim = in_dim
        hidden = (width, width) if hidden is None else tuple(hidden)
        dims = [in_dim, *hidden, 1]
        self.layers = [
            Dense(f"{name}/fc{i}", rng, dims[i], dims[i + 1], group)
            for i in range(len(dims) - 1)
        ]

    def score(self, v):
        v = ad.as_tensor(v)
        if v.data.ndim != 2 or v.data.shape[1] != self.in_dim:
            raise ValueError(f"critic expects (B, {self.in_dim}), got {v.data.shape}")
        h = v
        for layer in self.layers[:-1]:
            h = ad.dense_leaky(h, layer.W, layer.b)
        return self.layers[-1](h)  # (B, 1)

    def affine_stack(self):
        stack = [(l.W, l.b, "leaky_relu") for l in self.layers[:-1]]
        stack.append((self.layers[-1].W, self.layers[-1].b, "identity"))
        return stack

    def input_gradient(self, v):
        """Per-row gradient of the score w.r.t. v, differentiable in the weights."""
        return ad.critic_input_gradient(self.affine_stack(), v)

    @property
    def params(self):
        return [p for l in self.layers for p in l.params]


def sample_missing_code(rng, d_z, batch=None):
    """I.i.d. uniform [0, 1] missing-region code(s), deterministic under the rng."""
    shape = (d_z,) if batch is None else (batch, d_z)
    return ad.constant(rng.uniform(0.0, 1.0, size=shape))


class NetworkBundle:
    """All networks plus the three disjoint parameter sets they partition into."""

    def __init__(self, dims: ModelDims, rng, with_critics=True):
        self.dims = dims
        g = ParamGroup
        self.encoder_incomplete = PointEncoder(
            "enc_incomplete", rng, dims.d_x, dims.n_points, dims.encoder_widths, g.AUTOENCODER)
        self.decoder_incomplete = CloudDecoder(
            "dec_incomplete", rng, dims.d_x, dims.n_points, dims.decoder_widths, g.AUTOENCODER)
        self.encoder_complete = PointEncoder(
            "enc_complete", rng, dims.d_r, dims.n_points, dims.encoder_widths, g.AUTOENCODER)
        self.decoder_complete = CloudDecoder(
            "dec_complete", rng, dims.d_r, dims.n_points, dims.decoder_widths, g.AUTOENCODER)
        self.to_complete = TransferToComplete(
            "xfer_to_complete", rng, dims.d_x, dims.d_r, dims.code_dim,
            dims.transfer_width, g.TRANSFER)
        self.to_incomplete = TransferToIncomplete(
            "xfer_to_incomplete", rng, dims.d_x, dims.d_r, dims.code_dim,
            dims.transfer_width, g.TRANSFER)
        if with_critics:
            self.critic_incomplete = Critic(
                "critic_incomplete", rng, dims.d_x, dims.critic_width, g.CRITIC)
            self.critic_complete = Critic(
                "critic_complete", rng, dims.d_r, dims.critic_width, g.CRITIC)
        else:
            self.critic_incomplete = None
            self.critic_complete = None
        self._check_partition()

    def _nets_by_group(self):
        nets = {
            ParamGroup.AUTOENCODER: [
                self.encoder_incomplete, self.decoder_incomplete,
                self.encoder_complete, self.decoder_complete,
            ],
            ParamGroup.TRANSFER: [self.to_complete, self.to_incomplete],
            ParamGroup.CRITIC: [],
        }
        if self.critic_incomplete is not None:
            nets[ParamGroup.CRITIC] = [self.critic_incomplete, self.critic_complete]
        return nets

    def parameters(self, group=None):
        if group is None:
            return [p for grp in ParamGroup for p in self.parameters(grp)]
        return [p for net in self._nets_by_group()[ParamGroup(group)] for p in net.params]

    def _check_partition(self):
        seen = {}
        for grp in ParamGroup:
            for p in self.parameters(grp):
                if p.name in seen:
                    raise ValueError(f"duplicate parameter name {p.name}")
                if p.group is not grp:
                    raise ValueError(f"{p.name} assigned to {p.group}, listed under {grp}")
                seen[p.name] = p
        if len(seen) != len(self.parameters()):
            raise ValueError("parameter sets are not a disjoint partition")
