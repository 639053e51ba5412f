"""Training orchestration: the three-way update schedule, optimizer, checkpoints.

Each training step runs, in order: one autoencoder update on the
reconstruction loss, ``n_critic`` critic updates on fresh batches, and one
transfer-network update on the weighted sum of adversarial, partial, cycle
and code losses.  Parameter groups are strictly partitioned: a sub-step
writes only its own group's parameters (strategy variants deliberately
extend one loss's update set to the autoencoders, which is known to be able
to collapse; collapse is an allowed outcome, not an error).
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import _kernels
from . import autodiff as ad
from . import losses as L
from .autodiff import ParamGroup
from .networks import ModelDims, NetworkBundle, sample_missing_code


class TrainingDiverged(RuntimeError):
    """A loss term went non-finite; carries the offending term's name."""

    def __init__(self, term):
        super().__init__(f"training diverged: {term} is non-finite")
        self.term = term


class CheckpointError(ValueError):
    """Checkpoint file is malformed, truncated, or inconsistent."""


STRATEGIES = ("original", "g-updates-ae", "partial-updates-ae", "cycle-updates-ae")
_STRAT_TERM = {"g-updates-ae": "adv", "partial-updates-ae": "partial", "cycle-updates-ae": "cycle"}


@dataclass(frozen=True)
class TrainConfig:
    """All hyperparameters; defaults reproduce the standard configuration."""

    lambda_g: float = 1.0
    lambda_c: float = 0.01
    lambda_p: float = 1.0
    lambda_gp: float = 10.0
    lambda_code: float = 1.0
    lr: float = 1e-3
    n_critic: int = 3
    batch_size: int = 16
    steps: int = 1000
    pretrain_steps: int = 1000
    seed: int = 0
    reduction: str = "mean"
    gp_mode: str = "real"
    d_r: int = 128
    d_z: int = 32
    n_points: int = 2048
    encoder_widths: tuple = (64, 128)
    decoder_widths: tuple = (256, 512)
    transfer_width: int = 256
    critic_width: int = 256
    ablate_partial: bool = False
    ablate_gan: bool = False
    ablate_cycle: bool = False
    ablate_coding: bool = False
    strategy: str = "original"
    optimizer: str = "adam"

    def __post_init__(self):
        for name in ("lambda_g", "lambda_c", "lambda_p", "lambda_gp", "lambda_code"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.n_critic < 1:
            raise ValueError("n_critic must be >= 1")
        if self.batch_size < 1 or self.n_points < 1:
            raise ValueError("batch_size and n_points must be positive")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"unknown reduction {self.reduction!r}")
        if self.gp_mode not in ("real", "interpolate"):
            raise ValueError(f"unknown gp_mode {self.gp_mode!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def dims(self) -> ModelDims:
        return ModelDims(
            d_r=self.d_r,
            d_z=self.d_z,
            n_points=self.n_points,
            encoder_widths=tuple(self.encoder_widths),
            decoder_widths=tuple(self.decoder_widths),
            transfer_width=self.transfer_width,
            critic_width=self.critic_width,
            with_coding=not self.ablate_coding,
        )

    def to_json(self):
        d = asdict(self)
        d["encoder_widths"] = list(d["encoder_widths"])
        d["decoder_widths"] = list(d["decoder_widths"])
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["encoder_widths"] = tuple(d["encoder_widths"])
        d["decoder_widths"] = tuple(d["decoder_widths"])
        return cls(**d)


def apply_ablation(config: TrainConfig):
    """The set of loss terms this configuration actually trains."""
    active = {"ae", "adv", "partial", "cycle", "code"}
    if config.ablate_gan:
        active.discard("adv")
    if config.ablate_partial:
        active.discard("partial")
    if config.ablate_cycle:
        active.discard("cycle")
    if config.ablate_coding:
        active.discard("code")
    return frozenset(active)


def apply_strategy(config: TrainConfig):
    """Update sets per transfer-substep loss term."""
    sets = {t: (ParamGroup.TRANSFER,) for t in ("adv", "partial", "cycle", "code")}
    extended = _STRAT_TERM.get(config.strategy)
    if extended is not None:
        sets[extended] = (ParamGroup.TRANSFER, ParamGroup.AUTOENCODER)
    return sets


def _term_weights(config: TrainConfig):
    return {
        "adv": config.lambda_g,
        "partial": config.lambda_p,
        "cycle": config.lambda_c,
        "code": config.lambda_code,
    }


def _transfer_terms(config: TrainConfig):
    """Terms the transfer substep computes: active under ablation, weight > 0."""
    w = _term_weights(config)
    return [t for t in ("adv", "partial", "cycle", "code")
            if t in apply_ablation(config) and w[t] > 0]


def _transfer_updates_ae(config: TrainConfig):
    extended = _STRAT_TERM.get(config.strategy)
    return extended is not None and extended in _transfer_terms(config)


def derive_moment_steps(config: TrainConfig, step_count):
    """Per-group optimizer step counts implied by the deterministic schedule.

    Lets a checkpoint resume bit-exactly without storing counters: the
    autoencoders update every step (plus once per joint step under the
    extending strategies), critics n_critic times and the transfer networks
    once per joint step.
    """
    pre = min(step_count, config.pretrain_steps)
    joint = step_count - pre
    t = {ParamGroup.AUTOENCODER: step_count, ParamGroup.TRANSFER: 0, ParamGroup.CRITIC: 0}
    if not config.ablate_gan:
        t[ParamGroup.CRITIC] = config.n_critic * joint
    if _transfer_terms(config):
        t[ParamGroup.TRANSFER] = joint
    if _transfer_updates_ae(config):
        t[ParamGroup.AUTOENCODER] += joint
    return t


# ---------------------------------------------------------------------------
# loss report / metrics log


@dataclass
class LossReport:
    """Named scalar values of every loss term computed in one step."""

    step: int
    l_ae: float | None = None
    l_code: float | None = None
    l_cycle: float | None = None
    l_partial: float | None = None
    l_d: float | None = None
    l_g: float | None = None
    gp_x: float | None = None
    gp_y: float | None = None
    wall_ms: float = 0.0


METRICS_HEADER = "step,L_AE,L_code,L_cycle,L_partial,L_D,L_G,gp_x,gp_y,wall_ms"


class MetricsWriter:
    """CSV loss log; ablated terms show up as empty cells."""

    def __init__(self, path):
        self._f = open(path, "w")
        self._f.write(METRICS_HEADER + "\n")

    def write(self, r: LossReport):
        def cell(v):
            return "" if v is None else repr(float(v))

        row = [str(r.step)] + [cell(v) for v in (
            r.l_ae, r.l_code, r.l_cycle, r.l_partial, r.l_d, r.l_g, r.gp_x, r.gp_y)]
        row.append(f"{r.wall_ms:.3f}")
        self._f.write(",".join(row) + "\n")
        self._f.flush()

    def close(self):
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# trainer


class Trainer:
    """Owns the bundle, optimizer state and the rng; single writer of parameters."""

    def __init__(self, config: TrainConfig, incomplete_pool, complete_pool):
        incomplete_pool = np.asarray(incomplete_pool, dtype=np.float64)
        complete_pool = np.asarray(complete_pool, dtype=np.float64)
        for pool, name in ((incomplete_pool, "incomplete"), (complete_pool, "complete")):
            if pool.ndim != 3 or pool.shape[1] != config.n_points or pool.shape[2] != 3:
                raise ValueError(
                    f"{name} pool must be (n, {config.n_points}, 3), got {pool.shape}")
        self.config = config
        self.incomplete_pool = incomplete_pool
        self.complete_pool = complete_pool
        init_ss, train_ss = np.random.SeedSequence(config.seed).spawn(2)
        self.bundle = NetworkBundle(config.dims(), np.random.default_rng(init_ss),
                                    with_critics=not config.ablate_gan)
        self.rng = np.random.default_rng(train_ss)
        self.step_count = 0
        self.moments = {
            p.name: (np.zeros_like(p.data), np.zeros_like(p.data))
            for p in self.bundle.parameters()
        }
        self._t = {g: 0 for g in ParamGroup}
        self._last_batch = None

    # -- optimizer ---------------------------------------------------------

    def _apply_updates(self, grads_by_param, groups):
        """One optimizer step for every parameter of the given groups."""
        cfg = self.config
        for g in groups:
            self._t[g] += 1
        for group in groups:
            t = self._t[group]
            bc1 = 1.0 - 0.5**t
            bc2 = 1.0 - 0.9**t
            for p in self.bundle.parameters(group):
                grad = grads_by_param.get(p.name)
                if grad is None:
                    continue
                if cfg.optimizer == "sgd":
                    p.data -= cfg.lr * grad
                    continue
                m1, m2 = self.moments[p.name]
                _kernels.adam_step(p.data, grad, m1, m2, cfg.lr, 0.5, 0.9, bc1, bc2, 1e-8)

    # -- batching ----------------------------------------------------------

    def _sample_batch(self):
        bx = self.incomplete_pool[
            self.rng.integers(0, len(self.incomplete_pool), size=self.config.batch_size)]
        by = self.complete_pool[
            self.rng.integers(0, len(self.complete_pool), size=self.config.batch_size)]
        return bx, by

    # -- sub-steps ---------------------------------------------------------

    def update_autoencoders(self, batch=None):
        """Reconstruction update; the only sub-step that owns the autoencoders."""
        bx, by = batch if batch is not None else self._sample_batch()
        try:
            loss = L.loss_ae(self.bundle, ad.constant(bx), ad.constant(by),
                             self.config.reduction)
        except ad.NonFiniteError as e:
            raise TrainingDiverged("L_AE") from e
        grads = ad.backward(loss, wrt=self.bundle.parameters(ParamGroup.AUTOENCODER))
        table = {p.name: grads.wrt(p) for p in self.bundle.parameters(ParamGroup.AUTOENCODER)}
        self._apply_updates(table, (ParamGroup.AUTOENCODER,))
        return loss.item()

    def update_critics(self):
        """n_critic critic updates, each on a fresh batch; logs the last one."""
        cfg = self.config
        bundle = self.bundle
        last = (None, None, None)
        for _ in range(cfg.n_critic):
            bx, by = self._sample_batch()
            try:
                # Critic updates only touch critic parameters, so every latent
                # enters as a constant computed on the tape-free path.
                x_real = ad.constant(bundle.encoder_incomplete.forward_data(bx))
                y_real = ad.constant(bundle.encoder_complete.forward_data(by))
                self._last_batch = (bx, by, x_real.data, y_real.data)
                fake_complete = ad.constant(bundle.to_complete.forward_data(x_real.data)[0])
                if bundle.dims.code_dim > 0:
                    code = sample_missing_code(self.rng, bundle.dims.code_dim,
                                               batch=cfg.batch_size)
                    y_full = np.concatenate([y_real.data, code.data], axis=1)
                else:
                    y_full = y_real.data
                fake_incomplete = ad.constant(bundle.to_incomplete.forward_data(y_full))
                ld_x, gp_x = L.critic_loss(bundle.critic_incomplete, x_real, fake_incomplete,
                                           cfg.lambda_gp, cfg.gp_mode, self.rng)
                ld_y, gp_y = L.critic_loss(bundle.critic_complete, y_real, fake_complete,
                                           cfg.lambda_gp, cfg.gp_mode, self.rng)
                l_d = ad.add(ld_x, ld_y)
            except ad.NonFiniteError as e:
                raise TrainingDiverged("L_D") from e
            grads = ad.backward(l_d, wrt=bundle.parameters(ParamGroup.CRITIC))
            table = {p.name: grads.wrt(p) for p in bundle.parameters(ParamGroup.CRITIC)}
            self._apply_updates(table, (ParamGroup.CRITIC,))
            last = (l_d.item(), gp_x.item(), gp_y.item())
        return last

    def update_transfer(self, batch=None):
        """Transfer-network update on the weighted active losses.

        The extending strategy variants additionally route exactly one
        term's gradient into the autoencoder parameters.
        """
        cfg = self.config
        bundle = self.bundle
        cached = (None, None)
        if batch is not None:
            bx, by = batch
        elif self._last_batch is not None:
            bx, by, *cached = self._last_batch
        else:
            bx, by = self._sample_batch()

        terms = _transfer_terms(cfg)
        report = {}
        if not terms:
            return report
        weights = _term_weights(cfg)
        sets = apply_strategy(cfg)

        term_nodes = {}
        current = "forward"
        try:
            if all(sets[t] == (ParamGroup.TRANSFER,) for t in terms):
                # Encoders are upstream of every update target: feed their
                # outputs as constants (tape-free path, identical values;
                # the last critic batch's latents are reused when available).
                x_latent = ad.constant(cached[0] if cached[0] is not None
                                       else bundle.encoder_incomplete.forward_data(bx))
                y_latent = ad.constant(cached[1] if cached[1] is not None
                                       else bundle.encoder_complete.forward_data(by))
            else:
                x_latent = bundle.encoder_incomplete(ad.constant(bx))
                y_latent = bundle.encoder_complete(ad.constant(by))
            inc = L.incomplete_cycle(bundle, ad.constant(bx), latent=x_latent)
            comp = L.complete_cycle(bundle, ad.constant(by), rng=self.rng, latent=y_latent)
            if "adv" in terms:
                current = "L_G"
                term_nodes["adv"] = L.generator_adv_loss(
                    bundle.critic_incomplete, comp.y_x,
                    bundle.critic_complete, inc.transferred.rep)
            if "partial" in terms:
                current = "L_partial"
                term_nodes["partial"] = L.loss_partial(
                    ad.constant(bx), inc.pred_complete, comp.pred_incomplete,
                    ad.constant(by), cfg.reduction)
            if "cycle" in terms:
                current = "L_cycle"
                term_nodes["cycle"] = L.loss_cycle(
                    ad.constant(bx), inc.cycle_recon, ad.constant(by), comp.cycle_recon,
                    cfg.reduction)
            if "code" in terms:
                current = "L_code"
                term_nodes["code"] = L.loss_code(comp.code, comp.y_hat.code)
        except ad.NonFiniteError as e:
            raise TrainingDiverged(current) from e

        report = {t: term_nodes[t].item() for t in term_nodes}

        uniform = all(sets[t] == (ParamGroup.TRANSFER,) for t in terms)
        if uniform:
            total = None
            for t in terms:
                piece = ad.scalar_mul(term_nodes[t], weights[t])
                total = piece if total is None else ad.add(total, piece)
            params = bundle.parameters(ParamGroup.TRANSFER)
            grads = ad.backward(total, wrt=params)
            table = {p.name: grads.wrt(p) for p in params}
            self._apply_updates(table, (ParamGroup.TRANSFER,))
            return report

        # Strategy variants: per-term gradients, each applied to its own set.
        table = {}
        groups = set()
        for t in terms:
            params = [p for g in sets[t] for p in bundle.parameters(g)]
            groups.update(sets[t])
            grads = ad.backward(term_nodes[t], wrt=params)
            for p in params:
                g = weights[t] * grads.wrt(p)
                if p.name in table:
                    table[p.name] += g
                else:
                    table[p.name] = g
        ordered = [g for g in (ParamGroup.TRANSFER, ParamGroup.AUTOENCODER) if g in groups]
        self._apply_updates(table, tuple(ordered))
        return report

    # -- full step ---------------------------------------------------------

    @property
    def in_pretrain(self):
        return self.step_count < self.config.pretrain_steps

    def train_step(self) -> LossReport:
        t0 = time.perf_counter()
        report = LossReport(step=self.step_count + 1)
        if self.in_pretrain:
            report.l_ae = self.update_autoencoders()
        else:
            report.l_ae = self.update_autoencoders()
            if not self.config.ablate_gan:
                report.l_d, report.gp_x, report.gp_y = self.update_critics()
            terms = self.update_transfer()
            report.l_g = terms.get("adv")
            report.l_partial = terms.get("partial")
            report.l_cycle = terms.get("cycle")
            report.l_code = terms.get("code")
        self.step_count += 1
        report.wall_ms = (time.perf_counter() - t0) * 1e3
        return report

    def group_checksums(self):
        """Byte-level fingerprint per parameter group (freeze audits)."""
        import hashlib

        out = {}
        for g in ParamGroup:
            h = hashlib.sha256()
            for p in self.bundle.parameters(g):
                h.update(p.data.tobytes())
            out[g] = h.hexdigest()
        return out


# ---------------------------------------------------------------------------
# checkpoints


_MAGIC = b"C4C1"
_VERSION = 1


def _write_record(f, name, arr):
    nb = name.encode()
    f.write(struct.pack("<H", len(nb)))
    f.write(nb)
    arr = np.ascontiguousarray(arr, dtype="<f8")
    f.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<I", d))
    f.write(arr.tobytes())


def _read_exact(f, n, what):
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return b


def _read_record(f):
    head = f.read(2)
    if not head:
        return None
    if len(head) != 2:
        raise CheckpointError("truncated checkpoint while reading record header")
    (namelen,) = struct.unpack("<H", head)
    name = _read_exact(f, namelen, "record name").decode()
    (ndim,) = struct.unpack("<B", _read_exact(f, 1, "record ndim"))
    shape = tuple(
        struct.unpack("<I", _read_exact(f, 4, "record dims"))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    payload = _read_exact(f, 8 * count, f"record payload of {name}")
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    return name, arr


def save_checkpoint(path, trainer: Trainer):
    """Binary snapshot sufficient for bit-exact resume."""
    cfg_blob = trainer.config.to_json().encode()
    rng_blob = json.dumps(trainer.rng.bit_generator.state, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<Q", trainer.step_count))
        f.write(struct.pack("<I", len(cfg_blob)))
        f.write(cfg_blob)
        f.write(struct.pack("<I", len(rng_blob)))
        f.write(rng_blob)
        params = trainer.bundle.parameters()
        for p in params:
            _write_record(f, p.name, p.data)
        for p in params:
            m1, m2 = trainer.moments[p.name]
            _write_record(f, p.name + "/m1", m1)
            _write_record(f, p.name + "/m2", m2)


@dataclass
class CheckpointState:
    version: int
    step: int
    config: TrainConfig
    rng_state: dict
    params: dict
    moments: dict


def load_checkpoint(path) -> CheckpointState:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != _MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != _VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (step,) = struct.unpack("<Q", _read_exact(f, 8, "step"))
        (clen,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        config = TrainConfig.from_json(_read_exact(f, clen, "config").decode())
        (rlen,) = struct.unpack("<I", _read_exact(f, 4, "rng length"))
        rng_state = json.loads(_read_exact(f, rlen, "rng state").decode())
        params = {}
        m1 = {}
        m2 = {}
        while True:
            rec = _read_record(f)
            if rec is None:
                break
            name, arr = rec
            if name.endswith("/m1"):
                m1[name[:-3]] = arr
            elif name.endswith("/m2"):
                m2[name[:-3]] = arr
            else:
                params[name] = arr
    if set(m1) != set(params) or set(m2) != set(params):
        raise CheckpointError(f"{path}: parameter and moment records do not align")
    moments = {n: (m1[n], m2[n]) for n in params}
    return CheckpointState(version, step, config, rng_state, params, moments)


def restore_trainer(state: CheckpointState, incomplete_pool, complete_pool) -> Trainer:
    """Rebuild a trainer that continues exactly where the checkpoint stopped."""
    trainer = Trainer(state.config, incomplete_pool, complete_pool)
    bundle_params = {p.name: p for p in trainer.bundle.parameters()}
    if set(bundle_params) != set(state.params):
        raise CheckpointError("checkpoint parameters do not match the configured networks")
    for name, arr in state.params.items():
        p = bundle_params[name]
        if p.data.shape != arr.shape:
            raise CheckpointError(f"shape mismatch for {name}")
        p.data[...] = arr
    trainer.moments = {n: (m1.copy(), m2.copy()) for n, (m1, m2) in state.moments.items()}
    trainer.rng.bit_generator.state = state.rng_state
    trainer.step_count = state.step
    trainer._t = derive_moment_steps(state.config, state.step)
    return trainer


def load_bundle(path) -> tuple[NetworkBundle, TrainConfig]:
    """Networks only (inference); parameters come straight from the checkpoint."""
    state = load_checkpoint(path)
    init_ss, _ = np.random.SeedSequence(state.config.seed).spawn(2)
    bundle = NetworkBundle(state.config.dims(), np.random.default_rng(init_ss),
                           with_critics=not state.config.ablate_gan)
    named = {p.name: p for p in bundle.parameters()}
    if set(named) != set(state.params):
        raise CheckpointError("checkpoint parameters do not match the configured networks")
    for name, arr in state.params.items():
        named[name].data[...] = arr
    return bundle, state.config
