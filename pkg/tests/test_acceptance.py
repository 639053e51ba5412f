"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria 7-9 share one full smoke training run (plus one run per ablation
switch), so this module takes on the order of an hour; everything else is
minutes. Run with ``pytest tests/test_acceptance.py -s`` to watch progress.
"""

import csv
import json
import os
import time

import numpy as np
import pytest

from cyclecomplete import autodiff as ad
from cyclecomplete import losses as L
from cyclecomplete.autodiff import ParamGroup
from cyclecomplete.chamfer import (
    eval_metric, full_chamfer, nearest_neighbor_grid, partial_chamfer, _nn_arrays,
)
from cyclecomplete.cli import main as cli_main
from cyclecomplete.networks import Critic, NetworkBundle
from cyclecomplete.pointcloud_io import load_dataset
from cyclecomplete.shapes import DatasetSpec, build_dataset, generate_complete
from cyclecomplete.training import (
    MetricsWriter, TrainConfig, Trainer, load_checkpoint, restore_trainer, save_checkpoint,
)

from helpers import naive_full_chamfer, naive_nearest, naive_partial_chamfer


def _report(num, name, ok):
    print(f"\nACCEPTANCE {num} ({name}): {'PASS' if ok else 'FAIL'}")
    return ok


# ---------------------------------------------------------------------------
# criterion 1: gradient correctness on random tiny networks


TINY = TrainConfig(d_r=8, d_z=4, n_points=16, batch_size=2, seed=3,
                   encoder_widths=(6, 8), decoder_widths=(8, 12),
                   transfer_width=8, critic_width=8,
                   steps=1, pretrain_steps=0)


def _tiny_setup():
    bundle = NetworkBundle(TINY.dims(), np.random.default_rng(11))
    rng = np.random.default_rng(4)
    bx = np.stack([generate_complete("box", rng, 16) for _ in range(2)])
    by = np.stack([generate_complete("cylinder", rng, 16) for _ in range(2)])
    code = rng.uniform(size=(2, TINY.d_z))
    return bundle, bx, by, code


def _grad_ok(analytic, numeric, rtol=1e-4, floor=1e-8):
    diff = np.abs(analytic - numeric)
    return bool(np.all(diff <= np.maximum(rtol * np.maximum(np.abs(analytic),
                                                            np.abs(numeric)), floor)))


def _fd(build, leaf, step=1e-5):
    g = np.zeros_like(leaf.data)
    flat, gflat = leaf.data.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = build().item()
        flat[i] = orig - step
        down = build().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return g


def test_criterion_1_gradient_correctness():
    t0 = time.perf_counter()
    bundle, bx, by, code = _tiny_setup()
    cx, cy = ad.constant(bx), ad.constant(by)

    def build_ae():
        return L.loss_ae(bundle, cx, cy)

    def cycles():
        inc = L.incomplete_cycle(bundle, cx)
        comp = L.complete_cycle(bundle, cy, code=code)
        return inc, comp

    def build_code():
        _, comp = cycles()
        return L.loss_code(comp.code, comp.y_hat.code)

    def build_cycle():
        inc, comp = cycles()
        return L.loss_cycle(cx, inc.cycle_recon, cy, comp.cycle_recon)

    def build_partial():
        inc, comp = cycles()
        return L.loss_partial(cx, inc.pred_complete, comp.pred_incomplete, cy)

    def build_g():
        inc, comp = cycles()
        return L.generator_adv_loss(bundle.critic_incomplete, comp.y_x,
                                    bundle.critic_complete, inc.transferred.rep)

    real_x = ad.constant(bundle.encoder_incomplete.forward_data(bx))
    real_y = ad.constant(bundle.encoder_complete.forward_data(by))
    fake_y = ad.constant(bundle.to_complete.forward_data(real_x.data)[0])
    fake_x = ad.constant(bundle.to_incomplete.forward_data(
        np.concatenate([real_y.data, code], axis=1)))

    def build_d():
        lx, _ = L.critic_loss(bundle.critic_incomplete, real_x, fake_x, 10.0)
        ly, _ = L.critic_loss(bundle.critic_complete, real_y, fake_y, 10.0)
        return ad.add(lx, ly)

    cases = [
        ("L_AE", build_ae, ParamGroup.AUTOENCODER),
        ("L_code", build_code, ParamGroup.TRANSFER),
        ("L_cycle", build_cycle, ParamGroup.TRANSFER),
        ("L_partial", build_partial, ParamGroup.TRANSFER),
        ("L_G", build_g, ParamGroup.TRANSFER),
        ("L_D", build_d, ParamGroup.CRITIC),
    ]
    failures = []
    for name, build, group in cases:
        params = bundle.parameters(group)
        grads = ad.backward(build(), wrt=params)
        for p in params:
            if not _grad_ok(grads.wrt(p), _fd(build, p)):
                failures.append(f"{name} wrt {p.name}")
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60.0
    _report(1, "gradient correctness", ok)
    assert not failures, failures
    assert elapsed < 60.0, f"took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# criterion 2: chamfer oracle equivalence


def test_criterion_2_chamfer_oracle_equivalence():
    rng = np.random.default_rng(20)
    checked = 0
    ok = True
    for _ in range(200):
        n, m = rng.integers(1, 65, size=2)
        p = rng.uniform(-0.5, 0.5, size=(n, 3))
        q = rng.uniform(-0.5, 0.5, size=(m, 3))
        if m > 2 and rng.random() < 0.3:
            q[m // 2] = q[0]  # exact duplicates, like resample padding
        for red in ("sum", "mean"):
            full = full_chamfer(p, q, red).item()
            fwd = partial_chamfer(p, q, red).item()
            rev = partial_chamfer(q, p, red).item()
            ok &= full == naive_full_chamfer(p, q, red)
            ok &= fwd == naive_partial_chamfer(p, q, red)
            ok &= full == fwd + rev                                # decomposition
            ok &= full == full_chamfer(q, p, red).item()           # symmetry
        dist, idx = _nn_arrays(p, q)
        ndist, nidx = naive_nearest(p, q)
        ok &= np.array_equal(dist, ndist) and np.array_equal(idx, nidx)
        gdist, gidx = nearest_neighbor_grid(p, q)
        ok &= np.array_equal(dist, gdist) and np.array_equal(idx, gidx)
        checked += 1
    _report(2, "chamfer oracle equivalence", ok and checked == 200)
    assert ok and checked == 200


# ---------------------------------------------------------------------------
# criterion 3: analytic GAN cases


def test_criterion_3_analytic_gan_cases():
    rng = np.random.default_rng(30)
    const = Critic("const", rng, 6, width=0, group=ParamGroup.CRITIC, hidden=())
    const.layers[0].W.data[...] = 0.0
    const.layers[0].b.data[...] = -2.25
    real = ad.constant(rng.normal(size=(5, 6)))
    fake = ad.constant(rng.normal(size=(5, 6)))
    loss, penalty = L.critic_loss(const, real, fake, lambda_gp=10.0)
    ok = abs(loss.item() - 10.0) < 1e-12 and abs(penalty.item() - 1.0) < 1e-12

    unit = Critic("unit", rng, 3, width=0, group=ParamGroup.CRITIC, hidden=())
    unit.layers[0].W.data[...] = np.array([[0.36], [0.48], [0.8]])  # norm 1
    unit.layers[0].b.data[...] = 0.0
    r3 = ad.constant(rng.normal(size=(4, 3)))
    f3 = ad.constant(rng.normal(size=(4, 3)))
    _, pen2 = L.critic_loss(unit, r3, f3, lambda_gp=10.0)
    ok &= abs(pen2.item()) < 1e-12
    _report(3, "analytic GAN cases", ok)
    assert ok


# ---------------------------------------------------------------------------
# criterion 4: parameter-freeze audit


def _audit_pools():
    ds = build_dataset(DatasetSpec.from_total(("box", "cylinder"), 10, n_points=32, seed=40))
    return ds.incomplete_pool(), ds.complete_pool()


def _audit_config(**kw):
    return TrainConfig(d_r=10, d_z=4, n_points=32, batch_size=4, seed=41,
                       steps=20, pretrain_steps=0,
                       encoder_widths=(8, 12), decoder_widths=(12, 16),
                       transfer_width=12, critic_width=12, **kw)


def test_criterion_4_parameter_freeze_audit():
    inc, comp = _audit_pools()
    changed = lambda a, b: {g for g in ParamGroup if a[g] != b[g]}

    tr = Trainer(_audit_config(), inc, comp)
    ok = True
    for _ in range(20):
        c0 = tr.group_checksums()
        tr.update_autoencoders()
        c1 = tr.group_checksums()
        ok &= changed(c0, c1) == {ParamGroup.AUTOENCODER}
        tr.update_critics()
        c2 = tr.group_checksums()
        ok &= changed(c1, c2) == {ParamGroup.CRITIC}
        tr.update_transfer()
        c3 = tr.group_checksums()
        ok &= changed(c2, c3) == {ParamGroup.TRANSFER}
        tr.step_count += 1

    tv = Trainer(_audit_config(strategy="cycle-updates-ae"), inc, comp)
    for _ in range(20):
        c0 = tv.group_checksums()
        tv.update_autoencoders()
        c1 = tv.group_checksums()
        ok &= changed(c0, c1) == {ParamGroup.AUTOENCODER}
        tv.update_critics()
        c2 = tv.group_checksums()
        ok &= changed(c1, c2) == {ParamGroup.CRITIC}
        tv.update_transfer()
        c3 = tv.group_checksums()
        # variant (c) breaks exactly the autoencoder freeze, nothing else
        ok &= changed(c2, c3) == {ParamGroup.TRANSFER, ParamGroup.AUTOENCODER}
        tv.step_count += 1
    _report(4, "parameter-freeze audit", ok)
    assert ok


# ---------------------------------------------------------------------------
# criterion 5: determinism and resume


def _metrics_rows_without_wall(path):
    with open(path) as f:
        rows = [line.rsplit(",", 1)[0] for line in f.read().splitlines()]
    return rows


def test_criterion_5_determinism_and_resume(tmp_path):
    inc, comp = _audit_pools()
    cfg = _audit_config(pretrain_steps=2)

    paths = []
    for run in ("a", "b"):
        path = tmp_path / f"{run}.csv"
        tr = Trainer(cfg, inc, comp)
        with MetricsWriter(path) as w:
            for _ in range(50):
                w.write(tr.train_step())
        paths.append(path)
    ok = _metrics_rows_without_wall(paths[0]) == _metrics_rows_without_wall(paths[1])

    tr = Trainer(cfg, inc, comp)
    for _ in range(20):
        tr.train_step()
    ckpt = tmp_path / "mid.ckpt"
    save_checkpoint(ckpt, tr)
    uninterrupted = [tr.train_step() for _ in range(10)]
    resumed_tr = restore_trainer(load_checkpoint(ckpt), inc, comp)
    resumed = [resumed_tr.train_step() for _ in range(10)]
    as_tuple = lambda r: (r.step, r.l_ae, r.l_code, r.l_cycle, r.l_partial,
                          r.l_d, r.l_g, r.gp_x, r.gp_y)
    ok &= [as_tuple(r) for r in uninterrupted] == [as_tuple(r) for r in resumed]
    _report(5, "determinism and resume", ok)
    assert ok


# ---------------------------------------------------------------------------
# criterion 6: dataset contract


SMOKE_SPEC = DatasetSpec.from_total(("box", "cylinder"), 64, n_points=512, tau=0.5, seed=7)


def test_criterion_6_dataset_contract():
    ds = build_dataset(SMOKE_SPEC)
    ok = len(ds.samples) == 64
    inc_ids = {s.id for s in ds.by_split("incomplete")}
    comp_ids = {s.id for s in ds.by_split("complete")}
    ok &= inc_ids & comp_ids == set()
    for s in ds.samples:
        ok &= len(s.partials) == 8
        for part in s.partials:
            ok &= partial_chamfer(part, s.complete, "sum").item() == 0.0
    _report(6, "dataset contract", ok)
    assert ok


# ---------------------------------------------------------------------------
# criteria 7-9: end-to-end smoke, ablations, resolution sweep


SMOKE_TRAIN_ARGS = ["--steps", "3000", "--pretrain", "1000", "--batch-size", "8",
                    "--d-r", "64", "--d-z", "16", "--seed", "7"]


@pytest.fixture(scope="session")
def smoke_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    data = str(root / "data")
    out = str(root / "full")
    assert cli_main(["gen-data", "--root", data, "--categories", "box,cylinder",
                     "--count", "64", "--points", "512", "--seed", "7"]) == 0
    t0 = time.perf_counter()
    assert cli_main(["train", "--data", data, "--out", out, *SMOKE_TRAIN_ARGS]) == 0
    minutes = (time.perf_counter() - t0) / 60.0
    return {"root": root, "data": data, "out": out,
            "ckpt": os.path.join(out, "final.ckpt"), "minutes": minutes}


def _read_metrics(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def _completion_vs_identity(ckpt, data):
    from cyclecomplete.training import load_bundle

    bundle, _ = load_bundle(ckpt)
    completion, identity = [], []
    for s in load_dataset(data):
        if s.split != "eval":
            continue
        for part in s.partials:
            pred = L.predict_complete(bundle, part)
            completion.append(eval_metric(pred, s.complete))
            identity.append(eval_metric(part, s.complete))
    return float(np.mean(completion)), float(np.mean(identity))


def test_criterion_7_end_to_end_smoke(smoke_run):
    rows = _read_metrics(os.path.join(smoke_run["out"], "metrics.csv"))
    joint = [r for r in rows if r["L_cycle"] != ""]
    first = joint[0]
    final = joint[-1]
    completion, identity = _completion_vs_identity(smoke_run["ckpt"], smoke_run["data"])

    in_time = smoke_run["minutes"] < 20.0
    beats_identity = completion < identity
    cycle_halved = float(final["L_cycle"]) < 0.5 * float(first["L_cycle"])
    code_halved = float(final["L_code"]) < 0.5 * float(first["L_code"])
    print(f"\n  smoke: {smoke_run['minutes']:.1f} min | completion {completion:.1f} "
          f"vs identity {identity:.1f} | L_cycle {first['L_cycle']} -> {final['L_cycle']} "
          f"| L_code {first['L_code']} -> {final['L_code']}")
    ok = in_time and beats_identity and cycle_halved and code_halved
    _report(7, "end-to-end smoke", ok)
    assert in_time, f"took {smoke_run['minutes']:.1f} min"
    assert beats_identity, f"completion {completion:.1f} vs identity {identity:.1f}"
    assert cycle_halved, f"L_cycle {first['L_cycle']} -> {final['L_cycle']}"
    assert code_halved, f"L_code {first['L_code']} -> {final['L_code']}"


ABLATION_EMPTY_COLUMNS = {
    "partial": ["L_partial"],
    "gan": ["L_D", "L_G", "gp_x", "gp_y"],
    "cycle": ["L_cycle"],
    "coding": ["L_code"],
}


def test_criterion_8_ablation_harness(smoke_run):
    ok = True
    metrics = {}
    completion, _ = _completion_vs_identity(smoke_run["ckpt"], smoke_run["data"])
    metrics["full"] = completion
    for switch, empty_cols in ABLATION_EMPTY_COLUMNS.items():
        out = str(smoke_run["root"] / f"ablate_{switch}")
        code = cli_main(["train", "--data", smoke_run["data"], "--out", out,
                         "--ablate", switch, *SMOKE_TRAIN_ARGS])
        ok &= code == 0
        rows = _read_metrics(os.path.join(out, "metrics.csv"))
        joint_rows = [r for r in rows if int(r["step"]) > 1000]
        ok &= len(rows) == 4000
        for col in empty_cols:
            ok &= all(r[col] == "" for r in rows)
        present = [c for c in ("L_AE", "L_code", "L_cycle", "L_partial", "L_D", "L_G")
                   if c not in empty_cols]
        for col in present:
            ok &= all(r[col] != "" for r in joint_rows)
        m, _ = _completion_vs_identity(os.path.join(out, "final.ckpt"), smoke_run["data"])
        metrics[f"w/o {switch}"] = m
    order = sorted(metrics, key=metrics.get)
    print("\n  ablation completion metrics (reported, not asserted):")
    for name in order:
        print(f"    {name:12s} {metrics[name]:8.1f}")
    _report(8, "ablation harness", ok)
    assert ok


def test_criterion_9_resolution_sweep(smoke_run):
    out = str(smoke_run["root"] / "sweep.csv")
    code = cli_main(["eval", "--ckpt", smoke_run["ckpt"], "--data", smoke_run["data"],
                     "--out", out, "--resolutions", "256,512,1024,2048"])
    lines = open(out).read().splitlines()
    ok = code == 0
    ok &= lines[0].startswith("points,average,")
    ok &= len(lines) == 5
    ok &= [l.split(",")[0] for l in lines[1:]] == ["256", "512", "1024", "2048"]
    print("\n  resolution sweep (values reported, trend not asserted):")
    for l in lines:
        print("    " + l)
    _report(9, "resolution sweep", ok)
    assert ok
