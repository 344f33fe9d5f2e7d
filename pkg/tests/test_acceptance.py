"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) before
asserting. Criteria 8, 11 and 12 share one synthetic desk dataset built from
configs/desk.yaml.
"""
import hashlib
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from torch import nn

from gadfmacnn import dataio, pipeline
from gadfmacnn.augment import GanTrainConfig, critic_loss, generate_samples, gradient_penalty, train_wgan_gp
from gadfmacnn.augment.losses import gradient_norms, input_gradients, interpolate_samples
from gadfmacnn.cli import main
from gadfmacnn.config import load_config
from gadfmacnn.dataio import RecordRef, SignalWindow
from gadfmacnn.gafenc import encode_window, encode_windows, gadf_encode, minmax_rescale, paa_downsample, to_polar
from gadfmacnn.macnn import MACNN, MacnnConfig
from gadfmacnn.macnn import layers as L
from oracles import central_difference, relative_error

DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk.yaml"


def verdict(request, number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
    request.config._acceptance_lines.append((number, line))
    assert ok, line


def _window(values, label=0):
    return SignalWindow(np.asarray(values, dtype=np.float64), label, f"c{label}", RecordRef("w", "horizontal", 0))


def _sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- 1, 2: GADF ------------------------------------------------------------

def test_criterion_01_gadf_oracle(request):
    rng = np.random.default_rng(2024)
    worst, broken = 0.0, 0
    start = time.perf_counter()
    for _ in range(1000):
        P = int(rng.choice([16, 32, 64, 128]))
        length = int(rng.integers(P, 1025))
        x = rng.standard_normal(length) * rng.uniform(0.01, 100) + rng.uniform(-50, 50)
        series = paa_downsample(minmax_rescale(x).values, P)
        img = gadf_encode(to_polar(series)).pixels
        phi = [math.acos(max(-1.0, min(1.0, float(v)))) for v in series]
        oracle = np.array([[math.sin(phi[i] - phi[j]) for j in range(P)] for i in range(P)])
        worst = max(worst, float(np.abs(img - oracle).max()))
        if not (np.array_equal(img, -img.T) and not np.diag(img).any() and np.abs(img).max() <= 1.0):
            broken += 1
    elapsed = time.perf_counter() - start
    verdict(request, 1, worst < 1e-12 and broken == 0 and elapsed < 30,
            f"GADF vs loop oracle, 1000 windows: max err {worst:.2e}, {broken} invariant failures, {elapsed:.1f} s")


def test_criterion_02_affine_invariance(request):
    rng = np.random.default_rng(7)
    same = 0
    for _ in range(100):
        x = rng.standard_normal(int(rng.integers(64, 2049)))
        P = int(rng.choice([16, 32, 64, 128]))
        same += np.array_equal(encode_window(_window(x), P).pixels, encode_window(_window(3.7 * x + 11.2), P).pixels)
    verdict(request, 2, same == 100, f"3.7*x + 11.2 gives a bit-identical image in {same}/100 cases")


# --- 3, 4: WGAN-GP losses --------------------------------------------------

class _Const(nn.Module):
    def __init__(self, c):
        super().__init__()
        self.c = c

    def forward(self, x):
        return torch.full((x.shape[0],), float(self.c), dtype=x.dtype)


def _unit_linear(dim, seed=0):
    w = torch.from_numpy(np.random.default_rng(seed).standard_normal(dim))
    w = w / w.norm()
    return lambda x: x.reshape(x.shape[0], -1) @ w


def _tiny_critic(seed):
    torch.manual_seed(seed)
    return nn.Sequential(nn.Flatten(), nn.Linear(16, 24), nn.Tanh(), nn.Linear(24, 1), nn.Flatten(0)).double()


def test_criterion_03_gradient_penalty(request):
    critic = _tiny_critic(0)
    n_params = sum(p.numel() for p in critic.parameters())
    x = torch.randn(4, 1, 4, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    grads = input_gradients(critic, x)
    errs = []
    for i in range(4):
        xi = x[i:i + 1].clone()
        _, num = central_difference(lambda: critic(xi).sum(), xi)
        errs.append(relative_error(grads[i].detach().numpy(), num))
    const = gradient_penalty(_Const(2.5), x, 10.0).item()
    unit = gradient_penalty(_unit_linear(16), x, 10.0).item()
    ok = n_params <= 1000 and max(errs) < 1e-4 and const == 10.0 and unit < 1e-10
    verdict(request, 3, ok, f"{n_params}-param critic: FD rel err {max(errs):.1e}; "
                            f"constant critic penalty {const!r} (lambda 10); unit-linear penalty {unit:.1e}")


def test_criterion_04_critic_loss_decomposition(request):
    critic = _tiny_critic(3)
    torch.manual_seed(4)
    gen = nn.Sequential(nn.Linear(3, 16), nn.Tanh(), nn.Unflatten(1, (1, 4, 4))).double()
    g = torch.Generator().manual_seed(5)
    real = torch.randn(6, 1, 4, 4, dtype=torch.float64, generator=g)
    z = torch.randn(6, 3, dtype=torch.float64, generator=g)
    eps = torch.rand(6, dtype=torch.float64, generator=g)
    terms = critic_loss(critic, gen, real, z, 10.0, eps=eps)

    fake = gen(z).detach()
    e = eps.view(6, 1, 1, 1)
    x_hat = (e * real + (1 - e) * fake).requires_grad_(True)
    (grad,) = torch.autograd.grad(critic(x_hat).sum(), x_hat)
    penalty = 10.0 * ((grad.reshape(6, -1).norm(dim=1) - 1) ** 2).mean()
    expected = (critic(fake).mean() - critic(real).mean() + penalty).item()
    err = abs(terms.loss.item() - expected)
    verdict(request, 4, err < 1e-10, f"critic loss vs independent fake - real + penalty: |diff| {err:.1e}")


# --- 5, 6, 7: MACNN layers -------------------------------------------------

def test_criterion_05_instance_norm(request):
    g = torch.Generator().manual_seed(0)
    x = torch.randn(6, 16, 24, 24, dtype=torch.float64, generator=g) * 7.0 + 3.0
    y = L.instance_norm(x, torch.ones(16, dtype=torch.float64), torch.zeros(16, dtype=torch.float64), 1e-5)
    mean_err = y.mean(dim=(2, 3)).abs().max().item()
    var_err = (y.var(dim=(2, 3), unbiased=False) - 1).abs().max().item()

    model = MACNN(MacnnConfig(num_classes=4), seed=1)
    xb = torch.rand(5, 1, 64, 64, generator=g) * 2 - 1
    with torch.no_grad():
        batched = model(xb)
        single = torch.cat([model(xb[i:i + 1]) for i in range(5)])
    exact = torch.equal(batched, single)
    verdict(request, 5, mean_err < 1e-6 and var_err < 1e-4 and exact,
            f"IN mean err {mean_err:.1e}, var err {var_err:.1e}; per-sample == batched: {exact}")


def test_criterion_06_eca_table(request):
    got = [L.eca_kernel_size(c, 2.0, 1.0) for c in (16, 32, 64, 128, 256)]
    verdict(request, 6, got == [3, 3, 3, 5, 5], f"kernel sizes for C=16..256: {got}")


def _fd_check(fn, tensors, max_entries=16):
    for t in tensors:
        t.requires_grad_(True)
    proj = torch.from_numpy(np.random.default_rng(99).standard_normal(tuple(fn().shape)))

    def scalar():
        return (fn() * proj).sum()

    grads = torch.autograd.grad(scalar(), tensors)
    # one norm-wise error per layer: a parameter whose true gradient is zero
    # (the wide-block bias, cancelled by instance norm) has only FD noise to compare
    analytic, numeric = [], []
    for i, (t, gr) in enumerate(zip(tensors, grads)):
        idx, num = central_difference(scalar, t, max_entries=max_entries, seed=i)
        analytic.append(gr.reshape(-1)[idx].numpy())
        numeric.append(num)
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))


def test_criterion_07_layer_gradients(request):
    start = time.perf_counter()
    rng = np.random.default_rng(0)

    def r(*shape):
        return torch.from_numpy(rng.standard_normal(shape))

    model = MACNN(MacnnConfig(input_size=16, wide_filters=4, stage_filters=(4, 8), se_reduction=4,
                              num_classes=3), seed=2).double()
    x = r(2, 1, 16, 16)
    h = model.wide(x).detach()
    fused = torch.cat([b(h) for b in model.branches], dim=1).detach()
    feats = model.features(x).detach()
    checks = {
        "conv2d": (lambda a, w, b: L.conv_forward(a, w, b, 2), [r(2, 3, 8, 8), r(4, 3, 3, 3), r(4)]),
        "conv1d": (lambda a, w, b: L.conv_forward(a, w, b, 1), [r(2, 2, 20), r(3, 2, 5), r(3)]),
        "maxpool+relu": (lambda a: L.max_pool(L.relu(a), 2), [r(2, 3, 8, 8)]),
        "instance_norm": (lambda a, s, t: L.instance_norm(a, s, t), [r(2, 3, 5, 5), r(3), r(3)]),
        "se": (lambda u, w1, w2: L.se_block(u, w1, w2, 4), [r(2, 16, 4, 4), r(4, 16), r(16, 4)]),
        "eca": (lambda d, w, b: L.eca_apply(d, w, b), [r(3, 12), r(3), torch.tensor(0.3, dtype=torch.float64)]),
        "softmax": (lambda a: L.softmax(a), [r(3, 5)]),
        "wide block": (lambda a, *_: model.wide(a), [x.clone()] + list(model.wide.parameters())),
        "conv stage": (lambda a, *_: model.branches[0][0](a), [h.clone()] + list(model.branches[0][0].parameters())),
        "eca block": (lambda a, *_: model.eca(a), [fused.clone()] + list(model.eca.parameters())),
        "head": (lambda a, *_: L.softmax(L.dense(a, model.fc_weight) + model.fc_bias),
                 [feats.clone(), model.fc_weight, model.fc_bias]),
        "full model": (lambda a, *_: model(a), [x.clone()] + list(model.parameters())),
    }
    errs = {}
    for name, (fn, tensors) in checks.items():
        errs[name] = _fd_check(lambda: fn(*tensors), tensors)
    elapsed = time.perf_counter() - start
    worst = max(errs, key=errs.get)
    verdict(request, 7, errs[worst] < 1e-4 and elapsed < 120,
            f"{len(errs)} layer FD checks, worst {worst} {errs[worst]:.1e}, {elapsed:.1f} s")


# --- 8, 11, 12: desk pipeline ---------------------------------------------

@pytest.fixture(scope="module")
def desk_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    cfg = load_config(DESK_CONFIG, [f"dataset.root={root / 'data'}", f"output.run_dir={root / 'run'}"])
    pipeline.cmd_synth(cfg)
    return root


def _desk_config(root, run, *extra):
    return load_config(DESK_CONFIG, [f"dataset.root={root / 'data'}", f"output.run_dir={root / run}", *extra])


@pytest.fixture(scope="module")
def desk_run(desk_data):
    cfg = _desk_config(desk_data, "run")
    start = time.perf_counter()
    manifest = pipeline.cmd_encode(cfg)
    stamp = pipeline.cmd_train_classifier(cfg, augment=False)
    report = pipeline.cmd_evaluate(cfg, augment=False)
    elapsed = time.perf_counter() - start
    return cfg, manifest, stamp, report, elapsed


def test_criterion_08_desk_accuracy(request, desk_run):
    cfg, manifest, stamp, report, elapsed = desk_run
    counts = manifest["counts"]
    per_class = {s: sorted(set(counts[s].values())) for s in ("train", "val", "test")}
    ok = (per_class == {"train": [40], "val": [20], "test": [20]} and len(counts["test"]) == 4
          and cfg.train.epochs <= 20 and report.accuracy >= 0.90 and elapsed < 600)
    verdict(request, 8, ok, f"4 classes x 40/20/20 windows, {cfg.train.epochs} epochs: test accuracy "
                            f"{report.accuracy:.3f} (best val epoch {stamp['best_epoch']}), {elapsed:.0f} s")


def test_criterion_11_embedding_separation(request, desk_run):
    import json

    cfg = desk_run[0]
    paths = pipeline.cmd_report(cfg, augment=False)
    proj = {p["stage"]: p for p in json.loads(Path(paths["json"]).read_text())["projections"]}
    s0, s1 = proj["initial"]["silhouette"], proj["final"]["silhouette"]
    verdict(request, 11, s1 > s0, f"t-SNE silhouette on the test set: untrained {s0:.3f}, trained {s1:.3f} "
                                  f"(perplexity {proj['final']['perplexity']:g})")


def test_criterion_12_reproducibility(request, desk_data):
    quick = ["gan.total_gen_steps=20", "gan.checkpoint_every=10", "gan.samples_per_class=20", "train.epochs=3"]
    digests = []
    for run in ("repro_a", "repro_b"):
        args = ["all", "-c", str(DESK_CONFIG), "--set", f"dataset.root={desk_data / 'data'}",
                "--set", f"output.run_dir={desk_data / run}"]
        for item in quick:
            args += ["--set", item]
        assert main(args) == 0
        base = desk_data / run
        files = ["data/manifest.json", "data/train.gaf", "data/val.gaf", "data/test.gaf",
                 "augment/synthetic.gaf", "classifier/augmented/checkpoint.ckpt",
                 "reports/augmented/evaluation.json", "reports/augmented/report.json"]
        files += sorted(p.relative_to(base).as_posix() for p in (base / "gan").glob("*.ckpt"))
        digests.append({f: _sha(base / f) for f in files})
    differ = [f for f in digests[0] if digests[0][f] != digests[1].get(f)]
    verdict(request, 12, not differ and digests[0].keys() == digests[1].keys(),
            f"two CLI runs, {len(digests[0])} artifacts hashed, differing: {differ or 'none'}")


# --- 9: augmentation under small samples ----------------------------------

def test_criterion_09_augmentation_non_degradation(request, desk_data):
    small = ["encode.image_size=32", "dataset.train_windows_per_class=10", "gan.batch_size=8",
             "gan.total_gen_steps=1000", "gan.checkpoint_every=500", "gan.samples_per_class=200"]
    acc = {"augmented": [], "real_only": []}
    for seed in range(3):
        seeds = [f"gan.seed={seed}", f"gan.sample_seed={seed}", f"train.seed={seed}"]
        cfg = _desk_config(desk_data, f"small_{seed}", *small, *seeds)
        manifest = pipeline.cmd_encode(cfg)
        assert set(manifest["counts"]["train"].values()) == {10}
        pipeline.cmd_train_gan(cfg)
        pipeline.cmd_augment(cfg)
        for augment in (True, False):
            pipeline.cmd_train_classifier(cfg, augment)
            acc["augmented" if augment else "real_only"].append(pipeline.cmd_evaluate(cfg, augment).accuracy)
    med_aug, med_real = float(np.median(acc["augmented"])), float(np.median(acc["real_only"]))
    verdict(request, 9, med_aug >= med_real - 0.02,
            f"median test accuracy over 3 seeds, 10 real/class: augmented {med_aug:.3f} "
            f"{[round(a, 3) for a in acc['augmented']]} vs real-only {med_real:.3f} "
            f"{[round(a, 3) for a in acc['real_only']]}")


# --- 10: WGAN-GP sanity ----------------------------------------------------

def test_criterion_10_wgan_sanity(request):
    base = dataio.SyntheticSpec(sample_rate=12800.0, resonance_hz=500.0, decay=500.0, snr_db=6.0)
    windows = []
    for label, cls in enumerate(("healthy", "outer_race")):
        for m in range(4):
            rec = dataio.synth_bearing_signal(dataio.SyntheticSpec(**{**base.__dict__, "fault_class": cls,
                                                                      "seed": 100 + m}))
            windows += dataio.segment_windows(rec, 1024, 1024, label, cls)
    images = encode_windows(windows, 32)
    start_w, end_w, norms = [], [], []
    for seed in range(3):
        cfg = GanTrainConfig(image_size=32, width=16, total_gen_steps=500, batch_size=32,
                             learning_rate=1e-3, seed=seed, warmup_gen_steps=10, warmup_critic_steps=25)
        for label, ck in train_wgan_gp(images, cfg).items():
            w = [m["wasserstein_estimate"] for m in ck.metrics_history]
            start_w.append(abs(w[9]))
            end_w.append(abs(w[-1]))
            real = torch.tensor(np.stack([im.pixels for im in images if im.label == label]),
                                dtype=torch.float32)[:64, None]
            fake = torch.tensor(np.stack([s.pixels for s in generate_samples(ck, real.shape[0], seed=1)]),
                                dtype=torch.float32)[:, None]
            norms.append(float(gradient_norms(ck.critic, interpolate_samples(real, fake, seed=3)).median()))
    m10, mend, mnorm = float(np.median(start_w)), float(np.median(end_w)), float(np.median(norms))
    verdict(request, 10, mend < m10 and 0.5 <= mnorm <= 1.5,
            f"2 classes x 3 seeds, 500 steps: median |W| step 10 {m10:.3f} -> end {mend:.3f}; "
            f"median interpolate grad norm {mnorm:.3f}")
