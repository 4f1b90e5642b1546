"""Acceptance criteria 1-11, each at its stated tolerance.

Every test records a one-line verdict that the session summary prints under
"acceptance criteria". Criteria 5-8 train desk-scale models and take most of
the suite's runtime.
"""

import csv
import time

import numpy as np
import pytest

from elemstruct.cli import load_model, main
from elemstruct.config import ModelConfig, TrainConfig, load_config, recipe_path
from elemstruct.data import SyntheticSpec, generate_synthetic, split
from elemstruct.evaluation import (
    correspondence_pairs,
    eval_chamfer,
    eval_correspondence,
    eval_supervised,
    random_assignment_error,
    reconstruct_mesh,
    reconstruction_residual,
    self_match_error,
)
from elemstruct.geometry.losses import chamfer_symmetric
from elemstruct.geometry.sampling import grid_mesh_2d
from elemstruct.model import build_model, count_parameters, loss_supervised, loss_unsupervised
from elemstruct.tensor import default_dtype, grad_check, no_grad
from elemstruct.training import train

RECIPES = ("unsup-K10-2D", "unsup-K10-3D", "unsup-linear", "sup-template-3D", "sup-10D", "chairs-to-tables")
TINY = dict(feature_size=8, encoder_widths=(6, 8), deformation_widths=(5, 5), linear_widths=(6,), mlp_widths=(6, 5))


def jitter(model, rng, scale=0.1):
    """Move biases away from zero so no ReLU input sits on its kink."""
    for name, p in model.named_parameters():
        if name.endswith("bias"):
            p.data += rng.normal(scale=scale, size=p.shape)


def double_loop_chamfer(a, b):
    ab = sum(min(float(((x - y) ** 2).sum()) for y in b) for x in a) / len(a)
    ba = sum(min(float(((x - y) ** 2).sum()) for x in a) for y in b) / len(b)
    return ab + ba


# -- 1: gradients -------------------------------------------------------------

def gradient_configs():
    """24 seeded configurations cycling through every module and both losses."""
    kinds = ["translation", "deformation"]
    adjustments = ["linear", "mlp"]
    dims = [2, 3, 10]
    out = []
    for seed in range(24):
        supervised = seed % 3 == 2
        out.append(dict(
            seed=seed,
            structure_kind=kinds[seed % 2],
            adjustment_kind=adjustments[(seed // 2) % 2],
            d_e=dims[seed % 3] if not supervised else [3, 10][seed % 2],
            supervised=supervised,
        ))
    return out


@pytest.mark.criterion(1)
def test_c01_gradients(acceptance):
    start = time.time()
    worst, failures = 0.0, []
    for c in gradient_configs():
        rng = np.random.default_rng(100 + c["seed"])
        with default_dtype(np.float64):
            if c["supervised"]:
                template = rng.uniform(-0.5, 0.5, (6, 3))
                cfg = ModelConfig(K=1, d_e=c["d_e"], structure_kind=c["structure_kind"], adjustment_kind=c["adjustment_kind"],
                                  supervised=True, initial_structure="template", template="x", points_per_structure=6, **TINY)
                m = build_model(cfg, seed=c["seed"], template=template)
                z = rng.normal(size=(3, 6, 3)) * 0.5
                fn = lambda: loss_supervised(m, z)  # noqa: E731
            else:
                cfg = ModelConfig(K=2, d_e=c["d_e"], structure_kind=c["structure_kind"], adjustment_kind=c["adjustment_kind"],
                                  points_per_structure=4, **TINY)
                m = build_model(cfg, seed=c["seed"])
                z = rng.normal(size=(2, 9, 3)) * 0.5
                fn = lambda: loss_unsupervised(m, z)  # noqa: E731
            jitter(m, rng)
            # h = 1e-6: max pooling over nine points leaves kinks within 1e-4
            # of some check points, which spoils wider central differences
            report = grad_check(fn, m.parameters(), tolerance=1e-4, max_entries_per_input=6, rng=rng, floor=1e-4, h=1e-6)
        worst = max(worst, report.max_rel_error)
        if not report.passed:
            failures.append((c, report.max_rel_error))
    elapsed = time.time() - start
    ok = not failures and elapsed < 120
    acceptance(1, ok, f"24 configs, worst relative error {worst:.2e} (tol 1e-4), {elapsed:.0f}s (limit 120s)")
    assert ok, failures


# -- 2: chamfer oracle ---------------------------------------------------------

@pytest.mark.criterion(2)
def test_c02_chamfer_oracle(acceptance):
    start = time.time()
    rng = np.random.default_rng(2)
    worst = 0.0
    for case in range(100):
        d = (2, 3, 10)[case % 3]
        a = rng.normal(size=(int(rng.integers(10, 201)), d))
        b = rng.normal(size=(int(rng.integers(10, 201)), d))
        tree = chamfer_symmetric(a, b, method="tree")
        brute = double_loop_chamfer(a, b)
        worst = max(worst, abs(tree - brute) / abs(brute))
    elapsed = time.time() - start
    ok = worst < 1e-6 and elapsed < 30
    acceptance(2, ok, f"100 pairs, worst relative difference {worst:.1e} (tol 1e-6), {elapsed:.1f}s (limit 30s)")
    assert ok


# -- 3: permutation invariance -------------------------------------------------

@pytest.mark.criterion(3)
def test_c03_permutation_invariance(acceptance):
    rng = np.random.default_rng(3)
    bad = 0
    for case in range(50):
        kind = ("translation", "deformation")[case % 2]
        m = build_model(ModelConfig(K=3, structure_kind=kind, points_per_structure=16, feature_size=32,
                                    encoder_widths=(16, 32), mlp_widths=(16,), deformation_widths=(8, 8)), seed=case)
        # a few training-mode passes give the batch norms non-trivial running statistics
        m.train()
        with no_grad():
            for _ in range(3):
                m.forward(rng.normal(size=(4, 40, 3)))
        m.eval()
        z = rng.uniform(-0.9, 0.9, size=(int(rng.integers(20, 300)), 3)).astype(np.float32)
        zp = z[rng.permutation(len(z))]
        with no_grad():
            fa, fb = m.encoder(z).data, m.encoder(zp).data
            la, lb = loss_unsupervised(m, z).data, loss_unsupervised(m, zp).data
        if not (np.array_equal(fa, fb) and np.array_equal(la, lb)):
            bad += 1
    acceptance(3, bad == 0, f"50 cases, {bad} with any bitwise difference in feature or loss")
    assert bad == 0


# -- 4: structures do not depend on the target ---------------------------------

@pytest.mark.criterion(4)
def test_c04_structure_independence(acceptance, tmp_path):
    ds = generate_synthetic(SyntheticSpec("box-ellipsoid-mix", 100, 200, seed=4))
    cfg = tmp_path / "c.ini"
    cfg.write_text("[model]\nK = 3\nstructure_kind = deformation\npoints_per_structure = 25\nfeature_size = 32\n"
                   "encoder_widths = 16, 32\nmlp_widths = 32, 16\ndeformation_widths = 16, 16\n[train]\nepochs = 2\ninput_points = 200\n")
    from elemstruct.data import save_dataset

    save_dataset(ds.subset(range(20)), tmp_path / "d")
    assert main(["train", "--config", str(cfg), "--data", str(tmp_path / "d"), "--out", str(tmp_path / "r")]) == 0
    model, _ = load_model(tmp_path / "r" / "final.ckpt")
    reference = model.export_structures()
    differing = 0
    for rec in ds:
        model.reconstruct(rec.points)
        if not all(np.array_equal(x, y) for x, y in zip(reference, model.export_structures())):
            differing += 1
    acceptance(4, differing == 0, f"100 targets through a loaded checkpoint, {differing} changed any exported structure bit")
    assert differing == 0


# -- shared desk-scale training ----------------------------------------------

def fit(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset, seed: int, template=None):
    with default_dtype(np.float32):
        model = build_model(model_cfg, seed=seed, template=template)
        result = train(model, dataset, train_cfg)
    return model, result


# -- 5: affine recovery --------------------------------------------------------

AFFINE_POINTS = 250
AFFINE_MODEL = ModelConfig(K=1, d_e=3, structure_kind="translation", adjustment_kind="linear",
                           points_per_structure=AFFINE_POINTS, initial_structure="template", template="dataset",
                           feature_size=256, encoder_widths=(64, 128, 256), linear_widths=(256, 256))
AFFINE_TRAIN = TrainConfig(epochs=150, learning_rate=1e-3, batch_size=32, input_points=AFFINE_POINTS, seed=0)


@pytest.mark.criterion(5)
def test_c05_affine_recovery(acceptance):
    start = time.time()
    ds = generate_synthetic(SyntheticSpec("affine-family", 240, AFFINE_POINTS, seed=5))
    train_set, test_set = ds.subset(range(200)), ds.subset(range(200, 240))
    model, _ = fit(AFFINE_MODEL, AFFINE_TRAIN, train_set, seed=0, template=ds.template)
    held_out = eval_chamfer(model, test_set).mean
    elapsed = time.time() - start
    ok = held_out < 0.5
    acceptance(5, ok, f"held-out Chamfer x1e3 {held_out:.3f} (< 0.5) on 40 unseen affine images, {elapsed / 60:.1f} min (target < 20)")
    assert ok


# -- 6: learned structures beat fixed squares ----------------------------------

MIX_MODEL = dict(K=10, d_e=2, points_per_structure=125, adjustment_kind="mlp", initial_structure="unit-square",
                 feature_size=256, encoder_widths=(64, 128, 256), deformation_widths=(128, 128), mlp_widths=(256, 128, 64))
MIX_TRAIN = dict(epochs=70, learning_rate=1e-3, batch_size=16, input_points=1000)
MIX_SEEDS = (0, 1, 2)


@pytest.mark.criterion(6)
def test_c06_structure_ordering(acceptance):
    start = time.time()
    ds = generate_synthetic(SyntheticSpec("box-ellipsoid-mix", 360, 1000, seed=6))
    train_set, test_set = split(ds, 300 / 360, seed=6)
    assert (len(train_set), len(test_set)) == (300, 60)
    scores = {}
    for seed in MIX_SEEDS:
        for kind in ("translation", "deformation", "identity"):
            model, _ = fit(ModelConfig(structure_kind=kind, **MIX_MODEL), TrainConfig(seed=seed, **MIX_TRAIN), train_set, seed=seed)
            scores[kind, seed] = eval_chamfer(model, test_set).mean
    learned = sum(scores["translation", s] <= scores["identity", s] and scores["deformation", s] <= scores["identity", s] for s in MIX_SEEDS)
    points_first = sum(scores["translation", s] <= scores["deformation", s] for s in MIX_SEEDS)
    elapsed = time.time() - start
    ok = learned >= 2 and points_first >= 2 and elapsed < 7200
    table = "; ".join(f"seed {s}: T {scores['translation', s]:.3f} D {scores['deformation', s]:.3f} I {scores['identity', s]:.3f}" for s in MIX_SEEDS)
    acceptance(6, ok, f"learned <= fixed in {learned}/3 seeds, translation <= deformation in {points_first}/3 ({table}), {elapsed / 60:.0f} min")
    assert ok


# -- 7 and 8: supervised chains ------------------------------------------------

CHAIN_POINTS = 512
CHAIN_MODEL = dict(K=1, supervised=True, structure_kind="translation", adjustment_kind="mlp", initial_structure="template",
                   template="dataset", points_per_structure=CHAIN_POINTS,
                   feature_size=256, encoder_widths=(64, 128, 256), mlp_widths=(256, 128, 64))
CHAIN_TRAIN = dict(epochs=100, learning_rate=1e-3, batch_size=16, input_points=CHAIN_POINTS)
CHAIN_SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def chain_runs():
    """Train 2D and 3D structures for every seed once; criteria 7 and 8 share them."""
    start = time.time()
    ds = generate_synthetic(SyntheticSpec("articulated-chain", 240, CHAIN_POINTS, seed=7))
    train_set, test_set = ds.subset(range(200)), ds.subset(range(200, 240))
    runs = {}
    for seed in CHAIN_SEEDS:
        for d_e in (2, 3):
            model, result = fit(ModelConfig(d_e=d_e, **CHAIN_MODEL), TrainConfig(seed=seed, **CHAIN_TRAIN), train_set, seed=seed, template=ds.template)
            runs[d_e, seed] = (model, result, eval_supervised(model, test_set))
    return {"runs": runs, "test": test_set, "minutes": (time.time() - start) / 60}


@pytest.mark.criterion(7)
def test_c07_supervised_correspondence(acceptance, chain_runs):
    model, result, _ = chain_runs["runs"][3, CHAIN_SEEDS[0]]
    test_set = chain_runs["test"]
    converged = result.losses[-1] < 0.1 * result.losses[0]
    pairs = correspondence_pairs(test_set, n_pairs=20, seed=7)
    predicted = eval_correspondence(model, pairs)
    chance = random_assignment_error(pairs, seed=7)
    self_err = float(np.mean([self_match_error(model, r.points) for r in test_set]))
    residual = float(np.mean([reconstruction_residual(model, r.points) for r in test_set]))
    # one 3D run out of the six the fixture trains; its share of the time
    minutes = chain_runs["minutes"] / (2 * len(CHAIN_SEEDS))
    ok = converged and predicted < 0.25 * chance and self_err < 2 * residual and minutes < 60
    acceptance(7, ok, f"(a) final/first loss {result.losses[-1] / result.losses[0]:.3f} (< 0.1); "
                      f"(b) match error {predicted:.4f} vs random {chance:.4f} (ratio {predicted / chance:.3f} < 0.25); "
                      f"(c) self-match {self_err:.4f} vs residual {residual:.4f} (< 2x); {minutes:.1f} min per run")
    assert ok


@pytest.mark.criterion(8)
def test_c08_dimensionality(acceptance, chain_runs):
    runs = chain_runs["runs"]
    wins = sum(runs[3, s][2] <= runs[2, s][2] for s in CHAIN_SEEDS)
    table = "; ".join(f"seed {s}: 3D {1e3 * runs[3, s][2]:.3f} 2D {1e3 * runs[2, s][2]:.3f}" for s in CHAIN_SEEDS)
    ok = wins >= 2
    acceptance(8, ok, f"3D <= 2D held-out supervised loss (x1e3) in {wins}/3 seeds ({table})")
    assert ok


# -- 9: mesh export ------------------------------------------------------------

@pytest.mark.criterion(9)
def test_c09_mesh_consistency(acceptance):
    rng = np.random.default_rng(9)
    worst, counts_ok = 0.0, True
    for r in (3, 5):
        with default_dtype(np.float64):
            m = build_model(ModelConfig(K=4, structure_kind="deformation", points_per_structure=r * r, feature_size=32,
                                        encoder_widths=(16, 32), mlp_widths=(32, 16)), seed=r)
        jitter(m, rng)
        m.eval()
        z = rng.uniform(-0.9, 0.9, (100, 3))
        meshes = reconstruct_mesh(m, z, r)
        # the model's fixed samples are the r x r grid, so plain reconstruction
        # evaluates the same sample coordinates in the same order
        assert np.array_equal(m.samples[0], grid_mesh_2d(r).vertices[:, :2])
        points = m.reconstruct(z).points
        for k, mesh in enumerate(meshes):
            worst = max(worst, float(np.abs(mesh.vertices - points[k * r * r : (k + 1) * r * r]).max()))
            if r == 3:
                counts_ok &= len(mesh.vertices) == 9 and len(mesh.faces) == 8
    ok = worst < 1e-6 and counts_ok
    acceptance(9, ok, f"max vertex deviation {worst:.1e} (tol 1e-6); r=3 gives 9 vertices / 8 triangles per structure: {counts_ok}")
    assert ok


# -- 10: parameter accounting --------------------------------------------------

@pytest.mark.criterion(10)
def test_c10_parameter_accounting(acceptance):
    translation = count_parameters(build_model(ModelConfig(K=1, d_e=3, initial_structure="random-cube", points_per_structure=2500,
                                                           feature_size=8, encoder_widths=(4,), mlp_widths=(4,))))["structures"]
    deformation = count_parameters(build_model(ModelConfig(K=1, d_e=3, structure_kind="deformation", feature_size=8,
                                                           encoder_widths=(4,), mlp_widths=(4,))))["structures"]
    shares = {}
    for name in RECIPES:
        cfg = load_config(recipe_path(name)).model
        template = np.random.default_rng(0).uniform(-0.5, 0.5, (cfg.points_per_structure, 3)) if cfg.initial_structure == "template" else None
        for kind in ("translation", "deformation"):
            c = count_parameters(build_model(ModelConfig(**{**cfg.__dict__, "structure_kind": kind}), template=template))
            shares[f"{name}/{kind}"] = c["structures"] / c["total"]
    worst = max(shares, key=shares.get)
    ok = translation == 7500 and deformation == 17283 and shares[worst] < 0.02
    acceptance(10, ok, f"translation {translation} (7500), deformation {deformation} (17283), largest structure share {100 * shares[worst]:.2f}% ({worst}) < 2%")
    assert ok


# -- 11: determinism -----------------------------------------------------------

@pytest.mark.criterion(11)
def test_c11_determinism(acceptance, tmp_path, monkeypatch):
    monkeypatch.setenv("ELEMSTRUCT_THREADS", "1")
    assert main(["gen", "--kind", "mix", "--count", "12", "--points", "300", "--seed", "11", "--out", str(tmp_path / "d")]) == 0
    cfg = tmp_path / "c.ini"
    cfg.write_text("[model]\nK = 3\nstructure_kind = deformation\npoints_per_structure = 32\nfeature_size = 32\n"
                   "encoder_widths = 16, 32\nmlp_widths = 32, 16\ndeformation_widths = 16, 16\n[train]\nepochs = 5\ninput_points = 200\nbatch_size = 4\n")
    for name in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--seed", "3", "--data", str(tmp_path / "d"), "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a" / "loss_history.csv").read_bytes()
    b = (tmp_path / "b" / "loss_history.csv").read_bytes()
    rows = list(csv.reader(a.decode().splitlines()))
    ok = a == b and len(rows) == 6
    acceptance(11, ok, f"two single-thread runs, {len(rows) - 1} epochs, loss histories byte-identical: {a == b}")
    assert ok
