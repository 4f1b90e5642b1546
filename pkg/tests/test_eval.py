import csv

import numpy as np
import pytest

from elemstruct.config import ModelConfig
from elemstruct.data import ShapeDataset, SyntheticSpec, generate_synthetic, make_record
from elemstruct.errors import DataError, EmptyInputError, UnsupportedOperationError
from elemstruct.evaluation import (
    ChamferReport,
    correspondence_pairs,
    eval_chamfer,
    eval_correspondence,
    eval_supervised,
    match,
    predicted_affine,
    random_assignment_error,
    reconstruct_mesh,
    self_match_error,
    to_report_units,
    write_correspondences,
    write_metrics_csv,
)
from elemstruct.geometry.losses import correspondence_error
from elemstruct.geometry.sampling import grid_mesh_2d
from elemstruct.model import build_model
from elemstruct.tensor import default_dtype

NARROW = dict(feature_size=16, encoder_widths=(8, 16), deformation_widths=(8, 8), linear_widths=(16,), mlp_widths=(16, 8))


def rig_identity(model):
    for adj in model.adjustments:
        last = adj.hyper.layers[-1]
        last.weight.data[...] = 0
        d = adj.dim
        A = np.zeros((3, d))
        A[np.arange(min(3, d)), np.arange(min(3, d))] = 1 - 1e-12
        last.bias.data[...] = np.concatenate([np.arctanh(A.ravel()), np.zeros(3)])


def template_model(template):
    cfg = ModelConfig(K=1, d_e=3, adjustment_kind="linear", supervised=True, initial_structure="template", template="x", points_per_structure=len(template), **NARROW)
    with default_dtype(np.float64):
        m = build_model(cfg, template=template, seed=0)
    rig_identity(m)
    return m.eval()


@pytest.fixture(scope="module")
def chain():
    return generate_synthetic(SyntheticSpec("articulated-chain", 4, 30, seed=0))


class TestChamfer:
    def test_perfect_reconstruction_is_zero(self, chain):
        m = template_model(chain.template)
        ds = ShapeDataset([make_record("t", "c", chain.template, normalize=False)])
        assert eval_chamfer(m, ds).values[0] == pytest.approx(0.0, abs=1e-15)

    def test_supervised_metric(self, chain):
        m = template_model(chain.template)
        expect = np.mean([np.mean(((chain.template - r.points) ** 2).sum(1)) for r in chain])
        assert eval_supervised(m, chain) == pytest.approx(expect, rel=1e-9)

    def test_report_scale(self):
        assert to_report_units(0.00145) == pytest.approx(1.45)

    def test_mean_and_categories(self):
        r = ChamferReport(["a", "b", "c"], ["x", "x", "y"], np.array([1.0, 2.0, 6.0]))
        assert r.mean == 3.0
        assert r.per_category() == {"x": 1.5, "y": 6.0}

    def test_empty_set(self, chain):
        with pytest.raises(EmptyInputError):
            eval_chamfer(template_model(chain.template), ShapeDataset([]))

    def test_order_invariant(self, chain):
        m = template_model(chain.template)
        rec = chain[1]
        perm = np.random.default_rng(0).permutation(rec.n_points)
        shuffled = ShapeDataset([make_record("p", "c", rec.points[perm], normalize=False)])
        assert eval_chamfer(m, chain.subset([1])).values[0] == eval_chamfer(m, shuffled).values[0]

    def test_csv_rows(self, chain, tmp_path):
        m = template_model(chain.template)
        report = eval_chamfer(m, chain)
        write_metrics_csv(tmp_path / "m.csv", report, {r.id: 0.5 for r in chain})
        rows = list(csv.reader(open(tmp_path / "m.csv")))
        assert len(rows) == 1 + len(chain) + 1
        assert rows[-1][0] == "mean"
        assert float(rows[-1][2]) == pytest.approx(report.mean, abs=1e-6)


class TestMatch:
    def test_refuses_multi_structure(self):
        m = build_model(ModelConfig(K=2, points_per_structure=4, **NARROW))
        with pytest.raises(UnsupportedOperationError):
            match(m, np.zeros((3, 3)), np.ones((3, 3)))

    def test_single_point_structure(self):
        m = template_model(np.array([[0.1, 0.2, 0.3]]))
        rng = np.random.default_rng(0)
        cmap = match(m, rng.normal(size=(7, 3)), rng.normal(size=(9, 3)), snap=False)
        np.testing.assert_array_equal(cmap.structure_indices, 0)
        np.testing.assert_allclose(cmap.target_points, [[0.1, 0.2, 0.3]] * 7, atol=1e-12)

    def test_indices_are_brute_force_nearest(self, chain):
        m = template_model(chain.template)
        a, b = chain[0].points, chain[1].points
        cmap = match(m, a, b, snap=False)
        rec = m.reconstruct(a).points
        d = ((a[:, None] - rec[None]) ** 2).sum(-1)
        np.testing.assert_array_equal(cmap.structure_indices, d.argmin(1))
        assert cmap.structure_indices.min() >= 0 and cmap.structure_indices.max() < len(chain.template)
        assert len(cmap) == len(a)

    def test_snap_lands_on_target_vertices(self, chain):
        m = template_model(chain.template)
        b = chain[1].points
        cmap = match(m, chain[0].points, b)
        assert all(np.any(np.all(p == b, axis=1)) for p in cmap.target_points)

    def test_deterministic_and_idempotent(self, chain):
        m = template_model(chain.template)
        a = chain[2].points
        one = match(m, a, a, snap=False)
        two = match(m, a, a, snap=False)
        np.testing.assert_array_equal(one.structure_indices, two.structure_indices)
        again = match(m, one.target_points, one.target_points, snap=False)
        np.testing.assert_array_equal(again.structure_indices, one.structure_indices)

    def test_correspondence_file(self, chain, tmp_path):
        m = template_model(chain.template)
        cmap = match(m, chain[0].points, chain[1].points)
        write_correspondences(tmp_path / "c.txt", cmap)
        rows = np.loadtxt(tmp_path / "c.txt")
        assert rows.shape == (len(chain[0].points), 5)
        np.testing.assert_array_equal(rows[:, 0], np.arange(len(rows)))
        np.testing.assert_allclose(rows[:, 1:4], cmap.target_points, rtol=1e-8)
        np.testing.assert_array_equal(rows[:, 4], cmap.structure_indices)


class TestCorrespondenceError:
    def test_exact_prediction(self):
        x = np.random.default_rng(0).normal(size=(10, 3))
        assert correspondence_error(x, x) == 0.0

    def test_constant_offset(self):
        x = np.random.default_rng(0).normal(size=(10, 3))
        v = np.array([0.3, -0.4, 1.2])
        assert correspondence_error(x + v, x) == pytest.approx(np.linalg.norm(v))

    def test_identical_poses_match_exactly(self):
        ds = generate_synthetic(SyntheticSpec("articulated-chain", 2, 30, seed=1, zero_pose=True))
        m = template_model(ds.template)
        pairs = correspondence_pairs(ds)
        assert eval_correspondence(m, pairs) == pytest.approx(0.0, abs=1e-12)
        assert self_match_error(m, ds[0].points) == pytest.approx(0.0, abs=1e-12)

    def test_pairs_need_ground_truth(self):
        ds = generate_synthetic(SyntheticSpec("box-ellipsoid-mix", 3, 20, seed=0))
        with pytest.raises(DataError):
            correspondence_pairs(ds)
        m = template_model(ds[0].points)
        with pytest.raises(DataError):
            eval_correspondence(m, [(ds[0], ds[1])])

    def test_random_baseline_is_positive(self, chain):
        assert random_assignment_error(correspondence_pairs(chain)) > 0.1

    def test_pair_sampling(self, chain):
        assert len(correspondence_pairs(chain)) == 6
        pairs = correspondence_pairs(chain, n_pairs=2, seed=3)
        assert len(pairs) == 2 and all(a.id != b.id for a, b in pairs)


class TestMesh:
    def deformation_model(self, K=2):
        with default_dtype(np.float64):
            m = build_model(ModelConfig(K=K, structure_kind="deformation", points_per_structure=9, **NARROW), seed=3)
        return m.eval()

    def test_two_triangles_per_structure(self):
        meshes = reconstruct_mesh(self.deformation_model(), np.random.default_rng(0).normal(size=(20, 3)), 2)
        assert len(meshes) == 2
        assert all(len(mm.faces) == 2 and len(mm.vertices) == 4 for mm in meshes)

    def test_vertices_equal_point_forward(self):
        m = self.deformation_model(K=3)
        z = np.random.default_rng(1).normal(size=(30, 3)) * 0.4
        meshes = reconstruct_mesh(m, z, 3)
        # the model's fixed samples are the 3x3 grid nodes, in mesh vertex order
        np.testing.assert_array_equal(m.samples[0], grid_mesh_2d(3).vertices[:, :2])
        out = m.reconstruct(z).points
        for k, mm in enumerate(meshes):
            assert len(mm.vertices) == 9 and len(mm.faces) == 8
            np.testing.assert_allclose(mm.vertices, out[k * 9 : (k + 1) * 9], atol=1e-6)
            assert np.all(np.abs(mm.vertices) < 1)

    def test_translation_refused(self):
        m = build_model(ModelConfig(K=1, points_per_structure=9, **NARROW))
        with pytest.raises(UnsupportedOperationError, match="finite"):
            reconstruct_mesh(m, np.zeros((4, 3)) + np.arange(4)[:, None], 3)


class TestAffine:
    def test_identity_rig(self, chain):
        m = template_model(chain.template)
        (A, b), = predicted_affine(m, chain[0].points)
        np.testing.assert_allclose(A, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(b, 0, atol=1e-12)

    def test_mlp_model_refused(self):
        m = build_model(ModelConfig(K=1, points_per_structure=4, **NARROW))
        with pytest.raises(UnsupportedOperationError):
            predicted_affine(m, np.zeros((3, 3)) + np.arange(3)[:, None])
