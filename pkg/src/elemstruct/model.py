"""The reconstruction model: encoder, K structure modules, K adjustment modules.

The output for a target ``Z`` is the union over ``k`` of ``p_k(psi_k(S_k), f(Z))``.
Structure points depend on the parameters only, never on the target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adjustment import LinearAdjustment, MLPAdjustment
from .config import ModelConfig
from .encoder import PointSetEncoder
from .errors import ConfigError, DimensionError
from .geometry.losses import chamfer_symmetric, supervised_l2
from .geometry.types import TriangleMesh, as_points
from .structures import (
    IdentityStructure,
    InitialStructure,
    PatchDeformationModule,
    PointTranslationModule,
    fixed_samples,
    resample_initial,
)
from .tensor import Module, Tensor, concat, count, no_grad


@dataclass
class ReconstructedShape:
    points: np.ndarray  # (K*N, 3)
    structure_index: np.ndarray  # k per output point
    point_index: np.ndarray  # i per output point


class ReconstructionModel(Module):
    def __init__(self, config: ModelConfig, seed: int = 0, template=None):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        K, N, d_e = config.K, config.points_per_structure, config.d_e

        self.initial = [self._initial_structure(config, template, seed + k) for k in range(K)]
        self.samples = [np.asarray(fixed_samples(s, seed=seed + 1000 + k), dtype=float) for k, s in enumerate(self.initial)]
        self.n_points = len(self.samples[0])
        if config.supervised and self.n_points != N:
            raise ConfigError(f"template has {self.n_points} points but points_per_structure = {N}")

        self.encoder = PointSetEncoder(rng, config.encoder_widths, config.feature_size)
        self.structures = [self._structure_module(config, s, samples, rng) for s, samples in zip(self.initial, self.samples)]
        if config.adjustment_kind == "linear":
            self.adjustments = [LinearAdjustment(config.feature_size, d_e, rng, config.linear_widths) for _ in range(K)]
        else:
            self.adjustments = [MLPAdjustment(config.feature_size, d_e, rng, config.mlp_widths) for _ in range(K)]

    @staticmethod
    def _initial_structure(config: ModelConfig, template, seed: int) -> InitialStructure:
        N = config.points_per_structure
        if config.initial_structure == "unit-square":
            return InitialStructure("unit-square-2d", N)
        if config.initial_structure == "random-cube":
            pts = np.random.default_rng(seed).uniform(-0.5, 0.5, size=(N, 3))
            return InitialStructure("fixed-point-set", N, points=pts)
        if template is None:
            raise ConfigError("initial_structure = template but no template was supplied")
        if isinstance(template, TriangleMesh):
            return InitialStructure("template-mesh", N, mesh=template)
        return InitialStructure("fixed-point-set", N, points=as_points(template))

    @staticmethod
    def _structure_module(config: ModelConfig, initial: InitialStructure, samples: np.ndarray, rng) -> Module:
        if config.structure_kind == "translation":
            return PointTranslationModule(samples, config.d_e)
        if config.structure_kind == "deformation":
            return PatchDeformationModule(initial.dim_in, config.d_e, rng, config.deformation_widths)
        return IdentityStructure(initial.dim_in, config.d_e)

    # -- structure points ---------------------------------------------------
    @property
    def K(self) -> int:
        return self.config.K

    @property
    def resamples(self) -> bool:
        """Whether training draws fresh initial samples every step."""
        if self.config.supervised or self.config.structure_kind == "translation":
            return False
        return all(s.resamplable for s in self.initial)

    def resample(self, rng: np.random.Generator) -> list[np.ndarray]:
        seeds = rng.integers(0, 2**63 - 1, size=self.K)
        return [resample_initial(s, self.n_points, seed=int(sd)).points for s, sd in zip(self.initial, seeds)]

    def structure_points(self, samples=None) -> list[Tensor]:
        samples = self.samples if samples is None else samples
        return [module(s) for module, s in zip(self.structures, samples)]

    def provenance(self) -> tuple[np.ndarray, np.ndarray]:
        ks = np.repeat(np.arange(self.K), self.n_points)
        iis = np.tile(np.arange(self.n_points), self.K)
        return ks, iis

    # -- reconstruction -----------------------------------------------------
    def forward(self, targets, samples=None) -> Tensor:
        x = targets if isinstance(targets, Tensor) else Tensor(np.asarray(as_points(targets)))
        single = x.ndim == 2
        if x.shape[-1] != 3:
            raise DimensionError(f"targets must be 3D, got shape {x.shape}")
        feature = self.encoder(x)
        if single:
            feature = feature.reshape(1, -1)
        parts = [adj(feature, e) for adj, e in zip(self.adjustments, self.structure_points(samples))]
        out = concat(parts, axis=1)
        return out.reshape(out.shape[1], 3) if single else out

    def reconstruct(self, target) -> ReconstructedShape:
        """Eval-mode reconstruction of one shape with the fixed samples."""
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                pts = self.forward(np.asarray(as_points(target))).data
        finally:
            self.train(was_training)
        ks, iis = self.provenance()
        return ReconstructedShape(np.asarray(pts, dtype=float), ks, iis)

    def export_structures(self) -> list[np.ndarray]:
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                return [np.asarray(e.data, dtype=float) for e in self.structure_points()]
        finally:
            self.train(was_training)


def build_model(config: ModelConfig, seed: int = 0, template=None) -> ReconstructionModel:
    return ReconstructionModel(config, seed=seed, template=template)


def forward(model: ReconstructionModel, target) -> ReconstructedShape:
    return model.reconstruct(target)


def loss_unsupervised(model: ReconstructionModel, targets, samples=None, encoder_input=None) -> Tensor:
    """Chamfer between the union of adjusted structures and the targets."""
    enc = targets if encoder_input is None else encoder_input
    return chamfer_symmetric(model.forward(enc, samples), np.asarray(as_points(targets)))


def loss_supervised(model: ReconstructionModel, targets, encoder_input=None) -> Tensor:
    """Index-aligned squared loss; target row i corresponds to structure sample i."""
    z = np.asarray(as_points(targets))
    if z.shape[-2] != model.n_points:
        raise DimensionError(f"target has {z.shape[-2]} points, structure has {model.n_points}")
    enc = z if encoder_input is None else encoder_input
    return supervised_l2(model.forward(enc), z)


def count_parameters(model: ReconstructionModel) -> dict[str, int]:
    counts = {
        "encoder": count(model.encoder),
        "structures": int(sum(count(m) for m in model.structures)),
        "adjustments": int(sum(count(m) for m in model.adjustments)),
    }
    counts["total"] = sum(counts.values())
    return counts
