"""Estimator-style wrappers over the functional pipeline.

Thin sklearn-compatible facades: construction stores parameters verbatim,
``fit`` builds the immutable config objects (and trains, for the distiller),
and ``transform``/``predict`` delegate to the functional core. Useful for
composing the stages in sklearn Pipelines and for parameter search tooling;
everything they do is available directly from the underlying modules.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .frontview import FrontViewMap, ProjectionConfig, build_map, crop_patch
from .micronet.distill import DEFAULT_BAND, ScriptedTeacher, distill_batch_loss
from .micronet.fusion import FusionConfig, StudentFusionNet
from .uvpm import UvpmConfig, propose
from .validation import as_point_cloud_list

__all__ = ["FrontViewProjector", "VotingProposer", "StudentDistiller"]


class FrontViewProjector(BaseEstimator, TransformerMixin):
    """Stateless transformer: point clouds in, front-view XYZ maps out."""

    def __init__(
        self,
        delta_theta: float = math.radians(0.4),
        delta_phi: float = math.radians(0.4),
        theta_range: tuple = (-math.pi / 4.0, math.pi / 4.0),
        phi_range: tuple = (math.radians(-24.9), math.radians(2.0)),
    ):
        self.delta_theta = delta_theta
        self.delta_phi = delta_phi
        self.theta_range = theta_range
        self.phi_range = phi_range

    def fit(self, X=None, y=None):
        self.config_ = ProjectionConfig(
            delta_theta=self.delta_theta,
            delta_phi=self.delta_phi,
            theta_range=tuple(self.theta_range),
            phi_range=tuple(self.phi_range),
        )
        return self

    def transform(self, X) -> list:
        if not hasattr(self, "config_"):
            raise NotFittedError("call fit before transform")
        return [build_map(c, self.config_) for c in as_point_cloud_list(X)]


class VotingProposer(BaseEstimator):
    """Predictor: point clouds in, per-cloud 3D proposal lists out."""

    def __init__(
        self,
        spacing: float = 0.2,
        delta: float = 0.3,
        epsilon: float = 0.1,
        shell_tolerance: int = 5,
        n_seeds: int = 256,
        k_clusters: int = 32,
        vote_radius: float = 1.0,
        min_vote_points: int = 5,
        cluster_radius: float = 2.0,
        yaw_steps: int = 32,
        nms_threshold: float | None = 0.5,
        voting: bool = True,
        vote_backbone: str = "geometric",
        projection: ProjectionConfig | None = None,
    ):
        self.spacing = spacing
        self.delta = delta
        self.epsilon = epsilon
        self.shell_tolerance = shell_tolerance
        self.n_seeds = n_seeds
        self.k_clusters = k_clusters
        self.vote_radius = vote_radius
        self.min_vote_points = min_vote_points
        self.cluster_radius = cluster_radius
        self.yaw_steps = yaw_steps
        self.nms_threshold = nms_threshold
        self.voting = voting
        self.vote_backbone = vote_backbone
        self.projection = projection

    def fit(self, X=None, y=None):
        self.config_ = UvpmConfig(
            spacing=self.spacing,
            delta=self.delta,
            epsilon=self.epsilon,
            shell_tolerance=self.shell_tolerance,
            n_seeds=self.n_seeds,
            k_clusters=self.k_clusters,
            vote_radius=self.vote_radius,
            min_vote_points=self.min_vote_points,
            cluster_radius=self.cluster_radius,
            yaw_steps=self.yaw_steps,
            nms_threshold=self.nms_threshold,
            voting=self.voting,
            vote_backbone=self.vote_backbone,
        )
        self.projection_ = (
            self.projection if self.projection is not None else ProjectionConfig()
        )
        return self

    def predict(self, X) -> list:
        """One proposal list per input cloud (maps are built internally)."""
        if not hasattr(self, "config_"):
            raise NotFittedError("call fit before predict")
        out = []
        for cloud in as_point_cloud_list(X):
            fvmap = build_map(cloud, self.projection_)
            out.append(propose(cloud, fvmap, self.config_, self.projection_))
        return out


class StudentDistiller(BaseEstimator):
    """Trains the micro fusion student against a teacher by gated BCE.

    ``fit`` takes instances of (FrontViewMap patch, proposal Rect2D list) at
    the configured input size, scores every rectangle with the teacher once,
    and runs full-batch gradient descent on the distillation loss; per-step
    losses land in ``losses_``. ``predict`` returns per-instance arrays of
    foreground probabilities.
    """

    def __init__(
        self,
        teacher=None,
        band: tuple = DEFAULT_BAND,
        learning_rate: float = 0.1,
        n_steps: int = 50,
        input_size: int = 16,
        channels: int = 4,
        attn_blocks: int = 2,
        token_grid: int = 4,
        head_width: int = 8,
        teacher_patch: int = 8,
        seed: int = 0,
    ):
        self.teacher = teacher
        self.band = band
        self.learning_rate = learning_rate
        self.n_steps = n_steps
        self.input_size = input_size
        self.channels = channels
        self.attn_blocks = attn_blocks
        self.token_grid = token_grid
        self.head_width = head_width
        self.teacher_patch = teacher_patch
        self.seed = seed

    def _teacher_scores(self, instances, teacher) -> list:
        scores = []
        for fvmap, rects in instances:
            for rect in rects:
                patch = crop_patch(fvmap, rect, self.teacher_patch)
                scores.append(float(teacher.classify(patch)))
        return scores

    def _student_scores(self, instances) -> list:
        scores = []
        for fvmap, rects in instances:
            scores.extend(self.net_.foreground_scores(fvmap.data, list(rects)))
        return scores

    def fit(self, X, y=None):
        instances = list(X)
        if not instances:
            raise ValueError("need at least one (map, rects) instance")
        for fvmap, rects in instances:
            if not isinstance(fvmap, FrontViewMap):
                raise ValueError("instances must pair a FrontViewMap with rects")
            if not rects:
                raise ValueError("every instance needs at least one rect")
        teacher = self.teacher if self.teacher is not None else ScriptedTeacher()
        self.net_ = StudentFusionNet(
            FusionConfig(
                input_size=self.input_size,
                channels=self.channels,
                attn_blocks=self.attn_blocks,
                token_grid=self.token_grid,
                head_width=self.head_width,
                seed=self.seed,
            )
        )
        targets = self._teacher_scores(instances, teacher)
        params = self.net_.parameters()
        self.losses_ = []
        self.n_contributing_ = 0
        for _ in range(int(self.n_steps)):
            for p in params:
                p.grad = None
            loss, count = distill_batch_loss(
                self._student_scores(instances), targets, tuple(self.band)
            )
            self.losses_.append(float(loss.data))
            self.n_contributing_ = count
            if count == 0 or self.learning_rate == 0.0:
                continue
            loss.backward()
            for p in params:
                if p.grad is not None:
                    p.data = p.data - self.learning_rate * p.grad
        return self

    def predict(self, X) -> list:
        """Per-instance arrays of foreground probabilities."""
        if not hasattr(self, "net_"):
            raise NotFittedError("call fit before predict")
        out = []
        for fvmap, rects in X:
            scores = self.net_.foreground_scores(fvmap.data, list(rects))
            out.append(np.array([float(s.data) for s in scores]))
        return out
