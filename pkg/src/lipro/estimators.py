"""scikit-learn style wrappers for the numerical pieces that fit the pattern.

Only operations with a natural ``fit``/``transform`` reading are wrapped:
calibrating a heat-kernel bound from observation times, and applying a
form's resolvent or semigroup to batches of node functions (one per row).
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .diffusion_lab import CircleModel, HeatKernelBound, kernel_domination_check
from .dirichlet_mosco import GraphDirichletForm


class HeatKernelCalibrator(BaseEstimator):
    """Fit the smallest ``C′`` at fixed ``ν`` so that ``φ`` dominates the circle kernel.

    ``fit`` takes the times as a column (or flat) array. After fitting,
    ``bound_`` holds the calibrated :class:`HeatKernelBound`.
    """

    def __init__(self, nu=3.0, L=2 * math.pi, nodes=64):
        self.nu = nu
        self.L = L
        self.nodes = nodes

    def fit(self, X, y=None):
        times = check_array(X, ensure_2d=False).ravel()
        model = CircleModel(self.L, self.nodes)
        probe = HeatKernelBound(1.0, self.nu, float(times.max()))
        report = kernel_domination_check(model, probe, times)
        self.Cprime_ = report.min_Cprime
        self.bound_ = HeatKernelBound(self.Cprime_, self.nu, float(times.max()))
        return self

    def predict(self, X):
        """Evaluate the fitted ``φ`` at rows ``(ξ, r)``."""
        check_is_fitted(self, "bound_")
        X = check_array(X)
        return self.bound_.phi(X[:, 0], X[:, 1])


class _FormTransformer(TransformerMixin, BaseEstimator):
    def fit(self, X, y=None):
        if not isinstance(self.form, GraphDirichletForm):
            raise TypeError("form must be a GraphDirichletForm")
        X = check_array(X)
        if X.shape[1] != len(self.form):
            raise ValueError(f"expected {len(self.form)} columns, got {X.shape[1]}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return np.ascontiguousarray(self._apply(X.T).T)


class ResolventTransformer(_FormTransformer):
    """Rows are node functions ``u``; ``transform`` returns ``G(α)u`` row by row."""

    def __init__(self, form=None, alpha=1.0):
        self.form = form
        self.alpha = alpha

    def _apply(self, U):
        return self.form.resolvent_apply(self.alpha, U)


class SemigroupTransformer(_FormTransformer):
    """Rows are node functions ``u``; ``transform`` returns ``T(t)u`` row by row."""

    def __init__(self, form=None, t=1.0):
        self.form = form
        self.t = t

    def _apply(self, U):
        return self.form.semigroup_apply(self.t, U)
