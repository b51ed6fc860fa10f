"""Ready-made refinement studies on the circle family.

Coarse circles have ``n`` nodes and circumference ``L (1 + 1/n)`` when
``stretch`` is set (plain ``L`` otherwise); the reference is the ``L``
circle at a fine resolution, reached by matched-subset transfer.
"""

from __future__ import annotations

import math

import numpy as np

from .diffusion_lab import CircleModel, sample_coupled_bm
from .dirichlet_mosco import (
    GraphDirichletForm,
    InitialDensity,
    fdd_convergence_test,
    matched_subset_transfer,
    mosco_resolvent_test,
)
from .lp_metric import PairedSample, convergence_report
from .metric_core import MetricMap


def coarse_length(L, n, stretch):
    return L * (1 + 1 / n) if stretch else L


def fourier_mode(n, k, kind="cos"):
    """``cos(kθ)`` or ``sin(kθ)`` sampled at the ``n`` node angles."""
    theta = 2 * math.pi * np.arange(n) / n
    return np.cos(k * theta) if kind == "cos" else np.sin(k * theta)


def circle_sequence(L, resolutions, limit, stretch=True):
    """``(limit_form, [(form_n, transfer_n), ...])`` for the circle family."""
    ref = GraphDirichletForm.circle(L, limit)
    seq = []
    for n in resolutions:
        form = GraphDirichletForm.circle(coarse_length(L, n, stretch), n)
        tm, _ = matched_subset_transfer(form, ref)
        seq.append((form, tm))
    return ref, seq


def mosco_study(L, resolutions, limit, alpha, modes, stretch=True):
    ref, seq = circle_sequence(L, resolutions, limit, stretch)
    funcs = [fourier_mode(limit, k) for k in modes]
    return mosco_resolvent_test(seq, ref, alpha, funcs)


def fourier_function(n, terms):
    """``Σ offset + amplitude · cos/sin(mode θ)`` from a list of term dicts."""
    out = np.zeros(n)
    for term in terms:
        k = int(term.get("mode", 0))
        out += float(term.get("offset", 0.0))
        out += float(term.get("amplitude", 0.0)) * fourier_mode(n, k, term.get("kind", "cos"))
    return out


def fdd_study(L, resolutions, limit, times, observables, density, stretch=True, tol0=0.5):
    """Observables and density given as term lists (see :func:`fourier_function`)."""
    ref, seq = circle_sequence(L, resolutions, limit, stretch)
    obs = [fourier_function(limit, g) for g in observables]
    phi = InitialDensity(fourier_function(limit, density))
    dens = [InitialDensity(fourier_function(n, density)) for n in resolutions]
    return fdd_convergence_test(seq, ref, dens, phi, times, obs, tol0=tol0)


def coupled_convergence(L, resolutions, grid, count, seed, confidence=0.95, jobs=1):
    """Certified values for ``(L(1+1/n) circle, BM)`` against ``(L circle, BM)`` per ``n``.

    Both circles carry ``n`` nodes and the natural node map; the Prokhorov
    terms are coupling bounds from common-noise simulation.
    """
    samples, maps = [], []
    for k, n in enumerate(resolutions):
        src = CircleModel(coarse_length(L, n, True), n)
        tgt = CircleModel(L, n)
        a, b = sample_coupled_bm(src, tgt, grid, count, seed + k, jobs=jobs)
        samples.append(PairedSample(src.space, tgt.space, grid, a, b))
        maps.append(MetricMap(src.space, tgt.space, tuple(range(n))))
    return convergence_report(samples, None, maps, confidence=confidence)
