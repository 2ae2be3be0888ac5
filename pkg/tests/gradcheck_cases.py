"""Tiny float64 models shared by the unit and acceptance gradient checks.

Each case returns ``(relative_error, kink_margin, n_params)``; a margin below
the finite-difference step means the check straddles a ReLU kink and is void.
"""

import numpy as np
import torch

from lesionaug.adversary import GanConfig, NoiseSpec, build_discriminator, build_generator, gan_value, generator_loss
from lesionaug.nets import n_parameters
from lesionaug.segmenter import SegmenterConfig, build_fcn, cross_entropy_loss

from oracles import central_differences, jitter_biases, max_relative_error, min_kink_margin

STEP = 1e-4


def _check(objective, params, nets):
    margin = min(min_kink_margin(n, objective) for n in nets)
    analytic = torch.autograd.grad(objective(), params)
    numeric = central_differences(objective, params, step=STEP)
    return max_relative_error(analytic, numeric), margin


def segmenter_case():
    model = build_fcn(SegmenterConfig(depth=1, base_channels=2, seed=9), (8, 8))
    model.net.double()
    jitter_biases(model.net, seed=9)
    rng = np.random.default_rng(109)
    x = torch.tensor(rng.random((2, 3, 8, 8)))
    y = torch.tensor((rng.random((2, 8, 8)) > 0.5).astype(float))

    def objective():
        return cross_entropy_loss(model.probability(x)[:, 0], y)

    err, margin = _check(objective, list(model.net.parameters()), [model.net])
    return err, margin, n_parameters(model.net)


def _gan_pair():
    cfg = GanConfig(depth=1, base_channels=2, d_depth=2, d_base_channels=2, noise=NoiseSpec(dim=1), seed=3)
    g = build_generator(cfg, (8, 8))
    d = build_discriminator(cfg, (8, 8))
    g.net.double()
    d.net.double()
    jitter_biases(g.net, seed=4)
    jitter_biases(d.net, seed=5)
    rng = np.random.default_rng(7)
    labels = torch.tensor((rng.random((2, 1, 8, 8)) > 0.5).astype(float))
    real = torch.tensor(rng.random((2, 3, 8, 8)))
    z = torch.tensor(rng.normal(size=(2, 1, 8, 8)))
    return g, d, labels, real, z


def discriminator_case():
    """Gradient of the value function w.r.t. the discriminator (the quantity D ascends)."""
    g, d, labels, real, z = _gan_pair()
    with torch.no_grad():
        fake = g.forward(labels, z)

    def objective():
        return gan_value(d.forward(labels, real), d.forward(labels, fake))

    err, margin = _check(objective, list(d.net.parameters()), [d.net])
    return err, margin, n_parameters(d.net)


def generator_case():
    """Gradient of the non-saturating generator loss w.r.t. the generator."""
    g, d, labels, real, z = _gan_pair()

    def objective():
        return generator_loss(d.forward(labels, g.forward(labels, z)))

    err, margin = _check(objective, list(g.net.parameters()), [g.net, d.net])
    return err, margin, n_parameters(g.net)


CASES = {"segmenter cross-entropy": segmenter_case,
         "discriminator objective": discriminator_case,
         "generator objective": generator_case}
