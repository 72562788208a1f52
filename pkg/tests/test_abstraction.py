"""Image boxes, noise interval mass, and certified transition intervals."""

import math

import numpy as np
import pytest

from gpimdp.abstraction import (
    NoiseModel,
    build_imdp,
    image_box,
    transition_bounds,
    transition_row,
)
from gpimdp.gp import Dataset, ErrorBoundParams, GpModel, KernelParams, fit_action_models
from gpimdp.partition import Region, build_partition

EB = ErrorBoundParams(2.0, 0.1, 10.0)


def test_noise_box_prob_limits_and_value():
    noise = NoiseModel((0.1, 0.1))
    assert noise.box_prob((100.0, 100.0)) == pytest.approx(1.0)
    assert noise.box_prob((1e-12, 1e-12)) == pytest.approx(0.0, abs=1e-6)
    # central sigma interval per dimension, squared for two dimensions
    expected = math.erf(1.0 / math.sqrt(2.0)) ** 2
    assert noise.box_prob((0.1, 0.1)) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.4660649426743922, abs=1e-12)
    with pytest.raises(ValueError):
        NoiseModel((0.1, -0.1))
    with pytest.raises(ValueError):
        NoiseModel((0.1,), kind="uniform")


def test_image_box_point_and_prior():
    params = KernelParams((0.5, 0.5), 0.3, 0.01)
    rng = np.random.default_rng(1)
    xt = rng.uniform(-1, 1, (25, 2))
    models = [
        GpModel(xt, rng.normal(size=25), params, EB, dim=d) for d in range(2)
    ]
    pt = np.array([0.2, -0.3])
    lo, hi = image_box(models, pt, pt)
    assert np.allclose(lo, hi)
    assert lo[0] == pytest.approx(models[0].predict_next(pt))
    # prior mean is identically zero, image collapses to the origin
    empty = [GpModel(np.empty((0, 2)), np.empty(0), params, EB, dim=d) for d in range(2)]
    lo, hi = image_box(empty, np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    assert np.allclose(lo, 0.0) and np.allclose(hi, 0.0)


def test_image_box_contains_random_points():
    params = KernelParams((0.5, 0.7), 0.4, 0.01)
    rng = np.random.default_rng(7)
    xt = rng.uniform(-1, 1, (40, 2))
    models = [GpModel(xt, rng.normal(size=40), params, EB, dim=d, increment=(d == 1)) for d in range(2)]
    lo_q, hi_q = np.zeros(2), np.full(2, 0.2)
    lo, hi = image_box(models, lo_q, hi_q)
    pts = rng.uniform(0, 0.2, (10_000, 2))
    for d, m in enumerate(models):
        vals = m.predict_next(pts)
        assert vals.min() >= lo[d] - 1e-12
        assert vals.max() <= hi[d] + 1e-12


def test_transition_bounds_forced_cases():
    img_lo, img_hi = np.array([5.0, 5.0]), np.array([5.2, 5.2])
    eps, eta = np.array([0.1, 0.1]), np.array([0.1, 0.1])
    # image far away from the destination: zero upper bound at full confidence
    lo, hi = transition_bounds(img_lo, img_hi, eps, eta, 1.0, 1.0, (0.0, 0.0), (1.0, 1.0))
    assert (lo, hi) == (0.0, 0.0)
    # image deep inside the shrunk destination: certain transition
    lo, hi = transition_bounds(img_lo, img_hi, eps, eta, 1.0, 1.0, (4.0, 4.0), (6.0, 6.0))
    assert (lo, hi) == (1.0, 1.0)
    # empty shrunk region: lower bound collapses to zero
    lo, hi = transition_bounds(img_lo, img_hi, eps, eta, 1.0, 1.0, (4.99, 4.99), (5.25, 5.25))
    assert lo == 0.0 and hi == 1.0


def test_transition_row_perdim_tighter_than_scalar():
    from gpimdp.abstraction import transition_row_perdim

    img_lo, img_hi = np.array([0.5, 0.5]), np.array([0.6, 0.6])
    # destination misses the image in the second dimension only
    dest_lo, dest_hi = np.array([[0.4, 2.0]]), np.array([[0.9, 2.5]])
    eps, eta = np.array([0.05, 0.05]), np.array([0.1, 0.1])
    probs = np.array([0.9, 0.8])
    scalar = transition_row(img_lo, img_hi, eps, eta, 0.98, float(probs.prod()), dest_lo, dest_hi)
    perdim = transition_row_perdim(img_lo, img_hi, eps, eta, 0.98, probs, dest_lo, dest_hi)
    assert perdim[1][0] <= scalar[1][0] + 1e-15
    assert perdim[1][0] == pytest.approx((1 - 0.8) * 0.98 + 0.02)
    assert perdim[0][0] == scalar[0][0] == 0.0
    # the width cap binds for overlapping destinations
    wide = transition_row_perdim(
        img_lo, img_hi, eps, eta, 0.98, probs, np.array([[0.0, 0.0]]), np.array([[1.0, 1.0]]),
        width_mass=np.array([0.7]),
    )
    assert wide[1][0] == pytest.approx(0.7)


def quad_oracle_interval(f_next, noise_std, q_lo, q_hi, dest_lo, dest_hi, n_grid=200):
    """min/max over x in q of P[f(x) + w lands in dest], by quadrature."""
    xs = np.linspace(q_lo, q_hi, n_grid)
    probs = []
    for x in xs:
        nxt = f_next(x)
        lo_z = (dest_lo - nxt) / noise_std
        hi_z = (dest_hi - nxt) / noise_std
        probs.append(0.5 * (math.erf(hi_z / math.sqrt(2)) - math.erf(lo_z / math.sqrt(2))))
    return min(probs), max(probs)


def test_bounds_contain_true_kernel_1d():
    # known smooth 1-d next-state map learned from data
    rng = np.random.default_rng(3)
    f_next = lambda x: x + 0.2 * np.sin(2.0 * x)  # noqa: E731
    m = 80
    xt = rng.uniform(-2, 2, (m, 1))
    noise_std = 0.1
    yt = f_next(xt[:, 0]) + noise_std * rng.normal(size=m)
    params = KernelParams((0.8,), 0.5, noise_std**2)
    model = GpModel(xt, yt, params, ErrorBoundParams(2.0, noise_std, 5.0), dim=0)
    noise = NoiseModel((noise_std,))
    delta = 0.05
    q_lo, q_hi = np.array([0.2]), np.array([0.6])
    img_lo, img_hi = image_box([model], q_lo, q_hi)
    eps = np.array([model.error_params.beta(delta) * model.sup_std(q_lo, q_hi)])
    for eta_mult in (1.0, 2.0, 3.0):
        eta = eta_mult * np.array(noise.std)
        for dest in [(-0.2, 0.2), (0.2, 0.6), (0.6, 1.0), (1.0, 1.4)]:
            lo, hi = transition_bounds(
                img_lo, img_hi, eps, eta, (1 - delta), noise.box_prob(eta),
                (dest[0],), (dest[1],),
            )
            true_lo, true_hi = quad_oracle_interval(
                f_next, noise_std, q_lo[0], q_hi[0], dest[0], dest[1]
            )
            assert lo <= true_lo + 1e-9
            assert hi >= true_hi - 1e-9


def build_small_model(seed=11, cells=(4, 4), m=120):
    rng = np.random.default_rng(seed)
    regions = [Region("g", (0.5, 0.5), (1.0, 1.0))]
    part = build_partition((-1, -1), (1, 1), cells, regions, ("g",))
    noise = NoiseModel((0.1, 0.1))
    drift = lambda x: 0.15 * np.stack([np.cos(2 * x[:, 1]), np.sin(2 * x[:, 0])], axis=1)  # noqa: E731
    n_actions = 2
    xs, us, xps = [], [], []
    for u in range(n_actions):
        x = rng.uniform(-1, 1, (m, 2))
        w = noise.sample(rng, (m, 2))
        step = drift(x) * (1 if u == 0 else -1)
        xs.append(x)
        us.append(np.full(m, u))
        xps.append(x + step + w)
    ds = Dataset.from_arrays(np.vstack(xs), np.concatenate(us), np.vstack(xps), n_actions)
    params = KernelParams((0.7, 0.7), 0.2, 0.01)
    models = [fit_action_models(ds, u, params, increment=True) for u in range(n_actions)]
    imdp = build_imdp(part, models, noise)
    return part, noise, models, imdp, drift, rng


def test_build_imdp_well_formed():
    part, noise, models, imdp, drift, rng = build_small_model()
    assert imdp.validate() == []
    for (q, a), row in imdp.rows.items():
        assert np.all(row.plow <= row.phigh + 1e-12)
        assert row.plow.sum() <= 1.0 + 1e-9
        assert row.phigh.sum() >= 1.0 - 1e-9
    # Outside absorbing under every action
    out = imdp.outside
    for a in range(imdp.n_actions):
        row = imdp.rows[(out, a)]
        assert row.cols.tolist() == [out]
        assert row.plow[0] == row.phigh[0] == 1.0


def test_build_imdp_forced_outside():
    # a single cell with dynamics that always jump far out of the domain
    part = build_partition((0, 0), (0.5, 0.5), (1, 1), [], ("g",))
    noise = NoiseModel((0.05, 0.05))
    rng = np.random.default_rng(0)
    ds = Dataset(2, 1)
    for x in rng.uniform(0, 0.5, (40, 2)):
        ds.append(x, 0, x + np.array([5.0, 5.0]))
    params = KernelParams((0.5, 0.5), 1.0, 0.01)
    models = [fit_action_models(ds, 0, params, increment=True)]
    imdp = build_imdp(part, models, noise)
    row = imdp.rows[(0, 0)]
    # mass cannot reach the sole cell, so Outside gets nearly everything
    assert row.phigh[0] < 0.05
    assert row.plow[1] > 0.9
    assert imdp.validate() == []


def test_monte_carlo_frequencies_within_bounds():
    part, noise, models, imdp, drift, rng = build_small_model()
    n_draws = 4000
    for (q, a) in [(0, 0), (5, 1), (10, 0), (15, 1)]:
        row = imdp.rows[(q, a)]
        x = rng.uniform(part.cell_lower[q], part.cell_upper[q], (n_draws, 2))
        step = drift(x) * (1 if a == 0 else -1)
        xp = x + step + noise.sample(rng, (n_draws, 2))
        cells = part.locate_batch(xp)
        freq = np.bincount(cells, minlength=part.n_states) / n_draws
        for c, lo, hi in zip(row.cols, row.plow, row.phigh):
            se_lo = math.sqrt(max(lo * (1 - lo), 0.0) / n_draws) + 1.0 / n_draws
            se_hi = math.sqrt(max(hi * (1 - hi), 0.0) / n_draws) + 1.0 / n_draws
            assert freq[c] >= lo - 3 * se_lo - 1e-12
            assert freq[c] <= hi + 3 * se_hi + 1e-12
