import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aniso_mfpt.dist import STRICT_ALIGNMENT, DirectionalKernel
from aniso_mfpt.env import Domain, GridSpec, anisotropy_from_distance, isotropic_anisotropy
from aniso_mfpt.mc import (
    FptEstimate,
    KernelField,
    NonExitError,
    estimate_survival,
    estimate_theta,
    export_trajectories,
    sample_exit_times,
    simulate_exit,
    summarize,
    trajectories_csv,
    walker_rng,
)

BALLISTIC_MU = 1e-12  # mean run time 1e12: no turn happens before exit


@given(theta=st.floats(0, 2 * math.pi), R0=st.floats(0.1, 10), sigma=st.floats(0.1, 100))
@settings(max_examples=50, deadline=None)
def test_ballistic_exit_from_disk_centre(theta, R0, sigma):
    rec = simulate_exit(Domain.disk(R0), KernelField.uniform(), BALLISTIC_MU, sigma, (0.0, 0.0), theta, rng=1)
    assert rec.time == pytest.approx(R0 / sigma, rel=1e-12)
    assert rec.point == pytest.approx((R0 * math.cos(theta), R0 * math.sin(theta)), abs=1e-12 * R0)
    assert rec.turns == 0


def test_ballistic_reflection_off_inner_circle():
    dom = Domain.annulus(0.5, 3.0, inner="reflecting")
    rec = simulate_exit(dom, KernelField.uniform(), BALLISTIC_MU, 2.0, (1.0, 0.0), math.pi, rng=0,
                        record_trajectory=True)
    # 0.5 in, reflect at x = 0.5, then 2.5 out
    assert rec.time == pytest.approx(3.0 / 2.0, rel=1e-14)
    assert rec.point == pytest.approx((3.0, 0.0), abs=1e-12)
    np.testing.assert_allclose(rec.trajectory, [[0, 1, 0], [0.25, 0.5, 0], [1.5, 3, 0]], atol=1e-12)


@given(x0=st.floats(0.05, 0.95), y0=st.floats(0.05, 1.95), theta=st.floats(0.05, 2 * math.pi - 0.05))
@settings(max_examples=60, deadline=None)
def test_ballistic_rectangle_with_three_mirrors(x0, y0, theta):
    # only the top edge absorbs; unfold the mirrors to get the exit time
    dom = Domain.rectangle(0, 1, 0, 2, left="reflecting", right="reflecting", bottom="reflecting")
    s = math.sin(theta)
    if abs(s) < 1e-3:
        return
    rec = simulate_exit(dom, KernelField.uniform(), BALLISTIC_MU, 1.0, (x0, y0), theta, rng=0)
    dist_y = (2 - y0) if s > 0 else (y0 + 2)
    assert rec.time == pytest.approx(dist_y / abs(s), rel=1e-9)
    assert rec.point[1] == pytest.approx(2.0, abs=1e-12)
    # unfolded x position folded back into [0, 1]
    xu = (x0 + rec.time * math.cos(theta)) % 2.0
    assert rec.point[0] == pytest.approx(xu if xu <= 1 else 2 - xu, abs=1e-8)


def test_strict_radial_alignment_from_centre_is_ballistic():
    k = KernelField.radial(STRICT_ALIGNMENT)
    rec = simulate_exit(Domain.disk(3.0), k, BALLISTIC_MU, 2.0, (0.0, 0.0), rng=4, record_trajectory=True)
    assert rec.time == pytest.approx(1.5, rel=1e-14)
    assert len(rec.trajectory) == 2


@given(seed=st.integers(0, 2**32), y0=st.floats(-0.9, 0.9))
@settings(max_examples=20, deadline=None)
def test_strict_horizontal_alignment_never_changes_height(seed, y0):
    dom = Domain.rectangle(-1, 1, -1, 1, bottom="reflecting", top="reflecting")
    k = KernelField.constant(DirectionalKernel(STRICT_ALIGNMENT, gamma=(1.0, 0.0)))
    rec = simulate_exit(dom, k, 50.0, 1.0, (0.0, y0), rng=seed)
    assert rec.point[1] == y0
    assert abs(rec.point[0]) == 1.0


@given(seed=st.integers(0, 2**63), shape=st.sampled_from(["disk", "annulus", "rect"]))
@settings(max_examples=40, deadline=None)
def test_exit_point_lies_on_an_absorbing_piece(seed, shape):
    if shape == "disk":
        dom, x0 = Domain.disk(1.0), (0.3, -0.2)
    elif shape == "annulus":
        dom, x0 = Domain.annulus(0.5, 1.0, outer="reflecting"), (0.7, 0.1)
    else:
        dom, x0 = Domain.rectangle(0, 1, 0, 1, left="reflecting", top="reflecting"), (0.4, 0.6)
    rec = simulate_exit(dom, KernelField.from_alpha(-0.4), 30.0, 3.0, x0, rng=seed, record_trajectory=True)
    x1, x2 = rec.point
    if shape == "disk":
        assert math.hypot(x1, x2) == pytest.approx(1.0, abs=1e-12)
    elif shape == "annulus":
        assert math.hypot(x1, x2) == pytest.approx(0.5, abs=1e-12)
    else:
        assert x1 == pytest.approx(1.0, abs=1e-12) or x2 == pytest.approx(0.0, abs=1e-12)
    traj = rec.trajectory
    assert np.all(np.diff(traj[:, 0]) >= 0)
    assert traj[-1, 0] == rec.time
    # every recorded point lies in the closed domain
    for _, a, b in traj:
        if shape == "rect":
            assert -1e-12 <= a <= 1 + 1e-12 and -1e-12 <= b <= 1 + 1e-12
        else:
            assert dom.rho - 1e-12 <= math.hypot(a, b) <= dom.R0 + 1e-12 if shape == "annulus" \
                else math.hypot(a, b) <= 1 + 1e-12
    speed = np.hypot(np.diff(traj[:, 1]), np.diff(traj[:, 2])) / np.maximum(np.diff(traj[:, 0]), 1e-300)
    # straight segments between events never exceed the speed
    assert np.all(speed <= 3.0 * (1 + 1e-9))


def test_trajectory_buffer_grows_and_replays_same_path():
    dom = Domain.disk(1.0)
    long = simulate_exit(dom, KernelField.uniform(), 2e4, 100.0, (0, 0), 0.0, rng=5, record_trajectory=True)
    plain = simulate_exit(dom, KernelField.uniform(), 2e4, 100.0, (0, 0), 0.0, rng=5)
    assert len(long.trajectory) > 4096
    assert long.time == plain.time and long.turns == plain.turns


def test_event_cap_raises_non_exit():
    dom = Domain.annulus(0.5, 3.0, outer="reflecting")
    with pytest.raises(NonExitError, match="non-exit suspected") as exc:
        simulate_exit(dom, KernelField.from_alpha(-0.99), 1e4, 100.0, (2.0, 0.0), rng=0, event_cap=1000)
    assert exc.value.turns == 1000


def test_start_checks_and_permissive_boundary():
    dom = Domain.disk(1.0)
    with pytest.raises(ValueError):
        simulate_exit(dom, KernelField.uniform(), 1.0, 1.0, (1.0, 0.0))
    rec = simulate_exit(dom, KernelField.uniform(), 1.0, 1.0, (1.0, 0.0), permissive=True)
    assert rec.time == 0.0
    with pytest.raises(ValueError):
        simulate_exit(dom, KernelField.uniform(), 1.0, 1.0, (2.0, 0.0), permissive=True)
    with pytest.raises(ValueError):
        simulate_exit(dom, KernelField.uniform(), -1.0, 1.0, (0.0, 0.0))
    with pytest.raises(ValueError):
        simulate_exit(dom, KernelField.uniform(), 1.0, 1.0, (0.0, 0.0), event_cap=0)


def test_kernel_field_validation():
    with pytest.raises(ValueError):
        KernelField("lorentzian")
    with pytest.raises(ValueError):
        KernelField(orientation="spiral")
    with pytest.raises(ValueError):
        KernelField(orientation="grid")
    assert KernelField.from_alpha(0.0).variant == "uniform"
    assert KernelField.from_alpha(-0.5).orientation == "circular"


def test_walker_streams_are_distinct_and_reproducible():
    a = walker_rng(7, 0, 0).random(4)
    assert np.array_equal(a, walker_rng(7, 0, 0).random(4))
    assert not np.array_equal(a, walker_rng(7, 0, 1).random(4))
    assert not np.array_equal(a, walker_rng(7, 1, 0).random(4))
    assert not np.array_equal(a, walker_rng(8, 0, 0).random(4))


@given(workers=st.integers(1, 8), N=st.integers(1, 60))
@settings(max_examples=15, deadline=None)
def test_samples_independent_of_worker_count(workers, N):
    dom = Domain.annulus(0.5, 1.0)
    ref, _ = sample_exit_times(dom, KernelField.from_alpha(0.3), 400.0, 20.0, (0.7, 0.0), N, 3, workers=1)
    got, _ = sample_exit_times(dom, KernelField.from_alpha(0.3), 400.0, 20.0, (0.7, 0.0), N, 3, workers=workers)
    np.testing.assert_array_equal(got, ref)


def test_zero_concentration_grid_kernel_equals_uniform_kernel():
    grid = GridSpec.square(11)
    iso = isotropic_anisotropy(grid)
    dom = Domain.rectangle(-1, 1, -1, 1)
    a, _ = sample_exit_times(dom, KernelField.uniform(), 100.0, 10.0, (0.1, 0.2), 50, 9)
    b, _ = sample_exit_times(dom, KernelField.from_anisotropy(iso), 100.0, 10.0, (0.1, 0.2), 50, 9)
    np.testing.assert_array_equal(a, b)


def test_grid_kernel_aligned_everywhere_behaves_like_constant_kernel():
    grid = GridSpec.square(11)
    gamma = np.zeros(grid.shape + (2,))
    gamma[..., 1] = 1.0
    aniso = anisotropy_from_distance(np.zeros(grid.shape), gamma, 5.0, 1.0, grid)
    dom = Domain.rectangle(-1, 1, -1, 1)
    const = KernelField.constant(DirectionalKernel("bimodal_von_mises", 5.0, (0.0, 1.0)))
    a, _ = sample_exit_times(dom, const, 100.0, 10.0, (0.1, 0.2), 50, 9)
    b, _ = sample_exit_times(dom, KernelField.from_anisotropy(aniso), 100.0, 10.0, (0.1, 0.2), 50, 9)
    np.testing.assert_array_equal(a, b)


def test_capped_walkers_are_reported_not_averaged():
    dom = Domain.annulus(0.5, 3.0, outer="reflecting")
    est = estimate_theta(dom, KernelField.from_alpha(-0.99), 1e4, 100.0, [(2.0, 0.0)], N=5, event_cap=200)[0]
    assert est.capped == 5 and est.n == 0 and math.isnan(est.mean)


def test_summarize_statistics():
    t = np.array([1.0, 2.0, 4.0, 7.0])
    est = summarize((0.0, 0.0), t, 0, 3)
    assert est.mean == 3.5 and est.theta(0) == 1.0
    assert est.theta(2) == pytest.approx(np.mean(t**2))
    assert est.theta(3) == pytest.approx(np.mean(t**3))
    assert est.stderr == pytest.approx(np.std(t, ddof=1) / 2)
    assert isinstance(est, FptEstimate)
    with pytest.raises(ValueError):
        estimate_theta(Domain.disk(1.0), KernelField.uniform(), 1.0, 1.0, [(0, 0)], N=1)


def test_isotropic_disk_mean_matches_diffusion_limit():
    # R0 = 1, D = 1/2: T(0) = 0.5
    est = estimate_theta(Domain.disk(1.0), KernelField.uniform(), 1e4, 100.0, [(0.0, 0.0)], N=3000, seed=1)[0]
    assert abs(est.mean - 0.5) <= 4 * est.stderr


def test_survival_curve_properties():
    dom = Domain.disk(1.0)
    times = np.linspace(0, 3, 31)
    surv = estimate_survival(dom, KernelField.uniform(), 2500.0, 50.0, (0.0, 0.0), times, N=1000, seed=2)
    assert surv.survival[0] == 1.0
    assert np.all(np.diff(surv.survival) <= 0)
    est = estimate_theta(dom, KernelField.uniform(), 2500.0, 50.0, [(0.0, 0.0)], N=1000, seed=2)[0]
    # the time-integral of S is the mean exit time (same walkers, start index 0)
    assert surv.integral() == pytest.approx(est.mean, abs=0.02)
    with pytest.raises(ValueError):
        estimate_survival(dom, KernelField.uniform(), 1.0, 1.0, (0, 0), [0.5, 1.0], N=10)


def test_trajectory_csv_format(tmp_path):
    runs = [np.array([[0.0, 0.0, 0.0], [1.0, 0.5, math.inf]]), np.array([[0.0, 1.0, 2.0]])]
    text = trajectories_csv(runs, comment="demo")
    assert text.splitlines() == ["# demo", "run_id,t,x1,x2", "0,0.0,0.0,0.0", "0,1.0,0.5,inf", "1,0.0,1.0,2.0"]
    export_trajectories(runs, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text() == trajectories_csv(runs)
