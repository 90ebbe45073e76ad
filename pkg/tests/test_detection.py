import numpy as np
import pytest
from scipy import stats

from gaussqui.detection import (
    ConvergenceError,
    DetectorModel,
    PhotocountChannels,
    build_compound_realizations,
    detection_matrix,
    forward_map,
    max_counts,
    reconstruct_em,
)
from gaussqui.distribution import JointDistribution
from gaussqui.model import TwbModelParams, click_probability, sample_channels, twb_joint


def test_all_clicks_give_delta_at_max_counts():
    ch = PhotocountChannels(np.ones(4000, int), np.ones(4000, int))
    f = build_compound_realizations(ch, 2, 4)
    top = max_counts(2, 4)
    assert f.shape == (top + 1,) * 3
    assert f.mass[top, top, top] == 1.0


def test_single_signal_click_lands_in_one_realization():
    s = np.zeros(3000, int)
    s[1] = 1  # second window of the first correlated unit belongs to beam 2
    f = build_compound_realizations(PhotocountChannels(s, np.zeros(3000, int)), 1, 0)
    n_real = 3000 // 6
    assert f.mass[0, 1, 0] == pytest.approx(1 / n_real)
    assert f.mass[0, 0, 0] == pytest.approx(1 - 1 / n_real)


def _reference_counts(ch, w_p, w_n, stride):
    """Direct loop over realizations using the window pattern spelled out."""
    corr = {0: [("s", 0), ("i", 2), ("i", 3), ("s", 5)],
            1: [("i", 0), ("s", 1), ("s", 3), ("i", 4)],
            2: [("i", 1), ("s", 2), ("s", 4), ("i", 5)]}
    chans = {"s": ch.signal, "i": ch.idler}
    n_real = len(ch) // (6 * w_p + 3 * w_n)
    while n_real and max(6 * w_p * n_real, stride) + 3 * w_n * n_real > len(ch):
        n_real -= 1
    noise_start = max(6 * w_p * n_real, stride)
    out = []
    for r in range(n_real):
        row = []
        for b in range(3):
            c = 0
            for k in range(w_p):
                c += sum(chans[name][6 * w_p * r + 6 * k + off] for name, off in corr[b])
            base = noise_start + 3 * w_n * r
            for k in range(w_n // 2):
                c += ch.signal[base + 6 * k + b] + ch.idler[base + 6 * k + b + 3]
            row.append(c)
        out.append(row)
    return np.array(out)


def test_histogram_matches_direct_loop():
    rng = np.random.default_rng(3)
    ch = PhotocountChannels(rng.integers(0, 2, 6000), rng.integers(0, 2, 6000))
    for w_p, w_n in [(1, 2), (2, 4), (1, 0)]:
        counts = _reference_counts(ch, w_p, w_n, 1000)
        ref = np.zeros((max_counts(w_p, w_n) + 1,) * 3)
        for c in counts:
            ref[tuple(c)] += 1
        f = build_compound_realizations(ch, w_p, w_n)
        assert np.allclose(f.mass, ref / len(counts))


def test_stride_and_window_validation():
    ch = PhotocountChannels(np.zeros(5000, int), np.zeros(5000, int))
    with pytest.raises(ValueError):
        build_compound_realizations(ch, 1, 2, noise_offset_stride=10)
    with pytest.raises(ValueError):
        build_compound_realizations(ch, 1, 3)
    with pytest.raises(ValueError):
        build_compound_realizations(ch, 0, 0)
    short = PhotocountChannels(np.zeros(10, int), np.zeros(10, int))
    with pytest.raises(ValueError):
        build_compound_realizations(short, 1, 2)


def test_overlapping_mode_uses_every_start():
    ch = PhotocountChannels(np.zeros(3000, int), np.zeros(3000, int))
    f = build_compound_realizations(ch, 1, 2, overlapping=True)
    assert f.mass[0, 0, 0] == 1.0


def test_monte_carlo_count_means_within_three_sigma():
    params = TwbModelParams(b_p=0.05, eta_s=0.3, eta_i=0.4)
    ch = sample_channels(params, 200_000, seed=11)
    joint = twb_joint(params, 1)
    ps = click_probability(joint.marginal(0), params.eta_s, params.d_s)
    pi = click_probability(joint.marginal(1), params.eta_i, params.d_i)
    n = len(ch)
    assert abs(ch.signal.mean() - ps) < 3 * np.sqrt(ps * (1 - ps) / n)
    assert abs(ch.idler.mean() - pi) < 3 * np.sqrt(pi * (1 - pi) / n)
    w_p, w_n = 2, 4
    f = build_compound_realizations(ch, w_p, w_n)
    expected = (2 * w_p + w_n / 2) * (ps + pi)
    counts = np.arange(f.shape[0])
    for b in range(3):
        marg = f.marginal(b)
        mean = counts @ marg
        sd = np.sqrt(counts**2 @ marg - mean**2)
        n_real = len(ch) // (6 * w_p + 3 * w_n)
        assert abs(mean - expected) < 3 * sd / np.sqrt(n_real)


def test_sampling_is_deterministic():
    params = TwbModelParams()
    a = sample_channels(params, 5000, seed=4)
    b = sample_channels(params, 5000, seed=4)
    assert np.array_equal(a.signal, b.signal) and np.array_equal(a.idler, b.idler)


def test_channel_io_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    ch = PhotocountChannels(rng.integers(0, 2, 100), rng.integers(0, 2, 100))
    ch.write_csv(tmp_path / "c.csv", header="x=1")
    ch.write_binary(tmp_path / "c.bin")
    for back in (PhotocountChannels.read_csv(tmp_path / "c.csv"), PhotocountChannels.read_binary(tmp_path / "c.bin")):
        assert np.array_equal(back.signal, ch.signal) and np.array_equal(back.idler, ch.idler)
    with pytest.raises(ValueError):
        PhotocountChannels(np.array([0, 2]), np.array([0, 0]))


def test_response_without_dark_counts_at_zero_clicks():
    det = DetectorModel(8, 0.3, 0.0)
    for n in range(6):
        assert detection_matrix(det, 0, n) == pytest.approx(0.7**n, rel=1e-14)
        assert det.matrix(5)[0, n] == pytest.approx(0.7**n, rel=1e-12)


def test_zero_efficiency_sees_only_dark_counts():
    det = DetectorModel(10, 0.0, 0.5)
    t = det.matrix(6)
    dark = stats.binom.pmf(np.arange(11), 10, 0.05)
    for n in range(7):
        assert np.allclose(t[:, n], dark)
    no_dark = DetectorModel(10, 0.0, 0.0).matrix(6)
    assert np.allclose(no_dark[0], 1.0) and np.allclose(no_dark[1:], 0.0)


def test_columns_sum_to_one():
    t = DetectorModel(66, 0.5, 0.1).matrix(100)
    assert np.max(np.abs(t.sum(axis=0) - 1)) < 1e-12
    assert np.all(t >= 0)


@pytest.mark.parametrize("nd,eta,d", [(5, 0.3, 0.0), (20, 0.7, 0.05), (40, 0.9, 0.2)])
def test_extended_precision_and_occupancy_routes_agree(nd, eta, d):
    det = DetectorModel(nd, eta, d)
    t = det.matrix(30)
    for c in range(0, nd + 1, max(1, nd // 5)):
        for n in (0, 1, 7, 30):
            assert abs(detection_matrix(det, c, n) - t[c, n]) < 1e-12


def test_single_pixel_single_photon():
    t = DetectorModel(1, 0.4, 0.0).matrix(1)
    assert np.allclose(t, [[1.0, 0.6], [0.0, 0.4]])


def test_forward_map_thins_a_single_photon():
    det = DetectorModel(4, 0.3, 0.0)
    p = JointDistribution.delta((1, 0, 0), (3, 3, 3))
    f = forward_map(p, det).mass
    assert f[0, 0, 0] == pytest.approx(0.7)
    assert f[1, 0, 0] == pytest.approx(0.3)
    assert f.sum() == pytest.approx(1.0)


def test_forward_map_with_identity_detector():
    rng = np.random.default_rng(2)
    # at most one photon per beam, so no two photons can share a pixel
    p = JointDistribution.normalized(rng.random((2, 2, 2)))
    f = forward_map(p, DetectorModel(3, 1.0, 0.0)).mass
    assert np.allclose(f[:2, :2, :2], p.mass, rtol=1e-14)
    assert f[2:].sum() == 0


def _histogram_from(pstar, det):
    return forward_map(pstar, det)


def test_em_log_likelihood_never_decreases():
    rng = np.random.default_rng(5)
    det = DetectorModel(6, 0.6, 0.02)
    pstar = JointDistribution.normalized(rng.random((5, 5, 5)) ** 4)
    f = _histogram_from(pstar, det)
    res = reconstruct_em(f, det, photon_shape=(5, 5, 5), max_iters=400, tol=0.0, keep_history=True)
    assert res.monotonicity_violations == 0
    h = np.array(res.history)
    assert np.all(np.diff(h) >= -1e-13 * np.abs(h[:-1]))


def test_em_recovers_fixed_point():
    det = DetectorModel(10, 0.7, 0.01)
    q = stats.poisson.pmf(np.arange(6), 0.8)
    pstar = JointDistribution.normalized(np.einsum("i,j,k->ijk", q, q, q))
    f = _histogram_from(pstar, det)
    res = reconstruct_em(f, det, photon_shape=(6, 6, 6), init=pstar.mass, max_iters=50, tol=0.0)
    assert np.max(np.abs(res.distribution.mass - pstar.mass)) < 1e-12
    assert res.kl_divergence < 1e-12


def test_em_identity_detector_returns_histogram():
    rng = np.random.default_rng(6)
    det = DetectorModel(1, 1.0, 0.0)
    f = JointDistribution.normalized(rng.random((2, 2, 2)), "photocount_histogram")
    res = reconstruct_em(f, det, photon_shape=(2, 2, 2), tol=1e-14)
    assert np.allclose(res.distribution.mass, f.mass, atol=1e-8)


def test_em_vacuum_histogram_concentrates_at_zero():
    det = DetectorModel(5, 0.5, 0.0)
    f = JointDistribution.delta((0, 0, 0), (3, 3, 3), "photocount_histogram")
    res = reconstruct_em(f, det, photon_shape=(4, 4, 4), max_iters=20000, tol=1e-13)
    assert res.distribution.mass[0, 0, 0] > 0.99


def test_em_impossible_bin_raises():
    det = DetectorModel(5, 0.0, 0.0)  # never clicks
    f = JointDistribution.delta((1, 0, 0), (3, 3, 3), "photocount_histogram")
    with pytest.raises(ValueError, match="zero denominator"):
        reconstruct_em(f, det, photon_shape=(3, 3, 3))


def test_em_reports_non_convergence():
    det = DetectorModel(6, 0.6, 0.02)
    q = stats.poisson.pmf(np.arange(5), 1.0)
    f = _histogram_from(JointDistribution.normalized(np.einsum("i,j,k->ijk", q, q, q)), det)
    res = reconstruct_em(f, det, photon_shape=(5, 5, 5), max_iters=3, tol=1e-15)
    assert not res.converged and res.iterations == 3
    assert issubclass(ConvergenceError, RuntimeError)


def test_effective_detector():
    det = DetectorModel.effective(2, 4, 0.2, 0.4, 1e-3, 3e-3)
    assert det.n_pixels == 8
    assert det.efficiency == pytest.approx(0.3)
    assert det.dark_total == pytest.approx(4e-3 * 6)


def test_detector_validation():
    for args in [(0, 0.5, 0.0), (3, 1.5, 0.0), (3, 0.5, 3.0)]:
        with pytest.raises(ValueError):
            DetectorModel(*args)
