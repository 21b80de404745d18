from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import grad_check
from seqchain import autodiff as ad
from seqchain import metrics as mx
from seqchain.autodiff import Tape, Tensor
from seqchain.constants import BLANK_ID, DB_CAP
from seqchain.errors import DataError, ShapeError


def brute_force_ctc(lp: np.ndarray, labels) -> float:
    """Enumerate every frame path and sum the ones collapsing to ``labels``."""
    T, V = lp.shape
    labels = [int(x) for x in labels]
    total = None
    for path in product(range(V), repeat=T):
        if mx.collapse_ctc(path) == labels:
            logp = float(sum(lp[t, path[t]] for t in range(T)))
            total = logp if total is None else float(np.logaddexp(total, logp))
    return np.inf if total is None else -total


def uniform_log_probs(T, V):
    return np.full((T, V), -np.log(V))


def random_log_probs(rng, T, V):
    logits = rng.normal(size=(T, V)) * 2.0
    return ad.log_softmax(Tensor(logits), axis=1).data


# --------------------------------------------------------------------- si_snr


def test_si_snr_perfect_hits_cap():
    rng = np.random.default_rng(0)
    ref = rng.normal(size=64)
    m = mx.si_snr(ref, ref)
    assert m.value == DB_CAP and m.capped


def test_si_snr_is_scale_invariant_at_gain_two():
    rng = np.random.default_rng(1)
    ref = rng.normal(size=64)
    est = ref + 0.1 * rng.normal(size=64)
    assert abs(mx.si_snr(2.0 * est, ref).value - mx.si_snr(est, ref).value) < 1e-6


def test_si_snr_orthogonal_hits_negative_cap():
    m = mx.si_snr([1.0, -1.0, 1.0, -1.0], [1.0, 1.0, -1.0, -1.0])
    assert m.value == -DB_CAP and m.capped


@given(st.floats(0.01, 100.0), st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_si_snr_scale_invariance_property(alpha, seed):
    rng = np.random.default_rng(seed)
    ref = rng.normal(size=32)
    est = ref + 0.3 * rng.normal(size=32)
    base = mx.si_snr(est, ref).value
    assert abs(mx.si_snr(alpha * est, ref).value - base) < 1e-6
    assert abs(mx.si_snr(-alpha * est, ref).value - base) < 1e-6


def test_si_snr_rejects_bad_inputs():
    with pytest.raises(ShapeError):
        mx.si_snr([1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        mx.si_snr([1.0, 2.0], [0.0, 0.0])


# ------------------------------------------------------------------------ sdr


def test_sdr_perfect_hits_cap():
    ref = np.random.default_rng(2).normal(size=32)
    m = mx.sdr(ref, ref)
    assert m.value == DB_CAP and m.capped


def test_sdr_zero_estimate_is_zero_db():
    ref = np.random.default_rng(3).normal(size=32)
    assert abs(mx.sdr(np.zeros(32), ref).value) < 1e-12


def test_sdr_double_gain_is_zero_db_not_cap():
    # the witness that sdr, unlike si_snr, is not scale invariant
    ref = np.random.default_rng(4).normal(size=32)
    assert abs(mx.sdr(2.0 * ref, ref).value) < 1e-12
    assert mx.si_snr(2.0 * ref, ref).value == DB_CAP


@given(st.floats(0.05, 1.95).filter(lambda a: abs(a - 1.0) > 5e-3), st.integers(0, 500))
@settings(max_examples=50, deadline=None)
def test_sdr_of_scaled_reference_peaks_at_unit_gain(alpha, seed):
    ref = np.random.default_rng(seed).normal(size=32)
    assert mx.sdr(alpha * ref, ref).value < mx.sdr(ref, ref).value


# --------------------------------------------------------------------- si_snri


def test_si_snri_of_mixture_is_exactly_zero():
    rng = np.random.default_rng(5)
    ref = rng.normal(size=40)
    mix = ref + rng.normal(size=40)
    assert mx.si_snri(mix, ref, mix).value == 0.0


def test_si_snri_of_perfect_estimate():
    rng = np.random.default_rng(6)
    ref = rng.normal(size=40)
    mix = ref + 0.5 * rng.normal(size=40)
    want = DB_CAP - mx.si_snr(mix, ref).value
    assert abs(mx.si_snri(ref, ref, mix).value - want) < 1e-12


def test_si_snri_composes_component_metrics():
    rng = np.random.default_rng(7)
    a, b = rng.normal(size=50), rng.normal(size=50)
    mix = a + b
    est = a + 0.2 * rng.normal(size=50)
    want = mx.si_snr(est, a).value - mx.si_snr(mix, a).value
    assert abs(mx.si_snri(est, a, mix).value - want) < 1e-12


# --------------------------------------------------------- differentiable losses


def test_neg_sdr_loss_floor_is_exactly_minus_cap():
    ref = np.random.default_rng(8).normal(size=64)
    loss = mx.neg_sdr_loss(Tensor(ref), ref)
    assert abs(loss.item() - (-DB_CAP)) < 1e-9


def test_neg_sdr_loss_tracks_metric_away_from_the_floor():
    rng = np.random.default_rng(9)
    ref = rng.normal(size=64)
    est = ref + 0.3 * rng.normal(size=64)
    loss = mx.neg_sdr_loss(Tensor(est), ref).item()
    assert abs(loss + mx.sdr(est, ref).value) < 1e-3


def test_neg_si_snr_loss_tracks_metric():
    rng = np.random.default_rng(10)
    ref = rng.normal(size=64)
    est = 0.7 * ref + 0.3 * rng.normal(size=64)
    loss = mx.neg_si_snr_loss(Tensor(est), ref).item()
    assert abs(loss + mx.si_snr(est, ref).value) < 1e-3


def test_loss_gradients_match_fd():
    rng = np.random.default_rng(11)
    ref = rng.normal(size=12)
    est = ref + 0.5 * rng.normal(size=12)
    grad_check(lambda e: mx.neg_sdr_loss(e, ref), [est])
    grad_check(lambda e: mx.neg_si_snr_loss(e, ref), [est])
    grad_check(lambda e: mx.silence_loss(e), [est])


def test_silence_loss_values():
    assert mx.silence_loss(Tensor(np.zeros(8))).item() == 0.0
    assert abs(mx.silence_loss(Tensor([1.0, -1.0])).item() - 1.0) < 1e-12


def test_silence_loss_gradient_form():
    est = Tensor(np.array([0.5, -2.0, 1.0]), requires_grad=True)
    with Tape() as tape:
        loss = mx.silence_loss(est)
    g = tape.backward(loss)[est]
    assert np.allclose(g, 2.0 * est.data / 3.0)


# ------------------------------------------------------------------------ CTC


def test_ctc_single_frame_uniform():
    loss = mx.ctc_loss(uniform_log_probs(1, 2), [1])
    assert abs(loss.item() - (-np.log(0.5))) < 1e-12


def test_ctc_two_frames_uniform():
    # paths (a,a), (a,-), (-,a) out of 4 -> 3/4
    loss = mx.ctc_loss(uniform_log_probs(2, 2), [1])
    assert abs(loss.item() - (-np.log(0.75))) < 1e-12


def test_ctc_empty_label_is_all_blank_path():
    rng = np.random.default_rng(12)
    lp = random_log_probs(rng, 5, 3)
    loss = mx.ctc_loss(lp, [])
    assert abs(loss.item() - (-lp[:, BLANK_ID].sum())) < 1e-10


def test_ctc_matches_brute_force_enumeration():
    rng = np.random.default_rng(13)
    checked = 0
    while checked < 60:
        T = int(rng.integers(1, 7))
        V = int(rng.integers(2, 5))
        L = int(rng.integers(0, 4))
        labels = list(rng.integers(1, V, size=L))
        if mx.min_frames_for(labels) > T:
            continue
        lp = random_log_probs(rng, T, V)
        got = mx.ctc_loss(lp, labels).item()
        want = brute_force_ctc(lp, labels)
        assert abs(got - want) < 1e-8
        checked += 1


def test_ctc_total_probability_over_feasible_labels():
    rng = np.random.default_rng(14)
    T, V = 3, 3
    lp = random_log_probs(rng, T, V)
    total = 0.0
    seqs = [[]]
    for L in range(1, T + 1):
        seqs.extend([list(s) for s in product(range(1, V), repeat=L)])
    for labels in seqs:
        if mx.min_frames_for(labels) > T:
            continue
        total += np.exp(-mx.ctc_loss(lp, labels).item())
    assert abs(total - 1.0) < 1e-10


def test_ctc_gradient_matches_fd():
    rng = np.random.default_rng(15)
    logits = rng.normal(size=(5, 4))
    for labels in ([2], [1, 3], [2, 2], []):
        grad_check(
            lambda z: mx.ctc_loss(ad.log_softmax(z, axis=1), labels), [logits]
        )


def test_ctc_infeasible_label_length():
    with pytest.raises(DataError):
        mx.ctc_loss(uniform_log_probs(2, 3), [1, 1])  # repeat needs 3 frames
    with pytest.raises(DataError):
        mx.ctc_loss(uniform_log_probs(1, 3), [1, 2])


def test_ctc_rejects_blank_and_oov_labels():
    with pytest.raises(DataError):
        mx.ctc_loss(uniform_log_probs(3, 3), [BLANK_ID])
    with pytest.raises(DataError):
        mx.ctc_loss(uniform_log_probs(3, 3), [7])


def test_ctc_rejects_unnormalized_rows():
    with pytest.raises(ShapeError):
        mx.ctc_loss(np.zeros((3, 3)), [1])


def test_greedy_frames_one_hot_and_ties():
    lp = np.log(np.array([[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.4, 0.3, 0.3]]))
    assert mx.ctc_greedy_frames(lp).tolist() == [0, 1, 0]
    tie = np.log(np.array([[0.2, 0.4, 0.4]]))
    assert mx.ctc_greedy_frames(tie).tolist() == [1]


def test_greedy_frames_keep_length_and_blanks():
    lp = uniform_log_probs(4, 3)  # uniform rows tie toward blank id 0
    frames = mx.ctc_greedy_frames(lp)
    assert frames.tolist() == [0, 0, 0, 0]


def test_collapse_examples():
    a, b = 1, 2
    assert mx.collapse_ctc([a, a, BLANK_ID, b]) == [a, b]
    assert mx.collapse_ctc([BLANK_ID] * 3) == []
    assert mx.collapse_ctc([a, BLANK_ID, a]) == [a, a]


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_collapse_of_greedy_never_contains_blank(seed):
    rng = np.random.default_rng(seed)
    lp = random_log_probs(rng, int(rng.integers(1, 8)), int(rng.integers(2, 5)))
    out = mx.collapse_ctc(mx.ctc_greedy_frames(lp))
    assert BLANK_ID not in out


# --------------------------------------------------------------- TER / energy


def test_token_error_rate_examples():
    assert mx.token_error_rate([1, 2, 3], [1, 2, 3]) == 0.0
    assert mx.token_error_rate([], [5, 5, 5, 5]) == 1.0
    assert mx.token_error_rate([1, 2, 3], [1, 3]) == 0.5
    assert mx.token_error_rate([4], []) == 1.0  # insertion against empty ref


def test_token_error_rate_matches_dp_oracle():
    def oracle(hyp, ref):
        m, n = len(hyp), len(ref)
        D = np.zeros((m + 1, n + 1), dtype=int)
        D[:, 0] = np.arange(m + 1)
        D[0, :] = np.arange(n + 1)
        for i in range(1, m + 1):
            for j in range(1, n + 1):
                D[i, j] = min(
                    D[i - 1, j] + 1,
                    D[i, j - 1] + 1,
                    D[i - 1, j - 1] + (hyp[i - 1] != ref[j - 1]),
                )
        return D[m, n] / max(1, n)

    rng = np.random.default_rng(16)
    for _ in range(100):
        hyp = list(rng.integers(1, 5, size=rng.integers(0, 7)))
        ref = list(rng.integers(1, 5, size=rng.integers(0, 7)))
        assert mx.token_error_rate(hyp, ref) == oracle(hyp, ref)


def test_frame_energy_constants():
    assert np.allclose(mx.frame_energy(np.zeros(10), 4), 0.0)
    assert np.allclose(mx.frame_energy(np.ones(10), 5), 1.0)


def test_frame_energy_matches_loop_and_partial_frame():
    rng = np.random.default_rng(17)
    w = rng.normal(size=23)
    got = mx.frame_energy(w, 5)
    want = [np.mean(w[i : i + 5] ** 2) for i in range(0, 20, 5)] + [np.mean(w[20:] ** 2)]
    assert np.allclose(got, want)
    assert len(got) == 5


def test_frame_energy_sign_flip_invariant():
    rng = np.random.default_rng(18)
    w = rng.normal(size=31)
    assert np.allclose(mx.frame_energy(w, 7), mx.frame_energy(-w, 7))
    assert np.all(mx.frame_energy(w, 7) >= 0)


def test_frame_energy_rejects_bad_inputs():
    with pytest.raises(ShapeError):
        mx.frame_energy(np.array([]), 4)
    with pytest.raises(ShapeError):
        mx.frame_energy(np.ones(4), 0)
