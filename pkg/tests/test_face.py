import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imuface import face
from imuface.aus import NUM_AU


@pytest.fixture(scope="module")
def basis():
    return face.generate_face_basis(seed=7)


# -- brute-force oracles (independent of the implementations under test) ----

def oracle_landmark_mae(truth, pred, d_f, d_r):
    total = 0.0
    for i in range(len(truth)):
        dist = 0.0
        for a, b in zip(truth[i], pred[i]):
            dist += (a - b) ** 2
        total += (d_r / d_f) * dist ** 0.5
    return total / len(truth)


def oracle_nme(truth, pred, d):
    total = 0.0
    for i in range(len(truth)):
        dist = sum((a - b) ** 2 for a, b in zip(truth[i], pred[i])) ** 0.5
        total += dist / d
    return total / len(truth)


def oracle_au_mae(pred, truth):
    total, count = 0.0, 0
    for f in range(len(pred)):
        for c in range(pred.shape[1]):
            total += abs(pred[f, c] - truth[f, c])
            count += 1
    return total / count


def oracle_placement(x1, y1, x2, y2, d1, d2, f):
    dd = 2.0 * f * abs(d1 - d2) / (d1 + d2)
    return ((x1 - x2) ** 2 + (y1 - y2) ** 2 + dd ** 2) ** 0.5


def oracle_reconstruct(weights, basis):
    out = basis.neutral.copy()
    for i in range(NUM_AU):
        out = out + (weights[i] / 100.0) * basis.deltas[i]
    return out


# -- blendshape conversion ---------------------------------------------------

def test_blendshape_endpoints():
    assert face.au_to_blendshape(np.zeros(NUM_AU)).tolist() == [0.0] * NUM_AU
    assert face.au_to_blendshape(np.full(NUM_AU, 5.0)).tolist() == [100.0] * NUM_AU
    assert face.au_to_blendshape(np.full(NUM_AU, 2.5)).tolist() == [50.0] * NUM_AU


def test_blendshape_clamps():
    w = face.au_to_blendshape(np.array([-1.0, 7.0] + [1.0] * 12))
    assert w[0] == 0.0 and w[1] == 100.0


@given(st.floats(0, 5), st.floats(0, 5))
@settings(max_examples=50, deadline=None)
def test_blendshape_monotone_linear(a, b):
    lo, hi = sorted((a, b))
    wa = face.au_to_blendshape(np.full(NUM_AU, lo))[0]
    wb = face.au_to_blendshape(np.full(NUM_AU, hi))[0]
    assert wa <= wb
    assert wa == pytest.approx(20.0 * lo)


# -- reconstruction -----------------------------------------------------------

def test_zero_weights_give_neutral(basis):
    out = face.reconstruct_landmarks(np.zeros(NUM_AU), basis)
    assert np.array_equal(out, basis.neutral)


def test_single_full_au_adds_delta(basis):
    w = np.zeros(NUM_AU)
    w[3] = 100.0
    out = face.reconstruct_landmarks(w, basis)
    assert np.allclose(out, basis.neutral + basis.deltas[3])


def test_reconstruct_matches_oracle(basis):
    rng = np.random.default_rng(0)
    for _ in range(100):
        w = rng.uniform(0, 100, NUM_AU)
        assert np.allclose(face.reconstruct_landmarks(w, basis),
                           oracle_reconstruct(w, basis), atol=1e-9)


def test_reconstruct_superposition(basis):
    rng = np.random.default_rng(1)
    w1, w2 = rng.uniform(0, 50, NUM_AU), rng.uniform(0, 50, NUM_AU)
    d1 = face.reconstruct_landmarks(w1, basis) - basis.neutral
    d2 = face.reconstruct_landmarks(w2, basis) - basis.neutral
    d12 = face.reconstruct_landmarks(w1 + w2, basis) - basis.neutral
    assert np.allclose(d12, d1 + d2, atol=1e-9)


# -- metrics vs oracles --------------------------------------------------------

def test_landmark_mae_trivial():
    p = np.random.default_rng(2).normal(size=(51, 3))
    assert face.landmark_mae(p, p, 10.0, 10.0) == 0.0
    offset = p + np.array([1.0, 0.0, 0.0])
    assert face.landmark_mae(p, offset, 5.0, 5.0) == pytest.approx(1.0)


def test_landmark_mae_oracle_equivalence():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(3, 8))
        t, p = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        d_f, d_r = rng.uniform(1, 5), rng.uniform(1, 5)
        assert face.landmark_mae(t, p, d_f, d_r) == pytest.approx(
            oracle_landmark_mae(t, p, d_f, d_r), abs=1e-9)


def test_landmark_mae_scales_with_ratio():
    rng = np.random.default_rng(4)
    t, p = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
    m1 = face.landmark_mae(t, p, 2.0, 1.0)
    m2 = face.landmark_mae(t, p, 2.0, 3.0)
    assert m2 == pytest.approx(3.0 * m1)


def test_nme_trivial_and_oracle():
    rng = np.random.default_rng(5)
    t = rng.normal(size=(51, 3))
    offset = t.copy()
    offset[:, 0] += 0.02 * 40.0
    assert face.nme(t, offset, 40.0) == pytest.approx(0.02)
    for _ in range(100):
        n = int(rng.integers(3, 6))
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        d = rng.uniform(0.5, 4)
        assert face.nme(a, b, d) == pytest.approx(oracle_nme(a, b, d), abs=1e-9)


def test_nme_scale_invariance():
    rng = np.random.default_rng(6)
    t, p = rng.normal(size=(12, 3)), rng.normal(size=(12, 3))
    assert face.nme(3.0 * t, 3.0 * p, 3.0 * 2.0) == pytest.approx(face.nme(t, p, 2.0))


def test_au_mae_trivial_and_oracle():
    rng = np.random.default_rng(7)
    t = rng.uniform(0, 5, (20, NUM_AU))
    assert face.au_mae(t, t)[0] == 0.0
    overall, per = face.au_mae(t + 0.19, t)
    assert overall == pytest.approx(0.19)
    assert np.allclose(per, 0.19)
    for _ in range(100):
        a = rng.uniform(0, 5, (2, NUM_AU))
        b = rng.uniform(0, 5, (2, NUM_AU))
        assert face.au_mae(a, b)[0] == pytest.approx(oracle_au_mae(a, b), abs=1e-12)


def test_au_mae_checks_shapes():
    with pytest.raises(face.FaceError):
        face.au_mae(np.zeros((3, NUM_AU)), np.zeros((4, NUM_AU)))


def test_placement_amplitude():
    assert face.placement_amplitude(1, 2, 1, 2, 50, 50, 500) == 0.0
    # Equal depths reduce to planar distance.
    assert face.placement_amplitude(0, 0, 3, 4, 80, 80, 500) == pytest.approx(5.0)
    # Worked case: 3,4 pixel offsets, depths 100 vs 102, focal 500.
    expected = oracle_placement(3, 0, 0, 4, 100, 102, 500)
    got = face.placement_amplitude(3, 0, 0, 4, 100, 102, 500)
    assert got == pytest.approx(expected, abs=1e-9)
    assert got == pytest.approx(11.0919, abs=1e-3)
    rng = np.random.default_rng(8)
    for _ in range(100):
        x1, y1, x2, y2 = rng.normal(0, 10, 4)
        d1, d2 = rng.uniform(50, 200, 2)
        f = rng.uniform(100, 1000)
        assert face.placement_amplitude(x1, y1, x2, y2, d1, d2, f) == pytest.approx(
            oracle_placement(x1, y1, x2, y2, d1, d2, f), abs=1e-9)


def test_placement_symmetry():
    rng = np.random.default_rng(9)
    x1, y1, x2, y2 = rng.normal(0, 10, 4)
    d1, d2 = rng.uniform(50, 200, 2)
    assert face.placement_amplitude(x1, y1, x2, y2, d1, d2, 500) == pytest.approx(
        face.placement_amplitude(x2, y2, x1, y1, d2, d1, 500))


def test_placement_rejects_bad_depths():
    with pytest.raises(face.FaceError):
        face.placement_amplitude(0, 0, 1, 1, -5, 10, 500)


# -- basis persistence ----------------------------------------------------------

def test_basis_save_load_round_trip(basis, tmp_path):
    path = tmp_path / "basis.json"
    basis.save(path)
    back = face.FaceBasis.load(path)
    assert np.allclose(back.neutral, basis.neutral)
    assert np.allclose(back.deltas, basis.deltas)
    assert back.canthus_indices == basis.canthus_indices


def test_basis_deterministic(basis):
    again = face.generate_face_basis(seed=7)
    assert np.array_equal(again.neutral, basis.neutral)
    assert np.array_equal(again.deltas, basis.deltas)
    different = face.generate_face_basis(seed=8)
    assert not np.array_equal(different.deltas, basis.deltas)


def test_basis_geometry(basis):
    assert basis.canthus_distance() > 0
    assert basis.neutral.shape == (51, 3)
    assert basis.deltas.shape == (NUM_AU, 51, 3)
