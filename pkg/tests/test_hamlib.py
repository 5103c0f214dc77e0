import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dosqpe.errors import FormatError, InvalidArgumentError, ResourceLimitError, ValidationError
from dosqpe.hamlib import (
    DenseHermitian,
    PauliSum,
    PauliTerm,
    RescaleParams,
    Spectrum,
    apply_pauli,
    build_fermi_hubbard,
    dump_matrix,
    dump_pauli_sum,
    exact_spectrum,
    group_eigenvalues,
    jordan_wigner_hop,
    load_matrix,
    load_pauli_sum,
    pad_to_qubits,
    pauli_decompose,
    rescale,
    to_dense,
    total_number_operator,
    unscale_phase,
)


# --- occupation-basis oracle: basis index = sum_q n_q 2^q -------------------

def fermion_annihilator(p, n_modes):
    dim = 2 ** n_modes
    a = np.zeros((dim, dim))
    for x in range(dim):
        if x >> p & 1:
            sign = (-1) ** bin(x & ((1 << p) - 1)).count("1")
            a[x ^ (1 << p), x] = sign
    return a


def hubbard_oracle(sites, t, U, periodic):
    n = 2 * sites
    a = [fermion_annihilator(p, n) for p in range(n)]
    h = np.zeros((2 ** n, 2 ** n))
    bonds = [(i, i + 1) for i in range(sites - 1)]
    if periodic and sites > 2:
        bonds.append((sites - 1, 0))
    for i, j in bonds:
        for s in (0, 1):
            p, q = 2 * i + s, 2 * j + s
            h -= t * (a[p].T @ a[q] + a[q].T @ a[p])
    for i in range(sites):
        h += U * (a[2 * i].T @ a[2 * i]) @ (a[2 * i + 1].T @ a[2 * i + 1])
    return h


def random_hermitian(rng, d):
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (x + x.conj().T) / 2


# --- Pauli sums --------------------------------------------------------------

def test_terms_merge_and_drop_zeros():
    h = PauliSum(2, (PauliTerm(1.0, "XZ"), PauliTerm(2.0, "ZZ"), PauliTerm(-1.0, "XZ")))
    assert h.as_dict() == {"ZZ": 2.0}


def test_merging_is_idempotent():
    h = PauliSum(2, (PauliTerm(1.0, "XX"), PauliTerm(0.5, "XX"), PauliTerm(3.0, "YI")))
    assert h.merged().as_dict() == h.as_dict() == {"XX": 1.5, "YI": 3.0}


def test_invalid_words_rejected():
    with pytest.raises(InvalidArgumentError):
        PauliTerm(1.0, "XQ")
    with pytest.raises(InvalidArgumentError):
        PauliSum(2, (PauliTerm(1.0, "XXX"),))
    with pytest.raises(InvalidArgumentError):
        PauliTerm(float("inf"), "X")


def test_to_dense_identity_and_z():
    np.testing.assert_allclose(to_dense(PauliSum.from_dict(2, {"II": 2.5})).matrix, 2.5 * np.eye(4))
    np.testing.assert_allclose(to_dense(PauliSum.from_dict(1, {"Z": 1.0})).matrix, np.diag([1, -1]))


def test_to_dense_little_endian():
    # Z on qubit 0 flips the sign of odd basis indices
    m = to_dense(PauliSum.from_dict(2, {"ZI": 1.0})).matrix
    np.testing.assert_allclose(np.diag(m).real, [1, -1, 1, -1])


def test_to_dense_guard():
    with pytest.raises(ResourceLimitError):
        to_dense(PauliSum.from_dict(13, {"I" * 13: 1.0}))


def test_apply_pauli_matches_kron():
    X = np.array([[0, 1], [1, 0]])
    Y = np.array([[0, -1j], [1j, 0]])
    rng = np.random.default_rng(0)
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    # qubit 0 is the least significant bit, i.e. the right kron factor
    np.testing.assert_allclose(apply_pauli("XY", v), np.kron(Y, X) @ v)


def test_pauli_decompose_round_trip():
    rng = np.random.default_rng(1)
    h = DenseHermitian(random_hermitian(rng, 8))
    np.testing.assert_allclose(to_dense(pauli_decompose(h)).matrix, h.matrix, atol=1e-12)


# --- Jordan-Wigner ------------------------------------------------------------

def test_hop_two_modes():
    assert jordan_wigner_hop(0, 1, 2).as_dict() == pytest.approx({"XX": 0.5, "YY": 0.5})
    a0, a1 = fermion_annihilator(0, 2), fermion_annihilator(1, 2)
    np.testing.assert_allclose(to_dense(jordan_wigner_hop(0, 1, 2)).matrix,
                               a0.T @ a1 + a1.T @ a0, atol=1e-14)


def test_hop_same_mode_rejected():
    with pytest.raises(InvalidArgumentError):
        jordan_wigner_hop(0, 0, 3)


def test_hop_carries_z_string_and_conserves_number():
    h = jordan_wigner_hop(0, 2, 3)
    assert set(h.as_dict()) == {"XZX", "YZY"}
    d = to_dense(h).matrix
    nop = to_dense(total_number_operator(3)).matrix
    np.testing.assert_allclose(d @ nop - nop @ d, 0, atol=1e-12)
    a0, a2 = fermion_annihilator(0, 3), fermion_annihilator(2, 3)
    np.testing.assert_allclose(d, a0.T @ a2 + a2.T @ a0, atol=1e-14)


def test_two_site_hubbard_pauli_terms():
    h = build_fermi_hubbard(2, 1.0, 4.0)
    expected = {"YZYI": -0.5, "XZXI": -0.5, "IYZY": -0.5, "IXZX": -0.5, "IIII": 2.0,
                "ZIII": -1.0, "IZII": -1.0, "ZZII": 1.0, "IIZI": -1.0, "IIIZ": -1.0, "IIZZ": 1.0}
    assert h.as_dict() == pytest.approx(expected)


@pytest.mark.parametrize("sites,periodic", [(2, False), (2, True), (3, False), (3, True)])
def test_hubbard_matches_occupation_oracle(sites, periodic):
    h = to_dense(build_fermi_hubbard(sites, 1.0, 4.0, periodic)).matrix
    np.testing.assert_allclose(h, hubbard_oracle(sites, 1.0, 4.0, periodic), atol=1e-12)


def test_two_site_hubbard_spectrum():
    spec = exact_spectrum(build_fermi_hubbard(2, 1.0, 4.0))
    r = 2 * np.sqrt(2)
    expected = [(-1, 2), (2 - r, 1), (0, 4), (1, 2), (3, 2), (4, 1), (2 + r, 1), (5, 2), (8, 1)]
    assert [d for _, d in spec.entries] == [d for _, d in expected]
    np.testing.assert_allclose(spec.values, [v for v, _ in expected], atol=1e-10)


def test_null_hubbard_has_no_terms():
    assert len(build_fermi_hubbard(2, 0.0, 0.0)) == 0


def test_three_site_hubbard_shape():
    assert build_fermi_hubbard(3, 1.0, 4.0).qubit_count == 6
    with pytest.raises(InvalidArgumentError):
        build_fermi_hubbard(1, 1.0, 4.0)


@pytest.mark.parametrize("sites,periodic", [(2, False), (3, True)])
def test_hubbard_conserves_particle_number(sites, periodic):
    h = to_dense(build_fermi_hubbard(sites, 1.0, 4.0, periodic)).matrix
    nop = to_dense(total_number_operator(2 * sites)).matrix
    assert np.max(np.abs(h @ nop - nop @ h)) < 1e-10


# --- dense matrices, padding, rescaling ---------------------------------------

def test_dense_validation():
    with pytest.raises(ValidationError):
        DenseHermitian(np.array([[0, 1], [2, 0]]))
    with pytest.raises(ValidationError):
        DenseHermitian(np.zeros((2, 3)))
    with pytest.raises(InvalidArgumentError):
        DenseHermitian(np.eye(3)).qubit_count


def test_pad_five_to_eight():
    rng = np.random.default_rng(2)
    h = DenseHermitian(random_hermitian(rng, 5))
    padded = pad_to_qubits(h)
    assert padded.dimension == 8
    expected = np.sort(np.concatenate([np.linalg.eigvalsh(h.matrix), np.zeros(3)]))
    np.testing.assert_allclose(np.linalg.eigvalsh(padded.matrix), expected, atol=1e-10)


def test_pad_power_of_two_unchanged():
    h = DenseHermitian(np.diag([1.0, 2.0, 3.0, 4.0]))
    assert pad_to_qubits(h) is h


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2 ** 32 - 1))
def test_padding_spectrum_identity(d, seed):
    h = DenseHermitian(random_hermitian(np.random.default_rng(seed), d))
    padded = pad_to_qubits(h)
    target = 1 << max(0, (d - 1).bit_length())
    assert padded.dimension == target
    expected = np.sort(np.concatenate([np.linalg.eigvalsh(h.matrix), np.zeros(target - d)]))
    np.testing.assert_allclose(np.linalg.eigvalsh(padded.matrix), expected, atol=1e-10)


def test_rescale_examples():
    h = DenseHermitian(np.diag([0.0, 1.0]))
    out = rescale(h, RescaleParams(0.0, 2.0, 0.0, top_margin=0.0))
    np.testing.assert_allclose(out.matrix, np.diag([0.0, 0.5]))
    # the top margin keeps lambda_max off phase 1
    out = rescale(DenseHermitian(np.diag([-2.0, 2.0])), RescaleParams(-2.0, 2.0, 0.0, 0.01))
    np.testing.assert_allclose(np.diag(out.matrix).real, [0.0, 0.99])
    assert RescaleParams.for_register(0, 1, 6).top_margin == 1 / 256


def test_rescale_rejects_empty_interval():
    with pytest.raises(InvalidArgumentError):
        RescaleParams(1.0, 1.0)


def test_unscale_examples():
    p = RescaleParams(0.0, 2.0, 0.0, top_margin=0.0)
    assert unscale_phase(p, 0.0) == 0.0
    assert unscale_phase(p, 0.5) == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        unscale_phase(p, 1.0)


def test_shift_moves_lowest_phase_up():
    p = RescaleParams(-1.0, 3.0, shift_delta=0.1, top_margin=0.0)
    assert p.phase_of(-1.0) > 0.0
    assert p.phase_of(3.0) < 1.0


def test_pauli_rescale_touches_identity_only():
    h = build_fermi_hubbard(2, 1.0, 4.0)
    p = RescaleParams(-1.0, 8.0)
    out = rescale(h, p)
    ident = "IIII"
    for w, c in h.as_dict().items():
        if w != ident:
            assert out.as_dict()[w] == pytest.approx(p.slope * c)
    assert out.identity_coefficient() == pytest.approx(p.slope * 2.0 + p.offset)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1), st.floats(0.0, 0.5), st.floats(0.0, 0.1))
def test_rescale_affinity_and_round_trip(d, seed, delta, margin):
    h = DenseHermitian(random_hermitian(np.random.default_rng(seed), d))
    ev = np.linalg.eigvalsh(h.matrix)
    lo, hi = ev[0] - 0.1, ev[-1] + 0.1
    p = RescaleParams(lo, hi, delta, margin)
    out = np.linalg.eigvalsh(rescale(h, p).matrix)
    np.testing.assert_allclose(out, p.slope * ev + p.offset, atol=1e-10)
    assert np.all(out >= 0) and np.all(out < 1)
    back = [unscale_phase(p, th) for th in out]
    np.testing.assert_allclose(back, ev, atol=1e-10)


# --- spectra --------------------------------------------------------------------

def test_group_eigenvalues_examples():
    assert exact_spectrum(DenseHermitian(np.diag([0.0, 0.0, 1.0]))).entries == [(0.0, 2), (1.0, 1)]
    assert exact_spectrum(PauliSum.from_dict(1, {"Z": 1.0})).entries == [(-1.0, 1), (1.0, 1)]
    assert group_eigenvalues([0.0, 5e-10, 1.0]).entries[0][1] == 2


def test_padded_matrix_zero_degeneracy(matrix5_path):
    h = pad_to_qubits(load_matrix(matrix5_path.read_text()))
    spec = exact_spectrum(h)
    zero = [d for v, d in spec.entries if abs(v) < 1e-9]
    assert zero and zero[0] >= 3


def test_spectrum_invariants():
    with pytest.raises(InvalidArgumentError):
        Spectrum(np.array([0.2, 0.1]), np.array([1, 1]))
    with pytest.raises(InvalidArgumentError):
        Spectrum(np.array([0.1]), np.array([0]))
    s = Spectrum.from_entries([(0.5, 2), (0.25, 1)])
    assert s.entries == [(0.25, 1), (0.5, 2)] and s.total == 3


# --- file formats -----------------------------------------------------------------

def test_load_literal_pauli_x():
    np.testing.assert_allclose(load_matrix("[[0,1],[1,0]]").matrix, [[0, 1], [1, 0]])


def test_load_dim_format_complex_entries():
    text = "# comment\ndim 2\n1 2-3i\n2+3i -1  # trailing\n"
    np.testing.assert_allclose(load_matrix(text).matrix, [[1, 2 - 3j], [2 + 3j, -1]])


def test_five_by_five_round_trip(matrix5_path):
    h = load_matrix(matrix5_path.read_text())
    assert h.dimension == 5
    again = load_matrix(dump_matrix(h))
    assert np.array_equal(again.matrix, h.matrix)


def test_non_symmetric_file_rejected():
    rows = ["dim 5"] + [" ".join("1" if i == j else "0" for j in range(5)) for i in range(5)]
    rows[2] = "0 1 0.5 0 0"
    with pytest.raises(ValidationError):
        load_matrix("\n".join(rows))


@pytest.mark.parametrize("text,line", [
    ("dim 2\n1 0\n0\n", 3),
    ("dim 2\n1 x\n0 1\n", 2),
    ("size 2\n", 1),
    ("dim 3\n1 0 0\n", 3),
])
def test_matrix_format_errors_carry_line(text, line):
    with pytest.raises(FormatError) as err:
        load_matrix(text)
    assert err.value.line == line


def test_pauli_file_round_trip():
    h = build_fermi_hubbard(2, 1.0, 4.0)
    again = load_pauli_sum(dump_pauli_sum(h))
    assert again.as_dict() == h.as_dict()


def test_pauli_file_errors():
    with pytest.raises(FormatError) as err:
        load_pauli_sum("1.0 XX\n2.0 XXX\n")
    assert err.value.line == 2
    with pytest.raises(FormatError):
        load_pauli_sum("abc XX\n")
    with pytest.raises(FormatError):
        load_pauli_sum("# nothing\n")


def test_wrap_phase_never_returns_one():
    from dosqpe.hamlib import wrap_phase

    assert -1e-17 % 1.0 == 1.0  # the float artifact being guarded against
    np.testing.assert_array_equal(wrap_phase(np.array([-1e-17, 1.0, 1.25, -0.25])),
                                  [0.0, 0.0, 0.25, 0.75])
