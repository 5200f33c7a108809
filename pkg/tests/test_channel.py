import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from beamsec.channel import (CouplingProfile, SystemDims, beam_gains, coupling_from_json, coupling_to_json,
                             dft_basis, load_couplings, sample_beam_channel, save_couplings, substream,
                             synth_coupling)
from beamsec.errors import ConfigError, DimensionError
from beamsec.scenarios import validate


def test_dft_small_cases():
    assert np.allclose(dft_basis(1), [[1]])
    assert np.allclose(dft_basis(2), np.array([[1, 1], [1, -1]]) / np.sqrt(2))


@given(st.integers(1, 64))
def test_dft_unitary(M):
    V = dft_basis(M)
    assert np.abs(V @ V.conj().T - np.eye(M)).max() <= 1e-12


def test_dft_rejects_bad_size():
    with pytest.raises(DimensionError):
        dft_basis(0)


def test_beam_gains_examples():
    assert np.array_equal(beam_gains([[1, 2], [3, 4]]), [4, 6])
    assert np.array_equal(beam_gains(np.zeros((2, 3))), [0, 0, 0])
    assert np.array_equal(beam_gains([[5, 0, 1]]), [5, 0, 1])


def test_zero_variance_entries_are_exactly_zero():
    G = sample_beam_channel([[1.0, 0.0], [0.0, 2.0]], substream(1, 9), size=50)
    assert np.all(G[:, 0, 1] == 0) and np.all(G[:, 1, 0] == 0)


def test_unit_variance_law_of_large_numbers():
    G = sample_beam_channel([[1.0]], substream(3, 0), size=100_000)
    assert 0.98 <= np.mean(np.abs(G) ** 2) <= 1.02


def test_sampling_is_deterministic():
    omega = np.array([[0.5, 1.0, 2.0]])
    a = sample_beam_channel(omega, substream(7, 1, 2), size=10)
    b = sample_beam_channel(omega, substream(7, 1, 2), size=10)
    assert np.array_equal(a, b)
    c = sample_beam_channel(omega, substream(7, 1, 3), size=10)
    assert not np.array_equal(a, c)


def test_variance_profile_within_four_se():
    omega = np.array([[0.2, 1.0, 3.0], [0.0, 0.7, 1.5]])
    n = 100_000
    p = np.abs(sample_beam_channel(omega, substream(11, 0), size=n)) ** 2
    se = p.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(p.mean(axis=0) - omega) <= 4 * se + 1e-15)


def test_uniform_profile_normalizes_to_ones():
    omegas, _ = synth_coupling(SystemDims(M=4, K=3, N_r=2, N_e=1), CouplingProfile("uniform"))
    assert np.allclose(omegas, 1.0)


def test_sparse_support_zeroes_other_beams():
    dims = SystemDims(M=8, K=2, N_r=2, N_e=2)
    omegas, _ = synth_coupling(dims, CouplingProfile("sparse-beams", {"support": [0, 1]}, seed=4))
    assert np.all(omegas[:, :, 2:] == 0)


@pytest.mark.parametrize("kind", ["uniform", "exponential-cluster", "sparse-beams"])
def test_profiles_normalized_and_deterministic(kind):
    dims = SystemDims(M=16, K=3, N_r=2, N_e=3)
    a, ea = synth_coupling(dims, CouplingProfile(kind, seed=5))
    b, eb = synth_coupling(dims, CouplingProfile(kind, seed=5))
    assert np.array_equal(a, b) and np.array_equal(ea, eb)
    assert np.all(a >= 0) and np.all(ea >= 0)
    assert np.allclose(a.sum(axis=(1, 2)), dims.N_r * dims.M)
    assert np.array_equal(a.sum(axis=2), b.sum(axis=2))


def test_bad_dims_and_profile():
    with pytest.raises(DimensionError):
        SystemDims(M=0, K=1, N_r=1, N_e=1)
    with pytest.raises(ConfigError):
        CouplingProfile("gaussian")


def test_coupling_json_round_trip(tmp_path, rng):
    omegas = rng.uniform(size=(2, 3, 5))
    eve = rng.uniform(size=(2, 5))
    path = tmp_path / "c.json"
    save_couplings(path, omegas, eve)
    validate(json.loads(path.read_text()), "coupling.schema.json")
    o2, e2 = load_couplings(path)
    assert np.array_equal(o2, omegas) and np.array_equal(e2, eve)
    assert coupling_to_json([[1, 2], [3, 4]]) == {"rows": 2, "cols": 2, "entries": [1.0, 2.0, 3.0, 4.0]}


def test_coupling_json_rejects_bad_entries():
    with pytest.raises(ConfigError):
        coupling_from_json({"rows": 2, "cols": 2, "entries": [1, 2, 3]})
    with pytest.raises(ConfigError):
        coupling_from_json({"rows": 1, "cols": 2, "entries": [1, -2]})
