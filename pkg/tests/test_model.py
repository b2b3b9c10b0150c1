import numpy as np
import pytest

from postamp.model import (
    GOE_CONVENTION,
    ModelParams,
    Variant,
    load_instance,
    make_instance,
    sample_goe,
    save_instance,
    substream,
)


class TestGoe:
    def test_symmetric_bitwise(self):
        W = sample_goe(300, 1)
        assert np.array_equal(W, W.T)

    def test_entry_variances(self):
        n = 1000
        W = sample_goe(n, 2)
        off = W[np.triu_indices(n, 1)]
        diag = np.diag(W)
        # variance 1/n off the diagonal, 2/n on it
        np.testing.assert_allclose(off.var() * n, 1.0, rtol=0.01)
        np.testing.assert_allclose(diag.var() * n, 2.0, rtol=0.15)

    def test_spectral_edge_is_two(self):
        eig = np.linalg.eigvalsh(sample_goe(1500, 3))
        assert abs(eig[-1] - 2) < 0.1 and abs(eig[0] + 2) < 0.1

    def test_quadratic_form_variance(self):
        # v^T W v for unit v has variance 2/n
        n = 200
        v = np.ones(n) / np.sqrt(n)
        vals = [v @ sample_goe(n, s) @ v for s in range(2000)]
        np.testing.assert_allclose(np.var(vals) * n, 2.0, rtol=0.1)

    def test_rejects_bad_n(self):
        with pytest.raises(ValueError):
            sample_goe(1, 0)

    def test_convention_string_mentions_variances(self):
        assert "1/n" in GOE_CONVENTION and "2/n" in GOE_CONVENTION


class TestParams:
    def test_variant_chi(self):
        assert Variant.FMM.chi == 0 and Variant.AMS.chi == 1
        assert ModelParams(10, 1.0, 0.1, "FMM").chi == 0

    @pytest.mark.parametrize("kw", [dict(n=1), dict(n=10.5), dict(lam=0.0), dict(gamma0=-0.1)])
    def test_invalid(self, kw):
        base = dict(n=10, lam=1.0, gamma0=0.1)
        base.update(kw)
        with pytest.raises(ValueError):
            ModelParams(**base)


class TestInstance:
    def test_assembly(self):
        p = ModelParams(50, 1.5, 0.3, Variant.AMS)
        inst = make_instance(p, 4)
        np.testing.assert_allclose(inst.Y, 1.5 / 50 * np.outer(inst.x, inst.x) + inst.W, atol=0)
        np.testing.assert_allclose(inst.y, 0.3 * inst.x + np.sqrt(0.3) * inst.g_side)
        assert np.all(inst.x == 1)

    def test_random_spike(self):
        inst = make_instance(ModelParams(500, 1.5, 0.3, fix_spike_to_ones=False), 4)
        assert set(np.unique(inst.x)) == {-1.0, 1.0}

    def test_reproducible_and_independent_streams(self):
        p = ModelParams(30, 1.5, 0.3)
        a, b, c = make_instance(p, 7), make_instance(p, 7), make_instance(p, 8)
        assert np.array_equal(a.W, b.W) and np.array_equal(a.g_side, b.g_side)
        assert not np.array_equal(a.W, c.W)
        # distinct tags give distinct streams
        assert not np.allclose(substream(7, "goe").standard_normal(5), substream(7, "side").standard_normal(5))

    def test_arrays_are_read_only(self):
        inst = make_instance(ModelParams(10, 1.0, 0.1), 0)
        with pytest.raises(ValueError):
            inst.W[0, 0] = 1.0

    def test_save_load_round_trip(self, tmp_path):
        inst = make_instance(ModelParams(40, 1.2, 0.2, Variant.FMM), 5)
        path = tmp_path / "inst.npz"
        save_instance(path, inst)
        back = load_instance(path)
        assert back.params == inst.params and back.seed == inst.seed
        for name in ("x", "W", "Y", "y", "g_side"):
            np.testing.assert_array_equal(getattr(back, name), getattr(inst, name))
