import numpy as np
import pytest

from e2car import dim_expand as de
from e2car import model_graph as mg
from e2car.model_graph import ModelSpec, SpecError


def _walk(spec):
    return [layer for layer, _ in mg._walk(spec.layers, "layers")]


@pytest.fixture(scope="module")
def pairs():
    out = {}
    for name in mg.REFERENCE_NAMES:
        m1 = mg.build(mg.reference_spec(name, seed=2))
        out[name] = (m1, de.expand_model(m1))
    return out


class TestExpandSpec:
    def test_e2car_kernels_unit_height(self):
        s2 = de.expand_spec(mg.reference_spec("e2car_ref"))
        assert s2.dimensionality == "two_d" and s2.input_shape == (1, 1, 800)
        geoms = [l.geometry for l in _walk(s2) if l.geometry is not None]
        assert geoms and all(g.kernel[0] == 1 and g.stride[0] == 1 and g.padding[0] == 0 for g in geoms)

    def test_field_mapping(self):
        s1 = mg.reference_spec("dae_ref")
        s2 = de.expand_spec(s1)
        for a, b in zip(_walk(s1), _walk(s2)):
            assert a.kind == b.kind and a.activation == b.activation
            if a.geometry is not None:
                assert b.geometry.kernel == (1,) + a.geometry.kernel
                assert b.geometry.stride == (1,) + a.geometry.stride
                assert b.geometry.padding == (0,) + a.geometry.padding
                assert (b.geometry.in_channels, b.geometry.out_channels) == (
                    a.geometry.in_channels, a.geometry.out_channels)
            if a.kind == "upsample":
                assert b.factor == (1,) + a.factor

    def test_pool_mapping(self):
        s1 = ModelSpec("p", "one_d", (1, 40), (mg.pool("avg", 2), mg.upsample(2)))
        s2 = de.expand_spec(s1)
        assert s2.layers[0].geometry.kernel == (1, 2) and s2.layers[0].pool == "avg"
        m1 = mg.build(s1)
        x = np.arange(40.0).reshape(1, 40)
        np.testing.assert_array_equal(mg.build(s2).forward(x.reshape(1, 1, 40)).reshape(1, 40), m1.forward(x))

    def test_already_two_d(self):
        with pytest.raises(SpecError, match="already"):
            de.expand_spec(de.expand_spec(mg.reference_spec("cnn_ref")))

    @pytest.mark.parametrize("name", mg.REFERENCE_NAMES)
    def test_structure_preserved(self, name):
        s1 = mg.reference_spec(name)
        s2 = de.expand_spec(s1)
        assert mg.count_params(s1) == mg.count_params(s2)
        assert len(_walk(s1)) == len(_walk(s2))

    def test_mapping_table_covers_each_layer_once(self):
        s1 = mg.reference_spec("e2car_ref")
        _, table = de.expand_spec_with_table(s1)
        paths = [p for p, _, _ in table]
        assert len(paths) == len(set(paths)) == len(_walk(s1))


class TestExpandWeights:
    def test_bytes_identical_and_inverse(self, pairs):
        m1, m2 = pairs["e2car_ref"]
        for k in m1.params:
            assert m2.params[k][0].shape == m1.params[k][0].shape[:2] + (1,) + m1.params[k][0].shape[2:]
            assert m2.params[k][0].tobytes() == m1.params[k][0].tobytes()
            assert m2.params[k][1].tobytes() == m1.params[k][1].tobytes()
        back = de.collapse_weights(m2.params)
        assert all(back[k][0].shape == m1.params[k][0].shape for k in m1.params)

    def test_loads_into_expanded_spec(self, pairs, tmp_path):
        m1, m2 = pairs["e2car_ref"]
        mg.save_weights(m2, tmp_path / "w2.e2cw")
        mg.load_weights(m2.spec, tmp_path / "w2.e2cw")

    def test_shape_mismatch(self, pairs):
        cnn = pairs["cnn_ref"][0]
        with pytest.raises(SpecError):
            de.expand_weights(cnn.params, mg.reference_spec("resnet_ref"))


class TestVerifyEquivalence:
    @pytest.mark.parametrize("name", mg.REFERENCE_NAMES)
    def test_reference_models_32bit(self, pairs, name):
        rep = de.verify_equivalence(*pairs[name], n_inputs=100, tolerance=1e-5)
        assert rep.passed and not rep.vacuous and rep.n_test_inputs == 100

    @pytest.mark.parametrize("name", ["cnn_ref", "e2car_ref"])
    def test_reference_models_64bit(self, pairs, name):
        m1, m2 = pairs[name]
        rep = de.verify_equivalence(m1.astype(np.float64), m2.astype(np.float64), 20, 1e-12)
        assert rep.passed and rep.dtype == "float64"

    def test_perturbed_weight_fails(self, pairs):
        m1, m2 = pairs["e2car_ref"]
        bad = m2.copy()
        bad.params[0][0][3, 0, 0, 1] += 1e-2
        rep = de.verify_equivalence(m1, bad, n_inputs=5, tolerance=1e-5)
        assert not rep.passed and rep.max_abs_difference > 1e-5

    def test_vacuous(self, pairs):
        rep = de.verify_equivalence(*pairs["cnn_ref"], n_inputs=0, tolerance=1e-5)
        assert rep.passed and rep.vacuous and rep.max_abs_difference == 0
        assert "vacuous" in str(rep)

    def test_report_serializations(self, pairs):
        rep = de.verify_equivalence(*pairs["cnn_ref"], n_inputs=3)
        d = rep.to_dict()
        assert d["pass"] is True and len(d["mapping"]) == 4
        assert "layers[3]" in str(rep)
