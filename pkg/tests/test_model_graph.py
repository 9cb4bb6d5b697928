from collections import Counter

import numpy as np
import pytest

from e2car import model_graph as mg
from e2car.model_graph import ModelSpec, SpecError, WeightsFileError
from e2car.tensor_ops import ShapeError

PINNED_PARAMS = {"cnn_ref": 2769, "resnet_ref": 10481, "dae_ref": 64449, "e2car_ref": 83249}


def _count_by_hand(name):
    def c(cin, cout, k):
        return cout * cin * k + cout

    dae = lambda cin: (c(cin, 32, 5) + c(32, 64, 5) + c(64, 64, 5) + c(64, 64, 5) + c(64, 32, 5)
                       + c(32, 16, 5) + c(16, 1, 1))
    return {
        "cnn_ref": c(1, 16, 5) + 2 * c(16, 16, 5) + c(16, 1, 5),
        "resnet_ref": c(1, 16, 5) + 8 * c(16, 16, 5) + c(16, 1, 1),
        "dae_ref": dae(1),
        "e2car_ref": c(1, 16, 3) + sum(4 * c(16, 16, k) for k in (3, 5, 7)) + c(48, 16, 1) + dae(16),
    }[name]


@pytest.fixture(scope="module")
def models():
    return {n: mg.build(mg.reference_spec(n)) for n in mg.REFERENCE_NAMES}


class TestReferenceSpecs:
    @pytest.mark.parametrize("name", mg.REFERENCE_NAMES)
    def test_shape_contract(self, models, name, rng):
        y = models[name].forward(rng.uniform(0, 1, (1, 800)))
        assert y.shape == (1, 800) and y.dtype == np.float32

    @pytest.mark.parametrize("name", mg.REFERENCE_NAMES)
    def test_param_count_pinned(self, models, name):
        assert models[name].n_params == PINNED_PARAMS[name] == _count_by_hand(name)
        assert mg.count_params(mg.reference_spec(name)) == PINNED_PARAMS[name]

    def test_e2car_has_six_residual_blocks(self):
        spec = mg.reference_spec("e2car_ref")
        kernels = [l.geometry.kernel[0] for l, _ in mg._walk(spec.layers, "layers") if l.kind == "residual_block"]
        assert Counter(kernels) == Counter({3: 2, 5: 2, 7: 2})

    def test_dae_contained_in_e2car(self):
        dae, e2 = mg.reference_spec("dae_ref"), mg.reference_spec("e2car_ref")
        assert len(dae.layers) == len(e2.layers) - 3
        assert [l.to_dict() for l in e2.layers[4:]] == [l.to_dict() for l in dae.layers[1:]]

    def test_unknown_name_lists_known(self):
        with pytest.raises(SpecError, match="e2car_ref"):
            mg.reference_spec("vgg")

    @pytest.mark.parametrize("name", mg.REFERENCE_NAMES)
    def test_json_round_trip(self, name):
        spec = mg.reference_spec(name, seed=5)
        assert ModelSpec.from_json(spec.to_json()) == spec


class TestBuild:
    def test_same_seed_identical_params(self):
        a = mg.build(mg.reference_spec("e2car_ref", seed=3))
        b = mg.build(mg.reference_spec("e2car_ref", seed=3))
        assert mg.weights_to_bytes(a.params) == mg.weights_to_bytes(b.params)
        c = mg.build(mg.reference_spec("e2car_ref", seed=4))
        assert mg.weights_to_bytes(a.params) != mg.weights_to_bytes(c.params)

    def test_he_scale(self):
        m = mg.build(mg.reference_spec("dae_ref"))
        w = m.params[1][0]
        assert abs(w.std() - np.sqrt(2 / (32 * 5))) < 0.01
        assert all(np.all(b == 0) for _, b in m.params.values())

    def test_channel_mismatch_after_concat(self):
        spec = mg.reference_spec("e2car_ref")
        bad = spec.layers[:2] + (mg.conv(16, 16, 1),) + spec.layers[3:]
        with pytest.raises(SpecError) as info:
            mg.build(ModelSpec("bad", "one_d", (1, 800), bad))
        assert info.value.path == "layers[2]"
        assert "48" in str(info.value)

    def test_error_inside_branch_names_path(self):
        branch = mg.branch_concat([mg.residual_block(4, 3)], [mg.conv(5, 4, 3)])
        spec = ModelSpec("b", "one_d", (4, 32), (branch, mg.conv(8, 4, 1)))
        with pytest.raises(SpecError) as info:
            mg.build(spec)
        assert info.value.path == "layers[0].branches[1][0]"

    def test_output_must_match_input(self):
        with pytest.raises(SpecError, match="differs"):
            mg.build(ModelSpec("x", "one_d", (1, 40), (mg.conv(1, 2, 3),)))

    def test_two_d_needs_unit_height(self):
        layer = mg.LayerSpec("conv", mg.ConvGeometry((3, 3), (1, 1), (1, 1), 1, 1))
        with pytest.raises(SpecError, match="unit height"):
            mg.build(ModelSpec("x", "two_d", (1, 1, 40), (layer,)))


class TestForward:
    def test_zero_input_zero_output(self, models):
        for m in models.values():
            assert np.all(m.forward(np.zeros((1, 800))) == 0)

    def test_pure(self, models, rng):
        x = rng.uniform(0, 1, (1, 800))
        m = models["e2car_ref"]
        assert m.forward(x).tobytes() == m.forward(x).tobytes()

    def test_batched_matches_single(self, models, rng):
        x = rng.uniform(0, 1, (3, 1, 800)).astype(np.float32)
        m = models["e2car_ref"]
        yb = m.forward(x)
        for n in range(3):
            np.testing.assert_allclose(yb[n], m.forward(x[n]), atol=1e-6)

    def test_dae_finite_on_segments(self, models, rng):
        y = models["dae_ref"].forward(rng.uniform(0, 1, (100, 1, 800)))
        assert np.all(np.isfinite(y))

    def test_wrong_input_shape(self, models):
        with pytest.raises(ShapeError):
            models["cnn_ref"].forward(np.zeros((1, 799)))

    def test_branch_removal_changes_output(self, rng):
        spec = mg.reference_spec("e2car_ref")
        m = mg.build(spec)
        branch = spec.layers[1]
        cut = mg.LayerSpec("branch_concat", branches=((mg.activation("linear"),),) + branch.branches[1:])
        cut_spec = ModelSpec("cut", "one_d", (1, 800), (spec.layers[0], cut) + spec.layers[2:])
        params = {k: m.params[k] for k in (0,)}
        for new, old in enumerate(range(5, len(m.params)), start=1):
            params[new] = m.params[old]
        cut_model = mg.Model(cut_spec, params)
        x = rng.uniform(0, 1, (1, 800))
        assert np.max(np.abs(cut_model.forward(x) - m.forward(x))) > 1e-6


class TestWeightsFile:
    def test_round_trip_byte_identical(self, tmp_path, models, rng):
        m = models["e2car_ref"]
        path = tmp_path / "w.e2cw"
        mg.save_weights(m, path)
        m2 = mg.load_weights(m.spec, path)
        x = rng.uniform(0, 1, (10, 1, 800))
        assert m2.forward(x).tobytes() == m.forward(x).tobytes()

    def test_header_layout(self, models):
        raw = mg.weights_to_bytes(models["cnn_ref"].params)
        assert raw[:4] == b"E2CW"
        assert int.from_bytes(raw[4:6], "little") == 1
        assert int.from_bytes(raw[6:8], "little") == 4
        assert int.from_bytes(raw[8:10], "little") == 0
        assert raw[10] == 3
        assert [int.from_bytes(raw[11 + 4 * i : 15 + 4 * i], "little") for i in range(3)] == [16, 1, 5]

    @pytest.mark.parametrize("cut", [3, 9, 30, -1])
    def test_truncated(self, models, cut):
        raw = mg.weights_to_bytes(models["cnn_ref"].params)
        with pytest.raises(WeightsFileError):
            mg.weights_from_bytes(raw[:cut])

    def test_bad_magic_and_trailing(self, models):
        raw = mg.weights_to_bytes(models["cnn_ref"].params)
        with pytest.raises(WeightsFileError, match="magic"):
            mg.weights_from_bytes(b"XXXX" + raw[4:])
        with pytest.raises(WeightsFileError, match="trailing"):
            mg.weights_from_bytes(raw + b"\0")

    def test_mismatched_spec_lists_shapes(self, tmp_path, models):
        path = tmp_path / "cnn.e2cw"
        mg.save_weights(models["cnn_ref"], path)
        with pytest.raises(WeightsFileError) as info:
            mg.load_weights(mg.reference_spec("resnet_ref"), path)
        assert "expected" in str(info.value) and "found" in str(info.value)


class TestLoadSpec:
    def test_path_and_name(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(mg.reference_spec("cnn_ref").to_json())
        assert mg.load_spec(str(p)) == mg.reference_spec("cnn_ref")
        assert mg.load_spec("cnn_ref", seed=9).seed == 9

    def test_unknown(self):
        with pytest.raises(SpecError, match="cnn_ref, resnet_ref"):
            mg.load_spec("nope")
