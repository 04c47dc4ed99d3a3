"""
Tests for the filter-bank CNN parameter calculator.

Covers:
- symbolic parameter formulas per layer
- evaluated counts and output shapes
- the pooling-stride flag and input validation
"""

import pytest

from app.models.errors import ParameterError
from app.utils.arch_utils import MSFBCNN, Monomial, arch_calc, mono


def by_layer(report):
    return {layer["layer"]: layer for layer in report.layers}


class TestFormulas:

    def test_parameter_formulas(self):
        assert MSFBCNN.param_formulas() == {
            "Timeconv1": "64F_T",
            "Timeconv2": "40F_T",
            "Timeconv3": "26F_T",
            "Timeconv4": "16F_T",
            "BatchNorm1": "2F_T",
            "Spatialconv": "4CF_TF_S",
            "BatchNorm2": "2F_S",
            "Dense": "F_S(T/15)N_C",
        }

    def test_monomial_rendering(self):
        assert str(mono(1)) == "1"
        assert str(Monomial(3, (("C", 2),))) == "3C^2"

    def test_monomial_evaluation(self):
        assert mono(4, "C", "F_T").evaluate({"C": 2, "F_T": 5}) == 40


class TestArchCalc:

    def test_time_convolution_count(self):
        layers = by_layer(arch_calc(MSFBCNN, C=44, T=1125, F_T=10, F_S=10, N_C=4))
        assert layers["Timeconv1"]["params"] == 640
        assert layers["Timeconv4"]["params"] == 160

    def test_spatial_convolution_count(self):
        layers = by_layer(arch_calc(MSFBCNN, C=44, T=1125, F_T=10, F_S=10, N_C=4))
        assert layers["Spatialconv"]["params"] == 17600
        assert layers["Spatialconv"]["output"] == (10, 1125, 1)

    def test_dense_layer(self):
        layers = by_layer(arch_calc(MSFBCNN, C=44, T=1125, F_T=10, F_S=10, N_C=4))
        assert layers["Dense"]["params"] == 10 * 75 * 4
        assert layers["Dense"]["output"] == (4,)
        assert layers["AveragePool"]["output"] == (10, 75, 1)

    def test_total_is_sum_of_layers(self):
        report = arch_calc(MSFBCNN, C=22, T=750, F_T=8, F_S=16, N_C=2)
        assert report.total_params == sum(layer["params"] for layer in report.layers)
        assert not report.flagged and report.notes == []

    def test_parameter_free_layers(self):
        layers = by_layer(arch_calc(MSFBCNN, C=4, T=30, F_T=1, F_S=1, N_C=2))
        for name in ("Input", "Reshape", "Concatenate", "Square", "AveragePool", "Log", "Dropout"):
            assert layers[name]["params"] == 0
            assert layers[name]["params_formula"] == ""

    def test_indivisible_length_is_flagged(self):
        report = arch_calc(MSFBCNN, C=4, T=100, F_T=2, F_S=2, N_C=2)
        assert report.flagged
        assert "floored to 6" in report.notes[0]
        assert by_layer(report)["Log"]["output"] == (2, 6, 1)

    @pytest.mark.parametrize("field", ["C", "T", "F_T", "F_S", "N_C"])
    def test_non_positive_input(self, field):
        kwargs = {"C": 4, "T": 30, "F_T": 2, "F_S": 2, "N_C": 2, field: 0}
        with pytest.raises(ParameterError, match=field):
            arch_calc(MSFBCNN, **kwargs)
