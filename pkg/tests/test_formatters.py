# tests/test_formatters.py
import json
import math

import numpy as np

from agepop._version import SCHEMA_VERSION
from agepop.serializers import StabilityVerdict
from agepop.utils.formatters import csv_text, density_header, dumps, make_envelope, normalize


def test_normalize_fixes_significant_digits():
    assert normalize(1.0 / 3.0) == 0.333333333333
    assert normalize(np.float64(2.0) / 3.0) == 0.666666666667


def test_normalize_non_finite_becomes_null():
    assert normalize([math.nan, math.inf, 1.5]) == [None, None, 1.5]


def test_normalize_plain_data():
    out = normalize({"a": np.arange(3), "flag": np.bool_(True), "v": StabilityVerdict.CRITICAL})
    assert out == {"a": [0, 1, 2], "flag": True, "v": "Critical"}


def test_envelope_puts_schema_and_command_first():
    env = make_envelope("lambda0", {"lambda0": 0.1, "residual": 0.0})
    assert list(env) == ["schema_version", "command", "lambda0", "residual"]
    assert env["schema_version"] == SCHEMA_VERSION
    assert json.loads(dumps(env)) == env


def test_csv_text_formats_floats():
    text = csv_text(["t", "x"], [(0.0, 1.0 / 3.0), (0.5, 2)])
    assert text.splitlines() == ["t,x", "0,0.333333333333", "0.5,2"]


def test_density_header_is_age_major():
    assert density_header(2, 1) == ["t", "u[0][0]", "u[0][1]", "u[1][0]", "u[1][1]"]
