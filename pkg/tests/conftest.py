import numpy as np
import pytest

from rpmnl.data import ChoiceDataset, ModelSpec
from rpmnl.synthetic import DgpConfig, generate

CONSTANTS_ONLY = """
[asc_M]
variable = constant
alternative = M
[asc_MM]
variable = constant
alternative = MM
"""

HETERO_SPEC = CONSTANTS_ONLY + """
[x1_M]
variable = x1
alternative = M
[x2_MM]
variable = x2
alternative = MM
[x3_M]
variable = x3
alternative = M
[x3_MM]
variable = x3
alternative = MM
[c_M]
variable = c
alternative = M
random = normal
mean_shift = z
variance_shift = w
"""

HETERO_TRUTH = {
    "asc_M": 0.4, "asc_MM": -0.6, "x1_M": 0.8, "x2_MM": -0.7, "x3_M": 0.5, "x3_MM": -0.4,
    "c_M": -0.8, "mean:c_M:z": 0.9, "var:c_M:w": 0.4, "sd:c_M": 1.2,
}

HETERO_COVARIATES = {
    "x1": ("bernoulli", 0.5), "x2": ("bernoulli", 0.4), "x3": ("bernoulli", 0.3),
    "z": ("bernoulli", 0.5), "w": ("bernoulli", 0.5), "c": ("normal", 0.0, 1.0),
}


@pytest.fixture
def hetero_spec():
    return ModelSpec.from_config_text(HETERO_SPEC)


@pytest.fixture
def hetero_sample(hetero_spec):
    return generate(DgpConfig(hetero_spec, HETERO_TRUTH, HETERO_COVARIATES, 300, seed=11))


def shares_dataset(counts):
    """Dataset with the given outcome counts and a single dummy covariate."""
    outcomes = np.repeat([0, 1, 2], counts)
    n = outcomes.size
    return ChoiceDataset([f"o{i}" for i in range(n)], outcomes, {"dummy": np.arange(n) % 2})


ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail, elapsed, limit):
    """Print and remember one pass/fail line per acceptance criterion."""
    within = elapsed < limit
    status = "PASS" if ok and within else "FAIL"
    line = f"criterion {number:>2} {status}: {title} | {detail} | {elapsed:.2f}s (limit {limit:g}s)"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok and within


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
