import numpy as np
import pytest

from boapta.netlist import parse_netlist

DIVIDER = """divider
V1 1 0 DC 1
R1 1 2 1k
R2 2 0 1k
.end
"""

DIODE_SERIES = """diode series
V1 1 0 DC 1
R1 1 2 1k
D1 2 0 DM
.model DM D IS=1e-14 N=1
.end
"""


@pytest.fixture
def divider():
    return parse_netlist(DIVIDER)


@pytest.fixture
def diode_series():
    return parse_netlist(DIODE_SERIES)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
