"""Bundled desk-scale benchmark decks."""

from importlib import resources

from .netlist import Netlist, parse_netlist

__all__ = ["bundled_circuit_names", "load_bundled", "bundled_circuits"]

_NAMES = (
    "divider",
    "diode_bridge",
    "diode_chain",
    "bjt_inverter",
    "bjt_latch",
    "mos_chain",
    "mirror_bias",
    "schmitt_ecl",
    "schmitt_slow",
    "schmitt_fast",
    "schmitt_pnp",
    "comparator_fb",
    "schmitt_cascade",
)

# circuits whose DC problem is nonlinear
NONLINEAR = tuple(n for n in _NAMES if n != "divider")

# high-gain decks whose default-parameter run is expensive (>= 100 NR
# iterations); the optimization benchmarks run on this subset
HARD = (
    "schmitt_ecl",
    "schmitt_slow",
    "schmitt_fast",
    "schmitt_pnp",
    "comparator_fb",
)

# Monte-Carlo testbeds
MC_TESTBEDS = ("diode_bridge", "bjt_inverter")


def bundled_circuit_names() -> tuple[str, ...]:
    return _NAMES


def load_bundled(name: str) -> Netlist:
    if name not in _NAMES:
        raise KeyError(f"no bundled circuit named {name!r}")
    text = (
        resources.files("boapta.circuits").joinpath(f"{name}.cir").read_text()
    )
    return parse_netlist(text)


def bundled_circuits() -> list[tuple[str, Netlist]]:
    return [(name, load_bundled(name)) for name in _NAMES]
