"""SPICE-subset netlist parser, circuit data model and featurization.

The accepted deck format is the classic card style: the first line is the
title, followed by element cards, ``.model`` cards, ``*`` comments and an
optional ``.end``.  Everything is case-insensitive and engineering suffixes
(k, m, u, n, p, f, meg, g, t) are understood.

Supported element cards::

    R<name> n1 n2 value          resistor (ohm, > 0)
    C<name> n1 n2 value          capacitor (farad, > 0; open in DC)
    L<name> n1 n2 value          inductor (henry, > 0; short in DC)
    V<name> n+ n- [DC] value     independent voltage source (volt)
    I<name> n+ n- [DC] value     independent current source (ampere)
    D<name> anode cathode model  diode
    Q<name> c b e model          BJT, bulk-free 3-terminal
    M<name> d g s model          MOSFET, bulk tied to source

Model cards: ``.model NAME TYPE key=value ...`` with TYPE one of
D, NPN, PNP, NMOS, PMOS (parentheses around the key=value list optional).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "NetlistError",
    "ElementKind",
    "Element",
    "Netlist",
    "FeatureVector",
    "parse_netlist",
    "serialize_netlist",
    "extract_features",
    "perturb_netlist",
    "parse_value",
]


class NetlistError(ValueError):
    """Raised for syntax or consistency errors; carries the 1-based line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ElementKind(Enum):
    RESISTOR = "R"
    CAPACITOR = "C"
    INDUCTOR = "L"
    VSOURCE = "V"
    ISOURCE = "I"
    DIODE = "D"
    BJT = "Q"
    MOSFET = "M"


# element letter -> (kind, number of terminal tokens, takes model name)
_CARD_SHAPE = {
    "r": (ElementKind.RESISTOR, 2, False),
    "c": (ElementKind.CAPACITOR, 2, False),
    "l": (ElementKind.INDUCTOR, 2, False),
    "v": (ElementKind.VSOURCE, 2, False),
    "i": (ElementKind.ISOURCE, 2, False),
    "d": (ElementKind.DIODE, 2, True),
    "q": (ElementKind.BJT, 3, True),
    "m": (ElementKind.MOSFET, 3, True),
}

_MODEL_TYPES = {
    "d": ElementKind.DIODE,
    "npn": ElementKind.BJT,
    "pnp": ElementKind.BJT,
    "nmos": ElementKind.MOSFET,
    "pmos": ElementKind.MOSFET,
}

_SUFFIX = {
    "t": 1e12,
    "g": 1e9,
    "meg": 1e6,
    "k": 1e3,
    "m": 1e-3,
    "u": 1e-6,
    "n": 1e-9,
    "p": 1e-12,
    "f": 1e-15,
    "mil": 25.4e-6,
}

_VALUE_RE = re.compile(
    r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?)(meg|mil|[tgkmunpf])?([a-z]*)$"
)


def parse_value(token: str) -> float:
    """Convert a SPICE number token (``2.2k``, ``1meg``, ``10u``) to a float.

    Trailing unit letters after the suffix are ignored, as in SPICE.
    """
    m = _VALUE_RE.match(token.strip().lower())
    if m is None:
        raise ValueError(f"not a SPICE number: {token!r}")
    base = float(m.group(1))
    suffix = m.group(2)
    return base * _SUFFIX[suffix] if suffix else base


@dataclass(frozen=True)
class Element:
    """One circuit element.

    ``value`` is set for R/C/L/V/I (SI units), ``model`` for D/Q/M.
    Terminal order is (n1, n2), (n+, n-), (anode, cathode), (c, b, e) or
    (d, g, s).
    """

    name: str
    kind: ElementKind
    terminals: tuple[str, ...]
    value: float | None = None
    model: str | None = None


@dataclass(frozen=True)
class Netlist:
    """A parsed deck. Immutable; safe to share across threads."""

    title: str
    nodes: tuple[str, ...]
    elements: tuple[Element, ...]
    model_cards: dict[str, dict[str, float | str]] = field(default_factory=dict)

    def elements_of(self, kind: ElementKind) -> list[Element]:
        return [e for e in self.elements if e.kind == kind]

    def count(self, kind: ElementKind) -> int:
        return sum(1 for e in self.elements if e.kind == kind)


@dataclass(frozen=True)
class FeatureVector:
    """The seven netlist descriptors used as surrogate-model input."""

    n_nodes: int
    n_mna_equations: int
    n_capacitors: int
    n_resistors: int
    n_vsources: int
    n_bjt: int
    n_mosfet: int

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.n_nodes,
                self.n_mna_equations,
                self.n_capacitors,
                self.n_resistors,
                self.n_vsources,
                self.n_bjt,
                self.n_mosfet,
            ],
            dtype=float,
        )


def _parse_model_card(tokens: list[str], lineno: int) -> tuple[str, dict]:
    if len(tokens) < 3:
        raise NetlistError(".model card needs a name and a type", lineno)
    name = tokens[1]
    rest = " ".join(tokens[2:])
    # strip optional parentheses around the parameter list
    mtype_match = re.match(r"^(\w+)\s*\(?(.*?)\)?$", rest.strip())
    if mtype_match is None:
        raise NetlistError("malformed .model card", lineno)
    mtype = mtype_match.group(1)
    if mtype not in _MODEL_TYPES:
        raise NetlistError(f"unknown model type {mtype!r}", lineno)
    params: dict[str, float | str] = {"type": mtype}
    body = mtype_match.group(2).replace("=", " = ")
    toks = body.split()
    i = 0
    while i < len(toks):
        if i + 2 >= len(toks) or toks[i + 1] != "=":
            raise NetlistError("model parameters must be key=value pairs", lineno)
        try:
            params[toks[i]] = parse_value(toks[i + 2])
        except ValueError as exc:
            raise NetlistError(str(exc), lineno) from exc
        i += 3
    return name, params


def _parse_element_card(tokens: list[str], lineno: int) -> Element:
    name = tokens[0]
    shape = _CARD_SHAPE.get(name[0])
    if shape is None:
        raise NetlistError(f"unknown element type {name!r}", lineno)
    kind, n_terms, takes_model = shape
    rest = tokens[1:]
    if len(rest) < n_terms + 1:
        raise NetlistError(f"{name}: expected {n_terms} nodes and a value", lineno)
    terminals = tuple(rest[:n_terms])
    tail = rest[n_terms:]
    if takes_model:
        if len(tail) != 1:
            raise NetlistError(f"{name}: expected a single model name", lineno)
        return Element(name, kind, terminals, model=tail[0])
    # sources accept an optional DC keyword before the value
    if kind in (ElementKind.VSOURCE, ElementKind.ISOURCE) and tail and tail[0] == "dc":
        tail = tail[1:]
    if len(tail) != 1:
        raise NetlistError(f"{name}: expected a single value", lineno)
    try:
        value = parse_value(tail[0])
    except ValueError as exc:
        raise NetlistError(str(exc), lineno) from exc
    if kind in (ElementKind.RESISTOR, ElementKind.CAPACITOR, ElementKind.INDUCTOR):
        if value <= 0:
            raise NetlistError(f"{name}: value must be strictly positive", lineno)
    return Element(name, kind, terminals, value=value)


def _check_connectivity(nodes: tuple[str, ...], elements: tuple[Element, ...]) -> None:
    parent = {n: n for n in nodes}

    def find(a: str) -> str:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in elements:
        root = find(e.terminals[0])
        for t in e.terminals[1:]:
            parent[find(t)] = root
    ground_root = find("0")
    stranded = [n for n in nodes if find(n) != ground_root]
    if stranded:
        raise NetlistError(
            f"nodes {sorted(stranded)} have no path to ground", None
        )


def parse_netlist(text: str) -> Netlist:
    """Parse a deck into a :class:`Netlist`.

    Raises :class:`NetlistError` (with line number where applicable) on
    syntax errors, duplicate element names, a missing ground node or
    components with no path to ground.
    """
    if not text or not text.strip():
        raise NetlistError("empty input")
    lines = text.splitlines()
    title = lines[0].strip()
    if not title or title.startswith("."):
        raise NetlistError("first line must be a title", 1)

    elements: list[Element] = []
    model_cards: dict[str, dict] = {}
    seen_names: set[str] = set()
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.split(";")[0].strip().lower()
        if not line or line.startswith("*"):
            continue
        if line == ".end":
            break
        tokens = line.split()
        if tokens[0].startswith("."):
            if tokens[0] == ".model":
                name, params = _parse_model_card(tokens, lineno)
                if name in model_cards:
                    raise NetlistError(f"duplicate model {name!r}", lineno)
                model_cards[name] = params
                continue
            raise NetlistError(f"unsupported directive {tokens[0]!r}", lineno)
        elem = _parse_element_card(tokens, lineno)
        if elem.name in seen_names:
            raise NetlistError(f"duplicate element name {elem.name!r}", lineno)
        seen_names.add(elem.name)
        elements.append(elem)

    nodes: list[str] = []
    known: set[str] = set()
    for e in elements:
        for t in e.terminals:
            if t not in known:
                known.add(t)
                nodes.append(t)
    if "0" not in known:
        raise NetlistError("no ground node '0' in deck")

    for e in elements:
        if e.model is not None:
            card = model_cards.get(e.model)
            if card is None:
                raise NetlistError(f"{e.name}: undefined model {e.model!r}")
            if _MODEL_TYPES[str(card["type"])] != e.kind:
                raise NetlistError(
                    f"{e.name}: model {e.model!r} has incompatible type"
                )

    netlist = Netlist(title, tuple(nodes), tuple(elements), model_cards)
    _check_connectivity(netlist.nodes, netlist.elements)
    return netlist


def _fmt(v: float) -> str:
    return repr(float(v))


def serialize_netlist(netlist: Netlist) -> str:
    """Emit a canonical deck that reparses to a structurally equal Netlist."""
    out = [netlist.title]
    for e in netlist.elements:
        parts = [e.name, *e.terminals]
        if e.model is not None:
            parts.append(e.model)
        else:
            parts.append(_fmt(e.value))
        out.append(" ".join(parts))
    for name, card in netlist.model_cards.items():
        params = " ".join(
            f"{k}={_fmt(v)}" for k, v in card.items() if k != "type"
        )
        out.append(f".model {name} {card['type']} {params}".rstrip())
    out.append(".end")
    return "\n".join(out) + "\n"


def extract_features(netlist: Netlist) -> FeatureVector:
    """Count the seven descriptors.

    MNA equation convention: one equation per non-ground node plus one
    branch-current equation per voltage source and per inductor.
    """
    n_nodes = sum(1 for n in netlist.nodes if n != "0")
    n_v = netlist.count(ElementKind.VSOURCE)
    n_l = netlist.count(ElementKind.INDUCTOR)
    return FeatureVector(
        n_nodes=n_nodes,
        n_mna_equations=n_nodes + n_v + n_l,
        n_capacitors=netlist.count(ElementKind.CAPACITOR),
        n_resistors=netlist.count(ElementKind.RESISTOR),
        n_vsources=n_v,
        n_bjt=netlist.count(ElementKind.BJT),
        n_mosfet=netlist.count(ElementKind.MOSFET),
    )


def perturb_netlist(base: Netlist, variation: float, seed: int) -> Netlist:
    """Scale every resistor by an independent Normal(1, variation²) draw.

    Draws are reproducible from ``seed``; non-positive samples are redrawn
    so resistances stay strictly positive. All other elements are copied
    unchanged.
    """
    if not 0 < variation < 1:
        raise ValueError(f"variation must be in (0, 1), got {variation}")
    if base.count(ElementKind.RESISTOR) < 1:
        raise ValueError("netlist has no resistors to perturb")
    rng = np.random.default_rng(seed)
    new_elements = []
    for e in base.elements:
        if e.kind == ElementKind.RESISTOR:
            g = rng.normal(1.0, variation)
            while g <= 0.0:
                g = rng.normal(1.0, variation)
            e = Element(e.name, e.kind, e.terminals, value=e.value * g)
        new_elements.append(e)
    return Netlist(base.title, base.nodes, tuple(new_elements), base.model_cards)
