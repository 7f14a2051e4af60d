"""Strict TOML reader/writer for reaction network definitions.

Layout::

    [species]
    names = ["A", "B"]
    molecular_weights = [1.0, 1.0]   # optional, defaults to 1
    conserved_sum = true              # optional
    thermo_state = false              # optional; T and rho enter the state

    [[reaction]]
    reactants = { A = 1 }
    products = { B = 1 }
    rate = { type = "arrhenius", A = 1e10, Ea = 1e5 }

    [thermo]                          # optional
    cp = 1.0
    enthalpies = [0.0, -100.0]

Rate types: ``constant`` (k), ``arrhenius`` (A, Ea), ``reaclib`` (a = [7 floats]).
Unknown sections or keys raise InvalidNetwork.
"""
from __future__ import annotations

import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import InvalidNetwork
from .kinetics import Arrhenius, Constant, ReaclibFit, Reaction, ReactionNetwork, ThermoModel

_TOP_KEYS = {"species", "reaction", "thermo"}
_SPECIES_KEYS = {"names", "molecular_weights", "conserved_sum", "thermo_state", "sum_tol"}
_REACTION_KEYS = {"reactants", "products", "rate"}
_THERMO_KEYS = {"cp", "enthalpies"}
_RATE_PARAMS = {"constant": {"k"}, "arrhenius": {"A", "Ea"}, "reaclib": {"a"}}


def _strict(table: dict, allowed: set, where: str, required: set = frozenset()):
    unknown = set(table) - allowed
    if unknown:
        raise InvalidNetwork(f"unknown key(s) {sorted(unknown)} in {where}")
    missing = set(required) - set(table)
    if missing:
        raise InvalidNetwork(f"missing key(s) {sorted(missing)} in {where}")


def _rate(spec: dict, where: str):
    if not isinstance(spec, dict) or "type" not in spec:
        raise InvalidNetwork(f"{where}: rate must be a table with a 'type'")
    kind = spec["type"]
    if kind not in _RATE_PARAMS:
        raise InvalidNetwork(f"{where}: unknown rate type {kind!r}")
    params = {k: v for k, v in spec.items() if k != "type"}
    _strict(params, _RATE_PARAMS[kind], f"{where}.rate", _RATE_PARAMS[kind])
    if kind == "constant":
        return Constant(float(params["k"]))
    if kind == "arrhenius":
        return Arrhenius(float(params["A"]), float(params["Ea"]))
    return ReaclibFit(tuple(params["a"]))


def parse_network(data: dict) -> ReactionNetwork:
    _strict(data, _TOP_KEYS, "network file", {"species"})
    sp = data["species"]
    _strict(sp, _SPECIES_KEYS, "[species]", {"names"})
    names = list(sp["names"])
    index = {n: i for i, n in enumerate(names)}

    reactions = []
    for i, rx in enumerate(data.get("reaction", [])):
        where = f"[[reaction]] #{i}"
        _strict(rx, _REACTION_KEYS, where, {"reactants", "rate"})
        stoich = []
        for side in ("reactants", "products"):
            coeffs = {}
            for name, c in rx.get(side, {}).items():
                if name not in index:
                    raise InvalidNetwork(f"{where}: unknown species {name!r}")
                coeffs[index[name]] = float(c)
            stoich.append(coeffs)
        reactions.append(Reaction(stoich[0], stoich[1], _rate(rx["rate"], where)))

    thermo = None
    if "thermo" in data:
        _strict(data["thermo"], _THERMO_KEYS, "[thermo]", _THERMO_KEYS)
        thermo = ThermoModel(float(data["thermo"]["cp"]), tuple(data["thermo"]["enthalpies"]))

    return ReactionNetwork(
        names,
        reactions,
        molecular_weights=sp.get("molecular_weights"),
        has_thermo_state=bool(sp.get("thermo_state", False)),
        conserved_sum=bool(sp.get("conserved_sum", False)),
        sum_tol=float(sp.get("sum_tol", 1e-9)),
        thermo=thermo,
    )


def load_network(path) -> ReactionNetwork:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise InvalidNetwork(f"{path}: {exc}") from exc
    return parse_network(data)


def _fmt(v) -> str:
    return repr(float(v))


def dump_network(net: ReactionNetwork) -> str:
    """Serialize a network back to the TOML layout above."""
    names = net.species_names
    lines = ["[species]",
             "names = [" + ", ".join(f'"{n}"' for n in names) + "]",
             "molecular_weights = [" + ", ".join(_fmt(m) for m in net.molecular_weights) + "]",
             f"conserved_sum = {str(net.conserved_sum).lower()}",
             f"thermo_state = {str(net.has_thermo_state).lower()}",
             f"sum_tol = {_fmt(net.sum_tol)}", ""]
    for r in net.reactions:
        lines.append("[[reaction]]")
        for side, coeffs in (("reactants", r.reactants), ("products", r.products)):
            body = ", ".join(f"{names[i]} = {_fmt(c)}" for i, c in sorted(coeffs.items()))
            lines.append(f"{side} = {{ {body} }}")
        law = r.rate
        if isinstance(law, Constant):
            rate = f'type = "constant", k = {_fmt(law.k)}'
        elif isinstance(law, Arrhenius):
            rate = f'type = "arrhenius", A = {_fmt(law.A)}, Ea = {_fmt(law.Ea)}'
        else:
            rate = 'type = "reaclib", a = [' + ", ".join(_fmt(a) for a in law.a) + "]"
        lines += [f"rate = {{ {rate} }}", ""]
    if net.thermo is not None:
        lines += ["[thermo]", f"cp = {_fmt(net.thermo.cp)}",
                  "enthalpies = [" + ", ".join(_fmt(h) for h in net.thermo.enthalpies) + "]", ""]
    return "\n".join(lines)
