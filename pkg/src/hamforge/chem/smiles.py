"""SMILES reader for the organic subset plus bracket atoms.

Supported: organic-subset and aromatic atoms, bracket atoms with element,
tetrahedral chirality (@/@@), hydrogen count, charge and atom class, bond
symbols ``- = # : / \\``, branches, and ring closures (``0-9`` and ``%nn``).
Isotopes, wildcards, disconnected fragments and reactions raise
:class:`UnsupportedFeature`.
"""
from __future__ import annotations

import re

from ..exceptions import (
    SmilesSyntaxError,
    UnbalancedRingBond,
    UnknownElement,
    UnsupportedFeature,
)
from .elements import (
    AROMATIC_BRACKET,
    AROMATIC_ORGANIC,
    DEFAULT_VALENCES,
    ORGANIC_SUBSET,
    is_element,
)
from .graph import BondOrder, BondStereo, Chirality, MoleculeGraph, build_molecule

_BOND_SYMBOLS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE,
                 ":": BondOrder.AROMATIC, "/": BondOrder.SINGLE, "\\": BondOrder.SINGLE}
_BRACKET = re.compile(
    r"(?P<iso>\d+)?"
    r"(?P<sym>[A-Z][a-z]?|se|as|te|[bcnops]|\*)"
    r"(?P<chiral>@@|@(?:TH|AL|SP|TB|OH)\d*|@)?"
    r"(?P<h>H\d*)?"
    r"(?P<charge>\+\+|--|[+-]\d*)?"
    r"(?P<cls>:\d+)?$"
)


class _Atom:
    __slots__ = ("element", "aromatic", "charge", "hcount", "chirality", "bracket")

    def __init__(self, element, aromatic, charge=0, hcount=None, chirality=Chirality.NONE, bracket=False):
        self.element = element
        self.aromatic = aromatic
        self.charge = charge
        self.hcount = hcount
        self.chirality = chirality
        self.bracket = bracket


def _parse_bracket(body: str, offset: int) -> _Atom:
    m = _BRACKET.match(body)
    if m is None:
        raise SmilesSyntaxError(f"bad bracket atom [{body}]", offset)
    if m.group("iso"):
        raise UnsupportedFeature(f"isotope in [{body}] at offset {offset}")
    sym = m.group("sym")
    if sym == "*":
        raise UnsupportedFeature(f"wildcard atom at offset {offset}")
    aromatic = sym in AROMATIC_BRACKET and sym[0].islower()
    element = sym.capitalize() if aromatic else sym
    if not is_element(element):
        raise UnknownElement(f"unknown element {sym!r} at offset {offset}")
    chiral = m.group("chiral")
    if chiral is None:
        chirality = Chirality.NONE
    elif chiral == "@":
        chirality = Chirality.CCW
    elif chiral == "@@":
        chirality = Chirality.CW
    else:
        raise UnsupportedFeature(f"chirality class {chiral} at offset {offset}")
    h = m.group("h")
    hcount = 0 if h is None else (int(h[1:]) if len(h) > 1 else 1)
    ch = m.group("charge")
    if ch is None:
        charge = 0
    elif ch in ("++", "--"):
        charge = 2 if ch == "++" else -2
    else:
        sign = 1 if ch[0] == "+" else -1
        charge = sign * (int(ch[1:]) if len(ch) > 1 else 1)
    return _Atom(element, aromatic, charge, hcount, chirality, bracket=True)


def _implicit_hydrogens(atom: _Atom, bond_sum: float, n_bonds: int) -> int:
    if atom.bracket:
        return atom.hcount
    valences = DEFAULT_VALENCES.get(atom.element)
    if valences is None:
        return 0
    if atom.aromatic:
        # one valence unit goes to the aromatic pi system
        extra = sum(bond_sum) - n_bonds
        return max(0, valences[0] - n_bonds - int(round(extra)) - 1)
    total = sum(bond_sum)
    for v in valences:
        if v >= total:
            return int(v - total)
    return 0


def parse_smiles(text: str, name: str = "") -> MoleculeGraph:
    """Parse a SMILES string into a featurized :class:`MoleculeGraph`.

    Atoms are numbered in order of first appearance, so ``smiles_order`` is
    the identity permutation.
    """
    if not text or not text.strip():
        raise SmilesSyntaxError("empty SMILES", 0)
    text = text.strip()
    try:
        text.encode("ascii")
    except UnicodeEncodeError:
        raise SmilesSyntaxError("non-ASCII character", next(i for i, c in enumerate(text) if ord(c) > 127))

    atoms: list[_Atom] = []
    bonds: list[list] = []  # [i, j, order, symbol]
    branch_stack: list[int] = []
    rings: dict[int, tuple[int, str | None, int]] = {}
    prev: int | None = None
    pending: str | None = None
    pending_at = 0
    i = 0
    n = len(text)

    def add_bond(a, b, sym, at):
        if a == b:
            raise SmilesSyntaxError("atom bonded to itself", at)
        for bd in bonds:
            if {bd[0], bd[1]} == {a, b}:
                raise SmilesSyntaxError("duplicate bond", at)
        if sym is None:
            order = BondOrder.AROMATIC if atoms[a].aromatic and atoms[b].aromatic else BondOrder.SINGLE
        else:
            order = _BOND_SYMBOLS[sym]
        bonds.append([a, b, order, sym])

    while i < n:
        c = text[i]
        if c == "(":
            if prev is None:
                raise SmilesSyntaxError("branch before any atom", i)
            if pending is not None:
                raise SmilesSyntaxError("bond symbol before branch", i)
            branch_stack.append(prev)
            i += 1
            continue
        if c == ")":
            if not branch_stack:
                raise SmilesSyntaxError("unmatched ')'", i)
            if pending is not None:
                raise SmilesSyntaxError("dangling bond symbol", pending_at)
            prev = branch_stack.pop()
            i += 1
            continue
        if c in _BOND_SYMBOLS:
            if pending is not None:
                raise SmilesSyntaxError("two consecutive bond symbols", i)
            if prev is None:
                raise SmilesSyntaxError("bond symbol before any atom", i)
            pending, pending_at = c, i
            i += 1
            continue
        if c == "$":
            raise UnsupportedFeature(f"quadruple bond at offset {i}")
        if c == ".":
            raise UnsupportedFeature(f"multi-fragment SMILES ('.') at offset {i}")
        if c == ">":
            raise UnsupportedFeature(f"reaction SMILES at offset {i}")
        if c == "*":
            raise UnsupportedFeature(f"wildcard atom at offset {i}")
        if c.isdigit() or c == "%":
            if prev is None:
                raise SmilesSyntaxError("ring closure before any atom", i)
            if c == "%":
                digits = text[i + 1:i + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise SmilesSyntaxError("'%' must be followed by two digits", i)
                num = int(digits)
                width = 3
            else:
                num = int(c)
                width = 1
            if num in rings:
                other, sym, at = rings.pop(num)
                if sym is not None and pending is not None and sym != pending:
                    raise SmilesSyntaxError(f"conflicting bond symbols for ring {num}", i)
                if pending is not None:
                    # symbol written at the closure reads prev -> other
                    add_bond(prev, other, pending, i)
                else:
                    add_bond(other, prev, sym, i)
            else:
                rings[num] = (prev, pending, i)
            pending = None
            i += width
            continue
        # atoms
        start = i
        if c == "[":
            close = text.find("]", i)
            if close < 0:
                raise SmilesSyntaxError("unclosed '['", i)
            atom = _parse_bracket(text[i + 1:close], i)
            i = close + 1
        elif text.startswith(("Cl", "Br"), i):
            atom = _Atom(text[i:i + 2], False)
            i += 2
        elif c in ORGANIC_SUBSET:
            atom = _Atom(c, False)
            i += 1
        elif c in AROMATIC_ORGANIC:
            atom = _Atom(c.upper(), True)
            i += 1
        elif c.isalpha():
            sym = text[i:i + 2] if i + 1 < n and text[i + 1].islower() else c
            if is_element(sym) or is_element(c.upper()):
                raise SmilesSyntaxError(f"element {sym!r} must be written in brackets", i)
            raise UnknownElement(f"unknown element {sym!r} at offset {i}")
        else:
            raise SmilesSyntaxError(f"unexpected character {c!r}", i)
        idx = len(atoms)
        atoms.append(atom)
        if prev is not None:
            add_bond(prev, idx, pending, start)
        elif pending is not None:
            raise SmilesSyntaxError("bond symbol before any atom", pending_at)
        pending = None
        prev = idx

    if pending is not None:
        raise SmilesSyntaxError("dangling bond symbol", pending_at)
    if branch_stack:
        raise SmilesSyntaxError("unclosed '('", n)
    if rings:
        num, (_, _, at) = next(iter(rings.items()))
        raise UnbalancedRingBond(f"ring bond {num} opened at offset {at} is never closed")

    # per atom: bond orders, aromatic bonds counted as 1 so they vanish
    # from the aromatic rule and count as single for the saturated rule
    bond_sum: list[list[float]] = [[] for _ in atoms]
    for a, b, order, _ in bonds:
        w = 1.0 if order == BondOrder.AROMATIC else order.valence_contribution
        bond_sum[a].append(w)
        bond_sum[b].append(w)

    stereo = _double_bond_stereo(bonds)
    return build_molecule(
        [a.element for a in atoms],
        [(a, b, o) for a, b, o, _ in bonds],
        charges=[a.charge for a in atoms],
        hydrogens=[_implicit_hydrogens(a, bond_sum[k], len(bond_sum[k])) for k, a in enumerate(atoms)],
        aromatic=[a.aromatic for a in atoms],
        chirality=[a.chirality for a in atoms],
        stereo=stereo,
        name=name,
        smiles=text,
    )


def _double_bond_stereo(bonds) -> dict[int, BondStereo]:
    """E/Z labels for double bonds flanked by directional single bonds."""
    out: dict[int, BondStereo] = {}
    for k, (a, b, order, _) in enumerate(bonds):
        if order != BondOrder.DOUBLE:
            continue
        sa = _direction_sign(bonds, a, skip=k)
        sb = _direction_sign(bonds, b, skip=k, far_side=True)
        if sa is not None and sb is not None:
            out[k] = BondStereo.E if sa == sb else BondStereo.Z
    return out


def _direction_sign(bonds, atom, skip, far_side=False):
    # Normalize each directional bond to read "substituent -> atom" on the
    # near side and "atom -> substituent" on the far side.
    for k, (x, y, _, sym) in enumerate(bonds):
        if k == skip or sym not in ("/", "\\"):
            continue
        if atom not in (x, y):
            continue
        sign = 1 if sym == "/" else -1
        written_into_atom = y == atom
        if far_side:
            return sign if not written_into_atom else -sign
        return sign if written_into_atom else -sign
    return None
