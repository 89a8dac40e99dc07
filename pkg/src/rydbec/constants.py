"""Constants registry.

All literature constants and unit-conversion factors live in
``data/constants.txt`` as ``name = value # source`` lines.  The registry is
read once at import and exposed as an immutable mapping plus module-level
attributes for the handful of values used everywhere.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, NamedTuple


class RegistryEntry(NamedTuple):
    value: float
    source: str


def parse_registry(text: str) -> dict[str, RegistryEntry]:
    """Parse registry text into ``{name: RegistryEntry}``.

    Blank lines and lines starting with ``#`` are ignored.  A malformed line
    raises ``ValueError`` naming the line number.
    """
    entries: dict[str, RegistryEntry] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        body, _, source = line.partition("#")
        name, eq, value = body.partition("=")
        name = name.strip()
        if not eq or not name:
            raise ValueError(f"registry line {lineno}: expected 'name = value # source'")
        if name in entries:
            raise ValueError(f"registry line {lineno}: duplicate entry {name!r}")
        try:
            entries[name] = RegistryEntry(float(value), source.strip())
        except ValueError:
            raise ValueError(f"registry line {lineno}: bad value {value.strip()!r}") from None
    return entries


def load_registry(path: str | Path | None = None) -> Mapping[str, RegistryEntry]:
    if path is None:
        text = resources.files("rydbec").joinpath("data/constants.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return MappingProxyType(parse_registry(text))


REGISTRY = load_registry()


def get(name: str) -> float:
    return REGISTRY[name].value


def source(name: str) -> str:
    return REGISTRY[name].source


h = get("planck_h")
hbar = h / (2 * 3.141592653589793)
e = get("elementary_charge")
k_B = get("boltzmann_k")
c = get("speed_of_light")
epsilon_0 = get("vacuum_permittivity")
mu_B = get("bohr_magneton")
a0 = get("bohr_radius")
m_e = get("electron_mass")
amu = get("atomic_mass_unit")

M_RB87 = get("rb87_mass")
RY_RB87_HZ = get("rydberg_frequency_rb87")
HARTREE_HZ = get("hartree_Hz")
ATOMIC_FIELD_V_PER_CM = get("atomic_field_V_per_cm")
DIPOLE_FIELD_MHZ = get("dipole_field_MHz")
ALPHA_CORE_AU = get("core_polarizability_au")
