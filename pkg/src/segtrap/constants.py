"""Physical constants and ion species data.

All quantities are SI unless a name says otherwise.  CODATA values come from
scipy.constants so they stay consistent with the rest of the numerics.
"""

from __future__ import annotations

from dataclasses import dataclass

from scipy.constants import (
    atomic_mass,
    e as elementary_charge,
    electron_mass,
    epsilon_0,
    hbar,
)

__all__ = [
    "IonSpecies",
    "CA40",
    "atomic_mass",
    "elementary_charge",
    "electron_mass",
    "epsilon_0",
    "hbar",
]


@dataclass(frozen=True)
class IonSpecies:
    """A (singly or multiply) charged atomic ion.

    Parameters
    ----------
    label:
        Human-readable species name, e.g. ``"40Ca+"``.
    mass_u:
        Ion mass in unified atomic mass units.
    charge_e:
        Charge in units of the elementary charge.
    """

    label: str
    mass_u: float
    charge_e: float = 1.0

    def __post_init__(self) -> None:
        if self.mass_u <= 0:
            raise ValueError(f"ion mass must be positive, got {self.mass_u} u")
        if self.charge_e == 0:
            raise ValueError("an ion with zero charge does not couple to the trap")

    @property
    def mass(self) -> float:
        """Ion mass in kg."""
        return self.mass_u * atomic_mass

    @property
    def charge(self) -> float:
        """Ion charge in C."""
        return self.charge_e * elementary_charge


# Neutral 40Ca atomic mass minus one electron; the eV-scale binding energy
# correction is far below anything resolved here.
CA40 = IonSpecies("40Ca+", 39.9625909 - electron_mass / atomic_mass)
