"""Spin algebra, spin Wigner functions and large-spin identities."""

from .algebra import SpinAlgebra, clebsch_gordan, six_j
from .harmonics import SphereGrid
from .wigner import (SpinWignerField, anticommutator_convergence,
                     correspondence_convergence, expectation_from_wigner,
                     holstein_primakoff_check, north_coherent_state,
                     profile_state, reconstruct,
                     spin_wigner, verify_appendix_identities,
                     verify_correspondences)

__all__ = [
    "SpinAlgebra", "SphereGrid", "SpinWignerField", "clebsch_gordan", "six_j",
    "spin_wigner", "reconstruct", "expectation_from_wigner", "profile_state",
    "verify_correspondences", "verify_appendix_identities",
    "correspondence_convergence", "anticommutator_convergence",
    "holstein_primakoff_check", "north_coherent_state",
]
