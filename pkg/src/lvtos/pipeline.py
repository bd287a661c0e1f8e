"""Composition helpers: phantom case -> strain matrix."""
from __future__ import annotations

from .phantom import PhantomCase
from .segmat import MyoMask, StrainMatrix, build_strain_matrix
from .strain import DEFORMATION_GRADIENT, DisplacementField, ecc_from_field


def strain_matrix(field: DisplacementField, myo: MyoMask,
                  mode: str = DEFORMATION_GRADIENT) -> StrainMatrix:
    ecc = ecc_from_field(field, myo.centroid, mode)
    return build_strain_matrix(ecc, myo, field.frame_interval_ms)


def case_strain_matrix(case: PhantomCase, myo: MyoMask | None = None) -> StrainMatrix:
    """Strain matrix of a phantom case, using its reference-frame mask unless ``myo`` is given."""
    return strain_matrix(case.field, myo or case.myo)
