"""Numerical toolkit for higher-order Petrovskii-parabolic systems."""
from .classifier import RegularityClass, RegularityQuery, classify, region_membership
from .field import Box, GridFunction, GridSpec, ParabolicCylinder
from .fundsol import FundamentalMatrix
from .symbol import (
    ParabolicSystem,
    check_parabolicity,
    check_strong_ellipticity,
    diagonal_laplacian_system,
    heat_system,
)
from .sysfile import load_system, parse_system

__all__ = [
    "Box",
    "FundamentalMatrix",
    "GridFunction",
    "GridSpec",
    "ParabolicCylinder",
    "ParabolicSystem",
    "RegularityClass",
    "RegularityQuery",
    "check_parabolicity",
    "check_strong_ellipticity",
    "classify",
    "diagonal_laplacian_system",
    "heat_system",
    "load_system",
    "parse_system",
    "region_membership",
]
