"""smoothset: dyadic density grids, smoothness moduli, stopping-time
scaffolds, box-counting dimension, and affine/bilipschitz invariance
checks on the unit cube."""

__version__ = "0.1.0"

from .geometry import AxisBox, ConsecutivePair, DyadicCube, consecutive_pairs
from .grid import GridFormatError, MassGrid, load_grid, save_grid
from .generate import MartingaleSchedule, fixture, generate_martingale_set
from .modulus import (
    ModulusProfile,
    ModulusSample,
    compare_grid_definitions,
    check_parent_child_gap,
    estimate_modulus,
)
from .scaffold import (
    LevelSetEstimate,
    Scaffold,
    StoppedFamily,
    StoppingSchedule,
    build_generations,
    check_centered_vs_dyadic,
    check_stopping_bounds,
    dimension_lower_bound,
    estimate_density_level_set,
    stop_family,
)
from .maps import (
    PlanarLinearMap,
    SmoothMap,
    compose,
    dilation_map,
    identity_map,
    map_from_spec,
    rotation_map,
    shear_map,
    svd2,
    swap_map,
    verify_map,
)
from .transform import (
    AnnulusDecomposition,
    RotatedSquareDecomposition,
    SlabDecomposition,
    annulus_decomposition,
    check_concentric_gap,
    check_dilation_gap,
    check_intersecting_gap,
    check_map_image_gaps,
    check_rotation_gap,
    concentric_gap_coefficient,
    pullback_set,
    region_quadrature,
    rot_decompose,
    slab_decomposition,
)
from .dimension import BoxCountFit, box_count, mask_box_count, scaffold_box_dim

__all__ = [name for name in dir() if not name.startswith("_")]
