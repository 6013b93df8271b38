"""Cone-beam CT toolkit for cylindrical objects.

Simulation, projection-based pose estimation and SART reconstruction
directly on a cylindrical voxel grid attached to the object's symmetry
axis, plus directional MTF characterization of the grid's resolution.
"""

from . import errors
from .geometry import (DetectorPoint, Pose, ScanGeometry, align_point,
                       euler_to_matrix, inverse_align_point,
                       make_circular_trajectory, project_point,
                       project_point_jacobian, table1_geometry)
from .grid import (CartGrid, CartVolume, CylCoord, CylGrid, CylVolume,
                   cart_to_cyl, cyl_to_cart, region_mask, resample_cyl_to_cart,
                   resample_cyl_to_cyl, sample, world_to_grid)
from .phantom import (ComponentSpec, LinePhantomSpec, frequency_sweep,
                      make_assembly_phantom, make_azimuthal_line_phantom,
                      make_line_phantom, make_radial_line_phantom,
                      make_weight_map)
from .projector import (ProjectionSet, RaySamplingConfig, back_project,
                        forward_project, forward_project_all,
                        intensities_to_line_integrals)
from .recon import ReconReport, SartConfig, presence_metric, sart_run, sart_update_view
from .imgproc import (AxisObservation, axis_endpoints, dilate, otsu_level,
                      remove_features, strip_profile, threshold)
from .posefit import (LmConfig, PoseFitParams, PoseFitResult, TrackedPoint,
                      axis_to_pose, estimate_phase, estimate_pose, fit_pose,
                      track_point)
from .mtf import (FrequencyCheck, MtfCurve, frequency_check, modulation,
                  mtf_azimuthal, mtf_radial, mtf_radial_flags)
from . import io  # noqa: F401  (cyltomo.io file formats)

__version__ = "0.1.0"
