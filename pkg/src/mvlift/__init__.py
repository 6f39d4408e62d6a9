"""Multi-view 3D human pose lifting with a linear pose basis and robust shape warping."""
from .basis import fit_basis, normalize_pose
from .errors import DataError, LiftError, NumericalError
from .evaluation import ablate, gt_triangulation_floor, mpjpe_p1, mpjpe_p2
from .multi import MultiViewProblem, lift_jacobian, lift_multi, warp_frobenius, warp_huber
from .pipeline import reproject, run_pipeline
from .single import lift_single, solve_rotation
from .studio import SceneSpec, default_basis, generate
from .types import (Camera, CameraRig, LiftConfig, Pose2D, PoseBasis, RobustMode, RotationGrid,
                    RotationMode)

__version__ = "0.1.0"
