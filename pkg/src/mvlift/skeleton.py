"""The 17-joint skeleton used throughout the package.

Order follows the common Human3.6M 17-joint layout. Joint 0 (pelvis) is the
root; poses are root-centred before any basis operation.
"""

JOINT_NAMES = (
    "pelvis",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "spine",
    "neck_base",
    "nose",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
)

PARENTS = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)

NUM_JOINTS = len(JOINT_NAMES)
ROOT = 0
RIGHT_HIP = 1
LEFT_HIP = 4

BONES = tuple((PARENTS[j], j) for j in range(1, NUM_JOINTS))

# 14-joint evaluation subset: everything except pelvis, spine and neck base.
SUBSET_14 = tuple(j for j in range(NUM_JOINTS) if j not in (0, 7, 8))
SUBSET_17 = tuple(range(NUM_JOINTS))

JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}


def joint_subset(n):
    if n == 17:
        return SUBSET_17
    if n == 14:
        return SUBSET_14
    raise ValueError(f"unknown joint subset {n!r}; expected 14 or 17")
