import math

NAME = "polyrep"
SCHEMA_VERSION = 1
THREADS_ENV = "POLYREP_THREADS"

# Loss family
LAMBDA_COORD = 5.0
LOG_EPSILON = 1e-7
LITERAL_OBJECTNESS = False  # True reproduces the positive-only objectness term
LITERAL_CENTER_DECODE = False  # True reproduces y = g_y * f_y

# Gradient audit
AUDIT_STEP = 1e-5
AUDIT_TOLERANCE = 1e-5
AUDIT_ERROR_FLOOR = 1e-3  # partials below this compare absolutely (finite-difference noise)
AUDIT_TRIALS = 100
AUDIT_GRID_SIZE = 2
AUDIT_ANCHORS = ((1.5, 2.5), (3.0, 1.5))
AUDIT_POLYGON_POINTS = 12

# Representations and IoU
POLYGON_POINTS = (12, 24, 36, 60, 120)
POLAR_RADIUS_RULE = "ray"
POLAR_RAY_STEP = 0.05
RASTER_SUPERSAMPLING = 4
RASTER_RESOLUTION = 512
ELLIPSE_ARC_SEGMENTS = 64

# Evaluation
IOU_THRESHOLD = 0.5
NMS_IOU_THRESHOLD = 0.5
OCCUPANCY_FRACTION = 0.01

# Dataset
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)
MIN_INSTANCE_AREA = 4
FLOAT_DIGITS = 9

# Synthetic camera defaults (not taken from any real calibration)
CAMERA_IMAGE_SIZE = (1280, 960)
CAMERA_COEFFICIENTS = (400.0, 0.0, -20.0, 0.0)
CAMERA_THETA_MAX = math.radians(95.0)
CAMERA_MONOTONIC_SAMPLES = 10_000

# Generator defaults
SCENE_OBJECT_COUNT = (3, 6)
SCENE_FOCAL = 180.0
SCENE_FOV_DEG = 140.0
SCENE_VFOV_DEG = 110.0
SCENE_VEHICLE_SIZE = ((60.0, 140.0), (40.0, 90.0))
SCENE_PEDESTRIAN_SIZE = ((15.0, 30.0), (40.0, 80.0))
SCENE_VEHICLE_PROBABILITY = 0.6
SCENE_L_SHAPE_PROBABILITY = 0.3
SCENE_PLACEMENT_ATTEMPTS = 100
SCENE_PLACEMENT_MARGIN = 4.0
SCENE_BANDS = {
    "any": (0.0, 0.9),
    "central": (0.0, 0.25),
    "peripheral": (0.6, 0.9),
}

SEED = 42
