"""Configuration constants for the amodal flow toolkit."""

import os

# Flow file formats
FLO_MAGIC = 202021.25  # "PIEH" as little-endian float32
AMFL_MAGIC = b"AMFL"
AMFL_VERSION = 1
AMFL_SUFFIX = ".amfl"
MAX_LEVELS = 8  # Highest occlusion level count in the dataset

# Stack directory layout
FRAME_DIR_PATTERN = "frame_{:06d}"
LEVEL_FLOW_PATTERN = "level_{}.flo"
LEVEL_MASK_PATTERN = "level_{}_mask.png"
LEVEL_VISIBLE_PATTERN = "level_{}_visible.png"
MODAL_FLOW_FILE = "modal.flo"
BACKGROUND_FLOW_FILE = "background.flo"
ID_MAP_FILE = "ids.png"
INSTANCE_AMODAL_PATTERN = "inst_{}_amodal.png"
INSTANCE_VISIBLE_PATTERN = "inst_{}_visible.png"
MOTION_MASK_FILE = "motion_mask.png"
MANIFEST_FILE = "manifest.json"

# Metric Configuration
WAUC_THRESHOLD_COUNT = 100
WAUC_THRESHOLD_STEP = 1.0 / 20.0  # pixels
DEFAULT_K = 3  # Amodal levels with equal weighting
DEFAULT_W_LAST = 0.25  # Weight of the last level
FRACTION_DIGITS = 6

# Flow statistics
DIRECTION_BINS = 36
DUDX_BINS = 101
DUDX_RANGE = 10.0  # pixels, histogram covers [-range, range]
MIN_FLOW_MAGNITUDE = 1e-6

# Synthetic ground truth
FAR_PLANE_DISTANCE = 500.0  # meters
RAY_EPSILON = 1e-6
QUATERNION_TOLERANCE = 1e-9

# Tracking Configuration
MIN_IOU = 0.1
MAX_MISSED_FRAMES = 1  # Tracks survive this many unmatched frames

# CLI
EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2

# Logging Configuration
LOG_DIR = os.environ.get("AMFLOW_LOG_DIR", "logs")
LOG_FILE_PREFIX = "amflow"  # Will be formatted as: amflow-YYYY-MM-DD.log
LOG_LEVEL = os.environ.get("AMFLOW_LOG", "info")
LOG_LEVELS = {
    "error": "ERROR",
    "warn": "WARNING",
    "info": "INFO",
    "debug": "DEBUG",
}
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
ENABLE_STRUCTURED_LOGGING = True  # Enable JSON structured logging
