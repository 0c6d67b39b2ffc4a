# CFST tensor container
CFST_MAGIC = b"CFST"
CFST_VERSION = 1
CFST_DTYPE_U8 = 1
CFST_DTYPE_F64 = 2
CFST_DTYPE_NAMES = {
    CFST_DTYPE_U8: "uint8",
    CFST_DTYPE_F64: "float64",
}
CFST_MAX_NAME_BYTES = 0xFFFF

# Entry names used inside containers
FEATURES_ENTRY = "features"
MASK_ENTRY = "mask"
CHECKPOINT_CONFIG_ENTRY = "__config__"

# Attention
MASK_FILL_VALUE = -1e30
POSITIONAL_BASE = 10000.0

# Gradient checking
GRADCHECK_STEP = 1e-5
GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_ERROR_FLOOR = 1e-6
GRADCHECK_MAX_COORDS = 8

# Evaluation
DEFAULT_SALIENCY_THRESHOLD = 0.5

# Run artifacts
CHECKPOINT_FILE = "checkpoint.cfst"
METRICS_LOG_FILE = "metrics.jsonl"
HISTORY_FILE = "history.csv"
TRAIN_REPORT_FILE = "report.json"
EVAL_REPORT_FILE = "eval_report.json"
ABLATION_REPORT_FILE = "ablation.json"
TRAIN_MANIFEST_FILE = "train.jsonl"
VAL_MANIFEST_FILE = "val.jsonl"
CONCEPTS_FILE = "concepts.cfst"
FEATURES_DIR = "features"
SYNTH_DATA_DIR = "data"
SYNTH_RECIPE_FILE = "synth_config.json"

# Environment
LOG_LEVEL_ENV = "CFSUM_LOG"
OUTPUT_DIR_ENV = "CFSUM_OUTPUT_DIR"
EVAL_WORKERS_ENV = "CFSUM_EVAL_WORKERS"
DEFAULT_OUTPUT_DIR = "runs"
