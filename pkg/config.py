"""Runtime configuration and environment defaults"""
import os
from datetime import datetime

import pytz
from dotenv import load_dotenv

load_dotenv()

LOG_LEVEL = os.environ.get('HOGWILD_LOG_LEVEL', 'INFO').upper()

# Timezone used for report metadata only
TIMEZONE = pytz.timezone(os.environ.get('HOGWILD_TIMEZONE', 'UTC'))

# Process pool size for independent simulated runs
WORKERS = int(os.environ.get('HOGWILD_WORKERS', '1'))

OUT_DIR = os.environ.get('HOGWILD_OUT_DIR', 'results')

# Largest n accepted by the brute-force oracles
ENUMERATION_LIMIT = int(os.environ.get('HOGWILD_ENUMERATION_LIMIT', '20'))

# Logged reads per delay-probe point
MIN_LOGGED_READS = int(os.environ.get('HOGWILD_MIN_LOGGED_READS', '100000'))

# Interpreter thread switch interval (seconds) during hardware runs; at the
# interpreter default of 5 ms a whole read-and-write runs between switches
SWITCH_INTERVAL = float(os.environ.get('HOGWILD_SWITCH_INTERVAL', '').strip() or '1e-5')

# Writes per hardware delay-probe round, the same for every model size
PROBE_WRITES = int(os.environ.get('HOGWILD_PROBE_WRITES', '2000'))

# Full-size experiment defaults
DEFAULT_RUNS = 5000
DEFAULT_ALPHA = 0.5
DEFAULT_TAU = 4.0


def get_current_datetime():
    """Get current datetime with timezone."""
    return datetime.now(TIMEZONE)
