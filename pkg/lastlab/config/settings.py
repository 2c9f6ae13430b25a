"""
Configuration settings for lastlab.

Loads environment variables and provides configuration validation.
Run-level knobs (model sizes, schedules, thresholds) live in run_config.py;
this module only holds process-wide settings.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

from lastlab.utils.reliability import ConfigError

# Load environment variables from .env file
load_dotenv()

# Base directory (project root)
BASE_DIR = Path(__file__).resolve().parent.parent.parent

# Default root for run directories
RUN_ROOT = Path(os.getenv("LASTLAB_RUN_ROOT", str(BASE_DIR / "runs")))

LOG_LEVEL = os.getenv("LASTLAB_LOG_LEVEL", "INFO")

# Torch device for training and rollouts
DEVICE = os.getenv("LASTLAB_DEVICE", "cpu")

# Opt-in for the long smoke tests
RUN_SLOW = os.getenv("LASTLAB_RUN_SLOW", "0") == "1"

# Artifact format tags
SCENE_FORMAT = "lastlab-scene-v1"
CKPT_FORMAT = "lastlab-ckpt-v1"
VOCAB_FORMAT = "lastlab-vocab-v1"
LOG_FORMAT = "lastlab-log-v1"
EVAL_FORMAT = "lastlab-eval-v1"
CONFIG_FORMAT = "lastlab-config-v1"


class _Settings:
    """Settings class to provide attribute-style access to configuration."""

    def __init__(self):
        self.BASE_DIR = BASE_DIR
        self.RUN_ROOT = RUN_ROOT
        self.LOG_LEVEL = LOG_LEVEL
        self.DEVICE = DEVICE
        self.RUN_SLOW = RUN_SLOW


# Singleton settings instance
settings = _Settings()


def default_run_root() -> Path:
    """Run root honoring a LASTLAB_RUN_ROOT set after import."""
    return Path(os.getenv("LASTLAB_RUN_ROOT", str(settings.RUN_ROOT)))


def validate_config() -> None:
    """
    Validate the process-wide settings.

    Raises:
        ConfigError: If any setting is unusable.
    """
    messages = []

    if LOG_LEVEL.upper() not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
        messages.append(f"LASTLAB_LOG_LEVEL: unknown level {LOG_LEVEL!r}")

    if not (DEVICE == "cpu" or DEVICE.startswith("cuda")):
        messages.append(f"LASTLAB_DEVICE: expected 'cpu' or 'cuda[:N]', got {DEVICE!r}")

    if messages:
        raise ConfigError(messages)
