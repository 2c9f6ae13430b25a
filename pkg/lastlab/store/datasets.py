"""
Scene datasets as JSON lines.

Line 1 is a header record carrying the format tag; every following line is
one scene with its raster (base64 of little-endian float32) and teacher
features.
"""

import base64
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from lastlab.config.settings import SCENE_FORMAT
from lastlab.store.atomic import atomic_write
from lastlab.utils.reliability import ConfigurationError
from lastlab.world.oracles import TeacherFeatures
from lastlab.world.samples import SceneSample
from lastlab.world.scene import SceneRecord

logger = logging.getLogger(__name__)


def encode_array(array: np.ndarray) -> dict:
    data = np.ascontiguousarray(array, dtype="<f4")
    return {
        "shape": list(data.shape),
        "dtype": "<f4",
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def decode_array(record: dict) -> np.ndarray:
    raw = base64.b64decode(record["data"])
    return np.frombuffer(raw, dtype=record.get("dtype", "<f4")).reshape(record["shape"]).astype(np.float32)


def sample_to_record(sample: SceneSample) -> dict:
    return {
        "scene": sample.scene.to_dict(),
        "raster": encode_array(sample.raster),
        "teacher": {
            "f_geo": sample.teacher.f_geo.tolist(),
            "f_dyn": sample.teacher.f_dyn.tolist(),
        },
    }


def record_to_sample(record: dict) -> SceneSample:
    return SceneSample(
        scene=SceneRecord.from_dict(record["scene"]),
        raster=decode_array(record["raster"]),
        teacher=TeacherFeatures(
            f_geo=np.array(record["teacher"]["f_geo"], dtype=np.float32),
            f_dyn=np.array(record["teacher"]["f_dyn"], dtype=np.float32),
        ),
    )


def write_dataset(path: Path, samples: Sequence[SceneSample], split: str, data_hash: str) -> Path:
    """Write a dataset file atomically; an empty split still gets its header."""
    header = {
        "format": SCENE_FORMAT,
        "split": split,
        "count": len(samples),
        "data_hash": data_hash,
    }

    def _write(temp: Path) -> None:
        with open(temp, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for sample in samples:
                f.write(json.dumps(sample_to_record(sample), sort_keys=True) + "\n")

    atomic_write(path, _write)
    logger.info(f"Wrote {len(samples)} {split} scenes to {path}")
    return Path(path)


def read_dataset(path: Path, expect_hash: Optional[str] = None) -> Tuple[dict, List[SceneSample]]:
    """
    Load a dataset file.

    Raises:
        ConfigurationError: wrong format tag, truncated file, or (when
            `expect_hash` is given) a dataset built under another config.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in f if line.strip()]
    if not lines:
        raise ConfigurationError(f"{path}: empty dataset file (no header)")

    header = json.loads(lines[0])
    if header.get("format") != SCENE_FORMAT:
        raise ConfigurationError(f"{path}: expected format {SCENE_FORMAT!r}, got {header.get('format')!r}")
    if expect_hash is not None and header.get("data_hash") != expect_hash:
        found = str(header.get("data_hash", ""))[:12]
        raise ConfigurationError(f"{path}: dataset was generated under other world settings ({found})")

    samples = [record_to_sample(json.loads(line)) for line in lines[1:]]
    if len(samples) != header.get("count", len(samples)):
        raise ConfigurationError(f"{path}: header says {header['count']} scenes, found {len(samples)}")
    return header, samples
