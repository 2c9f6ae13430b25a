"""Training/eval samples: a scene plus its rendered inputs and teacher targets."""

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from lastlab.config.run_config import RunConfig
from lastlab.world.oracles import TeacherFeatures, teacher_features
from lastlab.world.raster import rasterize
from lastlab.world.scene import SceneRecord, generate_scene


@dataclass(eq=False)
class SceneSample:
    scene: SceneRecord
    raster: np.ndarray  # (3, H, W) float32 at t=0
    teacher: TeacherFeatures


def build_sample(scene: SceneRecord, config: RunConfig) -> SceneSample:
    return SceneSample(
        scene=scene,
        raster=rasterize(scene, 0.0, config.world),
        teacher=teacher_features(scene, 0.0, config.latent, config.world),
    )


def generate_samples(seeds: Sequence[int], difficulty: str, config: RunConfig) -> List[SceneSample]:
    return [build_sample(generate_scene(seed, difficulty, config.world), config) for seed in seeds]
