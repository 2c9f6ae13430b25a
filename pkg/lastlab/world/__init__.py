"""Procedural driving micro-world: scenes, rasters and teacher oracles."""

from lastlab.world.oracles import TeacherFeatures, dynamics_oracle, geometry_oracle, teacher_features
from lastlab.world.raster import rasterize
from lastlab.world.samples import SceneSample, build_sample, generate_samples
from lastlab.world.scene import (
    AdvancedScene,
    AgentTrack,
    DrivableCorridor,
    EgoState,
    SceneRecord,
    advance_scene,
    ego_pose,
    generate_scene,
)

__all__ = [
    "AdvancedScene",
    "AgentTrack",
    "DrivableCorridor",
    "EgoState",
    "SceneRecord",
    "SceneSample",
    "TeacherFeatures",
    "advance_scene",
    "build_sample",
    "dynamics_oracle",
    "ego_pose",
    "generate_samples",
    "generate_scene",
    "geometry_oracle",
    "rasterize",
    "teacher_features",
]
