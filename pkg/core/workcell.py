# core/workcell.py
"""
Collision environments for each planning phase around one target object.

    pick      everything; the target body ignores the hand
    lift      target removed (it is held); the table ignores the held object
    transit   target removed
    place     target removed; the support ignores the held object
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from core.collision import CollisionBody, attach_cloud
from core.kinematics import KinematicChain
from core.se3 import Pose
from core.synth import Scene, SceneObject


@dataclass(frozen=True, eq=False)
class Workcell:
    chain: KinematicChain
    scene: Scene
    target_id: int
    support: Optional[str] = "rack"
    held_radius: float = 0.002
    held_points: int = 64

    @cached_property
    def target(self) -> SceneObject:
        return self.scene.object(self.target_id)

    @property
    def held_link(self) -> int:
        """Index the attached object group gets in ``held_chain``."""
        return len(self.chain.links)

    @cached_property
    def _others(self) -> tuple[CollisionBody, ...]:
        return tuple(self.scene.bodies(exclude=[self.target_id]))

    @cached_property
    def env_pick(self) -> tuple[CollisionBody, ...]:
        return self._others + (self.target.body().excluding(self.chain.hand_links),)

    @cached_property
    def env_transit(self) -> tuple[CollisionBody, ...]:
        return self._others

    @cached_property
    def env_lift(self) -> tuple[CollisionBody, ...]:
        table = self.scene.table.name
        return tuple(b.excluding([self.held_link]) if b.name == table else b for b in self._others)

    @cached_property
    def env_place(self) -> tuple[CollisionBody, ...]:
        return tuple(b.excluding([self.held_link]) if b.name == self.support else b for b in self._others)

    @cached_property
    def object_cloud(self) -> np.ndarray:
        """Target surface points in the object frame."""
        return self.target.local_surface_points()

    def in_hand(self, hT_alpha: Pose, oT_alpha: Optional[Pose] = None) -> Pose:
        """Object pose in the TCP frame for a grasp at ``hT_alpha``."""
        oT_alpha = self.target.pose if oT_alpha is None else oT_alpha
        return hT_alpha.inverse() @ oT_alpha

    def held_chain(self, in_hand: Pose) -> KinematicChain:
        return attach_cloud(self.chain, in_hand.apply(self.object_cloud), self.held_radius, self.held_points)
