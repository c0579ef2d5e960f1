#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

import math
import unittest

import numpy as np

import config as config_module
from core import navsim
from core.errors import ConfigError, ContractError
from core.navsim import AgentState, Arena, ArenaSettings, NavEnv, Obstacle, StepOutcome


def placed_env(position, heading=0.0, goal=(5.0, 3.0), obstacles=(), **overrides):
    """Environment with a hand-placed agent and goal in a 6×6 arena."""
    settings = ArenaSettings(image_size=16, **overrides)
    env = NavEnv(settings, frame_stack=2, seed=0)
    env.reset()
    env.arena = Arena(6.0, 6.0, list(obstacles), np.array(goal, dtype=float), settings.goal_radius,
                      settings.agent_radius)
    env.state = AgentState(np.array(position, dtype=float), heading)
    env.d_init = env.d_prev = navsim.goal_distance(env.state.position, env.arena)
    return env


class TestReward(unittest.TestCase):

    def test_step_penalty_only(self):
        outcome = StepOutcome(0.0, False, navsim.CAUSE_NONE, 2.0, 2.0)
        self.assertAlmostEqual(navsim.reward_fn(2.0, outcome, 5000), -1.0 / 5000, places=12)

    def test_default_horizon(self):
        self.assertEqual(ArenaSettings().max_steps, 5000)
        self.assertEqual(config_module.DEFAULT_CONFIG["arena"]["max_steps"], 5000)
        self.assertEqual(ArenaSettings.from_config(config_module.DEFAULT_CONFIG["arena"]).max_steps, 5000)

    def test_goal_and_collision_terms(self):
        goal = StepOutcome(0.0, True, navsim.CAUSE_GOAL, 3.0, 0.4)
        self.assertAlmostEqual(navsim.reward_fn(0.5, goal, 500), 10.0 + 0.1 * 2.6 - 1.0 / 500, places=12)
        crash = StepOutcome(0.0, True, navsim.CAUSE_COLLISION, 3.0, 3.0)
        self.assertAlmostEqual(navsim.reward_fn(3.0, crash, 500), -1.0 - 1.0 / 500, places=12)

    def test_cumulative_and_incremental_progress(self):
        outcome = StepOutcome(0.0, False, navsim.CAUSE_NONE, 3.0, 2.0)
        self.assertAlmostEqual(navsim.reward_fn(2.1, outcome, 500, "cumulative"), 0.1 - 0.002, places=12)
        self.assertAlmostEqual(navsim.reward_fn(2.1, outcome, 500, "incremental"), 0.01 - 0.002, places=12)


class TestStep(unittest.TestCase):

    def test_translation_and_reward(self):
        env = placed_env([3.0, 3.0])
        state, outcome = env.step([1.0, 0.0, 0.0])
        np.testing.assert_allclose(state.position, [3.1, 3.0])
        self.assertEqual(outcome.cause, navsim.CAUSE_NONE)
        self.assertAlmostEqual(outcome.reward, 0.1 * 0.1 - 1.0 / 5000, places=12)

    def test_heading_integrates_before_translation(self):
        env = placed_env([3.0, 3.0])
        state, _ = env.step([1.0, 0.0, 1.5])
        self.assertAlmostEqual(state.heading, 0.15)
        np.testing.assert_allclose(state.position, [3.0 + 0.1 * math.cos(0.15), 3.0 + 0.1 * math.sin(0.15)])

    def test_action_clamped(self):
        env = placed_env([3.0, 3.0])
        state, _ = env.step([5.0, -5.0, 9.0])
        np.testing.assert_allclose(state.velocity, [1.0, -1.0])
        self.assertEqual(state.yaw_rate, 1.5)

    def test_nan_action_rejected(self):
        env = placed_env([3.0, 3.0])
        with self.assertRaises(ContractError):
            env.step([np.nan, 0.0, 0.0])

    def test_goal_reached(self):
        env = placed_env([4.45, 3.0])
        _, outcome = env.step([1.0, 0.0, 0.0])
        self.assertTrue(outcome.terminal)
        self.assertEqual(outcome.cause, navsim.CAUSE_GOAL)
        self.assertGreater(outcome.reward, 9.0)

    def test_wall_collision(self):
        env = placed_env([0.25, 3.0])
        _, outcome = env.step([-1.0, 0.0, 0.0])
        self.assertEqual(outcome.cause, navsim.CAUSE_COLLISION)
        self.assertLess(outcome.reward, -1.0)

    def test_goal_wins_over_collision(self):
        env = placed_env([5.75, 3.0], goal=(5.6, 3.0))
        _, outcome = env.step([1.0, 0.0, 0.0])
        self.assertEqual(outcome.cause, navsim.CAUSE_GOAL)

    def test_timeout(self):
        env = placed_env([3.0, 3.0], max_steps=2)
        env.step([0.0, 0.0, 0.0])
        _, outcome = env.step([0.0, 0.0, 0.0])
        self.assertEqual(outcome.cause, navsim.CAUSE_TIMEOUT)
        with self.assertRaises(ContractError):
            env.step([0.0, 0.0, 0.0])


class TestArenas(unittest.TestCase):

    def test_random_spawns_are_valid(self):
        settings = ArenaSettings(preset="random", random_obstacles=3)
        for seed in range(10):
            arena, start = navsim.sample_arena(settings, np.random.default_rng(seed))
            self.assertEqual(len(arena.obstacles), 3)
            self.assertFalse(navsim.in_collision(start, arena))
            self.assertGreaterEqual(navsim.goal_distance(start, arena), settings.min_start_goal_distance)
            for obstacle in arena.obstacles:
                self.assertGreater(navsim.surface_distance(arena.goal, obstacle), settings.goal_radius)

    def test_four_obstacles_preset(self):
        obstacles = navsim.preset_obstacles(ArenaSettings(preset="four_obstacles"), np.random.default_rng(0))
        self.assertEqual(len(obstacles), 4)
        self.assertAlmostEqual(obstacles[0].x, 2.1)
        self.assertAlmostEqual(obstacles[0].radius, 0.45)

    def test_impossible_spawn(self):
        settings = ArenaSettings(width=1.5, height=1.5, min_start_goal_distance=5.0)
        with self.assertRaises(ConfigError):
            navsim.sample_arena(settings, np.random.default_rng(0))

    def test_reset_is_deterministic_per_seed(self):
        settings = ArenaSettings(preset="random", image_size=16)
        first = NavEnv(settings, 3, seed=11).reset()
        second = NavEnv(settings, 3, seed=11).reset()
        np.testing.assert_array_equal(first[1], second[1])
        np.testing.assert_array_equal(first[0].position, second[0].position)


class TestObservations(unittest.TestCase):

    def test_stack_shapes(self):
        env = placed_env([1.0, 3.0])
        self.assertEqual(env.rgb_stack().shape, (6, 16, 16))
        privileged = env.privileged()
        self.assertEqual(privileged.depth_profiles.shape, (2, 16))
        self.assertEqual(privileged.depth.shape, (2, 16, 16))
        self.assertEqual(privileged.vector().shape, (navsim.PRIVILEGED_VECTOR_DIM,))
        self.assertEqual(env.student_vector().shape, (navsim.STUDENT_VECTOR_DIM,))

    def test_goal_vector_in_body_frame(self):
        env = placed_env([1.0, 3.0], heading=math.pi / 2)
        goal = env.privileged().delta_p[3:5]
        np.testing.assert_allclose(goal, [0.0, -4.0], atol=1e-12)

    def test_beacon_drawn_in_centre_column(self):
        env = placed_env([1.0, 3.0], goal=(4.0, 3.0))
        image = navsim.render_rgb(env.state, env.arena, env.settings)
        np.testing.assert_allclose(image[:, 7, 7], navsim.BEACON_COLOR)
        np.testing.assert_allclose(image[:, 0, 0], navsim.SKY_COLOR)
        np.testing.assert_allclose(image[:, 15, 0], navsim.FLOOR_COLOR)

    def test_depth_columns_follow_obstacle_side(self):
        # obstacle ahead-left; column 0 looks furthest left
        env = placed_env([1.0, 3.0], obstacles=[Obstacle(3.0, 4.2, 0.4)])
        profile = navsim.depth_profile(env.state, env.arena, env.settings)
        self.assertGreater(profile[:8].max(), 0.0)
        self.assertEqual(profile[8:].max(), 0.0)
        self.assertTrue(np.all((profile >= 0.0) & (profile <= 1.0)))

    def test_depth_of_obstacle_straight_ahead(self):
        env = placed_env([1.0, 3.0], obstacles=[Obstacle(3.0, 3.0, 0.5)])
        profile = navsim.depth_profile(env.state, env.arena, env.settings)
        self.assertAlmostEqual(profile[8], 0.5 / 1.5, places=2)


class TestCollisionGeometry(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(11)
        angles = np.linspace(0.0, 2.0 * math.pi, 20000, endpoint=False)
        self.ring = np.stack([np.cos(angles), np.sin(angles)], axis=1)

    def brute_distance(self, position, obstacle):
        boundary = np.array([obstacle.x, obstacle.y]) + obstacle.radius * self.ring
        return float(np.min(np.linalg.norm(boundary - position, axis=1)))

    def test_surface_distance_matches_sampled_circle(self):
        for _ in range(200):
            obstacle = Obstacle(*self.rng.uniform(1.0, 5.0, size=2), self.rng.uniform(0.2, 0.8))
            position = self.rng.uniform(0.0, 6.0, size=2)
            if math.hypot(position[0] - obstacle.x, position[1] - obstacle.y) <= obstacle.radius:
                continue
            self.assertAlmostEqual(navsim.surface_distance(position, obstacle),
                                   self.brute_distance(position, obstacle), delta=1e-6)

    def test_in_collision_matches_brute_force(self):
        obstacles = [Obstacle(2.0, 2.0, 0.5), Obstacle(4.0, 4.2, 0.4)]
        arena = Arena(6.0, 6.0, obstacles, np.array([5.0, 1.0]), 0.5, 0.2)
        checked = 0
        for _ in range(500):
            position = self.rng.uniform(0.0, 6.0, size=2)
            clearances = []
            for o in obstacles:
                inside = math.hypot(position[0] - o.x, position[1] - o.y) <= o.radius
                clearances.append(0.0 if inside else self.brute_distance(position, o))
            walls = min(position[0], position[1], 6.0 - position[0], 6.0 - position[1])
            margin = min(min(clearances), walls) - arena.agent_radius
            # skip points sitting on the contact boundary
            if abs(margin) < 1e-4:
                continue
            checked += 1
            self.assertEqual(navsim.in_collision(position, arena), margin < 0, msg=f"position {position}")
        self.assertGreater(checked, 400)


class TestReferencePolicies(unittest.TestCase):

    def test_scripted_policy_reaches_goal_in_empty_arena(self):
        settings = ArenaSettings(image_size=16)
        for seed in range(5):
            env = NavEnv(settings, 1, seed)
            env.reset()
            outcome = None
            while not env.done:
                _, outcome = env.step(navsim.scripted_action(env.state, env.arena, settings))
            self.assertEqual(outcome.cause, navsim.CAUSE_GOAL)

    def test_random_action_within_bounds(self):
        settings = ArenaSettings()
        rng = np.random.default_rng(0)
        for _ in range(20):
            action = navsim.random_action(rng, settings)
            self.assertTrue(np.all(np.abs(action) <= settings.u_max))


if __name__ == "__main__":
    unittest.main()
