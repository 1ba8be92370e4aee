//! Deterministic 2D multi-arm kinematic simulator.
//!
//! Robots are point grippers on a tabletop. Each tick consumes one
//! detokenized [`ActionVector`](crate::action_codec::ActionVector) per
//! robot; only `dx`, `dy` and the gripper command act on the world, the
//! remaining dimensions travel through the token stream untouched.
//! [`load_scenario`] builds the six task analogs together with their task
//! graphs, and [`run_episode`] drives a [`Policy`] through the graph.

mod episode;
mod policy;
mod scenario;
mod svg;
mod world;

use std::ops::{Add, Sub};

use serde::Serialize;
use thiserror::Error;

use crate::egot::EgotError;
use crate::Scalar;

pub use episode::{
    detect_skip, run_episode, run_episode_observed, run_episode_with, Episode, EpisodeOptions, EpisodeResult,
    Perturbation, SkipEvent, TraceEvent,
};
pub use policy::{
    hold_tokens, oracle_policy, FixedPolicy, GreedyPolicy, LengthCorrupter, Observation, OraclePolicy, Policy,
};
pub use scenario::{bind, load_scenario, Binding, Bindings, Scenario, TaskName};
pub use svg::render_svg;
pub use world::{Gripper, Object, RobotState, World, WorldParams};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("got actions for {got} robots, world has {expected}")]
    ArityMismatch { got: usize, expected: usize },
    #[error("node `{node}` cannot be bound: {missing}")]
    BindingError { node: String, missing: String },
    #[error("robot {robot} is not holding anything")]
    NotHolding { robot: usize },
    #[error("no robot with index {0}")]
    UnknownRobot(usize),
    #[error(transparent)]
    Graph(#[from] EgotError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Vec2<S> {
    pub x: S,
    pub y: S,
}

impl<S: Scalar> Vec2<S> {
    pub fn new(x: S, y: S) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> S {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Self) -> S {
        (self - other).norm()
    }

    /// Largest absolute component.
    pub fn max_abs(self) -> S {
        self.x.abs().max(self.y.abs())
    }

    pub fn clamp_each(self, limit: S) -> Self {
        Self::new(self.x.max(-limit).min(limit), self.y.max(-limit).min(limit))
    }
}

impl<S: Scalar> Add for Vec2<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<S: Scalar> Sub for Vec2<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

/// Axis-aligned rectangle, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rect<S> {
    pub min: Vec2<S>,
    pub max: Vec2<S>,
}

impl<S: Scalar> Rect<S> {
    pub fn new(x0: S, y0: S, x1: S, y1: S) -> Self {
        Self { min: Vec2::new(x0, y0), max: Vec2::new(x1, y1) }
    }

    pub fn contains(&self, p: Vec2<S>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn center(&self) -> Vec2<S> {
        let half = S::lit(0.5);
        Vec2::new((self.min.x + self.max.x) * half, (self.min.y + self.max.y) * half)
    }

    pub fn clamp(&self, p: Vec2<S>) -> Vec2<S> {
        Vec2::new(p.x.max(self.min.x).min(self.max.x), p.y.max(self.min.y).min(self.max.y))
    }
}
