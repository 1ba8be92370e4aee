use std::collections::BTreeMap;

use serde::Serialize;

use super::{Rect, SimError, Vec2};
use crate::action_codec::{ActionVector, GRIPPER};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Gripper {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Object<S> {
    pub position: Vec2<S>,
    pub held_by: Option<usize>,
    /// Where the object was placed at scenario load; perturbations put it back here.
    pub spawn: Vec2<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotState<S> {
    pub position: Vec2<S>,
    pub gripper: Gripper,
    pub holding: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorldParams<S> {
    /// A closing gripper attaches objects within this distance.
    pub grasp_radius: S,
    /// Per-axis translation limit per tick.
    pub max_step: S,
    pub bounds: Rect<S>,
}

impl<S: Scalar> Default for WorldParams<S> {
    fn default() -> Self {
        Self {
            grasp_radius: S::lit(0.02),
            max_step: S::lit(0.05),
            bounds: Rect::new(S::zero(), S::zero(), S::one(), S::lit(0.6)),
        }
    }
}

/// Objects, goal regions and robots on the tabletop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct World<S> {
    pub objects: BTreeMap<String, Object<S>>,
    pub regions: BTreeMap<String, Rect<S>>,
    pub robots: Vec<RobotState<S>>,
    pub tick: u64,
    pub params: WorldParams<S>,
    /// Objects resting in each region, bottom first.
    resting: BTreeMap<String, Vec<String>>,
}

impl<S: Scalar> World<S> {
    /// Robots start with closed grippers, so an all-zero action is a no-op.
    pub fn new(params: WorldParams<S>, robot_positions: &[Vec2<S>]) -> Self {
        Self {
            objects: BTreeMap::new(),
            regions: BTreeMap::new(),
            robots: robot_positions
                .iter()
                .map(|&p| RobotState { position: p, gripper: Gripper::Closed, holding: None })
                .collect(),
            tick: 0,
            params,
            resting: BTreeMap::new(),
        }
    }

    pub fn add_object(&mut self, id: &str, position: Vec2<S>) {
        self.unsettle(id);
        self.objects.insert(id.to_string(), Object { position, held_by: None, spawn: position });
        self.settle(id);
    }

    pub fn add_region(&mut self, id: &str, rect: Rect<S>) {
        self.regions.insert(id.to_string(), rect);
        self.resting.entry(id.to_string()).or_default();
    }

    /// Objects resting in `region`, in the order they were put down.
    pub fn resting_in(&self, region: &str) -> &[String] {
        self.resting.get(region).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn holder_of(&self, object: &str) -> Option<usize> {
        self.objects.get(object).and_then(|o| o.held_by)
    }

    fn unsettle(&mut self, object: &str) {
        for stack in self.resting.values_mut() {
            stack.retain(|o| o != object);
        }
    }

    fn settle(&mut self, object: &str) {
        let Some(pos) = self.objects.get(object).map(|o| o.position) else { return };
        if let Some((id, _)) = self.regions.iter().find(|(_, r)| r.contains(pos)) {
            let id = id.clone();
            self.resting.entry(id).or_default().push(object.to_string());
        }
    }

    fn attach(&mut self, robot: usize, object: &str) {
        if let Some(prev) = self.holder_of(object) {
            self.robots[prev].holding = None;
        }
        self.unsettle(object);
        let pos = self.robots[robot].position;
        let o = self.objects.get_mut(object).expect("object exists");
        o.held_by = Some(robot);
        o.position = pos;
        self.robots[robot].holding = Some(object.to_string());
    }

    fn nearest(&self, robot: usize, free: bool) -> Option<String> {
        let pos = self.robots[robot].position;
        let mut best: Option<(S, &String)> = None;
        for (id, o) in &self.objects {
            let eligible = if free { o.held_by.is_none() } else { matches!(o.held_by, Some(h) if h != robot) };
            let d = o.position.dist(pos);
            if eligible && d <= self.params.grasp_radius && best.is_none_or(|(b, _)| d < b) {
                best = Some((d, id));
            }
        }
        best.map(|(_, id)| id.clone())
    }

    /// Advances one tick: every robot moves by its clamped `(dx, dy)`, then
    /// grippers are resolved in robot order at the new positions.
    ///
    /// A gripper command below 0.5 means closed. Closing takes the nearest
    /// free object within the grasp radius, or failing that an object held
    /// by another robot within the radius (a hand-to-hand transfer).
    pub fn step(&mut self, actions: &[ActionVector<S>]) -> Result<(), SimError> {
        if actions.len() != self.robots.len() {
            return Err(SimError::ArityMismatch { got: actions.len(), expected: self.robots.len() });
        }
        let limit = self.params.max_step;
        for (r, a) in self.robots.iter_mut().zip(actions) {
            let delta = Vec2::new(a.components[0], a.components[1]).clamp_each(limit);
            r.position = self.params.bounds.clamp(r.position + delta);
        }
        for i in 0..self.robots.len() {
            if let Some(h) = self.robots[i].holding.clone() {
                self.objects.get_mut(&h).expect("held object exists").position = self.robots[i].position;
            }
        }
        let half = S::lit(0.5);
        for (i, a) in actions.iter().enumerate() {
            let want = if a.components[GRIPPER] < half { Gripper::Closed } else { Gripper::Open };
            if want == self.robots[i].gripper {
                continue;
            }
            self.robots[i].gripper = want;
            match want {
                Gripper::Open => {
                    if let Some(h) = self.robots[i].holding.take() {
                        self.objects.get_mut(&h).expect("held object exists").held_by = None;
                        self.settle(&h);
                    }
                }
                Gripper::Closed => {
                    if let Some(id) = self.nearest(i, true).or_else(|| self.nearest(i, false)) {
                        self.attach(i, &id);
                    }
                }
            }
        }
        self.tick += 1;
        Ok(())
    }

    fn is_free_spot(&self, p: Vec2<S>, except: &str) -> bool {
        let clearance = self.params.grasp_radius * S::lit(2.0);
        self.objects.iter().all(|(id, o)| id == except || o.position.dist(p) > clearance)
            && self.robots.iter().all(|r| r.position.dist(p) > clearance)
            && self.regions.values().all(|r| !r.contains(p))
    }

    /// Takes the held object out of `robot`'s gripper and puts it back on
    /// the table: at its spawn point if that is free, otherwise at the
    /// nearest free point of a 1 cm grid.
    pub fn drop_held(&mut self, robot: usize) -> Result<String, SimError> {
        let r = self.robots.get_mut(robot).ok_or(SimError::UnknownRobot(robot))?;
        let id = r.holding.take().ok_or(SimError::NotHolding { robot })?;
        let spawn = self.objects[&id].spawn;
        let mut spot = spawn;
        if !self.is_free_spot(spawn, &id) {
            let b = self.params.bounds;
            let step = S::lit(0.01);
            let mut best: Option<(S, Vec2<S>)> = None;
            let nx = ((b.max.x - b.min.x) / step).to_usize().unwrap_or(0);
            let ny = ((b.max.y - b.min.y) / step).to_usize().unwrap_or(0);
            for ix in 0..=nx {
                for iy in 0..=ny {
                    let p = Vec2::new(b.min.x + step * S::lit(ix as f64), b.min.y + step * S::lit(iy as f64));
                    let d = p.dist(spawn);
                    if best.is_none_or(|(bd, _)| d < bd) && self.is_free_spot(p, &id) {
                        best = Some((d, p));
                    }
                }
            }
            if let Some((_, p)) = best {
                spot = p;
            }
        }
        let o = self.objects.get_mut(&id).expect("held object exists");
        o.held_by = None;
        o.position = spot;
        self.settle(&id);
        Ok(id)
    }

    /// Every held object sits at its holder's position and each robot holds
    /// at most one object with a closed gripper.
    pub fn check_invariants(&self) -> bool {
        self.objects.iter().all(|(id, o)| match o.held_by {
            None => true,
            Some(r) => {
                let rob = &self.robots[r];
                rob.holding.as_deref() == Some(id.as_str()) && rob.position == o.position
            }
        }) && self.robots.iter().enumerate().all(|(i, r)| match &r.holding {
            None => true,
            Some(h) => r.gripper == Gripper::Closed && self.objects.get(h).map(|o| o.held_by) == Some(Some(i)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> World<f64> {
        let mut w = World::new(WorldParams::default(), &[Vec2::new(0.2, 0.3), Vec2::new(0.8, 0.3)]);
        w.add_object("cup", Vec2::new(0.2, 0.3));
        w.add_region("tray", Rect::new(0.4, 0.2, 0.6, 0.4));
        w
    }

    fn act(dx: f64, dy: f64, g: f64) -> ActionVector<f64> {
        ActionVector::new(dx, dy, 0.0, 0.0, 0.0, 0.0, g)
    }

    #[test]
    fn zero_action_only_advances_tick() {
        let mut w = world();
        let before = w.clone();
        w.step(&[ActionVector::zero(), ActionVector::zero()]).unwrap();
        assert_eq!(w.tick, 1);
        w.tick = 0;
        assert_eq!(w, before);
    }

    #[test]
    fn grasp_radius_is_respected() {
        let eps = 0.02;
        for (offset, expect) in [(eps / 2.0, true), (2.0 * eps, false)] {
            let mut w = world();
            w.robots[0].position = Vec2::new(0.2 + offset, 0.3);
            w.robots[0].gripper = Gripper::Open;
            w.step(&[act(0.0, 0.0, 0.0), ActionVector::zero()]).unwrap();
            assert_eq!(w.robots[0].holding.is_some(), expect, "offset {offset}");
            assert!(w.check_invariants());
        }
    }

    #[test]
    fn held_object_follows_and_settles() {
        let mut w = world();
        w.step(&[act(0.0, 0.0, 1.0), ActionVector::zero()]).unwrap();
        w.step(&[act(0.0, 0.0, 0.0), ActionVector::zero()]).unwrap();
        assert_eq!(w.robots[0].holding.as_deref(), Some("cup"));
        for _ in 0..6 {
            w.step(&[act(0.05, 0.0, 0.0), ActionVector::zero()]).unwrap();
            assert!(w.check_invariants());
        }
        w.step(&[act(0.0, 0.0, 1.0), ActionVector::zero()]).unwrap();
        assert_eq!(w.objects["cup"].held_by, None);
        assert_eq!(w.resting_in("tray"), ["cup"]);
        assert!((w.objects["cup"].position.x - 0.5).abs() < 1e-9);
    }

    #[test]
    fn steps_are_clamped_to_limit_and_bounds() {
        let mut w = world();
        w.step(&[act(0.3, -1.0, 0.0), act(0.3, 0.0, 0.0)]).unwrap();
        assert!((w.robots[0].position.x - 0.25).abs() < 1e-12);
        assert!((w.robots[0].position.y - 0.25).abs() < 1e-12);
        w.robots[1].position = Vec2::new(0.99, 0.3);
        w.step(&[ActionVector::zero(), act(0.05, 0.0, 0.0)]).unwrap();
        assert_eq!(w.robots[1].position.x, 1.0);
    }

    #[test]
    fn arity_is_checked() {
        let mut w = world();
        assert_eq!(w.step(&[ActionVector::zero()]), Err(SimError::ArityMismatch { got: 1, expected: 2 }));
    }

    #[test]
    fn hand_to_hand_transfer() {
        let mut w = world();
        w.step(&[act(0.0, 0.0, 1.0), ActionVector::zero()]).unwrap();
        w.step(&[act(0.0, 0.0, 0.0), act(0.0, 0.0, 1.0)]).unwrap();
        w.robots[1].position = Vec2::new(0.21, 0.3);
        w.step(&[act(0.0, 0.0, 0.0), act(0.0, 0.0, 0.0)]).unwrap();
        assert_eq!(w.robots[1].holding.as_deref(), Some("cup"));
        assert_eq!(w.robots[0].holding, None);
        assert!(w.check_invariants());
    }

    #[test]
    fn drop_returns_object_to_table() {
        let mut w = world();
        assert_eq!(w.drop_held(0), Err(SimError::NotHolding { robot: 0 }));
        w.step(&[act(0.0, 0.0, 1.0), ActionVector::zero()]).unwrap();
        w.step(&[act(0.0, 0.0, 0.0), ActionVector::zero()]).unwrap();
        w.step(&[act(0.05, 0.05, 0.0), ActionVector::zero()]).unwrap();
        assert_eq!(w.drop_held(0).unwrap(), "cup");
        assert_eq!(w.objects["cup"].position, Vec2::new(0.2, 0.3));
        assert_eq!(w.robots[0].holding, None);
        assert!(w.check_invariants());
    }

    #[test]
    fn f32_world_steps() {
        let mut w: World<f32> = World::new(WorldParams::default(), &[Vec2::new(0.5, 0.3)]);
        w.step(&[ActionVector::new(0.01, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)]).unwrap();
        assert!((w.robots[0].position.x - 0.51).abs() < 1e-6);
    }
}
