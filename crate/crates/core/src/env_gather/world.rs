use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::action::{decode_action, ActionKind};
use super::config::{TaskConfig, TaskKind};
use super::EnvError;

/// Omnivores are numbered `0..n_omnivores` and keep their id for the whole episode.
pub type AgentId = usize;

const LAYOUT_STREAM: u64 = 1;
const MOVE_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitKind {
    Omnivore,
    Food,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    pub kind: UnitKind,
    pub pos: (usize, usize),
    pub hp: u32,
    pub alive: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Empty,
    Omnivore(AgentId),
    Food(usize),
}

/// One resolved interaction, in the order it was applied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Event {
    AttackFood { attacker: AgentId, food: usize },
    AttackBlank { attacker: AgentId },
    AttackAgent { attacker: AgentId, target: AgentId },
    FoodKilled { food: usize },
    AgentKilled { agent: AgentId },
    Moved { agent: AgentId, from: (usize, usize), to: (usize, usize) },
    Blocked { agent: AgentId },
    StepPenalty { agent: AgentId },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    /// Indexed by agent id; zero for agents that were already dead.
    pub rewards: Vec<f64>,
    pub alive: Vec<bool>,
    pub done: bool,
    pub food_remaining: usize,
    pub events: Vec<Event>,
}

#[derive(Clone, Debug)]
pub struct GridWorld {
    config: TaskConfig,
    t: usize,
    occupancy: Vec<Cell>,
    omnivores: Vec<Unit>,
    food: Vec<Unit>,
    food_remaining: usize,
    done: bool,
    rng: ChaCha8Rng,
}

/// Cells of the square ring at distance `margin` from the border, clockwise
/// from the top-left corner.
fn ring(map: usize, margin: usize) -> Vec<(usize, usize)> {
    let lo = margin;
    let hi = map - 1 - margin;
    if hi < lo {
        return Vec::new();
    }
    if hi == lo {
        return vec![(lo, lo)];
    }
    let mut cells = Vec::with_capacity(4 * (hi - lo));
    cells.extend((lo..hi).map(|x| (x, lo)));
    cells.extend((lo..hi).map(|y| (hi, y)));
    cells.extend((lo + 1..=hi).rev().map(|x| (x, hi)));
    cells.extend((lo + 1..=hi).rev().map(|y| (lo, y)));
    cells
}

fn omnivore_layout(map: usize, n: usize) -> Result<Vec<(usize, usize)>, EnvError> {
    let mut out = Vec::with_capacity(n);
    let mut margin = 1;
    while out.len() < n {
        let cells = ring(map, margin);
        if cells.is_empty() {
            return Err(EnvError::Config(format!(
                "{n} omnivores do not fit on the rings of a {map}x{map} map"
            )));
        }
        let take = (n - out.len()).min(cells.len());
        out.extend((0..take).map(|k| cells[k * cells.len() / take]));
        margin += 1;
    }
    Ok(out)
}

/// Width and height of the food block.
fn food_block(n: usize) -> (usize, usize) {
    let w = (n as f64).sqrt().ceil() as usize;
    (w, n.div_ceil(w))
}

fn food_layout(config: &TaskConfig) -> Result<Vec<(usize, usize)>, EnvError> {
    let map = config.map_size;
    let (w, h) = food_block(config.n_food);
    let corner = match config.task_kind {
        TaskKind::Normal => {
            if w > map || h > map {
                None
            } else {
                Some(((map - w) / 2, (map - h) / 2))
            }
        }
        TaskKind::Random => {
            // Keep clear of the outer omnivore ring.
            let lo = 2;
            if map < w + 2 * lo || map < h + 2 * lo {
                None
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(LAYOUT_STREAM);
                let x = rng.random_range(lo..=map - lo - w);
                let y = rng.random_range(lo..=map - lo - h);
                Some((x, y))
            }
        }
    };
    let (x0, y0) = corner.ok_or_else(|| {
        EnvError::Config(format!("a {w}x{h} food block does not fit a {map}x{map} map"))
    })?;
    Ok((0..config.n_food)
        .map(|k| (x0 + k % w, y0 + k / w))
        .collect())
}

impl GridWorld {
    pub fn new(config: TaskConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let map = config.map_size;
        let mut occupancy = vec![Cell::Empty; map * map];
        let mut omnivores = Vec::with_capacity(config.n_omnivores);
        for (id, pos) in omnivore_layout(map, config.n_omnivores)?.into_iter().enumerate() {
            occupancy[pos.1 * map + pos.0] = Cell::Omnivore(id);
            omnivores.push(Unit {
                kind: UnitKind::Omnivore,
                pos,
                hp: config.hp_omnivore,
                alive: true,
            });
        }
        let mut food = Vec::with_capacity(config.n_food);
        for (id, pos) in food_layout(&config)?.into_iter().enumerate() {
            let cell = &mut occupancy[pos.1 * map + pos.0];
            if *cell != Cell::Empty {
                return Err(EnvError::Config(format!(
                    "food block overlaps omnivore spawn at {pos:?}"
                )));
            }
            *cell = Cell::Food(id);
            food.push(Unit {
                kind: UnitKind::Food,
                pos,
                hp: config.hp_food,
                alive: true,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(MOVE_STREAM);
        Ok(Self {
            food_remaining: food.len(),
            config,
            t: 0,
            occupancy,
            omnivores,
            food,
            done: false,
            rng,
        })
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn food_remaining(&self) -> usize {
        self.food_remaining
    }

    pub fn omnivores(&self) -> &[Unit] {
        &self.omnivores
    }

    pub fn food(&self) -> &[Unit] {
        &self.food
    }

    pub fn alive_ids(&self) -> Vec<AgentId> {
        (0..self.omnivores.len())
            .filter(|&i| self.omnivores[i].alive)
            .collect()
    }

    pub fn n_alive(&self) -> usize {
        self.omnivores.iter().filter(|u| u.alive).count()
    }

    pub fn position(&self, agent: AgentId) -> Result<(usize, usize), EnvError> {
        match self.omnivores.get(agent) {
            Some(u) if u.alive => Ok(u.pos),
            _ => Err(EnvError::DeadAgent(agent)),
        }
    }

    /// Occupant of `(x, y)`, or `None` outside the map.
    pub fn cell(&self, x: i64, y: i64) -> Option<Cell> {
        let map = self.config.map_size as i64;
        if x < 0 || y < 0 || x >= map || y >= map {
            None
        } else {
            Some(self.occupancy[(y * map + x) as usize])
        }
    }

    fn offset(&self, pos: (usize, usize), dx: i32, dy: i32) -> Option<(usize, usize)> {
        let x = pos.0 as i64 + dx as i64;
        let y = pos.1 as i64 + dy as i64;
        self.cell(x, y).map(|_| (x as usize, y as usize))
    }

    fn index(&self, pos: (usize, usize)) -> usize {
        pos.1 * self.config.map_size + pos.0
    }

    /// Places an omnivore directly, bypassing the spawn layout. Meant for
    /// building hand-made scenarios.
    pub fn place_omnivore(&mut self, agent: AgentId, pos: (usize, usize)) -> Result<(), EnvError> {
        let old = self.position(agent)?;
        if self.cell(pos.0 as i64, pos.1 as i64) != Some(Cell::Empty) && pos != old {
            return Err(EnvError::Protocol(format!("cell {pos:?} is not free")));
        }
        let (oi, ni) = (self.index(old), self.index(pos));
        self.occupancy[oi] = Cell::Empty;
        self.occupancy[ni] = Cell::Omnivore(agent);
        self.omnivores[agent].pos = pos;
        Ok(())
    }

    /// Takes a food unit off the board, as if it had been eaten.
    pub fn remove_food(&mut self, food: usize) {
        if let Some(u) = self.food.get(food).copied() {
            if u.alive {
                let idx = self.index(u.pos);
                self.occupancy[idx] = Cell::Empty;
                self.food[food].alive = false;
                self.food[food].hp = 0;
                self.food_remaining -= 1;
            }
        }
    }

    /// Moves a food unit to an empty cell.
    pub fn place_food(&mut self, food: usize, pos: (usize, usize)) -> Result<(), EnvError> {
        let u = *self
            .food
            .get(food)
            .filter(|u| u.alive)
            .ok_or_else(|| EnvError::Protocol(format!("food {food} is not on the board")))?;
        if self.cell(pos.0 as i64, pos.1 as i64) != Some(Cell::Empty) {
            return Err(EnvError::Protocol(format!("cell {pos:?} is not free")));
        }
        let (oi, ni) = (self.index(u.pos), self.index(pos));
        self.occupancy[oi] = Cell::Empty;
        self.occupancy[ni] = Cell::Food(food);
        self.food[food].pos = pos;
        Ok(())
    }

    pub fn remove_omnivore(&mut self, agent: AgentId) -> Result<(), EnvError> {
        let pos = self.position(agent)?;
        let idx = self.index(pos);
        self.occupancy[idx] = Cell::Empty;
        self.omnivores[agent].alive = false;
        self.omnivores[agent].hp = 0;
        Ok(())
    }

    /// Advances one timestep. `actions` must name every alive agent exactly once.
    pub fn step(&mut self, actions: &[(AgentId, usize)]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::Protocol("episode already finished".into()));
        }
        let mut decoded: BTreeMap<AgentId, ActionKind> = BTreeMap::new();
        for &(agent, index) in actions {
            if !self.omnivores.get(agent).is_some_and(|u| u.alive) {
                return Err(EnvError::DeadAgent(agent));
            }
            if decoded.insert(agent, decode_action(index)?).is_some() {
                return Err(EnvError::Protocol(format!("agent {agent} acted twice")));
            }
        }
        if let Some(missing) = self.alive_ids().into_iter().find(|a| !decoded.contains_key(a)) {
            return Err(EnvError::Protocol(format!("no action for agent {missing}")));
        }

        let r = self.config.rewards;
        let mut rewards = vec![0.0; self.omnivores.len()];
        let mut events = Vec::new();

        // Phase 1: attacks read the pre-step board and apply damage together.
        let mut food_damage = vec![0u32; self.food.len()];
        let mut agent_damage = vec![0u32; self.omnivores.len()];
        for (&agent, kind) in &decoded {
            if let ActionKind::Attack { dx, dy } = *kind {
                let target = self
                    .offset(self.omnivores[agent].pos, dx, dy)
                    .map(|p| self.occupancy[self.index(p)]);
                match target {
                    Some(Cell::Food(f)) => {
                        rewards[agent] += r.r_food;
                        food_damage[f] += 1;
                        events.push(Event::AttackFood { attacker: agent, food: f });
                    }
                    Some(Cell::Omnivore(o)) => {
                        rewards[o] += r.p_attacked;
                        agent_damage[o] += 1;
                        events.push(Event::AttackAgent { attacker: agent, target: o });
                    }
                    Some(Cell::Empty) | None => {
                        rewards[agent] += r.p_blank;
                        events.push(Event::AttackBlank { attacker: agent });
                    }
                }
            }
        }
        for (f, &dmg) in food_damage.iter().enumerate() {
            if dmg > 0 {
                let u = &mut self.food[f];
                u.hp = u.hp.saturating_sub(dmg);
                if u.hp == 0 {
                    self.remove_food(f);
                    events.push(Event::FoodKilled { food: f });
                }
            }
        }
        for (a, &dmg) in agent_damage.iter().enumerate() {
            if dmg > 0 {
                let u = &mut self.omnivores[a];
                u.hp = u.hp.saturating_sub(dmg);
                if u.hp == 0 {
                    self.remove_omnivore(a)?;
                    events.push(Event::AgentKilled { agent: a });
                }
            }
        }

        // Phase 2: moves, one at a time in a seeded random order.
        let mut movers: Vec<(AgentId, i32, i32)> = decoded
            .iter()
            .filter_map(|(&a, k)| match *k {
                ActionKind::Move { dx, dy } if self.omnivores[a].alive => Some((a, dx, dy)),
                _ => None,
            })
            .collect();
        movers.shuffle(&mut self.rng);
        for (agent, dx, dy) in movers {
            let from = self.omnivores[agent].pos;
            match self.offset(from, dx, dy) {
                Some(to) if self.occupancy[self.index(to)] == Cell::Empty => {
                    self.place_omnivore(agent, to)?;
                    events.push(Event::Moved { agent, from, to });
                }
                _ => events.push(Event::Blocked { agent }),
            }
        }

        // Phase 3: living costs something.
        for a in 0..self.omnivores.len() {
            if self.omnivores[a].alive {
                rewards[a] += r.p_step;
                events.push(Event::StepPenalty { agent: a });
            }
        }

        self.t += 1;
        self.done = self.t >= self.config.max_steps || self.food_remaining == 0;
        Ok(StepResult {
            rewards,
            alive: self.omnivores.iter().map(|u| u.alive).collect(),
            done: self.done,
            food_remaining: self.food_remaining,
            events,
        })
    }

    /// Checks the board bookkeeping; used by property tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        let map = self.config.map_size;
        let mut seen = vec![Cell::Empty; map * map];
        for (i, u) in self.omnivores.iter().enumerate().filter(|(_, u)| u.alive) {
            if u.pos.0 >= map || u.pos.1 >= map {
                return Err(format!("omnivore {i} off the map"));
            }
            let idx = self.index(u.pos);
            if seen[idx] != Cell::Empty {
                return Err(format!("cell {:?} doubly occupied", u.pos));
            }
            seen[idx] = Cell::Omnivore(i);
        }
        for (i, u) in self.food.iter().enumerate().filter(|(_, u)| u.alive) {
            let idx = self.index(u.pos);
            if seen[idx] != Cell::Empty {
                return Err(format!("cell {:?} doubly occupied", u.pos));
            }
            seen[idx] = Cell::Food(i);
        }
        if seen != self.occupancy {
            return Err("occupancy grid out of sync with units".into());
        }
        if self.food.iter().filter(|u| u.alive).count() != self.food_remaining {
            return Err("food_remaining out of sync".into());
        }
        if self.t > self.config.max_steps {
            return Err("t exceeds max_steps".into());
        }
        Ok(())
    }

    /// Mean position of the food still on the board.
    pub fn food_centroid(&self) -> Option<(f64, f64)> {
        let alive: Vec<_> = self.food.iter().filter(|u| u.alive).collect();
        if alive.is_empty() {
            return None;
        }
        let n = alive.len() as f64;
        let sx: usize = alive.iter().map(|u| u.pos.0).sum();
        let sy: usize = alive.iter().map(|u| u.pos.1).sum();
        Some((sx as f64 / n, sy as f64 / n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_gather::{encode_action, NOOP};

    fn open_world(map: usize) -> GridWorld {
        let cfg = TaskConfig {
            map_size: map,
            n_omnivores: 2,
            n_food: 1,
            ..TaskConfig::default()
        };
        let mut w = GridWorld::new(cfg).unwrap();
        // Park the food in a corner so scenarios start from a clean board.
        w.place_food(0, (map - 1, map - 1)).unwrap();
        w
    }

    fn attack(dx: i32, dy: i32) -> usize {
        encode_action(ActionKind::Attack { dx, dy }).unwrap()
    }

    #[test]
    fn preset_unit_counts() {
        let w = GridWorld::new(TaskConfig::preset("normal-small").unwrap()).unwrap();
        assert_eq!(w.n_alive() + w.food_remaining(), 114);
        let w = GridWorld::new(TaskConfig::preset("random-small").unwrap()).unwrap();
        assert_eq!(w.n_alive() + w.food_remaining(), 32);
        for name in crate::env_gather::PRESET_NAMES {
            let w = GridWorld::new(TaskConfig::preset(name).unwrap()).unwrap();
            w.check_invariants().unwrap();
        }
    }

    #[test]
    fn random_task_moves_food_with_seed() {
        let base = TaskConfig::preset("random-small").unwrap();
        let a = GridWorld::new(base.with_seed(1)).unwrap().food_centroid().unwrap();
        let b = GridWorld::new(base.with_seed(2)).unwrap().food_centroid().unwrap();
        assert_ne!(a, b);
        let n = TaskConfig::preset("normal-small").unwrap();
        let a = GridWorld::new(n.with_seed(1)).unwrap();
        let b = GridWorld::new(n.with_seed(2)).unwrap();
        assert_eq!(a.food_centroid(), b.food_centroid());
        assert_eq!(a.omnivores(), b.omnivores());
    }

    #[test]
    fn infeasible_layout_is_a_config_error() {
        let cfg = TaskConfig {
            map_size: 4,
            n_omnivores: 27,
            ..TaskConfig::default()
        };
        assert!(matches!(GridWorld::new(cfg), Err(EnvError::Config(_))));
    }

    #[test]
    fn attack_food_pays_and_damages() {
        let mut w = open_world(10);
        w.place_omnivore(0, (4, 4)).unwrap();
        w.place_food(0, (5, 4)).unwrap();
        let res = w.step(&[(0, attack(1, 0)), (1, NOOP)]).unwrap();
        let r = w.config().rewards;
        assert_eq!(res.rewards[0], r.r_food + r.p_step);
        assert_eq!(w.food()[0].hp, 1);
        let res = w.step(&[(0, attack(1, 0)), (1, NOOP)]).unwrap();
        assert_eq!(res.food_remaining, 0);
        assert!(res.done);
    }

    #[test]
    fn attack_blank_and_out_of_map() {
        let mut w = open_world(10);
        w.place_omnivore(0, (0, 4)).unwrap();
        let res = w.step(&[(0, attack(1, 0)), (1, NOOP)]).unwrap();
        let r = w.config().rewards;
        assert_eq!(res.rewards[0], r.p_blank + r.p_step);
        let mut w = open_world(10);
        w.place_omnivore(0, (0, 4)).unwrap();
        let res = w.step(&[(0, attack(-1, 0)), (1, NOOP)]).unwrap();
        assert_eq!(res.rewards[0], r.p_blank + r.p_step);
    }

    #[test]
    fn attacks_on_agents_are_simultaneous() {
        let mut w = open_world(10);
        w.place_omnivore(0, (4, 4)).unwrap();
        w.place_omnivore(1, (5, 4)).unwrap();
        let r = w.config().rewards;
        for _ in 0..2 {
            let res = w.step(&[(0, attack(1, 0)), (1, attack(-1, 0))]).unwrap();
            assert_eq!(res.rewards, vec![r.p_attacked + r.p_step; 2]);
        }
        // Third exchange kills both at once and neither pays the step cost.
        let res = w.step(&[(0, attack(1, 0)), (1, attack(-1, 0))]).unwrap();
        assert_eq!(res.rewards, vec![r.p_attacked; 2]);
        assert_eq!(res.alive, vec![false, false]);
        assert!(w.step(&[(0, NOOP)]).is_err());
    }

    #[test]
    fn contested_cell_goes_to_exactly_one() {
        let right = encode_action(ActionKind::Move { dx: 1, dy: 0 }).unwrap();
        let left = encode_action(ActionKind::Move { dx: -1, dy: 0 }).unwrap();
        let mut winners = [0usize; 2];
        for seed in 0..32 {
            let mut w = open_world(10).clone();
            w.rng = ChaCha8Rng::seed_from_u64(seed);
            w.place_omnivore(0, (3, 4)).unwrap();
            w.place_omnivore(1, (5, 4)).unwrap();
            w.step(&[(0, right), (1, left)]).unwrap();
            w.check_invariants().unwrap();
            let at = |a: usize| w.omnivores()[a].pos;
            let winner = if at(0) == (4, 4) { 0 } else { 1 };
            assert_eq!(at(winner), (4, 4));
            assert_eq!(at(1 - winner), [(3, 4), (5, 4)][1 - winner]);
            winners[winner] += 1;
        }
        assert!(winners[0] > 0 && winners[1] > 0, "{winners:?}");
    }

    #[test]
    fn protocol_errors() {
        let mut w = open_world(10);
        assert!(matches!(w.step(&[(0, NOOP)]), Err(EnvError::Protocol(_))));
        assert!(matches!(w.step(&[(0, NOOP), (0, NOOP), (1, NOOP)]), Err(EnvError::Protocol(_))));
        assert!(matches!(w.step(&[(0, NOOP), (1, NOOP), (7, NOOP)]), Err(EnvError::DeadAgent(7))));
        assert!(matches!(w.step(&[(0, 40), (1, NOOP)]), Err(EnvError::ActionOutOfRange(40))));
    }

    #[test]
    fn episode_ends_at_cap() {
        let mut w = GridWorld::new(TaskConfig::preset("desk-random-12").unwrap()).unwrap();
        let mut steps = 0;
        loop {
            let acts: Vec<_> = w.alive_ids().into_iter().map(|a| (a, NOOP)).collect();
            steps += 1;
            if w.step(&acts).unwrap().done {
                break;
            }
        }
        assert_eq!(steps, 100);
    }
}
