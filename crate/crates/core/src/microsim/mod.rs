//! Nagel-Schreckenberg cellular-automaton simulator.
//!
//! Every segment is a single lane of 7.5 m cells. One step is one second and
//! runs, in order: spawning at entry segments, the NaSch speed update
//! (accelerate, brake to gap, random slowdown) for all vehicles against the
//! pre-move occupancy, the move, and red-light waiting accounting.
//!
//! The stop cell of a segment is its last cell. When the segment's phase group
//! is red there is a virtual wall just past the stop cell. Vehicles that reach
//! the end of their final segment leave the network.
//!
//! Moves are applied segment by segment in index order, front to back within
//! a segment. A vehicle never moves further than its NaSch speed, and a move
//! into a cell already claimed this step by a vehicle from another segment is
//! cut short, so merges are resolved in favour of the lower segment index.

mod trace;

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roadnet::{PhaseGroup, RoadNetwork};
use crate::seed::rng_from_seed;
use crate::signalplan::{PhaseState, SignalSetting};

pub use trace::{TraceRecord, TraceWriter};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("setting has {got} intersections but the network has {expected} signalized intersections")]
    SettingLength { expected: usize, got: usize },
    #[error("config: {0}")]
    Config(String),
    #[error("safety check failed at t={t}: {message}")]
    Safety { t: u64, message: String },
}

/// Which stationary vehicles count as waiting on a red approach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaitRule {
    /// Every stopped vehicle on the red approach, including the queue.
    #[default]
    Queue,
    /// Only a vehicle stopped on the stop cell.
    LeaderOnly,
}

/// A vehicle inserted at a fixed second, independent of random demand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    pub t: u64,
    pub segment: String,
    /// Destination exit; drawn uniformly from reachable exits when absent.
    #[serde(default)]
    pub exit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub duration_s: u64,
    pub v_max: u32,
    pub slow_prob: f64,
    /// Spawn probability per second for entries without an override.
    pub demand_default: f64,
    /// Per-entry-segment spawn probability overrides.
    pub demand: BTreeMap<String, f64>,
    pub rng_seed: u64,
    pub wait_rule: WaitRule,
    pub injections: Vec<Injection>,
    /// Re-verify occupancy and signal compliance every step.
    pub debug_checks: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration_s: 600,
            v_max: 5,
            slow_prob: 0.2,
            demand_default: 0.1,
            demand: BTreeMap::new(),
            rng_seed: 0,
            wait_rule: WaitRule::Queue,
            injections: Vec::new(),
            debug_checks: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.duration_s < 1 {
            return Err(SimError::Config("duration_s must be >= 1".into()));
        }
        if self.v_max < 1 {
            return Err(SimError::Config("v_max must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.slow_prob) {
            return Err(SimError::Config(format!("slow_prob {} outside [0, 1]", self.slow_prob)));
        }
        if !(0.0..=1.0).contains(&self.demand_default) {
            return Err(SimError::Config(format!("demand_default {} outside [0, 1]", self.demand_default)));
        }
        for (seg, p) in &self.demand {
            if !(0.0..=1.0).contains(p) {
                return Err(SimError::Config(format!("demand for {seg} is {p}, outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub total_wait_s: u64,
    pub per_intersection_wait_s: Vec<u64>,
    pub vehicles_spawned: u64,
    pub vehicles_completed: u64,
}

/// Hooks into a running simulation. Used for traces and independent checks.
pub trait SimObserver {
    /// A vehicle left `from` for `to` during the move phase of second `t`.
    fn on_crossing(&mut self, _t: u64, _vehicle: u64, _from: usize, _to: usize) {}
    fn on_step_end(&mut self, _t: u64, _world: &World<'_>) {}
}

impl SimObserver for () {}

const EMPTY: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct SegInfo {
    cells: u32,
    offset: usize,
    signal: Option<(usize, PhaseGroup)>,
}

/// A network compiled for simulation: dense indices, stop-line signal groups
/// and precomputed shortest routes from every entry to every reachable exit.
#[derive(Debug, Clone)]
pub struct Simulator {
    segs: Vec<SegInfo>,
    seg_ids: Vec<String>,
    seg_lookup: HashMap<String, usize>,
    k: usize,
    total_cells: usize,
    /// Entry segment indices in index order.
    entries: Vec<usize>,
    /// For each entry (parallel to `entries`): (exit segment, route).
    routes: Vec<Vec<(usize, Vec<usize>)>>,
    /// `singletons[i] == i`; one-segment routes for placed fixture vehicles.
    singletons: Vec<usize>,
}

impl Simulator {
    pub fn new(net: &RoadNetwork) -> Self {
        let seg_lookup: HashMap<String, usize> = net.segments.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        let mut segs = Vec::with_capacity(net.segments.len());
        let mut offset = 0;
        for s in &net.segments {
            segs.push(SegInfo { cells: s.cell_count, offset, signal: None });
            offset += s.cell_count as usize;
        }
        for inter in net.intersections.iter().filter(|i| i.signalized) {
            let slot = inter.index.expect("validated network");
            for (sid, g) in &inter.group_of_segment {
                segs[seg_lookup[sid]].signal = Some((slot, *g));
            }
        }

        // Successors exclude immediate U-turns unless nothing else is possible.
        let mut out_of: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, s) in net.segments.iter().enumerate() {
            out_of.entry(s.from_node.as_str()).or_default().push(i);
        }
        let succ: Vec<Vec<usize>> = net
            .segments
            .iter()
            .map(|s| {
                let all = out_of.get(s.to_node.as_str()).cloned().unwrap_or_default();
                let no_uturn: Vec<usize> = all.iter().copied().filter(|&t| net.segments[t].to_node != s.from_node).collect();
                if no_uturn.is_empty() {
                    all
                } else {
                    no_uturn
                }
            })
            .collect();

        let entries: Vec<usize> = (0..net.segments.len()).filter(|&i| net.segments[i].is_entry).collect();
        let routes = entries
            .iter()
            .map(|&e| {
                let mut parent = vec![usize::MAX; net.segments.len()];
                parent[e] = e;
                let mut queue = VecDeque::from([e]);
                while let Some(s) = queue.pop_front() {
                    for &t in &succ[s] {
                        if parent[t] == usize::MAX {
                            parent[t] = s;
                            queue.push_back(t);
                        }
                    }
                }
                (0..net.segments.len())
                    .filter(|&x| net.segments[x].is_exit && parent[x] != usize::MAX)
                    .map(|x| {
                        let mut path = vec![x];
                        let mut cur = x;
                        while cur != e {
                            cur = parent[cur];
                            path.push(cur);
                        }
                        path.reverse();
                        (x, path)
                    })
                    .collect()
            })
            .collect();

        Self {
            segs,
            seg_ids: net.segments.iter().map(|s| s.id.clone()).collect(),
            seg_lookup,
            k: net.signal_count(),
            total_cells: offset,
            entries,
            routes,
            singletons: (0..net.segments.len()).collect(),
        }
    }

    pub fn signal_count(&self) -> usize {
        self.k
    }

    pub fn segment_id(&self, seg: usize) -> &str {
        &self.seg_ids[seg]
    }

    pub fn segment_by_id(&self, id: &str) -> Option<usize> {
        self.seg_lookup.get(id).copied()
    }

    pub fn segment_cells(&self, seg: usize) -> u32 {
        self.segs[seg].cells
    }

    /// Phase slot and group controlling the stop line of `seg`, if signalized.
    pub fn segment_signal(&self, seg: usize) -> Option<(usize, PhaseGroup)> {
        self.segs[seg].signal
    }

    /// Shortest route (segment indices) from an entry segment to an exit.
    pub fn route(&self, entry: usize, exit: usize) -> Option<&[usize]> {
        let pos = self.entries.iter().position(|&e| e == entry)?;
        self.routes[pos].iter().find(|(x, _)| *x == exit).map(|(_, r)| r.as_slice())
    }

    pub fn run(&self, setting: &SignalSetting, cfg: &SimConfig) -> Result<SimOutcome, SimError> {
        self.run_observed(setting, cfg, &mut ())
    }

    pub fn run_observed(
        &self,
        setting: &SignalSetting,
        cfg: &SimConfig,
        observer: &mut dyn SimObserver,
    ) -> Result<SimOutcome, SimError> {
        if setting.len() != self.k {
            return Err(SimError::SettingLength { expected: self.k, got: setting.len() });
        }
        cfg.validate()?;
        let demand = self.entry_demand(cfg)?;
        let mut pending = self.resolve_injections(cfg)?;
        pending.sort_by_key(|inj| inj.0);
        let mut pending: VecDeque<_> = pending.into();

        let mut world = World::new(self, setting);
        let mut rng = rng_from_seed(cfg.rng_seed);
        let mut order = Vec::new();
        for t in 0..cfg.duration_s {
            world.update_phases(t);
            world.spawn(t, &demand, &mut pending, &mut rng);
            world.collect_order(&mut order);
            world.update_speeds(&order, cfg, &mut rng);
            world.apply_moves(t, &order, observer, cfg.debug_checks)?;
            let inc = world.count_red_wait_with(cfg.wait_rule);
            world.record_wait(&inc, cfg.wait_rule);
            if cfg.debug_checks {
                world.check_consistency(t)?;
            }
            observer.on_step_end(t, &world);
        }
        let total: u64 = world.wait.iter().sum();
        Ok(SimOutcome {
            total_wait_s: total,
            per_intersection_wait_s: world.wait.clone(),
            vehicles_spawned: world.spawned,
            vehicles_completed: world.completed,
        })
    }

    fn entry_demand(&self, cfg: &SimConfig) -> Result<Vec<f64>, SimError> {
        for seg in cfg.demand.keys() {
            match self.seg_lookup.get(seg) {
                Some(i) if self.entries.contains(i) => {}
                Some(_) => return Err(SimError::Config(format!("demand references non-entry segment {seg}"))),
                None => return Err(SimError::Config(format!("demand references unknown segment {seg}"))),
            }
        }
        Ok(self.entries.iter().map(|&e| cfg.demand.get(&self.seg_ids[e]).copied().unwrap_or(cfg.demand_default)).collect())
    }

    /// (t, entry position, exit choice) for each injection.
    fn resolve_injections(&self, cfg: &SimConfig) -> Result<Vec<(u64, usize, Option<usize>)>, SimError> {
        cfg.injections
            .iter()
            .map(|inj| {
                let seg = self
                    .segment_by_id(&inj.segment)
                    .ok_or_else(|| SimError::Config(format!("injection on unknown segment {}", inj.segment)))?;
                let pos = self
                    .entries
                    .iter()
                    .position(|&e| e == seg)
                    .ok_or_else(|| SimError::Config(format!("injection on non-entry segment {}", inj.segment)))?;
                let exit = match &inj.exit {
                    None => None,
                    Some(x) => {
                        let xi =
                            self.segment_by_id(x).ok_or_else(|| SimError::Config(format!("injection exit {x} is unknown")))?;
                        let r = self.routes[pos]
                            .iter()
                            .position(|(e, _)| *e == xi)
                            .ok_or_else(|| SimError::Config(format!("exit {x} unreachable from {}", inj.segment)))?;
                        Some(r)
                    }
                };
                Ok((inj.t, pos, exit))
            })
            .collect()
    }
}

/// Convenience wrapper compiling the network on every call.
pub fn run_simulation(net: &RoadNetwork, setting: &SignalSetting, cfg: &SimConfig) -> Result<SimOutcome, SimError> {
    Simulator::new(net).run(setting, cfg)
}

#[derive(Debug, Clone)]
struct Vehicle {
    id: u64,
    seg: usize,
    cell: u32,
    speed: u32,
    entry: usize,
    route_idx: usize,
    route_pos: usize,
    wait_red_s: u64,
}

/// Read-only view of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VehicleView {
    pub id: u64,
    pub segment: usize,
    pub cell: u32,
    pub speed: u32,
    pub wait_red_s: u64,
}

/// Mutable simulation state for one run.
pub struct World<'a> {
    sim: &'a Simulator,
    setting: &'a SignalSetting,
    occ: Vec<u32>,
    slots: Vec<Option<Vehicle>>,
    free: Vec<u32>,
    green_a: Vec<bool>,
    wait: Vec<u64>,
    next_id: u64,
    spawned: u64,
    completed: u64,
}

impl<'a> World<'a> {
    pub fn new(sim: &'a Simulator, setting: &'a SignalSetting) -> Self {
        let mut w = Self {
            sim,
            setting,
            occ: vec![EMPTY; sim.total_cells],
            slots: Vec::new(),
            free: Vec::new(),
            green_a: vec![true; sim.k],
            wait: vec![0; sim.k],
            next_id: 0,
            spawned: 0,
            completed: 0,
        };
        w.update_phases(0);
        w
    }

    /// Sets the signal heads to their state at second `t`.
    pub fn update_phases(&mut self, t: u64) {
        for (g, tr) in self.green_a.iter_mut().zip(self.setting.triples()) {
            *g = tr.phase_at(t) == PhaseState::GreenA;
        }
    }

    fn is_green(&self, seg: usize) -> bool {
        match self.sim.segs[seg].signal {
            None => true,
            Some((slot, PhaseGroup::A)) => self.green_a[slot],
            Some((slot, PhaseGroup::B)) => !self.green_a[slot],
        }
    }

    #[inline]
    fn cell_index(&self, seg: usize, cell: u32) -> usize {
        self.sim.segs[seg].offset + cell as usize
    }

    /// Places a stationary-route vehicle directly, for fixtures. The vehicle
    /// is routed from `seg` to the first reachable exit when `seg` is an entry,
    /// otherwise it treats `seg` as its final segment.
    pub fn place_vehicle(&mut self, seg: usize, cell: u32, speed: u32) -> Result<u64, SimError> {
        if cell >= self.sim.segs[seg].cells {
            return Err(SimError::Config(format!("cell {cell} beyond segment {}", self.sim.seg_ids[seg])));
        }
        if self.occ[self.cell_index(seg, cell)] != EMPTY {
            return Err(SimError::Config("cell already occupied".into()));
        }
        let (entry, route_idx) = match self.sim.entries.iter().position(|&e| e == seg) {
            Some(p) if !self.sim.routes[p].is_empty() => (p, 0),
            _ => (usize::MAX, usize::MAX),
        };
        Ok(self.insert(Vehicle { id: 0, seg, cell, speed, entry, route_idx, route_pos: 0, wait_red_s: 0 }))
    }

    fn insert(&mut self, mut v: Vehicle) -> u64 {
        v.id = self.next_id;
        self.next_id += 1;
        self.spawned += 1;
        let idx = self.cell_index(v.seg, v.cell);
        let id = v.id;
        let slot = match self.free.pop() {
            Some(s) => {
                self.slots[s as usize] = Some(v);
                s
            }
            None => {
                self.slots.push(Some(v));
                (self.slots.len() - 1) as u32
            }
        };
        self.occ[idx] = slot;
        id
    }

    fn route_of(&self, v: &Vehicle) -> &'a [usize] {
        if v.entry == usize::MAX {
            // Fixture vehicles placed off-entry end their trip on that segment.
            return &self.sim.singletons[v.seg..v.seg + 1];
        }
        &self.sim.routes[v.entry][v.route_idx].1
    }

    fn spawn(&mut self, t: u64, demand: &[f64], pending: &mut VecDeque<(u64, usize, Option<usize>)>, rng: &mut ChaCha8Rng) {
        // Injections due now or earlier; blocked ones retry next second.
        let mut retry = VecDeque::new();
        while let Some(&(at, pos, exit)) = pending.front() {
            if at > t {
                break;
            }
            pending.pop_front();
            let seg = self.sim.entries[pos];
            let n_routes = self.sim.routes[pos].len();
            if n_routes == 0 {
                continue;
            }
            if self.occ[self.cell_index(seg, 0)] != EMPTY {
                retry.push_back((at, pos, exit));
                continue;
            }
            let route_idx = exit.unwrap_or_else(|| rng.random_range(0..n_routes));
            self.insert(Vehicle { id: 0, seg, cell: 0, speed: 0, entry: pos, route_idx, route_pos: 0, wait_red_s: 0 });
        }
        while let Some(r) = retry.pop_back() {
            pending.push_front(r);
        }

        for (pos, &p) in demand.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let u: f64 = rng.random();
            let seg = self.sim.entries[pos];
            let n_routes = self.sim.routes[pos].len();
            if u >= p || n_routes == 0 || self.occ[self.cell_index(seg, 0)] != EMPTY {
                continue;
            }
            let route_idx = rng.random_range(0..n_routes);
            self.insert(Vehicle { id: 0, seg, cell: 0, speed: 0, entry: pos, route_idx, route_pos: 0, wait_red_s: 0 });
        }
    }

    /// Vehicle slots by segment index, then front to back.
    fn collect_order(&self, order: &mut Vec<u32>) {
        order.clear();
        for seg in &self.sim.segs {
            for c in (0..seg.cells as usize).rev() {
                let s = self.occ[seg.offset + c];
                if s != EMPTY {
                    order.push(s);
                }
            }
        }
    }

    /// Free cells ahead of `v` along its route, up to `limit`, honouring red
    /// stop lines and the open boundary after the final segment.
    fn gap(&self, v: &Vehicle, limit: u32) -> u32 {
        let route = self.route_of(v);
        let (mut seg, mut cell, mut rp) = (v.seg, v.cell, v.route_pos);
        let mut gap = 0;
        while gap < limit {
            if cell + 1 < self.sim.segs[seg].cells {
                if self.occ[self.cell_index(seg, cell + 1)] != EMPTY {
                    break;
                }
                cell += 1;
            } else {
                if rp + 1 >= route.len() {
                    return limit;
                }
                if !self.is_green(seg) {
                    break;
                }
                let next = route[rp + 1];
                if self.occ[self.cell_index(next, 0)] != EMPTY {
                    break;
                }
                seg = next;
                cell = 0;
                rp += 1;
            }
            gap += 1;
        }
        gap
    }

    fn update_speeds(&mut self, order: &[u32], cfg: &SimConfig, rng: &mut ChaCha8Rng) {
        for &slot in order {
            let v = self.slots[slot as usize].as_ref().expect("live vehicle");
            let mut speed = (v.speed + 1).min(cfg.v_max);
            speed = speed.min(self.gap(v, speed));
            if cfg.slow_prob > 0.0 && rng.random::<f64>() < cfg.slow_prob {
                speed = speed.saturating_sub(1);
            }
            self.slots[slot as usize].as_mut().unwrap().speed = speed;
        }
    }

    fn apply_moves(&mut self, t: u64, order: &[u32], observer: &mut dyn SimObserver, debug: bool) -> Result<(), SimError> {
        for &slot in order {
            let mut v = self.slots[slot as usize].take().expect("live vehicle");
            let route = self.route_of(&v);
            let start = self.cell_index(v.seg, v.cell);
            self.occ[start] = EMPTY;
            let mut moved = 0;
            let mut exited = false;
            while moved < v.speed {
                if v.cell + 1 < self.sim.segs[v.seg].cells {
                    if self.occ[self.cell_index(v.seg, v.cell + 1)] != EMPTY {
                        break;
                    }
                    v.cell += 1;
                } else if v.route_pos + 1 >= route.len() {
                    exited = true;
                    break;
                } else {
                    let next = route[v.route_pos + 1];
                    if self.occ[self.cell_index(next, 0)] != EMPTY {
                        break;
                    }
                    if debug && !self.is_green(v.seg) {
                        return Err(SimError::Safety {
                            t,
                            message: format!("vehicle {} crossed red stop line of {}", v.id, self.sim.seg_ids[v.seg]),
                        });
                    }
                    observer.on_crossing(t, v.id, v.seg, next);
                    v.seg = next;
                    v.cell = 0;
                    v.route_pos += 1;
                }
                moved += 1;
            }
            if exited {
                self.completed += 1;
                self.free.push(slot);
                continue;
            }
            v.speed = moved;
            let idx = self.cell_index(v.seg, v.cell);
            if debug && self.occ[idx] != EMPTY {
                return Err(SimError::Safety { t, message: format!("cell collision on {}", self.sim.seg_ids[v.seg]) });
            }
            self.occ[idx] = slot;
            self.slots[slot as usize] = Some(v);
        }
        Ok(())
    }

    /// Red-light waiting increments for the current state, per intersection
    /// slot, under the default queue rule.
    pub fn count_red_wait(&self) -> Vec<u64> {
        self.count_red_wait_with(WaitRule::Queue)
    }

    pub fn count_red_wait_with(&self, rule: WaitRule) -> Vec<u64> {
        let mut inc = vec![0; self.sim.k];
        for v in self.slots.iter().flatten() {
            if let Some(slot) = self.waiting_slot(v, rule) {
                inc[slot] += 1;
            }
        }
        inc
    }

    fn waiting_slot(&self, v: &Vehicle, rule: WaitRule) -> Option<usize> {
        if v.speed != 0 || self.is_green(v.seg) {
            return None;
        }
        let (slot, _) = self.sim.segs[v.seg].signal?;
        match rule {
            WaitRule::Queue => Some(slot),
            WaitRule::LeaderOnly => (v.cell + 1 == self.sim.segs[v.seg].cells).then_some(slot),
        }
    }

    fn record_wait(&mut self, inc: &[u64], rule: WaitRule) {
        for (w, i) in self.wait.iter_mut().zip(inc) {
            *w += i;
        }
        let waiting: Vec<usize> = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.as_ref().and_then(|v| self.waiting_slot(v, rule)).map(|_| i))
            .collect();
        for i in waiting {
            self.slots[i].as_mut().unwrap().wait_red_s += 1;
        }
    }

    fn check_consistency(&self, t: u64) -> Result<(), SimError> {
        let mut seen = vec![false; self.occ.len()];
        for (slot, v) in self.slots.iter().enumerate() {
            let Some(v) = v else { continue };
            let idx = self.cell_index(v.seg, v.cell);
            if seen[idx] || self.occ[idx] != slot as u32 {
                return Err(SimError::Safety { t, message: format!("occupancy mismatch for vehicle {}", v.id) });
            }
            seen[idx] = true;
        }
        Ok(())
    }

    pub fn vehicles(&self) -> impl Iterator<Item = VehicleView> + '_ {
        self.slots.iter().flatten().map(|v| VehicleView {
            id: v.id,
            segment: v.seg,
            cell: v.cell,
            speed: v.speed,
            wait_red_s: v.wait_red_s,
        })
    }

    pub fn vehicles_present(&self) -> u64 {
        self.slots.iter().flatten().count() as u64
    }

    pub fn vehicles_spawned(&self) -> u64 {
        self.spawned
    }

    pub fn vehicles_completed(&self) -> u64 {
        self.completed
    }

    pub fn simulator(&self) -> &Simulator {
        self.sim
    }
}
