//! Signal settings: three integers per signalized intersection.
//!
//! Each intersection runs a two-phase fixed-time plan. Group A is green for
//! `green_a` seconds, then group B for `green_b` seconds, and the offset is the
//! second at which group A first switches from red to green.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_from_seed;

pub const MIN_GREEN: i64 = 20;
pub const MAX_GREEN: i64 = 80;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SettingError {
    #[error("encoded setting has length {len}, expected 3*{k} = {}", 3 * k)]
    Length { len: usize, k: usize },
    #[error("intersection {index}: green_a {value} outside [{MIN_GREEN}, {MAX_GREEN}]")]
    GreenA { index: usize, value: i64 },
    #[error("intersection {index}: green_b {value} outside [{MIN_GREEN}, {MAX_GREEN}]")]
    GreenB { index: usize, value: i64 },
    #[error("intersection {index}: offset {value} outside [0, {max}]")]
    Offset { index: usize, value: i64, max: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseState {
    GreenA,
    GreenB,
}

/// Timing of one intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignalTriple {
    pub green_a: u32,
    pub green_b: u32,
    pub offset: u32,
}

impl SignalTriple {
    pub fn new(green_a: u32, green_b: u32, offset: u32) -> Self {
        Self { green_a, green_b, offset }
    }

    pub fn cycle(&self) -> u32 {
        self.green_a + self.green_b
    }

    fn check(&self, index: usize) -> Result<(), SettingError> {
        check_raw(index, self.green_a as i64, self.green_b as i64, self.offset as i64)
    }

    /// Phase shown at simulation second `t`.
    pub fn phase_at(&self, t: u64) -> PhaseState {
        phase_at(*self, t)
    }
}

fn check_raw(index: usize, green_a: i64, green_b: i64, offset: i64) -> Result<(), SettingError> {
    if !(MIN_GREEN..=MAX_GREEN).contains(&green_a) {
        return Err(SettingError::GreenA { index, value: green_a });
    }
    if !(MIN_GREEN..=MAX_GREEN).contains(&green_b) {
        return Err(SettingError::GreenB { index, value: green_b });
    }
    let max = green_a + green_b - 1;
    if !(0..=max).contains(&offset) {
        return Err(SettingError::Offset { index, value: offset, max });
    }
    Ok(())
}

/// `GreenA` iff `(t - offset) mod cycle < green_a`, with a euclidean modulus.
pub fn phase_at(triple: SignalTriple, t: u64) -> PhaseState {
    let cycle = triple.cycle() as i64;
    let shifted = (t as i64 - triple.offset as i64).rem_euclid(cycle);
    if shifted < triple.green_a as i64 {
        PhaseState::GreenA
    } else {
        PhaseState::GreenB
    }
}

/// A validated signal setting for `K` intersections.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct SignalSetting {
    triples: Vec<SignalTriple>,
}

impl SignalSetting {
    pub fn new(triples: Vec<SignalTriple>) -> Result<Self, SettingError> {
        for (i, t) in triples.iter().enumerate() {
            t.check(i)?;
        }
        Ok(Self { triples })
    }

    pub fn triples(&self) -> &[SignalTriple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Flat `[gA0, gB0, off0, gA1, ...]` layout.
    pub fn encode(&self) -> Vec<i64> {
        self.triples.iter().flat_map(|t| [t.green_a as i64, t.green_b as i64, t.offset as i64]).collect()
    }

    pub fn decode(values: &[i64], k: usize) -> Result<Self, SettingError> {
        if values.len() != 3 * k {
            return Err(SettingError::Length { len: values.len(), k });
        }
        let mut triples = Vec::with_capacity(k);
        for (i, chunk) in values.chunks_exact(3).enumerate() {
            check_raw(i, chunk[0], chunk[1], chunk[2])?;
            triples.push(SignalTriple::new(chunk[0] as u32, chunk[1] as u32, chunk[2] as u32));
        }
        Ok(Self { triples })
    }

    /// Clamps greens into range and wraps offsets into the cycle.
    pub fn repair(raw: &[(i64, i64, i64)]) -> Self {
        let triples = raw
            .iter()
            .map(|&(ga, gb, off)| {
                let ga = ga.clamp(MIN_GREEN, MAX_GREEN);
                let gb = gb.clamp(MIN_GREEN, MAX_GREEN);
                let off = off.rem_euclid(ga + gb);
                SignalTriple::new(ga as u32, gb as u32, off as u32)
            })
            .collect();
        Self { triples }
    }

    pub fn sample_uniform(k: usize, seed: u64) -> Self {
        Self::sample_with(k, &mut rng_from_seed(seed))
    }

    pub fn sample_with<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        let triples = (0..k).map(|_| sample_triple(rng)).collect();
        Self { triples }
    }
}

/// Greens uniform on the allowed range, offset uniform within the resulting cycle.
pub fn sample_triple<R: Rng + ?Sized>(rng: &mut R) -> SignalTriple {
    let ga = rng.random_range(MIN_GREEN..=MAX_GREEN) as u32;
    let gb = rng.random_range(MIN_GREEN..=MAX_GREEN) as u32;
    let off = rng.random_range(0..ga + gb);
    SignalTriple::new(ga, gb, off)
}

impl TryFrom<Vec<i64>> for SignalSetting {
    type Error = SettingError;

    fn try_from(v: Vec<i64>) -> Result<Self, Self::Error> {
        if !v.len().is_multiple_of(3) {
            return Err(SettingError::Length { len: v.len(), k: v.len() / 3 });
        }
        let k = v.len() / 3;
        Self::decode(&v, k)
    }
}

impl From<SignalSetting> for Vec<i64> {
    fn from(s: SignalSetting) -> Self {
        s.encode()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use PhaseState::*;

    /// Steps a two-phase controller second by second from t = 0. Before the
    /// offset the controller is part-way through the previous cycle.
    fn brute_schedule(t: SignalTriple, horizon: u64) -> Vec<PhaseState> {
        let cycle = t.cycle() as u64;
        // Position within the cycle at t = 0, counting from the start of green A.
        let mut pos = (cycle - (t.offset as u64 % cycle)) % cycle;
        let mut out = Vec::new();
        for _ in 0..horizon {
            out.push(if pos < t.green_a as u64 { GreenA } else { GreenB });
            pos += 1;
            if pos == cycle {
                pos = 0;
            }
        }
        out
    }

    #[test]
    fn worked_schedules() {
        let t = SignalTriple::new(20, 30, 0);
        assert_eq!(t.phase_at(19), GreenA);
        assert_eq!(t.phase_at(20), GreenB);
        assert_eq!(t.phase_at(50), GreenA);
        let t = SignalTriple::new(20, 30, 10);
        assert_eq!(t.phase_at(0), GreenB);
        assert_eq!(t.phase_at(10), GreenA);
        assert_eq!(t.phase_at(30), GreenB);
    }

    #[test]
    fn encode_length_for_21_intersections() {
        let s = SignalSetting::sample_uniform(21, 1);
        assert_eq!(s.encode().len(), 63);
    }

    #[test]
    fn decode_rejects_offset_equal_to_cycle() {
        assert_eq!(SignalSetting::decode(&[20, 20, 40], 1), Err(SettingError::Offset { index: 0, value: 40, max: 39 }));
        assert!(matches!(SignalSetting::decode(&[20, 20, 0, 81, 20, 0], 2), Err(SettingError::GreenA { index: 1, value: 81 })));
        assert!(matches!(SignalSetting::decode(&[20, 20], 1), Err(SettingError::Length { .. })));
    }

    #[test]
    fn repair_worked_example() {
        let s = SignalSetting::repair(&[(10, 90, 200)]);
        assert_eq!(s.triples()[0], SignalTriple::new(20, 80, 0));
        let valid = SignalSetting::repair(&[(35, 47, 81)]);
        assert_eq!(valid.triples()[0], SignalTriple::new(35, 47, 81));
    }

    #[test]
    fn sampled_settings_are_valid_and_seeded() {
        for seed in 0..10_000u64 {
            let s = SignalSetting::sample_uniform(1, seed);
            assert!(SignalSetting::decode(&s.encode(), 1).is_ok());
        }
        assert_eq!(SignalSetting::sample_uniform(5, 9), SignalSetting::sample_uniform(5, 9));
    }

    #[test]
    fn sampled_green_mean_is_fifty() {
        let mut rng = rng_from_seed(2024);
        let n = 100_000;
        let sum: u64 = (0..n).map(|_| sample_triple(&mut rng).green_a as u64).sum();
        let mean = sum as f64 / n as f64;
        assert!((49.5..=50.5).contains(&mean), "mean {mean}");
    }

    #[test]
    fn matches_brute_force_schedule() {
        let mut rng = rng_from_seed(11);
        for _ in 0..1000 {
            let tr = sample_triple(&mut rng);
            let horizon = 3 * tr.cycle() as u64;
            let table = brute_schedule(tr, horizon);
            for (t, expected) in table.iter().enumerate() {
                assert_eq!(tr.phase_at(t as u64), *expected, "{tr:?} at t={t}");
            }
        }
    }

    fn triple_strategy() -> impl Strategy<Value = SignalTriple> {
        (MIN_GREEN..=MAX_GREEN, MIN_GREEN..=MAX_GREEN)
            .prop_flat_map(|(a, b)| (Just(a), Just(b), 0..a + b))
            .prop_map(|(a, b, o)| SignalTriple::new(a as u32, b as u32, o as u32))
    }

    proptest! {
        #[test]
        fn phase_is_periodic(tr in triple_strategy(), t in 0u64..10_000) {
            prop_assert_eq!(tr.phase_at(t), tr.phase_at(t + tr.cycle() as u64));
        }

        #[test]
        fn green_durations_per_cycle(tr in triple_strategy()) {
            let start = tr.offset as u64;
            let a = (start..start + tr.cycle() as u64).filter(|&t| tr.phase_at(t) == GreenA).count();
            prop_assert_eq!(a, tr.green_a as usize);
            prop_assert_eq!(tr.cycle() as usize - a, tr.green_b as usize);
            prop_assert_eq!(tr.phase_at(start), GreenA);
        }

        #[test]
        fn repair_is_idempotent(raw in proptest::collection::vec((-500i64..500, -500i64..500, -2000i64..2000), 1..6)) {
            let once = SignalSetting::repair(&raw);
            prop_assert!(SignalSetting::decode(&once.encode(), raw.len()).is_ok());
            let again: Vec<_> = once.triples().iter().map(|t| (t.green_a as i64, t.green_b as i64, t.offset as i64)).collect();
            prop_assert_eq!(SignalSetting::repair(&again), once);
        }

        #[test]
        fn encode_decode_round_trip(seed in any::<u64>(), k in 1usize..25) {
            let s = SignalSetting::sample_uniform(k, seed);
            let v = s.encode();
            prop_assert_eq!(SignalSetting::decode(&v, k).unwrap().encode(), v);
        }
    }
}
