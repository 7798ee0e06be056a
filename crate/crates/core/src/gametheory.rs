//! Payoffs, realized system states, discounted utilities and the closed-form
//! threshold calculators.
//!
//! States are realized per run rather than taken in expectation: a round is
//! a Fork if two honest players finalized different blocks for it; otherwise
//! its leader-rotation window (`n` consecutive rounds starting at a multiple
//! of `n`) decides NP (no honest final block in the window) or CP (blocks
//! were finalized but a censored transaction available since the window's
//! start is still in no final block).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::adversary::Strategy;
use crate::engine::EngineEvent;
use crate::harness::config::{Override, ScenarioConfig};
use crate::harness::run::run_seed;
use crate::netsim::SimError;
use crate::trace::RunTrace;
use crate::types::{Digest, PlayerId, Round, SystemState, Theta};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UtilityParams {
    pub alpha: f64,
    /// Collateral L lost on a stash.
    #[serde(alias = "L")]
    pub collateral: f64,
    /// Discount factor δ.
    pub discount: f64,
}

impl Default for UtilityParams {
    fn default() -> Self {
        UtilityParams { alpha: 1.0, collateral: 10.0, discount: 0.9 }
    }
}

/// Payoff table f(σ, θ) in units of α: θ=3 gains from any failure, θ=2
/// from censorship or forks, θ=1 from forks only, θ=0 from none.
pub fn payoff_f(state: SystemState, theta: Theta, alpha: f64) -> f64 {
    use SystemState::*;
    let sign = match (state, theta.get()) {
        (Honest, _) => 0.0,
        (NoProgress, 3) => 1.0,
        (NoProgress, _) => -1.0,
        (ConditionalProgress, t) if t >= 2 => 1.0,
        (ConditionalProgress, _) => -1.0,
        (Fork, t) if t >= 1 => 1.0,
        (Fork, _) => -1.0,
    };
    sign * alpha
}

/// Honest final digests per round.
pub fn honest_finals(trace: &RunTrace) -> BTreeMap<Round, BTreeMap<PlayerId, Digest>> {
    let mut out: BTreeMap<Round, BTreeMap<PlayerId, Digest>> = BTreeMap::new();
    for (_, p, e) in trace.honest_engine_events() {
        if let EngineEvent::Finalize { round, digest, .. } = e {
            out.entry(*round).or_default().entry(p).or_insert(*digest);
        }
    }
    out
}

/// Round in which each player was first stashed at some honest replica.
pub fn stash_rounds(trace: &RunTrace) -> BTreeMap<PlayerId, Round> {
    let mut out: BTreeMap<PlayerId, Round> = BTreeMap::new();
    for (_, _, e) in trace.honest_engine_events() {
        if let EngineEvent::Stash { round, accused, .. } = e {
            for p in accused {
                let r = out.entry(*p).or_insert(*round);
                *r = (*r).min(*round);
            }
        }
    }
    out
}

/// Realized state for every round `0..max_rounds`.
pub fn round_states(trace: &RunTrace) -> Vec<SystemState> {
    let h = &trace.header;
    let (n, rounds) = (h.n as Round, h.max_rounds);
    let finals = honest_finals(trace);
    let mut final_txs: BTreeMap<Round, BTreeSet<u64>> = BTreeMap::new();
    for (_, _, e) in trace.honest_engine_events() {
        if let EngineEvent::Finalize { round, txs, .. } = e {
            final_txs.entry(*round).or_default().extend(txs.iter().copied());
        }
    }
    let censored = h.censored();
    let window_state = |start: Round| {
        let end = (start + n).min(rounds);
        if !finals.range(start..end).any(|(_, m)| !m.is_empty()) {
            return SystemState::NoProgress;
        }
        let included: BTreeSet<u64> = final_txs.range(..end).flat_map(|(_, s)| s.iter().copied()).collect();
        if censored.iter().any(|t| t.round <= start && !included.contains(&t.tx.id)) {
            return SystemState::ConditionalProgress;
        }
        SystemState::Honest
    };
    (0..rounds)
        .map(|r| {
            let forked = finals.get(&r).is_some_and(|m| m.values().collect::<BTreeSet<_>>().len() > 1);
            if forked {
                SystemState::Fork
            } else {
                // A trailing partial rotation is judged on the last n rounds.
                let start = r - r % n;
                window_state(if start + n > rounds { rounds.saturating_sub(n) } else { start })
            }
        })
        .collect()
}

/// One label for the whole run, with precedence Fork > NP > CP > honest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonState {
    pub state: SystemState,
    /// The trace hit its time limit; later rounds might change the label.
    pub provisional: bool,
}

pub fn classify_state(trace: &RunTrace) -> HorizonState {
    let states = round_states(trace);
    let finals = honest_finals(trace);
    let state = if states.contains(&SystemState::Fork) {
        SystemState::Fork
    } else if finals.is_empty() {
        SystemState::NoProgress
    } else if states.contains(&SystemState::ConditionalProgress) {
        SystemState::ConditionalProgress
    } else {
        SystemState::Honest
    };
    HorizonState { state, provisional: trace.footer.truncated }
}

/// f(σ_r, θ) minus L in the round the player was first stashed.
pub fn round_utility(states: &[SystemState], stash: Option<Round>, r: Round, theta: Theta, p: &UtilityParams) -> f64 {
    let f = payoff_f(states[r as usize], theta, p.alpha);
    if stash == Some(r) {
        f - p.collateral
    } else {
        f
    }
}

/// Σ δ^r u_r over the run, plus the last round's payoff repeated forever.
pub fn discounted_utility(states: &[SystemState], stash: Option<Round>, theta: Theta, p: &UtilityParams) -> f64 {
    assert!(p.discount > 0.0 && p.discount < 1.0, "discount must lie in (0, 1)");
    let mut total = 0.0;
    let mut w = 1.0;
    for r in 0..states.len() {
        total += w * round_utility(states, stash, r as Round, theta, p);
        w *= p.discount;
    }
    if let Some(last) = states.last() {
        total += w * payoff_f(*last, theta, p.alpha) / (1.0 - p.discount);
    }
    total
}

/// Utility of every player in a trace, using each player's own θ.
pub fn utilities(trace: &RunTrace, p: &UtilityParams) -> BTreeMap<PlayerId, f64> {
    let states = round_states(trace);
    let stash = stash_rounds(trace);
    trace
        .header
        .players
        .iter()
        .map(|pl| (pl.id, discounted_utility(&states, stash.get(&pl.id).copied(), pl.theta, p)))
        .collect()
}

/// The quorum interval `[floor((n + t0)/2) + 1, n - t0]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TauBounds {
    pub lo: usize,
    pub hi: usize,
}

impl TauBounds {
    pub fn feasible(&self) -> bool {
        self.lo <= self.hi
    }

    pub fn contains(&self, tau: usize) -> bool {
        self.lo <= tau && tau <= self.hi
    }
}

pub fn tau_bounds(n: usize, t0: usize) -> TauBounds {
    TauBounds { lo: (n + t0) / 2 + 1, hi: n.saturating_sub(t0) }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapGameParams {
    pub n: usize,
    pub t0: usize,
    pub t: usize,
    pub k: usize,
    /// Collusion gain G on a successful fork.
    pub gain: f64,
    /// Baiting reward R.
    pub reward: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrapThreshold {
    /// Smallest integer m with m > t0 + (k + t - n)/2, never negative.
    pub m_min: usize,
    /// Whether a single baiter is enough.
    pub unilateral: bool,
}

pub fn trap_min_baiters(p: &TrapGameParams) -> TrapThreshold {
    // m > (2 t0 + k + t - n) / 2 over the integers.
    let x = 2 * p.t0 as i64 + p.k as i64 + p.t as i64 - p.n as i64;
    let m = (x.div_euclid(2) + 1).max(0) as usize;
    TrapThreshold { m_min: m, unilateral: m <= 1 }
}

/// A 3-player game with two strategies each; `payoff[a][b][c]` is the
/// utility vector for profile (a, b, c).
pub type Game3 = [[[[i64; 3]; 2]; 2]; 2];

/// The three-player example with strategies {A, B}, {a, b}, {α, β}
/// (index 0 is the first strategy of each pair).
pub const THREE_PLAYER_GAME: Game3 = [
    [[[1, 1, 1], [1, 1, 0]], [[1, 0, 1], [-2, 2, 2]]],
    [[[0, 1, 1], [1, -2, 1]], [[2, 2, -2], [0, 0, 0]]],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Equilibrium {
    pub profile: [usize; 3],
    pub payoff: [i64; 3],
    /// Pareto-dominates another equilibrium and is dominated by none.
    pub pareto: bool,
}

fn at(g: &Game3, p: [usize; 3]) -> [i64; 3] {
    g[p[0]][p[1]][p[2]]
}

/// Pure Nash equilibria by exhaustive best-response check.
pub fn pure_equilibria(g: &Game3) -> Vec<Equilibrium> {
    let mut eqs = Vec::new();
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                let prof = [a, b, c];
                let u = at(g, prof);
                let stable = (0..3).all(|i| {
                    let mut dev = prof;
                    dev[i] = 1 - prof[i];
                    at(g, dev)[i] <= u[i]
                });
                if stable {
                    eqs.push(Equilibrium { profile: prof, payoff: u, pareto: false });
                }
            }
        }
    }
    let dominates = |x: &[i64; 3], y: &[i64; 3]| (0..3).all(|i| x[i] >= y[i]) && x != y;
    let snapshot = eqs.clone();
    for e in &mut eqs {
        let beats_one = snapshot.iter().any(|o| dominates(&e.payoff, &o.payoff));
        let beaten = snapshot.iter().any(|o| dominates(&o.payoff, &e.payoff));
        e.pareto = beats_one && !beaten;
    }
    eqs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DsicRow {
    pub seed: u64,
    pub u_honest: f64,
    pub u_deviate: f64,
    /// Round of the deviator's first stash, if any.
    pub stashed_at: Option<Round>,
    pub provisional: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DsicReport {
    pub scenario: String,
    pub player: PlayerId,
    pub deviation: String,
    pub rows: Vec<DsicRow>,
}

impl DsicReport {
    /// U(deviation) <= U(honest) on every seed.
    pub fn holds(&self) -> bool {
        self.rows.iter().all(|r| r.u_deviate <= r.u_honest + 1e-9)
    }
}

/// Runs `base` twice per seed: with `player` honest, and with `player`
/// switched to `deviation` from round 0. Everyone else keeps their
/// strategy. `player` must be a rational or byzantine seat.
pub fn dsic_probe(base: &ScenarioConfig, player: PlayerId, deviation: Strategy) -> Result<DsicReport, DsicError> {
    Ok(dsic_probe_all(base, player, &[deviation])?.remove(0))
}

/// One report per deviation; the honest baseline of each seed is run once.
pub fn dsic_probe_all(
    base: &ScenarioConfig,
    player: PlayerId,
    deviations: &[Strategy],
) -> Result<Vec<DsicReport>, DsicError> {
    let honest = base.validate().map_err(DsicError::Config)?;
    let deviated = deviations
        .iter()
        .map(|d| {
            let mut cfg = base.clone();
            cfg.overrides.retain(|o| o.player != player);
            cfg.overrides.push(Override { player, from_round: 0, strategy: d.clone() });
            cfg.validate().map_err(DsicError::Config)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let theta = honest.seats[player.index()].role.theta;
    let params = base.utility;
    let mut reports: Vec<DsicReport> = deviations
        .iter()
        .map(|d| DsicReport { scenario: base.name.clone(), player, deviation: d.name().into(), rows: vec![] })
        .collect();
    for &seed in &honest.seeds {
        let a = run_seed(&honest, seed).map_err(DsicError::Sim)?.trace;
        let ua = discounted_utility(&round_states(&a), stash_rounds(&a).get(&player).copied(), theta, &params);
        for (cfg, rep) in deviated.iter().zip(&mut reports) {
            let b = run_seed(cfg, seed).map_err(DsicError::Sim)?.trace;
            let sb = stash_rounds(&b).get(&player).copied();
            let ub = discounted_utility(&round_states(&b), sb, theta, &params);
            rep.rows.push(DsicRow {
                seed,
                u_honest: ua,
                u_deviate: ub,
                stashed_at: sb,
                provisional: a.footer.truncated || b.footer.truncated,
            });
        }
    }
    Ok(reports)
}

#[derive(Debug, thiserror::Error)]
pub enum DsicError {
    #[error("{0}")]
    Config(crate::harness::config::ConfigErrors),
    #[error("{0}")]
    Sim(SimError),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn th(v: u8) -> Theta {
        Theta::new(v).unwrap()
    }

    #[test]
    fn payoff_cells() {
        use SystemState::*;
        assert_eq!(payoff_f(Fork, th(1), 1.0), 1.0);
        assert_eq!(payoff_f(NoProgress, th(1), 1.0), -1.0);
        assert_eq!(payoff_f(NoProgress, th(3), 2.0), 2.0);
        assert_eq!(payoff_f(ConditionalProgress, th(2), 1.0), 1.0);
        for t in 0..4 {
            assert_eq!(payoff_f(Honest, th(t), 1.0), 0.0);
        }
    }

    #[test]
    fn geometric_tail() {
        let p = UtilityParams { alpha: 1.0, collateral: 10.0, discount: 0.5 };
        let u = discounted_utility(&[SystemState::NoProgress; 4], None, th(3), &p);
        assert!((u - 2.0).abs() < 1e-12);
        assert_eq!(discounted_utility(&[SystemState::Honest; 4], None, th(1), &p), 0.0);
    }

    #[test]
    fn single_penalty() {
        let p = UtilityParams { alpha: 1.0, collateral: 10.0, discount: 0.9 };
        let u = discounted_utility(&[SystemState::Honest; 5], Some(0), th(1), &p);
        assert!((u + 10.0).abs() < 1e-12);
        let u = discounted_utility(&[SystemState::Honest; 5], Some(2), th(1), &p);
        assert!((u + 10.0 * 0.81).abs() < 1e-12);
    }

    #[test]
    fn tau_examples() {
        assert_eq!(tau_bounds(10, 2), TauBounds { lo: 7, hi: 8 });
        assert_eq!(tau_bounds(5, 1), TauBounds { lo: 4, hi: 4 });
        assert!(!tau_bounds(4, 2).feasible());
    }

    #[test]
    fn trap_examples() {
        let p = |n, t0, t, k| TrapGameParams { n, t0, t, k, gain: 1.0, reward: 1.0 };
        assert_eq!(trap_min_baiters(&p(10, 3, 2, 4)), TrapThreshold { m_min: 2, unilateral: false });
        assert_eq!(trap_min_baiters(&p(7, 2, 1, 3)).m_min, 1);
        assert_eq!(trap_min_baiters(&p(10, 3, 3, 2)).m_min, 1);
        assert_eq!(trap_min_baiters(&p(12, 0, 0, 1)).m_min, 0);
    }

    #[test]
    fn three_player_equilibria() {
        let eqs = pure_equilibria(&THREE_PLAYER_GAME);
        let profiles: Vec<_> = eqs.iter().map(|e| e.profile).collect();
        assert_eq!(profiles, vec![[0, 0, 0], [1, 1, 1]]);
        assert!(eqs[0].pareto && !eqs[1].pareto);
    }
}
