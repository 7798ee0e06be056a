//! Scenario files: TOML, one scenario per file.
//!
//! ```toml
//! name = "fork-attempt"
//! n = 9
//! rounds = 20
//! censored = [0]
//!
//! [delay]
//! model = "partially_synchronous"
//! gst = 500
//! pre_gst_max = 60
//! post_bound = 10
//!
//! [[players]]
//! ids = [0, 1]
//! role = "byzantine"
//! strategy = { kind = "pi_ds" }
//! ```
//!
//! Players not listed are honest. Omitted `t0` means `ceil(n/4) - 1`,
//! omitted `delta` means four times the settled network delay bound, and
//! omitted `seeds` means `0..20`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::adversary::{fork_partition, Strategy};
use crate::gametheory::UtilityParams;
use crate::netsim::{DelayModel, PartitionInterval};
use crate::trace::TxInput;
use crate::types::{default_t0, PlayerId, PlayerRole, Role, Round, Theta, Tick, Transaction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerGroup {
    pub ids: Vec<PlayerId>,
    pub role: Role,
    #[serde(default)]
    pub theta: Option<Theta>,
    #[serde(default = "pi0")]
    pub strategy: Strategy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Override {
    pub player: PlayerId,
    #[serde(default)]
    pub from_round: Round,
    pub strategy: Strategy,
}

fn pi0() -> Strategy {
    Strategy::Pi0
}

fn d_rounds() -> Round {
    20
}

fn d_block() -> usize {
    4
}

fn d_txr() -> usize {
    2
}

fn d_kappa() -> usize {
    crate::crypto::DEFAULT_KAPPA
}

fn d_cr() -> usize {
    3
}

fn d_delay() -> DelayModel {
    DelayModel::Synchronous { bound: 10 }
}

fn d_payload() -> u32 {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    #[serde(default)]
    pub t0: Option<usize>,
    /// Expected byzantine count; checked against `players` when given.
    #[serde(default)]
    pub t: Option<usize>,
    /// Expected rational count; checked against `players` when given.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "d_rounds")]
    pub rounds: Round,
    #[serde(default)]
    pub delta: Option<Tick>,
    #[serde(default = "d_block")]
    pub block_size: usize,
    #[serde(default = "d_txr")]
    pub tx_per_round: usize,
    #[serde(default = "d_payload")]
    pub payload_size: u32,
    /// Transaction ids in the censored set Z.
    #[serde(default)]
    pub censored: Vec<u64>,
    #[serde(default)]
    pub strict_step5: bool,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub time_limit: Option<Tick>,
    #[serde(default = "d_kappa")]
    pub kappa: usize,
    /// Censorship horizon in full leader rotations.
    #[serde(default = "d_cr")]
    pub cr_window: usize,
    #[serde(default = "d_delay")]
    pub delay: DelayModel,
    #[serde(default)]
    pub partitions: Vec<PartitionInterval>,
    #[serde(default)]
    pub utility: UtilityParams,
    #[serde(default)]
    pub players: Vec<PlayerGroup>,
    #[serde(default)]
    pub overrides: Vec<Override>,
}

impl ScenarioConfig {
    /// An all-honest scenario with every default.
    pub fn honest(n: usize) -> Self {
        ScenarioConfig {
            name: format!("honest-n{n}"),
            n,
            t0: None,
            t: None,
            k: None,
            rounds: d_rounds(),
            delta: None,
            block_size: d_block(),
            tx_per_round: d_txr(),
            payload_size: d_payload(),
            censored: vec![],
            strict_step5: false,
            seeds: None,
            time_limit: None,
            kappa: d_kappa(),
            cr_window: d_cr(),
            delay: d_delay(),
            partitions: vec![],
            utility: UtilityParams::default(),
            players: vec![],
            overrides: vec![],
        }
    }

    pub fn with_group(mut self, ids: &[u32], role: Role, theta: Option<u8>, strategy: Strategy) -> Self {
        self.players.push(PlayerGroup {
            ids: ids.iter().map(|&i| PlayerId(i)).collect(),
            role,
            theta: theta.and_then(Theta::new),
            strategy,
        });
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigErrors> {
        toml::from_str(text).map_err(|e| ConfigErrors(vec![ConfigError::Parse(e.to_string())]))
    }

    pub fn validate(&self) -> Result<Scenario, ConfigErrors> {
        Scenario::resolve(self.clone())
    }
}

pub fn load_config(path: &Path) -> Result<Scenario, ConfigErrors> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigErrors(vec![ConfigError::Io(format!("{}: {e}", path.display()))]))?;
    let mut cfg = ScenarioConfig::from_toml(&text)?;
    if cfg.name.is_empty() {
        cfg.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    cfg.validate()
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("n must be at least 1")]
    NoPlayers,
    #[error("t0 ({t0}) must be below n ({n})")]
    T0TooLarge { t0: usize, n: usize },
    #[error("t exceeds t0 ({t} > {t0})")]
    TExceedsT0 { t: usize, t0: usize },
    #[error("k + t must be below n ({k} + {t} >= {n})")]
    TooManyDeviators { k: usize, t: usize, n: usize },
    #[error("declared {what} = {declared} but players list {actual}")]
    CountMismatch { what: &'static str, declared: usize, actual: usize },
    #[error("player {0} is out of range")]
    BadPlayer(u32),
    #[error("player {0} is assigned twice")]
    DuplicatePlayer(u32),
    #[error("honest player {0} cannot follow {1}")]
    HonestDeviates(u32, &'static str),
    #[error("double-sign partitions overlap on player {0}")]
    OverlappingPartitions(u32),
    #[error("double-sign partition contains forking player {0}")]
    ForkerInPartition(u32),
    #[error("pi_pc needs a non-empty censored set")]
    EmptyCensoredSet,
    #[error("view_change_storm is for byzantine players only (player {0})")]
    StormNotByzantine(u32),
    #[error("override for player {0}, who is not byzantine or rational")]
    OverrideOnHonest(u32),
    #[error("discount factor must lie in (0, 1), got {0}")]
    BadDiscount(f64),
    #[error("alpha must be positive, got {0}")]
    BadAlpha(f64),
    #[error("collateral must be non-negative, got {0}")]
    BadCollateral(f64),
    #[error("rounds must be at least 1")]
    NoRounds,
    #[error("block_size must be at least 1")]
    NoBlockSpace,
    #[error("partition interval [{0}, {1}) is empty or reversed")]
    BadInterval(Tick, Tick),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        f.write_str(&msgs.join("; "))
    }
}

impl std::error::Error for ConfigErrors {}

/// One player after resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Seat {
    pub role: PlayerRole,
    pub strategy: Strategy,
    pub over: Option<(Round, Strategy)>,
}

/// A validated scenario with every default filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub t0: usize,
    pub delta: Tick,
    pub seeds: Vec<u64>,
    pub time_limit: Tick,
    pub seats: Vec<Seat>,
    pub hash: String,
}

impl Scenario {
    fn resolve(cfg: ScenarioConfig) -> Result<Scenario, ConfigErrors> {
        let mut errs = Vec::new();
        let n = cfg.n;
        if n == 0 {
            return Err(ConfigErrors(vec![ConfigError::NoPlayers]));
        }
        let t0 = cfg.t0.unwrap_or_else(|| default_t0(n));
        if t0 >= n {
            errs.push(ConfigError::T0TooLarge { t0, n });
        }
        if cfg.rounds == 0 {
            errs.push(ConfigError::NoRounds);
        }
        if cfg.block_size == 0 {
            errs.push(ConfigError::NoBlockSpace);
        }
        let u = &cfg.utility;
        if !(u.discount > 0.0 && u.discount < 1.0) {
            errs.push(ConfigError::BadDiscount(u.discount));
        }
        if u.alpha.is_nan() || u.alpha <= 0.0 {
            errs.push(ConfigError::BadAlpha(u.alpha));
        }
        if u.collateral.is_nan() || u.collateral < 0.0 {
            errs.push(ConfigError::BadCollateral(u.collateral));
        }
        for p in &cfg.partitions {
            if p.end <= p.start {
                errs.push(ConfigError::BadInterval(p.start, p.end));
            }
        }

        let mut seats: Vec<Seat> =
            vec![Seat { role: PlayerRole::honest(), strategy: Strategy::Pi0, over: None }; n];
        let mut seen = BTreeSet::new();
        for g in &cfg.players {
            for id in &g.ids {
                if id.index() >= n {
                    errs.push(ConfigError::BadPlayer(id.0));
                    continue;
                }
                if !seen.insert(*id) {
                    errs.push(ConfigError::DuplicatePlayer(id.0));
                }
                let role = match g.role {
                    Role::Honest => PlayerRole::honest(),
                    Role::Byzantine => PlayerRole::byzantine(),
                    Role::Rational => PlayerRole::rational(g.theta.unwrap_or(Theta::ONE)),
                };
                if g.role == Role::Honest && g.strategy != Strategy::Pi0 {
                    errs.push(ConfigError::HonestDeviates(id.0, g.strategy.name()));
                }
                if g.strategy == Strategy::ViewChangeStorm && g.role != Role::Byzantine {
                    errs.push(ConfigError::StormNotByzantine(id.0));
                }
                seats[id.index()] = Seat { role, strategy: g.strategy.clone(), over: None };
            }
        }
        for o in &cfg.overrides {
            match seats.get_mut(o.player.index()) {
                None => errs.push(ConfigError::BadPlayer(o.player.0)),
                Some(s) if s.role.role == Role::Honest => errs.push(ConfigError::OverrideOnHonest(o.player.0)),
                Some(s) => s.over = Some((o.from_round, o.strategy.clone())),
            }
        }

        let t = seats.iter().filter(|s| s.role.role == Role::Byzantine).count();
        let k = seats.iter().filter(|s| s.role.role == Role::Rational).count();
        if let Some(d) = cfg.t.filter(|d| *d != t) {
            errs.push(ConfigError::CountMismatch { what: "t", declared: d, actual: t });
        }
        if let Some(d) = cfg.k.filter(|d| *d != k) {
            errs.push(ConfigError::CountMismatch { what: "k", declared: d, actual: k });
        }
        if t > t0 {
            errs.push(ConfigError::TExceedsT0 { t, t0 });
        }
        if k + t >= n {
            errs.push(ConfigError::TooManyDeviators { k, t, n });
        }

        let uses = |pred: &dyn Fn(&Strategy) -> bool| {
            seats.iter().any(|s| pred(&s.strategy) || s.over.as_ref().is_some_and(|(_, o)| pred(o)))
        };
        if uses(&|s| *s == Strategy::PiPC) && cfg.censored.is_empty() {
            errs.push(ConfigError::EmptyCensoredSet);
        }

        // Double-sign partitions: validate explicit ones, fill in defaults.
        let is_ds = |s: &Strategy| matches!(s, Strategy::PiDS { .. });
        let forkers: BTreeSet<PlayerId> = (0..n)
            .filter(|&i| is_ds(&seats[i].strategy) || seats[i].over.as_ref().is_some_and(|(_, o)| is_ds(o)))
            .map(|i| PlayerId(i as u32))
            .collect();
        let others: Vec<PlayerId> = (0..n as u32).map(PlayerId).filter(|p| !forkers.contains(p)).collect();
        let (def_a, def_b) = fork_partition(n, t0.min(n - 1), forkers.len(), &others);
        let fill = |s: &mut Strategy, errs: &mut Vec<ConfigError>| {
            if let Strategy::PiDS { a, b, .. } = s {
                if a.is_empty() && b.is_empty() {
                    *a = def_a.clone();
                    *b = def_b.clone();
                }
                let sa: BTreeSet<_> = a.iter().collect();
                for p in b.iter() {
                    if sa.contains(p) {
                        errs.push(ConfigError::OverlappingPartitions(p.0));
                    }
                }
                for p in a.iter().chain(b.iter()) {
                    if forkers.contains(p) {
                        errs.push(ConfigError::ForkerInPartition(p.0));
                    }
                }
            }
        };
        for seat in seats.iter_mut() {
            fill(&mut seat.strategy, &mut errs);
            if let Some((_, o)) = seat.over.as_mut() {
                fill(o, &mut errs);
            }
        }

        if !errs.is_empty() {
            errs.dedup();
            return Err(ConfigErrors(errs));
        }
        let delta = cfg.delta.unwrap_or(4 * cfg.delay.settled_bound());
        let seeds = cfg.seeds.clone().unwrap_or_else(|| (0..20).collect());
        let pre = match cfg.delay {
            DelayModel::PartiallySynchronous { gst, pre_gst_max, .. } => gst + pre_gst_max,
            _ => 0,
        };
        let time_limit = cfg.time_limit.unwrap_or(pre + (cfg.rounds + 4) * 12 * delta);
        let hash = config_hash(&cfg);
        Ok(Scenario { config: cfg, t0, delta, seeds, time_limit, seats, hash })
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn roles(&self) -> Vec<PlayerRole> {
        self.seats.iter().map(|s| s.role).collect()
    }

    pub fn honest(&self) -> Vec<PlayerId> {
        (0..self.n()).filter(|&i| self.seats[i].role.role == Role::Honest).map(|i| PlayerId(i as u32)).collect()
    }

    /// Byzantine and rational players, all driven by the collusion controller.
    pub fn colluders(&self) -> Vec<PlayerId> {
        (0..self.n()).filter(|&i| self.seats[i].role.role != Role::Honest).map(|i| PlayerId(i as u32)).collect()
    }

    /// The transaction workload: `tx_per_round` new transactions per round.
    pub fn transactions(&self) -> Vec<TxInput> {
        let c = &self.config;
        let z: BTreeSet<u64> = c.censored.iter().copied().collect();
        (0..c.rounds * c.tx_per_round as u64)
            .map(|id| TxInput {
                round: id / c.tx_per_round.max(1) as u64,
                tx: Transaction { id, payload_size: c.payload_size, censored: z.contains(&id) },
            })
            .collect()
    }
}

/// Short hex digest of the config's canonical JSON form.
pub fn config_hash(cfg: &ScenarioConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let s = ScenarioConfig::from_toml("n = 9").unwrap().validate().unwrap();
        assert_eq!(s.t0, 2);
        assert_eq!(s.seeds, (0..20).collect::<Vec<_>>());
        assert_eq!(s.delta, 40);
        assert_eq!(s.config.cr_window, 3);
        assert_eq!(s.honest().len(), 9);
    }

    #[test]
    fn t_above_t0_rejected() {
        let text = "n = 9\nt0 = 2\n[[players]]\nids = [0, 1, 2]\nrole = \"byzantine\"\n";
        let e = ScenarioConfig::from_toml(text).unwrap().validate().unwrap_err();
        assert!(e.0.contains(&ConfigError::TExceedsT0 { t: 3, t0: 2 }));
        assert!(e.to_string().contains("t exceeds t0"));
    }

    #[test]
    fn overlapping_partitions_rejected() {
        let text = "n = 9\n[[players]]\nids = [0]\nrole = \"byzantine\"\n\
                    strategy = { kind = \"pi_ds\", a = [1, 2], b = [2, 3] }\n";
        let e = ScenarioConfig::from_toml(text).unwrap().validate().unwrap_err();
        assert_eq!(e.0, vec![ConfigError::OverlappingPartitions(2)]);
    }

    #[test]
    fn bad_discount_rejected() {
        let text = "n = 5\n[utility]\ndiscount = 1.0\n";
        let e = ScenarioConfig::from_toml(text).unwrap().validate().unwrap_err();
        assert_eq!(e.0, vec![ConfigError::BadDiscount(1.0)]);
    }

    #[test]
    fn unknown_field_is_parse_error() {
        assert!(matches!(ScenarioConfig::from_toml("n = 5\nbogus = 1").unwrap_err().0[0], ConfigError::Parse(_)));
    }

    #[test]
    fn default_fork_partition_filled() {
        let cfg = ScenarioConfig::honest(9).with_group(&[0, 1], Role::Byzantine, None, Strategy::double_sign(vec![], vec![]));
        let s = cfg.validate().unwrap();
        let Strategy::PiDS { a, b, .. } = &s.seats[0].strategy else { panic!() };
        assert_eq!(a.len(), 5);
        assert_eq!(b.len(), 2);
        assert!(!a.contains(&PlayerId(0)) && !b.contains(&PlayerId(1)));
    }

    #[test]
    fn pc_needs_censored_set() {
        let cfg = ScenarioConfig::honest(10).with_group(&[0], Role::Rational, Some(2), Strategy::PiPC);
        assert_eq!(cfg.validate().unwrap_err().0, vec![ConfigError::EmptyCensoredSet]);
    }

    #[test]
    fn workload_marks_censored() {
        let mut cfg = ScenarioConfig::honest(5);
        cfg.censored = vec![1];
        cfg.rounds = 3;
        let txs = cfg.validate().unwrap().transactions();
        assert_eq!(txs.len(), 6);
        assert!(txs[1].tx.censored && !txs[0].tx.censored);
        assert_eq!(txs[5].round, 2);
    }

    #[test]
    fn hash_changes_with_content() {
        let a = ScenarioConfig::honest(5);
        let mut b = a.clone();
        b.rounds += 1;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
    }
}
