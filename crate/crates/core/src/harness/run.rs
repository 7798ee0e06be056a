//! Builds replicas, the collusion controller and the network for one
//! (scenario, seed) pair and runs it.

use std::sync::Arc;

use crate::adversary::Controller;
use crate::crypto::setup_seeded;
use crate::engine::{EngineConfig, Replica};
use crate::netsim::{NetConfig, RunResult, SimError, Simulation};
use crate::trace::{PlayerInfo, TraceHeader};
use crate::types::PlayerId;

use super::config::Scenario;

pub fn run_seed(sc: &Scenario, seed: u64) -> Result<RunResult, SimError> {
    let c = &sc.config;
    let n = c.n;
    let (reg, keys) = setup_seeded(n, c.kappa, seed);
    let reg = Arc::new(reg);
    let inputs = sc.transactions();
    let txs = Arc::new(inputs.iter().map(|t| (t.round, t.tx)).collect::<Vec<_>>());

    let colluders = sc.colluders();
    let ctl = if colluders.is_empty() {
        None
    } else {
        let members = colluders
            .iter()
            .map(|p| (keys[p.index()].clone(), sc.seats[p.index()].strategy.clone()))
            .collect();
        let mut ctl = Controller::new(n, sc.t0, members);
        for p in &colluders {
            if let Some((from, s)) = &sc.seats[p.index()].over {
                ctl.set_override(*p, *from, s.clone());
            }
        }
        Some(ctl)
    };

    let replicas: Vec<Replica> = keys
        .into_iter()
        .map(|key| {
            let me = key.owner();
            let mut ec = EngineConfig::new(n, sc.t0);
            ec.delta = sc.delta;
            ec.block_size = c.block_size;
            ec.strict_step5 = c.strict_step5;
            ec.max_rounds = c.rounds;
            ec.exclude_censored = ctl.as_ref().is_some_and(|k| k.is_member(me) && k.censors(me));
            Replica::new(ec, key, reg.clone(), txs.clone())
        })
        .collect();

    let header = TraceHeader {
        scenario: c.name.clone(),
        config_hash: sc.hash.clone(),
        seed,
        n,
        t0: sc.t0,
        max_rounds: c.rounds,
        delta: sc.delta,
        kappa: c.kappa,
        gst: c.delay.gst(),
        players: (0..n)
            .map(|i| {
                let seat = &sc.seats[i];
                let mut strategy = seat.strategy.name().to_string();
                if let Some((from, s)) = &seat.over {
                    strategy = format!("{strategy}->{}@{from}", s.name());
                }
                PlayerInfo { id: PlayerId(i as u32), role: seat.role.role, theta: seat.role.theta, strategy }
            })
            .collect(),
        txs: inputs,
    };
    let net = NetConfig {
        delay: c.delay.clone(),
        partitions: c.partitions.clone(),
        seed,
        time_limit: sc.time_limit,
        kappa: c.kappa,
    };
    Simulation::new(net, reg, replicas, ctl).run(header)
}
