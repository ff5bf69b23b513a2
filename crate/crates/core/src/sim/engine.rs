use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

use super::event::{EventKind, EventQueue, SimEvent};
use super::runtime::{duration_of, is_cold};
use super::SimError;
use crate::aggregation::{aggregate_stale, weighted_fedavg, AggregationError, StalenessPolicy};
use crate::metrics::{self, CostParams, LossPoint, RoundRecord, Summary, SummaryContext};
use crate::model::{ClientHistory, ClientId, ModelParams, UpdateRecord};
use crate::scenario::{LearningRate, LossTarget, Scenario};
use crate::strategy::{apodotiko, baselines, fedlesscan, SelectionError, StrategyKind};
use crate::task::FederatedTask;

/// Hard cap on processed events per run.
pub const EVENT_BUDGET: u64 = 10_000_000;

const SELECTION_STREAM: u64 = 2;
const RUNTIME_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario: Scenario,
    pub loss_trace: Vec<LossPoint>,
    pub rounds: Vec<RoundRecord>,
    pub events: Vec<SimEvent>,
    pub summary: Summary,
    pub context: SummaryContext,
    /// Controller-side client state at the end of the run.
    pub histories: Vec<ClientHistory>,
}

/// Task, learning rate and loss target resolved from a scenario.
#[derive(Debug, Clone)]
pub struct ResolvedTask {
    pub task: FederatedTask,
    pub lr: f64,
    pub initial_loss: f64,
    pub optimum_loss: f64,
    pub target_loss: Option<f64>,
}

pub fn resolve_task(scenario: &Scenario) -> Result<ResolvedTask, SimError> {
    let t = &scenario.task;
    let task = FederatedTask::generate_with(t.dim, t.spread, &scenario.cardinalities(), t.seed, &t.options)?;
    let lr = match t.lr {
        LearningRate::Absolute(v) => v,
        LearningRate::RelativeToCurvature(r) => r / task.lambda_max(),
    };
    let initial_loss = task.global_loss(&ModelParams::zeros(t.dim))?;
    let optimum_loss = task.optimum_loss()?;
    let target_loss = scenario.target.map(|target| match target {
        LossTarget::Absolute(v) => v,
        LossTarget::RelativeGap(g) => optimum_loss + g * (initial_loss - optimum_loss),
    });
    Ok(ResolvedTask {
        task,
        lr,
        initial_loss,
        optimum_loss,
        target_loss,
    })
}

pub fn cost_params(scenario: &Scenario) -> CostParams {
    CostParams {
        per_invocation: scenario.per_invocation_cost,
        client_rates: scenario.clients.iter().map(|c| c.hardware.cost_rate).collect(),
    }
}

/// Aggregation rule a strategy applies when closing `round`.
pub(crate) fn aggregate_for(
    scenario: &Scenario,
    updates: &[UpdateRecord],
    round: u64,
) -> Result<ModelParams, AggregationError> {
    match scenario.strategy {
        StrategyKind::FedAvg | StrategyKind::FedProx => weighted_fedavg(updates),
        StrategyKind::FedLesScan => aggregate_stale(updates, round, &fedlesscan_policy(scenario)),
        StrategyKind::Apodotiko => aggregate_stale(updates, round, &scenario.params.apodotiko.staleness),
        StrategyKind::FedBuff => aggregate_stale(updates, round, &scenario.params.fedbuff.staleness),
    }
}

fn fedlesscan_policy(scenario: &Scenario) -> StalenessPolicy {
    StalenessPolicy::linear().with_max_age(scenario.params.fedlesscan.tau)
}

fn prox_mu(scenario: &Scenario) -> f64 {
    match scenario.strategy {
        StrategyKind::FedProx => scenario.params.fedprox.prox_mu,
        _ => 0.0,
    }
}

/// Runs the scenario to its stopping rule.
pub fn simulate(scenario: &Scenario) -> Result<RunResult, SimError> {
    scenario
        .validate()
        .map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
    let resolved = resolve_task(scenario)?;
    Engine::new(scenario, resolved).run()
}

#[derive(Debug, Clone, Copy)]
enum Pending {
    Arrival(u64),
    Crash(u64),
    RoundTimeout(u64),
    /// Deferred Apodotiko trigger, so simultaneous arrivals share one aggregation.
    Check,
}

struct Invocation {
    client: ClientId,
    round: u64,
    dispatch_time: f64,
    duration: f64,
    params: Option<ModelParams>,
}

struct Engine<'a> {
    scenario: &'a Scenario,
    task: FederatedTask,
    lr: f64,
    target: Option<f64>,
    context: SummaryContext,
    cost: CostParams,

    queue: EventQueue<Pending>,
    log: Vec<SimEvent>,
    now: f64,
    processed: u64,
    selection_rng: ChaCha8Rng,
    runtime_rng: ChaCha8Rng,

    histories: Vec<ClientHistory>,
    invocations: Vec<Invocation>,
    global: ModelParams,
    loss: f64,
    round: u64,
    stopped: bool,
    stop_time: f64,

    // Synchronous round state.
    round_open: bool,
    waiting_for_clients: bool,
    round_selected: Vec<ClientId>,
    outstanding: usize,
    in_time: Vec<u64>,
    // Arrivals not yet aggregated (FedLesScan late arrivals, Apodotiko results).
    store: Vec<u64>,
    check_pending: bool,
    buffer: Vec<UpdateRecord>,
    buffer_invocations: Vec<u64>,
    in_flight: usize,

    rounds: BTreeMap<u64, RoundRecord>,
    trace: Vec<LossPoint>,
    total_cost: f64,
    counts: (u64, u64, u64),
    checks: u64,
    aggregations: u64,
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario, resolved: ResolvedTask) -> Self {
        let mut selection_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        selection_rng.set_stream(SELECTION_STREAM);
        let mut runtime_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        runtime_rng.set_stream(RUNTIME_STREAM);
        let cost = cost_params(scenario);
        let context = SummaryContext {
            num_clients: scenario.clients.len(),
            cost: cost.clone(),
            initial_loss: resolved.initial_loss,
            optimum_loss: resolved.optimum_loss,
            target_loss: resolved.target_loss,
        };
        Self {
            scenario,
            global: ModelParams::zeros(resolved.task.dim()),
            loss: resolved.initial_loss,
            task: resolved.task,
            lr: resolved.lr,
            target: resolved.target_loss,
            context,
            cost,
            queue: EventQueue::new(),
            log: Vec::new(),
            now: 0.0,
            processed: 0,
            selection_rng,
            runtime_rng,
            histories: vec![ClientHistory::default(); scenario.clients.len()],
            invocations: Vec::new(),
            round: 1,
            stopped: false,
            stop_time: 0.0,
            round_open: false,
            waiting_for_clients: false,
            round_selected: Vec::new(),
            outstanding: 0,
            in_time: Vec::new(),
            store: Vec::new(),
            check_pending: false,
            buffer: Vec::new(),
            buffer_invocations: Vec::new(),
            in_flight: 0,
            rounds: BTreeMap::new(),
            trace: Vec::new(),
            total_cost: 0.0,
            counts: (0, 0, 0),
            checks: 0,
            aggregations: 0,
        }
    }

    fn k(&self) -> usize {
        self.scenario.clients_per_round
    }

    fn emit(&mut self, kind: EventKind) {
        self.log.push(SimEvent {
            seq: self.log.len() as u64,
            time: self.now,
            kind,
        });
    }

    fn record(&mut self, round: u64) -> &mut RoundRecord {
        self.rounds.entry(round).or_insert_with(|| RoundRecord::new(round))
    }

    fn run(mut self) -> Result<RunResult, SimError> {
        self.start_round()?;
        while let Some((time, pending)) = self.queue.pop() {
            self.processed += 1;
            if self.processed > EVENT_BUDGET {
                return Err(SimError::StoppingRuleUnreachable(EVENT_BUDGET));
            }
            self.now = time;
            match pending {
                Pending::Arrival(inv) => self.on_arrival(inv)?,
                Pending::Crash(inv) => self.on_crash(inv)?,
                Pending::RoundTimeout(r) => self.on_round_timeout(r)?,
                Pending::Check => self.on_check()?,
            }
        }
        if !self.stopped {
            return Err(SimError::StoppingRuleUnreachable(self.processed));
        }
        self.finish()
    }

    fn finish(self) -> Result<RunResult, SimError> {
        let rounds: Vec<RoundRecord> = self.rounds.into_values().collect();
        let histogram: Vec<u64> = self.histories.iter().map(|h| h.invocation_count).collect();
        let (dispatches, completions, misses) = self.counts;
        let cold = rounds.iter().map(|r| r.cold).sum::<u64>();
        let summary = Summary {
            final_loss: self.loss,
            initial_loss: self.context.initial_loss,
            optimum_loss: self.context.optimum_loss,
            target_loss: self.target,
            time_to_target: self.target.and_then(|t| metrics::time_to_target(&self.trace, t)),
            total_time: self.stop_time,
            rounds: self.checks,
            aggregations: self.aggregations,
            dispatches,
            completions,
            misses,
            cost: self.total_cost,
            bias: metrics::selection_bias(&histogram)?,
            invocation_histogram: histogram,
            cold_start_ratio: cold as f64 / dispatches.max(1) as f64,
            mean_eur: metrics::mean_eur(&rounds),
        };
        Ok(RunResult {
            scenario: self.scenario.clone(),
            loss_trace: self.trace,
            rounds,
            events: self.log,
            summary,
            context: self.context,
            histories: self.histories,
        })
    }

    // ---- selection and dispatch ----

    fn select(&mut self, k: usize) -> Result<Vec<ClientId>, SelectionError> {
        let s = self.scenario;
        match s.strategy {
            StrategyKind::FedAvg | StrategyKind::FedProx | StrategyKind::FedBuff => {
                baselines::select_random(&self.histories, k, &mut self.selection_rng)
            }
            StrategyKind::FedLesScan => {
                let cfg = &s.params.fedlesscan;
                fedlesscan::select_clients_fedlesscan(
                    &s.clients,
                    &self.histories,
                    k,
                    self.round,
                    s.max_rounds,
                    cfg.max_training_time.unwrap_or(s.round_timeout),
                    cfg,
                    &mut self.selection_rng,
                )
            }
            StrategyKind::Apodotiko => apodotiko::select_clients(
                &s.clients,
                &mut self.histories,
                k,
                &s.params.apodotiko,
                &mut self.selection_rng,
            ),
        }
    }

    fn select_or_empty(&mut self, k: usize) -> Result<Vec<ClientId>, SimError> {
        match self.select(k) {
            Ok(ids) => Ok(ids),
            Err(SelectionError::NoAvailableClients) => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    fn dispatch(&mut self, client: ClientId) -> Result<(), SimError> {
        let s = self.scenario;
        let profile = &s.clients[client.index()];
        let history = &mut self.histories[client.index()];
        if history.is_busy() {
            return Err(SimError::Internal(format!("dispatch of busy client {client}")));
        }
        let cold = is_cold(history.last_finish_time, self.now, s.idle_threshold);
        history.mark_busy(client)?;

        let crashed = self.runtime_rng.random_bool(profile.dropout_prob.clamp(0.0, 1.0));
        let duration = duration_of(profile, profile.work_units(), cold, &mut self.runtime_rng);
        let params = if crashed {
            None
        } else {
            let (p, _) = self.task.local_train(
                client,
                &self.global,
                profile.epochs,
                profile.batch_size,
                self.lr,
                prox_mu(s),
                &self.global,
            )?;
            Some(p)
        };

        let id = self.invocations.len() as u64;
        self.invocations.push(Invocation {
            client,
            round: self.round,
            dispatch_time: self.now,
            duration,
            params,
        });
        if crashed {
            self.queue.push(self.now + s.round_timeout, Pending::Crash(id));
        } else {
            self.queue.push(self.now + duration, Pending::Arrival(id));
        }
        self.counts.0 += 1;
        self.in_flight += 1;
        let round = self.round;
        let r = self.record(round);
        r.selected += 1;
        r.cold += cold as u64;
        self.emit(EventKind::Dispatch {
            invocation: id,
            client,
            round,
            cold,
        });
        Ok(())
    }

    fn start_round(&mut self) -> Result<(), SimError> {
        let s = self.scenario;
        match s.strategy {
            StrategyKind::FedBuff => self.top_up_fedbuff(),
            StrategyKind::Apodotiko => {
                let k = self.k();
                for id in self.select_or_empty(k)? {
                    self.dispatch(id)?;
                }
                self.queue
                    .push(self.now + s.round_timeout, Pending::RoundTimeout(self.round));
                Ok(())
            }
            _ => {
                let k = self.k();
                let selected = self.select_or_empty(k)?;
                if selected.is_empty() {
                    self.waiting_for_clients = true;
                    return Ok(());
                }
                self.waiting_for_clients = false;
                for &id in &selected {
                    self.dispatch(id)?;
                }
                self.round_open = true;
                self.outstanding = selected.len();
                self.round_selected = selected;
                self.in_time.clear();
                self.queue
                    .push(self.now + s.round_timeout, Pending::RoundTimeout(self.round));
                Ok(())
            }
        }
    }

    fn top_up_fedbuff(&mut self) -> Result<(), SimError> {
        let want = self.k().saturating_sub(self.in_flight);
        if want == 0 {
            return Ok(());
        }
        for id in self.select_or_empty(want)? {
            self.dispatch(id)?;
        }
        Ok(())
    }

    // ---- event handlers ----

    fn on_arrival(&mut self, inv: u64) -> Result<(), SimError> {
        let (client, origin, duration) = {
            let i = &self.invocations[inv as usize];
            (i.client, i.round, i.duration)
        };
        self.histories[client.index()].record_completion(client, duration, self.now)?;
        self.total_cost += self.cost.invocation_cost(client.index(), duration)?;
        self.counts.1 += 1;
        self.in_flight -= 1;
        self.emit(EventKind::Completion {
            invocation: inv,
            client,
            round: origin,
            duration,
        });
        if self.stopped {
            return Ok(());
        }

        match self.scenario.strategy {
            StrategyKind::FedAvg | StrategyKind::FedProx | StrategyKind::FedLesScan => {
                if self.round_open && origin == self.round {
                    self.in_time.push(inv);
                    self.outstanding -= 1;
                    if self.outstanding == 0 {
                        self.end_sync_round()?;
                    }
                } else if self.scenario.strategy == StrategyKind::FedLesScan {
                    let h = &mut self.histories[client.index()];
                    if h.missed_rounds.contains(&origin) {
                        fedlesscan::clear_missed_on_late_arrival(h, origin)?;
                    }
                    self.store.push(inv);
                }
                if self.waiting_for_clients {
                    self.start_round()?;
                }
            }
            StrategyKind::Apodotiko => {
                self.store.push(inv);
                let admissible = self.admissible_in_store();
                if !self.check_pending
                    && apodotiko::should_aggregate(admissible, self.k(), &self.scenario.params.apodotiko)
                {
                    self.check_pending = true;
                    self.queue.push(self.now, Pending::Check);
                }
            }
            StrategyKind::FedBuff => {
                let update = self.update_record(inv);
                self.buffer_invocations.push(inv);
                let flush = baselines::fedbuff_step(&mut self.buffer, update, &self.scenario.params.fedbuff, self.round)?;
                if self.buffer.is_empty() {
                    let members = std::mem::take(&mut self.buffer_invocations);
                    if let Some(flush) = flush {
                        let policy = self.scenario.params.fedbuff.staleness;
                        let round = self.round;
                        let included: Vec<u64> = members
                            .into_iter()
                            .filter(|&i| policy.admits(self.invocations[i as usize].round, round))
                            .collect();
                        debug_assert_eq!(included.len(), flush.included.len());
                        self.global = flush.params;
                        self.close_round(included)?;
                    }
                }
                if !self.stopped {
                    self.top_up_fedbuff()?;
                }
            }
        }
        Ok(())
    }

    fn on_crash(&mut self, inv: u64) -> Result<(), SimError> {
        let (client, origin, start) = {
            let i = &self.invocations[inv as usize];
            (i.client, i.round, i.dispatch_time)
        };
        self.histories[client.index()].release_after_miss(client)?;
        self.total_cost += self.cost.invocation_cost(client.index(), self.now - start)?;
        self.counts.2 += 1;
        self.in_flight -= 1;
        self.emit(EventKind::Miss {
            invocation: inv,
            client,
            round: origin,
        });
        if self.stopped {
            return Ok(());
        }
        match self.scenario.strategy {
            StrategyKind::FedAvg | StrategyKind::FedProx | StrategyKind::FedLesScan => {
                if self.round_open && origin == self.round {
                    self.outstanding -= 1;
                    if self.outstanding == 0 {
                        self.end_sync_round()?;
                    }
                }
                if self.waiting_for_clients {
                    self.start_round()?;
                }
            }
            StrategyKind::FedBuff => self.top_up_fedbuff()?,
            StrategyKind::Apodotiko => {}
        }
        Ok(())
    }

    fn on_round_timeout(&mut self, r: u64) -> Result<(), SimError> {
        if self.stopped || r != self.round {
            return Ok(());
        }
        match self.scenario.strategy {
            StrategyKind::Apodotiko => {
                self.emit(EventKind::RoundTimeout { round: r });
                self.aggregate_async()
            }
            StrategyKind::FedBuff => Ok(()),
            _ => {
                if !self.round_open {
                    return Ok(());
                }
                self.emit(EventKind::RoundTimeout { round: r });
                self.end_sync_round()
            }
        }
    }

    fn on_check(&mut self) -> Result<(), SimError> {
        self.check_pending = false;
        if self.stopped {
            return Ok(());
        }
        let admissible = self.admissible_in_store();
        if apodotiko::should_aggregate(admissible, self.k(), &self.scenario.params.apodotiko) {
            self.aggregate_async()?;
        }
        Ok(())
    }

    // ---- aggregation ----

    fn update_record(&self, inv: u64) -> UpdateRecord {
        let i = &self.invocations[inv as usize];
        UpdateRecord {
            client: i.client,
            origin_round: i.round,
            params: i.params.clone().expect("arrived invocations carry parameters"),
            cardinality: self.scenario.clients[i.client.index()].cardinality,
            arrival_time: i.dispatch_time + i.duration,
        }
    }

    fn admissible_in_store(&self) -> usize {
        let policy = &self.scenario.params.apodotiko.staleness;
        self.store
            .iter()
            .filter(|&&i| policy.admits(self.invocations[i as usize].round, self.round))
            .count()
    }

    fn end_sync_round(&mut self) -> Result<(), SimError> {
        self.round_open = false;
        let round = self.round;
        if self.scenario.strategy == StrategyKind::FedLesScan {
            let selected = std::mem::take(&mut self.round_selected);
            let mut was_selected = vec![false; self.histories.len()];
            for id in &selected {
                was_selected[id.index()] = true;
            }
            let arrived: Vec<ClientId> = self
                .in_time
                .iter()
                .map(|&i| self.invocations[i as usize].client)
                .collect();
            for id in selected {
                let on_time = arrived.contains(&id);
                fedlesscan::update_cooldown(&mut self.histories[id.index()], on_time, round);
            }
            for (i, h) in self.histories.iter_mut().enumerate() {
                if !was_selected[i] {
                    fedlesscan::decay_cooldown(h);
                }
            }
        } else {
            self.round_selected.clear();
        }

        let mut candidates = std::mem::take(&mut self.in_time);
        if self.scenario.strategy == StrategyKind::FedLesScan {
            let policy = fedlesscan_policy(self.scenario);
            candidates.extend(
                std::mem::take(&mut self.store)
                    .into_iter()
                    .filter(|&i| policy.admits(self.invocations[i as usize].round, round)),
            );
        }
        if !candidates.is_empty() {
            let updates: Vec<UpdateRecord> = candidates.iter().map(|&i| self.update_record(i)).collect();
            self.global = aggregate_for(self.scenario, &updates, round)?;
        }
        self.close_round(candidates)?;
        if !self.stopped {
            self.start_round()?;
        }
        Ok(())
    }

    fn aggregate_async(&mut self) -> Result<(), SimError> {
        let round = self.round;
        let policy = self.scenario.params.apodotiko.staleness;
        let included: Vec<u64> = std::mem::take(&mut self.store)
            .into_iter()
            .filter(|&i| policy.admits(self.invocations[i as usize].round, round))
            .collect();
        if !included.is_empty() {
            let updates: Vec<UpdateRecord> = included.iter().map(|&i| self.update_record(i)).collect();
            self.global = aggregate_for(self.scenario, &updates, round)?;
        }
        self.close_round(included)?;
        if !self.stopped {
            self.start_round()?;
        }
        Ok(())
    }

    /// Logs the round close, updates traces and records, applies the
    /// stopping rule and advances the round counter.
    fn close_round(&mut self, included: Vec<u64>) -> Result<(), SimError> {
        let round = self.round;
        let aggregated = !included.is_empty();
        if aggregated {
            self.loss = self.task.global_loss(&self.global)?;
            if !self.loss.is_finite() {
                return Err(SimError::Diverged(round));
            }
            self.aggregations += 1;
            metrics::push_trace_point(&mut self.trace, self.now, self.loss);
        }
        self.checks += 1;
        let mut stale = 0;
        for &i in &included {
            let origin = self.invocations[i as usize].round;
            stale += (origin < round) as u64;
            self.record(origin).successful += 1;
        }
        let (loss, now) = (self.loss, self.now);
        let r = self.record(round);
        r.stale = stale;
        r.loss = Some(loss);
        r.sim_time = Some(now);
        self.emit(EventKind::AggregationCheck {
            round,
            included,
            loss,
        });

        let reached = aggregated && self.target.is_some_and(|t| self.loss <= t);
        self.round += 1;
        if reached || self.round > self.scenario.max_rounds {
            self.stopped = true;
            self.stop_time = self.now;
        }
        Ok(())
    }
}

/// Recomputes the loss trace from a persisted event log by re-running every
/// logged local training and aggregation.
pub fn replay_loss_trace(scenario: &Scenario, events: &[SimEvent]) -> Result<Vec<LossPoint>, SimError> {
    let resolved = resolve_task(scenario)?;
    let task = &resolved.task;
    let mut global = ModelParams::zeros(task.dim());
    let mut trained: HashMap<u64, UpdateRecord> = HashMap::new();
    let mut trace = Vec::new();
    for e in events {
        match &e.kind {
            EventKind::Dispatch {
                invocation,
                client,
                round,
                ..
            } => {
                let profile = &scenario.clients[client.index()];
                let (params, _) = task.local_train(
                    *client,
                    &global,
                    profile.epochs,
                    profile.batch_size,
                    resolved.lr,
                    prox_mu(scenario),
                    &global,
                )?;
                trained.insert(
                    *invocation,
                    UpdateRecord {
                        client: *client,
                        origin_round: *round,
                        params,
                        cardinality: profile.cardinality,
                        arrival_time: f64::NAN,
                    },
                );
            }
            EventKind::AggregationCheck { round, included, .. } if !included.is_empty() => {
                let updates = included
                    .iter()
                    .map(|i| {
                        trained
                            .get(i)
                            .cloned()
                            .ok_or_else(|| SimError::Internal(format!("unknown invocation {i}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                global = aggregate_for(scenario, &updates, *round)?;
                metrics::push_trace_point(&mut trace, e.time, task.global_loss(&global)?);
            }
            _ => {}
        }
    }
    Ok(trace)
}
