//! Synchronous federated rounds: deploy, adapt in parallel client legs,
//! transmit through a byte-stream transport, aggregate, evaluate the global
//! model per client domain.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use bn_adapt::{capture_support_stats, mix_statistics, source_stats, AdaptConfig, EffectiveStats};
use domain_data::{sample_episode, Dataset, DomainParams, Episode};
use nn_engine::{dataset_loss, evaluate, ModelParams, ModelSpec, RngStream};

use crate::error::{invalid_arg, FedError, Result};
use crate::transport::{read_frame, stream_pair, write_frame, Stream, TransportKind};
use crate::wire::{
    decode_client_update, decode_global, encode_client_update, encode_global, ClientUpdate,
    GlobalCoefficients,
};
use crate::aggregate::aggregate_fedavg;

/// Server-side session state. Read-only during a round; the global
/// coefficients advance between rounds through a single writer.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub global: Option<GlobalCoefficients>,
}

impl ServerState {
    pub fn new(spec: ModelSpec, params: ModelParams) -> Self {
        Self {
            spec,
            params,
            global: None,
        }
    }
}

/// One client device: its id, style parameters and local dataset.
#[derive(Debug, Clone)]
pub struct ClientSite {
    pub id: u32,
    pub domain: DomainParams,
    pub data: Dataset,
}

#[derive(Debug, Clone)]
pub struct RoundConfig {
    pub k: usize,
    pub q: usize,
    pub adapt: AdaptConfig,
    pub seed: u64,
    pub transport: TransportKind,
    /// Upper bound on parallel client legs; 1 means sequential.
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct ClientMetrics {
    pub client_id: u32,
    pub zero_shot_acc: f32,
    pub post_adapt_acc: f32,
    pub global_acc: f32,
    pub query_ce: f32,
    pub payload_bytes: usize,
    pub n_samples: u32,
}

#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: u32,
    pub clients: Vec<ClientMetrics>,
    pub global: GlobalCoefficients,
    /// Sample-weighted mean query cross-entropy under the global model.
    pub global_wce: f64,
}

/// Step 2: hand the server model to a client. The copy is independently
/// owned; client-side mutation never reaches the server parameters.
pub fn deploy(server_params: &ModelParams) -> ModelParams {
    server_params.clone()
}

/// Bind aggregated coefficients with freshly captured support statistics
/// into effective statistics for adapt-mode evaluation on a client domain.
pub fn apply_global(
    spec: &ModelSpec,
    deployed: &ModelParams,
    g: &GlobalCoefficients,
    support: &Dataset,
) -> Result<EffectiveStats> {
    if g.coefficients.n_layers() != spec.n_bn_layers() {
        return invalid_arg(format!(
            "global coefficients have {} layers, model has {}",
            g.coefficients.n_layers(),
            spec.n_bn_layers()
        ));
    }
    let stats = capture_support_stats(spec, deployed, support)?;
    let src = source_stats(deployed);
    Ok(mix_statistics(&src, &stats.layers, &g.coefficients)?)
}

struct LegOutcome {
    episode: Episode,
    zero_shot_acc: f32,
    post_adapt_acc: f32,
    payload_bytes: usize,
}

fn client_leg(
    state: &ServerState,
    site: &ClientSite,
    round: u32,
    cfg: &RoundConfig,
    stream: &mut dyn Stream,
    expect_global: bool,
) -> Result<LegOutcome> {
    let deployed = deploy(&state.params);
    let warm = if expect_global {
        let g = decode_global(&read_frame(stream)?)?;
        Some(g.coefficients)
    } else {
        None
    };

    // a client's labeled episode is its fixed local data: the derivation
    // ignores the round, so cross-round metrics compare like for like
    let mut episode_rng = RngStream::derive(cfg.seed, "episode", site.id, 0);
    let episode = sample_episode(&site.data, state.spec.classes, cfg.k, cfg.q, &mut episode_rng)?;

    let zero_shot_acc = evaluate(&state.spec, &deployed, &episode.query, None)?;

    let mut adapt_rng = RngStream::derive(cfg.seed, "adapt", site.id, round);
    let outcome = bn_adapt::adapt_client(
        &state.spec,
        &deployed,
        &episode,
        &cfg.adapt,
        warm.as_ref(),
        &mut adapt_rng,
    )?;

    let mut adapted = deployed.clone();
    adapted.prototypes = outcome.prototypes.clone();
    let src = source_stats(&deployed);
    let eff = mix_statistics(&src, &outcome.support_stats.layers, &outcome.coefficients)?;
    let post_adapt_acc = evaluate(&state.spec, &adapted, &episode.query, Some(&eff))?;

    let update = ClientUpdate {
        round,
        client_id: site.id,
        n_samples: episode.support.len() as u32,
        coefficients: outcome.coefficients,
    };
    let frame = encode_client_update(&update)?;
    let payload_bytes = frame.len();
    write_frame(stream, &frame)?;

    Ok(LegOutcome {
        episode,
        zero_shot_acc,
        post_adapt_acc,
        payload_bytes,
    })
}

/// One synchronous round over all clients. Every update is received and
/// decoded before aggregation; any client failure aborts the whole round
/// with a client-indexed error.
pub fn run_round(
    state: &ServerState,
    clients: &[ClientSite],
    round: u32,
    cfg: &RoundConfig,
) -> Result<RoundReport> {
    if clients.is_empty() {
        return invalid_arg("a round needs at least one client");
    }
    if round == 0 {
        return invalid_arg("rounds are 1-indexed");
    }
    cfg.adapt
        .validate()
        .map_err(|e| FedError::InvalidArgument(e.to_string()))?;

    // one stream pair per client; the global broadcast goes out first
    let mut client_ends: Vec<Mutex<Option<Box<dyn Stream>>>> = Vec::with_capacity(clients.len());
    let mut server_ends: Vec<Box<dyn Stream>> = Vec::with_capacity(clients.len());
    let expect_global = state.global.is_some();
    for _ in clients {
        let (c, mut s) = stream_pair(cfg.transport)?;
        if let Some(g) = &state.global {
            write_frame(&mut *s, &encode_global(g)?)?;
        }
        client_ends.push(Mutex::new(Some(c)));
        server_ends.push(s);
    }

    let m = clients.len();
    let results: Vec<Mutex<Option<Result<LegOutcome>>>> =
        (0..m).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.jobs.max(1).min(m);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= m {
                    break;
                }
                let mut stream = client_ends[i].lock().unwrap().take().unwrap();
                let out = client_leg(state, &clients[i], round, cfg, &mut *stream, expect_global);
                *results[i].lock().unwrap() = Some(out);
            });
        }
    });

    // synchronous barrier: collect all legs and all wire updates first
    let mut legs = Vec::with_capacity(m);
    let mut updates = Vec::with_capacity(m);
    for (i, (site, mut server_end)) in clients.iter().zip(server_ends).enumerate() {
        let client_err = |e: FedError| FedError::Client {
            round,
            client: site.id,
            source: Box::new(e),
        };
        let leg = results[i]
            .lock()
            .unwrap()
            .take()
            .expect("worker pool covered every client")
            .map_err(client_err)?;
        let update = read_frame(&mut *server_end)
            .and_then(|bytes| decode_client_update(&bytes))
            .map_err(client_err)?;
        if update.round != round || update.client_id != site.id {
            return Err(client_err(FedError::Corrupt(format!(
                "update labeled round {} client {}",
                update.round, update.client_id
            ))));
        }
        if update.coefficients.n_layers() != state.spec.n_bn_layers() {
            return Err(client_err(FedError::Corrupt(
                "update layer count does not match the session model".into(),
            )));
        }
        legs.push(leg);
        updates.push(update);
    }

    let global = aggregate_fedavg(&updates)?;

    // progress diagnostic: the aggregated global model evaluated per client domain
    let total: u64 = updates.iter().map(|u| u.n_samples as u64).sum();
    let mut clients_out = Vec::with_capacity(m);
    let mut wce = 0.0f64;
    for (site, (leg, update)) in clients.iter().zip(legs.iter().zip(&updates)) {
        let eff = apply_global(&state.spec, &state.params, &global, &leg.episode.support)?;
        let global_acc = evaluate(&state.spec, &state.params, &leg.episode.query, Some(&eff))?;
        let query_ce = dataset_loss(&state.spec, &state.params, &leg.episode.query, Some(&eff))?;
        wce += update.n_samples as f64 / total as f64 * query_ce as f64;
        clients_out.push(ClientMetrics {
            client_id: site.id,
            zero_shot_acc: leg.zero_shot_acc,
            post_adapt_acc: leg.post_adapt_acc,
            global_acc,
            query_ce,
            payload_bytes: leg.payload_bytes,
            n_samples: update.n_samples,
        });
    }

    Ok(RoundReport {
        round,
        clients: clients_out,
        global,
        global_wce: wce,
    })
}
