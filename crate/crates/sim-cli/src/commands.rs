//! Command implementations shared by the binary and the test suite.

use std::fmt::Write as _;
use std::path::Path;

use domain_data::{apply_style_shift, gen_domains, gen_source, load_dataset, save_dataset};
use fed_protocol::{
    backbone_stats, frame_len, run_round, standard_catalog, ClientSite, RoundConfig, RoundReport,
    ServerState, PUBLISHED_ROWS,
};
use nn_engine::{evaluate, io::load_model, io::save_model, pretrain, ModelSpec};

use crate::config::SimConfig;
use crate::error::{CliError, Result};

pub const CSV_HEADER: &str =
    "round,client,zero_shot_acc,post_adapt_acc,global_acc,payload_bytes,n_samples,global_wce";

pub fn cmd_pretrain(config: &Path, out: &Path) -> Result<()> {
    let cfg = SimConfig::load(config)?;
    let (train, test, _) = gen_source(&cfg.data)?;
    let spec = ModelSpec::micro_cnn(cfg.data.classes);
    let (params, _) = pretrain(&spec, &train, &test, &cfg.train)?;
    save_model(out, &spec, &params)?;
    let acc = evaluate(&spec, &params, &test, None)?;
    println!("model written to {}", out.display());
    println!("source test accuracy: {acc:.6}");
    Ok(())
}

pub fn cmd_gen_data(config: &Path, out: &Path) -> Result<()> {
    let cfg = SimConfig::load(config)?;
    let (_, test, _) = gen_source(&cfg.data)?;
    save_dataset(out, &test, cfg.data.classes)?;
    println!(
        "wrote {} samples over {} classes to {}",
        test.len(),
        cfg.data.classes,
        out.display()
    );
    Ok(())
}

pub fn cmd_eval(model: &Path, data: &Path) -> Result<()> {
    let (spec, params) = load_model(model)?;
    let (dataset, classes) = load_dataset(data)?;
    if classes != spec.classes {
        return Err(CliError::Config(format!(
            "dataset has {classes} classes, model expects {}",
            spec.classes
        )));
    }
    let acc = evaluate(&spec, &params, &dataset, None)?;
    println!("accuracy: {acc:.6}");
    Ok(())
}

pub fn cmd_table1() -> Result<()> {
    println!(
        "{:<13} {:>10} {:>9} {:>9} {:>7}  {:>13} {:>10} {:>9} {:>7}",
        "backbone",
        "bn_params",
        "bn_kB",
        "pub_kB",
        "flag",
        "fedmix_params",
        "fedmix_kB",
        "pub_kB",
        "flag"
    );
    for (entry, (p_bn_params, p_bn_kb, p_fmx_params, p_fmx_kb)) in
        standard_catalog().iter().zip(PUBLISHED_ROWS)
    {
        let row = backbone_stats(entry).map_err(CliError::from)?;
        let bn_rel = (row.bn_kb - p_bn_kb).abs() / p_bn_kb;
        let bn_flag = if row.bn_params == p_bn_params && bn_rel < 0.06 {
            "ok<6%"
        } else {
            "MISMATCH"
        };
        let fmx_flag = if row.fedmix_params == p_fmx_params && row.fedmix_kb == p_fmx_kb {
            "exact"
        } else {
            "MISMATCH"
        };
        println!(
            "{:<13} {:>10} {:>9.2} {:>9.0} {:>7}  {:>13} {:>10.1} {:>9.1} {:>7}",
            row.name,
            row.bn_params,
            row.bn_kb,
            p_bn_kb,
            bn_flag,
            row.fedmix_params,
            row.fedmix_kb,
            p_fmx_kb,
            fmx_flag
        );
    }
    Ok(())
}

/// Everything `simulate` produces, in memory: the caller decides where it
/// goes, the test suite reads it directly.
pub struct SimulationOutput {
    pub rounds_csv: String,
    pub summary: String,
    pub reports: Vec<RoundReport>,
}

pub fn simulate(cfg: &SimConfig, spec: ModelSpec, params: nn_engine::ModelParams, jobs: usize) -> Result<SimulationOutput> {
    if spec.classes != cfg.data.classes {
        return Err(CliError::Config(format!(
            "model has {} classes, config data.classes is {}",
            spec.classes, cfg.data.classes
        )));
    }
    let (_, test, _) = gen_source(&cfg.data)?;
    let source_acc = evaluate(&spec, &params, &test, None)?;
    let domains = gen_domains(cfg.clients as usize, cfg.seed, cfg.gain_range, cfg.bias_range)?;
    let clients: Vec<ClientSite> = domains
        .into_iter()
        .map(|d| ClientSite {
            id: d.client_id,
            data: apply_style_shift(&test, &d),
            domain: d,
        })
        .collect();

    let round_cfg = RoundConfig {
        k: cfg.k,
        q: cfg.q,
        adapt: cfg.adapt.clone(),
        seed: cfg.seed,
        transport: cfg.transport,
        jobs,
    };
    let mut state = ServerState::new(spec, params);
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut summary = format!("source test accuracy: {source_acc:.6}\n");
    let mut reports = Vec::with_capacity(cfg.rounds as usize);
    for round in 1..=cfg.rounds {
        let report = run_round(&state, &clients, round, &round_cfg)?;
        append_round_rows(&mut csv, &report);
        let m = report.clients.len() as f32;
        let mean =
            |f: fn(&fed_protocol::ClientMetrics) -> f32| report.clients.iter().map(f).sum::<f32>() / m;
        writeln!(
            summary,
            "round {round}: zero_shot {:.6} post_adapt {:.6} global {:.6} wce {:.6}",
            mean(|c| c.zero_shot_acc),
            mean(|c| c.post_adapt_acc),
            mean(|c| c.global_acc),
            report.global_wce
        )
        .unwrap();
        state.global = Some(report.global.clone());
        reports.push(report);
    }
    Ok(SimulationOutput {
        rounds_csv: csv,
        summary,
        reports,
    })
}

fn append_round_rows(csv: &mut String, report: &RoundReport) {
    for c in &report.clients {
        writeln!(
            csv,
            "{},{},{:.6},{:.6},{:.6},{},{},{:.6}",
            report.round,
            c.client_id,
            c.zero_shot_acc,
            c.post_adapt_acc,
            c.global_acc,
            c.payload_bytes,
            c.n_samples,
            report.global_wce
        )
        .unwrap();
    }
    let m = report.clients.len() as f32;
    let total: u64 = report.clients.iter().map(|c| c.n_samples as u64).sum();
    let downlink = frame_len(report.global.coefficients.n_layers());
    writeln!(
        csv,
        "{},global,{:.6},{:.6},{:.6},{},{},{:.6}",
        report.round,
        report.clients.iter().map(|c| c.zero_shot_acc).sum::<f32>() / m,
        report.clients.iter().map(|c| c.post_adapt_acc).sum::<f32>() / m,
        report.clients.iter().map(|c| c.global_acc).sum::<f32>() / m,
        downlink,
        total,
        report.global_wce
    )
    .unwrap();
}

pub fn cmd_simulate(config: &Path, model: &Path, out_dir: &Path, jobs: usize) -> Result<()> {
    let cfg = SimConfig::load(config)?;
    let (spec, params) = load_model(model)?;
    let out = simulate(&cfg, spec, params, jobs)?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("rounds.csv"), &out.rounds_csv)?;
    std::fs::write(out_dir.join("summary.txt"), &out.summary)?;
    print!("{}", out.summary);
    println!("metrics written to {}", out_dir.join("rounds.csv").display());
    Ok(())
}
