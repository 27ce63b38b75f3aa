mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use reram_core::analysis::{histogram, Binning};
use reram_core::device::{DeviceState, Polarity};
use reram_core::experiments::{
    replay_dynamics, replay_leakage, replay_ron_roff, replay_thresholds, single_device, ReplayConfig,
};
use reram_core::gates::{
    correctness_study, stable_time_study, trials_csv, GateFamily, GateInput, GateOptions, StableTimeStats,
};
use reram_core::network::run_transient;
use reram_core::params::sample;
use reram_core::stimulus::ron_roff_protocol;
use serde::Serialize;
use serde_json::json;

use config::{Overrides, Resolved};

#[derive(Parser)]
#[command(name = "reram", version, about = "Stochastic ReRAM model, replays and logic-gate Monte Carlo")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trials, cycles or runs, depending on the command.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Worker threads for trial-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output root; results go to <out>/<command>/<label>/.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Parameter preset (believer-default, believer-sec2b).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Stable-time observation horizon, s.
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Output directory label; derived from the command and seed when absent.
    #[arg(long, global = true)]
    label: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Transient run of one device, or of the configured netlist.
    Device {
        /// Initial state of every device.
        #[arg(long, value_enum, default_value_t = Init::Hrs)]
        init: Init,
    },
    /// Replay of a characterization experiment.
    Experiment {
        #[arg(value_enum)]
        name: Experiment,
    },
    /// Monte Carlo study of a logic gate.
    Gate {
        /// IMPLY, MAGIC, FELIX or TMSL.
        family: GateFamily,
        #[arg(value_enum)]
        study: Study,
        /// Input cases for the stable-time study; all four when absent.
        #[arg(long = "input")]
        inputs: Vec<GateInput>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Hrs,
    Lrs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    RonRoff,
    Dynamics,
    Leakage,
    Thresholds,
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    Correctness,
    StableTime,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Experiment::RonRoff => "ron-roff",
            Experiment::Dynamics => "dynamics",
            Experiment::Leakage => "leakage",
            Experiment::Thresholds => "thresholds",
        }
    }
}

impl Study {
    fn name(self) -> &'static str {
        match self {
            Study::Correctness => "correctness",
            Study::StableTime => "stable-time",
        }
    }
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn create(root: &Path, command: &str, label: &str) -> anyhow::Result<Self> {
        let dir = root.join(command).join(label);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir })
    }

    fn text(&self, name: &str, body: &str) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.text(name, &s)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = error_kind(&e);
            let record = json!({
                "error": {
                    "kind": kind,
                    "message": e.to_string(),
                    "causes": e.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
                }
            });
            eprintln!("{record}");
            ExitCode::from(if kind == "internal" { 1 } else { 2 })
        }
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(m) = cause.downcast_ref::<reram_core::Error>() {
            return m.kind();
        }
        if cause.is::<toml::de::Error>() {
            return "config";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "internal"
}

fn run(cli: Cli) -> anyhow::Result<PathBuf> {
    let g = cli.global;
    let file = config::load(g.config.as_deref())?;
    let cfg = config::resolve(
        file,
        Overrides { preset: g.preset, seed: g.seed, trials: g.trials, out: g.out, horizon: g.horizon },
    )?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = g.jobs {
        if j == 0 {
            return Err(reram_core::Error::Config("jobs must be at least 1".into()).into());
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build()?;
    pool.install(|| match cli.command {
        Command::Device { init } => cmd_device(&cfg, init, g.label),
        Command::Experiment { name } => cmd_experiment(&cfg, name, g.label),
        Command::Gate { family, study, inputs } => cmd_gate(&cfg, family, study, inputs, g.label),
    })
}

fn label_or(label: Option<String>, subject: &str, cfg: &Resolved) -> String {
    label.unwrap_or_else(|| format!("{subject}-seed{}", cfg.seed))
}

fn manifest(out: &Output, command: &str, label: &str, cfg: &Resolved) -> anyhow::Result<()> {
    out.json(
        "manifest.json",
        &json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "label": label,
            "config": cfg,
        }),
    )
}

fn cmd_device(cfg: &Resolved, init: Init, label: Option<String>) -> anyhow::Result<PathBuf> {
    let label = label_or(label, "device", cfg);
    let out = Output::create(&cfg.out, "device", &label)?;
    manifest(&out, "device", &label, cfg)?;

    let (net, duration) = match (&cfg.netlist, &cfg.waveform) {
        (Some(net), _) => {
            let duration = cfg
                .waveform
                .as_ref()
                .map(|w| w.total_duration())
                .or_else(|| net.sources().filter_map(|s| s.duration()).reduce(f64::max))
                .ok_or_else(|| {
                    reram_core::Error::Config(
                        "a netlist with only constant sources needs a [waveform] for its duration".into(),
                    )
                })?;
            (net.clone(), duration)
        }
        (None, Some(wf)) => (single_device(wf.clone(), Polarity::Forward)?, wf.total_duration()),
        (None, None) => {
            let wf = ron_roff_protocol(cfg.timing)?;
            (single_device(wf.clone(), Polarity::Forward)?, wf.total_duration())
        }
    };
    let params = (0..net.device_count() as u64)
        .map(|d| sample(&cfg.distributions, &cfg.policy, 0, d))
        .collect::<Result<Vec<_>, _>>()?;
    let states: Vec<DeviceState> = params
        .iter()
        .zip(net.polarities())
        .map(|(p, pol)| match init {
            Init::Hrs => DeviceState::hrs(p, pol),
            Init::Lrs => DeviceState::lrs(p, pol),
        })
        .collect();
    let res = run_transient(&net, &states, &params, duration, &cfg.transient)?;

    let mut csv = Vec::new();
    res.trace.write_csv(&mut csv)?;
    out.text("trace.csv", std::str::from_utf8(&csv)?)?;
    let finals: Vec<_> = res
        .final_states
        .iter()
        .zip(&params)
        .enumerate()
        .map(|(d, (s, p))| {
            json!({
                "device": d,
                "w": s.w,
                "theta": s.theta,
                "normalized": s.normalized(p),
                "resistance": reram_core::device::resistance(s.w, p).ok(),
            })
        })
        .collect();
    out.json(
        "summary.json",
        &json!({
            "duration": duration,
            "samples": res.trace.samples.len(),
            "max_kcl_residual": res.trace.max_kcl_residual(&net),
            "params": params,
            "final_states": finals,
        }),
    )?;
    Ok(out.dir)
}

fn replay_config(cfg: &Resolved) -> ReplayConfig {
    ReplayConfig { dists: cfg.distributions.clone(), policy: cfg.policy, timing: cfg.timing, transient: cfg.transient }
}

fn cmd_experiment(cfg: &Resolved, name: Experiment, label: Option<String>) -> anyhow::Result<PathBuf> {
    let label = label_or(label, name.name(), cfg);
    let out = Output::create(&cfg.out, "experiment", &label)?;
    manifest(&out, &format!("experiment {}", name.name()), &label, cfg)?;
    let rc = replay_config(cfg);
    match name {
        Experiment::RonRoff => {
            let n = cfg.trials.unwrap_or(100);
            let r = replay_ron_roff(&rc, n)?;
            let mut csv = String::from("cycle,ron,roff,programmed_ron,programmed_roff\n");
            for k in 0..n {
                writeln!(csv, "{k},{},{},{},{}", r.ron[k], r.roff[k], r.programmed_ron[k], r.programmed_roff[k])?;
            }
            out.text("reads.csv", &csv)?;
            out.text("ron_histogram.csv", &r.ron_histogram.to_csv())?;
            out.text("roff_histogram.csv", &r.roff_histogram.to_csv())?;
            out.json("summary.json", &json!({ "cycles": n, "ron_fit": r.ron_fit, "roff_fit": r.roff_fit }))?;
        }
        Experiment::Dynamics => {
            let n = cfg.trials.unwrap_or(100);
            let r = replay_dynamics(&rc, n)?;
            let mut csv = String::from("run,pulse,resistance\n");
            for (run, stairs) in r.staircase.iter().enumerate() {
                for (k, v) in stairs.iter().enumerate() {
                    writeln!(csv, "{run},{},{v}", k + 1)?;
                }
            }
            out.text("staircase.csv", &csv)?;
            let mut csv = String::from("t,resistance\n");
            for (t, v) in &r.reset_trace {
                writeln!(csv, "{t},{v}")?;
            }
            out.text("reset_trace.csv", &csv)?;
            out.text("set_change_histogram.csv", &histogram(&r.set_change, Binning::Count(20))?.to_csv())?;
            let mean_change = r.set_change.iter().sum::<f64>() / r.set_change.len() as f64;
            out.json("summary.json", &json!({ "runs": n, "mean_staircase": r.mean, "mean_set_change": mean_change }))?;
        }
        Experiment::Leakage => {
            let l = cfg.leakage;
            let r = replay_leakage(&rc, l.mode(), l.probes, l.interval, l.run)?;
            let mut csv = String::from("block,after,t,resistance,model\n");
            for (b, block) in r.blocks.iter().enumerate() {
                for k in 0..block.t.len() {
                    writeln!(csv, "{b},{},{},{},{}", block.after, block.t[k], block.r[k], block.model[k])?;
                }
            }
            out.text("probes.csv", &csv)?;
            let drifts: Vec<_> = r.blocks.iter().map(|b| json!({ "after": b.after, "drift": b.drift })).collect();
            out.json(
                "summary.json",
                &json!({
                    "mode": l.mode(),
                    "tau_fit": r.fit.tau,
                    "fit": r.fit,
                    "deviation_avg": r.deviation_avg,
                    "deviation_max": r.deviation_max,
                    "drifts": drifts,
                    "params": r.params,
                }),
            )?;
        }
        Experiment::Thresholds => {
            let r = replay_thresholds(&rc, &cfg.sweep, 0)?;
            let mut csv = String::from("v,i\n");
            for (v, i) in &r.trace {
                writeln!(csv, "{v},{i}")?;
            }
            out.text("sweep.csv", &csv)?;
            out.json(
                "summary.json",
                &json!({
                    "sample_dt": r.sample_dt,
                    "delta_i": cfg.sweep.delta_i,
                    "v_th_plus": r.thresholds.v_th_plus,
                    "v_th_minus": r.thresholds.v_th_minus,
                }),
            )?;
        }
    }
    Ok(out.dir)
}

fn gate_options(cfg: &Resolved) -> GateOptions {
    let mut o = GateOptions::default();
    o.transient = cfg.transient;
    o.transient.record = false;
    o.relax = cfg.transient.integrator;
    o.points_per_decade = cfg.points_per_decade;
    o
}

fn cmd_gate(
    cfg: &Resolved,
    family: GateFamily,
    study: Study,
    inputs: Vec<GateInput>,
    label: Option<String>,
) -> anyhow::Result<PathBuf> {
    let subject = format!("{}-{}", family.name().to_ascii_lowercase(), study.name());
    let label = label_or(label, &subject, cfg);
    let out = Output::create(&cfg.out, "gate", &label)?;
    manifest(&out, &format!("gate {} {}", family.name(), study.name()), &label, cfg)?;
    let spec = cfg.gate_spec(family);
    let opts = gate_options(cfg);
    let n = cfg.trials.unwrap_or(1000);
    match study {
        Study::Correctness => {
            let rep = correctness_study(&spec, &cfg.distributions, &cfg.policy, n, &opts)?;
            out.text("trials.csv", &trials_csv(&rep.trials))?;
            for case in GateInput::ALL {
                let states: Vec<f64> = rep.trials.iter().filter(|r| r.input == case).map(|r| r.output_state).collect();
                let h = histogram(&states, Binning::Count(20))?;
                out.text(&format!("output_histogram_{case}.csv"), &h.to_csv())?;
            }
            out.json(
                "summary.json",
                &json!({ "family": family, "spec": spec, "trials": n, "cases": rep.cases, "overall": rep.overall }),
            )?;
        }
        Study::StableTime => {
            let inputs = if inputs.is_empty() { GateInput::ALL.to_vec() } else { inputs };
            let mut all = Vec::new();
            let mut cases = Vec::new();
            let mut flipped = 0;
            for input in inputs {
                let rep = stable_time_study(&spec, input, &cfg.distributions, &cfg.policy, n, cfg.horizon, &opts)?;
                let s = &rep.stats;
                flipped += s.flipped;
                out.text(&format!("cdf_{input}.csv"), &cdf_csv(s))?;
                if let Some(h) = &s.histogram {
                    out.text(&format!("flip_histogram_{input}.csv"), &h.to_csv())?;
                }
                cases.push(json!({
                    "input": input,
                    "trials": n,
                    "considered": s.considered,
                    "flipped": s.flipped,
                    "t_90": s.t_90,
                    "t_99": s.t_99,
                    "t_avg": s.t_avg,
                    "t_med": s.t_med,
                    "no_flips": s.flipped == 0,
                }));
                all.extend(rep.results);
            }
            out.text("trials.csv", &trials_csv(&all))?;
            out.json(
                "summary.json",
                &json!({
                    "family": family,
                    "spec": spec,
                    "horizon": cfg.horizon,
                    "cases": cases,
                    "total_flips": flipped,
                    "immune": flipped == 0,
                }),
            )?;
        }
    }
    Ok(out.dir)
}

fn cdf_csv(s: &StableTimeStats) -> String {
    let mut csv = String::from("t,flipped_fraction\n");
    for (t, f) in s.cdf() {
        let _ = writeln!(csv, "{t},{f}");
    }
    csv
}
