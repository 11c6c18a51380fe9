//! The operator verbs.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rlstage_agents::{train, Agent, AgentMode};
use rlstage_components::{compare_modes, run_case, standard_cases};
use rlstage_envs::VectorEnv;
use rlstage_graph::{export_dot, BackendMode};

use crate::file_config::FileConfig;

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    #[value(name = "staged")]
    Staged,
    #[value(name = "define_by_run")]
    DefineByRun,
}

impl From<BackendArg> for BackendMode {
    fn from(b: BackendArg) -> BackendMode {
        match b {
            BackendArg::Staged => BackendMode::Staged,
            BackendArg::DefineByRun => BackendMode::DefineByRun,
        }
    }
}

#[derive(Parser, Debug)]
pub struct CommonArgs {
    /// Path to the JSON config document.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the agent seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (DOT text, metric lines).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Execution backend.
    #[arg(long, value_enum, default_value = "staged")]
    pub backend: BackendArg,
    /// Dotted-path config overrides, e.g. --set update.batch_size=64.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Single-process training; emits metric lines.
    Train(CommonArgs),
    /// Worker/learner training over replay shards.
    TrainDistributed(CommonArgs),
    /// Report assembly and build times plus graph statistics.
    BenchBuild(CommonArgs),
    /// Report actions/sec against vector environments of growing size.
    BenchAct(CommonArgs),
    /// Build one named library component and run its example calls.
    TestComponent(CommonArgs),
    /// Write the component graph in DOT form.
    ExportDot(CommonArgs),
}

#[derive(Parser, Debug)]
#[command(name = "rlstage", about = "Staged RL computation graphs", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn write_out(args: &CommonArgs, text: &str) -> Result<()> {
    match &args.out {
        Some(path) => {
            std::fs::write(path, text)
                .with_context(|| format!("writing '{}'", path.display()))?;
        }
        None => print!("{}", text),
    }
    Ok(())
}

pub fn run_command(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => cmd_train(args),
        Command::TrainDistributed(args) => cmd_train_distributed(args),
        Command::BenchBuild(args) => cmd_bench_build(args),
        Command::BenchAct(args) => cmd_bench_act(args),
        Command::TestComponent(args) => cmd_test_component(args),
        Command::ExportDot(args) => cmd_export_dot(args),
    }
}

fn cmd_train(args: CommonArgs) -> Result<()> {
    let cfg = FileConfig::load(&args.config, &args.overrides, args.seed)?;
    let agent = cfg.agent()?;
    let env = cfg.env()?;
    let outcome = train(agent, env, &cfg.train, args.backend.into(), agent.seed)?;
    let mut text = String::new();
    text.push_str("t_seconds,frames_total,fps,updates,loss,mean_return\n");
    for line in &outcome.metric_lines {
        text.push_str(line);
        text.push('\n');
    }
    write_out(&args, &text)?;
    eprintln!(
        "trained {} frames, {} updates, mean return {:.3}",
        outcome.frames, outcome.updates, outcome.final_mean_return
    );
    Ok(())
}

fn cmd_train_distributed(args: CommonArgs) -> Result<()> {
    let cfg = FileConfig::load(&args.config, &args.overrides, args.seed)?;
    let agent = cfg.agent()?;
    let env = cfg.env()?;
    let runner = cfg.runner.clone().context("config has no 'runner' section")?;
    let metrics = rlstage_runtime::run(agent, env, &runner)?;
    let mut text = String::new();
    text.push_str("t_seconds,frames_total,fps,updates,loss,mean_return\n");
    for line in &metrics.metric_lines {
        text.push_str(line);
        text.push('\n');
    }
    write_out(&args, &text)?;
    eprintln!(
        "distributed run: {} frames at {:.0} frames/s, {} updates, mean return {:.3}",
        metrics.frames_total,
        metrics.env_frames_per_second,
        metrics.learner_updates,
        metrics.mean_return_last_window
    );
    Ok(())
}

fn cmd_bench_build(args: CommonArgs) -> Result<()> {
    let cfg = FileConfig::load(&args.config, &args.overrides, args.seed)?;
    let backend: BackendMode = args.backend.into();

    if let Some(section) = &cfg.component {
        // One library component, both phases timed by the harness.
        let case = find_case(&section.name)?;
        let spaces: Vec<(&str, rlstage_core::Space)> =
            case.input_spaces.iter().map(|(k, s)| (k.as_str(), s.clone())).collect();
        let t = rlstage_graph::ComponentTest::new((case.build)(), &spaces, backend, 0)?;
        write_out(&args, &t.stats.to_text())?;
        return Ok(());
    }

    let agent_cfg = cfg.agent()?;
    let started = Instant::now();
    let agent = Agent::build_with(agent_cfg, AgentMode::Full, backend)?;
    let total = started.elapsed();
    let mut text = agent.stats().to_text();
    text.push_str(&format!("total_ms={:.3}\n", total.as_secs_f64() * 1e3));
    write_out(&args, &text)?;
    Ok(())
}

fn cmd_bench_act(args: CommonArgs) -> Result<()> {
    let cfg = FileConfig::load(&args.config, &args.overrides, args.seed)?;
    let agent_cfg = cfg.agent()?;
    let env = cfg.env()?;
    let backend: BackendMode = args.backend.into();

    let mut text = String::from("batch_size,actions_per_sec\n");
    for batch in [1usize, 2, 4, 8, 16, 32, 64] {
        let mut agent = Agent::build_with(agent_cfg, AgentMode::ActOnly, backend)?;
        let venv = VectorEnv::new(
            (0..batch).map(|i| env.build(agent_cfg.seed.wrapping_add(i as u64))).collect(),
        );
        let states = venv.states().map_err(|e| anyhow::anyhow!(e.to_string()))?;
        // Warm up, then measure pure acting throughput.
        for _ in 0..20 {
            agent.act_with_epsilon(&states, 0.1, true)?;
        }
        let started = Instant::now();
        let mut actions = 0usize;
        while started.elapsed().as_millis() < 300 {
            agent.act_with_epsilon(&states, 0.1, true)?;
            actions += batch;
        }
        let rate = actions as f64 / started.elapsed().as_secs_f64();
        text.push_str(&format!("{},{:.0}\n", batch, rate));
    }
    write_out(&args, &text)?;
    Ok(())
}

fn find_case(name: &str) -> Result<rlstage_components::ComponentCase> {
    let mut cases = standard_cases();
    match cases.iter().position(|c| c.name == name) {
        Some(i) => Ok(cases.swap_remove(i)),
        None => {
            let names: Vec<String> = cases.iter().map(|c| c.name.clone()).collect();
            bail!("unknown component '{}'; known: {}", name, names.join(", "))
        }
    }
}

fn cmd_test_component(args: CommonArgs) -> Result<()> {
    let cfg = FileConfig::load(&args.config, &args.overrides, args.seed)?;
    let name = cfg
        .component
        .as_ref()
        .map(|c| c.name.clone())
        .context("config needs a 'component' section naming the component")?;
    let case = find_case(&name)?;
    let seed = args.seed.unwrap_or(0);

    let mut text = String::new();
    let backend: BackendMode = args.backend.into();
    let outputs = run_case(&case, backend, seed)?;
    for ((api, _), outs) in case.calls.iter().zip(&outputs) {
        text.push_str(&format!("call {} -> {} output(s)\n", api, outs.len()));
        for (i, out) in outs.iter().enumerate() {
            for (key, leaf) in out.flatten() {
                text.push_str(&format!(
                    "  out{}{} {} {:?}\n",
                    i,
                    if key.is_empty() { String::new() } else { format!(" {}", key) },
                    leaf.dtype(),
                    leaf.shape()
                ));
            }
        }
    }
    // Cross-backend agreement is part of the example suite.
    match compare_modes(&case, seed, 1e-9) {
        Ok(()) => text.push_str(&format!("{}: backends agree\n", case.name)),
        Err(e) => bail!("backend mismatch: {}", e),
    }
    write_out(&args, &text)?;
    Ok(())
}

fn cmd_export_dot(args: CommonArgs) -> Result<()> {
    let cfg = FileConfig::load(&args.config, &args.overrides, args.seed)?;
    let agent_cfg = cfg.agent()?;
    let graph = rlstage_agents::assemble(agent_cfg, AgentMode::Full)?;
    let dot = export_dot(&graph);
    match &args.out {
        Some(path) => std::fs::write(path, &dot)
            .with_context(|| format!("writing '{}'", path.display()))?,
        None => {
            std::io::stdout().write_all(dot.as_bytes())?;
        }
    }
    Ok(())
}
