use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qpolicy_core::hwcost::{self, FoldingConfig, LayerFold, ResourceBudget};
use qpolicy_core::{intrt, lower, IntegerGraph, PolicyNet, QuantConfig};
use qpolicy_harness::manifest::RunDir;
use qpolicy_harness::noise::{self, NoiseModel, DEFAULT_SIGMAS};
use qpolicy_harness::runner::{seed_list, Runner, EVAL_SEED};
use qpolicy_harness::{curve_csv, select_model, sweep_scopes, Scope};
use qpolicy_rl::{evaluate, init_policy, train, Actor, Algorithm, EnvKind, TrainConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "qpolicy", version, about = "Quantization-aware continuous-control policies: training, selection and integer deployment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy and evaluate it.
    Train(TrainCmd),
    /// Bitwidth sweep over the quantization scopes.
    Sweep(SweepCmd),
    /// Staged selection of core bits, hidden width and input bits.
    Select(SelectCmd),
    /// Evaluate policies or graphs under observation noise.
    Noise(NoiseCmd),
    /// Compile a frozen quantized policy into an integer graph.
    Lower(LowerCmd),
    /// Run an integer graph on observations from a CSV file.
    Run(RunCmd),
    /// Throughput-driven folding search and cost estimate.
    Cost(CostCmd),
    /// Cost estimate for an explicit folding.
    Fold(FoldCmd),
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long, default_value = "pendulum")]
    env: EnvKind,
    #[arg(long, default_value = "sac")]
    algo: Algorithm,
    /// Hyperparameter preset: desk or paper.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// JSON training configuration; replaces the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the number of environment steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Override the step at which learning starts.
    #[arg(long)]
    learning_starts: Option<usize>,
    /// Evaluation episodes per model.
    #[arg(long)]
    episodes: Option<usize>,
    /// Disable running input normalization.
    #[arg(long)]
    no_input_norm: bool,
    /// Print progress to stderr.
    #[arg(long, short)]
    verbose: bool,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str::<TrainConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => TrainConfig::preset(&self.preset, self.algo).map_err(|e| anyhow!(e))?,
        };
        if self.config.is_some() && c.algorithm != self.algo {
            c.algorithm = self.algo;
        }
        if let Some(s) = self.steps {
            c.total_steps = s;
            c.eval_interval = c.eval_interval.min(s);
        }
        if let Some(l) = self.learning_starts {
            c.learning_starts = l;
        }
        if let Some(e) = self.episodes {
            c.eval_episodes = e;
        }
        if self.no_input_norm {
            c.normalize_input = false;
        }
        c.validate().map_err(|e| anyhow!("invalid configuration: {e}"))?;
        Ok(c)
    }

    fn default_hidden(&self) -> usize {
        if self.preset == "paper" {
            256
        } else {
            64
        }
    }

    fn runner(&self) -> Result<Runner> {
        let mut r = Runner::new(self.env, self.config()?);
        r.verbose = self.verbose;
        Ok(r)
    }
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    common: TrainArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hidden width (default 64 on the desk preset, 256 on the paper preset).
    #[arg(long)]
    hidden: Option<usize>,
    /// Bitwidth of hidden weights and activations; any bit flag enables quantization.
    #[arg(long)]
    core_bits: Option<u32>,
    #[arg(long)]
    input_bits: Option<u32>,
    #[arg(long)]
    output_bits: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepCmd {
    #[command(flatten)]
    common: TrainArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [2u32, 3, 4, 5, 6, 7, 8])]
    bits: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = Scope::ALL.map(|s| s.to_string()))]
    scopes: Vec<String>,
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// First seed; seeds are consecutive.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectCmd {
    #[command(flatten)]
    common: TrainArgs,
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Width of the unshrunk network (default 64 on the desk preset, 256 on the paper preset).
    #[arg(long)]
    base_width: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NoiseCmd {
    #[arg(long, default_value = "pendulum")]
    env: EnvKind,
    /// `LABEL=PATH` of a policy or graph JSON; repeatable.
    #[arg(long = "model", required = true)]
    models: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIGMAS)]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = EVAL_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LowerCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunCmd {
    #[arg(long)]
    graph: PathBuf,
    /// Raw observations, one per row.
    #[arg(long)]
    obs: PathBuf,
    /// Actions CSV (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the integer codes at every layer boundary to this CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct CostCmd {
    #[arg(long)]
    graph: PathBuf,
    /// Target actions per second; without it the power-of-ten sweep keeps the highest feasible target.
    #[arg(long)]
    target: Option<f64>,
    /// JSON with optional mac_units, threshold_words, weight_bits limits.
    #[arg(long)]
    budget: Option<PathBuf>,
    #[arg(long, default_value_t = hwcost::DEFAULT_CLOCK_HZ)]
    clock: f64,
    /// Directory for cost.json, cost.csv and folding.json (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FoldCmd {
    #[arg(long)]
    graph: PathBuf,
    /// Folding JSON as written by `cost`.
    #[arg(long, conflicts_with_all = ["pe", "simd", "full"])]
    folding: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', requires = "simd")]
    pe: Vec<usize>,
    #[arg(long, value_delimiter = ',', requires = "pe")]
    simd: Vec<usize>,
    /// Fully parallel folding.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = hwcost::DEFAULT_CLOCK_HZ)]
    clock: f64,
}

fn quant_flags(core: Option<u32>, input: Option<u32>, output: Option<u32>) -> Option<QuantConfig> {
    if core.is_none() && input.is_none() && output.is_none() {
        return None;
    }
    Some(QuantConfig::core(core.unwrap_or(8), input.unwrap_or(8), output.unwrap_or(8)))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn json_bytes<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn header(c: &TrainConfig, env: EnvKind, seeds: usize) -> String {
    format!(
        "env={env} algo={} steps={} eval_episodes={} seeds={seeds} batch={} critic_hidden={}",
        c.algorithm, c.total_steps, c.eval_episodes, c.batch_size, c.critic_hidden
    )
}

fn cmd_train(cmd: TrainCmd) -> Result<()> {
    let config = cmd.common.config()?.with_seed(cmd.seed);
    let env = cmd.common.env.build();
    let hidden = cmd.hidden.unwrap_or_else(|| cmd.common.default_hidden());
    let quant = quant_flags(cmd.core_bits, cmd.input_bits, cmd.output_bits);
    let net = init_policy(&config, env.as_ref(), hidden, quant);
    let out = train(&config, net, env.as_ref())?;
    let eval = evaluate(&out.policy, env.as_ref(), config.eval_episodes, EVAL_SEED)?;
    let mut dir = RunDir::create(
        &cmd.out,
        "train",
        json!({"env": cmd.common.env, "hidden": hidden, "quant": quant, "train": config, "eval_seed": EVAL_SEED}),
    )?;
    dir.write("model.json", format!("{}\n", out.policy.to_json()?).as_bytes())?;
    dir.write("curve.csv", curve_csv(cmd.seed, &out.curve).as_bytes())?;
    dir.write("eval.json", &json_bytes(&eval))?;
    dir.finish()?;
    println!("mean return {:.3} (std {:.3}) over {} episodes", eval.mean, eval.std, eval.episodes());
    Ok(())
}

fn cmd_sweep(cmd: SweepCmd) -> Result<()> {
    if let Some(b) = cmd.bits.iter().find(|b| !(2..=8).contains(*b)) {
        bail!("sweep bitwidths must lie in 2..=8, got {b}");
    }
    let scopes = cmd.scopes.iter().map(|s| s.parse::<Scope>().map_err(|e| anyhow!(e))).collect::<Result<Vec<_>>>()?;
    let mut runner = cmd.common.runner()?;
    let hidden = cmd.hidden.unwrap_or_else(|| cmd.common.default_hidden());
    let seeds = seed_list(cmd.seed, cmd.seeds);
    let report = sweep_scopes(&mut runner, &scopes, &cmd.bits, hidden, &seeds);
    let mut dir = RunDir::create(
        &cmd.out,
        "sweep",
        json!({"env": cmd.common.env, "hidden": hidden, "bits": cmd.bits, "scopes": scopes, "seeds": seeds,
               "train": runner.template, "eval_seed": EVAL_SEED}),
    )?;
    let csv = report.to_csv(&header(&runner.template, cmd.common.env, seeds.len()));
    dir.write("sweep.csv", csv.as_bytes())?;
    dir.finish()?;
    let failed = report.rows.iter().filter(|r| r.status != "ok").count();
    println!("{} rows ({failed} failed)", report.rows.len());
    Ok(())
}

fn cmd_select(cmd: SelectCmd) -> Result<()> {
    let mut runner = cmd.common.runner()?;
    let base = cmd.base_width.unwrap_or_else(|| cmd.common.default_hidden());
    let seeds = seed_list(cmd.seed, cmd.seeds);
    let result = select_model(&mut runner, &seeds, base)?;
    let mut dir = RunDir::create(
        &cmd.out,
        "select",
        json!({"env": cmd.common.env, "base_width": base, "seeds": seeds, "train": runner.template, "eval_seed": EVAL_SEED}),
    )?;
    dir.write("selection.json", &json_bytes(&result))?;
    let mut trials = String::from("stage,hidden,b_core,b_in,mean_return,std_return,parity\n");
    for t in &result.trials {
        trials.push_str(&format!(
            "{},{},{},{},{:?},{:?},{}\n",
            serde_json::to_value(t.stage)?.as_str().unwrap_or_default(),
            t.hidden,
            t.b_core,
            t.b_in,
            t.summary.mean,
            t.summary.std,
            t.parity
        ));
    }
    dir.write("trials.csv", trials.as_bytes())?;
    for &s in &seeds {
        let fp = runner.run(None, base, s)?;
        dir.write(&format!("fp32_seed{s}.json"), format!("{}\n", fp.policy.to_json()?).as_bytes())?;
        let sel = runner.run(Some(result.quant()), result.hidden, s)?;
        dir.write(&format!("selected_seed{s}.json"), format!("{}\n", sel.policy.to_json()?).as_bytes())?;
        dir.write(&format!("selected_seed{s}.graph.json"), format!("{}\n", lower(&sel.policy)?.to_json()?).as_bytes())?;
    }
    dir.finish()?;
    println!(
        "selected h={} b_core={} b_in={} b_out={} (deployed parity: {})",
        result.hidden, result.b_core, result.b_in, result.b_out, result.deployed_parity
    );
    Ok(())
}

enum Loaded {
    Policy(PolicyNet),
    Graph(IntegerGraph),
}

fn load_model(path: &Path) -> Result<Loaded> {
    let text = read(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some("qpolicy-graph") => Ok(Loaded::Graph(IntegerGraph::from_json(&text)?)),
        Some("qpolicy-policy") => Ok(Loaded::Policy(PolicyNet::from_json(&text)?)),
        _ => bail!("{} is neither a policy nor a graph document", path.display()),
    }
}

fn cmd_noise(cmd: NoiseCmd) -> Result<()> {
    if let Some(s) = cmd.sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        bail!("noise levels must be nonnegative, got {s}");
    }
    let mut loaded = Vec::new();
    for (i, spec) in cmd.models.iter().enumerate() {
        let (label, path) = spec.split_once('=').ok_or_else(|| anyhow!("--model expects LABEL=PATH, got '{spec}'"))?;
        let model = load_model(Path::new(path))?;
        let seed = match &model {
            Loaded::Policy(p) => p.seed.unwrap_or(i as u64),
            Loaded::Graph(_) => i as u64,
        };
        loaded.push((label.to_string(), seed, model, path.to_string()));
    }
    let models: Vec<NoiseModel<'_>> = loaded
        .iter()
        .map(|(label, seed, m, _)| NoiseModel {
            label: label.clone(),
            seed: *seed,
            actor: match m {
                Loaded::Policy(p) => p as &dyn Actor,
                Loaded::Graph(g) => g as &dyn Actor,
            },
        })
        .collect();
    for (label, _, m, path) in &loaded {
        if let Loaded::Policy(p) = m {
            if !p.is_frozen() {
                bail!("model {label} ({path}) is not frozen");
            }
        }
    }
    let env = cmd.env.build();
    let rows = noise::noise_eval(&models, env.as_ref(), &cmd.sigmas, cmd.episodes, cmd.seed)?;
    let inputs: Vec<serde_json::Value> = loaded
        .iter()
        .map(|(label, seed, _, path)| {
            let bytes = fs::read(path).unwrap_or_default();
            json!({"label": label, "seed": seed, "sha256": qpolicy_harness::manifest::blob_sha256(&bytes)})
        })
        .collect();
    let mut dir = RunDir::create(
        &cmd.out,
        "noise",
        json!({"env": cmd.env, "models": inputs, "sigmas": cmd.sigmas, "episodes": cmd.episodes, "eval_seed": cmd.seed}),
    )?;
    let comment = format!("env={} episodes={} models={}", cmd.env, cmd.episodes, loaded.len());
    dir.write("noise.csv", noise::to_csv(&rows, &comment).as_bytes())?;
    dir.finish()?;
    println!("{} rows", rows.len());
    Ok(())
}

fn cmd_lower(cmd: LowerCmd) -> Result<()> {
    let net = PolicyNet::from_json(&read(&cmd.model)?)?;
    let graph = lower(&net)?;
    fs::write(&cmd.out, format!("{}\n", graph.to_json()?)).with_context(|| format!("writing {}", cmd.out.display()))?;
    println!(
        "lowered {} layers, {} MACs, checksum {:016x}",
        graph.layers.len(),
        intrt::count_macs(&graph),
        intrt::checksum(&graph)
    );
    Ok(())
}

fn read_obs(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => {
                if v.len() != dim {
                    bail!("row {} has {} values, expected {dim}", i + 1, v.len());
                }
                rows.push(v);
            }
            Err(_) if i == 0 => continue,
            Err(e) => bail!("row {}: {e}", i + 1),
        }
    }
    Ok(rows)
}

fn cmd_run(cmd: RunCmd) -> Result<()> {
    let graph = IntegerGraph::from_json(&read(&cmd.graph)?)?;
    let obs = read_obs(&cmd.obs, graph.obs_dim())?;
    let mut actions = String::from((0..graph.action_dim()).map(|j| format!("a{j}")).collect::<Vec<_>>().join(","));
    actions.push('\n');
    let mut trace = String::from("row,site,codes\n");
    for (i, o) in obs.iter().enumerate() {
        let (a, t) = intrt::run_integer(&graph, o)?;
        actions.push_str(&a.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","));
        actions.push('\n');
        for (site, act) in t.iter().enumerate() {
            let codes: Vec<String> = act.values.iter().map(i64::to_string).collect();
            trace.push_str(&format!("{i},{site},{}\n", codes.join(";")));
        }
    }
    match &cmd.out {
        Some(p) => fs::write(p, &actions).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{actions}"),
    }
    if let Some(p) = &cmd.trace {
        fs::write(p, &trace).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_cost(cmd: CostCmd) -> Result<()> {
    let graph = IntegerGraph::from_json(&read(&cmd.graph)?)?;
    let shapes = hwcost::pad_dims(&graph);
    let budget: ResourceBudget = match &cmd.budget {
        Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => ResourceBudget::default(),
    };
    let (target, folding, report) = match cmd.target {
        Some(t) => {
            let f = hwcost::folding_search(&shapes, t, &budget, cmd.clock)?;
            let r = hwcost::estimate(&shapes, &f)?;
            (t, f, r)
        }
        None => hwcost::throughput_sweep(&shapes, &budget, cmd.clock)
            .ok_or_else(|| anyhow!("infeasible: no target in the sweep fits the budget"))?,
    };
    let summary = json!({"target_actions_per_s": target, "folding": folding, "cost": report});
    match &cmd.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("cost.json"), json_bytes(&summary))?;
            fs::write(dir.join("folding.json"), json_bytes(&folding))?;
            fs::write(dir.join("cost.csv"), format!("{}\n{}\n", hwcost::CostReport::CSV_HEADER, report.csv_row()))?;
        }
        None => print!("{}", String::from_utf8(json_bytes(&summary))?),
    }
    Ok(())
}

fn cmd_fold(cmd: FoldCmd) -> Result<()> {
    let graph = IntegerGraph::from_json(&read(&cmd.graph)?)?;
    let shapes = hwcost::pad_dims(&graph);
    let folding = if let Some(p) = &cmd.folding {
        serde_json::from_str::<FoldingConfig>(&read(p)?).with_context(|| format!("parsing {}", p.display()))?
    } else if cmd.full {
        FoldingConfig { clock_hz: cmd.clock, ..FoldingConfig::full(&shapes) }
    } else if !cmd.pe.is_empty() {
        if cmd.pe.len() != cmd.simd.len() {
            bail!("--pe and --simd need one value per layer");
        }
        FoldingConfig {
            layers: cmd.pe.iter().zip(&cmd.simd).map(|(&pe, &simd)| LayerFold { pe, simd }).collect(),
            clock_hz: cmd.clock,
        }
    } else {
        FoldingConfig { clock_hz: cmd.clock, ..FoldingConfig::minimal(shapes.len()) }
    };
    let report = hwcost::estimate(&shapes, &folding)?;
    print!("{}", String::from_utf8(json_bytes(&json!({"folding": folding, "cost": report})))?);
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Sweep(c) => cmd_sweep(c),
        Command::Select(c) => cmd_select(c),
        Command::Noise(c) => cmd_noise(c),
        Command::Lower(c) => cmd_lower(c),
        Command::Run(c) => cmd_run(c),
        Command::Cost(c) => cmd_cost(c),
        Command::Fold(c) => cmd_fold(c),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
