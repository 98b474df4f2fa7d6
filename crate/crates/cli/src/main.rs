use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use geotok::harness::{
    demo_corpus, demo_molecules, gradient_suite, patch_report, token_budget_curve, BudgetConfig, GateMode,
};
use geotok::structgraph::{
    embed_molecule_coords, generate_fiber, parse_pdb_atoms, parse_smiles, read_graph, write_graph, EmbedConfig,
    FiberConfig, NucleicKind, DEFAULT_CUTOFF,
};
use geotok::trainer::{
    adapt_lm, align_connector, load_corpus, prepare_graph, pretrain_decoder, pretrain_encoder, Sample,
};
use geotok::{AtomGraph, Checkpoint, RunConfig, StageOutcome};

#[derive(Parser)]
#[command(name = "geotok", version, about = "Structure-to-token connector toolkit")]
struct Cli {
    /// Overrides the seed of the run configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Every relative path is resolved against this directory.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Builds a graph file from SMILES, a PDB file or a nucleic-acid sequence.
    Parse(ParseArgs),
    /// Patches one graph under an instruction and reports anchors and tokens.
    Patch(PatchArgs),
    /// Runs the finite-difference gradient suite; exits 0 only if every case passes.
    Gradcheck,
    /// Masked reconstruction pretraining of the encoder.
    PretrainEncoder(EncoderArgs),
    /// Next-token warm start of the toy decoder.
    PretrainDecoder(CorpusArgs),
    /// Trains the gate and the fusion stack on frozen encoder and decoder.
    Align(AlignArgs),
    /// End-to-end tuning of connector and decoder.
    Adapt(AdaptArgs),
    /// Emits the structural token budget curve as CSV.
    BenchTokens(BenchArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Input {
    #[arg(long)]
    smiles: Option<String>,
    #[arg(long)]
    pdb: Option<PathBuf>,
    /// DNA sequence, or RNA with `--rna`.
    #[arg(long)]
    fiber: Option<String>,
}

#[derive(Args)]
struct ParseArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, requires = "fiber")]
    rna: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct PatchArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    instruction: String,
    /// Alignment or adaptation checkpoint; a seeded fresh connector otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// JSON report path; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct Outputs {
    /// Checkpoint path; the report goes next to it as `.report.json` and `.report.csv`.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct CorpusArgs {
    /// JSONL corpus; the built-in demo corpus when absent.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[command(flatten)]
    out: Outputs,
}

#[derive(Args)]
struct EncoderArgs {
    /// Graph files; the corpus graphs or the demo molecules when absent.
    #[arg(long = "graph")]
    graphs: Vec<PathBuf>,
    #[arg(long, conflicts_with = "graphs")]
    corpus: Option<PathBuf>,
    #[command(flatten)]
    out: Outputs,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    encoder: PathBuf,
    /// Decoder warm-start checkpoint; a fresh decoder when absent.
    #[arg(long)]
    decoder: Option<PathBuf>,
    #[command(flatten)]
    out: Outputs,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    out: Outputs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Uniform,
    Trained,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, value_enum, default_value = "uniform")]
    mode: Mode,
    #[arg(long, required_if_eq("mode", "trained"))]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "Describe this molecule.")]
    instruction: String,
    #[arg(long, default_value_t = 32)]
    fixed_k: usize,
    /// Language tokens per prompt; the demo corpus mean when absent.
    #[arg(long)]
    language_tokens: Option<usize>,
    /// CSV path; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

struct Workspace {
    workdir: PathBuf,
    config: RunConfig,
}

impl Workspace {
    fn path(&self, p: &Path) -> PathBuf {
        self.workdir.join(p)
    }

    fn samples(&self, corpus: Option<&Path>) -> Result<Vec<Sample>> {
        match corpus {
            Some(p) => {
                let p = self.path(p);
                load_corpus(&p, DEFAULT_CUTOFF).with_context(|| format!("loading corpus {}", p.display()))
            }
            None => Ok(demo_corpus(self.config.seed)?),
        }
    }

    fn checkpoint(&self, p: &Path) -> Result<Checkpoint> {
        let p = self.path(p);
        Checkpoint::load(&p).with_context(|| format!("loading checkpoint {}", p.display()))
    }

    fn save(&self, outcome: &StageOutcome, out: &Outputs) -> Result<()> {
        let path = self.path(&out.output);
        outcome.checkpoint.save(&path)?;
        let stem = path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
        let (json, csv) = outcome.report.write(&path.with_file_name(format!("{stem}.report.json")))?;
        let last = outcome.report.final_eval();
        println!(
            "{} checkpoint {} (report {}, {}){}",
            outcome.checkpoint.stage.as_str(),
            path.display(),
            json.display(),
            csv.display(),
            last.map_or(String::new(), |e| format!(", final eval loss {:.6}", e.loss)),
        );
        Ok(())
    }
}

fn write_or_print(path: Option<PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse(ctx: &Workspace, args: ParseArgs) -> Result<()> {
    let graph = match (args.input.smiles, args.input.pdb, args.input.fiber) {
        (Some(s), _, _) => embed_molecule_coords(&parse_smiles(&s)?, ctx.config.seed, &EmbedConfig::default())?,
        (_, Some(p), _) => {
            let p = ctx.path(&p);
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            parse_pdb_atoms(&text)?
        }
        (_, _, Some(seq)) => {
            let kind = if args.rna { NucleicKind::Rna } else { NucleicKind::Dna };
            generate_fiber(&seq, kind, &FiberConfig::default_for(kind))?
        }
        _ => unreachable!("clap enforces exactly one input"),
    };
    let out = ctx.path(&args.output);
    write_graph(&out, &graph)?;
    println!("{} atoms, {} edges -> {}", graph.len(), graph.edges.len(), out.display());
    Ok(())
}

fn read_prepared(path: &Path) -> Result<AtomGraph> {
    let g = read_graph(path).with_context(|| format!("reading graph {}", path.display()))?;
    Ok(prepare_graph(&g, DEFAULT_CUTOFF)?)
}

fn run(cli: Cli) -> Result<bool> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(&cli.workdir.join(p))
            .with_context(|| format!("loading config {}", cli.workdir.join(p).display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let ctx = Workspace {
        workdir: cli.workdir,
        config,
    };
    match cli.command {
        Command::Parse(args) => parse(&ctx, args)?,
        Command::Patch(args) => {
            let graph = read_prepared(&ctx.path(&args.graph))?;
            let ckpt = args.checkpoint.as_deref().map(|p| ctx.checkpoint(p)).transpose()?;
            let report = patch_report(&graph, &args.instruction, ckpt.as_ref(), &ctx.config)?;
            let text = serde_json::to_string_pretty(&report)? + "\n";
            write_or_print(args.output.map(|p| ctx.path(&p)), &text)?;
        }
        Command::Gradcheck => {
            let report = gradient_suite(ctx.config.seed)?;
            for c in &report.cases {
                println!(
                    "{} {}: max relative error {:.3e} (tolerance {:.0e}, {} coordinates)",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.max_rel_error,
                    c.tolerance,
                    c.coordinates
                );
            }
            return Ok(report.passed());
        }
        Command::PretrainEncoder(args) => {
            let graphs = if !args.graphs.is_empty() {
                args.graphs.iter().map(|p| read_prepared(&ctx.path(p))).collect::<Result<Vec<_>>>()?
            } else if let Some(c) = &args.corpus {
                ctx.samples(Some(c))?.into_iter().map(|s| s.graph).collect()
            } else {
                demo_molecules(ctx.config.seed)?
            };
            ctx.save(&pretrain_encoder(&graphs, &ctx.config)?, &args.out)?;
        }
        Command::PretrainDecoder(args) => {
            let samples = ctx.samples(args.corpus.as_deref())?;
            ctx.save(&pretrain_decoder(&samples, &ctx.config)?, &args.out)?;
        }
        Command::Align(args) => {
            let samples = ctx.samples(args.corpus.as_deref())?;
            let encoder = ctx.checkpoint(&args.encoder)?;
            let decoder = args.decoder.as_deref().map(|p| ctx.checkpoint(p)).transpose()?;
            ctx.save(&align_connector(&samples, &encoder, decoder.as_ref(), &ctx.config)?, &args.out)?;
        }
        Command::Adapt(args) => {
            let samples = ctx.samples(args.corpus.as_deref())?;
            let ckpt = ctx.checkpoint(&args.checkpoint)?;
            ctx.save(&adapt_lm(&samples, &ckpt, &ctx.config)?, &args.out)?;
        }
        Command::BenchTokens(args) => {
            let mode = match args.mode {
                Mode::Uniform => GateMode::Uniform,
                Mode::Trained => {
                    let Some(p) = &args.checkpoint else {
                        bail!("trained mode needs --checkpoint");
                    };
                    GateMode::Trained {
                        checkpoint: Box::new(ctx.checkpoint(p)?),
                        instruction: args.instruction,
                    }
                }
            };
            let defaults = BudgetConfig::default();
            let config = BudgetConfig {
                patch: geotok::PatchConfig {
                    rho: ctx.config.mass_based_anchor_fraction,
                    k_max: ctx.config.max_anchors_per_graph,
                    ..defaults.patch
                },
                fixed_k: args.fixed_k,
                language_tokens: args.language_tokens.unwrap_or(defaults.language_tokens),
            };
            let csv = token_budget_curve(&args.sizes, &mode, &config)?.to_csv()?;
            write_or_print(args.output.map(|p| ctx.path(&p)), &csv)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
