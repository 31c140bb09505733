//! `parlat` command-line tool: decode, batch-decode, verify, score, bench.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use parlat::acoustics::load_cost_matrix;
use parlat::eval::{lattice_density, oracle_wer, wer};
use parlat::lattice::{prune_lattice, write_lattice_text};
use parlat::reference::{brute_force_extra_costs, serial_decode};
use parlat::synth::{bench_workload, random_instance, InstanceShape};
use parlat::wfst::{load_wfst_text, Label, SymbolTable};
use parlat::{CostMatrix, DecodeConfig, DecodeResult, Engine, Error, SchedulerKind, Wfst};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "parlat", version, about = "Parallel WFST Viterbi decoder with lattice generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode one utterance and optionally write its lattice.
    Decode {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        costs: PathBuf,
        #[arg(long)]
        lattice_out: Option<PathBuf>,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Decode a list of utterances concurrently on one worker pool.
    BatchDecode {
        #[command(flatten)]
        graph: GraphArgs,
        /// File with one cost matrix path per line.
        #[arg(long)]
        costs_list: PathBuf,
        /// Where `<stem>.lat` files go; defaults to each input's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Check the parallel decoder and the pruner against the serial oracles
    /// on random instances.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Decode a list of utterances and report WER, oracle WER and density
    /// against references.
    Score {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        costs_list: PathBuf,
        /// One reference transcript per line, aligned with --costs-list.
        #[arg(long = "ref")]
        reference: PathBuf,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Time the serial oracle and both schedulers over worker counts on a
    /// synthetic graph.
    Bench {
        #[arg(long, default_value_t = 100_000)]
        arcs: usize,
        #[arg(long, default_value_t = 500)]
        frames: usize,
        #[arg(long, default_value_t = 1)]
        utterances: usize,
        #[arg(long, default_value_t = 6.0)]
        beam: f64,
        #[arg(long, default_value_t = 4.0)]
        lattice_beam: f64,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        workers: Vec<usize>,
        /// Give one hub state 30% of the arcs.
        #[arg(long)]
        skewed: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    wfst: PathBuf,
    /// Word symbol table, `word id` per line.
    #[arg(long)]
    words: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, default_value_t = 14.0)]
    beam: f64,
    #[arg(long, default_value_t = 8.0)]
    lattice_beam: f64,
    #[arg(long, default_value_t = 1.0)]
    acoustic_scale: f32,
    /// Defaults to the number of hardware threads.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "dynamic")]
    scheduler: SchedulerKind,
    #[arg(long, default_value_t = 25)]
    prune_interval: usize,
    #[arg(long, default_value_t = 1 << 26)]
    max_lattice_arcs: usize,
}

impl SearchArgs {
    fn config(&self) -> DecodeConfig {
        let d = DecodeConfig::default();
        DecodeConfig {
            beam: self.beam,
            lattice_beam: self.lattice_beam,
            acoustic_scale: self.acoustic_scale,
            num_workers: self.workers.unwrap_or(d.num_workers),
            scheduler: self.scheduler,
            prune_interval: self.prune_interval,
            max_lattice_arcs: self.max_lattice_arcs,
            ..d
        }
    }
}

struct Graph {
    wfst: Wfst,
    words: Option<SymbolTable>,
}

impl GraphArgs {
    fn load(&self) -> anyhow::Result<Graph> {
        let wfst = load_wfst_text(&read(&self.wfst)?).with_context(|| self.wfst.display().to_string())?;
        let words = match &self.words {
            Some(p) => Some(SymbolTable::parse(&read(p)?).with_context(|| p.display().to_string())?),
            None => None,
        };
        Ok(Graph { wfst, words })
    }
}

impl Graph {
    fn render(&self, ids: &[Label]) -> String {
        match &self.words {
            Some(t) => t.render(ids),
            None => ids.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(" "),
        }
    }

    fn parse_transcript(&self, line: &str, lineno: usize) -> anyhow::Result<Vec<Label>> {
        line.split_whitespace()
            .map(|tok| match &self.words {
                Some(t) => t.id(tok).with_context(|| format!("line {lineno}: unknown word `{tok}`")),
                None => tok.parse().with_context(|| format!("line {lineno}: bad word id `{tok}`")),
            })
            .collect()
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_costs(path: &Path) -> anyhow::Result<CostMatrix> {
    load_cost_matrix(&read(path)?).with_context(|| path.display().to_string())
}

fn list_paths(list: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let base = list.parent().unwrap_or(Path::new(""));
    let paths: Vec<PathBuf> = read(list)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| base.join(l))
        .collect();
    if paths.is_empty() {
        bail!(Error::Usage(format!("{} lists no inputs", list.display())));
    }
    Ok(paths)
}

fn summary(g: &Graph, r: &DecodeResult) -> String {
    let mut s = format!("words: {}  cost: {}", g.render(&r.words), r.cost as f32);
    if r.partial {
        s.push_str("  (partial: no final state reached)");
    }
    s
}

fn write_lattice(r: &DecodeResult, path: &Path) -> anyhow::Result<()> {
    let text = write_lattice_text(&r.final_lattice()?);
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn decode(graph: &GraphArgs, costs: &Path, lattice_out: Option<&Path>, search: &SearchArgs) -> anyhow::Result<()> {
    let g = graph.load()?;
    let m = load_costs(costs)?;
    let r = Engine::new(search.config())?.decode(&g.wfst, &m)?;
    println!("{}", summary(&g, &r));
    if let Some(p) = lattice_out {
        write_lattice(&r, p)?;
    }
    Ok(())
}

fn batch_decode(graph: &GraphArgs, list: &Path, out_dir: Option<&Path>, search: &SearchArgs) -> anyhow::Result<()> {
    let g = graph.load()?;
    let paths = list_paths(list)?;
    let mats = paths.iter().map(|p| load_costs(p)).collect::<anyhow::Result<Vec<_>>>()?;
    let results = Engine::new(search.config())?.decode_batch(&g.wfst, &mats);
    let mut first_err = None;
    for (path, r) in paths.iter().zip(results) {
        match r {
            Ok(r) => {
                let stem = path.file_stem().unwrap_or(path.as_os_str());
                let dir = out_dir.or(path.parent()).unwrap_or(Path::new(""));
                let out = dir.join(stem).with_extension("lat");
                write_lattice(&r, &out)?;
                println!("{}: {}", path.display(), summary(&g, &r));
            }
            Err(e) => {
                println!("{}: error: {e}", path.display());
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn verify(seed: u64, instances: usize, workers: Option<usize>) -> anyhow::Result<()> {
    let d = DecodeConfig::default();
    let cfg = DecodeConfig { num_workers: workers.unwrap_or(d.num_workers), lattice_beam: f64::INFINITY, ..d };
    let engine = Engine::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut matched, mut pruned_ok) = (0, 0);
    for _ in 0..instances {
        let (g, m) = random_instance(&mut rng, InstanceShape::default());
        let par = engine.decode(&g, &m)?;
        let ser = serial_decode(&g, &m, engine.config())?;
        let unique = ser.runner_up.is_none_or(|r| r - ser.cost > 1e-3);
        if (par.cost - ser.cost).abs() <= 1e-4 && par.partial == ser.partial && (!unique || par.words == ser.words) {
            matched += 1;
        }

        let brute = brute_force_extra_costs(&par.lattice)?;
        let mut lat = par.lattice;
        let beam = rng.gen_range(0.0..6.0);
        prune_lattice(&mut lat, beam)?;
        let agree = lat.arcs().zip(&brute).all(|(a, &b)| {
            let extra_ok = a.extra_cost == b || (a.extra_cost - b).abs() <= 1e-4;
            extra_ok && ((b - beam).abs() <= 1e-3 || a.pruned == (b > beam))
        });
        pruned_ok += usize::from(agree);
    }
    println!("{matched}/{instances} matched");
    println!("pruning: {pruned_ok}/{instances} lattices agree with brute force");
    if matched != instances || pruned_ok != instances {
        bail!(Error::DecodeFailure("verification found mismatches".into()));
    }
    Ok(())
}

fn score(graph: &GraphArgs, list: &Path, reference: &Path, search: &SearchArgs) -> anyhow::Result<()> {
    let g = graph.load()?;
    let paths = list_paths(list)?;
    let refs: Vec<Vec<Label>> = read(reference)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| g.parse_transcript(l, i + 1))
        .collect::<anyhow::Result<_>>()?;
    if refs.len() != paths.len() {
        bail!(Error::Usage(format!("{} references for {} utterances", refs.len(), paths.len())));
    }
    let mats = paths.iter().map(|p| load_costs(p)).collect::<anyhow::Result<Vec<_>>>()?;
    let results = Engine::new(search.config())?.decode_batch(&g.wfst, &mats);

    println!("{:<24} {:>8} {:>8} {:>10}", "utterance", "WER%", "OWER%", "density");
    let (mut errs, mut oerrs, mut words, mut arcs, mut frames) = (0, 0, 0, 0, 0);
    for ((path, r), reference) in paths.iter().zip(results).zip(&refs) {
        let r = r?;
        let lat = r.final_lattice()?;
        let w = wer(&r.words, reference)?;
        let o = oracle_wer(&lat, reference)?;
        let density = lattice_density(&lat, r.num_frames);
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into());
        println!("{name:<24} {:>8.2} {:>8.2} {density:>10.2}", w.wer_percent, o.ower_percent);
        errs += w.errors();
        oerrs += o.errors;
        words += w.ref_len;
        arcs += lat.num_arcs();
        frames += r.num_frames;
    }
    let pct = |e: usize| 100.0 * e as f64 / words as f64;
    let density = if frames == 0 { 0.0 } else { arcs as f64 / frames as f64 };
    println!("{:<24} {:>8.2} {:>8.2} {density:>10.2}", "TOTAL", pct(errs), pct(oerrs));
    Ok(())
}

struct BenchRow {
    config: String,
    workers: usize,
    scheduler: String,
    wall: Duration,
    token_passing: Duration,
    lattice_pruning: Duration,
    other: Duration,
}

#[allow(clippy::too_many_arguments)]
fn bench(
    arcs: usize,
    frames: usize,
    utterances: usize,
    beam: f64,
    lattice_beam: f64,
    workers: &[usize],
    skewed: bool,
    seed: u64,
    csv: Option<&Path>,
) -> anyhow::Result<()> {
    if workers.is_empty() || workers.contains(&0) {
        bail!(Error::Usage("--workers needs positive counts".into()));
    }
    let w = bench_workload(&mut ChaCha8Rng::seed_from_u64(seed), arcs, frames, utterances.max(1), skewed);
    let base = DecodeConfig { beam, lattice_beam, ..Default::default() };
    let config = if skewed { "skewed" } else { "uniform" };
    let mut rows = Vec::new();

    let started = Instant::now();
    for m in &w.utterances {
        serial_decode(&w.wfst, m, &base)?;
    }
    let wall = started.elapsed();
    rows.push(BenchRow {
        config: format!("{config}-serial"),
        workers: 1,
        scheduler: "serial".into(),
        wall,
        token_passing: Duration::ZERO,
        lattice_pruning: Duration::ZERO,
        other: Duration::ZERO,
    });

    for &n in workers {
        for kind in [SchedulerKind::Static, SchedulerKind::Dynamic] {
            let engine = Engine::new(DecodeConfig { num_workers: n, scheduler: kind, ..base.clone() })?;
            let mut row = BenchRow {
                config: config.into(),
                workers: n,
                scheduler: kind.to_string(),
                wall: Duration::ZERO,
                token_passing: Duration::ZERO,
                lattice_pruning: Duration::ZERO,
                other: Duration::ZERO,
            };
            let started = Instant::now();
            for m in &w.utterances {
                let s = engine.decode(&w.wfst, m)?.stats;
                row.token_passing += s.token_passing;
                row.lattice_pruning += s.lattice_pruning;
                row.other += s.other;
            }
            row.wall = started.elapsed();
            rows.push(row);
        }
    }

    let serial = rows[0].wall.as_secs_f64();
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    println!(
        "{} arcs, {} frames x {} utterance(s), beam {beam}, lattice beam {lattice_beam}, {} hardware thread(s)",
        w.wfst.num_arcs(),
        frames,
        w.utterances.len(),
        std::thread::available_parallelism().map_or(1, |n| n.get())
    );
    println!(
        "{:<16} {:>7} {:>9} {:>10} {:>8} {:>12} {:>12} {:>10}",
        "config", "workers", "scheduler", "wall_ms", "speedup", "token_ms", "prune_ms", "other_ms"
    );
    let mut text = String::from("config,workers,scheduler,wall_ms,speedup\n");
    for r in &rows {
        let speedup = serial / r.wall.as_secs_f64();
        println!(
            "{:<16} {:>7} {:>9} {:>10.1} {:>8.2} {:>12.1} {:>12.1} {:>10.1}",
            r.config,
            r.workers,
            r.scheduler,
            ms(r.wall),
            speedup,
            ms(r.token_passing),
            ms(r.lattice_pruning),
            ms(r.other)
        );
        writeln!(text, "{},{},{},{:.3},{:.3}", r.config, r.workers, r.scheduler, ms(r.wall), speedup)?;
    }
    println!();
    print!("{text}");
    if let Some(p) = csv {
        fs::write(p, &text).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Decode { graph, costs, lattice_out, search } => decode(&graph, &costs, lattice_out.as_deref(), &search),
        Command::BatchDecode { graph, costs_list, out_dir, search } => {
            batch_decode(&graph, &costs_list, out_dir.as_deref(), &search)
        }
        Command::Verify { seed, instances, workers } => verify(seed, instances, workers),
        Command::Score { graph, costs_list, reference, search } => score(&graph, &costs_list, &reference, &search),
        Command::Bench { arcs, frames, utterances, beam, lattice_beam, workers, skewed, seed, csv } => {
            bench(arcs, frames, utterances, beam, lattice_beam, &workers, skewed, seed, csv.as_deref())
        }
    }
}

/// 0 ok, 1 decode failure, 2 usage or input error, 3 capacity.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::DecodeFailure(_) | Error::Invariant(_)) => 1,
        Some(Error::Capacity { .. }) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
