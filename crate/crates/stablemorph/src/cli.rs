//! The `stablemorph` command line.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use stablemorph_core::{representative_embedding, AblationConfig, Variant};

use crate::backend::Registry;
use crate::config::RunConfig;
use crate::corpus::{ingest, read_pairs, select_manifest_pairs, write_pairs, LayoutDescriptor, Manifest};
use crate::error::{Error, Result};
use crate::evaluation::fid::fid_between_dirs;
use crate::evaluation::quality::{
    build_report, discover_sets, parse_quality_scores, quality_scores_to_tsv, report_table, score_quality,
    write_report, QualityCache,
};
use crate::evaluation::scores::{evaluate_map, map_to_tsv, read_scores, write_map};
use crate::fsutil::{read_to_string, write_atomic};
use crate::identity_cache::extract_identity;
use crate::pipeline::{pair_subjects, prepare_adapters, prepare_identities, run_batch, Context, RunManifest, Stores};
use crate::plots::render_plots;

pub const CACHE_ENV: &str = "STABLEMORPH_CACHE";

#[derive(Debug, Parser)]
#[command(name = "stablemorph", version, about = "Face-morph generation and evaluation workbench")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<String>,
    /// default, A, B, C or D.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    #[arg(long, global = true)]
    pub max_pairs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub steps: Option<u32>,
    #[arg(long, global = true)]
    pub outputs: Option<u32>,
    #[arg(long, global = true)]
    pub prompt: Option<String>,
    #[arg(long, global = true)]
    pub negative_prompt: Option<String>,
    #[arg(long, global = true)]
    pub backend_gen: Option<String>,
    #[arg(long, global = true)]
    pub backend_frs: Option<String>,
    /// Quality scorer; repeat for several.
    #[arg(long, global = true)]
    pub scorer: Vec<String>,
    #[arg(long, global = true)]
    pub features: Option<String>,
    #[arg(long, global = true)]
    pub target_fmr: Option<f64>,
    /// per-subject-min or same-attempt.
    #[arg(long, global = true)]
    pub map_semantics: Option<String>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = CACHE_ENV)]
    pub cache: Option<PathBuf>,
    #[arg(long, short = 'j', global = true)]
    pub max_jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan a dataset into a manifest.
    Ingest {
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        layout: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Select morph pairs by embedding similarity.
    Pairs {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fine-tune an adapter for every subject in the pair list.
    Finetune {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Extract identity matrices for every subject in the pair list.
    Identity {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Prepare every ablation variant, not just the selected one.
        #[arg(long)]
        all_variants: bool,
    },
    /// Generate morphs for every pair.
    Morph {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        all_variants: bool,
        /// Fine-tune and extract missing artifacts first.
        #[arg(long)]
        prepare: bool,
    },
    /// MAP matrix from a comparison score file.
    Map {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Score `<images>/<method>/<dataset>/` image sets with quality scorers.
    Quality {
        #[arg(long)]
        images: PathBuf,
    },
    /// Fréchet distance between the features of two image directories.
    Fid {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        generated: PathBuf,
    },
    /// Mean ± std table from a quality score file.
    Report {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Distribution plots and MAP heatmap as SVG.
    Plots {
        /// Directory holding raw_<metric>.tsv exports.
        #[arg(long)]
        report: Option<PathBuf>,
        /// MAP table (map.tsv).
        #[arg(long)]
        map: Option<PathBuf>,
    },
}

impl Cli {
    /// Loads the config file (if any) and applies flag overrides.
    pub fn effective_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = &$flag {
                    $field = v.clone();
                }
            };
        }
        if self.dataset.is_some() {
            c.dataset = self.dataset.clone();
        }
        set!(self.variant => c.generation.variant);
        set!(self.top_k => c.pairing.top_k);
        if self.max_pairs.is_some() {
            c.pairing.max_pairs = self.max_pairs;
        }
        set!(self.seed => c.seed);
        set!(self.steps => c.generation.steps);
        set!(self.outputs => c.generation.outputs);
        set!(self.prompt => c.generation.prompt);
        set!(self.negative_prompt => c.generation.negative_prompt);
        set!(self.backend_gen => c.backends.generation);
        set!(self.backend_frs => c.backends.recognition);
        if !self.scorer.is_empty() {
            c.backends.scorers = self.scorer.clone();
        }
        set!(self.features => c.backends.features);
        set!(self.target_fmr => c.evaluation.target_fmr);
        set!(self.map_semantics => c.evaluation.map_semantics);
        set!(self.out => c.out);
        set!(self.cache => c.cache);
        set!(self.max_jobs => c.max_jobs);
        c.validate()?;
        Ok(c)
    }
}

/// Parses `args`, runs the command and returns the process exit status.
/// Failures print one `error[<class>]: <message>` line to `stderr`.
pub fn run<I, T>(args: I, registry: &Registry, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = writeln!(stderr, "error[usage]: {}", text.lines().next().unwrap_or("invalid arguments"));
            }
            return code;
        }
    };
    match execute(&cli, registry, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(stderr, "error[{}]: {msg}", e.class());
            e.exit_code()
        }
    }
}

struct Session<'a> {
    config: RunConfig,
    registry: Registry,
    out: &'a mut dyn Write,
}

impl Session<'_> {
    fn say(&mut self, line: impl AsRef<str>) {
        let _ = writeln!(self.out, "{}", line.as_ref());
    }

    fn path_or(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.config.out.join(default))
    }

    fn stores(&self) -> Stores {
        Stores::new(&self.config.cache)
    }
}

fn execute(cli: &Cli, base: &Registry, stdout: &mut dyn Write) -> Result<()> {
    let config = cli.effective_config()?;
    let registry = config.registry(base)?;
    let mut s = Session {
        config,
        registry,
        out: stdout,
    };
    let hash = s.config.hash();
    let seed = s.config.seed;
    s.say(format!("config-hash: {hash}"));
    s.say(format!("seed: {seed}"));
    match &cli.command {
        Command::Ingest { root, layout, manifest } => cmd_ingest(&mut s, root, layout, manifest),
        Command::Pairs { manifest, output } => cmd_pairs(&mut s, manifest, output),
        Command::Finetune { manifest, pairs } => cmd_finetune(&mut s, manifest, pairs),
        Command::Identity {
            manifest,
            pairs,
            all_variants,
        } => cmd_identity(&mut s, manifest, pairs, *all_variants),
        Command::Morph {
            manifest,
            pairs,
            all_variants,
            prepare,
        } => cmd_morph(&mut s, manifest, pairs, *all_variants, *prepare),
        Command::Map { scores } => cmd_map(&mut s, scores),
        Command::Quality { images } => cmd_quality(&mut s, images),
        Command::Fid { real, generated } => cmd_fid(&mut s, real, generated),
        Command::Report { scores } => cmd_report(&mut s, scores),
        Command::Plots { report, map } => cmd_plots(&mut s, report.as_deref(), map.as_deref()),
    }
}

fn cmd_ingest(s: &mut Session<'_>, root: &Option<PathBuf>, layout: &Option<PathBuf>, manifest: &Option<PathBuf>) -> Result<()> {
    let root = root
        .clone()
        .or_else(|| s.config.dataset_root.clone())
        .ok_or_else(|| Error::Config("no dataset root: pass --root or set dataset_root".into()))?;
    let layout_path = layout
        .clone()
        .or_else(|| s.config.layout.clone())
        .ok_or_else(|| Error::Config("no layout descriptor: pass --layout or set layout".into()))?;
    let mut layout = LayoutDescriptor::load(&layout_path)?;
    if let Some(d) = &s.config.dataset {
        layout.dataset = d.clone();
    }
    let mut m = ingest(&root, &layout)?;
    m.header.config_hash = Some(s.config.hash());
    let path = s.path_or(manifest, "manifest.jsonl");
    m.save(&path)?;
    s.say(format!(
        "dataset {}: {} files scanned, {} subjects, {} images, {} excluded",
        m.header.dataset,
        m.header.files_scanned,
        m.header.subjects,
        m.header.images,
        m.exclusions.len()
    ));
    s.say(format!("manifest: {}", path.display()));
    Ok(())
}

fn load_manifest(s: &Session<'_>, manifest: &Option<PathBuf>) -> Result<(PathBuf, Manifest)> {
    let path = s.path_or(manifest, "manifest.jsonl");
    if !path.exists() {
        return Err(Error::MissingArtifact {
            subject: path.display().to_string(),
            stage: "ingest",
        });
    }
    let m = Manifest::load(&path)?;
    Ok((path, m))
}

fn load_pairs(s: &Session<'_>, pairs: &Option<PathBuf>) -> Result<Vec<stablemorph_core::MorphPair>> {
    let path = s.path_or(pairs, "pairs.tsv");
    if !path.exists() {
        return Err(Error::MissingArtifact {
            subject: path.display().to_string(),
            stage: "pairs",
        });
    }
    let pairs = read_pairs(&path)?;
    if pairs.is_empty() {
        return Err(Error::input(format!("{}: pair list is empty", path.display())));
    }
    Ok(pairs)
}

fn cmd_pairs(s: &mut Session<'_>, manifest: &Option<PathBuf>, output: &Option<PathBuf>) -> Result<()> {
    let (mpath, mut m) = load_manifest(s, manifest)?;
    let recognition = s.registry.recognition(&s.config.backends.recognition)?;
    let stores = s.stores();
    let ids: Vec<String> = m.subjects.iter().map(|e| e.subject_id.clone()).collect();
    let results = crate::pipeline::parallel_map(&ids, s.config.max_jobs, |id| -> Result<Vec<f64>> {
        let n = m.subject(id).map(|e| e.images.len()).unwrap_or(0);
        let images = m.subject_images(id, n)?;
        let (matrix, _) = extract_identity(id, &images, recognition.as_ref(), &stores.identity)?;
        Ok(representative_embedding(&matrix)?)
    });
    let mut embeddings = BTreeMap::new();
    for (id, r) in ids.into_iter().zip(results) {
        embeddings.insert(id, r?);
    }
    let selection = select_manifest_pairs(&mut m, &embeddings, s.config.selection_params(), recognition.name())?;
    m.header.config_hash = Some(s.config.hash());
    m.save(&mpath)?;
    let path = s.path_or(output, "pairs.tsv");
    write_pairs(&path, &selection.pairs)?;
    for (g, n) in &selection.skipped_classes {
        s.say(format!("skipped gender class {g}: {n} subject(s)"));
    }
    s.say(format!("pairs: {} -> {}", selection.pairs.len(), path.display()));
    Ok(())
}

fn summarize(s: &mut Session<'_>, stage: &str, results: Vec<(String, Result<bool>)>) -> Result<()> {
    let (mut fresh, mut cached) = (0, 0);
    let mut first_err = None;
    let mut failed = 0;
    for (subject, r) in results {
        match r {
            Ok(true) => cached += 1,
            Ok(false) => fresh += 1,
            Err(e) => {
                failed += 1;
                log::error!("{stage} {subject}: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    s.say(format!("{stage}: {fresh} computed, {cached} cached, {failed} failed"));
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn cmd_finetune(s: &mut Session<'_>, manifest: &Option<PathBuf>, pairs: &Option<PathBuf>) -> Result<()> {
    let (_, m) = load_manifest(s, manifest)?;
    let subjects = pair_subjects(&load_pairs(s, pairs)?);
    let generation = s.registry.generation(&s.config.backends.generation)?;
    let recognition = s.registry.recognition(&s.config.backends.recognition)?;
    let stores = s.stores();
    let ctx = Context {
        manifest: &m,
        stores: &stores,
        recognition: recognition.as_ref(),
        generation: generation.as_ref(),
    };
    let results = prepare_adapters(&ctx, &subjects, &s.config.run_settings());
    summarize(s, "fine_tune", results)
}

fn selected_variants(s: &Session<'_>, all: bool) -> Result<Vec<Variant>> {
    Ok(if all { Variant::ALL.to_vec() } else { vec![s.config.variant()?] })
}

fn identity_sizes(variants: &[Variant]) -> BTreeSet<usize> {
    variants
        .iter()
        .map(|&v| AblationConfig::for_variant(v))
        .filter(|a| a.use_identity)
        .map(|a| a.identity_images_n)
        .collect()
}

fn cmd_identity(s: &mut Session<'_>, manifest: &Option<PathBuf>, pairs: &Option<PathBuf>, all: bool) -> Result<()> {
    let (_, m) = load_manifest(s, manifest)?;
    let subjects = pair_subjects(&load_pairs(s, pairs)?);
    let variants = selected_variants(s, all)?;
    let generation = s.registry.generation(&s.config.backends.generation)?;
    let recognition = s.registry.recognition(&s.config.backends.recognition)?;
    let stores = s.stores();
    let ctx = Context {
        manifest: &m,
        stores: &stores,
        recognition: recognition.as_ref(),
        generation: generation.as_ref(),
    };
    let sizes = identity_sizes(&variants);
    if sizes.is_empty() {
        s.say("identity: selected variant uses no identity embeddings");
    }
    for n in sizes {
        let results = prepare_identities(&ctx, &subjects, n, s.config.max_jobs);
        summarize(s, &format!("identity n={n}"), results)?;
    }
    Ok(())
}

fn cmd_morph(
    s: &mut Session<'_>,
    manifest: &Option<PathBuf>,
    pairs: &Option<PathBuf>,
    all: bool,
    prepare: bool,
) -> Result<()> {
    let generation = s.registry.generation(&s.config.backends.generation)?;
    let recognition = s.registry.recognition(&s.config.backends.recognition)?;
    let (_, m) = load_manifest(s, manifest)?;
    let pairs = load_pairs(s, pairs)?;
    let variants = selected_variants(s, all)?;
    let settings = s.config.run_settings();
    let stores = s.stores();
    let ctx = Context {
        manifest: &m,
        stores: &stores,
        recognition: recognition.as_ref(),
        generation: generation.as_ref(),
    };
    if prepare {
        let subjects = pair_subjects(&pairs);
        if variants.iter().any(|&v| AblationConfig::for_variant(v).use_adapters) {
            summarize(s, "fine_tune", prepare_adapters(&ctx, &subjects, &settings))?;
        }
        for n in identity_sizes(&variants) {
            summarize(
                s,
                &format!("identity n={n}"),
                prepare_identities(&ctx, &subjects, n, settings.max_jobs),
            )?;
        }
    }
    let out = s.config.out.clone();
    let log = RunManifest::open(&out.join("runs.jsonl"))?;
    let mut failed = 0;
    for v in variants {
        let report = run_batch(&pairs, &AblationConfig::for_variant(v), &settings, &ctx, &out, &log)?;
        s.say(format!("variant {}: {report}", v.as_str()));
        for (pair, msg) in &report.failures {
            s.say(format!("  failed {pair}: {msg}"));
        }
        failed += report.failed;
    }
    s.say(format!("run manifest: {}", log.path().display()));
    if failed > 0 {
        return Err(Error::Backend {
            backend: generation.name().to_string(),
            message: format!("{failed} pair(s) failed; see run manifest"),
        });
    }
    Ok(())
}

fn cmd_map(s: &mut Session<'_>, scores: &Path) -> Result<()> {
    let set = read_scores(scores)?;
    let result = evaluate_map(&set, s.config.evaluation.target_fmr, s.config.map_semantics()?)?;
    for (frs, t) in &result.thresholds.thresholds {
        s.say(format!("threshold {frs}: {t}"));
    }
    s.say(format!(
        "MAP ({} morphs, {}, FMR {})",
        result.matrix.morph_count,
        result.semantics.as_str(),
        result.thresholds.target_fmr
    ));
    let table = map_to_tsv(&result.matrix);
    let _ = write!(s.out, "{table}");
    let dir = s.config.out.join("map");
    write_map(&dir, &result, &s.config.hash())?;
    s.say(format!("written: {}", dir.display()));
    Ok(())
}

fn cmd_quality(s: &mut Session<'_>, images: &Path) -> Result<()> {
    let sets = discover_sets(images)?;
    let scorers = s
        .config
        .backends
        .scorers
        .iter()
        .map(|n| s.registry.scorer(n))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&dyn crate::backend::QualityScorer> = scorers.iter().map(|a| a.as_ref()).collect();
    let cache = QualityCache::new(&s.config.cache);
    let run = score_quality(&sets, &refs, &cache, s.config.max_jobs)?;
    let dir = s.config.out.join("quality");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let scores_path = dir.join("scores.tsv");
    write_atomic(&scores_path, quality_scores_to_tsv(&run.scores).as_bytes())?;
    s.say(format!(
        "quality: {} scores, {} cached, {} scorer calls, {} failures",
        run.scores.len(),
        run.cache_hits,
        run.scorer_calls,
        run.failures.len()
    ));
    for f in &run.failures {
        s.say(format!("  failed {} [{}]: {}", f.image.display(), f.metric, f.message));
    }
    if run.scores.is_empty() {
        return Err(Error::input("no image could be scored"));
    }
    let report = build_report(&run.scores)?;
    write_report(&dir, &report)?;
    let table = report_table(&report);
    let _ = write!(s.out, "{table}");
    s.say(format!("written: {}", dir.display()));
    Ok(())
}

fn cmd_fid(s: &mut Session<'_>, real: &Path, generated: &Path) -> Result<()> {
    let extractor = s.registry.features(&s.config.backends.features)?;
    let d = fid_between_dirs(real, generated, extractor.as_ref(), s.config.max_jobs)?;
    s.say(format!("fid[{}]: {d:.4}", extractor.name()));
    Ok(())
}

fn cmd_report(s: &mut Session<'_>, scores: &Path) -> Result<()> {
    let rows = parse_quality_scores(&read_to_string(scores)?)?;
    let report = build_report(&rows)?;
    let dir = s.config.out.join("report");
    write_report(&dir, &report)?;
    let table = report_table(&report);
    let _ = write!(s.out, "{table}");
    s.say(format!("written: {}", dir.display()));
    Ok(())
}

fn cmd_plots(s: &mut Session<'_>, report: Option<&Path>, map: Option<&Path>) -> Result<()> {
    let dir = s.config.out.join("plots");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for p in render_plots(report, map, &dir)? {
        s.say(format!("written: {}", p.display()));
    }
    Ok(())
}
