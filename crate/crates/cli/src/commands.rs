use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use uiot_core::experiments::delta_lu::{
    run_delta_lu_study, study_to_long_csv, DeltaLuConfig, StudyMode,
};
use uiot_core::experiments::grouping::{group_pairs, grouping_to_long_csv, Criterion};
use uiot_core::experiments::sweep::{pairwise_sweep, read_sweep_table, SweepOptions};
use uiot_core::geometry::normalize_with_dim;
use uiot_core::ot::{plan_to_csv, plan_to_json};
use uiot_core::retrieval::{
    build_label_embeddings, classification_accuracy, classify, rank_apps, LabelEmbeddingSet,
    LabelFile,
};
use uiot_core::store::encoder::{connect, encode_images, Preprocess};
use uiot_core::store::{ingest, write_dataset, EmbeddingBlock, ScreenshotEntry};
use uiot_core::synthetic::{clustered_dataset, ClusterConfig};
use uiot_core::uniformity::{app_uniformity, delta_uniformity, WhatIfEdit};
use uiot_core::{
    app_distance, Dataset, EmbeddingVector, Execution, OtCache, SolverConfig, SolverMode,
};
use uiot_service::{router_with_static, AppState};

use crate::args::{Cli, Command, Global, PlanFormat, Solver, Study, SweepArgs, SynthArgs};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

/// Everything derived from the global flags, validated up front.
struct Context {
    global: Global,
    solver: SolverConfig,
    exec: Execution,
}

impl Context {
    fn new(global: Global) -> Result<Self> {
        let solver = SolverConfig {
            mode: match global.solver {
                Solver::Exact => SolverMode::Exact,
                Solver::Sinkhorn => SolverMode::Sinkhorn,
                Solver::Auto => SolverMode::Auto,
            },
            epsilon: global.epsilon,
            tol: global.tol,
            max_iter: global.max_iter,
            ..SolverConfig::default()
        };
        solver.validate().map_err(|e| usage(e.to_string()))?;
        let exec = execution(global.threads)?;
        Ok(Context {
            global,
            solver,
            exec,
        })
    }

    fn dataset(&self) -> Result<Dataset> {
        let path = self
            .global
            .dataset
            .as_ref()
            .ok_or_else(|| usage("--dataset (or UIOT_DATASET) is required"))?;
        Ok(ingest(path)?.0)
    }

    fn output(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.global.output_dir)?;
        Ok(self.global.output_dir.join(name))
    }

    /// JSON with `--json`, otherwise the human-readable rendering.
    fn emit<T: Serialize>(&self, value: &T, human: impl FnOnce() -> String) -> Result<()> {
        if self.global.json {
            println!("{}", serde_json::to_string_pretty(value)?);
        } else {
            print!("{}", human());
        }
        Ok(())
    }
}

fn execution(threads: Option<usize>) -> Result<Execution> {
    match threads {
        Some(0) => Err(usage("--threads must be at least 1")),
        Some(1) => Ok(Execution::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| usage(format!("cannot size the thread pool: {e}")))?;
            Ok(Execution::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Execution::Sequential),
        None => Ok(Execution::default()),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Context::new(cli.global)?;
    match cli.command {
        Command::Ingest { manifest } => cmd_ingest(&ctx, &manifest),
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::RetrieveApp { query, k } => cmd_retrieve_app(&ctx, &query, k),
        Command::Plan {
            query,
            target,
            format,
            out,
        } => cmd_plan(&ctx, &query, &target, format, out),
        Command::Uniformity { app, all: _, t } => cmd_uniformity(&ctx, app, t),
        Command::Whatif {
            app,
            remove,
            add_embeddings,
            t,
        } => cmd_whatif(&ctx, &app, remove, add_embeddings, t),
        Command::Classify {
            labels,
            screenshot,
            k,
        } => cmd_classify(&ctx, &labels, &screenshot, k),
        Command::EvaluateLabels { labels, k } => cmd_evaluate(&ctx, &labels, &k),
        Command::BuildLabels {
            labels,
            endpoint,
            out,
            dim,
        } => cmd_build_labels(&ctx, &labels, &endpoint, &out, dim),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
        Command::Study(Study::PairGrouping { criterion, table }) => {
            cmd_pair_grouping(&ctx, &criterion, table)
        }
        Command::Study(Study::DeltaLu {
            mode,
            n,
            held_out,
            t,
        }) => cmd_delta_lu(&ctx, &mode, n, held_out, t),
        Command::Encode {
            images,
            endpoint,
            dim,
            pad_square,
            out,
        } => cmd_encode(&ctx, &images, &endpoint, dim, pad_square, &out),
        Command::Serve {
            port,
            host,
            static_dir,
            labels,
            artifacts,
            encoder,
            pad_square,
        } => cmd_serve(
            &ctx, port, &host, static_dir, labels, artifacts, encoder, pad_square,
        ),
    }
}

fn cmd_ingest(ctx: &Context, manifest: &Path) -> Result<()> {
    let (_, report) = ingest(manifest)?;
    ctx.emit(&report, || {
        let mut s = format!(
            "apps\t{}\nscreenshots\t{}\nembedding_dim\t{}\nfingerprint\t{}\n",
            report.apps, report.screenshots, report.embedding_dim, report.fingerprint
        );
        for (c, n) in &report.categories {
            let _ = writeln!(s, "category:{c}\t{n}");
        }
        s
    })
}

fn cmd_synth(ctx: &Context, a: SynthArgs) -> Result<()> {
    let config = ClusterConfig {
        names: a.names,
        versions: a.versions,
        screenshots: a.screenshots,
        dim: a.dim,
        sigma: a.sigma,
        categories: a.categories,
        seed: ctx.global.seed,
    };
    let dataset = clustered_dataset(&config).map_err(|e| usage(e.to_string()))?;
    let manifest = write_dataset(&dataset, &a.out)?;
    let (_, report) = ingest(&manifest)?;
    #[derive(Serialize)]
    #[serde(rename_all = "camelCase")]
    struct Out<'a> {
        manifest: &'a Path,
        #[serde(flatten)]
        report: &'a uiot_core::store::IngestReport,
    }
    ctx.emit(
        &Out {
            manifest: &manifest,
            report: &report,
        },
        || {
            format!(
                "manifest\t{}\napps\t{}\nfingerprint\t{}\n",
                manifest.display(),
                report.apps,
                report.fingerprint
            )
        },
    )
}

fn cmd_retrieve_app(ctx: &Context, query: &str, k: usize) -> Result<()> {
    if k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let dataset = ctx.dataset()?;
    let q = dataset.app(query)?;
    let ranked = rank_apps(q, &dataset, k, &ctx.solver, &OtCache::new(), ctx.exec)?;
    ctx.emit(&ranked.result, || {
        let mut s = String::from("rank\tapp_id\tdistance\n");
        for (i, h) in ranked.result.hits.iter().enumerate() {
            let _ = writeln!(s, "{}\t{}\t{}", i + 1, h.target_id, h.score);
        }
        s
    })
}

fn cmd_plan(
    ctx: &Context,
    query: &str,
    target: &str,
    format: PlanFormat,
    out: Option<PathBuf>,
) -> Result<()> {
    let dataset = ctx.dataset()?;
    let r = app_distance(dataset.app(query)?, dataset.app(target)?, &ctx.solver)?;
    let mut buf = Vec::new();
    match format {
        PlanFormat::Csv => plan_to_csv(&r, &mut buf)?,
        PlanFormat::Json => {
            serde_json::to_writer_pretty(&mut buf, &plan_to_json(&r))?;
            buf.push(b'\n');
        }
    }
    match out {
        Some(path) => fs::write(path, buf)?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn cmd_uniformity(ctx: &Context, app: Option<String>, t: f64) -> Result<()> {
    let dataset = ctx.dataset()?;
    match app {
        Some(id) => println!(
            "{}",
            serde_json::to_string_pretty(&app_uniformity(dataset.app(&id)?, t)?)?
        ),
        None => {
            let reports = ctx.exec.map(dataset.apps(), |a| app_uniformity(a, t));
            let mut out = std::io::stdout().lock();
            for r in reports {
                writeln!(out, "{}", serde_json::to_string(&r?)?)?;
            }
        }
    }
    Ok(())
}

fn read_vectors(path: &Path, dim: usize) -> Result<Vec<EmbeddingVector>> {
    let rows: Vec<Vec<f64>> = if path.extension().is_some_and(|e| e == "uieb") {
        let block = EmbeddingBlock::read(path)?;
        (0..block.n)
            .map(|i| block.row(i).iter().map(|&x| f64::from(x)).collect())
            .collect()
    } else {
        serde_json::from_str(&fs::read_to_string(path)?)?
    };
    Ok(rows
        .iter()
        .map(|r| normalize_with_dim(r, dim))
        .collect::<uiot_core::Result<_>>()?)
}

fn cmd_whatif(
    ctx: &Context,
    app: &str,
    remove: Vec<String>,
    add: Option<PathBuf>,
    t: f64,
) -> Result<()> {
    let dataset = ctx.dataset()?;
    let add_vectors = match add {
        Some(p) => read_vectors(&p, dataset.embedding_dim())?,
        None => Vec::new(),
    };
    let report = delta_uniformity(
        dataset.app(app)?,
        &WhatIfEdit {
            remove_ids: remove,
            add_vectors,
        },
        t,
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_classify(ctx: &Context, labels: &Path, screenshot: &str, k: usize) -> Result<()> {
    let dataset = ctx.dataset()?;
    let set = LabelEmbeddingSet::load(labels)?;
    let scores = classify(&dataset.screenshot_vector(screenshot)?, &set, k)?;
    ctx.emit(&scores, || {
        let mut s = String::from("rank\tlabel\tsimilarity\n");
        for (i, l) in scores.iter().enumerate() {
            let _ = writeln!(s, "{}\t{}\t{}", i + 1, l.label, l.similarity);
        }
        s
    })
}

fn cmd_evaluate(ctx: &Context, labels: &Path, ks: &[usize]) -> Result<()> {
    let dataset = ctx.dataset()?;
    let set = LabelEmbeddingSet::load(labels)?;
    let report = classification_accuracy(&dataset, &set, ks)?;
    ctx.emit(&report, || {
        let mut s = String::from("k\tcorrect\ttotal\taccuracy\trandom_baseline\n");
        for a in &report.per_k {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                a.k, a.correct, a.total, a.accuracy, a.random_baseline
            );
        }
        s
    })
}

fn cmd_build_labels(
    ctx: &Context,
    labels: &Path,
    endpoint: &str,
    out: &Path,
    dim: Option<usize>,
) -> Result<()> {
    let file = LabelFile::read(labels)?;
    let mut encoder = connect(endpoint)?;
    let set = build_label_embeddings(&file.labels, &file.templates, &mut encoder, dim)?;
    let sidecar = set.save(out)?;
    #[derive(Serialize)]
    #[serde(rename_all = "camelCase")]
    struct Out<'a> {
        sidecar: &'a Path,
        labels: usize,
        templates: usize,
        dim: usize,
    }
    let o = Out {
        sidecar: &sidecar,
        labels: set.len(),
        templates: set.templates.len(),
        dim: set.dim(),
    };
    ctx.emit(&o, || {
        format!(
            "sidecar\t{}\nlabels\t{}\ndim\t{}\n",
            sidecar.display(),
            o.labels,
            o.dim
        )
    })
}

fn sweep_options(ctx: &Context, chunk_size: usize, max_chunks: Option<usize>) -> SweepOptions {
    SweepOptions {
        config: ctx.solver.clone(),
        exec: ctx.exec,
        chunk_size,
        max_chunks,
    }
}

fn cmd_sweep(ctx: &Context, a: SweepArgs) -> Result<()> {
    if a.chunk_size == 0 {
        return Err(usage("--chunk-size must be at least 1"));
    }
    let dataset = ctx.dataset()?;
    let out = match a.out {
        Some(p) => p,
        None => ctx.output("sweep.csv")?,
    };
    let summary = pairwise_sweep(
        &dataset,
        &out,
        &sweep_options(ctx, a.chunk_size, a.max_chunks),
    )?;
    ctx.emit(&summary, || {
        format!(
            "table\t{}\ntotal_pairs\t{}\nresumed_from\t{}\ncompleted\t{}\nfailed\t{}\nfinished\t{}\n",
            out.display(),
            summary.total_pairs,
            summary.resumed_from,
            summary.completed,
            summary.failed,
            summary.finished
        )
    })
}

fn write_study<T: Serialize>(
    ctx: &Context,
    id: &str,
    value: &T,
    csv: impl FnOnce(&mut Vec<u8>) -> uiot_core::Result<()>,
) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(ctx.output(&format!("{id}.json"))?, &text)?;
    let mut buf = Vec::new();
    csv(&mut buf)?;
    fs::write(ctx.output(&format!("{id}.csv"))?, buf)?;
    Ok(())
}

fn cmd_pair_grouping(ctx: &Context, criterion: &str, table: Option<PathBuf>) -> Result<()> {
    let criterion: Criterion = criterion
        .parse()
        .map_err(|e: uiot_core::Error| usage(e.to_string()))?;
    let dataset = ctx.dataset()?;
    let table = match table {
        Some(p) => p,
        None => ctx.output("sweep.csv")?,
    };
    let summary = pairwise_sweep(&dataset, &table, &sweep_options(ctx, 256, None))?;
    if summary.failed > 0 {
        eprintln!(
            "warning: {} pair(s) failed; see {}",
            summary.failed,
            table.display()
        );
    }
    let report = group_pairs(&read_sweep_table(&table)?, &dataset, criterion)?;
    let id = format!("pair-grouping-{}", criterion.as_str());
    write_study(ctx, &id, &report, |w| grouping_to_long_csv(&report, w))?;
    ctx.emit(&report, || {
        let mut s = String::from("group\tcount\tmean\tmedian\n");
        for (g, summary) in [
            ("same", &report.same_summary),
            ("different", &report.different_summary),
        ] {
            match summary {
                Some(x) => {
                    let _ = writeln!(s, "{g}\t{}\t{}\t{}", x.count, x.mean, x.median);
                }
                None => {
                    let _ = writeln!(s, "{g}\t0\t\t");
                }
            }
        }
        match &report.test {
            Some(t) => {
                let _ = writeln!(s, "mann_whitney\tu_a={}\tz={}\tp={}", t.u_a, t.z, t.p);
            }
            None => s.push_str("mann_whitney\tskipped (one group is empty)\n"),
        }
        s
    })
}

fn cmd_delta_lu(ctx: &Context, mode: &str, n: Vec<usize>, held_out: usize, t: f64) -> Result<()> {
    let mode: StudyMode = mode
        .parse()
        .map_err(|e: uiot_core::Error| usage(e.to_string()))?;
    if n.is_empty() {
        return Err(usage("--n needs at least one value"));
    }
    if !(t.is_finite() && t > 0.0) {
        return Err(usage("--t must be positive"));
    }
    let dataset = ctx.dataset()?;
    let config = DeltaLuConfig {
        n_values: n,
        held_out_count: held_out,
        t,
        ..DeltaLuConfig::new(mode, ctx.global.seed)
    };
    let study = run_delta_lu_study(&dataset, &config, ctx.exec)?;
    let id = match mode {
        StudyMode::RandomChange => "delta-lu-randomChange",
        StudyMode::HeldOutChange => "delta-lu-heldOutChange",
    };
    write_study(ctx, id, &study, |w| study_to_long_csv(&study, w))?;
    ctx.emit(&study, || {
        let mut s = String::from("n\tcount\tmean\tstd_dev\tt\tp\n");
        for p in &study.per_n {
            let (tt, pp) = p
                .test
                .map(|x| (x.t.to_string(), x.p.to_string()))
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{tt}\t{pp}",
                p.n, p.count, p.mean, p.std_dev
            );
        }
        for e in &study.excluded {
            let _ = writeln!(
                s,
                "excluded\t{}\t{} screenshots (needs {})",
                e.app_id, e.screenshots, e.required
            );
        }
        s
    })
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "webp"];

fn cmd_encode(
    ctx: &Context,
    images: &Path,
    endpoint: &str,
    dim: usize,
    pad_square: bool,
    out: &Path,
) -> Result<()> {
    if dim == 0 {
        return Err(usage("--dim must be at least 1"));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(images)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(usage(format!("no images in {}", images.display())));
    }
    let mut encoder = connect(endpoint)?;
    let block = encode_images(
        &paths,
        &mut encoder,
        dim,
        Preprocess {
            pad_square,
            ..Default::default()
        },
    )?;
    block.write(out)?;
    let screenshots: Vec<ScreenshotEntry> = paths
        .iter()
        .map(|p| ScreenshotEntry {
            id: p
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned(),
            image_path: Some(p.to_string_lossy().into_owned()),
        })
        .collect();
    let listing = out.with_extension("json");
    fs::write(
        &listing,
        serde_json::to_string_pretty(&serde_json::json!({ "screenshots": screenshots }))?,
    )?;
    #[derive(Serialize)]
    struct Out<'a> {
        embeddings: &'a Path,
        screenshots: &'a Path,
        n: usize,
        d: usize,
    }
    ctx.emit(
        &Out {
            embeddings: out,
            screenshots: &listing,
            n: block.n,
            d: block.d,
        },
        || {
            format!(
                "embeddings\t{}\nscreenshots\t{}\nn\t{}\nd\t{}\n",
                out.display(),
                listing.display(),
                block.n,
                block.d
            )
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_serve(
    ctx: &Context,
    port: u16,
    host: &str,
    static_dir: Option<PathBuf>,
    labels: Vec<PathBuf>,
    artifacts: Option<PathBuf>,
    encoder: Option<String>,
    pad_square: bool,
) -> Result<()> {
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| usage(format!("bad address {host}:{port}: {e}")))?;
    let dataset = ctx.dataset()?;
    let mut state = AppState::new(dataset)
        .with_solver(ctx.solver.clone())
        .with_artifacts(artifacts.unwrap_or_else(|| ctx.global.output_dir.clone()));
    for path in labels {
        let id = path
            .file_stem()
            .ok_or_else(|| usage(format!("bad label path {}", path.display())))?;
        state = state.with_labels(id.to_string_lossy(), LabelEmbeddingSet::load(&path)?);
    }
    if let Some(endpoint) = encoder {
        state = state.with_encoder(
            connect(&endpoint)?,
            Preprocess {
                pad_square,
                ..Default::default()
            },
        );
    }
    let app = router_with_static(Arc::new(state), static_dir.as_deref());
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    eprintln!("listening on http://{addr}");
    runtime.block_on(uiot_service::serve(addr, app))?;
    Ok(())
}
