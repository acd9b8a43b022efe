//! The pipeline steps behind each subcommand.

use std::fmt::Write as _;
use std::path::Path;

use dsf_core::cvae::train_cvae;
use dsf_core::dsf::{train_dsf, train_mcl, DsfTraining};
use dsf_core::io::write_atomic;
use dsf_core::metrics::evaluate as score;
use dsf_core::synthdata::{generate, read_dataset, write_dataset};
use dsf_core::{CvaeModel, DataExample, DsfModel, DsfTrainConfig, Error, MetricsReport, Result, Split};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Layout};
use crate::methods::{Bound, Method, Stage};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataManifest {
    pub train_seed: u64,
    pub test_seed: u64,
    pub train_records: usize,
    pub test_records: usize,
    /// Forward, left and right counts per split.
    pub train_routes: [usize; 3],
    pub test_routes: [usize; 3],
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub seed: u64,
    pub epochs: usize,
    pub train_records: usize,
    /// Optimizer steps skipped for non-finite loss or gradients.
    pub instability_events: usize,
    pub config: ExperimentConfig,
}

fn to_json<T: Serialize>(value: &T, what: &str) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(what, e.to_string()))?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn route_counts(data: &[DataExample]) -> [usize; 3] {
    let mut c = [0; 3];
    for ex in data {
        c[ex.route.index()] += 1;
    }
    c
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("missing {}; run `{hint}` first", path.display())))
    }
}

pub fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<Vec<DataExample>> {
    let path = Layout::new(&cfg.out_dir).dataset(split);
    require(&path, "dsf gen-data")?;
    let (found, data) = read_dataset(&path)?;
    if found != split {
        return Err(Error::Config(format!(
            "{} holds the {} split",
            path.display(),
            found.as_str()
        )));
    }
    Ok(data)
}

pub fn load_cvae(cfg: &ExperimentConfig) -> Result<CvaeModel> {
    let path = Layout::new(&cfg.out_dir).model(Stage::Cvae.name());
    require(&path, "dsf train --stage cvae")?;
    CvaeModel::load(&path)
}

pub fn load_sampler(cfg: &ExperimentConfig, stage: Stage) -> Result<(DsfModel, usize)> {
    let layout = Layout::new(&cfg.out_dir);
    let path = layout.model(stage.name());
    require(&path, &format!("dsf train --stage {stage}"))?;
    let model = DsfModel::load(&path)?;
    let manifest: StageManifest =
        serde_json::from_str(&dsf_core::io::read_to_string(&layout.model_manifest(stage.name()))?)
            .map_err(|e| Error::parse("stage manifest", e.to_string()))?;
    Ok((model, manifest.instability_events))
}

/// Writes the train and test splits with their manifest.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<DataManifest> {
    let layout = Layout::new(&cfg.out_dir);
    let train_seed = cfg.data_seed(Split::Train);
    let test_seed = cfg.data_seed(Split::Test);
    let train = generate(&cfg.scenario, cfg.train_size, train_seed)?;
    let test = generate(&cfg.scenario, cfg.test_size, test_seed)?;
    write_dataset(&layout.dataset(Split::Train), Split::Train, &train)?;
    write_dataset(&layout.dataset(Split::Test), Split::Test, &test)?;
    let manifest = DataManifest {
        train_seed,
        test_seed,
        train_records: train.len(),
        test_records: test.len(),
        train_routes: route_counts(&train),
        test_routes: route_counts(&test),
        config: cfg.clone(),
    };
    write_atomic(&layout.data_manifest(), &to_json(&manifest, "data manifest")?)?;
    Ok(manifest)
}

fn write_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut out = String::from("epoch\tloss\n");
    for (e, l) in trace.iter().enumerate() {
        writeln!(out, "{e}\t{l}").unwrap();
    }
    write_atomic(path, out.as_bytes())
}

fn save_sampler_run(
    cfg: &ExperimentConfig,
    name: &str,
    seed: u64,
    epochs: usize,
    train_records: usize,
    run: &DsfTraining,
) -> Result<StageManifest> {
    let layout = Layout::new(&cfg.out_dir);
    run.model.save(&layout.model(name))?;
    write_trace(&layout.trace(name), &run.loss_trace)?;
    let manifest = StageManifest {
        stage: name.to_string(),
        seed,
        epochs,
        train_records,
        instability_events: run.instability_events,
        config: cfg.clone(),
    };
    write_atomic(&layout.model_manifest(name), &to_json(&manifest, "stage manifest")?)?;
    Ok(manifest)
}

fn fit_sampler(
    stage: Stage,
    train: &[DataExample],
    cvae: &CvaeModel,
    scfg: &DsfTrainConfig,
    seed: u64,
) -> Result<DsfTraining> {
    match stage {
        Stage::Mcl => train_mcl(train, cvae, scfg, seed),
        _ => train_dsf(train, cvae, scfg, seed),
    }
}

/// Trains one stage and writes its checkpoint, manifest and loss trace.
pub fn train(cfg: &ExperimentConfig, stage: Stage) -> Result<StageManifest> {
    let train = load_split(cfg, Split::Train)?;
    let seed = cfg.stage_seed(stage);
    let layout = Layout::new(&cfg.out_dir);
    match stage.sampler_config(&cfg.dsf) {
        None => {
            let run = train_cvae(&train, &cfg.cvae, seed)?;
            run.model.save(&layout.model(stage.name()))?;
            write_trace(&layout.trace(stage.name()), &run.loss_trace)?;
            let manifest = StageManifest {
                stage: stage.name().to_string(),
                seed,
                epochs: cfg.cvae.epochs,
                train_records: train.len(),
                instability_events: 0,
                config: cfg.clone(),
            };
            write_atomic(
                &layout.model_manifest(stage.name()),
                &to_json(&manifest, "stage manifest")?,
            )?;
            Ok(manifest)
        }
        Some(scfg) => {
            let cvae = load_cvae(cfg)?;
            let run = fit_sampler(stage, &train, &cvae, &scfg, seed).map_err(|e| with_stage(e, stage.name()))?;
            save_sampler_run(cfg, stage.name(), seed, scfg.epochs, train.len(), &run)
        }
    }
}

fn with_stage(e: Error, stage: &str) -> Error {
    match e {
        Error::Optimization { location, message } => Error::Optimization {
            location: format!("{stage} {location}"),
            message,
        },
        other => other,
    }
}

/// One evaluated method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: String,
    pub n: usize,
    pub report: MetricsReport,
}

fn bind<'a>(
    cfg: &ExperimentConfig,
    method: Method,
    cvae: &'a CvaeModel,
    sampler: Option<&'a DsfModel>,
) -> Result<Bound<'a>> {
    let n = cfg.dsf.n_samples;
    Ok(match (method, sampler) {
        (Method::Cvae, _) => Bound::Random { cvae, n },
        (Method::CvaeLdpp, _) => Bound::Ldpp {
            cvae,
            n,
            cfg: cfg.ldpp(),
        },
        (Method::Mcl, Some(s)) => Bound::GroundSet { cvae, sampler: s },
        (_, Some(s)) => Bound::Diverse {
            cvae,
            sampler: s,
            omega_test: cfg.inference.omega_test,
        },
        (m, None) => return Err(Error::Config(format!("method {m} needs a trained sampler"))),
    })
}

/// Loads the sampler a method needs and checks it matches the configured N.
fn sampler_for(cfg: &ExperimentConfig, method: Method) -> Result<Option<(DsfModel, usize)>> {
    let Some(stage) = method.sampler_stage() else {
        return Ok(None);
    };
    let (model, events) = load_sampler(cfg, stage)?;
    if model.n_samples() != cfg.dsf.n_samples {
        return Err(Error::Config(format!(
            "{stage} checkpoint proposes {} samples but the config asks for {}; retrain it",
            model.n_samples(),
            cfg.dsf.n_samples
        )));
    }
    Ok(Some((model, events)))
}

/// Scores each method on the test split and writes the report table.
pub fn evaluate(cfg: &ExperimentConfig, methods: &[Method]) -> Result<Vec<MethodReport>> {
    let test = load_split(cfg, Split::Test)?;
    let cvae = load_cvae(cfg)?;
    let seeds = cfg.eval_seeds();
    let mut out = Vec::new();
    for &method in methods {
        let sampler = sampler_for(cfg, method)?;
        let bound = bind(cfg, method, &cvae, sampler.as_ref().map(|s| &s.0))?;
        let mut report = score(&bound, &test, cfg.eval.eps, &seeds)?;
        report.instability_events = sampler.map_or(0, |s| s.1);
        out.push(MethodReport {
            method: method.name().to_string(),
            n: cfg.dsf.n_samples,
            report,
        });
    }
    write_atomic(&Layout::new(&cfg.out_dir).report(), format_report(cfg, &out).as_bytes())?;
    Ok(out)
}

pub fn format_report(cfg: &ExperimentConfig, reports: &[MethodReport]) -> String {
    let mut out = String::from("method\tn\tregime\tseed\tade\tfde\tasd\tfsd\tcoverage\tsamples\tinstability_events\n");
    for r in reports {
        let rows = r
            .report
            .per_seed
            .iter()
            .map(|s| (s.seed.to_string(), s.values))
            .chain(std::iter::once(("mean".to_string(), r.report.mean)));
        for (seed, v) in rows {
            writeln!(
                out,
                "{}\t{}\t{}\t{seed}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.method,
                r.n,
                cfg.regime.as_str(),
                v.ade,
                v.fde,
                v.asd,
                v.fsd,
                v.coverage,
                v.samples,
                r.report.instability_events
            )
            .unwrap();
        }
    }
    out
}

/// Mean errors of one method at one forecast-set size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub method: Method,
    pub n: usize,
    pub ade: f64,
    pub fde: f64,
}

/// Loads the sweep sampler for `n` when its stored settings match, otherwise trains it.
fn sweep_sampler(cfg: &ExperimentConfig, n: usize, train: &[DataExample], cvae: &CvaeModel) -> Result<DsfModel> {
    let layout = Layout::new(&cfg.out_dir);
    let scfg = DsfTrainConfig {
        n_samples: n,
        ..cfg.dsf.clone()
    };
    let (name, seed) = if n == cfg.dsf.n_samples {
        ("dsf".to_string(), cfg.stage_seed(Stage::Dsf))
    } else {
        (format!("dsf-n{n}"), cfg.sweep_seed(n))
    };
    let path = layout.model(&name);
    if path.exists() {
        let model = DsfModel::load(&path)?;
        if model.config == scfg && model.latent_dim == cvae.latent_dim {
            return Ok(model);
        }
    }
    let run = train_dsf(train, cvae, &scfg, seed).map_err(|e| with_stage(e, &name))?;
    save_sampler_run(cfg, &name, seed, scfg.epochs, train.len(), &run)?;
    Ok(run.model)
}

/// Mean ADE and FDE of the DSF and of random cVAE samples for each sweep size.
pub fn ade_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    let train = load_split(cfg, Split::Train)?;
    let test = load_split(cfg, Split::Test)?;
    let cvae = load_cvae(cfg)?;
    let seeds = cfg.eval_seeds();
    let mut out = Vec::new();
    for &n in &cfg.eval.sweep {
        let sampler = sweep_sampler(cfg, n, &train, &cvae)?;
        let methods = [
            (
                Method::Dsf,
                Bound::Diverse {
                    cvae: &cvae,
                    sampler: &sampler,
                    omega_test: cfg.inference.omega_test,
                },
            ),
            (Method::Cvae, Bound::Random { cvae: &cvae, n }),
        ];
        for (method, bound) in methods {
            let r = score(&bound, &test, cfg.eval.eps, &seeds)?;
            out.push(SweepPoint {
                method,
                n,
                ade: r.ade(),
                fde: r.fde(),
            });
        }
    }
    Ok(out)
}

fn flat_header(prefix: &str, steps: usize, dim: usize) -> String {
    let axes = ["x", "y", "z"];
    let mut cols = Vec::new();
    for t in 0..steps {
        for a in axes.iter().take(dim) {
            cols.push(format!("{prefix}{t}_{a}"));
        }
    }
    cols.join("\t")
}

fn join_values(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("\t")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotExport {
    pub contexts: usize,
    pub trajectories: usize,
    pub sweep: Vec<SweepPoint>,
}

/// Writes forecast trajectories for the first test contexts and the ADE-versus-N table.
pub fn export_plots(cfg: &ExperimentConfig, methods: &[Method]) -> Result<PlotExport> {
    let layout = Layout::new(&cfg.out_dir);
    let test = load_split(cfg, Split::Test)?;
    let cvae = load_cvae(cfg)?;
    let shown = &test[..cfg.eval.plot_contexts.min(test.len())];
    let run_seed = cfg.eval_seeds()[0];
    let (steps, dim) = (shown[0].future.steps(), shown[0].future.dim());

    let mut contexts = format!(
        "context\tid\troute\t{}\t{}\n",
        flat_header("h", shown[0].past.steps(), dim),
        flat_header("x", steps, dim)
    );
    for (i, ex) in shown.iter().enumerate() {
        writeln!(
            contexts,
            "{i}\t{}\t{}\t{}\t{}",
            ex.id,
            ex.route,
            join_values(ex.past.as_flat()),
            join_values(ex.future.as_flat())
        )
        .unwrap();
    }
    write_atomic(&layout.plot("contexts.tsv"), contexts.as_bytes())?;

    let mut rows = format!("method\tcontext\tsample\t{}\n", flat_header("x", steps, dim));
    let mut count = 0;
    for &method in methods {
        let sampler = sampler_for(cfg, method)?;
        let bound = bind(cfg, method, &cvae, sampler.as_ref().map(|s| &s.0))?;
        for (i, ex) in shown.iter().enumerate() {
            let set = dsf_core::metrics::Forecaster::forecast(&bound, &ex.past, run_seed.wrapping_add(i as u64))?;
            for (j, t) in set.iter().enumerate() {
                writeln!(rows, "{method}\t{i}\t{j}\t{}", join_values(t.as_flat())).unwrap();
                count += 1;
            }
        }
    }
    write_atomic(&layout.plot("trajectories.tsv"), rows.as_bytes())?;

    let sweep = ade_sweep(cfg)?;
    let grid: Vec<String> = cfg.eval.sweep.iter().map(|n| n.to_string()).collect();
    let mut table = format!(
        "# forecast-set sizes {} approximate the published curve; one sampler is trained per size\nmethod\tn\tade\tfde\n",
        grid.join(" ")
    );
    for p in &sweep {
        writeln!(table, "{}\t{}\t{}\t{}", p.method, p.n, p.ade, p.fde).unwrap();
    }
    write_atomic(&layout.plot("ade_vs_n.tsv"), table.as_bytes())?;

    Ok(PlotExport {
        contexts: shown.len(),
        trajectories: count,
        sweep,
    })
}
