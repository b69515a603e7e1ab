use std::fs;
use std::path::{Path, PathBuf};

use kmotion_core::metrics::write_model;
use kmotion_core::motion::{corrupt, random_trajectory, TrajectoryManifest};
use kmotion_core::nn::{correct, read_weights};
use kmotion_core::phantom::{generate_on, random_spec, standard_phantom};
use kmotion_core::pipeline::{build_dataset, derive_seed, fit_pristine, run_evaluation, run_training, DatasetManifest};
use kmotion_core::preprocess::{estimate_foreground, normalize};
use kmotion_core::volume::{read_volume, write_pgm16, write_volume, Geometry};
use kmotion_core::{Error, Result};

use crate::config::{RunConfig, RunManifest};
use crate::{Command, Common};

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Validation(format!("input path not found: {}", path.display())))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Validation(format!("cannot write {}: {e}", path.display())))
}

struct Run<'a> {
    name: &'static str,
    argv: &'a [String],
    common: &'a Common,
    cfg: RunConfig,
    seed: u64,
    outputs: Vec<PathBuf>,
}

impl<'a> Run<'a> {
    fn start(name: &'static str, argv: &'a [String], common: &'a Common) -> Result<Self> {
        if let Some(c) = &common.config {
            require(c)?;
        }
        let mut cfg = RunConfig::load(common.config.as_deref())?;
        let seed = cfg.resolve_seed(common.seed);
        fs::create_dir_all(&common.out_dir)
            .map_err(|e| Error::Validation(format!("cannot create {}: {e}", common.out_dir.display())))?;
        Ok(Run {
            name,
            argv,
            common,
            cfg,
            seed,
            outputs: Vec::new(),
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.common.out_dir.join(name)
    }

    fn finish(self) -> Result<()> {
        let outputs = self
            .outputs
            .iter()
            .map(|p| p.strip_prefix(&self.common.out_dir).unwrap_or(p).to_string_lossy().into_owned())
            .collect();
        let m = RunManifest {
            tool: "kmotion",
            version: env!("CARGO_PKG_VERSION"),
            command: self.name,
            arguments: &self.argv[1..],
            seed: self.seed,
            config: &self.cfg,
            outputs,
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Validation(e.to_string()))? + "\n";
        write_text(&self.out("run_manifest.json"), &text)
    }
}

pub fn run(cmd: Command, argv: &[String]) -> Result<()> {
    match cmd {
        Command::Phantom { common, count, standard } => {
            let mut run = Run::start("phantom", argv, &common)?;
            let p = &run.cfg.pipeline;
            let geometry = Geometry::new(p.dims, p.spacing);
            let specs = if standard {
                vec![("standard".to_string(), standard_phantom())]
            } else {
                (0..count)
                    .map(|i| {
                        let s = random_spec(derive_seed(run.seed, 0, i as u64), &p.phantom)?;
                        Ok((format!("phantom-{i:03}"), s))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            for (name, spec) in specs {
                let spec_path = run.out(&format!("{name}_spec.json"));
                spec.write(&spec_path)?;
                let v = generate_on(&spec, geometry.clone())?;
                let header = write_volume(&run.out(&name), &v)?;
                run.outputs.extend([spec_path, header]);
            }
            run.finish()
        }
        Command::Corrupt { common, input, trajectory } => {
            require(&input)?;
            if let Some(t) = &trajectory {
                require(t)?;
            }
            let mut run = Run::start("corrupt", argv, &common)?;
            let v = read_volume(&input)?;
            let pe = v.geometry().phase_encode_axis;
            let n_pe = v.dims()[pe];
            let traj = match &trajectory {
                Some(t) => TrajectoryManifest::read(t)?.to_trajectory()?,
                None => random_trajectory(run.seed, n_pe, &run.cfg.pipeline.bounds)?,
            };
            let (_, corrupted) = corrupt(&v, &traj)?;
            let header = write_volume(&run.out("corrupted"), &corrupted)?;
            let tpath = run.out("trajectory.json");
            let seed = trajectory.is_none().then_some(run.seed);
            let bounds = trajectory.is_none().then_some(run.cfg.pipeline.bounds);
            TrajectoryManifest::from_trajectory(&traj, &v.geometry().axis_labels[pe], pe, seed, bounds).write(&tpath)?;
            run.outputs.extend([header, tpath]);
            run.finish()
        }
        Command::Dataset { common, train, test, motions } => {
            let mut run = Run::start("dataset", argv, &common)?;
            if let Some(m) = motions {
                run.cfg.pipeline.motions_per_phantom = m;
            }
            let (tr, te) = build_dataset(&run.cfg.pipeline, train, test, run.seed, &common.out_dir)?;
            eprintln!(
                "dataset: {} train samples ({} slices), {} test samples ({} slices)",
                tr.entries.len(),
                tr.slice_count(),
                te.entries.len(),
                te.slice_count()
            );
            run.outputs.extend([run.out("train/manifest.json"), run.out("test/manifest.json")]);
            run.finish()
        }
        Command::Train { common, manifest, iterations, batch_size, channels } => {
            require(&manifest)?;
            let mut run = Run::start("train", argv, &common)?;
            if let Some(n) = iterations {
                run.cfg.train.iterations = n;
            }
            if let Some(b) = batch_size {
                run.cfg.train.batch_size = b;
            }
            if let Some(ch) = channels {
                run.cfg.network.levels = ch.len();
                run.cfg.network.channels = ch;
            }
            run.cfg.train.seed = run.seed;
            let total = run.cfg.train.iterations;
            let art = run_training(&manifest, &run.cfg.network, &run.cfg.train, &common.out_dir, |i, l| {
                if i % 100 == 0 || i + 1 == total {
                    eprintln!("iteration {i}/{total}: loss {l:.6}");
                }
            })?;
            run.outputs.extend([art.weights, art.loss_csv]);
            run.finish()
        }
        Command::Correct { common, weights, input, slice } => {
            require(&weights)?;
            require(&input)?;
            let mut run = Run::start("correct", argv, &common)?;
            let p = read_weights(&weights)?;
            let v = read_volume(&input)?;
            let axis = run.cfg.pipeline.slice_axis;
            let mask = estimate_foreground(&v, &run.cfg.pipeline.foreground)?;
            let (vn, rec) = normalize(&v, &mask)?;
            let mut out = vn.clone();
            let indices: Vec<usize> = match slice {
                Some(k) => vec![k],
                None => (0..v.dims()[axis]).collect(),
            };
            for &k in &indices {
                let fixed = correct(&p, &vn.extract_slice(axis, k)?)?;
                out.insert_slice(axis, k, &fixed)?;
            }
            let restored: Vec<f64> = out
                .data()
                .iter()
                .zip(mask.data())
                .map(|(&y, &fg)| if fg { rec.inverse(y) } else { 0.0 })
                .collect();
            let restored = v.with_data(restored)?;
            run.outputs.push(write_volume(&run.out("corrected"), &restored)?);
            if let Some(k) = slice {
                let path = run.out(&format!("corrected_slice_{k}.pgm"));
                write_pgm16(&path, &restored.extract_slice(axis, k)?)?;
                run.outputs.push(path);
            }
            run.finish()
        }
        Command::NiqeFit { common, manifest } => {
            require(&manifest)?;
            let mut run = Run::start("niqe-fit", argv, &common)?;
            let m = DatasetManifest::read(&manifest)?;
            let model = fit_pristine(&m, &manifest)?;
            eprintln!("pristine model from {} patches (ridge {})", model.patch_count, model.ridge);
            run.outputs.push(write_model(&run.out("pristine"), &model, &m.config.niqe)?);
            run.finish()
        }
        Command::Eval { common, manifest, weights, model } => {
            for p in [&manifest, &weights, &model] {
                require(p)?;
            }
            let mut run = Run::start("eval", argv, &common)?;
            let report = run_evaluation(&manifest, &weights, &model, &common.out_dir)?;
            let s = &report.summary;
            eprintln!(
                "{} samples: slice error {:.3}% -> {:.3}%, quality {:.3} -> {:.3} ({:.2}% improvement), {} failures",
                s.samples,
                s.slice_pct_error_corrupted,
                s.slice_pct_error_corrected,
                s.niqe_mean_before,
                s.niqe_mean_after,
                s.niqe_mean_improvement,
                report.failures.len()
            );
            for (id, why) in &report.failures {
                eprintln!("failed {id}: {why}");
            }
            run.outputs.extend(["report.csv", "niqe.csv", "summary.json"].map(|f| run.out(f)));
            run.finish()
        }
    }
}
